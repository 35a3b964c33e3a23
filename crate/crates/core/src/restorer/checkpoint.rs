//! SPDC checkpoint files: magic `SPDC`, a u32 version, a text descriptor
//! block (`key=value` lines terminated by a blank line), then a sequence of
//! (name length u32, name bytes, SPDT tensor) records.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{format_err, io_err, Error, Result};
use crate::restorer::{FusionMode, RestorerConfig, StudentModel, TeacherModel};
use crate::tensor::io::{read_tensor, read_u32, tensor_to_bytes};
use crate::tensor::{Parameter, Tensor};

const MAGIC: [u8; 4] = *b"SPDC";
const VERSION: u32 = 1;

fn descriptor(kind: &str, config: RestorerConfig, fusion: Option<FusionMode>) -> String {
    let mut text = String::new();
    text.push_str(&format!("kind={kind}\n"));
    text.push_str(&format!("base_channels={}\n", config.base_channels));
    text.push_str(&format!("depth={}\n", config.depth));
    text.push_str(&format!("kernel_size={}\n", config.kernel_size));
    text.push_str(&format!("teacher_encoder_channels={}\n", config.teacher_encoder_channels));
    match fusion {
        Some(FusionMode::Spi) => text.push_str("fusion=spi\n"),
        Some(FusionMode::Cat { regions }) => {
            text.push_str("fusion=cat\n");
            text.push_str(&format!("cat_regions={regions}\n"));
        }
        None => {}
    }
    text.push('\n');
    text
}

fn write_checkpoint(
    path: &Path,
    kind: &str,
    config: RestorerConfig,
    fusion: Option<FusionMode>,
    params: &[Parameter<f32>],
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(descriptor(kind, config, fusion).as_bytes());
    for p in params {
        let name = p.name().as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&tensor_to_bytes(p.value()));
    }
    let mut file = std::fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&out).map_err(io_err(path))
}

struct RawCheckpoint {
    fields: BTreeMap<String, String>,
    tensors: Vec<(String, Tensor<f32>)>,
}

fn read_checkpoint(path: &Path) -> Result<RawCheckpoint> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mut cursor = bytes.as_slice();
    let mut magic = [0u8; 4];
    crate::tensor::io::read_exact(&mut cursor, &mut magic, path, "checkpoint magic")?;
    if magic != MAGIC {
        return Err(format_err(path, format!("bad checkpoint magic {magic:?}, expected `SPDC`")));
    }
    let version = read_u32(&mut cursor, path, "checkpoint version")?;
    if version != VERSION {
        return Err(format_err(path, format!("unsupported checkpoint version {version}")));
    }
    // descriptor: UTF-8 key=value lines up to a blank line
    let mut fields = BTreeMap::new();
    loop {
        let nl = cursor
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| format_err(path, "truncated descriptor block"))?;
        let line = std::str::from_utf8(&cursor[..nl])
            .map_err(|_| format_err(path, "descriptor is not UTF-8"))?;
        cursor = &cursor[nl + 1..];
        if line.is_empty() {
            break;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format_err(path, format!("descriptor line without `=`: {line}")))?;
        fields.insert(key.to_string(), value.to_string());
    }
    let mut tensors = Vec::new();
    while !cursor.is_empty() {
        let name_len = read_u32(&mut cursor, path, "record name length")? as usize;
        if name_len > 4096 {
            return Err(format_err(path, format!("record name length {name_len} too large")));
        }
        let mut name = vec![0u8; name_len];
        crate::tensor::io::read_exact(&mut cursor, &mut name, path, "record name")?;
        let name = String::from_utf8(name)
            .map_err(|_| format_err(path, "record name is not UTF-8"))?;
        let tensor = read_tensor(&mut cursor, path)?;
        tensors.push((name, tensor));
    }
    Ok(RawCheckpoint { fields, tensors })
}

fn field<T: std::str::FromStr>(raw: &RawCheckpoint, path: &Path, key: &str) -> Result<T> {
    raw.fields
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format_err(path, format!("descriptor missing or malformed `{key}`")))
}

fn parse_config(raw: &RawCheckpoint, path: &Path) -> Result<RestorerConfig> {
    Ok(RestorerConfig {
        base_channels: field(raw, path, "base_channels")?,
        depth: field(raw, path, "depth")?,
        kernel_size: field(raw, path, "kernel_size")?,
        teacher_encoder_channels: field(raw, path, "teacher_encoder_channels")?,
    })
}

fn check_kind(raw: &RawCheckpoint, path: &Path, expected: &str) -> Result<()> {
    let kind: String = field(raw, path, "kind")?;
    if kind != expected {
        return Err(Error::CheckpointKind { expected: expected.to_string(), got: kind });
    }
    Ok(())
}

/// Fills the canonical parameter layout with the stored tensors, validating
/// names and shapes.
fn fill_params(
    mut layout: Vec<Parameter<f32>>,
    raw: RawCheckpoint,
    path: &Path,
) -> Result<Vec<Parameter<f32>>> {
    let mut stored: BTreeMap<String, Tensor<f32>> = raw.tensors.into_iter().collect();
    for p in layout.iter_mut() {
        let tensor = stored.remove(p.name()).ok_or_else(|| Error::CheckpointTensor {
            name: p.name().to_string(),
            expected: format!("{}", p.value().shape()),
            got: "missing".to_string(),
        })?;
        if tensor.shape() != p.value().shape() {
            return Err(Error::CheckpointTensor {
                name: p.name().to_string(),
                expected: format!("{}", p.value().shape()),
                got: format!("{}", tensor.shape()),
            });
        }
        p.set_value(tensor);
    }
    if let Some((name, _)) = stored.into_iter().next() {
        return Err(format_err(path, format!("unexpected tensor record `{name}`")));
    }
    Ok(layout)
}

pub fn save_student(path: &Path, model: &StudentModel<f32>) -> Result<()> {
    write_checkpoint(path, "student", model.config(), None, model.params())
}

pub fn load_student(path: &Path) -> Result<StudentModel<f32>> {
    let raw = read_checkpoint(path)?;
    check_kind(&raw, path, "student")?;
    let config = parse_config(&raw, path)?;
    let layout = StudentModel::<f32>::new(config, 0)?.params().to_vec();
    let params = fill_params(layout, raw, path)?;
    Ok(StudentModel::from_parts(config, params))
}

pub fn save_teacher(path: &Path, model: &TeacherModel<f32>) -> Result<()> {
    write_checkpoint(path, "teacher", model.config(), Some(model.fusion()), model.params())
}

pub fn load_teacher(path: &Path) -> Result<TeacherModel<f32>> {
    let raw = read_checkpoint(path)?;
    check_kind(&raw, path, "teacher")?;
    let config = parse_config(&raw, path)?;
    let fusion: String = field(&raw, path, "fusion")?;
    let fusion = match fusion.as_str() {
        "spi" => FusionMode::Spi,
        "cat" => FusionMode::Cat { regions: field(&raw, path, "cat_regions")? },
        other => return Err(format_err(path, format!("unknown fusion mode `{other}`"))),
    };
    let layout = TeacherModel::<f32>::new(config, fusion, 0)?.params().to_vec();
    let params = fill_params(layout, raw, path)?;
    TeacherModel::from_parts(config, fusion, params)
}
