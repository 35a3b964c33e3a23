//! Paired-dataset manifests: one `<degraded> <reference> [<mask>]` line per
//! pair, whitespace-separated, `#` comments allowed.

use std::path::{Path, PathBuf};

use crate::error::{format_err, io_err, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairEntry {
    pub degraded: PathBuf,
    pub reference: PathBuf,
    pub mask: Option<PathBuf>,
}

impl PairEntry {
    /// Stem of the degraded file, used as the pair's identity.
    pub fn id(&self) -> String {
        self.degraded
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.degraded.to_string_lossy().into_owned())
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<PairEntry>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(format_err(
                path,
                format!("line {}: expected 2 or 3 paths, got {}", lineno + 1, fields.len()),
            ));
        }
        let resolve = |s: &str| {
            let p = PathBuf::from(s);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        entries.push(PairEntry {
            degraded: resolve(fields[0]),
            reference: resolve(fields[1]),
            mask: fields.get(2).map(|s| resolve(s)),
        });
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[PairEntry]) -> Result<()> {
    let mut out = String::from("# degraded reference [mask]\n");
    for e in entries {
        out.push_str(&e.degraded.to_string_lossy());
        out.push(' ');
        out.push_str(&e.reference.to_string_lossy());
        if let Some(mask) = &e.mask {
            out.push(' ');
            out.push_str(&mask.to_string_lossy());
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_comments_and_blank_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.txt");
        std::fs::write(
            &path,
            "# header\n/a/lq.pgm /a/hq.pgm\n\nb_lq.pgm b_hq.pgm b_mask.pgm # trailing\n",
        )
        .unwrap();
        let entries = read_manifest(&path).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].degraded, PathBuf::from("/a/lq.pgm"));
        assert_eq!(entries[0].mask, None);
        assert_eq!(entries[1].degraded, dir.path().join("b_lq.pgm"));
        assert_eq!(entries[1].mask, Some(dir.path().join("b_mask.pgm")));
        assert_eq!(entries[1].id(), "b_lq");

        let out = dir.path().join("copy.txt");
        write_manifest(&out, &entries).unwrap();
        assert_eq!(read_manifest(&out).unwrap(), entries);
    }

    #[test]
    fn wrong_field_count_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "only_one_field\n").unwrap();
        assert!(read_manifest(&path).is_err());
    }
}
