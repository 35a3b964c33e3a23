//! Central finite-difference verification of every differentiable
//! operation, in 64-bit mode. Used by the `gradcheck` CLI command and the
//! acceptance suite.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{
    cosine_matrix, psnr_loss, scm_loss, skd_loss, total_loss, FeatureExtractor, LossWeights,
};
use crate::restorer::{FusionMode, RestorerConfig, StudentModel, TeacherModel};
use crate::rng;
use crate::semantic::{map_pool, spi_fuse, SegmentationMap};
use crate::tensor::{Graph, Parameter, Shape, Tensor, Var};

/// Acceptance threshold on the max relative error per operation.
pub const TOLERANCE: f64 = 1e-4;
/// Central-difference step (64-bit mode).
pub const FD_STEP: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct OpReport {
    pub name: &'static str,
    pub max_rel_error: f64,
    /// Probe elements compared against central differences.
    pub checked: usize,
    /// Probe elements skipped because the probe interval crossed an
    /// activation kink (the op is not differentiable there).
    pub skipped: usize,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE && self.checked > 0
    }
}

#[derive(Clone, Copy, Default)]
struct CheckOutcome {
    worst: f64,
    checked: usize,
    skipped: usize,
}

impl CheckOutcome {
    fn absorb(&mut self, other: CheckOutcome) {
        self.worst = self.worst.max(other.worst);
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

fn rel_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-3)
}

/// Compares the graph gradients of `build` against central differences for
/// every element of every input. `build` must be a pure function of the
/// input tensors. Probe elements whose interval crosses an activation kink
/// are skipped: the composite is not differentiable there, so central
/// differences do not estimate the subgradient the backward pass defines.
fn check_inputs(
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<CheckOutcome> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &vars)?;
    let base_sig = g.kink_signature();
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v))))
        .collect();

    let eval = |tensors: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = build(&mut g, &vars)?;
        Ok((g.scalar_value(loss)?, g.kink_signature()))
    };

    let mut outcome = CheckOutcome::default();
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for e in 0..input.len() {
            let base = input.data()[e];
            probe[i].set(e, base + FD_STEP);
            let (plus, sig_plus) = eval(&probe)?;
            probe[i].set(e, base - FD_STEP);
            let (minus, sig_minus) = eval(&probe)?;
            probe[i].set(e, base);
            if sig_plus != base_sig || sig_minus != base_sig {
                outcome.skipped += 1;
                continue;
            }
            let fd = (plus - minus) / (2.0 * FD_STEP);
            outcome.worst = outcome.worst.max(rel_error(analytic[i].data()[e], fd));
            outcome.checked += 1;
        }
    }
    Ok(outcome)
}

fn uniform(shape: Shape, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::rand_uniform(shape, lo, hi, rng)
}

/// Uniform samples nudged away from the kinks in `kinks` by `margin`.
fn away_from(shape: Shape, lo: f64, hi: f64, kinks: &[f64], margin: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| loop {
        let v: f64 = rng.gen_range(lo..hi);
        if kinks.iter().all(|k| (v - k).abs() > margin) {
            break v;
        }
    })
}

/// Random projection weights: turns any tensor into a scalar loss with
/// distinct per-element sensitivities.
fn projector(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::rand_uniform(shape, 0.1, 1.0, rng)
}

fn project(g: &mut Graph<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

fn partition_map(h: usize, w: usize, regions: usize, rng: &mut ChaCha8Rng) -> SegmentationMap {
    let labels: Vec<u8> = (0..h * w).map(|_| rng.gen_range(0..regions) as u8).collect();
    SegmentationMap::new(h, w, labels).expect("valid labels")
}

struct Check {
    name: &'static str,
    run: Box<dyn Fn(u64) -> Result<CheckOutcome>>,
}

const MARGIN: f64 = 1e-3;

fn elementwise_checks(checks: &mut Vec<Check>) {
    let shape = Shape::new(2, 1, 4, 4);
    for (name, op) in [
        ("add", 0usize),
        ("sub", 1),
        ("mul", 2),
    ] {
        checks.push(Check {
            name,
            run: Box::new(move |seed| {
                let mut r = rng::stream_n(seed, name, &[]);
                let a = uniform(shape, -1.0, 1.0, &mut r);
                let b = uniform(shape, -1.0, 1.0, &mut r);
                let proj = projector(shape, &mut r);
                check_inputs(&[a, b], move |g, vars| {
                    let out = match op {
                        0 => g.add(vars[0], vars[1])?,
                        1 => g.sub(vars[0], vars[1])?,
                        _ => g.mul(vars[0], vars[1])?,
                    };
                    project(g, out, &proj)
                })
            }),
        });
    }
    for (name, kinks, lo, hi) in [
        ("relu", vec![0.0], -1.0, 1.0),
        ("clamp01", vec![0.0, 1.0], -0.5, 1.5),
        ("max_const", vec![0.5], -0.5, 1.5),
    ] {
        checks.push(Check {
            name,
            run: Box::new(move |seed| {
                let mut r = rng::stream_n(seed, name, &[]);
                let x = away_from(shape, lo, hi, &kinks, MARGIN, &mut r);
                let proj = projector(shape, &mut r);
                let name = name.to_string();
                check_inputs(&[x], move |g, vars| {
                    let out = match name.as_str() {
                        "relu" => g.relu(vars[0]),
                        "clamp01" => g.clamp01(vars[0]),
                        _ => g.max_const(vars[0], 0.5),
                    };
                    project(g, out, &proj)
                })
            }),
        });
    }
    for (name, lo, hi) in [("sqrt", 0.1, 2.0), ("ln", 0.1, 3.0), ("recip", 0.3, 2.0)] {
        checks.push(Check {
            name,
            run: Box::new(move |seed| {
                let mut r = rng::stream_n(seed, name, &[]);
                let x = uniform(shape, lo, hi, &mut r);
                let proj = projector(shape, &mut r);
                let name = name.to_string();
                check_inputs(&[x], move |g, vars| {
                    let out = match name.as_str() {
                        "sqrt" => g.sqrt(vars[0]),
                        "ln" => g.ln(vars[0]),
                        _ => g.recip(vars[0]),
                    };
                    project(g, out, &proj)
                })
            }),
        });
    }
    checks.push(Check {
        name: "scale",
        run: Box::new(move |seed| {
            let mut r = rng::stream_n(seed, "scale", &[]);
            let x = uniform(shape, -1.0, 1.0, &mut r);
            let factor: f64 = r.gen_range(-2.0..2.0);
            let proj = projector(shape, &mut r);
            check_inputs(&[x], move |g, vars| {
                let out = g.scale(vars[0], factor);
                project(g, out, &proj)
            })
        }),
    });
}

fn structural_checks(checks: &mut Vec<Check>) {
    checks.push(Check {
        name: "concat_channels",
        run: Box::new(|seed| {
            let mut r = rng::stream_n(seed, "concat", &[]);
            let a = uniform(Shape::new(1, 2, 3, 3), -1.0, 1.0, &mut r);
            let b = uniform(Shape::new(1, 3, 3, 3), -1.0, 1.0, &mut r);
            let proj = projector(Shape::new(1, 5, 3, 3), &mut r);
            check_inputs(&[a, b], move |g, vars| {
                let out = g.concat_channels(vars[0], vars[1])?;
                project(g, out, &proj)
            })
        }),
    });
    checks.push(Check {
        name: "slice_channels",
        run: Box::new(|seed| {
            let mut r = rng::stream_n(seed, "slice", &[]);
            let a = uniform(Shape::new(2, 4, 3, 3), -1.0, 1.0, &mut r);
            let proj = projector(Shape::new(2, 2, 3, 3), &mut r);
            check_inputs(&[a], move |g, vars| {
                let out = g.slice_channels(vars[0], 1, 2)?;
                project(g, out, &proj)
            })
        }),
    });
    checks.push(Check {
        name: "index_batch",
        run: Box::new(|seed| {
            let mut r = rng::stream_n(seed, "index", &[]);
            let a = uniform(Shape::new(3, 2, 3, 3), -1.0, 1.0, &mut r);
            let proj = projector(Shape::new(1, 2, 3, 3), &mut r);
            check_inputs(&[a], move |g, vars| {
                let out = g.index_batch(vars[0], 1)?;
                project(g, out, &proj)
            })
        }),
    });
    checks.push(Check {
        name: "mean",
        run: Box::new(|seed| {
            let mut r = rng::stream_n(seed, "mean", &[]);
            let a = uniform(Shape::new(2, 2, 3, 3), -1.0, 1.0, &mut r);
            check_inputs(&[a], |g, vars| g.mean(vars[0]))
        }),
    });
    checks.push(Check {
        name: "sum",
        run: Box::new(|seed| {
            let mut r = rng::stream_n(seed, "sum", &[]);
            let a = uniform(Shape::new(2, 2, 3, 3), -1.0, 1.0, &mut r);
            check_inputs(&[a], |g, vars| g.sum(vars[0]))
        }),
    });
    // mixed graph with a detached branch: the finite-difference oracle
    // holds the detached value constant
    checks.push(Check {
        name: "detach_mixed",
        run: Box::new(|seed| {
            let mut r = rng::stream_n(seed, "detach", &[]);
            let shape = Shape::new(1, 1, 3, 3);
            let x = uniform(shape, 0.2, 1.0, &mut r);
            let frozen = x.clone();
            check_inputs(&[x], move |g, vars| {
                // analytic path goes through detach(x); finite differencing
                // perturbs the input, so it sees the frozen copy instead
                let c = if g.value(vars[0]) == &frozen {
                    g.detach(vars[0])
                } else {
                    g.constant(frozen.clone())
                };
                let prod = g.mul(vars[0], c)?;
                g.mean(prod)
            })
        }),
    });
    checks.push(Check {
        name: "conv2d",
        run: Box::new(|seed| {
            let mut r = rng::stream_n(seed, "conv2d", &[]);
            let input = uniform(Shape::new(1, 2, 5, 5), -1.0, 1.0, &mut r);
            let weight = uniform(Shape::new(3, 2, 3, 3), -0.7, 0.7, &mut r);
            let bias = uniform(Shape::new(1, 3, 1, 1), -0.3, 0.3, &mut r);
            let proj = projector(Shape::new(1, 3, 5, 5), &mut r);
            check_inputs(&[input, weight, bias], move |g, vars| {
                let out = g.conv2d(vars[0], vars[1], vars[2])?;
                project(g, out, &proj)
            })
        }),
    });
    checks.push(Check {
        name: "map_pool",
        run: Box::new(|seed| {
            let mut r = rng::stream_n(seed, "map-pool", &[]);
            let features = uniform(Shape::new(1, 2, 6, 6), -1.0, 1.0, &mut r);
            let map = partition_map(6, 6, 4, &mut r);
            let proj = projector(Shape::new(1, 2, 6, 6), &mut r);
            check_inputs(&[features], move |g, vars| {
                let out = map_pool(g, vars[0], std::slice::from_ref(&map))?;
                project(g, out, &proj)
            })
        }),
    });
}

fn loss_checks(checks: &mut Vec<Check>) {
    checks.push(Check {
        name: "psnr_loss",
        run: Box::new(|seed| {
            let mut r = rng::stream_n(seed, "psnr", &[]);
            let shape = Shape::new(1, 1, 6, 6);
            let pred = uniform(shape, 0.0, 1.0, &mut r);
            let reference = uniform(shape, 0.0, 1.0, &mut r);
            check_inputs(&[pred], move |g, vars| {
                let refc = g.constant(reference.clone());
                psnr_loss(g, vars[0], refc)
            })
        }),
    });
    checks.push(Check {
        name: "skd_loss",
        run: Box::new(|seed| {
            let mut r = rng::stream_n(seed, "skd", &[]);
            let shape = Shape::new(1, 1, 4, 4);
            // keep |d| away from the quadratic/linear transition
            let student = away_from(shape, -2.0, 2.0, &[-1.0, 1.0], MARGIN, &mut r);
            check_inputs(&[student], move |g, vars| {
                let teacher = g.constant(Tensor::zeros(shape));
                skd_loss(g, vars[0], teacher, true)
            })
        }),
    });
    checks.push(Check {
        name: "extract_features",
        run: Box::new(|seed| {
            let mut r = rng::stream_n(seed, "phi", &[]);
            let x = uniform(Shape::new(1, 1, 6, 6), 0.0, 1.0, &mut r);
            let proj = projector(Shape::new(1, crate::losses::PHI_CHANNELS, 6, 6), &mut r);
            let phi = FeatureExtractor::<f64>::fixed();
            check_inputs(&[x], move |g, vars| {
                let out = phi.forward(g, vars[0])?;
                project(g, out, &proj)
            })
        }),
    });
    checks.push(Check {
        name: "cosine_matrix",
        run: Box::new(|seed| {
            let mut r = rng::stream_n(seed, "cosine", &[]);
            let shape = Shape::new(1, 1, 1, 8);
            let a = uniform(shape, 0.3, 1.0, &mut r);
            let b = uniform(shape, -1.0, -0.3, &mut r);
            let c = uniform(shape, 0.2, 0.9, &mut r);
            let w: Vec<f64> = (0..9).map(|_| r.gen_range(0.1..1.0)).collect();
            check_inputs(&[a, b, c], move |g, vars| {
                let m = cosine_matrix(g, vars)?;
                let mut total: Option<Var> = None;
                for (i, row) in m.iter().enumerate() {
                    for (j, &c) in row.iter().enumerate() {
                        let term = g.scale(c, w[i * 3 + j]);
                        total = Some(match total {
                            Some(acc) => g.add(acc, term)?,
                            None => term,
                        });
                    }
                }
                Ok(total.expect("matrix non-empty"))
            })
        }),
    });
    checks.push(Check {
        name: "scm_loss",
        run: Box::new(|seed| {
            let mut r = rng::stream_n(seed, "scm", &[]);
            let shape = Shape::new(1, 1, 8, 8);
            let x_a = uniform(shape, 0.0, 1.0, &mut r);
            let x_b = uniform(shape, 0.0, 1.0, &mut r);
            let map = partition_map(8, 8, 3, &mut r);
            let phi = FeatureExtractor::<f64>::fixed();
            check_inputs(&[x_a], move |g, vars| {
                let b = g.constant(x_b.clone());
                scm_loss(g, vars[0], b, std::slice::from_ref(&map), &phi, true)
            })
        }),
    });
    checks.push(Check {
        name: "total_loss",
        run: Box::new(|seed| {
            let mut r = rng::stream_n(seed, "total", &[]);
            let shape = Shape::new(1, 1, 8, 8);
            let pred = uniform(shape, 0.05, 0.95, &mut r);
            let reference = uniform(shape, 0.0, 1.0, &mut r);
            let target = uniform(shape, 0.0, 1.0, &mut r);
            let map = partition_map(8, 8, 3, &mut r);
            let phi = FeatureExtractor::<f64>::fixed();
            let weights = LossWeights::default();
            check_inputs(&[pred], move |g, vars| {
                let refc = g.constant(reference.clone());
                let tgt = g.constant(target.clone());
                let recon = psnr_loss(g, vars[0], refc)?;
                let skd = skd_loss(g, vars[0], tgt, true)?;
                let scm = scm_loss(g, vars[0], tgt, std::slice::from_ref(&map), &phi, true)?;
                total_loss(g, recon, skd, scm, &weights)
            })
        }),
    });
}

/// Small perturbed models for the forward-pass checks.
fn tiny_config() -> RestorerConfig {
    RestorerConfig { base_channels: 4, depth: 2, kernel_size: 3, teacher_encoder_channels: 3 }
}

fn perturb_params(params: &mut [Parameter<f64>], rng: &mut ChaCha8Rng) {
    for p in params.iter_mut() {
        let shape = p.value().shape();
        let noise = Tensor::randn(shape, 0.15, rng);
        p.set_value(p.value().zip_map(&noise, |a, b| a + b));
    }
}

/// Checks gradients w.r.t. the input and one named parameter of a model
/// forward pass. The finite-difference path rebuilds the model with the
/// perturbed parameter tensor.
fn check_model(
    input: Tensor<f64>,
    param_name: &str,
    params: Vec<Parameter<f64>>,
    forward: impl Fn(&mut Graph<f64>, &[Parameter<f64>], Var) -> Result<Var>,
) -> Result<CheckOutcome> {
    let param_idx = params.iter().position(|p| p.name() == param_name).expect("param exists");

    let mut g = Graph::new();
    let x = g.leaf(input.clone(), true);
    let loss = forward(&mut g, &params, x)?;
    let base_sig = g.kink_signature();
    g.backward(loss)?;
    let grad_x = g.grad(x).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
    let grad_w = g.param_grad(param_name).expect("bound parameter");

    let eval = |x_t: &Tensor<f64>, w_t: &Tensor<f64>| -> Result<(f64, u64)> {
        let mut params = params.clone();
        params[param_idx].set_value(w_t.clone());
        let mut g = Graph::new();
        let x = g.leaf(x_t.clone(), false);
        let loss = forward(&mut g, &params, x)?;
        Ok((g.scalar_value(loss)?, g.kink_signature()))
    };

    let mut outcome = CheckOutcome::default();
    let w0 = params[param_idx].value().clone();
    let mut probe = input.clone();
    for e in 0..input.len() {
        let base = probe.data()[e];
        probe.set(e, base + FD_STEP);
        let (plus, sig_plus) = eval(&probe, &w0)?;
        probe.set(e, base - FD_STEP);
        let (minus, sig_minus) = eval(&probe, &w0)?;
        probe.set(e, base);
        if sig_plus != base_sig || sig_minus != base_sig {
            outcome.skipped += 1;
            continue;
        }
        outcome.worst = outcome.worst.max(rel_error(grad_x.data()[e], (plus - minus) / (2.0 * FD_STEP)));
        outcome.checked += 1;
    }
    let mut probe_w = w0.clone();
    for e in 0..w0.len() {
        let base = probe_w.data()[e];
        probe_w.set(e, base + FD_STEP);
        let (plus, sig_plus) = eval(&input, &probe_w)?;
        probe_w.set(e, base - FD_STEP);
        let (minus, sig_minus) = eval(&input, &probe_w)?;
        probe_w.set(e, base);
        if sig_plus != base_sig || sig_minus != base_sig {
            outcome.skipped += 1;
            continue;
        }
        outcome.worst = outcome.worst.max(rel_error(grad_w.data()[e], (plus - minus) / (2.0 * FD_STEP)));
        outcome.checked += 1;
    }
    Ok(outcome)
}

fn model_checks(checks: &mut Vec<Check>) {
    checks.push(Check {
        name: "student_forward",
        run: Box::new(|seed| {
            let mut r = rng::stream_n(seed, "student-fwd", &[]);
            let mut model = StudentModel::<f64>::new(tiny_config(), seed)?;
            perturb_params(model.params_mut(), &mut r);
            let input = uniform(Shape::new(1, 1, 6, 6), 0.0, 1.0, &mut r);
            let proj = projector(Shape::new(1, 1, 6, 6), &mut r);
            let config = model.config();
            let params = model.params().to_vec();
            check_model(input, "student.block1.weight", params, move |g, params, x| {
                let model = StudentModel::from_parts(config, params.to_vec());
                let out = model.forward(g, x)?;
                project(g, out, &proj)
            })
        }),
    });
    checks.push(Check {
        name: "teacher_encode",
        run: Box::new(|seed| {
            let mut r = rng::stream_n(seed, "teacher-enc", &[]);
            let mut model = TeacherModel::<f64>::new(tiny_config(), FusionMode::Spi, seed)?;
            perturb_params(model.params_mut(), &mut r);
            let input = uniform(Shape::new(1, 1, 6, 6), 0.0, 1.0, &mut r);
            let proj = projector(Shape::new(1, 3, 6, 6), &mut r);
            let config = model.config();
            let params = model.params().to_vec();
            check_model(input, "teacher.enc0.weight", params, move |g, params, x| {
                let model = TeacherModel::from_parts(config, FusionMode::Spi, params.to_vec())?;
                let out = model.encode(g, x)?;
                project(g, out, &proj)
            })
        }),
    });
    checks.push(Check {
        name: "teacher_forward",
        run: Box::new(|seed| {
            let mut r = rng::stream_n(seed, "teacher-fwd", &[]);
            let mut model = TeacherModel::<f64>::new(tiny_config(), FusionMode::Spi, seed)?;
            perturb_params(model.params_mut(), &mut r);
            let fused = uniform(Shape::new(1, 4, 6, 6), -0.5, 1.0, &mut r);
            let proj = projector(Shape::new(1, 1, 6, 6), &mut r);
            let config = model.config();
            let params = model.params().to_vec();
            check_model(fused, "teacher.body0.weight", params, move |g, params, x| {
                let model = TeacherModel::from_parts(config, FusionMode::Spi, params.to_vec())?;
                let out = model.forward(g, x)?;
                project(g, out, &proj)
            })
        }),
    });
    // encode -> pool -> fuse -> body, end to end
    checks.push(Check {
        name: "teacher_pipeline",
        run: Box::new(|seed| {
            let mut r = rng::stream_n(seed, "teacher-pipe", &[]);
            let mut model = TeacherModel::<f64>::new(tiny_config(), FusionMode::Spi, seed)?;
            perturb_params(model.params_mut(), &mut r);
            let input = uniform(Shape::new(1, 1, 6, 6), 0.0, 1.0, &mut r);
            let map = partition_map(6, 6, 3, &mut r);
            let proj = projector(Shape::new(1, 1, 6, 6), &mut r);
            let config = model.config();
            let params = model.params().to_vec();
            check_model(input, "teacher.enc1.weight", params, move |g, params, x| {
                let model = TeacherModel::from_parts(config, FusionMode::Spi, params.to_vec())?;
                let enc = model.encode(g, x)?;
                let pooled = map_pool(g, enc, std::slice::from_ref(&map))?;
                let fused = spi_fuse(g, pooled, x)?;
                let out = model.forward(g, fused)?;
                project(g, out, &proj)
            })
        }),
    });
}

/// Runs every check `instances` times and reports the worst error per op.
pub fn run_suite(seed: u64, instances: usize) -> Result<Vec<OpReport>> {
    let mut checks = Vec::new();
    elementwise_checks(&mut checks);
    structural_checks(&mut checks);
    loss_checks(&mut checks);
    model_checks(&mut checks);

    let mut reports = Vec::with_capacity(checks.len());
    for check in &checks {
        let mut total = CheckOutcome::default();
        for i in 0..instances {
            total.absorb((check.run)(rng::mix_n(seed, check.name, &[i as u64]))?);
        }
        reports.push(OpReport {
            name: check.name,
            max_rel_error: total.worst,
            checked: total.checked,
            skipped: total.skipped,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes_tolerance() {
        // the full 10-instance run is exercised by the acceptance suite
        let reports = run_suite(7, 2).unwrap();
        assert!(reports.len() >= 20);
        for r in &reports {
            assert!(r.passed(), "{}: max rel error {}", r.name, r.max_rel_error);
        }
    }
}
