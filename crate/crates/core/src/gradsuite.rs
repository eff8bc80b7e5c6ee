//! Finite-difference gradient suites, one per block, on 4×4 spatial inputs.

use mxt_tensor::gradcheck::{check, GradCheckReport};
use mxt_tensor::{Real, Result, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{CbfnConfig, Gdfn, MambaBlock, MambaBlockConfig, Srsa, SrsaConfig};
use crate::losses::{
    d_loss, g_loss, l1_loss, perceptual_loss, style_loss, AdversarialKind, FeatureExtractor,
    PatchDiscriminator,
};
use crate::nn::{LayerNorm, Params};
use crate::ssm::{ScanMode, SsmParams};

pub const TOLERANCE: Real = 1e-5;
pub const STEP: Real = 1e-5;
const CHANNELS: usize = 4;
const SIDE: usize = 4;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_f64(
        &(0..n)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect::<Vec<_>>(),
        shape,
    )
    .expect("shape matches data")
}

/// Perturbs every parameter with noise so zero-initialized biases and unit
/// gains do not hide errors.
pub fn jitter<M: Params>(module: &mut M, rng: &mut ChaCha8Rng, amount: f64) {
    for (_, p) in module.named_params_mut() {
        let noise = random_tensor(rng, p.shape(), amount);
        *p = p.detach().add(&noise).expect("same shape").requires_grad_();
    }
}

/// Checks `sum(forward(module, x) ⊙ probe)` with respect to `x` and every
/// parameter of `module`. Input index 0 is `x`; the rest follow
/// `named_params` order.
pub fn check_module<M, F>(
    module: &M,
    x: &Tensor,
    probe: &Tensor,
    forward: F,
) -> Result<GradCheckReport>
where
    M: Params + Clone,
    F: Fn(&M, &Tensor) -> Result<Tensor>,
{
    let mut inputs = vec![x.clone()];
    inputs.extend(module.named_params().into_iter().map(|(_, p)| p.clone()));
    check(
        |t| {
            let mut m = module.clone();
            for (slot, (_, p)) in m.named_params_mut().into_iter().enumerate() {
                *p = t[slot + 1].clone();
            }
            forward(&m, &t[0])?.mul(probe)?.sum_all()
        },
        &inputs,
        STEP,
    )
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub worst_rel_err: Real,
    pub checked_inputs: usize,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.worst_rel_err.is_finite() && self.worst_rel_err < TOLERANCE
    }
}

fn summarize(name: &'static str, r: GradCheckReport) -> SuiteResult {
    SuiteResult {
        name,
        worst_rel_err: r.worst_rel_err(),
        checked_inputs: r.inputs.len(),
    }
}

pub const BLOCK_SUITES: [&str; 6] = ["layer_norm", "srsa", "mamba", "gdfn", "cbfn", "ssm"];
pub const LOSS_SUITES: [&str; 4] = ["l1", "style", "perceptual", "adversarial"];

pub fn all_suites() -> impl Iterator<Item = &'static str> {
    BLOCK_SUITES.into_iter().chain(LOSS_SUITES)
}

/// Gradient suites for the loss terms on (2,3,side,side) images.
pub fn run_loss_suite(name: &str, seed: u64, side: usize) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [2, 3, side, side];
    let out = random_tensor(&mut rng, &shape, 0.5).shift(0.5)?;
    let target = random_tensor(&mut rng, &shape, 0.5).shift(0.5)?;
    let ext = FeatureExtractor::new(seed ^ 0x5eed);
    let one = Tensor::scalar(1.0);
    let single =
        |name: &'static str, f: &dyn Fn(&Tensor) -> Result<Tensor>| -> Result<SuiteResult> {
            Ok(summarize(name, check(|t| f(&t[0]), &[out.clone()], STEP)?))
        };
    match name {
        "l1" => single("l1", &|o| l1_loss(o, &target)),
        "style" => single("style", &|o| style_loss(o, &target, &ext)),
        "perceptual" => single("perceptual", &|o| perceptual_loss(o, &target, &ext)),
        "adversarial" => {
            let mut disc = PatchDiscriminator::new(&mut rng, 4);
            jitter(&mut disc, &mut rng, 0.1);
            let mut worst = summarize(
                "adversarial",
                check_module(&disc, &out, &one, |d, x| {
                    g_loss(d, x, AdversarialKind::NonSaturating)
                })?,
            );
            for kind in [AdversarialKind::NonSaturating, AdversarialKind::Hinge] {
                let r = check_module(&disc, &target, &one, |d, real| d_loss(d, real, &out, kind))?;
                worst.worst_rel_err = worst.worst_rel_err.max(r.worst_rel_err());
                worst.checked_inputs += r.inputs.len();
            }
            Ok(worst)
        }
        other => Err(TensorError::Contract(format!(
            "unknown gradient suite `{other}`"
        ))),
    }
}

/// Name of a suite whose op has a deliberately wrong backward (x² with
/// gradient x instead of 2x); it must always be reported as failing.
pub const CORRUPTED_FIXTURE: &str = "corrupted_fixture";

fn corrupted_square(x: &Tensor) -> Result<Tensor> {
    let data = x.data().iter().map(|v| v * v).collect();
    Tensor::from_op(
        "corrupted_square",
        data,
        x.shape(),
        &[x],
        Box::new(|ctx| {
            let g = ctx.inputs[0]
                .data()
                .iter()
                .zip(ctx.grad)
                .map(|(v, g)| v * g)
                .collect();
            Ok(vec![Some(g)])
        }),
    )
}

fn run_corrupted_fixture(seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, &[2, CHANNELS, SIDE, SIDE], 1.0);
    let probe = random_tensor(&mut rng, &[2, CHANNELS, SIDE, SIDE], 1.0);
    let r = check(
        |t| corrupted_square(&t[0])?.mul(&probe)?.sum_all(),
        &[x],
        STEP,
    )?;
    Ok(summarize(CORRUPTED_FIXTURE, r))
}

/// Runs a block or loss suite by name at the standard 4×4 size.
pub fn run_suite(name: &str, seed: u64) -> Result<SuiteResult> {
    if name == CORRUPTED_FIXTURE {
        run_corrupted_fixture(seed)
    } else if LOSS_SUITES.contains(&name) {
        run_loss_suite(name, seed, SIDE)
    } else {
        run_block_suite(name, seed)
    }
}

pub fn run_block_suite(name: &str, seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = [2, CHANNELS, SIDE, SIDE];
    let x = random_tensor(&mut rng, &image, 1.0);
    let probe = random_tensor(&mut rng, &image, 1.0);
    match name {
        "layer_norm" => {
            let mut ln = LayerNorm::new(CHANNELS);
            jitter(&mut ln, &mut rng, 0.5);
            Ok(summarize(
                "layer_norm",
                check_module(&ln, &x, &probe, |m, x| m.forward(x, 1))?,
            ))
        }
        "srsa" => {
            let mut cfg = SrsaConfig::new(CHANNELS);
            cfg.pooled_spatial = 2;
            let mut m = Srsa::new(&mut rng, cfg)?;
            jitter(&mut m, &mut rng, 0.1);
            Ok(summarize(
                "srsa",
                check_module(&m, &x, &probe, |m, x| m.forward(x))?,
            ))
        }
        "mamba" => {
            let mut cfg = MambaBlockConfig::new(CHANNELS, 3);
            cfg.skip_d = true;
            let mut m = MambaBlock::new(&mut rng, cfg)?;
            jitter(&mut m, &mut rng, 0.1);
            Ok(summarize(
                "mamba",
                check_module(&m, &x, &probe, |m, x| m.forward(x))?,
            ))
        }
        "gdfn" | "cbfn" => {
            let mut m = Gdfn::new(&mut rng, CbfnConfig::new(CHANNELS));
            jitter(&mut m, &mut rng, 0.1);
            if name == "gdfn" {
                Ok(summarize(
                    "gdfn",
                    check_module(&m, &x, &probe, |m, x| m.forward(x))?,
                ))
            } else {
                Ok(summarize(
                    "cbfn",
                    check_module(&m, &x, &probe, |m, x| m.forward_broadcast(x))?,
                ))
            }
        }
        "ssm" => {
            let seq = random_tensor(&mut rng, &[2, SIDE * SIDE, CHANNELS], 1.0);
            let seq_probe = random_tensor(&mut rng, &[2, SIDE * SIDE, CHANNELS], 1.0);
            let mut p = SsmParams::new(&mut rng, CHANNELS, 3, true);
            jitter(&mut p, &mut rng, 0.1);
            let r = check_module(&p, &seq, &seq_probe, |m, x| {
                m.forward(x, ScanMode::Chunked(5))
            })?;
            Ok(summarize("ssm", r))
        }
        other => Err(TensorError::Contract(format!(
            "unknown gradient suite `{other}`"
        ))),
    }
}
