//! Weighted reconstruction, style, perceptual and adversarial objective.

use mxt_tensor::{no_grad, Conv2dSpec, Real, Result, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{impl_params, Conv2d};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub l1: f64,
    pub style: f64,
    pub perceptual: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 1.0,
            style: 250.0,
            perceptual: 0.1,
            adversarial: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.l1, self.style, self.perceptual, self.adversarial];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(TensorError::Contract(format!(
                "loss weights must be finite and >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn l1_loss(out: &Tensor, target: &Tensor) -> Result<Tensor> {
    out.expect_same_shape(target, "l1 loss")?;
    out.sub(target)?.abs()?.mean_all()
}

/// `F·Fᵀ / (C·H·W)` per batch element, F flattened to (C, H·W).
pub fn gram_matrix(features: &Tensor) -> Result<Tensor> {
    if features.rank() != 4 {
        return Err(TensorError::Dimension(format!(
            "gram matrix expects (B,C,H,W), got {:?}",
            features.shape()
        )));
    }
    let (b, c, h, w) = (
        features.dim(0),
        features.dim(1),
        features.dim(2),
        features.dim(3),
    );
    if h * w == 0 {
        return Err(TensorError::Dimension(
            "gram matrix of empty feature map".into(),
        ));
    }
    let f = features.reshape(&[b, c, h * w])?;
    f.matmul(&f.transpose(1, 2)?)?
        .scale(1.0 / (c * h * w) as Real)
}

pub const EXTRACTOR_WIDTHS: [usize; 4] = [8, 16, 32, 32];

/// Frozen random-weight conv pyramid: a 3×3 stage at full resolution
/// followed by three stride-2 stages, ReLU after each.
#[derive(Clone)]
pub struct FeatureExtractor {
    pub seed: u64,
    pub stages: Vec<Conv2d>,
}

impl FeatureExtractor {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages = EXTRACTOR_WIDTHS
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let spec = if i == 0 {
                    Conv2dSpec::same(3)
                } else {
                    Conv2dSpec {
                        stride: 2,
                        padding: 1,
                        groups: 1,
                    }
                };
                let cin = cin_of(i);
                let fan_in = (cin * 9) as f64;
                let bound = (6.0 / fan_in).sqrt();
                let n = cout * cin * 9;
                let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
                let b: Vec<f64> = (0..cout).map(|_| rng.gen_range(-0.1..=0.1)).collect();
                Conv2d::frozen(
                    Tensor::from_f64(&w, &[cout, cin, 3, 3]).expect("weight shape"),
                    Some(Tensor::from_f64(&b, &[cout]).expect("bias shape")),
                    spec,
                )
            })
            .collect();
        FeatureExtractor { seed, stages }
    }

    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut h = x.clone();
        for s in &self.stages {
            h = s.forward(&h)?.relu()?;
            out.push(h.clone());
        }
        Ok(out)
    }
}

fn cin_of(stage: usize) -> usize {
    if stage == 0 {
        3
    } else {
        EXTRACTOR_WIDTHS[stage - 1]
    }
}

/// Mean over stages of the L1 distance between features.
pub fn perceptual_from(fo: &[Tensor], fg: &[Tensor]) -> Result<Tensor> {
    let terms = fo
        .iter()
        .zip(fg)
        .map(|(a, b)| l1_loss(a, b))
        .collect::<Result<Vec<_>>>()?;
    mean_of(&terms)
}

/// Mean over stages of the L1 distance between Gram matrices.
pub fn style_from(fo: &[Tensor], fg: &[Tensor]) -> Result<Tensor> {
    let terms = fo
        .iter()
        .zip(fg)
        .map(|(a, b)| l1_loss(&gram_matrix(a)?, &gram_matrix(b)?))
        .collect::<Result<Vec<_>>>()?;
    mean_of(&terms)
}

fn mean_of(terms: &[Tensor]) -> Result<Tensor> {
    let first = terms
        .first()
        .ok_or_else(|| TensorError::Contract("no feature stages".into()))?;
    let mut acc = first.clone();
    for t in &terms[1..] {
        acc = acc.add(t)?;
    }
    acc.scale(1.0 / terms.len() as Real)
}

pub fn perceptual_loss(out: &Tensor, target: &Tensor, ext: &FeatureExtractor) -> Result<Tensor> {
    out.expect_same_shape(target, "perceptual loss")?;
    perceptual_from(&ext.features(out)?, &ext.features(target)?)
}

pub fn style_loss(out: &Tensor, target: &Tensor, ext: &FeatureExtractor) -> Result<Tensor> {
    out.expect_same_shape(target, "style loss")?;
    style_from(&ext.features(out)?, &ext.features(target)?)
}

/// Strided conv stack producing one real/fake logit per patch.
#[derive(Clone)]
pub struct PatchDiscriminator {
    pub convs: Vec<Conv2d>,
}
impl_params!(PatchDiscriminator { convs });

pub const LEAKY_SLOPE: Real = 0.2;

impl PatchDiscriminator {
    pub fn new(rng: &mut ChaCha8Rng, width: usize) -> Self {
        PatchDiscriminator {
            convs: vec![
                Conv2d::strided3x3(rng, 3, width),
                Conv2d::strided3x3(rng, width, 2 * width),
                Conv2d::same3x3(rng, 2 * width, 1),
            ],
        }
    }

    /// (B,3,H,W) → (B,1,⌈H/4⌉,⌈W/4⌉) logits.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let last = self.convs.len() - 1;
        let mut h = x.clone();
        for (i, c) in self.convs.iter().enumerate() {
            h = c.forward(&h)?;
            if i < last {
                h = h.leaky_relu(LEAKY_SLOPE)?;
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversarialKind {
    /// `softplus(−D(real)) + softplus(D(fake))` / `softplus(−D(fake))`
    NonSaturating,
    /// `relu(1 − D(real)) + relu(1 + D(fake))` / `−D(fake)`
    Hinge,
}

/// Discriminator objective; `fake` is detached so no gradient reaches the
/// generator.
pub fn d_loss(
    disc: &PatchDiscriminator,
    real: &Tensor,
    fake: &Tensor,
    kind: AdversarialKind,
) -> Result<Tensor> {
    let dr = disc.forward(real)?;
    let df = disc.forward(&fake.detach())?;
    match kind {
        AdversarialKind::NonSaturating => dr
            .neg()?
            .softplus()?
            .mean_all()?
            .add(&df.softplus()?.mean_all()?),
        AdversarialKind::Hinge => dr
            .neg()?
            .shift(1.0)?
            .relu()?
            .mean_all()?
            .add(&df.shift(1.0)?.relu()?.mean_all()?),
    }
}

pub fn g_loss(disc: &PatchDiscriminator, fake: &Tensor, kind: AdversarialKind) -> Result<Tensor> {
    let df = disc.forward(fake)?;
    match kind {
        AdversarialKind::NonSaturating => df.neg()?.softplus()?.mean_all(),
        AdversarialKind::Hinge => df.mean_all()?.neg(),
    }
}

/// Both adversarial objectives for one (real, fake) pair.
pub fn adversarial_losses(
    disc: &PatchDiscriminator,
    fake: &Tensor,
    real: &Tensor,
    kind: AdversarialKind,
) -> Result<(Tensor, Tensor)> {
    Ok((g_loss(disc, fake, kind)?, d_loss(disc, real, fake, kind)?))
}

/// Value of each weighted term; `None` when its weight is zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossBreakdown {
    pub l1: Option<Real>,
    pub style: Option<Real>,
    pub perceptual: Option<Real>,
    pub adversarial: Option<Real>,
    pub total: Real,
}

impl LossBreakdown {
    pub fn terms(&self) -> Vec<(&'static str, Real)> {
        [
            ("l1", self.l1),
            ("style", self.style),
            ("perceptual", self.perceptual),
            ("adversarial", self.adversarial),
        ]
        .into_iter()
        .filter_map(|(n, v)| v.map(|v| (n, v)))
        .collect()
    }

    /// First term that is not finite, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        self.terms()
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }
}

/// `α1·L1 + α2·style + α3·perceptual + α4·adversarial`, skipping terms with
/// zero weight entirely.
pub fn composite_loss(
    out: &Tensor,
    target: &Tensor,
    weights: &LossWeights,
    ext: &FeatureExtractor,
    disc: Option<(&PatchDiscriminator, AdversarialKind)>,
) -> Result<(Tensor, LossBreakdown)> {
    weights.validate()?;
    out.expect_same_shape(target, "composite loss")?;
    let mut parts: Vec<Tensor> = Vec::new();
    let mut bd = LossBreakdown::default();
    let mut add = |w: f64, t: Tensor, slot: &mut Option<Real>| -> Result<()> {
        *slot = Some(t.item()?);
        parts.push(t.scale(w as Real)?);
        Ok(())
    };
    if weights.l1 > 0.0 {
        add(weights.l1, l1_loss(out, target)?, &mut bd.l1)?;
    }
    if weights.style > 0.0 || weights.perceptual > 0.0 {
        let fo = ext.features(out)?;
        let fg = no_grad(|| ext.features(target))?;
        if weights.style > 0.0 {
            add(weights.style, style_from(&fo, &fg)?, &mut bd.style)?;
        }
        if weights.perceptual > 0.0 {
            add(
                weights.perceptual,
                perceptual_from(&fo, &fg)?,
                &mut bd.perceptual,
            )?;
        }
    }
    if weights.adversarial > 0.0 {
        let (d, kind) = disc.ok_or_else(|| {
            TensorError::Contract("adversarial weight > 0 requires a discriminator".into())
        })?;
        add(
            weights.adversarial,
            g_loss(d, out, kind)?,
            &mut bd.adversarial,
        )?;
    }
    let total = match parts.split_first() {
        Some((first, rest)) => rest.iter().try_fold(first.clone(), |acc, t| acc.add(t))?,
        None => Tensor::scalar(0.0),
    };
    bd.total = total.item()?;
    Ok((total, bd))
}
