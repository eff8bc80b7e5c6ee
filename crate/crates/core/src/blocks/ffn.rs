//! Gated depth-wise feed-forward network and its context-broadcasting variant.

use mxt_tensor::{Result, Tensor};
use rand_chacha::ChaCha8Rng;

use crate::nn::{impl_params, Conv2d, LayerNorm};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbfnConfig {
    pub channels: usize,
    pub expansion: f64,
}

impl CbfnConfig {
    pub fn new(channels: usize) -> Self {
        CbfnConfig {
            channels,
            expansion: 2.66,
        }
    }

    pub fn hidden(&self) -> usize {
        ((self.channels as f64 * self.expansion).round() as usize).max(self.channels)
    }
}

#[derive(Clone)]
pub struct Gdfn {
    pub cfg: CbfnConfig,
    pub norm: LayerNorm,
    pub project_in: Conv2d,
    pub dwconv: Conv2d,
    pub project_out: Conv2d,
}
impl_params!(Gdfn {
    norm,
    project_in,
    dwconv,
    project_out
});

impl Gdfn {
    pub fn new(rng: &mut ChaCha8Rng, cfg: CbfnConfig) -> Self {
        let hidden = cfg.hidden();
        Gdfn {
            cfg,
            norm: LayerNorm::new(cfg.channels),
            project_in: Conv2d::pointwise(rng, cfg.channels, 2 * hidden),
            dwconv: Conv2d::depthwise3x3(rng, 2 * hidden),
            project_out: Conv2d::pointwise(rng, hidden, cfg.channels),
        }
    }

    /// LN → 1×1 conv to 2·hidden → depth-wise 3×3 → GELU(path1) ⊙ path2 → 1×1 conv.
    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        let x = self
            .dwconv
            .forward(&self.project_in.forward(&self.norm.forward(f, 1)?)?)?;
        let parts = x.chunk(1, 2)?;
        let gated = parts[0].gelu()?.mul(&parts[1])?;
        self.project_out.forward(&gated)
    }

    /// GDFN output plus its per-sample grand mean broadcast to every entry.
    pub fn forward_broadcast(&self, f: &Tensor) -> Result<Tensor> {
        let x = self.forward(f)?;
        let mu = x.mean_axes(&[1, 2, 3], true)?;
        x.add(&mu)
    }
}
