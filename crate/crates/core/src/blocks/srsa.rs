//! Spatial-reduced self-attention: queries at full resolution attend to
//! keys and values average-pooled to a fixed `s × s` grid, plus a depth-wise
//! local-enhancement path on V.

use mxt_tensor::{Real, Result, Tensor, TensorError};
use rand_chacha::ChaCha8Rng;

use crate::nn::{impl_params, Conv2d, LayerNorm};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QkScale {
    /// Multiply logits by 1/√(head dim).
    InverseSqrtDim,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SrsaConfig {
    pub channels: usize,
    pub heads: usize,
    pub pooled_spatial: usize,
    pub qk_scale: QkScale,
}

impl SrsaConfig {
    pub fn new(channels: usize) -> Self {
        SrsaConfig {
            channels,
            heads: 1,
            pooled_spatial: 8,
            qk_scale: QkScale::InverseSqrtDim,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.channels % self.heads != 0 || self.pooled_spatial == 0 {
            return Err(TensorError::Contract(format!(
                "invalid SRSA config {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct Srsa {
    pub cfg: SrsaConfig,
    pub norm: LayerNorm,
    pub qkv: Conv2d,
    pub qkv_dw: Conv2d,
    pub local: Conv2d,
}
impl_params!(Srsa {
    norm,
    qkv,
    qkv_dw,
    local
});

pub struct SrsaOutput {
    pub out: Tensor,
    /// Row-stochastic attention of shape (B, heads, H·W, s²).
    pub attention: Tensor,
}

impl Srsa {
    pub fn new(rng: &mut ChaCha8Rng, cfg: SrsaConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        Ok(Srsa {
            cfg,
            norm: LayerNorm::new(c),
            qkv: Conv2d::pointwise(rng, c, 3 * c),
            qkv_dw: Conv2d::depthwise3x3(rng, 3 * c),
            local: Conv2d::depthwise3x3(rng, c),
        })
    }

    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        Ok(self.forward_detailed(f)?.out)
    }

    pub fn forward_detailed(&self, f: &Tensor) -> Result<SrsaOutput> {
        if f.rank() != 4 || f.dim(1) != self.cfg.channels {
            return Err(TensorError::Dimension(format!(
                "SRSA expects (B,{},H,W), got {:?}",
                self.cfg.channels,
                f.shape()
            )));
        }
        let (b, c, h, w) = (f.dim(0), f.dim(1), f.dim(2), f.dim(3));
        if h * w == 0 {
            return Err(TensorError::Dimension(
                "SRSA on empty spatial extent".into(),
            ));
        }
        let heads = self.cfg.heads;
        let d = c / heads;
        let s = self.cfg.pooled_spatial;
        let (hw, tokens) = (h * w, s * s);

        let x = self.norm.forward(f, 1)?;
        let qkv = self.qkv_dw.forward(&self.qkv.forward(&x)?)?;
        let parts = qkv.chunk(1, 3)?;
        let (q, k, v) = (&parts[0], &parts[1], &parts[2]);
        let k_pooled = k.adaptive_avg_pool2d(s)?;
        let v_pooled = v.adaptive_avg_pool2d(s)?;

        let q = q.reshape(&[b, heads, d, hw])?.transpose(2, 3)?;
        let k_pooled = k_pooled.reshape(&[b, heads, d, tokens])?;
        let mut logits = q.matmul(&k_pooled)?;
        if self.cfg.qk_scale == QkScale::InverseSqrtDim {
            logits = logits.scale(1.0 / (d as Real).sqrt())?;
        }
        let attention = logits.softmax(3)?;
        let v_pooled = v_pooled.reshape(&[b, heads, d, tokens])?.transpose(2, 3)?;
        let attended = attention
            .matmul(&v_pooled)?
            .transpose(2, 3)?
            .reshape(&[b, c, h, w])?;
        let out = attended.add(&self.local.forward(v)?)?;
        Ok(SrsaOutput { out, attention })
    }
}
