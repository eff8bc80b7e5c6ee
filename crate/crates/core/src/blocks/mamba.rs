//! Mamba block over the raster-flattened feature map.

use mxt_tensor::{Result, Tensor, TensorError};
use rand_chacha::ChaCha8Rng;

use super::positional::positional_embedding;
use crate::nn::{impl_params, uniform, LayerNorm, Linear};
use crate::ssm::{ScanMode, SsmParams};

/// Where SiLU sits relative to the causal convolution on the body branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationOrder {
    /// Conv1D(SiLU(Linear(x)))
    SiluThenConv,
    /// SiLU(Conv1D(Linear(x)))
    ConvThenSilu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MambaBlockConfig {
    pub channels: usize,
    pub state_dim: usize,
    pub conv1d_kernel: usize,
    pub expand_ratio: usize,
    pub use_positional_embedding: bool,
    pub activation_order: ActivationOrder,
    pub skip_d: bool,
    pub scan_mode: ScanMode,
}

impl MambaBlockConfig {
    pub fn new(channels: usize, state_dim: usize) -> Self {
        MambaBlockConfig {
            channels,
            state_dim,
            conv1d_kernel: 4,
            expand_ratio: 2,
            use_positional_embedding: true,
            activation_order: ActivationOrder::SiluThenConv,
            skip_d: false,
            scan_mode: ScanMode::Sequential,
        }
    }

    pub fn inner(&self) -> usize {
        self.channels * self.expand_ratio
    }
}

#[derive(Clone)]
pub struct MambaBlock {
    pub cfg: MambaBlockConfig,
    pub norm: LayerNorm,
    pub in_proj: Linear,
    pub gate_proj: Linear,
    pub conv_weight: Tensor,
    pub conv_bias: Tensor,
    pub ssm: SsmParams,
    pub out_proj: Linear,
}
impl_params!(MambaBlock {
    norm,
    in_proj,
    gate_proj,
    conv_weight,
    conv_bias,
    ssm,
    out_proj
});

impl MambaBlock {
    pub fn new(rng: &mut ChaCha8Rng, cfg: MambaBlockConfig) -> Result<Self> {
        if cfg.channels == 0
            || cfg.state_dim == 0
            || cfg.conv1d_kernel == 0
            || cfg.expand_ratio == 0
        {
            return Err(TensorError::Contract(format!(
                "invalid Mamba block config {cfg:?}"
            )));
        }
        let (c, e, k) = (cfg.channels, cfg.inner(), cfg.conv1d_kernel);
        Ok(MambaBlock {
            cfg,
            norm: LayerNorm::new(c),
            in_proj: Linear::new(rng, c, e, true),
            gate_proj: Linear::new(rng, c, e, true),
            conv_weight: uniform(rng, &[e, k], 1.0 / (k as f64).sqrt()),
            conv_bias: Tensor::zeros(&[e]).requires_grad_(),
            ssm: SsmParams::new(rng, e, cfg.state_dim, cfg.skip_d),
            out_proj: Linear::new(rng, e, c, true),
        })
    }

    /// (B,C,H,W) → (B,L,C) in row-major raster order → block → (B,C,H,W).
    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        if f.rank() != 4 || f.dim(1) != self.cfg.channels {
            return Err(TensorError::Dimension(format!(
                "Mamba block expects (B,{},H,W), got {:?}",
                self.cfg.channels,
                f.shape()
            )));
        }
        let (b, c, h, w) = (f.dim(0), f.dim(1), f.dim(2), f.dim(3));
        let seq = f.reshape(&[b, c, h * w])?.transpose(1, 2)?;
        let out = self.forward_sequence(&seq)?;
        out.transpose(1, 2)?.reshape(&[b, c, h, w])
    }

    /// The block on an already-flattened (B,L,C) sequence.
    pub fn forward_sequence(&self, seq: &Tensor) -> Result<Tensor> {
        let (len, c) = (seq.dim(1), seq.dim(2));
        if len == 0 {
            return Err(TensorError::Dimension("Mamba block needs L >= 1".into()));
        }
        let seq = if self.cfg.use_positional_embedding {
            seq.add(&positional_embedding(len, c)?)?
        } else {
            seq.clone()
        };
        let x = self.norm.forward(&seq, 2)?;
        let body = self.in_proj.forward(&x)?;
        let body = match self.cfg.activation_order {
            ActivationOrder::SiluThenConv => body
                .silu()?
                .causal_conv1d(&self.conv_weight, &self.conv_bias)?,
            ActivationOrder::ConvThenSilu => body
                .causal_conv1d(&self.conv_weight, &self.conv_bias)?
                .silu()?,
        };
        let body = self.ssm.forward(&body, self.cfg.scan_mode)?;
        let gate = self.gate_proj.forward(&x)?.silu()?;
        self.out_proj.forward(&body.mul(&gate)?)
    }
}
