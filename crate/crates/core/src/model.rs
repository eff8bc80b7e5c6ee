//! Hybrid modules, hybrid blocks and the seven-block U-Net.

use mxt_tensor::{no_grad, Result, Tensor, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{
    ActivationOrder, CbfnConfig, Gdfn, MambaBlock, MambaBlockConfig, QkScale, Srsa, SrsaConfig,
};
use crate::nn::{impl_params, Conv2d, Params};
use crate::ssm::ScanMode;

/// Which feed-forward network closes a hybrid module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FfnKind {
    None,
    Gdfn,
    Cbfn,
}

impl FfnKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FfnKind::None => "none",
            FfnKind::Gdfn => "gdfn",
            FfnKind::Cbfn => "cbfn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(FfnKind::None),
            "gdfn" => Some(FfnKind::Gdfn),
            "cbfn" => Some(FfnKind::Cbfn),
            _ => None,
        }
    }
}

pub const INPUT_CHANNELS: usize = 4;
pub const OUTPUT_CHANNELS: usize = 3;
pub const LEVELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub hm_counts: [usize; 7],
    pub state_dim: usize,
    pub pooled_spatial: usize,
    pub heads: usize,
    pub enable_mamba: bool,
    pub enable_srsa: bool,
    pub ffn: FfnKind,
    pub use_positional_embedding: bool,
    pub qk_scale: QkScale,
    pub activation_order: ActivationOrder,
    pub skip_d: bool,
    pub conv1d_kernel: usize,
    pub expand_ratio: usize,
    pub ffn_expansion: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 16,
            hm_counts: [4, 6, 6, 8, 6, 6, 4],
            state_dim: 8,
            pooled_spatial: 8,
            heads: 1,
            enable_mamba: true,
            enable_srsa: true,
            ffn: FfnKind::Cbfn,
            use_positional_embedding: true,
            qk_scale: QkScale::InverseSqrtDim,
            activation_order: ActivationOrder::SiluThenConv,
            skip_d: false,
            conv1d_kernel: 4,
            expand_ratio: 2,
            ffn_expansion: 2.66,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Component sets of the ablation rows: (a) plain U-Net, (b) Mamba +
    /// GDFN, (c) SRSA + GDFN, (d) Mamba + SRSA + GDFN, (e) Mamba + SRSA + CBFN.
    pub fn ablation(row: char) -> Option<Self> {
        let (mamba, srsa, ffn) = match row {
            'a' => (false, false, FfnKind::None),
            'b' => (true, false, FfnKind::Gdfn),
            'c' => (false, true, FfnKind::Gdfn),
            'd' => (true, true, FfnKind::Gdfn),
            'e' => (true, true, FfnKind::Cbfn),
            _ => return None,
        };
        Some(ModelConfig {
            enable_mamba: mamba,
            enable_srsa: srsa,
            ffn,
            ..Default::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TensorError::Contract(m));
        if self.base_channels < 4 {
            return bad(format!(
                "base_channels must be >= 4, got {}",
                self.base_channels
            ));
        }
        if self.hm_counts.iter().any(|&n| n == 0) {
            return bad(format!(
                "every hm_count must be >= 1, got {:?}",
                self.hm_counts
            ));
        }
        if self.enable_mamba && self.use_positional_embedding && self.base_channels % 2 != 0 {
            return bad("positional embedding needs an even base_channels".into());
        }
        if self.heads == 0 || self.base_channels % self.heads != 0 {
            return bad(format!(
                "heads {} must divide base_channels {}",
                self.heads, self.base_channels
            ));
        }
        if self.state_dim == 0
            || self.pooled_spatial == 0
            || self.conv1d_kernel == 0
            || self.expand_ratio == 0
        {
            return bad(
                "state_dim, pooled_spatial, conv1d_kernel and expand_ratio must be >= 1".into(),
            );
        }
        if self.ffn_expansion < 1.0 {
            return bad(format!(
                "ffn_expansion must be >= 1, got {}",
                self.ffn_expansion
            ));
        }
        Ok(())
    }

    /// Channel width of each of the seven hybrid blocks.
    pub fn block_widths(&self) -> [usize; 7] {
        let c = self.base_channels;
        [c, 2 * c, 4 * c, 8 * c, 4 * c, 2 * c, c]
    }

    pub fn total_modules(&self) -> usize {
        self.hm_counts.iter().sum()
    }
}

/// SRSA, Mamba block and feed-forward network, each wrapped in a residual.
#[derive(Clone)]
pub struct HybridModule {
    pub srsa: Option<Srsa>,
    pub mamba: Option<MambaBlock>,
    pub ffn: Option<Gdfn>,
    pub ffn_kind: FfnKind,
    channels: usize,
}
impl_params!(HybridModule { srsa, mamba, ffn });

impl HybridModule {
    pub fn new(rng: &mut ChaCha8Rng, cfg: &ModelConfig, channels: usize) -> Result<Self> {
        let srsa = if cfg.enable_srsa {
            let mut sc = SrsaConfig::new(channels);
            sc.heads = cfg.heads;
            sc.pooled_spatial = cfg.pooled_spatial;
            sc.qk_scale = cfg.qk_scale;
            Some(Srsa::new(rng, sc)?)
        } else {
            None
        };
        let mamba = if cfg.enable_mamba {
            let mut mc = MambaBlockConfig::new(channels, cfg.state_dim);
            mc.conv1d_kernel = cfg.conv1d_kernel;
            mc.expand_ratio = cfg.expand_ratio;
            mc.use_positional_embedding = cfg.use_positional_embedding;
            mc.activation_order = cfg.activation_order;
            mc.skip_d = cfg.skip_d;
            mc.scan_mode = ScanMode::Sequential;
            Some(MambaBlock::new(rng, mc)?)
        } else {
            None
        };
        let ffn = match cfg.ffn {
            FfnKind::None => None,
            FfnKind::Gdfn | FfnKind::Cbfn => Some(Gdfn::new(
                rng,
                CbfnConfig {
                    channels,
                    expansion: cfg.ffn_expansion,
                },
            )),
        };
        Ok(HybridModule {
            srsa,
            mamba,
            ffn,
            ffn_kind: cfg.ffn,
            channels,
        })
    }

    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        if f.rank() != 4 || f.dim(1) != self.channels {
            return Err(TensorError::Dimension(format!(
                "hybrid module of width {} got input {:?}",
                self.channels,
                f.shape()
            )));
        }
        let mut x = f.clone();
        if let Some(s) = &self.srsa {
            x = x.add(&s.forward(&x)?)?;
        }
        if let Some(m) = &self.mamba {
            x = x.add(&m.forward(&x)?)?;
        }
        if let Some(g) = &self.ffn {
            let y = match self.ffn_kind {
                FfnKind::Cbfn => g.forward_broadcast(&x)?,
                _ => g.forward(&x)?,
            };
            x = x.add(&y)?;
        }
        Ok(x)
    }
}

#[derive(Clone)]
pub struct HybridBlock {
    pub modules: Vec<HybridModule>,
}
impl_params!(HybridBlock { modules });

impl HybridBlock {
    pub fn new(
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
        channels: usize,
        count: usize,
    ) -> Result<Self> {
        let modules = (0..count)
            .map(|_| HybridModule::new(rng, cfg, channels))
            .collect::<Result<_>>()?;
        Ok(HybridBlock { modules })
    }

    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        self.modules
            .iter()
            .try_fold(f.clone(), |x, m| m.forward(&x))
    }
}

/// One step of the forward pass, recorded by [`MxT::forward_traced`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stage {
    Embed {
        channels: usize,
    },
    Block {
        index: usize,
        channels: usize,
        height: usize,
        width: usize,
    },
    Downsample {
        channels: usize,
    },
    Upsample {
        channels: usize,
    },
    SkipFusion {
        channels: usize,
    },
    Head {
        channels: usize,
    },
}

/// U-Net: embed → 3 encoder blocks with ×2 downsampling → bottleneck →
/// 3 decoder blocks with ×2 upsampling and skip fusion → 3×3 head.
#[derive(Clone)]
pub struct MxT {
    pub config: ModelConfig,
    pub embed: Conv2d,
    pub encoders: Vec<HybridBlock>,
    pub downs: Vec<Conv2d>,
    pub bottleneck: HybridBlock,
    pub ups: Vec<Conv2d>,
    pub fuses: Vec<Conv2d>,
    pub decoders: Vec<HybridBlock>,
    pub head: Conv2d,
}
impl_params!(MxT {
    embed,
    encoders,
    downs,
    bottleneck,
    ups,
    fuses,
    decoders,
    head
});

impl MxT {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = config.base_channels;
        let widths = config.block_widths();
        let embed = Conv2d::same3x3(&mut rng, INPUT_CHANNELS, c);
        let mut encoders = Vec::new();
        let mut downs = Vec::new();
        for level in 0..LEVELS {
            encoders.push(HybridBlock::new(
                &mut rng,
                &config,
                widths[level],
                config.hm_counts[level],
            )?);
            downs.push(Conv2d::strided3x3(
                &mut rng,
                widths[level],
                2 * widths[level],
            ));
        }
        let bottleneck = HybridBlock::new(&mut rng, &config, widths[3], config.hm_counts[3])?;
        let mut ups = Vec::new();
        let mut fuses = Vec::new();
        let mut decoders = Vec::new();
        for i in 4..7 {
            let (from, to) = (widths[i - 1], widths[i]);
            ups.push(Conv2d::same3x3(&mut rng, from, to));
            fuses.push(Conv2d::pointwise(&mut rng, 2 * to, to));
            decoders.push(HybridBlock::new(
                &mut rng,
                &config,
                to,
                config.hm_counts[i],
            )?);
        }
        let head = Conv2d::same3x3(&mut rng, c, OUTPUT_CHANNELS);
        Ok(MxT {
            config,
            embed,
            encoders,
            downs,
            bottleneck,
            ups,
            fuses,
            decoders,
            head,
        })
    }

    fn check_inputs(i_masked: &Tensor, mask: &Tensor) -> Result<()> {
        if i_masked.rank() != 4 || i_masked.dim(1) != 3 {
            return Err(TensorError::Dimension(format!(
                "masked image must be (B,3,H,W), got {:?}",
                i_masked.shape()
            )));
        }
        let (b, h, w) = (i_masked.dim(0), i_masked.dim(2), i_masked.dim(3));
        if mask.shape() != [b, 1, h, w] {
            return Err(TensorError::Dimension(format!(
                "mask must be ({b},1,{h},{w}), got {:?}",
                mask.shape()
            )));
        }
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(TensorError::Dimension(format!(
                "image size {h}x{w} must be a positive multiple of 8; pad the input to the next multiple of 8"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, i_masked: &Tensor, mask: &Tensor) -> Result<Tensor> {
        self.run(i_masked, mask, None)
    }

    pub fn forward_traced(&self, i_masked: &Tensor, mask: &Tensor) -> Result<(Tensor, Vec<Stage>)> {
        let mut trace = Vec::new();
        let out = self.run(i_masked, mask, Some(&mut trace))?;
        Ok((out, trace))
    }

    /// Inference without gradient tracking.
    pub fn predict(&self, i_masked: &Tensor, mask: &Tensor) -> Result<Tensor> {
        no_grad(|| self.forward(i_masked, mask))
    }

    fn run(
        &self,
        i_masked: &Tensor,
        mask: &Tensor,
        mut trace: Option<&mut Vec<Stage>>,
    ) -> Result<Tensor> {
        Self::check_inputs(i_masked, mask)?;
        let mut log = |s: Stage| {
            if let Some(t) = trace.as_deref_mut() {
                t.push(s);
            }
        };
        let block_stage = |index: usize, x: &Tensor| Stage::Block {
            index,
            channels: x.dim(1),
            height: x.dim(2),
            width: x.dim(3),
        };
        let i_in = Tensor::concat(&[i_masked, mask], 1)?;
        let mut x = self.embed.forward(&i_in)?;
        log(Stage::Embed { channels: x.dim(1) });
        let mut skips = Vec::with_capacity(LEVELS);
        for level in 0..LEVELS {
            x = self.encoders[level].forward(&x)?;
            log(block_stage(level, &x));
            skips.push(x.clone());
            x = self.downs[level].forward(&x)?;
            log(Stage::Downsample { channels: x.dim(1) });
        }
        x = self.bottleneck.forward(&x)?;
        log(block_stage(3, &x));
        for i in 0..LEVELS {
            x = self.ups[i].forward(&x.upsample_nearest2x()?)?;
            log(Stage::Upsample { channels: x.dim(1) });
            let skip = &skips[LEVELS - 1 - i];
            x = self.fuses[i].forward(&Tensor::concat(&[&x, skip], 1)?)?;
            log(Stage::SkipFusion { channels: x.dim(1) });
            x = self.decoders[i].forward(&x)?;
            log(block_stage(4 + i, &x));
        }
        let out = self.head.forward(&x)?;
        log(Stage::Head {
            channels: out.dim(1),
        });
        // tanh mapped onto [0, 1]
        out.tanh()?.shift(1.0)?.scale(0.5)
    }

    pub fn param_count(&self) -> usize {
        Params::param_count(self)
    }
}

/// `M ⊙ out + (1 − M) ⊙ known`, mask 1 = hole.
pub fn composite(out: &Tensor, known: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let keep = mask.neg()?.shift(1.0)?;
    out.mul(mask)?.add(&known.mul(&keep)?)
}

/// Tile origins along one axis: stride `tile − overlap`, last tile flush
/// with the far edge.
pub fn tile_starts(size: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if size <= tile {
        return vec![0];
    }
    let stride = tile - overlap;
    let mut starts: Vec<usize> = (0..)
        .map(|i| i * stride)
        .take_while(|&s| s + tile < size)
        .collect();
    starts.push(size - tile);
    starts.dedup();
    starts
}

/// Per-position feathering weight inside one tile along one axis: linear
/// ramps over the overlap band on sides that border another tile.
pub fn feather(start: usize, tile: usize, size: usize, overlap: usize) -> Vec<f64> {
    let ramp = (overlap + 1) as f64;
    (0..tile)
        .map(|i| {
            let mut w: f64 = 1.0;
            if start > 0 {
                w = w.min((i + 1) as f64 / ramp);
            }
            if start + tile < size {
                w = w.min((tile - i) as f64 / ramp);
            }
            w
        })
        .collect()
}

/// Normalized blend weight of every tile at every pixel, as
/// `(tile_y, tile_x, weights (tile×tile))`, plus the per-pixel raw sums.
pub fn blend_weights(
    h: usize,
    w: usize,
    tile: usize,
    overlap: usize,
) -> (Vec<(usize, usize, Vec<f64>)>, Vec<f64>) {
    let ys = tile_starts(h, tile, overlap);
    let xs = tile_starts(w, tile, overlap);
    let mut total = vec![0.0; h * w];
    let mut raw = Vec::new();
    for &y0 in &ys {
        let wy = feather(y0, tile, h, overlap);
        for &x0 in &xs {
            let wx = feather(x0, tile, w, overlap);
            let mut wt = vec![0.0; tile * tile];
            for i in 0..tile {
                for j in 0..tile {
                    wt[i * tile + j] = wy[i] * wx[j];
                    total[(y0 + i) * w + x0 + j] += wy[i] * wx[j];
                }
            }
            raw.push((y0, x0, wt));
        }
    }
    let tiles = raw
        .into_iter()
        .map(|(y0, x0, mut wt)| {
            for i in 0..tile {
                for j in 0..tile {
                    wt[i * tile + j] /= total[(y0 + i) * w + x0 + j];
                }
            }
            (y0, x0, wt)
        })
        .collect();
    (tiles, total)
}

fn crop(x: &Tensor, y0: usize, x0: usize, tile: usize) -> Result<Tensor> {
    x.slice(2, y0, tile)?.slice(3, x0, tile)
}

/// Inference over overlapping tiles blended with linear feathering.
/// `image` is (3,H,W) masked input, `mask` is (1,H,W). Falls back to one
/// whole-image pass when the image is not larger than a tile.
pub fn tiled_inference(
    model: &MxT,
    image: &Tensor,
    mask: &Tensor,
    tile: usize,
    overlap: usize,
) -> Result<Tensor> {
    if image.rank() != 3 || image.dim(0) != 3 {
        return Err(TensorError::Dimension(format!(
            "image must be (3,H,W), got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.dim(1), image.dim(2));
    if mask.shape() != [1, h, w] {
        return Err(TensorError::Dimension(format!(
            "mask must be (1,{h},{w}), got {:?}",
            mask.shape()
        )));
    }
    if tile == 0 || tile % 8 != 0 || 2 * overlap >= tile {
        return Err(TensorError::Contract(format!(
            "tile must be a positive multiple of 8 and overlap < tile/2 (tile {tile}, overlap {overlap})"
        )));
    }
    let img4 = image.reshape(&[1, 3, h, w])?;
    let mask4 = mask.reshape(&[1, 1, h, w])?;
    if h <= tile && w <= tile {
        return model.predict(&img4, &mask4)?.reshape(&[3, h, w]);
    }
    if h < tile || w < tile {
        return Err(TensorError::Dimension(format!(
            "image {h}x{w} is smaller than tile {tile} along one axis; use a smaller tile"
        )));
    }
    let (tiles, _) = blend_weights(h, w, tile, overlap);
    let mut acc = vec![0.0; 3 * h * w];
    for (y0, x0, wt) in tiles {
        let out = model.predict(&crop(&img4, y0, x0, tile)?, &crop(&mask4, y0, x0, tile)?)?;
        let od = out.data();
        for c in 0..3 {
            for i in 0..tile {
                for j in 0..tile {
                    acc[(c * h + y0 + i) * w + x0 + j] +=
                        wt[i * tile + j] as mxt_tensor::Real * od[(c * tile + i) * tile + j];
                }
            }
        }
    }
    Tensor::new(acc, &[3, h, w])
}
