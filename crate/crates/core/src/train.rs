//! Run configuration, Adam, and the resumable training loop.

use std::path::{Path, PathBuf};

use mxt_tensor::{Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{assign_params, Checkpoint, MODEL_PREFIX};
use crate::config::{parse_kv, parse_value, KvMap};
use crate::data::{
    image_dir_dataset, stack_batch, sub_seed, synthetic_dataset, Batcher, ImageSample,
};
use crate::error::{Error, Result};
use crate::losses::{
    composite_loss, d_loss, AdversarialKind, FeatureExtractor, LossBreakdown, LossWeights,
    PatchDiscriminator,
};
use crate::model::{composite, ModelConfig, MxT};
use crate::nn::Params;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optim: AdamConfig,
    pub loss: LossWeights,
    pub adversarial_kind: AdversarialKind,
    /// Apply the losses to the composited image instead of the raw output.
    pub loss_on_composite: bool,
    pub extractor_seed: u64,
    pub disc_width: usize,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    /// Save every this many steps (0 = only at the end).
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub data_count: usize,
    pub data_height: usize,
    pub data_width: usize,
    pub data_seed: u64,
    /// Directory of `.ppm` training images; synthetic images when unset.
    pub data_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            optim: AdamConfig::default(),
            loss: LossWeights::default(),
            adversarial_kind: AdversarialKind::NonSaturating,
            loss_on_composite: false,
            extractor_seed: 1234,
            disc_width: 16,
            batch_size: Batcher::DEFAULT_BATCH,
            iterations: 1000,
            seed: 0,
            checkpoint_every: 0,
            log_every: 1,
            data_count: 8,
            data_height: 32,
            data_width: 32,
            data_seed: 0,
            data_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optim;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::Config(format!("optim.lr must be > 0, got {}", o.lr)));
        }
        for (k, b) in [("optim.beta1", o.beta1), ("optim.beta2", o.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{k} must be in [0, 1), got {b}")));
            }
        }
        if !(o.eps > 0.0) {
            return Err(Error::Config(format!(
                "optim.eps must be > 0, got {}",
                o.eps
            )));
        }
        if self.batch_size == 0 || self.data_count == 0 || self.disc_width == 0 {
            return Err(Error::Config(
                "train.batch_size, data.count and loss.disc_width must be >= 1".into(),
            ));
        }
        self.loss.validate()?;
        self.model.validate()?;
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = self.model.to_kv();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("optim.lr", self.optim.lr.to_string());
        put("optim.beta1", self.optim.beta1.to_string());
        put("optim.beta2", self.optim.beta2.to_string());
        put("optim.eps", self.optim.eps.to_string());
        put("loss.l1", self.loss.l1.to_string());
        put("loss.style", self.loss.style.to_string());
        put("loss.perceptual", self.loss.perceptual.to_string());
        put("loss.adversarial", self.loss.adversarial.to_string());
        put(
            "loss.adversarial_kind",
            match self.adversarial_kind {
                AdversarialKind::NonSaturating => "non_saturating",
                AdversarialKind::Hinge => "hinge",
            }
            .into(),
        );
        put("loss.on_composite", self.loss_on_composite.to_string());
        put("loss.extractor_seed", self.extractor_seed.to_string());
        put("loss.disc_width", self.disc_width.to_string());
        put("train.batch_size", self.batch_size.to_string());
        put("train.iterations", self.iterations.to_string());
        put("train.seed", self.seed.to_string());
        put("train.checkpoint_every", self.checkpoint_every.to_string());
        put("train.log_every", self.log_every.to_string());
        put("data.count", self.data_count.to_string());
        put("data.height", self.data_height.to_string());
        put("data.width", self.data_width.to_string());
        put("data.seed", self.data_seed.to_string());
        if let Some(d) = &self.data_dir {
            put("data.dir", d.display().to_string());
        }
        m
    }

    pub fn set_kv(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set_kv(key, value)? {
            return Ok(());
        }
        match key {
            "optim.lr" => self.optim.lr = parse_value(key, value)?,
            "optim.beta1" => self.optim.beta1 = parse_value(key, value)?,
            "optim.beta2" => self.optim.beta2 = parse_value(key, value)?,
            "optim.eps" => self.optim.eps = parse_value(key, value)?,
            "loss.l1" => self.loss.l1 = parse_value(key, value)?,
            "loss.style" => self.loss.style = parse_value(key, value)?,
            "loss.perceptual" => self.loss.perceptual = parse_value(key, value)?,
            "loss.adversarial" => self.loss.adversarial = parse_value(key, value)?,
            "loss.adversarial_kind" => {
                self.adversarial_kind = match value {
                    "non_saturating" => AdversarialKind::NonSaturating,
                    "hinge" => AdversarialKind::Hinge,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected non_saturating|hinge, got `{value}`"
                        )))
                    }
                }
            }
            "loss.on_composite" => self.loss_on_composite = parse_value(key, value)?,
            "loss.extractor_seed" => self.extractor_seed = parse_value(key, value)?,
            "loss.disc_width" => self.disc_width = parse_value(key, value)?,
            "train.batch_size" => self.batch_size = parse_value(key, value)?,
            "train.iterations" => self.iterations = parse_value(key, value)?,
            "train.seed" => self.seed = parse_value(key, value)?,
            "train.checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "train.log_every" => self.log_every = parse_value(key, value)?,
            "data.count" => self.data_count = parse_value(key, value)?,
            "data.height" => self.data_height = parse_value(key, value)?,
            "data.width" => self.data_width = parse_value(key, value)?,
            "data.seed" => self.data_seed = parse_value(key, value)?,
            "data.dir" => self.data_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies every entry of `map` in key order.
    pub fn apply_kv(&mut self, map: &KvMap) -> Result<()> {
        for (k, v) in map {
            self.set_kv(k, v)?;
        }
        Ok(())
    }

    pub fn from_kv(map: &KvMap) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_kv(map)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&parse_kv(&std::fs::read_to_string(path)?)?)
    }
}

/// Adam without weight decay, bias-corrected.
#[derive(Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new<P: Params>(cfg: AdamConfig, params: &P) -> Self {
        let zeros = || {
            params
                .named_params()
                .into_iter()
                .map(|(_, p)| Tensor::zeros(p.shape()))
                .collect()
        };
        Adam {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update from the gradients currently stored on `params`;
    /// parameters without a gradient are treated as having a zero gradient.
    pub fn update<P: Params>(&mut self, params: &mut P) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let (b1, b2) = (beta1 as Real, beta2 as Real);
        let c1 = 1.0 - (beta1.powi(self.step as i32)) as Real;
        let c2 = 1.0 - (beta2.powi(self.step as i32)) as Real;
        for (i, (_, p)) in params.named_params_mut().into_iter().enumerate() {
            let g = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            let mut m = self.m[i].to_vec();
            let mut v = self.v[i].to_vec();
            let mut w = p.to_vec();
            for k in 0..w.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                w[k] -= lr as Real * mh / (vh.sqrt() + eps as Real);
            }
            let shape = p.shape().to_vec();
            self.m[i] = Tensor::new(m, &shape).expect("moment shape");
            self.v[i] = Tensor::new(v, &shape).expect("moment shape");
            *p = Tensor::param(w, &shape).expect("param shape");
        }
    }

    fn export(&self, prefix: &str, names: &[String], out: &mut Vec<(String, Tensor)>) {
        for (n, t) in names.iter().zip(&self.m) {
            out.push((format!("{prefix}.m.{n}"), t.clone()));
        }
        for (n, t) in names.iter().zip(&self.v) {
            out.push((format!("{prefix}.v.{n}"), t.clone()));
        }
    }

    fn import<P: Params>(
        &mut self,
        prefix: &str,
        params: &P,
        ck: &Checkpoint,
        step: u64,
    ) -> Result<()> {
        let names: Vec<String> = params.named_params().into_iter().map(|(n, _)| n).collect();
        let shapes: Vec<Vec<usize>> = self.m.iter().map(|t| t.shape().to_vec()).collect();
        let load = |kind: &str| -> Result<Vec<Tensor>> {
            let mut slots: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
            let pairs: Vec<(String, &mut Tensor)> =
                names.iter().cloned().zip(slots.iter_mut()).collect();
            assign_params(
                pairs,
                ck.with_prefix(&format!("{prefix}.{kind}.")),
                &format!("{prefix}.{kind}"),
            )?;
            Ok(slots)
        };
        self.m = load("m")?;
        self.v = load("v")?;
        self.step = step;
        Ok(())
    }
}

fn zero_grads<P: Params>(p: &P) {
    for (_, t) in p.named_params() {
        t.zero_grad();
    }
}

pub struct Discriminator {
    pub net: PatchDiscriminator,
    pub adam: Adam,
}

/// Everything needed to continue training bit-identically.
pub struct TrainState {
    pub config: RunConfig,
    pub step: u64,
    pub model: MxT,
    pub adam: Adam,
    pub disc: Option<Discriminator>,
    pub extractor: FeatureExtractor,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub step: u64,
    pub losses: LossBreakdown,
    pub d_loss: Option<Real>,
}

impl StepReport {
    /// `step=… term=value …` line for the training log.
    pub fn log_line(&self) -> String {
        let mut s = format!("step={}", self.step);
        for (n, v) in self.losses.terms() {
            s.push_str(&format!(" {n}={v:.8e}"));
        }
        if let Some(d) = self.d_loss {
            s.push_str(&format!(" d_loss={d:.8e}"));
        }
        s.push_str(&format!(" total={:.8e}", self.losses.total));
        s
    }
}

impl TrainState {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let model = MxT::new(config.model.clone())?;
        let adam = Adam::new(config.optim, &model);
        // no discriminator at all when its weight is zero
        let disc = (config.loss.adversarial > 0.0).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, &[4]));
            let net = PatchDiscriminator::new(&mut rng, config.disc_width);
            let adam = Adam::new(config.optim, &net);
            Discriminator { net, adam }
        });
        let extractor = FeatureExtractor::new(config.extractor_seed);
        Ok(TrainState {
            config,
            step: 0,
            model,
            adam,
            disc,
            extractor,
        })
    }

    pub fn dataset(&self) -> Result<Vec<ImageSample>> {
        let c = &self.config;
        match &c.data_dir {
            Some(dir) => image_dir_dataset(dir, c.data_seed),
            None => synthetic_dataset(c.data_count, c.data_height, c.data_width, c.data_seed),
        }
    }

    pub fn batcher(&self, len: usize) -> Result<Batcher> {
        Batcher::new(
            len,
            self.config.batch_size,
            sub_seed(self.config.seed, &[5]),
        )
    }

    /// One discriminator update (when present) followed by one generator update.
    pub fn train_step(&mut self, samples: &[ImageSample], batcher: &Batcher) -> Result<StepReport> {
        let idx = batcher.batch_at(self.step);
        let (gt, mask) = stack_batch(samples, &idx)?;
        let keep = mask.neg()?.shift(1.0)?;
        let masked = gt.mul(&keep)?;
        let out = self.model.forward(&masked, &mask)?;
        let pred = if self.config.loss_on_composite {
            composite(&out, &gt, &mask)?
        } else {
            out
        };

        let mut d_value = None;
        if let Some(d) = self.disc.as_mut() {
            zero_grads(&d.net);
            let dl = d_loss(&d.net, &gt, &pred, self.config.adversarial_kind)?;
            let v = dl.item()?;
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "step {}: discriminator loss is {v}",
                    self.step
                )));
            }
            dl.backward()?;
            d.adam.update(&mut d.net);
            d_value = Some(v);
        }

        zero_grads(&self.model);
        let disc = self
            .disc
            .as_ref()
            .map(|d| (&d.net, self.config.adversarial_kind));
        let (total, losses) = composite_loss(&pred, &gt, &self.config.loss, &self.extractor, disc)?;
        if let Some(term) = losses.non_finite_term() {
            return Err(Error::Numeric(format!(
                "step {}: loss term `{term}` is not finite",
                self.step
            )));
        }
        if !losses.total.is_finite() {
            return Err(Error::Numeric(format!(
                "step {}: total loss is not finite",
                self.step
            )));
        }
        total.backward()?;
        self.adam.update(&mut self.model);
        let report = StepReport {
            step: self.step,
            losses,
            d_loss: d_value,
        };
        self.step += 1;
        Ok(report)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta = self.config.to_kv();
        meta.insert("state.step".into(), self.step.to_string());
        let mut tensors = Vec::new();
        let names: Vec<String> = self
            .model
            .named_params()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        for (n, t) in self.model.named_params() {
            tensors.push((format!("{MODEL_PREFIX}{n}"), t.detach()));
        }
        self.adam.export("adam", &names, &mut tensors);
        if let Some(d) = &self.disc {
            let dnames: Vec<String> = d.net.named_params().into_iter().map(|(n, _)| n).collect();
            for (n, t) in d.net.named_params() {
                tensors.push((format!("disc.{n}"), t.detach()));
            }
            d.adam.export("disc_adam", &dnames, &mut tensors);
        }
        Checkpoint { meta, tensors }
    }

    /// Restores a state saved by [`TrainState::to_checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = RunConfig::from_kv(
            &ck.meta
                .iter()
                .filter(|(k, _)| !k.starts_with("state."))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        )?;
        let step: u64 = parse_value(
            "state.step",
            ck.meta
                .get("state.step")
                .ok_or_else(|| Error::Schema("checkpoint has no training state".into()))?,
        )?;
        let mut st = TrainState::new(config)?;
        st.step = step;
        assign_params(
            st.model.named_params_mut(),
            ck.with_prefix(MODEL_PREFIX),
            "model",
        )?;
        st.adam.import("adam", &st.model, ck, step)?;
        if let Some(d) = st.disc.as_mut() {
            assign_params(d.net.named_params_mut(), ck.with_prefix("disc."), "disc")?;
            d.adam.import("disc_adam", &d.net, ck, step)?;
        }
        let known = |n: &str| {
            [
                "model.",
                "adam.m.",
                "adam.v.",
                "disc.",
                "disc_adam.m.",
                "disc_adam.v.",
            ]
            .iter()
            .any(|p| n.starts_with(p))
        };
        if let Some((n, _)) = ck.tensors.iter().find(|(n, _)| !known(n)) {
            return Err(Error::Schema(format!("unknown tensor `{n}`")));
        }
        Ok(st)
    }

    /// Trains until `config.iterations`, saving to `checkpoint` every
    /// `checkpoint_every` steps and at the end. Log lines go to `log`.
    pub fn run(
        &mut self,
        samples: &[ImageSample],
        checkpoint: Option<&Path>,
        mut log: impl FnMut(&StepReport),
    ) -> Result<()> {
        let batcher = self.batcher(samples.len())?;
        while self.step < self.config.iterations {
            let report = self.train_step(samples, &batcher)?;
            if self.config.log_every > 0
                && (report.step % self.config.log_every == 0 || self.step == self.config.iterations)
            {
                log(&report);
            }
            if let Some(path) = checkpoint {
                let every = self.config.checkpoint_every;
                if every > 0 && self.step % every == 0 && self.step < self.config.iterations {
                    self.to_checkpoint().save(path)?;
                }
            }
        }
        if let Some(path) = checkpoint {
            self.to_checkpoint().save(path)?;
        }
        Ok(())
    }
}

/// Mean absolute error over hole pixels only (all channels), with the model
/// run without gradient tracking.
pub fn masked_region_l1(model: &MxT, samples: &[ImageSample]) -> Result<f64> {
    let (mut acc, mut count) = (0.0f64, 0usize);
    for s in samples {
        let (h, w) = (s.i_gt.dim(1), s.i_gt.dim(2));
        let out = model.predict(
            &s.masked()?.reshape(&[1, 3, h, w])?,
            &s.mask.reshape(&[1, 1, h, w])?,
        )?;
        let (o, g, m) = (out.data(), s.i_gt.data(), s.mask.data());
        for c in 0..3 {
            for p in 0..h * w {
                if m[p] > 0.5 {
                    acc += (o[c * h * w + p] - g[c * h * w + p]).abs() as f64;
                    count += 1;
                }
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { acc / count as f64 })
}

pub fn default_checkpoint_path() -> PathBuf {
    PathBuf::from("mxt.ckpt")
}
