use std::path::Path;

use mxt_tensor::{Real, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image_io::read_image;
use super::masks::{generate_irregular_mask, MaskBucket, MaskSpec};
use super::sub_seed;
use crate::error::{Error, Result};

#[derive(Clone)]
pub struct ImageSample {
    /// (3,H,W) in [0,1].
    pub i_gt: Tensor,
    /// (1,H,W), 1 = hole.
    pub mask: Tensor,
    pub bucket: MaskBucket,
}

impl ImageSample {
    /// `i_gt ⊙ (1 − M)`.
    pub fn masked(&self) -> Result<Tensor> {
        Ok(self.i_gt.mul(&self.mask.neg()?.shift(1.0)?)?)
    }

    /// Masked image and mask stacked to 4 channels.
    pub fn input(&self) -> Result<Tensor> {
        Ok(Tensor::concat(&[&self.masked()?, &self.mask], 0)?)
    }
}

/// Smooth two-color gradient, a low-amplitude sinusoid, and a few flat
/// rectangles and discs.
pub fn synthetic_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
    let color = |rng: &mut ChaCha8Rng| {
        [
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.1..0.9),
        ]
    };
    let (c0, c1) = (color(rng), color(rng));
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (fy, fx) = (
        rng.gen_range(0.5..3.0) / h as f64,
        rng.gen_range(0.5..3.0) / w as f64,
    );
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let amp = rng.gen_range(0.02..0.08);
    let mut img = vec![0.0f64; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let u = (x as f64 / w as f64 - 0.5) * theta.cos()
                + (y as f64 / h as f64 - 0.5) * theta.sin()
                + 0.5;
            let wave =
                amp * (std::f64::consts::TAU * (fy * y as f64 + fx * x as f64) + phase).sin();
            for c in 0..3 {
                img[(c * h + y) * w + x] = c0[c] + (c1[c] - c0[c]) * u.clamp(0.0, 1.0) + wave;
            }
        }
    }
    for _ in 0..rng.gen_range(1..=3) {
        let col = color(rng);
        let (y0, x0) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let (rh, rw) = (
            rng.gen_range(h / 8..=h / 2).max(1),
            rng.gen_range(w / 8..=w / 2).max(1),
        );
        for y in y0..(y0 + rh).min(h) {
            for x in x0..(x0 + rw).min(w) {
                for c in 0..3 {
                    img[(c * h + y) * w + x] = col[c];
                }
            }
        }
    }
    for _ in 0..rng.gen_range(1..=3) {
        let col = color(rng);
        let (cy, cx) = (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64));
        let r = rng.gen_range(0.08..0.3) * h.min(w) as f64;
        for y in 0..h {
            for x in 0..w {
                if (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r {
                    for c in 0..3 {
                        img[(c * h + y) * w + x] = col[c];
                    }
                }
            }
        }
    }
    let data = img.into_iter().map(|v| v.clamp(0.0, 1.0) as Real).collect();
    Tensor::new(data, &[3, h, w]).expect("image shape")
}

/// `n` procedural images, sample `i` masked with bucket `i mod 3`.
pub fn synthetic_dataset(n: usize, h: usize, w: usize, seed: u64) -> Result<Vec<ImageSample>> {
    if n == 0 {
        return Err(Error::Data("synthetic dataset needs n >= 1".into()));
    }
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, &[1, i as u64]));
            let i_gt = synthetic_image(&mut rng, h, w);
            let bucket = MaskBucket::ALL[i % 3];
            let gm = generate_irregular_mask(
                &MaskSpec::new(bucket, sub_seed(seed, &[2, i as u64])),
                h,
                w,
            )?;
            Ok(ImageSample {
                i_gt,
                mask: gm.mask,
                bucket,
            })
        })
        .collect()
}

/// Every `*.ppm` in `dir` (sorted by name), each paired with a generated
/// mask exactly as in [`synthetic_dataset`]. All images must share one size.
pub fn image_dir_dataset(dir: &Path, seed: u64) -> Result<Vec<ImageSample>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("{}: no .ppm images", dir.display())));
    }
    let mut out: Vec<ImageSample> = Vec::with_capacity(paths.len());
    for (i, p) in paths.iter().enumerate() {
        let i_gt = read_image(p)?;
        if let Some(first) = out.first() {
            if first.i_gt.shape() != i_gt.shape() {
                return Err(Error::Data(format!(
                    "{}: size {:?} differs from {:?}",
                    p.display(),
                    &i_gt.shape()[1..],
                    &first.i_gt.shape()[1..]
                )));
            }
        }
        let (h, w) = (i_gt.dim(1), i_gt.dim(2));
        let bucket = MaskBucket::ALL[i % 3];
        let gm =
            generate_irregular_mask(&MaskSpec::new(bucket, sub_seed(seed, &[2, i as u64])), h, w)?;
        out.push(ImageSample {
            i_gt,
            mask: gm.mask,
            bucket,
        });
    }
    Ok(out)
}

/// Seeded per-epoch shuffling into fixed-size batches; the last partial
/// batch is kept.
#[derive(Debug, Clone)]
pub struct Batcher {
    len: usize,
    batch_size: usize,
    seed: u64,
}

impl Batcher {
    pub const DEFAULT_BATCH: usize = 4;

    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::Data("cannot batch an empty dataset".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(Batcher {
            len,
            batch_size,
            seed,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.len.div_ceil(self.batch_size)
    }

    pub fn epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(
            self.seed,
            &[3, epoch],
        )));
        order
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// Indices of the `step`-th batch counted across epochs.
    pub fn batch_at(&self, step: u64) -> Vec<usize> {
        let per = self.batches_per_epoch() as u64;
        self.epoch(step / per).swap_remove((step % per) as usize)
    }
}

/// Stacks samples into (B,3,H,W) ground truth and (B,1,H,W) masks.
pub fn stack_batch(samples: &[ImageSample], idx: &[usize]) -> Result<(Tensor, Tensor)> {
    let gts: Vec<Tensor> = idx
        .iter()
        .map(|&i| samples[i].i_gt.reshape(&prepend(samples[i].i_gt.shape())))
        .collect::<std::result::Result<_, _>>()?;
    let masks: Vec<Tensor> = idx
        .iter()
        .map(|&i| samples[i].mask.reshape(&prepend(samples[i].mask.shape())))
        .collect::<std::result::Result<_, _>>()?;
    Ok((
        Tensor::concat(&gts.iter().collect::<Vec<_>>(), 0)?,
        Tensor::concat(&masks.iter().collect::<Vec<_>>(), 0)?,
    ))
}

fn prepend(shape: &[usize]) -> Vec<usize> {
    std::iter::once(1).chain(shape.iter().copied()).collect()
}
