//! PSNR, SSIM and L1 with per-bucket aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use mxt_tensor::Tensor;

use crate::data::{read_image, read_mask, ImageSample, MaskBucket};
use crate::error::{Error, Result};
use crate::model::{composite, MxT};

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Tensor(mxt_tensor::TensorError::Dimension(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        ))));
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b, "mse")?;
    let n = a.numel().max(1) as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        / n)
}

/// `10·log10(max² / MSE)`; zero MSE gives [`PSNR_CAP`].
pub fn psnr(a: &Tensor, b: &Tensor, max_val: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (max_val * max_val / m).log10()).min(PSNR_CAP))
}

pub fn l1(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b, "l1")?;
    let n = a.numel().max(1) as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .sum::<f64>()
        / n)
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Channel mean of a (C,H,W) image.
fn grayscale(x: &Tensor) -> Result<(Vec<f64>, usize, usize)> {
    if x.rank() != 3 {
        return Err(Error::Data(format!(
            "SSIM expects (C,H,W), got {:?}",
            x.shape()
        )));
    }
    let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
    let d = x.data();
    let mut g = vec![0.0; h * w];
    for ch in 0..c {
        for (i, v) in g.iter_mut().enumerate() {
            *v += d[ch * h * w + i] as f64;
        }
    }
    g.iter_mut().for_each(|v| *v /= c as f64);
    Ok((g, h, w))
}

/// Separable Gaussian filtering over valid positions only.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean single-scale SSIM of the channel-mean images, 11×11 Gaussian
/// window (σ = 1.5), C1 = (0.01·max)², C2 = (0.03·max)².
pub fn ssim(a: &Tensor, b: &Tensor, max_val: f64) -> Result<f64> {
    same_shape(a, b, "ssim")?;
    let (ga, h, w) = grayscale(a)?;
    let (gb, _, _) = grayscale(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Tensor(mxt_tensor::TensorError::Contract(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        ))));
    }
    let k = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let (c1, c2) = ((0.01 * max_val).powi(2), (0.03 * max_val).powi(2));
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(&ga, h, w, &k);
    let mu_b = filter_valid(&gb, h, w, &k);
    let e_aa = filter_valid(&prod(&ga, &ga), h, w, &k);
    let e_bb = filter_valid(&prod(&gb, &gb), h, w, &k);
    let e_ab = filter_valid(&prod(&ga, &gb), h, w, &k);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok((total / n as f64).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub name: String,
    pub bucket: Option<MaskBucket>,
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
}

impl ImageMetrics {
    pub fn compute(
        name: impl Into<String>,
        bucket: Option<MaskBucket>,
        out: &Tensor,
        gt: &Tensor,
    ) -> Result<Self> {
        Ok(ImageMetrics {
            name: name.into(),
            bucket,
            psnr: psnr(out, gt, 1.0)?,
            ssim: ssim(out, gt, 1.0)?,
            l1: l1(out, gt)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketSummary {
    pub bucket: MaskBucket,
    pub count: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
    pub skipped: Vec<String>,
}

impl MetricReport {
    /// Mean metrics per bucket in bucket order; empty buckets are absent.
    pub fn summaries(&self) -> Vec<BucketSummary> {
        let mut groups: BTreeMap<MaskBucket, Vec<&ImageMetrics>> = BTreeMap::new();
        for m in &self.images {
            if let Some(b) = m.bucket {
                groups.entry(b).or_default().push(m);
            }
        }
        groups
            .into_iter()
            .map(|(bucket, ms)| {
                let n = ms.len() as f64;
                BucketSummary {
                    bucket,
                    count: ms.len(),
                    psnr: ms.iter().map(|m| m.psnr).sum::<f64>() / n,
                    ssim: ms.iter().map(|m| m.ssim).sum::<f64>() / n,
                    l1: ms.iter().map(|m| m.l1).sum::<f64>() / n,
                }
            })
            .collect()
    }

    pub fn empty_buckets(&self) -> Vec<MaskBucket> {
        let present: Vec<MaskBucket> = self.summaries().iter().map(|s| s.bucket).collect();
        MaskBucket::ALL
            .into_iter()
            .filter(|b| !present.contains(b))
            .collect()
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>6} {:>10} {:>8} {:>10} {:>10}",
            "bucket", "images", "psnr_db", "ssim", "l1", "l1_x100"
        );
        for r in self.summaries() {
            let _ = writeln!(
                s,
                "{:<10} {:>6} {:>10.4} {:>8.4} {:>10.6} {:>10.4}",
                r.bucket.label(),
                r.count,
                r.psnr,
                r.ssim,
                r.l1,
                100.0 * r.l1
            );
        }
        for b in self.empty_buckets() {
            let _ = writeln!(s, "note: bucket {} has no images; row omitted", b.label());
        }
        for name in &self.skipped {
            let _ = writeln!(s, "warning: skipped {name}");
        }
        s
    }

    pub fn render_kv(&self) -> String {
        let mut s = String::new();
        for m in &self.images {
            let bucket = m.bucket.map(|b| b.name()).unwrap_or("none");
            let _ = writeln!(
                s,
                "image={} bucket={bucket} psnr={:.6} ssim={:.6} l1={:.8} l1_x100={:.6}",
                m.name,
                m.psnr,
                m.ssim,
                m.l1,
                100.0 * m.l1
            );
        }
        for r in self.summaries() {
            let _ = writeln!(
                s,
                "bucket={} images={} psnr={:.6} ssim={:.6} l1={:.8} l1_x100={:.6}",
                r.bucket.name(),
                r.count,
                r.psnr,
                r.ssim,
                r.l1,
                100.0 * r.l1
            );
        }
        s
    }
}

/// Runs `model` on every sample and scores the composited (or raw) output.
pub fn evaluate_model(
    model: &MxT,
    samples: &[ImageSample],
    composited: bool,
) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    for (i, s) in samples.iter().enumerate() {
        let (h, w) = (s.i_gt.dim(1), s.i_gt.dim(2));
        let out = model
            .predict(
                &s.masked()?.reshape(&[1, 3, h, w])?,
                &s.mask.reshape(&[1, 1, h, w])?,
            )?
            .reshape(&[3, h, w])?;
        let out = if composited {
            composite(&out, &s.i_gt, &s.mask)?
        } else {
            out
        };
        report.images.push(ImageMetrics::compute(
            format!("sample{i:04}"),
            Some(s.bucket),
            &out,
            &s.i_gt,
        )?);
    }
    Ok(report)
}

/// Scores every `*.ppm` in `gt_dir` against the same file name in
/// `pred_dir`. The bucket comes from `<stem>.pgm` in `mask_dir` when given.
/// Missing or unreadable pairs are listed in `skipped`.
pub fn evaluate_directories(
    pred_dir: &Path,
    gt_dir: &Path,
    mask_dir: Option<&Path>,
) -> Result<MetricReport> {
    let mut names: Vec<String> = std::fs::read_dir(gt_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".ppm"))
        .collect();
    names.sort();
    let mut report = MetricReport::default();
    for name in names {
        let pred_path = pred_dir.join(&name);
        if !pred_path.exists() {
            log::warn!("no prediction for {name}; skipped");
            report.skipped.push(format!("{name} (no prediction)"));
            continue;
        }
        let scored = (|| -> Result<ImageMetrics> {
            let gt = read_image(&gt_dir.join(&name))?;
            let pred = read_image(&pred_path)?;
            let bucket = match mask_dir {
                Some(d) => {
                    let stem = name.trim_end_matches(".ppm");
                    let mask = read_mask(&d.join(format!("{stem}.pgm")))?;
                    MaskBucket::of_ratio(crate::data::hole_ratio(&mask))
                }
                None => None,
            };
            ImageMetrics::compute(name.clone(), bucket, &pred, &gt)
        })();
        match scored {
            Ok(m) => report.images.push(m),
            Err(e) => {
                log::warn!("{name}: {e}; skipped");
                report.skipped.push(format!("{name} ({e})"));
            }
        }
    }
    Ok(report)
}
