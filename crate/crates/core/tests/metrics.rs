//! Oracle tolerances here assume f64 scalars; the f32 build skips them.
#![cfg(not(feature = "f32"))]

use mxt_core::data::{synthetic_dataset, write_image, write_mask, MaskBucket};
use mxt_core::gradsuite::random_tensor;
use mxt_core::losses::l1_loss;
use mxt_core::metrics::{
    evaluate_directories, evaluate_model, l1, psnr, ssim, ImageMetrics, MetricReport, PSNR_CAP,
};
use mxt_core::model::{composite, ModelConfig, MxT};
use mxt_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn img(seed: u64, h: usize, w: usize) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    random_tensor(&mut r, &[3, h, w], 0.5).shift(0.5).unwrap()
}

/// SSIM by explicit 2-D windows at every valid position.
fn ssim_loop(a: &Tensor, b: &Tensor) -> f64 {
    let (c, h, w) = (a.dim(0), a.dim(1), a.dim(2));
    let gray = |t: &Tensor| -> Vec<f64> {
        (0..h * w)
            .map(|i| {
                (0..c)
                    .map(|ch| t.data()[ch * h * w + i] as f64)
                    .sum::<f64>()
                    / c as f64
            })
            .collect()
    };
    let (ga, gb) = (gray(a), gray(b));
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for y in 0..=h - 11 {
        for x in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = win[i][j] / total;
                    let (p, q) = (ga[(y + i) * w + x + j], gb[(y + i) * w + x + j]);
                    ma += wt * p;
                    mb += wt * q;
                    saa += wt * p * p;
                    sbb += wt * q * q;
                    sab += wt * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

#[test]
fn psnr_examples() {
    let a = img(0, 8, 8);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
    let b = a.shift(0.1).unwrap();
    assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-6);
    let z = Tensor::zeros(&[1, 4, 4]);
    let one = Tensor::full(&[1, 4, 4], 1.0);
    assert!((psnr(&z, &one, 255.0).unwrap() - 48.1308036).abs() < 1e-6);
    assert!(psnr(&a, &img(0, 4, 4), 1.0).is_err());
}

#[test]
fn psnr_falls_with_noise_and_is_symmetric() {
    let a = img(1, 16, 16);
    let mut prev = f64::INFINITY;
    for amp in [0.01, 0.05, 0.2] {
        let mut r = ChaCha8Rng::seed_from_u64(99);
        let noisy = a.add(&random_tensor(&mut r, &[3, 16, 16], amp)).unwrap();
        let p = psnr(&a, &noisy, 1.0).unwrap();
        assert_eq!(p, psnr(&noisy, &a, 1.0).unwrap());
        assert!(p < prev);
        prev = p;
    }
}

#[test]
fn ssim_examples() {
    let a = img(2, 16, 20);
    assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
    let b = img(3, 16, 20);
    let s = ssim(&a, &b, 1.0).unwrap();
    assert!((s - ssim_loop(&a, &b)).abs() < 1e-12);
    assert!((s - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-15);

    let binary = Tensor::new(
        (0..3 * 16 * 16)
            .map(|i| if (i / 3) % 2 == 0 { 1.0 } else { 0.0 })
            .collect(),
        &[3, 16, 16],
    )
    .unwrap();
    let inv = binary.neg().unwrap().shift(1.0).unwrap();
    let v = ssim(&binary, &inv, 1.0).unwrap();
    assert!((-1.0..=1.0).contains(&v));

    let c = Tensor::full(&[3, 12, 12], 0.5);
    let d = Tensor::full(&[3, 12, 12], 0.6);
    let lum = (2.0 * 0.5 * 0.6 + 1e-4) / (0.25 + 0.36 + 1e-4);
    assert!((ssim(&c, &d, 1.0).unwrap() - lum).abs() < 1e-12);
    assert!((ssim_loop(&c, &d) - lum).abs() < 1e-12);
    assert!(ssim(&img(4, 10, 16), &img(5, 10, 16), 1.0).is_err());
}

#[test]
fn l1_metric_matches_l1_loss() {
    let (a, b) = (img(6, 8, 8), img(7, 8, 8));
    assert_eq!(
        l1(&a, &b).unwrap(),
        l1_loss(&a, &b).unwrap().item().unwrap() as f64
    );
}

#[test]
fn single_identical_pair() {
    let a = img(8, 16, 16);
    let m = ImageMetrics::compute("x", Some(MaskBucket::Low), &a, &a).unwrap();
    assert_eq!((m.psnr, m.l1), (99.0, 0.0));
    assert!((m.ssim - 1.0).abs() < 1e-12);
}

#[test]
fn model_report_matches_recomputation() {
    let cfg = ModelConfig {
        base_channels: 4,
        hm_counts: [1; 7],
        state_dim: 2,
        pooled_spatial: 2,
        ..Default::default()
    };
    let model = MxT::new(cfg).unwrap();
    let ds = synthetic_dataset(4, 16, 16, 2).unwrap();
    let report = evaluate_model(&model, &ds, true).unwrap();
    assert_eq!(report.images.len(), 4);
    for (m, s) in report.images.iter().zip(&ds) {
        let out = model
            .predict(
                &s.masked().unwrap().reshape(&[1, 3, 16, 16]).unwrap(),
                &s.mask.reshape(&[1, 1, 16, 16]).unwrap(),
            )
            .unwrap()
            .reshape(&[3, 16, 16])
            .unwrap();
        let out = composite(&out, &s.i_gt, &s.mask).unwrap();
        assert_eq!(m.psnr, psnr(&out, &s.i_gt, 1.0).unwrap());
        assert_eq!(m.ssim, ssim(&out, &s.i_gt, 1.0).unwrap());
        assert_eq!(m.l1, l1(&out, &s.i_gt).unwrap());
    }
    let summaries = report.summaries();
    assert_eq!(summaries.len(), 3);
    assert_eq!(summaries[0].count, 2);
    let low: Vec<&ImageMetrics> = report
        .images
        .iter()
        .filter(|m| m.bucket == Some(MaskBucket::Low))
        .collect();
    assert!((summaries[0].psnr - (low[0].psnr + low[1].psnr) / 2.0).abs() < 1e-12);
    let kv = report.render_kv();
    assert_eq!(kv.lines().count(), 4 + 3);
    assert!(kv.lines().all(|l| l.split(' ').all(|f| f.contains('='))));
}

#[test]
fn empty_bucket_row_is_omitted_with_notice() {
    let a = img(9, 16, 16);
    let report = MetricReport {
        images: vec![ImageMetrics::compute("a", Some(MaskBucket::Mid), &a, &a).unwrap()],
        skipped: vec![],
    };
    let table = report.render_table();
    assert!(table.contains("20-40%"));
    assert!(!table.lines().any(|l| l.starts_with("40-60%")));
    assert!(table.contains("note: bucket 40-60% has no images"));
}

#[test]
fn directory_evaluation_skips_missing_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, pred, masks) = (
        dir.path().join("gt"),
        dir.path().join("pred"),
        dir.path().join("masks"),
    );
    for d in [&gt, &pred, &masks] {
        std::fs::create_dir(d).unwrap();
    }
    let ds = synthetic_dataset(3, 16, 16, 4).unwrap();
    for (i, s) in ds.iter().enumerate() {
        write_image(&gt.join(format!("{i}.ppm")), &s.i_gt).unwrap();
        write_mask(&masks.join(format!("{i}.pgm")), &s.mask).unwrap();
        if i != 1 {
            write_image(&pred.join(format!("{i}.ppm")), &s.i_gt).unwrap();
        }
    }
    let report = evaluate_directories(&pred, &gt, Some(&masks)).unwrap();
    assert_eq!(report.images.len(), 2);
    assert_eq!(report.skipped.len(), 1);
    assert!(report.skipped[0].starts_with("1.ppm"));
    assert_eq!(report.images[0].bucket, Some(ds[0].bucket));
    assert_eq!(report.images[1].bucket, Some(ds[2].bucket));
    assert!(report.images.iter().all(|m| m.psnr == 99.0));
}
