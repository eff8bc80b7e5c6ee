use std::collections::HashMap;

use mxt_core::data::{
    decode_pgm, decode_ppm, encode_pgm, encode_ppm, generate_irregular_mask, hole_ratio, quantize,
    read_image, read_mask, stack_batch, synthetic_dataset, write_image, write_mask, Batcher,
    MaskBucket, MaskSpec, StrokeParams,
};
use mxt_core::Error;
use proptest::prelude::*;

#[test]
fn solid_red_ppm_round_trip() {
    let mut bytes = b"P6\n2 2\n255\n".to_vec();
    for _ in 0..4 {
        bytes.extend_from_slice(&[255, 0, 0]);
    }
    let img = decode_ppm(&bytes).unwrap();
    assert_eq!(img.shape(), [3, 2, 2]);
    assert_eq!(
        img.to_vec(),
        vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
    );
    assert_eq!(encode_ppm(&img).unwrap(), bytes);
}

#[test]
fn quantization_rounds_half_up() {
    assert_eq!(quantize(0.5), 128);
    assert_eq!(quantize(0.0), 0);
    assert_eq!(quantize(1.0), 255);
    assert_eq!(quantize(-0.3), 0);
    assert_eq!(quantize(1.7), 255);
    assert_eq!(quantize(126.5 / 255.0), 127);
}

#[test]
fn header_errors() {
    let err = decode_ppm(b"P6\n2 2\n65535\n").unwrap_err();
    assert!(matches!(err, Error::Unsupported(m) if m.contains("maxval")));
    assert!(matches!(
        decode_ppm(b"P3\n1 1\n255\n"),
        Err(Error::Parse { offset: 0, .. })
    ));
    assert!(matches!(
        decode_ppm(b"P6\n2 x\n255\n"),
        Err(Error::Parse { offset: 5, .. })
    ));
    assert!(matches!(
        decode_ppm(b"P6\n1 1\n255\n\x01"),
        Err(Error::Parse { .. })
    ));
    assert!(
        matches!(decode_ppm(b"\x89PNG\r\n\x1a\n"), Err(Error::Unsupported(m)) if m.contains("PNG"))
    );
    let with_comment = b"P6 # made by hand\n1 1\n255\n\x0a\x14\x1e";
    assert_eq!(decode_ppm(with_comment).unwrap().shape(), [3, 1, 1]);
}

proptest! {
    #[test]
    fn ppm_bytes_round_trip(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let mut s = seed;
        let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
        for _ in 0..3 * h * w {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            bytes.push((s >> 56) as u8);
        }
        prop_assert_eq!(encode_ppm(&decode_ppm(&bytes).unwrap()).unwrap(), bytes);
    }
}

#[test]
fn file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let img = synthetic_dataset(1, 16, 24, 3).unwrap().remove(0);
    let p = dir.path().join("x.ppm");
    write_image(&p, &img.i_gt).unwrap();
    let back = read_image(&p).unwrap();
    assert!(back.max_abs_diff(&img.i_gt) <= 0.5 / 255.0 + 1e-12);
    let m = dir.path().join("m.pgm");
    write_mask(&m, &img.mask).unwrap();
    assert!(read_mask(&m).unwrap().bit_eq(&img.mask));
    let bytes = std::fs::read(&m).unwrap();
    assert!(bytes[bytes.len() - 16 * 24..]
        .iter()
        .all(|&b| b == 0 || b == 255));
    assert_eq!(encode_pgm(&decode_pgm(&bytes).unwrap()).unwrap(), bytes);
    match read_image(&m) {
        Err(Error::Parse { msg, .. }) => assert!(msg.contains("m.pgm")),
        _ => panic!("expected parse error"),
    }
}

#[test]
fn high_bucket_seed_7() {
    let g = generate_irregular_mask(&MaskSpec::new(MaskBucket::High, 7), 64, 64).unwrap();
    let holes = g.mask.data().iter().filter(|&&v| v == 1.0).count();
    let ratio = holes as f64 / 4096.0;
    assert!(ratio > 0.4 && ratio <= 0.6, "{ratio}");
    assert_eq!(ratio, g.ratio);
    assert!(!g.fallback_warning);
    assert!(g.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    let again = generate_irregular_mask(&MaskSpec::new(MaskBucket::High, 7), 64, 64).unwrap();
    assert!(again.mask.bit_eq(&g.mask));
}

#[test]
fn masks_land_in_their_buckets() {
    for bucket in MaskBucket::ALL {
        for seed in 0..30 {
            let g = generate_irregular_mask(&MaskSpec::new(bucket, seed), 32, 48).unwrap();
            assert!(
                bucket.contains(hole_ratio(&g.mask)),
                "{bucket:?} seed {seed}: {}",
                g.ratio
            );
            assert!(!g.fallback_warning);
        }
    }
}

#[test]
fn impossible_bucket_falls_back_with_warning() {
    // one huge segment per stroke overshoots the low bucket every time
    let strokes = StrokeParams {
        vertices: (1, 1),
        width: (1.5, 1.5),
        segment: (1.0, 1.0),
        max_strokes: 10,
    };
    let spec = MaskSpec {
        bucket: MaskBucket::Low,
        seed: 1,
        strokes,
    };
    let g = generate_irregular_mask(&spec, 16, 16).unwrap();
    assert!(g.fallback_warning);
    assert_eq!(g.attempts, 64);
    assert!(generate_irregular_mask(&MaskSpec::new(MaskBucket::Low, 1), 8, 32).is_err());
}

#[test]
fn bucket_names() {
    for b in MaskBucket::ALL {
        assert_eq!(MaskBucket::parse(b.name()), Some(b));
    }
    assert_eq!(MaskBucket::parse("huge"), None);
    assert_eq!(MaskBucket::of_ratio(0.2), Some(MaskBucket::Low));
    assert_eq!(MaskBucket::of_ratio(0.45), Some(MaskBucket::High));
    assert_eq!(MaskBucket::of_ratio(0.00005), None);
}

#[test]
fn synthetic_dataset_contract() {
    let a = synthetic_dataset(8, 32, 32, 11).unwrap();
    let b = synthetic_dataset(8, 32, 32, 11).unwrap();
    assert_eq!(a.len(), 8);
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        assert!(x.i_gt.bit_eq(&y.i_gt) && x.mask.bit_eq(&y.mask));
        assert!(x.i_gt.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(x.bucket, MaskBucket::ALL[i % 3]);
        assert!(x.bucket.contains(hole_ratio(&x.mask)));
        let masked = x.masked().unwrap();
        for (v, m) in masked.data().iter().zip(x.mask.data().iter().cycle()) {
            if *m == 1.0 {
                assert_eq!(*v, 0.0);
            }
        }
        assert_eq!(x.input().unwrap().shape(), [4, 32, 32]);
    }
    assert!(!a[0].i_gt.bit_eq(&a[1].i_gt));
    assert!(synthetic_dataset(0, 32, 32, 0).is_err());
}

#[test]
fn batcher_contract() {
    assert_eq!(Batcher::DEFAULT_BATCH, 4);
    let b = Batcher::new(10, 4, 5).unwrap();
    let e0 = b.epoch(0);
    assert_eq!(e0, b.epoch(0));
    assert_eq!(e0.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
    let mut seen: Vec<usize> = e0.concat();
    seen.sort();
    assert_eq!(seen, (0..10).collect::<Vec<_>>());
    assert_ne!(b.epoch(0), b.epoch(1));
    assert_eq!(b.batch_at(4), b.epoch(1)[1]);
    assert!(Batcher::new(0, 4, 0).is_err());
    assert!(Batcher::new(3, 0, 0).is_err());

    let mut counts: HashMap<usize, usize> = HashMap::new();
    for step in 0..30 {
        for i in b.batch_at(step) {
            *counts.entry(i).or_default() += 1;
        }
    }
    assert!(counts.values().all(|&c| c == 10));
}

#[test]
fn stacking_batches() {
    let ds = synthetic_dataset(3, 16, 16, 1).unwrap();
    let (gt, mask) = stack_batch(&ds, &[2, 0]).unwrap();
    assert_eq!(gt.shape(), [2, 3, 16, 16]);
    assert_eq!(mask.shape(), [2, 1, 16, 16]);
    let first = gt.slice(0, 0, 1).unwrap().reshape(&[3, 16, 16]).unwrap();
    assert!(first.bit_eq(&ds[2].i_gt));
}

#[test]
fn image_directory_dataset_reads_sorted_ppms() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synthetic_dataset(3, 16, 24, 5).unwrap();
    for (name, s) in ["b.ppm", "a.ppm", "c.ppm"].iter().zip(&ds) {
        write_image(&dir.path().join(name), &s.i_gt).unwrap();
    }
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let loaded = mxt_core::data::image_dir_dataset(dir.path(), 0).unwrap();
    assert_eq!(loaded.len(), 3);
    // a.ppm holds the second synthetic image
    assert_eq!(
        loaded[0].i_gt.to_vec(),
        read_image(&dir.path().join("a.ppm")).unwrap().to_vec()
    );
    for s in &loaded {
        assert_eq!(s.mask.shape(), [1, 16, 24]);
    }
    assert_eq!(
        loaded.iter().map(|s| s.bucket).collect::<Vec<_>>(),
        MaskBucket::ALL.to_vec()
    );

    write_image(
        &dir.path().join("d.ppm"),
        &synthetic_dataset(1, 16, 16, 0).unwrap()[0].i_gt,
    )
    .unwrap();
    assert!(matches!(
        mxt_core::data::image_dir_dataset(dir.path(), 0),
        Err(Error::Data(_))
    ));
    assert!(matches!(
        mxt_core::data::image_dir_dataset(tempfile::tempdir().unwrap().path(), 0),
        Err(Error::Data(_))
    ));
}
