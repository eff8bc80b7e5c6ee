use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mxt_core::checkpoint::model_checkpoint;
use mxt_core::data::{decode_pgm, encode_pgm, encode_ppm, synthetic_image};
use mxt_core::model::{ModelConfig, MxT};
use mxt_core::tensor::{Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mxt() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mxt"));
    c.env_remove("MXT_SEED").env_remove("RUST_LOG");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn mxt")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: [&str; 16] = [
    "--set",
    "model.base_channels=8",
    "--set",
    "model.hm_counts=1,1,1,1,1,1,1",
    "--set",
    "model.state_dim=4",
    "--set",
    "model.pooled_spatial=4",
    "--set",
    "data.count=2",
    "--set",
    "data.height=16",
    "--set",
    "data.width=16",
    "--set",
    "train.batch_size=2",
];

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    /// Untrained tiny model, a 32x32 image and a mask with one square hole.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let model = MxT::new(ModelConfig {
            base_channels: 8,
            hm_counts: [1; 7],
            state_dim: 4,
            pooled_spatial: 4,
            ..Default::default()
        })
        .unwrap();
        model_checkpoint(&model)
            .save(&dir.path().join("model.ckpt"))
            .unwrap();
        let img = synthetic_image(&mut ChaCha8Rng::seed_from_u64(3), 32, 32);
        std::fs::write(dir.path().join("img.ppm"), encode_ppm(&img).unwrap()).unwrap();
        let hole: Vec<Real> = (0..32 * 32)
            .map(|i| {
                if (8..20).contains(&(i / 32)) && (8..20).contains(&(i % 32)) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        write_pgm(&dir.path().join("hole.pgm"), hole);
        write_pgm(&dir.path().join("zero.pgm"), vec![0.0; 32 * 32]);
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn infer(&self, mask: &str, out: &str, extra: &[&str]) -> Output {
        let mut c = mxt();
        c.arg("infer")
            .arg("--checkpoint")
            .arg(self.path("model.ckpt"))
            .arg("--image")
            .arg(self.path("img.ppm"));
        c.arg("--mask")
            .arg(self.path(mask))
            .arg("--out")
            .arg(self.path(out))
            .args(extra);
        run(&mut c)
    }
}

fn write_pgm(path: &Path, v: Vec<Real>) {
    let t = Tensor::new(v, &[1, 32, 32]).unwrap();
    std::fs::write(path, encode_pgm(&t).unwrap()).unwrap();
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&mut mxt()).status.code(), Some(1));
    assert_eq!(run(mxt().arg("frobnicate")).status.code(), Some(1));
    assert_eq!(
        run(mxt().args(["mask-gen", "--bucket", "huge", "--out-dir", "/tmp/never"]))
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        run(mxt().args(["train", "--set", "no-equals-sign"]))
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        run(mxt().args(["train", "--set", "optim.bogus=1"]))
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        run(mxt().args(["gradcheck", "--scope", "no_such_suite"]))
            .status
            .code(),
        Some(1)
    );
    let bad_env = run(mxt().env("MXT_SEED", "abc").args([
        "mask-gen",
        "--bucket",
        "low",
        "--out-dir",
        "/tmp/never",
    ]));
    assert_eq!(bad_env.status.code(), Some(1));
    assert!(stderr(&bad_env).contains("MXT_SEED"));
    assert_eq!(run(mxt().arg("--help")).status.code(), Some(0));
}

#[test]
fn data_errors_exit_with_two() {
    let fx = Fixture::new();
    std::fs::write(fx.path("junk.ppm"), b"P6\n2 2\n255\n\x01").unwrap();
    let mut c = mxt();
    c.arg("infer")
        .arg("--checkpoint")
        .arg(fx.path("model.ckpt"))
        .arg("--image")
        .arg(fx.path("junk.ppm"));
    c.arg("--mask")
        .arg(fx.path("zero.pgm"))
        .arg("--out")
        .arg(fx.path("o.ppm"));
    assert_eq!(run(&mut c).status.code(), Some(2));
    assert_eq!(fx.infer("missing.pgm", "o.ppm", &[]).status.code(), Some(2));
    std::fs::write(fx.path("model.ckpt"), b"not a checkpoint").unwrap();
    assert_eq!(fx.infer("zero.pgm", "o.ppm", &[]).status.code(), Some(2));
}

#[test]
fn gradcheck_reports_pass_and_fail() {
    if !mxt_core::tensor::WIDEST {
        let refused = run(mxt().args(["gradcheck", "--scope", "cbfn"]));
        assert_eq!(refused.status.code(), Some(1));
        assert!(stderr(&refused).contains("f64 build"));
        return;
    }
    let ok = run(mxt().args(["gradcheck", "--scope", "cbfn"]));
    assert!(ok.status.success(), "{}", stderr(&ok));
    assert!(stdout(&ok)
        .lines()
        .any(|l| l.starts_with("cbfn") && l.ends_with("PASS")));
    let bad = run(mxt().args(["gradcheck", "--scope", "corrupted_fixture"]));
    assert_eq!(bad.status.code(), Some(3));
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn mask_gen_is_deterministic_and_manifest_matches_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |sub: &str, env: Option<&str>, extra: &[&str]| {
        let mut c = mxt();
        c.args([
            "mask-gen",
            "--bucket",
            "mid",
            "--count",
            "4",
            "--size",
            "48x64",
            "--out-dir",
        ])
        .arg(dir.path().join(sub));
        c.args(extra);
        if let Some(s) = env {
            c.env("MXT_SEED", s);
        }
        let o = run(&mut c);
        assert!(o.status.success(), "{}", stderr(&o));
        dir.path().join(sub)
    };
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    let a = gen("a", None, &[]);
    let b = gen("b", None, &[]);
    let env = gen("env", Some("5"), &[]);
    let flag = gen("flag", Some("9"), &["--seed", "5"]);
    assert_eq!(read(&a, "manifest.txt"), read(&b, "manifest.txt"));
    assert_ne!(read(&a, "mask_0000.pgm"), read(&env, "mask_0000.pgm"));
    assert_eq!(read(&env, "mask_0000.pgm"), read(&flag, "mask_0000.pgm"));

    let manifest = String::from_utf8(read(&a, "manifest.txt")).unwrap();
    let rows: Vec<&str> = manifest.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let f: Vec<&str> = row.split_whitespace().collect();
        let mask = decode_pgm(&read(&a, f[0])).unwrap();
        assert_eq!(mask.shape(), [1, 48, 64]);
        let recount = mask.data().iter().filter(|v| **v > 0.5).count() as f64 / (48.0 * 64.0);
        let listed: f64 = f[1].parse().unwrap();
        assert!((listed - recount).abs() < 1e-6, "{row}: recount {recount}");
        assert!((0.2..0.4).contains(&recount) || f[3] == "true", "{row}");
    }
}

#[test]
fn infer_zero_mask_returns_input_bytes() {
    let fx = Fixture::new();
    let o = fx.infer("zero.pgm", "out.ppm", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(fx.path("out.ppm")).unwrap(),
        std::fs::read(fx.path("img.ppm")).unwrap()
    );
    let line = stdout(&o);
    assert!(
        line.starts_with("inpainted 32x32 in ") && line.contains(" ms -> "),
        "{line}"
    );
}

#[test]
fn infer_is_deterministic_and_composites_by_default() {
    let fx = Fixture::new();
    for (out, extra) in [
        ("a.ppm", &[][..]),
        ("b.ppm", &[][..]),
        ("raw.ppm", &["--raw"][..]),
    ] {
        let o = fx.infer("hole.pgm", out, extra);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (a, b, raw) = (
        std::fs::read(fx.path("a.ppm")).unwrap(),
        std::fs::read(fx.path("b.ppm")).unwrap(),
        std::fs::read(fx.path("raw.ppm")).unwrap(),
    );
    let input = std::fs::read(fx.path("img.ppm")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, raw);
    // header is identical, pixels outside the hole come from the input
    let header = input.len() - 32 * 32 * 3;
    let mut inside_changed = false;
    for p in 0..32 * 32 {
        let hole = (8..20).contains(&(p / 32)) && (8..20).contains(&(p % 32));
        let span = header + 3 * p..header + 3 * p + 3;
        if hole {
            inside_changed |= a[span.clone()] != input[span.clone()];
            assert_eq!(a[span.clone()], raw[span]);
        } else {
            assert_eq!(a[span.clone()], input[span]);
        }
    }
    assert!(inside_changed);
}

#[test]
fn tiled_inference_writes_full_size_output() {
    let fx = Fixture::new();
    let o = fx.infer("hole.pgm", "tiled.ppm", &["--tile", "16", "--overlap", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("(tiles of 16)"));
    let img = mxt_core::data::decode_ppm(&std::fs::read(fx.path("tiled.ppm")).unwrap()).unwrap();
    assert_eq!(img.shape(), [3, 32, 32]);
    assert_eq!(
        fx.infer("hole.pgm", "bad.ppm", &["--tile", "12"])
            .status
            .code(),
        Some(1)
    );
}

fn echoed(o: &Output, key: &str) -> String {
    let err = stderr(o);
    let prefix = format!("  {key} = ");
    err.lines()
        .find_map(|l| l.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("{key} not echoed:\n{err}"))
        .to_string()
}

#[test]
fn config_precedence_file_env_set_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "train.seed = 1\noptim.lr = 0.01\ntrain.iterations = 1\n",
    )
    .unwrap();
    let train = |env: Option<&str>, extra: &[&str], flags: &[&str]| {
        let mut c = mxt();
        c.arg("--config").arg(&cfg).args(TINY).args(extra);
        c.arg("train")
            .arg("--checkpoint")
            .arg(dir.path().join("c.ckpt"))
            .args(flags);
        if let Some(s) = env {
            c.env("MXT_SEED", s);
        }
        let o = run(&mut c);
        assert!(o.status.success(), "{}", stderr(&o));
        o
    };
    let o = train(None, &[], &[]);
    assert_eq!(
        (echoed(&o, "train.seed"), echoed(&o, "optim.lr")),
        ("1".into(), "0.01".into())
    );
    let o = train(Some("2"), &[], &[]);
    assert_eq!(
        (echoed(&o, "train.seed"), echoed(&o, "model.seed")),
        ("2".into(), "2".into())
    );
    let o = train(Some("2"), &["--set", "train.seed=3"], &[]);
    assert_eq!(echoed(&o, "train.seed"), "3");
    let o = train(
        Some("2"),
        &["--set", "train.seed=3", "--set", "optim.lr=0.02"],
        &["--seed", "4"],
    );
    assert_eq!(echoed(&o, "optim.lr"), "0.02");
    assert_eq!(echoed(&o, "train.seed"), "4");
    assert!(stdout(&o).contains("trained to step 1"));
}

#[test]
fn resumed_cli_training_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let train = |ckpt: &str, iters: &str, resume: bool| {
        let mut c = mxt();
        c.args(TINY)
            .args(["train", "--iterations", iters, "--checkpoint"])
            .arg(dir.path().join(ckpt));
        if resume {
            c.arg("--resume");
        }
        let o = run(&mut c);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
            .lines()
            .filter(|l| l.starts_with("step="))
            .map(String::from)
            .collect::<Vec<_>>()
    };
    let full = train("full.ckpt", "4", false);
    train("part.ckpt", "2", false);
    let tail = train("part.ckpt", "4", true);
    assert_eq!(full[2..], tail[..]);
    assert_eq!(
        std::fs::read(dir.path().join("full.ckpt")).unwrap(),
        std::fs::read(dir.path().join("part.ckpt")).unwrap()
    );
}

#[test]
fn eval_identical_directories_hits_the_caps() {
    let fx = Fixture::new();
    let (pred, gt, masks) = (fx.path("pred"), fx.path("gt"), fx.path("masks"));
    for d in [&pred, &gt, &masks] {
        std::fs::create_dir(d).unwrap();
    }
    let img = std::fs::read(fx.path("img.ppm")).unwrap();
    std::fs::write(pred.join("x.ppm"), &img).unwrap();
    std::fs::write(gt.join("x.ppm"), &img).unwrap();
    std::fs::copy(fx.path("hole.pgm"), masks.join("x.pgm")).unwrap();
    let mut c = mxt();
    c.arg("eval")
        .arg("--pred")
        .arg(&pred)
        .arg("--gt")
        .arg(&gt)
        .arg("--masks")
        .arg(&masks)
        .arg("--kv");
    let o = run(&mut c);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    // a 12x12 hole in 32x32 is 14% of the image
    assert!(
        out.contains("image=x.ppm bucket=low psnr=99.000000 ssim=1.000000 l1=0.00000000"),
        "{out}"
    );

    let table = run(mxt()
        .arg("eval")
        .arg("--pred")
        .arg(&pred)
        .arg("--gt")
        .arg(&gt));
    assert!(stdout(&table).starts_with("bucket"), "{}", stdout(&table));
}

#[test]
fn eval_checkpoint_on_synthetic_images() {
    let fx = Fixture::new();
    let mut c = mxt();
    c.arg("eval")
        .arg("--checkpoint")
        .arg(fx.path("model.ckpt"))
        .args(["--count", "3", "--size", "16", "--kv"]);
    let o = run(&mut c);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        stdout(&o)
            .lines()
            .filter(|l| l.starts_with("image="))
            .count(),
        3
    );
}

#[test]
fn scan_bench_prints_table_and_ratios() {
    let o = run(mxt().args([
        "scan-bench",
        "--lens",
        "64,128",
        "--states",
        "4",
        "--chunks",
        "16",
        "--repeats",
        "1",
        "--channels",
        "2",
    ]));
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0]
        .split_whitespace()
        .eq(["L", "N", "chunk", "ms/iter", "best"]));
    assert_eq!(
        lines
            .iter()
            .filter(|l| l.split_whitespace().nth(2) == Some("sequential"))
            .count(),
        2
    );
    assert!(out.contains("sequential N=4: t(L=128)/t(L=64) = "));
    assert_eq!(
        run(mxt().args(["scan-bench", "--lens", "0"])).status.code(),
        Some(1)
    );
}
