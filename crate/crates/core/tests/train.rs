use mxt_core::checkpoint::Checkpoint;
use mxt_core::config::parse_kv;
use mxt_core::losses::LossWeights;
use mxt_core::model::ModelConfig;
use mxt_core::nn::Params;
use mxt_core::tensor::{Real, Tensor};
use mxt_core::train::{Adam, AdamConfig, RunConfig, TrainState};
use mxt_core::Error;

fn tiny(adversarial: f64) -> RunConfig {
    RunConfig {
        model: ModelConfig {
            base_channels: 8,
            hm_counts: [1; 7],
            state_dim: 4,
            pooled_spatial: 4,
            ..Default::default()
        },
        loss: LossWeights {
            adversarial,
            ..Default::default()
        },
        batch_size: 2,
        data_count: 3,
        data_height: 16,
        data_width: 16,
        iterations: 4,
        ..Default::default()
    }
}

fn param_bits<P: Params>(p: &P) -> Vec<(String, Vec<u64>)> {
    p.named_params()
        .into_iter()
        .map(|(n, t)| (n, t.data().iter().map(|v| (*v as f64).to_bits()).collect()))
        .collect()
}

#[test]
fn optimizer_defaults() {
    let a = AdamConfig::default();
    assert_eq!((a.lr, a.beta1, a.beta2, a.eps), (1e-4, 0.9, 0.999, 1e-8));
    let r = RunConfig::default();
    assert_eq!(r.batch_size, 4);
    assert_eq!(
        r.loss,
        LossWeights {
            l1: 1.0,
            style: 250.0,
            perceptual: 0.1,
            adversarial: 0.001
        }
    );
}

#[test]
fn adam_matches_hand_computed_steps() {
    let cfg = AdamConfig {
        lr: 0.1,
        ..Default::default()
    };
    let mut p = Tensor::param(vec![1.0, -2.0], &[2]).unwrap();
    let mut adam = Adam::new(cfg, &p);
    let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
    let mut w = [1.0f64, -2.0];
    for t in 1..=3 {
        // loss = sum(w^3) -> grad 3 w^2
        p.zero_grad();
        p.square()
            .unwrap()
            .mul(&p)
            .unwrap()
            .sum_all()
            .unwrap()
            .backward()
            .unwrap();
        adam.update(&mut p);
        for k in 0..2 {
            let g = 3.0 * w[k] * w[k];
            m[k] = 0.9 * m[k] + 0.1 * g;
            v[k] = 0.999 * v[k] + 0.001 * g * g;
            let mh = m[k] / (1.0 - 0.9f64.powi(t));
            let vh = v[k] / (1.0 - 0.999f64.powi(t));
            w[k] -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        for k in 0..2 {
            assert!(
                (p.data()[k] as f64 - w[k]).abs() < 1e-12,
                "step {t}: {:?} vs {w:?}",
                p.data()
            );
        }
    }
}

#[test]
fn zero_adversarial_weight_builds_no_discriminator() {
    let st = TrainState::new(tiny(0.0)).unwrap();
    assert!(st.disc.is_none());
    let ck = st.to_checkpoint();
    assert!(ck.tensors.iter().all(|(n, _)| !n.starts_with("disc")));
    assert!(TrainState::new(tiny(0.001)).unwrap().disc.is_some());
}

#[test]
fn resumed_training_is_bit_identical() {
    let mut cfg = tiny(0.001);
    cfg.iterations = 100;
    let mut a = TrainState::new(cfg).unwrap();
    let ds = a.dataset().unwrap();
    let batcher = a.batcher(ds.len()).unwrap();
    for _ in 0..3 {
        a.train_step(&ds, &batcher).unwrap();
    }
    let bytes = a.to_checkpoint().to_bytes().unwrap();
    let mut b = TrainState::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(b.step, 3);
    for _ in 0..10 {
        let ra = a.train_step(&ds, &batcher).unwrap();
        let rb = b.train_step(&ds, &batcher).unwrap();
        assert_eq!(ra.log_line(), rb.log_line());
        assert_eq!(ra.losses.total.to_bits(), rb.losses.total.to_bits());
    }
    assert_eq!(param_bits(&a.model), param_bits(&b.model));
    assert_eq!(
        param_bits(&a.disc.as_ref().unwrap().net),
        param_bits(&b.disc.as_ref().unwrap().net)
    );
    assert_eq!(
        a.to_checkpoint().to_bytes().unwrap(),
        b.to_checkpoint().to_bytes().unwrap()
    );
}

#[test]
fn run_writes_periodic_and_final_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let mut cfg = tiny(0.0);
    cfg.iterations = 3;
    cfg.checkpoint_every = 2;
    let mut st = TrainState::new(cfg).unwrap();
    let ds = st.dataset().unwrap();
    let mut lines = Vec::new();
    st.run(&ds, Some(&path), |r| lines.push(r.log_line()))
        .unwrap();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("step=0 l1="));
    let back = TrainState::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back.step, 3);
}

#[test]
fn non_finite_loss_aborts_and_keeps_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let mut cfg = tiny(0.0);
    cfg.iterations = 2;
    let mut st = TrainState::new(cfg).unwrap();
    let ds = st.dataset().unwrap();
    st.run(&ds, Some(&path), |_| {}).unwrap();
    let good = std::fs::read(&path).unwrap();

    // poison the output layer so every output pixel is NaN
    let bias = st.model.head.bias.as_mut().unwrap();
    let n = bias.numel();
    *bias = Tensor::param(vec![Real::NAN; n], &[n]).unwrap();
    st.config.iterations = 5;
    st.config.checkpoint_every = 1;
    let err = st.run(&ds, Some(&path), |_| {}).unwrap_err();
    assert!(err.is_numeric(), "{err}");
    assert!(err.to_string().contains("`l1`"), "{err}");
    assert_eq!(std::fs::read(&path).unwrap(), good);
    assert_eq!(
        TrainState::from_checkpoint(&Checkpoint::load(&path).unwrap())
            .unwrap()
            .step,
        2
    );
}

#[test]
fn config_round_trips_and_later_values_win() {
    let mut cfg = tiny(0.5);
    cfg.optim.lr = 3e-4;
    cfg.seed = 99;
    assert_eq!(RunConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);

    let file = parse_kv("train.seed = 1\noptim.lr = 0.01\nmodel.base_channels = 32\n").unwrap();
    let mut c = RunConfig::from_kv(&file).unwrap();
    assert_eq!((c.seed, c.optim.lr, c.model.base_channels), (1, 0.01, 32));
    // flags are applied on top of the file
    c.set_kv("train.seed", "7").unwrap();
    assert_eq!((c.seed, c.optim.lr), (7, 0.01));
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(matches!(
        RunConfig::from_kv(&parse_kv("optim.bogus = 1").unwrap()),
        Err(Error::Config(_))
    ));
    let mut c = RunConfig::default();
    c.optim.lr = 0.0;
    assert!(c.validate().is_err());
    c.optim.lr = 1e-4;
    c.optim.beta2 = 1.0;
    assert!(c.validate().is_err());
    assert!(matches!(
        RunConfig::from_kv(&parse_kv("loss.adversarial_kind = wasserstein").unwrap()),
        Err(Error::Config(_))
    ));
}
