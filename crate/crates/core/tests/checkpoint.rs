use mxt_core::checkpoint::{load_model, model_checkpoint, Checkpoint, MAGIC, VERSION};
use mxt_core::config::{parse_kv, render_kv};
use mxt_core::model::{FfnKind, ModelConfig, MxT};
use mxt_core::nn::Params;
use mxt_core::Error;
use mxt_tensor::Tensor;

fn tiny() -> ModelConfig {
    ModelConfig {
        base_channels: 4,
        hm_counts: [1; 7],
        state_dim: 2,
        pooled_spatial: 2,
        seed: 9,
        ..Default::default()
    }
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let model = MxT::new(tiny()).unwrap();
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    model_checkpoint(&model).save(&p1).unwrap();
    let (loaded, notices) = load_model(&Checkpoint::load(&p1).unwrap(), None).unwrap();
    assert!(notices.is_empty());
    assert_eq!(loaded.config, model.config);
    for ((n1, a), (n2, b)) in model.named_params().into_iter().zip(loaded.named_params()) {
        assert_eq!(n1, n2);
        assert!(a.bit_eq(b), "{n1}");
    }
    model_checkpoint(&loaded).save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn truncated_or_modified_file_is_corrupt() {
    let bytes = model_checkpoint(&MxT::new(tiny()).unwrap())
        .to_bytes()
        .unwrap();
    for cut in [bytes.len() - 1, bytes.len() / 2, 20, 13] {
        assert!(
            matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::Corrupt(_))
            ),
            "cut {cut}"
        );
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 0x10;
    assert!(matches!(
        Checkpoint::from_bytes(&flipped),
        Err(Error::Corrupt(_))
    ));
    assert!(matches!(
        Checkpoint::from_bytes(b"not a checkpoint"),
        Err(Error::Corrupt(_))
    ));
}

#[test]
fn version_mismatch_is_rejected() {
    let mut bytes = model_checkpoint(&MxT::new(tiny()).unwrap())
        .to_bytes()
        .unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    bytes[8..12].copy_from_slice(&(VERSION + 1).to_le_bytes());
    match Checkpoint::from_bytes(&bytes) {
        Err(Error::Version { found, expected }) => {
            assert_eq!((found, expected), (VERSION + 1, VERSION))
        }
        _ => panic!("expected version error"),
    }
}

#[test]
fn unknown_or_missing_tensor_is_a_schema_error() {
    let mut ck = model_checkpoint(&MxT::new(tiny()).unwrap());
    ck.tensors
        .push(("model.extra.weight".into(), Tensor::zeros(&[2])));
    assert!(
        matches!(load_model(&ck, None), Err(Error::Schema(m)) if m.contains("model.extra.weight") || m.contains("extra.weight"))
    );
    let mut ck = model_checkpoint(&MxT::new(tiny()).unwrap());
    ck.tensors.remove(0);
    assert!(matches!(load_model(&ck, None), Err(Error::Schema(_))));
    let mut ck = model_checkpoint(&MxT::new(tiny()).unwrap());
    ck.tensors[0].1 = Tensor::zeros(&[1]);
    assert!(matches!(load_model(&ck, None), Err(Error::Schema(_))));
}

#[test]
fn checkpoint_config_overrides_requested_config() {
    let model = MxT::new(tiny()).unwrap();
    let ck = model_checkpoint(&model);
    let requested = ModelConfig {
        base_channels: 8,
        ffn: FfnKind::Gdfn,
        ..tiny()
    };
    let (loaded, notices) = load_model(&ck, Some(&requested)).unwrap();
    assert_eq!(loaded.config, tiny());
    assert_eq!(notices.len(), 2);
    assert!(notices
        .iter()
        .any(|n| n.contains("model.base_channels") && n.contains("using 4")));
    assert!(notices.iter().any(|n| n.contains("model.ffn")));
}

#[test]
fn model_config_kv_round_trip() {
    let cfg = ModelConfig {
        ffn_expansion: 2.6600000000000001,
        skip_d: true,
        hm_counts: [1, 2, 3, 4, 5, 6, 7],
        ..tiny()
    };
    let text = render_kv(&cfg.to_kv());
    let back = ModelConfig::from_kv(&parse_kv(&text).unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert!(matches!(
        ModelConfig::from_kv(&parse_kv("model.bogus = 1").unwrap()),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        ModelConfig::from_kv(&parse_kv("model.hm_counts = 1,2").unwrap()),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        parse_kv("a = 1\nnot a pair\n"),
        Err(Error::Parse { offset: 6, .. })
    ));
    let m = parse_kv("# comment\n a.b = 3 # trailing\n\na.b=4\n").unwrap();
    assert_eq!(m.get("a.b").map(String::as_str), Some("4"));
}
