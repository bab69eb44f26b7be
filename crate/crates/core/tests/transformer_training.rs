use codemix_core::tokenizer::{Encoding, TokenizerConfig, Vocabulary};
use codemix_core::transformer::{
    init_params, predict, predict_encodings, train, Dataset, EncoderConfig, LrScheduleKind,
    TrainConfig,
};
use codemix_core::SentimentLabel;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_cfg(dropout: f64) -> EncoderConfig {
    EncoderConfig {
        num_layers: 2,
        num_heads: 2,
        d_model: 16,
        d_ff: 32,
        dropout,
        max_len: 12,
        vocab_size: 30,
        num_classes: 3,
    }
}

fn random_data(n: usize, seed: u64, max_len: usize) -> (Vec<Encoding>, Vec<SentimentLabel>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut enc = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let len = rng.random_range(3..max_len - 1);
        let mut ids = vec![2u32];
        ids.extend((0..len).map(|_| rng.random_range(4..30u32)));
        ids.push(3);
        let real = ids.len();
        ids.resize(max_len, 0);
        let mut mask = vec![1u8; real];
        mask.resize(max_len, 0);
        enc.push(Encoding {
            ids,
            attention_mask: mask,
            num_real: real,
        });
        labels.push(SentimentLabel::ALL[rng.random_range(0..3)]);
    }
    (enc, labels)
}

fn fast_tc(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        epochs,
        batch_size: 4,
        weight_decay: 0.0,
        warmup_steps: 0,
        seed: 7,
        schedule: LrScheduleKind::Constant,
    }
}

#[test]
fn overfits_random_labels() {
    let cfg = tiny_cfg(0.0);
    let (x, y) = random_data(16, 1, cfg.max_len);
    let out = train(&cfg, &fast_tc(200), Dataset::new(&x, &y).unwrap(), None).unwrap();
    let pred = predict_encodings(&out.final_params, &cfg, &x).unwrap();
    let correct = pred.iter().zip(&y).filter(|((p, _), t)| p == *t).count();
    assert_eq!(correct, 16, "training accuracy {correct}/16");
    assert!(out.log.last().unwrap().train_loss < out.log[0].train_loss);
}

#[test]
fn training_is_deterministic() {
    let cfg = tiny_cfg(0.1);
    let (x, y) = random_data(20, 2, cfg.max_len);
    let (vx, vy) = random_data(8, 3, cfg.max_len);
    let run = || {
        train(
            &cfg,
            &fast_tc(4),
            Dataset::new(&x, &y).unwrap(),
            Some(Dataset::new(&vx, &vy).unwrap()),
        )
        .unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.log, b.log);
    assert_eq!(a.final_params, b.final_params);
    assert_eq!(a.best_params, b.best_params);
    assert_eq!(a.best_epoch, b.best_epoch);

    let other = train(
        &cfg,
        &TrainConfig {
            seed: 8,
            ..fast_tc(4)
        },
        Dataset::new(&x, &y).unwrap(),
        None,
    )
    .unwrap();
    assert_ne!(other.final_params, a.final_params);
}

#[test]
fn best_checkpoint_matches_log() {
    let cfg = tiny_cfg(0.1);
    let (x, y) = random_data(24, 4, cfg.max_len);
    let (vx, vy) = random_data(12, 5, cfg.max_len);
    let out = train(
        &cfg,
        &fast_tc(6),
        Dataset::new(&x, &y).unwrap(),
        Some(Dataset::new(&vx, &vy).unwrap()),
    )
    .unwrap();
    assert_eq!(out.log.len(), 6);
    let best = out.best_epoch.unwrap();
    let best_f1 = out.log[best - 1].val_weighted_f1.unwrap();
    for e in &out.log {
        let f1 = e.val_weighted_f1.unwrap();
        assert!(f1 <= best_f1);
        if e.epoch < best {
            assert!(f1 < best_f1);
        }
    }
    let pred: Vec<_> = predict_encodings(&out.best_params, &cfg, &vx)
        .unwrap()
        .into_iter()
        .map(|(l, _)| l)
        .collect();
    let f1 = codemix_core::metrics::evaluate(&vy, &pred)
        .unwrap()
        .weighted
        .f1;
    assert_eq!(f1, best_f1);
}

#[test]
fn zero_epochs_returns_init() {
    let cfg = tiny_cfg(0.1);
    let (x, y) = random_data(4, 6, cfg.max_len);
    let out = train(&cfg, &fast_tc(0), Dataset::new(&x, &y).unwrap(), None).unwrap();
    let init = init_params(&cfg, 7).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.final_params, init);
    assert_eq!(out.best_params, init);
    assert_eq!(out.best_epoch, None);
}

#[test]
fn empty_training_split_is_rejected() {
    let cfg = tiny_cfg(0.1);
    assert!(train(&cfg, &fast_tc(1), Dataset::new(&[], &[]).unwrap(), None).is_err());
    let (x, _) = random_data(2, 6, cfg.max_len);
    assert!(Dataset::new(&x, &[]).is_err());
}

fn toy_vocab() -> Vocabulary {
    let mut tokens: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
        .map(String::from)
        .to_vec();
    tokens.extend(
        "a b c d e f g h i j k l m n o p q r s t u v w x y z"
            .split(' ')
            .map(String::from),
    );
    Vocabulary::from_tokens(tokens).unwrap()
}

#[test]
fn zero_head_predicts_uniform() {
    let cfg = tiny_cfg(0.1);
    let mut p = init_params(&cfg, 1).unwrap();
    p.head_weight.fill(0.0);
    let tok = TokenizerConfig {
        max_len: cfg.max_len,
        ..TokenizerConfig::default()
    };
    let out = predict(&p, &cfg, &toy_vocab(), &tok, &["a b c", ""]).unwrap();
    for (label, probs) in out {
        assert_eq!(label, SentimentLabel::Negative);
        assert_eq!(probs, [1.0 / 3.0; 3]);
    }
    let wrong = TokenizerConfig {
        max_len: 8,
        ..TokenizerConfig::default()
    };
    assert!(predict(&p, &cfg, &toy_vocab(), &wrong, &["a"]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn probabilities_sum_to_one(texts in proptest::collection::vec("[a-z ]{0,30}", 1..5), seed in 0u64..50) {
        let cfg = tiny_cfg(0.1);
        let p = init_params(&cfg, seed).unwrap();
        let tok = TokenizerConfig { max_len: cfg.max_len, ..TokenizerConfig::default() };
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        for (label, probs) in predict(&p, &cfg, &toy_vocab(), &tok, &refs).unwrap() {
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let max = probs.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(probs[label.id()], max);
        }
    }
}
