use std::f64::consts::LN_2;

use super::*;
use crate::autodiff::{Graph, Mode};
use crate::cells::CellKind;
use crate::error::{Error, IntegrityError};
use crate::rng::SeededRng;

fn tiny_config(kind: CellKind, hidden: usize) -> TrainConfig {
    let mut c = TrainConfig::preset("char-small").unwrap();
    c.kind = kind;
    c.hidden_dims = vec![hidden];
    c.embedding_dim = hidden;
    c.batch_size = 4;
    c.bptt_length = 10;
    c.max_epochs = 3;
    c.seed = Some(11);
    c
}

const TEXT: &str = "the quick brown fox jumps over the lazy dog\nand then the dog naps in the sun\n";

fn corpus(repeats: usize) -> String {
    TEXT.repeat(repeats)
}

#[test]
fn alternating_text_is_learned() {
    let text = "ab".repeat(500);
    let mut config = tiny_config(CellKind::RanSimplified, 16);
    config.batch_size = 4;
    config.bptt_length = 20;
    config.max_epochs = 20;
    config.lr_initial = 1.0;
    config.decay_start_epoch = 20;
    let mut trainer = Trainer::<f64>::new(&config, &text, &text).unwrap();
    let mut best = f64::INFINITY;
    while !trainer.is_finished() {
        let m = trainer.run_epoch().unwrap();
        best = best.min(m.train_nats / LN_2);
        if best < 0.5 {
            break;
        }
    }
    assert!(best < 0.5, "training bpc {best}");
}

#[test]
fn learning_rate_schedule() {
    let mut c = tiny_config(CellKind::Lstm, 4);
    c.lr_initial = 1.0;
    c.lr_decay = 0.5;
    c.decay_start_epoch = 4;
    let rates: Vec<f64> = (1..=6).map(|e| c.lr_at(e)).collect();
    assert_eq!(rates, vec![1.0, 1.0, 1.0, 1.0, 0.5, 0.25]);
}

#[test]
fn training_is_deterministic() {
    let text = corpus(4);
    let config = tiny_config(CellKind::RanGeneral, 8);
    let a = train::<f64>(&config, &text, TEXT).unwrap();
    let b = train::<f64>(&config, &text, TEXT).unwrap();
    assert_eq!(metrics::format_log(&a.metrics), metrics::format_log(&b.metrics));
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
}

#[test]
fn uniform_predictions_give_vocabulary_perplexity() {
    let r = EvalReport::from_mean_nats(100, 10f64.ln());
    assert!((r.perplexity - 10.0).abs() < 1e-12);
    let r = EvalReport::from_mean_nats(100, 27f64.ln());
    assert!((r.bpc - 27f64.log2()).abs() < 1e-12);

    let text = corpus(4);
    let config = tiny_config(CellKind::Lstm, 6);
    let mut trainer = Trainer::<f64>::new(&config, &text, TEXT).unwrap();
    let v = trainer.state.vocab.len();
    for t in trainer.state.model.tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let report = evaluate_ids(&trainer.state.model, trainer.valid_ids(), 7).unwrap();
    assert!((report.perplexity - v as f64).abs() < 1e-9);
}

#[test]
fn perplexity_and_bpc_agree() {
    for nats in [0.1, 1.0, 2.5, 4.0] {
        let r = EvalReport::from_mean_nats(1, nats);
        assert!((r.perplexity - 2f64.powf(r.bpc)).abs() <= 1e-9 * r.perplexity);
    }
}

#[test]
fn first_block_loss_is_near_log_vocabulary() {
    let text = corpus(4);
    for kind in [CellKind::Lstm, CellKind::RanGeneral, CellKind::GruStandard] {
        let trainer = Trainer::<f64>::new(&tiny_config(kind, 8), &text, TEXT).unwrap();
        let expected = (trainer.state.vocab.len() as f64).ln();
        let loss = trainer.first_block_loss().unwrap();
        assert!(
            (loss - expected).abs() <= 0.05 * expected,
            "{kind}: {loss} vs {expected}"
        );
    }
}

#[test]
fn evaluation_ignores_dropout() {
    let text = corpus(4);
    let mut a = tiny_config(CellKind::RanGeneral, 8);
    a.max_epochs = 1;
    let trained = train::<f64>(&a, &text, TEXT).unwrap().checkpoint;
    let mut noisy = trained.clone();
    noisy.config.dropout_rate = 0.9;
    let x = evaluate(&trained, TEXT, None).unwrap();
    let y = evaluate(&noisy, TEXT, Some(&trained.vocab.digest())).unwrap();
    assert_eq!(x, y);
}

#[test]
fn evaluation_rejects_wrong_digest() {
    let text = corpus(4);
    let trainer = Trainer::<f64>::new(&tiny_config(CellKind::Lstm, 4), &text, TEXT).unwrap();
    let err = evaluate(&trainer.state, TEXT, Some("00")).unwrap_err();
    assert!(matches!(err, Error::Integrity(IntegrityError::Digest { .. })));
}

#[test]
fn gradients_stop_at_block_boundary() {
    let text = corpus(4);
    let config = tiny_config(CellKind::Lstm, 6);
    let trainer = Trainer::<f64>::new(&config, &text, TEXT).unwrap();
    let model = &trainer.state.model;
    let vocab = &trainer.state.vocab;
    let stack = model.stack().clone();
    let mut rng = SeededRng::new(3);

    let first = vocab.encode("xyz").unwrap();
    let second = vocab.encode("the dog").unwrap();
    let inputs = |ids: &[usize]| ids.iter().map(|&i| vec![i]).collect::<Vec<_>>();

    let mut g = Graph::new();
    let fwd = model
        .forward(
            &mut g,
            &inputs(&first[..2]),
            &first[1..],
            &stack.zero_states(1),
            0.0,
            Mode::Train,
            &mut rng,
            true,
        )
        .unwrap();
    let carried: Vec<_> = fwd.final_states.iter().map(|s| s.to_state(&g)).collect();

    let mut g = Graph::new();
    let fwd = model
        .forward(
            &mut g,
            &inputs(&second[..6]),
            &second[1..],
            &carried,
            0.0,
            Mode::Train,
            &mut rng,
            true,
        )
        .unwrap();
    let grads = g.backward(fwd.loss).unwrap().parameters();
    let embedding = &grads[0];
    for &id in &first {
        if !second[..6].contains(&id) {
            assert!(embedding.row(id).iter().all(|&v| v == 0.0));
        }
    }
    assert!(embedding.row(second[0]).iter().any(|&v| v != 0.0));
}

#[test]
fn checkpoint_roundtrip_is_byte_identical() {
    let text = corpus(4);
    let mut config = tiny_config(CellKind::GruAlternate, 5);
    config.max_epochs = 1;
    let ckpt = train::<f64>(&config, &text, TEXT).unwrap().checkpoint;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, ckpt.clone().into_any());
    assert_eq!(loaded.to_bytes(), std::fs::read(&path).unwrap());
}

#[test]
fn f32_checkpoint_roundtrips() {
    let text = corpus(4);
    let mut config = tiny_config(CellKind::RanGeneral, 5);
    config.precision = crate::tensor::Precision::F32;
    config.max_epochs = 1;
    let ckpt = train::<f32>(&config, &text, TEXT).unwrap().checkpoint;
    let bytes = ckpt.to_bytes();
    let loaded = decode_checkpoint(&bytes).unwrap();
    assert_eq!(loaded.precision(), crate::tensor::Precision::F32);
    assert_eq!(loaded.to_bytes(), bytes);
}

#[test]
fn checkpoint_corruption_is_classified() {
    let text = corpus(4);
    let trainer = Trainer::<f64>::new(&tiny_config(CellKind::Lstm, 4), &text, TEXT).unwrap();
    let bytes = trainer.state.to_bytes();
    let integrity = |b: &[u8]| match decode_checkpoint(b) {
        Err(Error::Integrity(e)) => e,
        other => panic!("expected integrity error, got {other:?}"),
    };

    let mut flipped = bytes.clone();
    let at = bytes.len() - 10;
    flipped[at] ^= 0x01;
    assert!(matches!(integrity(&flipped), IntegrityError::Checksum { .. }));

    let mut version = bytes.clone();
    version[7] = 9;
    assert!(matches!(integrity(&version), IntegrityError::Version { found: 9, .. }));

    assert!(matches!(
        integrity(&bytes[..bytes.len() - 3]),
        IntegrityError::Truncated(_)
    ));
    assert!(matches!(integrity(&bytes[..5]), IntegrityError::Truncated(_)));

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(integrity(&magic), IntegrityError::BadMagic));

    let mut digest = trainer.state.to_bytes();
    let header_len = u32::from_le_bytes(digest[8..12].try_into().unwrap()) as usize;
    let header = std::str::from_utf8(&digest[12..12 + header_len]).unwrap().to_string();
    let key = "\"vocab_digest\":\"";
    let pos = header.find(key).unwrap() + key.len();
    let c = digest[12 + pos];
    digest[12 + pos] = if c == b'0' { b'1' } else { b'0' };
    assert!(matches!(integrity(&digest), IntegrityError::Digest { .. }));
}

#[test]
fn resumed_training_matches_straight_run() {
    let text = corpus(4);
    let config = tiny_config(CellKind::RanGeneral, 6);
    let straight = train::<f64>(&config, &text, TEXT).unwrap();

    let mut first = Trainer::<f64>::new(&config, &text, TEXT).unwrap();
    let mut rows = vec![first.run_epoch().unwrap()];
    let bytes = first.into_checkpoint().to_bytes();
    let restored = match decode_checkpoint(&bytes).unwrap() {
        AnyCheckpoint::F64(c) => c,
        AnyCheckpoint::F32(_) => unreachable!(),
    };
    let mut second = Trainer::resume(restored, &text, TEXT).unwrap();
    while !second.is_finished() {
        rows.push(second.run_epoch().unwrap());
    }
    assert_eq!(rows, straight.metrics);
    assert_eq!(second.into_checkpoint().to_bytes(), straight.checkpoint.to_bytes());
}

#[test]
fn divergence_returns_last_good_state() {
    let text = corpus(4);
    let mut config = tiny_config(CellKind::Lstm, 6);
    config.max_epochs = 2;
    let mut trainer = Trainer::<f64>::new(&config, &text, TEXT).unwrap();
    trainer.run_epoch().unwrap();
    let good = trainer.state.clone();
    trainer.state.config.lr_initial = 1e300;
    trainer.state.config.clip_norm = None;
    match trainer.run_epoch() {
        Err(Error::NumericAbort { epoch, last_good, .. }) => {
            assert_eq!(epoch, 2);
            let mut expected = good.clone();
            expected.config = trainer.state.config.clone();
            assert_eq!(*last_good.unwrap(), expected.into_any());
        }
        other => panic!("expected numeric abort, got {:?}", other.map(|m| m.to_line())),
    }
    assert!(trainer.state.model.named_tensors().iter().all(|(_, t)| t.is_finite()));
    assert_eq!(trainer.state.epochs_completed, 1);
}

#[test]
fn precision_mismatch_is_config_error() {
    let text = corpus(4);
    let config = tiny_config(CellKind::Lstm, 4);
    assert!(matches!(
        Trainer::<f32>::new(&config, &text, TEXT),
        Err(Error::Config(_))
    ));
}

#[test]
fn missing_corpus_names_the_path() {
    let err = read_corpus(std::path::Path::new("/nonexistent/corpus.txt")).unwrap_err();
    assert!(matches!(err, Error::Ingestion(ref m) if m.contains("/nonexistent/corpus.txt")));
}

#[test]
fn model_named_tensors_rebuild() {
    let text = corpus(2);
    let trainer = Trainer::<f64>::new(&tiny_config(CellKind::GruDerivedRan, 4), &text, TEXT).unwrap();
    let m = &trainer.state.model;
    let named = m.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
    let rebuilt = LanguageModel::from_named(m.stack().clone(), m.vocab_size(), named).unwrap();
    assert_eq!(&rebuilt, m);
    let traces = m.trace(&[0, 1, 2]).unwrap();
    assert_eq!(traces.len(), 1);
    assert_eq!(traces[0].len(), 3);
}
