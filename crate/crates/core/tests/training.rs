mod common;

use gends::corpus::{Dataset, Vocabulary};
use gends::inference::{DecodeOptions, Engine};
use gends::model::{Gradients, Graph, Variant};
use gends::training::{
    load_checkpoint, load_checkpoint_for, prepare_examples, save_checkpoint, train, train_with_vocab, AlignPolicy,
    TrainingConfig,
};
use gends::Error;

fn quick(variant: Variant, seed: u64) -> TrainingConfig {
    TrainingConfig {
        epochs_phase1: 1,
        epochs_phase2: 1,
        ..common::config(variant, 12, seed)
    }
}

fn subset(ds: &Dataset, n: usize) -> Dataset {
    Dataset::new(ds.pairs.iter().take(n).cloned().collect())
}

#[test]
fn same_seed_gives_identical_models() {
    let (kb, ds) = common::corpus(1);
    let ds = subset(&ds, 60);
    let a = train(&ds, &kb, &quick(Variant::Full, 5)).unwrap();
    let b = train(&ds, &kb, &quick(Variant::Full, 5)).unwrap();
    assert_eq!(a.model.store, b.model.store);
    assert_eq!(a.history, b.history);
    let c = train(&ds, &kb, &quick(Variant::Full, 6)).unwrap();
    assert_ne!(a.model.store, c.model.store);
}

#[test]
fn batch_size_does_not_change_the_determinism_contract() {
    let (kb, ds) = common::corpus(1);
    let ds = subset(&ds, 30);
    let cfg = TrainingConfig {
        batch_size: 7,
        ..quick(Variant::Static, 2)
    };
    let a = train(&ds, &kb, &cfg).unwrap();
    let b = train(&ds, &kb, &cfg).unwrap();
    assert_eq!(a.model.store, b.model.store);
    assert_eq!(a.steps.len(), 2 * 30usize.div_ceil(7));
}

#[test]
fn only_variants_with_the_auxiliary_task_report_it() {
    let (kb, ds) = common::corpus(2);
    let ds = subset(&ds, 30);
    for v in Variant::ALL {
        let out = train(&ds, &kb, &quick(v, 1)).unwrap();
        for m in &out.history {
            assert!(m.task1_nll.is_finite() && m.task1_nll > 0.0);
            if v.uses_task2() {
                assert!(m.task2_nll > 0.0, "{v}");
            } else {
                assert_eq!(m.task2_nll, 0.0, "{v}");
            }
        }
    }
}

#[test]
fn learning_rate_halves_and_gradients_are_clipped() {
    let (kb, ds) = common::corpus(3);
    let ds = subset(&ds, 40);
    let cfg = TrainingConfig {
        epochs_phase1: 2,
        epochs_phase2: 2,
        grad_clip: 0.5,
        batch_size: 10,
        ..common::config(Variant::Full, 12, 3)
    };
    let out = train(&ds, &kb, &cfg).unwrap();
    assert_eq!(out.steps.len(), 16);
    for s in &out.steps {
        let want = if s.epoch < 2 { 1.0 } else { 0.5 };
        assert_eq!(s.lr, want);
        assert!(s.clipped_norm <= 0.5 + 1e-9);
        if s.grad_norm <= 0.5 {
            assert!((s.clipped_norm - s.grad_norm).abs() < 1e-12);
        }
    }
    assert!(out.steps.iter().any(|s| s.grad_norm > 0.5));
    let lrs: Vec<f64> = out.history.iter().map(|m| m.lr).collect();
    assert_eq!(lrs, [1.0, 1.0, 0.5, 0.5]);
}

#[test]
fn auxiliary_loss_alone_moves_the_shared_encoder() {
    let (kb, ds) = common::corpus(4);
    let vocab = Vocabulary::build(&ds, &kb, 1).unwrap();
    let (examples, _) = prepare_examples(&ds, &kb, &vocab, AlignPolicy::Inject).unwrap();
    let ex = &examples[0];
    let mut model = train_with_vocab(&subset(&ds, 8), &kb, vocab.clone(), &quick(Variant::Full, 4), |_| Ok(()))
        .unwrap()
        .model;

    let mut grads = Gradients::zeros_like(&model.store);
    let before = {
        let mut g = Graph::new(&model.store);
        let loss = model
            .sequence_loss(&mut g, &ex.prepared.token_ids, &ex.prepared.features, &ex.labels)
            .unwrap();
        g.backward(loss.task2.unwrap(), &mut grads);
        let mut g2 = Graph::new(&model.store);
        let enc = model.encode(&mut g2, &ex.prepared.token_ids).unwrap();
        g2.value(enc.last()).to_vec()
    };
    let norm = |name: &str| {
        let t = grads.get(model.param(name).unwrap());
        t.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    };
    for shared in ["emb", "enc.wz", "enc.wn", "dec.wz", "att.v", "out.w"] {
        assert!(norm(shared) > 0.0, "{shared} got no gradient from the auxiliary task");
    }
    for private in ["match.w1", "match.w2", "gate.w", "fupd.ent", "uupd.type"] {
        assert_eq!(norm(private), 0.0, "{private} should not see the auxiliary task");
    }

    for id in model.store.ids().collect::<Vec<_>>() {
        let g = grads.get(id).data.clone();
        for (w, d) in model.store.get_mut(id).data.iter_mut().zip(g) {
            *w -= 0.5 * d;
        }
    }
    let mut g = Graph::new(&model.store);
    let enc = model.encode(&mut g, &ex.prepared.token_ids).unwrap();
    assert_ne!(g.value(enc.last()), before.as_slice());
}

#[test]
fn checkpoint_file_round_trip() {
    let (kb, ds) = common::corpus(5);
    let ds = subset(&ds, 30);
    let out = train(&ds, &kb, &quick(Variant::Single, 5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("single.ckpt");
    save_checkpoint(&path, &out.model, &out.vocab).unwrap();

    let ck = load_checkpoint_for(&path, &out.vocab).unwrap();
    assert_eq!(ck.model, out.model);
    let a = Engine::new(out.model.clone(), out.vocab.clone(), kb.clone()).unwrap();
    let b = Engine::from_checkpoint(load_checkpoint(&path).unwrap(), kb.clone()).unwrap();
    let opts = DecodeOptions::default();
    for p in ds.pairs.iter().take(10) {
        assert_eq!(
            a.generate_tokens(&p.message_tokens, &opts).unwrap(),
            b.generate_tokens(&p.message_tokens, &opts).unwrap()
        );
    }

    let (kb2, ds2) = common::corpus(99);
    let other = Vocabulary::build(&ds2, &kb2, 1).unwrap();
    let err = load_checkpoint_for(&path, &other).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)), "{err}");

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    assert!(matches!(load_checkpoint(dir.path().join("missing.ckpt")), Err(Error::Io { .. })));
}

#[test]
fn empty_training_set_is_an_error() {
    let (kb, _) = common::corpus(6);
    let empty = Dataset::new(Vec::new());
    assert!(matches!(train(&empty, &kb, &quick(Variant::Full, 1)), Err(Error::Input(_))));
}

#[test]
fn epoch_callback_sees_every_epoch_and_can_abort() {
    let (kb, ds) = common::corpus(7);
    let ds = subset(&ds, 20);
    let vocab = Vocabulary::build(&ds, &kb, 1).unwrap();
    let mut seen = Vec::new();
    train_with_vocab(&ds, &kb, vocab.clone(), &quick(Variant::Full, 1), |m| {
        seen.push(m.epoch);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, [1, 2]);

    let err = train_with_vocab(&ds, &kb, vocab, &quick(Variant::Full, 1), |_| {
        Err(Error::Input("stop".into()))
    })
    .unwrap_err();
    assert!(matches!(err, Error::Input(_)));
}

#[test]
fn invalid_configuration_is_rejected() {
    let (kb, ds) = common::corpus(8);
    let bad = TrainingConfig {
        batch_size: 0,
        ..quick(Variant::Full, 1)
    };
    assert!(matches!(train(&ds, &kb, &bad), Err(Error::Config(_))));
}
