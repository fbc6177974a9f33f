mod common;

use std::sync::Arc;

use common::*;
use retrans_core::storage::{encode_snapshot, StoreKind};
use retrans_core::*;

fn config(mode: PolicyMode) -> SessionConfig {
    SessionConfig {
        mode,
        ..SessionConfig::default()
    }
}

fn base_translation(model: Arc<dyn BaseModel>, x: &Sentence) -> Sentence {
    Session::new(model, config(PolicyMode::BaseOnly))
        .unwrap()
        .translate(x)
        .unwrap()
        .hypothesis
}

#[test]
fn one_shot_correction() {
    let m = hund_model();
    let mut s = Session::new(m.clone(), SessionConfig::default()).unwrap();
    let x = sentence(&*m, "hund");
    assert_eq!(s.translate(&x).unwrap().hypothesis.text(), "cat");
    s.adapt(&x, &sentence(&*m, "dog")).unwrap();
    let t = s.translate(&x).unwrap();
    assert_eq!(t.hypothesis.text(), "dog");
    assert!(
        t.diagnostics[0].lambda > 0.5,
        "lambda {}",
        t.diagnostics[0].lambda
    );
    assert_eq!(t.diagnostics[0].neighbor_distances[0], 0.0);
}

#[test]
fn adapt_reproduces_corrected_phrase() {
    let m = phrase_model();
    let mut s = Session::new(m.clone(), SessionConfig::default()).unwrap();
    let x = sentence(&*m, "das ist ein term");
    let y = sentence(&*m, "the is a right");
    assert_eq!(s.translate(&x).unwrap().hypothesis.text(), "the is a wrong");
    let report = s.adapt(&x, &y).unwrap();
    assert_eq!(report.token_entries_added, 5);
    assert_eq!(s.translate(&x).unwrap().hypothesis, y);
}

#[test]
fn exact_repeat_contexts_get_the_largest_weight() {
    let m = phrase_model();
    let mut s = Session::new(m.clone(), SessionConfig::default()).unwrap();
    s.adapt(
        &sentence(&*m, "das ist ein term"),
        &sentence(&*m, "the is a right"),
    )
    .unwrap();
    // Same bag of words, so the first two positions repeat stored contexts exactly.
    let t = s.translate(&sentence(&*m, "das ist term ein")).unwrap();
    let d = &t.diagnostics;
    assert_eq!(d[0].neighbor_distances[0], 0.0);
    assert_eq!(d[1].neighbor_distances[0], 0.0);
    assert!(d[2].neighbor_distances[0] > 0.0);
    let repeated = d[0].lambda.min(d[1].lambda);
    let others = d[2..].iter().map(|x| x.lambda).fold(0.0, f64::max);
    assert!(repeated >= others, "{repeated} < {others}");
}

#[test]
fn literal_cold_start_adds_no_policy_entries() {
    let m = phrase_model();
    let cfg = SessionConfig {
        cold_start_bootstrap: false,
        ..SessionConfig::default()
    };
    let mut s = Session::new(m.clone(), cfg).unwrap();
    let x = sentence(&*m, "das ist ein term");
    let y = sentence(&*m, "the is a right");
    let first = s.adapt(&x, &y).unwrap();
    assert_eq!(first.token_entries_added, 5);
    assert_eq!(first.policy_entries_added, 0);
    let second = s
        .adapt(&sentence(&*m, "ein term"), &sentence(&*m, "a right"))
        .unwrap();
    assert_eq!(second.token_entries_added, 3);
    assert_eq!(second.policy_entries_added, 3);
    assert_eq!(s.policy_store().len(), 3);
    assert_eq!(s.token_store().len(), 8);
}

#[test]
fn bootstrap_stages_two_labels_per_position() {
    let m = phrase_model();
    let mut s = Session::new(m.clone(), SessionConfig::default()).unwrap();
    let r = s
        .adapt(
            &sentence(&*m, "das ist ein term"),
            &sentence(&*m, "the is a right"),
        )
        .unwrap();
    assert_eq!(r.policy_entries_added, 10);
    let r = s
        .adapt(&sentence(&*m, "ein term"), &sentence(&*m, "a right"))
        .unwrap();
    assert_eq!(r.policy_entries_added, 3);
}

#[test]
fn empty_store_matches_base_in_every_mode() {
    let m = phrase_model();
    let x = sentence(&*m, "das term ist ein term");
    let base = base_translation(m.clone(), &x);
    for mode in [
        PolicyMode::Adaptive,
        PolicyMode::Constant(0.7),
        PolicyMode::BaseOnly,
    ] {
        let s = Session::new(m.clone(), config(mode)).unwrap();
        assert_eq!(s.translate(&x).unwrap().hypothesis, base);
    }
}

#[test]
fn constant_zero_equals_base_only() {
    let m = phrase_model();
    let mut a = Session::new(m.clone(), config(PolicyMode::Constant(0.0))).unwrap();
    let mut b = Session::new(m.clone(), config(PolicyMode::BaseOnly)).unwrap();
    let pairs = [
        ("das ist ein term", "the is a right"),
        ("ein term", "a right"),
        ("term ist das", "right is the"),
    ];
    for (x, y) in pairs {
        let (x, y) = (sentence(&*m, x), sentence(&*m, y));
        let ta = a.translate_traced(&x).unwrap();
        let tb = b.translate_traced(&x).unwrap();
        assert_eq!(ta.hypothesis, tb.hypothesis);
        for (sa, sb) in ta.steps.iter().zip(&tb.steps) {
            assert_eq!(sa.emitted, sb.emitted);
            assert!(max_abs_diff(sa.p.as_slice(), sb.p.as_slice()) < 1e-15);
        }
        a.adapt(&x, &y).unwrap();
        b.adapt(&x, &y).unwrap();
    }
    assert_eq!(b.token_store().len(), 0);
    assert!(!a.token_store().is_empty());
    assert_eq!(a.policy_store().len(), 0);
}

#[test]
fn translate_does_not_mutate() {
    let m = phrase_model();
    let mut s = Session::new(m.clone(), SessionConfig::default()).unwrap();
    s.adapt(
        &sentence(&*m, "das ist ein term"),
        &sentence(&*m, "the is a right"),
    )
    .unwrap();
    s.adapt(&sentence(&*m, "ein term"), &sentence(&*m, "a right"))
        .unwrap();
    let snap = |s: &Session| {
        (
            encode_snapshot(StoreKind::Token, s.token_store().index(), 8, 10.0),
            encode_snapshot(StoreKind::Policy, s.policy_store().index(), 8, 10.0),
            s.adaptation_log().len(),
        )
    };
    let before = snap(&s);
    for text in ["das ist ein term", "term term", "ist"] {
        s.translate(&sentence(&*m, text)).unwrap();
        s.translate_traced(&sentence(&*m, text)).unwrap();
    }
    assert_eq!(snap(&s), before);
}

#[test]
fn uniform_policy_labels_fix_lambda() {
    let m = phrase_model();
    let x = sentence(&*m, "das ist ein term");
    let y = sentence(&*m, "the is a right");
    let mut tokens = TokenStore::new(m.dim());
    tokens
        .add_sentence(
            &y.ids(),
            &m.teacher_forced_states(&x.ids(), &y.ids()).unwrap(),
        )
        .unwrap();
    for v in [0u8, 1] {
        let cfg = SessionConfig::default();
        let mut policy = PolicyStore::new(cfg.k);
        for i in 0..5 {
            let f: Vec<f64> = (0..2 * cfg.k).map(|j| (i * j) as f64 * 0.37).collect();
            policy.add_entry(&PolicyFeature(f), v).unwrap();
        }
        let s = Session::with_stores(m.clone(), cfg, tokens.clone(), policy).unwrap();
        for probe in ["das ist ein term", "term ein", "ist ist ist"] {
            let t = s.translate_traced(&sentence(&*m, probe)).unwrap();
            for step in &t.steps {
                assert_eq!(step.lambda, v as f64);
            }
        }
    }
}

#[test]
fn clear_restores_base_behaviour() {
    let m = phrase_model();
    let x = sentence(&*m, "das ist ein term");
    let y = sentence(&*m, "the is a right");
    let mut s = Session::new(m.clone(), SessionConfig::default()).unwrap();
    s.adapt(&x, &y).unwrap();
    assert_eq!(s.translate(&x).unwrap().hypothesis, y);
    let log = s.adaptation_log().len();
    s.clear_datastores();
    assert_eq!(s.token_store().len(), 0);
    assert_eq!(s.policy_store().len(), 0);
    assert_eq!(
        s.translate(&x).unwrap().hypothesis,
        base_translation(m.clone(), &x)
    );
    s.clear_datastores();
    assert_eq!(s.token_store().len(), 0);
    assert_eq!(s.adaptation_log().len(), log);
}

#[test]
fn run_document_one_shot_and_first_sentence() {
    let m = phrase_model();
    let x = sentence(&*m, "das ist ein term");
    let y = sentence(&*m, "the is a right");
    let mut s = Session::new(m.clone(), SessionConfig::default()).unwrap();
    let r = s
        .run_document(&[(x.clone(), y.clone()), (x.clone(), y.clone())])
        .unwrap();
    assert_eq!(r.hypotheses[0], base_translation(m.clone(), &x));
    assert_eq!(r.hypotheses[1], y);
    assert_eq!(r.latencies.len(), 2);
    assert_eq!(r.diagnostics[1].len(), 4);

    let mut single = Session::new(m.clone(), SessionConfig::default()).unwrap();
    let r = single.run_document(&[(x.clone(), y.clone())]).unwrap();
    assert_eq!(r.hypotheses, vec![base_translation(m.clone(), &x)]);
}

#[test]
fn first_sentence_is_base_under_any_order() {
    let m = phrase_model();
    let pairs: Vec<(Sentence, Sentence)> = [
        ("das ist ein term", "the is a right"),
        ("ein term", "a right"),
        ("term ist das", "right is the"),
    ]
    .iter()
    .map(|(x, y)| (sentence(&*m, x), sentence(&*m, y)))
    .collect();
    for rot in 0..pairs.len() {
        let mut doc = pairs.clone();
        doc.rotate_left(rot);
        let mut s = Session::new(m.clone(), SessionConfig::default()).unwrap();
        let r = s.run_document(&doc).unwrap();
        assert_eq!(r.hypotheses[0], base_translation(m.clone(), &doc[0].0));
    }
}

#[test]
fn errors() {
    let m = phrase_model();
    let mut s = Session::new(m.clone(), SessionConfig::default()).unwrap();
    let x = sentence(&*m, "das");
    let empty = Sentence::new(Vec::new());
    assert!(matches!(s.translate(&empty), Err(Error::Input(_))));
    assert!(matches!(s.adapt(&empty, &x), Err(Error::Input(_))));
    assert!(matches!(s.adapt(&x, &empty), Err(Error::Input(_))));
    assert!(matches!(s.run_document(&[]), Err(Error::Input(_))));
    let err = s
        .run_document(&[(x.clone(), x.clone()), (empty.clone(), x.clone())])
        .unwrap_err();
    assert!(
        matches!(err, Error::AtSentence { sentence: 2, .. }),
        "{err:?}"
    );
    assert!(err.is_data_error());

    let bad = SessionConfig {
        mode: PolicyMode::Constant(1.5),
        ..SessionConfig::default()
    };
    assert!(Session::new(m.clone(), bad).is_err());
    let wrong_dim = TokenStore::new(m.dim() + 1);
    assert!(matches!(
        Session::with_stores(
            m.clone(),
            SessionConfig::default(),
            wrong_dim,
            PolicyStore::new(8)
        ),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn diagnostics_are_bounded() {
    let m = phrase_model();
    let mut s = Session::new(m.clone(), SessionConfig::default()).unwrap();
    s.adapt(
        &sentence(&*m, "das ist ein term"),
        &sentence(&*m, "the is a right"),
    )
    .unwrap();
    let t = s.translate(&sentence(&*m, "ein term das ist")).unwrap();
    assert_eq!(t.diagnostics.len(), t.hypothesis.len());
    for d in &t.diagnostics {
        assert!((0.0..=1.0).contains(&d.lambda));
        assert!(d.p_nmt_top.len() <= s.config().k);
        assert!(d.p_knn_top.len() <= s.config().k);
        assert!(d.neighbor_distances.len() <= s.config().k);
        assert!(d.neighbor_distances.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn fixed_mode_matches_oracle_on_random_documents() {
    use rand::{Rng, SeedableRng};
    let m = phrase_model();
    let words = ["das", "ist", "ein", "term"];
    let refs = ["the", "is", "a", "right"];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for lambda in [0.0, 0.3, 1.0] {
        let cfg = config(PolicyMode::Constant(lambda));
        let mut s = Session::new(m.clone(), cfg.clone()).unwrap();
        let mut oracle = KnnMtOracle::new(m.clone(), cfg.k, cfg.temperature, lambda);
        for _ in 0..6 {
            let n = rng.gen_range(1..6);
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let x = sentence(
                &*m,
                &idx.iter().map(|&i| words[i]).collect::<Vec<_>>().join(" "),
            );
            let y = sentence(
                &*m,
                &idx.iter().map(|&i| refs[i]).collect::<Vec<_>>().join(" "),
            );
            let got = s.translate_traced(&x).unwrap();
            let want = oracle.translate(&x.ids());
            assert_eq!(got.steps.len(), want.len());
            for (g, w) in got.steps.iter().zip(&want) {
                assert_eq!(g.emitted, w.emitted);
                assert!(max_abs_diff(g.p.as_slice(), &w.p) < 1e-12);
            }
            s.adapt(&x, &y).unwrap();
            oracle.adapt(&x.ids(), &y.ids());
        }
    }
}

#[test]
fn teacher_forcing_matches_independent_forward_calls() {
    use rand::{Rng, SeedableRng};
    let (m, corpus) = default_synthetic();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let pairs: Vec<_> = corpus
        .documents
        .iter()
        .flat_map(|d| d.pairs.iter())
        .collect();
    for _ in 0..20 {
        let (x, y) = pairs[rng.gen_range(0..pairs.len())];
        let states = m.teacher_forced_states(&x.ids(), &y.ids()).unwrap();
        assert_eq!(states.len(), y.len() + 1);
        let yi = y.ids();
        for (t, st) in states.iter().enumerate() {
            assert_eq!(*st, m.forward(&x.ids(), &yi[..t]).unwrap());
        }
    }
}
