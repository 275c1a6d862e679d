mod common;

use std::path::PathBuf;

use geolan_core::model::ModelConfig;
use geolan_core::numcore::{Rng, Stream};
use geolan_core::trainer::{
    batch_iter, load_corpus, run_suite_on, train, Mode, RunConfig, RunLog, CONTROL_WEIGHT_DECAY,
};
use geolan_core::Error;

fn corpus() -> Vec<u8> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/corpus.txt");
    load_corpus(&path).unwrap()[..60_000].to_vec()
}

fn tiny(mode: Mode, steps: u64) -> RunConfig {
    let mut c = RunConfig::for_mode(mode);
    c.model = ModelConfig {
        vocab_size: 256,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_head: 8,
        max_seq: 16,
        ffn_mult: 2,
    };
    c.steps = steps;
    c.batch_size = 2;
    c.seq_len = 8;
    c.lr = 3e-3;
    c
}

fn without_wall_time(log: &RunLog) -> Vec<String> {
    log.steps
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.wall_ms = 0.0;
            serde_json::to_string(&s).unwrap()
        })
        .collect()
}

#[test]
fn window_starts_are_uniform() {
    let text = vec![b'a'; 74];
    let seq = 10;
    let mut it = batch_iter(&text, seq, 4, Rng::derive(3, Stream::Batches, 0)).unwrap();
    let slots = text.len() - seq;
    let n = 100_000;
    let mut counts = vec![0usize; slots];
    for _ in 0..n {
        counts[it.next_start()] += 1;
    }
    let p = 1.0 / slots as f64;
    let expect = n as f64 * p;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - expect).abs() < 5.0 * sigma, "{c} vs {expect}");
    }
    let b = it.next().unwrap();
    assert_eq!(b.inputs.len(), 4);
    assert!(b.inputs.iter().all(|w| w.len() == seq));
}

#[test]
fn targets_are_inputs_shifted_by_one() {
    let text: Vec<u8> = (0..200u8).collect();
    let b = batch_iter(&text, 5, 3, Rng::new(1)).unwrap().next().unwrap();
    for (x, y) in b.inputs.iter().zip(&b.targets) {
        assert_eq!(&x[1..], &y[..4]);
        assert_eq!(y[4], x[4] + 1);
    }
}

#[test]
fn corpus_must_exceed_window() {
    let text = vec![b'x'; 8];
    assert!(batch_iter(&text, 8, 1, Rng::new(0)).is_err());
    let cfg = tiny(Mode::Baseline, 2);
    assert!(matches!(train(&cfg, 1, &text), Err(Error::Input(_))));
}

#[test]
fn geolan_schedule_and_learning() {
    let cfg = tiny(Mode::Geolan, 1000);
    let out = train(&cfg, 42, &corpus()).unwrap();
    let steps = &out.log.steps;
    assert_eq!(steps.len(), 1000);
    let l1 = cfg.regularizer.lambda1_target;
    let l2 = cfg.regularizer.lambda2_target;
    assert_eq!((steps[0].lambda1, steps[0].lambda2), (0.0, 0.0));
    assert_eq!((steps[250].lambda1, steps[250].lambda2), (l1 / 2.0, l2 / 2.0));
    assert_eq!((steps[500].lambda1, steps[500].lambda2), (l1, l2));
    assert_eq!(steps[999].lambda1, l1);
    assert!(out.log.decomposition_error() < 1e-10);
    let head: f64 = steps[..50].iter().map(|s| s.ce).sum::<f64>() / 50.0;
    let tail: f64 = steps[950..].iter().map(|s| s.ce).sum::<f64>() / 50.0;
    assert!(tail < head, "ce {head} -> {tail}");
    assert!(steps.iter().skip(1).all(|s| s.probe_seed.is_some()));
}

#[test]
fn rerun_is_identical_except_wall_time() {
    let cfg = tiny(Mode::Geolan, 30);
    let text = corpus();
    let a = train(&cfg, 7, &text).unwrap();
    let b = train(&cfg, 7, &text).unwrap();
    assert_eq!(without_wall_time(&a.log), without_wall_time(&b.log));
    assert_eq!(a.params.tensors, b.params.tensors);
    let c = train(&cfg, 8, &text).unwrap();
    assert_ne!(without_wall_time(&a.log), without_wall_time(&c.log));
}

#[test]
fn suite_results_do_not_depend_on_seed_order() {
    let cfg = tiny(Mode::Control, 15);
    let text = corpus();
    let fwd = run_suite_on(&cfg, &[3, 4], &text).unwrap();
    let rev = run_suite_on(&cfg, &[4, 3], &text).unwrap();
    assert_eq!(without_wall_time(&fwd[0].log), without_wall_time(&rev[1].log));
    assert_eq!(without_wall_time(&fwd[1].log), without_wall_time(&rev[0].log));
    assert_eq!(fwd[0].log.run_id, "control-3");
}

#[test]
fn runlog_jsonl_round_trip() {
    let cfg = tiny(Mode::Geolan, 5);
    let out = train(&cfg, 11, &corpus()).unwrap();
    let text = out.log.to_jsonl().unwrap();
    let back = RunLog::from_jsonl(&text).unwrap();
    assert_eq!(back.steps, out.log.steps);
    assert_eq!((back.mode, back.seed), (Mode::Geolan, 11));
    assert!(RunLog::from_jsonl("").is_err());
}

#[test]
fn mode_configs_are_enforced() {
    let mut c = tiny(Mode::Control, 1);
    assert_eq!(c.weight_decay, CONTROL_WEIGHT_DECAY);
    c.validate().unwrap();
    c.weight_decay = 0.0;
    assert!(c.validate().is_err());
    let mut b = tiny(Mode::Baseline, 1);
    b.regularizer.lambda1_target = 1e-3;
    assert!(b.validate().is_err());
    let g = tiny(Mode::Geolan, 1);
    assert_eq!(g.regularizer.lambda1_target, 1e-3);
    assert_eq!(g.regularizer.lambda2_target, 1e-2);
    let json = serde_json::to_string(&g).unwrap();
    assert_eq!(RunConfig::from_json(&json).unwrap(), g);
    let bad = json.replacen("\"lr\"", "\"learning_rate\"", 1);
    assert!(RunConfig::from_json(&bad).is_err());
}
