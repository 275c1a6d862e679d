use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use geolan_cli::cmd::analyze::{analyze, AnalyzeArgs};
use geolan_cli::cmd::compare::compare_runs;
use geolan_cli::cmd::patch::{patch, PatchReport};
use geolan_cli::{EXIT_CORRUPT, EXIT_INPUT, EXIT_OK, EXIT_VERIFY};
use geolan_core::formats::{load_checkpoint, EmbeddingDump, MetricsRecord};
use geolan_core::metrics::{cone_concentration, isoscore, pca_probe_efficiency};
use geolan_core::model::{forward, ModelConfig, Params};
use geolan_core::numcore::{Rng, Tensor};
use geolan_core::trainer::{Mode, RunConfig};
use serde_json::json;

fn geolan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geolan")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn corpus_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/corpus.txt")
}

fn tiny_config(mode: Mode, steps: u64) -> RunConfig {
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
    c.corpus_path = Some(corpus_path());
    c
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn records(dir: &Path) -> Vec<MetricsRecord> {
    MetricsRecord::parse_lines(&fs::read_to_string(dir.join("metrics.jsonl")).unwrap()).unwrap()
}

fn find(recs: &[MetricsRecord], metric: &str, layer: usize) -> f64 {
    recs.iter()
        .find(|r| r.metric == metric && r.extra.as_ref().and_then(|e| e.get("layer")) == Some(&json!(layer)))
        .unwrap_or_else(|| panic!("no {metric} at layer {layer}"))
        .value
}

fn fake_run(root: &Path, mode: &str, seed: u64, value: f64) -> PathBuf {
    let dir = root.join(format!("{mode}-{seed}"));
    fs::create_dir_all(&dir).unwrap();
    let info = json!({"run_id": format!("{mode}-{seed}"), "mode": mode, "seed": seed, "steps": 1});
    fs::write(dir.join("run.json"), info.to_string()).unwrap();
    let r = MetricsRecord::new(&format!("{mode}-{seed}"), seed, 1, "cone_top10", value, None).unwrap();
    fs::write(dir.join("metrics.jsonl"), r.to_line().unwrap() + "\n").unwrap();
    dir
}

// ---- exit codes ----

#[test]
fn zero_trials_is_invalid_input() {
    assert_eq!(code(&geolan(&["verify", "--trials", "0"])), EXIT_INPUT);
}

#[test]
fn default_verify_suite_passes() {
    let o = geolan(&["verify", "--trials", "20", "--seed", "5"]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn halved_bounds_fail_verification() {
    let o = geolan(&["verify", "--suite", "prop_b", "--trials", "20", "--bound-scale", "0.5"]);
    assert_eq!(code(&o), EXIT_VERIFY);
    assert!(String::from_utf8_lossy(&o.stderr).contains("prop_b"));
}

#[test]
fn missing_corpus_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(Mode::Baseline, 2);
    cfg.corpus_path = None;
    let p = write_config(dir.path(), &cfg);
    let o = geolan(&["train", p.to_str().unwrap(), "--out", dir.path().join("run").to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_INPUT);
    assert!(String::from_utf8_lossy(&o.stderr).contains("corpus_path"));
}

#[test]
fn invalid_config_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("config.json");
    fs::write(&p, "{\"mode\": \"geolan\"}").unwrap();
    assert_eq!(code(&geolan(&["train", p.to_str().unwrap()])), EXIT_INPUT);
}

#[test]
fn corrupt_dump_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.glan");
    fs::write(&p, b"GLAN\x01\x00\x00\x00garbage").unwrap();
    let o = geolan(&["analyze", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_CORRUPT);
    let missing = dir.path().join("missing.glan");
    let o = geolan(&["analyze", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_INPUT);
}

// ---- train ----

#[test]
fn train_writes_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(Mode::Geolan, 12);
    let p = write_config(dir.path(), &cfg);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = geolan(&["train", p.to_str().unwrap(), "--seed", "9", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["runlog.jsonl", "ckpt.glan", "dump.glan"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let strip = |dir: &Path| -> Vec<serde_json::Value> {
        fs::read_to_string(dir.join("runlog.jsonl"))
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("wall_ms");
                v
            })
            .collect()
    };
    assert_eq!(strip(&a).len(), 12);
    assert_eq!(strip(&a), strip(&b));
    for f in ["ckpt.glan", "ckpt.json", "dump.glan", "attn.glan", "metrics.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let params = load_checkpoint(&a.join("ckpt.glan")).unwrap();
    assert_eq!(params.config, cfg.model);
}

// ---- analyze ----

fn analyze_args(dump: PathBuf, out: PathBuf) -> AnalyzeArgs {
    AnalyzeArgs {
        dump,
        delta: 0.5,
        out,
        attn: None,
        queries: None,
        heads: 1,
        seed: 0,
        run_id: None,
        plot: false,
    }
}

#[test]
fn isotropic_dump_scores_as_isotropic() {
    let dir = tempfile::tempdir().unwrap();
    let d = 16;
    let mut rows = Vec::new();
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut r = vec![0.0; d];
            r[i] = s;
            rows.push(r);
        }
    }
    let x = Tensor::from_rows(&rows).unwrap();
    let path = dir.path().join("iso.glan");
    EmbeddingDump::from_tensors(&[x.clone(), x]).unwrap().save(&path).unwrap();
    let recs = analyze(&analyze_args(path, dir.path().to_path_buf())).unwrap();
    assert!((find(&recs, "isoscore", 0) - 1.0).abs() < 1e-6);
    assert!((find(&recs, "cone_top10", 1) - 10.0 / d as f64).abs() < 1e-6);
}

#[test]
fn rank_one_dump_is_one_cone_and_one_grain() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(3);
    let v = rng.normal_vec(8, 1.0);
    let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let rows: Vec<Vec<f64>> = (0..12).map(|i| v.iter().map(|x| x / nv * 0.25 * i as f64).collect()).collect();
    let x = Tensor::from_rows(&rows).unwrap();
    let path = dir.path().join("rank1.glan");
    EmbeddingDump::from_tensors(&[x.clone(), x]).unwrap().save(&path).unwrap();
    let recs = analyze(&analyze_args(path, dir.path().to_path_buf())).unwrap();
    assert!((find(&recs, "cone_top10", 0) - 1.0).abs() < 1e-6);
    assert_eq!(find(&recs, "grain_count", 0), 1.0);
    assert_eq!(find(&recs, "pca_probe_efficiency", 1), 1.0);
}

#[test]
fn analyze_matches_library_calls() {
    let dir = tempfile::tempdir().unwrap();
    let p = Params::init(&tiny_config(Mode::Baseline, 1).model, 4).unwrap();
    let mut rng = Rng::new(5);
    let toks: Vec<usize> = (0..16).map(|_| rng.below(256)).collect();
    let trace = forward(&p, &toks).unwrap();
    let path = dir.path().join("dump.glan");
    let dump = EmbeddingDump::from_tensors(&trace.hidden).unwrap();
    dump.save(&path).unwrap();
    let o = geolan(&["analyze", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--plot"]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let recs = records(dir.path());
    for (l, x) in dump.to_tensors().unwrap().iter().enumerate() {
        assert!((find(&recs, "cone_top10", l) - cone_concentration(x, 10).unwrap()).abs() < 1e-12);
        assert!((find(&recs, "isoscore", l) - isoscore(x).unwrap()).abs() < 1e-12);
        assert_eq!(find(&recs, "pca_probe_efficiency", l), pca_probe_efficiency(x, 0.9).unwrap() as f64);
    }
    assert!(dir.path().join("cone_top10.svg").exists());
}

// ---- compare ----

#[test]
fn compare_hand_evaluated_groups() {
    let dir = tempfile::tempdir().unwrap();
    let runs = vec![
        fake_run(dir.path(), "geolan", 1, 0.0),
        fake_run(dir.path(), "geolan", 2, 2.0),
        fake_run(dir.path(), "control", 1, 2.0),
        fake_run(dir.path(), "control", 2, 4.0),
    ];
    let rows = compare_runs(&runs, &["cone_top10".to_string()]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].comparison, "geolan vs control");
    assert!((rows[0].d.unwrap() + 1.4142).abs() < 1e-4);
    assert!((rows[0].mean_diff + 2.0).abs() < 1e-12);
    let json_out = dir.path().join("cmp.json");
    let mut args = vec!["compare".to_string()];
    args.extend(runs.iter().map(|p| p.to_str().unwrap().to_string()));
    args.extend(["--metric".into(), "cone_top10".into(), "--json".into(), json_out.to_str().unwrap().into()]);
    let o = Command::new(env!("CARGO_BIN_EXE_geolan")).args(&args).output().unwrap();
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("-1.4142"));
}

#[test]
fn compare_refuses_single_seed_groups() {
    let dir = tempfile::tempdir().unwrap();
    let runs = vec![
        fake_run(dir.path(), "geolan", 1, 0.0),
        fake_run(dir.path(), "control", 1, 2.0),
        fake_run(dir.path(), "control", 2, 4.0),
    ];
    assert!(compare_runs(&runs, &["cone_top10".to_string()]).is_err());
    let args: Vec<&str> = ["compare"].into_iter().chain(runs.iter().map(|p| p.to_str().unwrap())).collect();
    assert_eq!(code(&geolan(&args)), EXIT_INPUT);
}

// ---- patch ----

fn patch_setup() -> (Params, Vec<Tensor>, Vec<Tensor>, Vec<usize>) {
    let p = Params::init(&tiny_config(Mode::Baseline, 1).model, 8).unwrap();
    let mut rng = Rng::new(9);
    let clean: Vec<usize> = (0..10).map(|_| rng.below(256)).collect();
    let mut corrupted = clean.clone();
    corrupted[3] = (corrupted[3] + 17) % 256;
    corrupted[9] = (corrupted[9] + 91) % 256;
    let hc = forward(&p, &clean).unwrap().hidden;
    let hx = forward(&p, &corrupted).unwrap().hidden;
    (p, hc, hx, corrupted)
}

fn all_tokens_row(r: &PatchReport) -> f64 {
    r.rows.iter().find(|g| g.grain.is_none()).unwrap().restoration.unwrap()
}

#[test]
fn patching_own_states_restores_nothing() {
    let (p, clean, corrupted_states, corrupted) = patch_setup();
    for layer in 0..=2 {
        let r = patch(&p, &clean, &corrupted_states, &corrupted, layer, None, 0.5).unwrap();
        for row in &r.rows {
            assert!(row.restoration.unwrap().abs() < 1e-9);
        }
    }
}

#[test]
fn patching_every_final_state_restores_fully() {
    let (p, clean, _, corrupted) = patch_setup();
    let r = patch(&p, &clean, &clean, &corrupted, 2, None, 0.5).unwrap();
    assert!((all_tokens_row(&r) - 1.0).abs() < 1e-9);
    assert!(patch(&p, &clean, &clean, &corrupted, 3, None, 0.5).is_err());
}

#[test]
fn bundled_configs_are_valid() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for mode in [Mode::Baseline, Mode::Control, Mode::Geolan] {
        let cfg = geolan_cli::cmd::train::read_config(&root.join(format!("desk-{}.json", mode.as_str()))).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.mode, mode);
        let mut expect = RunConfig::for_mode(mode);
        expect.model = cfg.model.clone();
        expect.seq_len = 32;
        expect.corpus_path = cfg.corpus_path.clone();
        expect.out_dir = cfg.out_dir.clone();
        assert_eq!(cfg, expect);
    }
}
