//! Training loop, batching over a byte corpus, and multi-seed orchestration.

mod optim;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geoloss::{kt_attn_loss, kt_cw_loss, lambdas, total_loss, RegularizerConfig};
use crate::metrics::cone_concentration;
use crate::model::{build_graph, load_params, loss_ce, ModelConfig, Params};
use crate::numcore::{Rng, Stream, Tape, Tensor};

pub use optim::AdamW;

/// Weight decay used by the control arm.
pub const CONTROL_WEIGHT_DECAY: f64 = 0.10;
/// Sequences in the held-out evaluation batch.
pub const EVAL_SEQUENCES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Control,
    Geolan,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Control => "control",
            Mode::Geolan => "geolan",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "control" => Ok(Mode::Control),
            "geolan" => Ok(Mode::Geolan),
            _ => Err(Error::Input(format!("mode must be baseline, control or geolan, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub regularizer: RegularizerConfig,
    pub mode: Mode,
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub seeds: Vec<u64>,
    pub corpus_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

fn default_eps() -> f64 {
    1e-8
}

impl RunConfig {
    /// Desk-scale defaults with the mode's weight decay and regularizer targets applied.
    pub fn for_mode(mode: Mode) -> Self {
        let mut c = Self {
            model: ModelConfig::default(),
            regularizer: RegularizerConfig::default(),
            mode,
            lr: 3e-4,
            weight_decay: 0.0,
            betas: (0.9, 0.999),
            eps: 1e-8,
            steps: 2000,
            batch_size: 8,
            seq_len: 64,
            seeds: vec![42, 128, 1008, 3407],
            corpus_path: None,
            out_dir: None,
        };
        c.apply_mode(mode);
        c
    }

    /// Rewrites weight decay and regularizer targets to the mode's values.
    pub fn apply_mode(&mut self, mode: Mode) {
        let paper = RegularizerConfig::default();
        self.mode = mode;
        let (wd, l1, l2) = match mode {
            Mode::Baseline => (0.0, 0.0, 0.0),
            Mode::Control => (CONTROL_WEIGHT_DECAY, 0.0, 0.0),
            Mode::Geolan => (0.0, paper.lambda1_target, paper.lambda2_target),
        };
        self.weight_decay = wd;
        self.regularizer.lambda1_target = l1;
        self.regularizer.lambda2_target = l2;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.regularizer.validate()?;
        ensure!(self.lr > 0.0 && self.lr.is_finite(), Input, "lr must be > 0");
        ensure!(
            (0.0..1.0).contains(&self.betas.0) && (0.0..1.0).contains(&self.betas.1),
            Input,
            "betas must lie in [0, 1)"
        );
        ensure!(self.eps > 0.0, Input, "eps must be > 0");
        ensure!(self.batch_size >= 1, Input, "batch_size must be >= 1");
        ensure!(
            self.seq_len >= 2 && self.seq_len <= self.model.max_seq,
            Input,
            "seq_len must be in 2..={}",
            self.model.max_seq
        );
        ensure!(!self.seeds.is_empty(), Input, "seeds must not be empty");
        let r = &self.regularizer;
        let zero_lambda = r.lambda1_target == 0.0 && r.lambda2_target == 0.0;
        match self.mode {
            Mode::Baseline => ensure!(
                zero_lambda && self.weight_decay == 0.0,
                Input,
                "mode baseline requires lambda targets 0 and weight_decay 0"
            ),
            Mode::Control => ensure!(
                zero_lambda && self.weight_decay == CONTROL_WEIGHT_DECAY,
                Input,
                "mode control requires lambda targets 0 and weight_decay {CONTROL_WEIGHT_DECAY}"
            ),
            Mode::Geolan => ensure!(self.weight_decay == 0.0, Input, "mode geolan requires weight_decay 0"),
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Input(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }
}

/// Reads a corpus as bytes; each byte is a token.
pub fn load_corpus(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Input(format!("corpus_path {}: {e}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

impl Batch {
    pub fn flat_targets(&self) -> Vec<usize> {
        self.targets.iter().flatten().copied().collect()
    }
}

/// Endless stream of random contiguous windows; targets are the inputs shifted by one.
pub struct BatchIter<'a> {
    corpus: &'a [u8],
    seq_len: usize,
    batch_size: usize,
    rng: Rng,
}

pub fn batch_iter(corpus: &[u8], seq_len: usize, batch_size: usize, rng: Rng) -> Result<BatchIter<'_>> {
    ensure!(seq_len >= 1 && batch_size >= 1, Input, "seq_len and batch_size must be >= 1");
    ensure!(
        corpus.len() > seq_len,
        Input,
        "corpus has {} bytes, need at least seq_len + 1 = {}",
        corpus.len(),
        seq_len + 1
    );
    Ok(BatchIter {
        corpus,
        seq_len,
        batch_size,
        rng,
    })
}

impl BatchIter<'_> {
    /// Start offset of the next window.
    pub fn next_start(&mut self) -> usize {
        self.rng.below(self.corpus.len() - self.seq_len)
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;
    fn next(&mut self) -> Option<Batch> {
        let mut inputs = Vec::with_capacity(self.batch_size);
        let mut targets = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            let s = self.next_start();
            let w = &self.corpus[s..s + self.seq_len + 1];
            inputs.push(w[..self.seq_len].iter().map(|&b| b as usize).collect());
            targets.push(w[1..].iter().map(|&b| b as usize).collect());
        }
        Some(Batch { inputs, targets })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub ce: f64,
    pub cw: f64,
    pub attn: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub probe_seed: Option<u64>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub run_id: String,
    pub mode: Mode,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub checkpoint: Option<String>,
}

impl RunLog {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for s in &self.steps {
            let mut v = serde_json::to_value(s)?;
            v["run_id"] = self.run_id.clone().into();
            v["mode"] = self.mode.as_str().into();
            v["seed"] = self.seed.into();
            out.push_str(&serde_json::to_string(&v)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut steps = Vec::new();
        let mut head: Option<(String, Mode, u64)> = None;
        for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let v: serde_json::Value = serde_json::from_str(line)?;
            let id = v["run_id"].as_str().ok_or_else(|| Error::Corrupt(format!("line {i}: no run_id")))?;
            let mode: Mode = serde_json::from_value(v["mode"].clone())?;
            let seed = v["seed"].as_u64().ok_or_else(|| Error::Corrupt(format!("line {i}: no seed")))?;
            match &head {
                None => head = Some((id.to_string(), mode, seed)),
                Some(h) => ensure!(h.0 == id && h.1 == mode && h.2 == seed, Corrupt, "line {i} belongs to another run"),
            }
            steps.push(serde_json::from_value(v)?);
        }
        let (run_id, mode, seed) = head.ok_or_else(|| Error::Corrupt("empty run log".into()))?;
        Ok(Self {
            run_id,
            mode,
            seed,
            steps,
            checkpoint: None,
        })
    }

    /// Largest `|total − (ce + λ1·cw + λ2·attn)|` over the logged steps.
    pub fn decomposition_error(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| (s.total - (s.ce + s.lambda1 * s.cw + s.lambda2 * s.attn)).abs())
            .fold(0.0, f64::max)
    }

    pub fn final_ce(&self) -> Option<f64> {
        self.steps.last().map(|s| s.ce)
    }
}

pub fn run_id(mode: Mode, seed: u64) -> String {
    format!("{}-{seed}", mode.as_str())
}

/// Losses for one step; weights that are zero skip their term entirely, probe draws included.
fn step_losses(
    params: &Params,
    cfg: &RunConfig,
    batch: &Batch,
    step: u64,
    seed: u64,
) -> Result<(StepRecord, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = load_params(&mut tape, params, true);
    let g = build_graph(&mut tape, &vars, &cfg.model, &batch.inputs, None)?;
    let ce = loss_ce(&mut tape, g.logits, &batch.flat_targets())?;
    let (l1, l2) = lambdas(step, &cfg.regularizer);
    let mut cw_terms = Vec::new();
    let mut probe_seed = None;
    if l1 != 0.0 {
        let ps = Rng::derive_seed(seed, Stream::Probes, step);
        probe_seed = Some(ps);
        let mut prng = Rng::new(ps);
        for &h in &g.hidden {
            let z = tape.normalize_rows(h)?;
            let (loss, _) = kt_cw_loss(&mut tape, z, cfg.regularizer.n_probes, &mut prng)?;
            cw_terms.push(loss);
        }
    }
    let mut attn_terms = Vec::new();
    if l2 != 0.0 {
        let r = cfg.regularizer.rank_cap(g.seq_len, cfg.model.d_head);
        for layer in &g.attention {
            let mut per_seq = Vec::with_capacity(layer.len());
            for heads in layer {
                per_seq.push(kt_attn_loss(&mut tape, heads, r)?);
            }
            let mut s = per_seq[0];
            for &t in &per_seq[1..] {
                s = tape.add(s, t)?;
            }
            attn_terms.push(tape.scale(s, 1.0 / layer.len() as f64));
        }
    }
    let total = total_loss(&mut tape, ce, &cw_terms, &attn_terms, step, &cfg.regularizer)?;
    let sum = |ts: &[crate::numcore::Var]| ts.iter().fold(0.0, |acc, &v| acc + tape.scalar(v));
    let rec = StepRecord {
        step,
        ce: tape.scalar(ce),
        cw: sum(&cw_terms),
        attn: sum(&attn_terms),
        total: tape.scalar(total),
        lambda1: l1,
        lambda2: l2,
        probe_seed,
        wall_ms: 0.0,
    };
    if !rec.total.is_finite() {
        let diag = serde_json::json!({
            "step": step,
            "lambda1": l1,
            "lambda2": l2,
            "ce": rec.ce,
            "cw": rec.cw,
            "attn": rec.attn,
            "batch_inputs": batch.inputs,
        });
        return Err(Error::NonFinite(format!("loss is not finite; diagnostic: {diag}")));
    }
    let mut grads = tape.backward(total)?;
    let gs = vars.iter().map(|&v| grads.take(v)).collect();
    Ok((rec, gs))
}

/// Result of one training run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub log: RunLog,
    pub params: Params,
    pub eval: EvalResult,
}

/// Trains one seed on an in-memory corpus.
pub fn train(cfg: &RunConfig, seed: u64, corpus: &[u8]) -> Result<RunOutput> {
    cfg.validate()?;
    let mut params = Params::init(&cfg.model, seed)?;
    let mut opt = AdamW::new(&params, cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay);
    let batches = batch_iter(corpus, cfg.seq_len, cfg.batch_size, Rng::derive(seed, Stream::Batches, 0))?;
    let mut steps = Vec::with_capacity(cfg.steps as usize);
    for (step, batch) in (0..cfg.steps).zip(batches) {
        let t0 = Instant::now();
        let (mut rec, grads) = step_losses(&params, cfg, &batch, step, seed)?;
        opt.step(&mut params, &grads)?;
        rec.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        steps.push(rec);
    }
    let eval = evaluate(&params, corpus, cfg.seq_len, EVAL_SEQUENCES, seed)?;
    Ok(RunOutput {
        log: RunLog {
            run_id: run_id(cfg.mode, seed),
            mode: cfg.mode,
            seed,
            steps,
            checkpoint: None,
        },
        params,
        eval,
    })
}

/// Reads the corpus named in the config and trains every seed.
pub fn run_suite(cfg: &RunConfig, seeds: &[u64]) -> Result<Vec<RunOutput>> {
    let path = cfg
        .corpus_path
        .as_ref()
        .ok_or_else(|| Error::Input("corpus_path is required".into()))?;
    let corpus = load_corpus(path)?;
    run_suite_on(cfg, seeds, &corpus)
}

/// Independent runs, one thread per seed, returned in seed-list order.
pub fn run_suite_on(cfg: &RunConfig, seeds: &[u64], corpus: &[u8]) -> Result<Vec<RunOutput>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = seeds.iter().map(|&seed| s.spawn(move || train(cfg, seed, corpus))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Input("training thread panicked".into()))))
            .collect()
    })
}

/// Held-out statistics on a fixed evaluation batch.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub ce: f64,
    /// `L+1` states, each `(sequences·seq_len) × d`.
    pub hidden: Vec<Tensor>,
    /// Attention of the first sequence, `[layer][head]`.
    pub attention: Vec<Vec<Tensor>>,
    /// Queries `[layer][head]`, all sequences stacked.
    pub queries: Vec<Vec<Tensor>>,
    pub tokens: Vec<Vec<usize>>,
    /// Share of centred variance in the top 10 directions of the final stream.
    pub cone_top10: f64,
}

pub fn evaluate(params: &Params, corpus: &[u8], seq_len: usize, n_seqs: usize, seed: u64) -> Result<EvalResult> {
    let batch = batch_iter(corpus, seq_len, n_seqs, Rng::derive(seed, Stream::Eval, 0))?
        .next()
        .expect("batch iterator is endless");
    let mut tape = Tape::new();
    let vars = load_params(&mut tape, params, false);
    let g = build_graph(&mut tape, &vars, &params.config, &batch.inputs, None)?;
    let ce_var = loss_ce(&mut tape, g.logits, &batch.flat_targets())?;
    let ce = tape.scalar(ce_var);
    let hidden: Vec<Tensor> = g.hidden.iter().map(|&h| tape.value(h).clone()).collect();
    let attention = g
        .attention
        .iter()
        .map(|l| l[0].iter().map(|&a| tape.value(a).clone()).collect())
        .collect();
    let mut queries = Vec::with_capacity(g.queries.len());
    for layer in &g.queries {
        let heads = layer[0].len();
        let mut per_head = Vec::with_capacity(heads);
        for h in 0..heads {
            let rows: Vec<Vec<f64>> = layer.iter().flat_map(|seq| tape.value(seq[h]).to_rows()).collect();
            per_head.push(Tensor::from_rows(&rows)?);
        }
        queries.push(per_head);
    }
    let k = 10.min(params.config.d_model);
    let cone_top10 = cone_concentration(hidden.last().expect("at least the embedding layer"), k)?;
    Ok(EvalResult {
        ce,
        hidden,
        attention,
        queries,
        tokens: batch.inputs,
        cone_top10,
    })
}
