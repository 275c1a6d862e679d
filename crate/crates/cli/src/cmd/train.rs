use std::fs;
use std::path::{Path, PathBuf};

use geolan_core::formats::{save_checkpoint, EmbeddingDump, MetricsRecord};
use geolan_core::numcore::Tensor;
use geolan_core::trainer::{load_corpus, train, Mode, RunConfig, RunOutput};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::write_text;
use crate::error::{CliError, CliResult};

/// Identity of a finished run, stored as `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub run_id: String,
    pub mode: Mode,
    pub seed: u64,
    pub steps: u64,
}

pub fn read_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
    Ok(RunConfig::from_json(&text)?)
}

/// Per-head matrices stacked into one `layers·heads`-deep dump.
pub fn stack_heads(per_layer: &[Vec<Tensor>]) -> CliResult<EmbeddingDump> {
    let flat: Vec<Tensor> = per_layer.iter().flatten().cloned().collect();
    Ok(EmbeddingDump::from_tensors(&flat)?)
}

pub fn run(config: &Path, seed: Option<u64>, out: Option<&Path>) -> CliResult<(RunOutput, PathBuf)> {
    let cfg = read_config(config)?;
    let corpus_path = cfg
        .corpus_path
        .clone()
        .ok_or_else(|| CliError::Input("corpus_path: missing; the config must name a corpus file".into()))?;
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| CliError::Input("out_dir: missing; pass --out or set out_dir".into()))?;
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let corpus = load_corpus(&corpus_path)?;
    let result = train(&cfg, seed, &corpus)?;
    write_run(&out_dir, &cfg, &result)?;
    Ok((result, out_dir))
}

pub fn write_run(dir: &Path, cfg: &RunConfig, r: &RunOutput) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    write_text(&dir.join("runlog.jsonl"), &r.log.to_jsonl()?)?;
    save_checkpoint(&dir.join("ckpt.glan"), &r.params)?;
    EmbeddingDump::from_tensors(&r.eval.hidden)?.save(&dir.join("dump.glan"))?;
    stack_heads(&r.eval.attention)?.save(&dir.join("attn.glan"))?;
    stack_heads(&r.eval.queries)?.save(&dir.join("queries.glan"))?;
    write_text(&dir.join("tokens.json"), &serde_json::to_string(&r.eval.tokens)?)?;
    write_text(&dir.join("config.json"), &serde_json::to_string_pretty(cfg)?)?;
    let info = RunInfo {
        run_id: r.log.run_id.clone(),
        mode: r.log.mode,
        seed: r.log.seed,
        steps: cfg.steps,
    };
    write_text(&dir.join("run.json"), &serde_json::to_string_pretty(&info)?)?;
    let last = cfg.steps;
    let final_layer = json!({"layer": r.eval.hidden.len() - 1, "split": "eval"});
    let records = [
        MetricsRecord::new(&info.run_id, info.seed, last, "final_ce", r.log.final_ce().unwrap_or(f64::NAN), None),
        MetricsRecord::new(&info.run_id, info.seed, last, "ce", r.eval.ce, Some(json!({"split": "eval"}))),
        MetricsRecord::new(&info.run_id, info.seed, last, "cone_top10", r.eval.cone_top10, Some(final_layer)),
    ];
    let mut text = String::new();
    for rec in records {
        text.push_str(&rec?.to_line()?);
        text.push('\n');
    }
    write_text(&dir.join("metrics.jsonl"), &text)
}
