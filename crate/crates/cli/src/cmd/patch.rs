use std::fs;
use std::path::{Path, PathBuf};

use geolan_core::formats::{load_checkpoint, EmbeddingDump};
use geolan_core::geometry::{grain_decompose, RepresentationField};
use geolan_core::model::{forward, patch_forward, readout, Params};
use geolan_core::numcore::Tensor;
use serde::{Deserialize, Serialize};

use super::write_text;
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug)]
pub struct PatchArgs {
    pub checkpoint: PathBuf,
    pub clean: PathBuf,
    pub corrupted: PathBuf,
    pub layer: usize,
    pub grain: Option<usize>,
    pub delta: f64,
    pub sequence: usize,
    pub donor: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrainRestoration {
    /// Grain index, or `None` for the all-token patch.
    pub grain: Option<usize>,
    pub tokens: Vec<usize>,
    pub patched_margin: f64,
    /// `(patched − corrupted) / (clean − corrupted)`; `None` when the denominator vanishes.
    pub restoration: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchReport {
    pub layer: usize,
    pub n_grains: usize,
    pub correct_token: usize,
    pub clean_margin: f64,
    pub corrupted_margin: f64,
    pub rows: Vec<GrainRestoration>,
}

/// Logit of `correct` minus the best competing logit, at the last position.
pub fn final_margin(logits: &Tensor, correct: usize) -> f64 {
    let row = logits.row(logits.rows() - 1);
    let rival = row
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != correct)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    row[correct] - rival
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
        .0
}

pub fn read_tokens(path: &Path) -> CliResult<Vec<usize>> {
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_slice(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    } else {
        Ok(bytes.into_iter().map(usize::from).collect())
    }
}

/// Rows of every layer belonging to sequence `seq` of length `n`.
fn sequence_states(dump: &EmbeddingDump, seq: usize, n: usize, cfg_layers: usize, d: usize) -> CliResult<Vec<Tensor>> {
    let rows = dump.tokens as usize;
    if dump.layers as usize != cfg_layers + 1 || dump.dim as usize != d || rows < (seq + 1) * n {
        return Err(CliError::Corrupt(format!(
            "dump is {}x{}x{}, model needs {} layers of width {d} and at least {} tokens",
            dump.layers,
            dump.tokens,
            dump.dim,
            cfg_layers + 1,
            (seq + 1) * n
        )));
    }
    (0..dump.layers as usize)
        .map(|l| Ok(dump.layer(l)?.row_range(seq * n, (seq + 1) * n)))
        .collect()
}

pub fn patch(params: &Params, clean: &[Tensor], donor: &[Tensor], corrupted: &[usize], layer: usize, grain: Option<usize>, delta: f64) -> CliResult<PatchReport> {
    let cfg = &params.config;
    if layer > cfg.n_layers {
        return Err(CliError::Input(format!("--layer {layer} beyond {} blocks", cfg.n_layers)));
    }
    let clean_logits = readout(params, &clean[cfg.n_layers])?;
    let correct = argmax(clean_logits.row(clean_logits.rows() - 1));
    let clean_margin = final_margin(&clean_logits, correct);
    let corrupted_margin = final_margin(&forward(params, corrupted)?.logits, correct);
    let grains = grain_decompose(&RepresentationField::from_layers(clean, delta)?)?;
    let mut sets: Vec<(Option<usize>, Vec<usize>)> = match grain {
        Some(g) if g >= grains.n_grains => {
            return Err(CliError::Input(format!("--grain {g} but only {} grains", grains.n_grains)))
        }
        Some(g) => vec![(Some(g), grains.members(g))],
        None => (0..grains.n_grains).map(|g| (Some(g), grains.members(g))).collect(),
    };
    sets.push((None, (0..corrupted.len()).collect()));
    let denom = clean_margin - corrupted_margin;
    let mut rows = Vec::with_capacity(sets.len());
    for (g, toks) in sets {
        let d = donor[layer].select_rows(&toks);
        let tr = patch_forward(params, corrupted, layer, &toks, &d)?;
        let m = final_margin(&tr.logits, correct);
        rows.push(GrainRestoration {
            grain: g,
            tokens: toks,
            patched_margin: m,
            restoration: (denom.abs() > 1e-12).then(|| (m - corrupted_margin) / denom),
        });
    }
    Ok(PatchReport {
        layer,
        n_grains: grains.n_grains,
        correct_token: correct,
        clean_margin,
        corrupted_margin,
        rows,
    })
}

pub fn run(a: &PatchArgs) -> CliResult<PatchReport> {
    if !(a.delta > 0.0) {
        return Err(CliError::Input("--delta must be > 0".into()));
    }
    let params = load_checkpoint(&a.checkpoint)?;
    let corrupted = read_tokens(&a.corrupted)?;
    let cfg = &params.config;
    if corrupted.is_empty() || corrupted.len() > cfg.max_seq || corrupted.iter().any(|&t| t >= cfg.vocab_size) {
        return Err(CliError::Input(format!(
            "corrupted tokens must be 1..={} ids below {}",
            cfg.max_seq, cfg.vocab_size
        )));
    }
    let n = corrupted.len();
    let clean = sequence_states(&EmbeddingDump::load(&a.clean)?, a.sequence, n, cfg.n_layers, cfg.d_model)?;
    let donor = match &a.donor {
        Some(p) => sequence_states(&EmbeddingDump::load(p)?, a.sequence, n, cfg.n_layers, cfg.d_model)?,
        None => clean.clone(),
    };
    let report = patch(&params, &clean, &donor, &corrupted, a.layer, a.grain, a.delta)?;
    let text = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => write_text(p, &text)?,
        None => println!("{text}"),
    }
    Ok(report)
}
