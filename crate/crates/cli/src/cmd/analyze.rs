use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use geolan_core::formats::{EmbeddingDump, MetricsRecord};
use geolan_core::geometry::{estimate_collapse_constant, estimate_head_constant, grain_decompose, RepresentationField, DEFAULT_EPS};
use geolan_core::metrics::{cone_concentration, isoscore, pca_probe_efficiency};
use geolan_core::numcore::{normalized_entropy, svd, Rng, Stream, Tensor};
use geolan_core::Error as CoreError;
use serde_json::{json, Value};

use super::write_text;
use crate::error::{CliError, CliResult};
use crate::plot::line_plot;

/// Regions sampled per collapse-constant estimate.
pub const ANALYZE_REGIONS: usize = 32;
/// Variance share for the probe-efficiency count.
pub const PROBE_TAU: f64 = 0.9;

#[derive(Clone, Debug)]
pub struct AnalyzeArgs {
    pub dump: PathBuf,
    pub delta: f64,
    pub out: PathBuf,
    pub attn: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub heads: usize,
    pub seed: u64,
    pub run_id: Option<String>,
    pub plot: bool,
}

fn load(path: &Path) -> CliResult<EmbeddingDump> {
    EmbeddingDump::load(path).map_err(|e| match e {
        CoreError::Io(io) => CliError::Input(format!("{}: {io}", path.display())),
        other => CliError::Corrupt(format!("{}: {other}", path.display())),
    })
}

/// `Ok(None)` for spectra too degenerate to score.
fn optional(r: geolan_core::Result<f64>) -> CliResult<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(CoreError::Degenerate(_) | CoreError::Undefined(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Metric records for every layer of a dump, in a fixed order.
pub fn analyze(args: &AnalyzeArgs) -> CliResult<Vec<MetricsRecord>> {
    if !(args.delta > 0.0 && args.delta.is_finite()) {
        return Err(CliError::Input("--delta must be > 0".into()));
    }
    if args.heads == 0 {
        return Err(CliError::Input("--heads must be >= 1".into()));
    }
    let dump = load(&args.dump)?;
    let layers = dump.to_tensors()?;
    let run_id = args.run_id.clone().unwrap_or_else(|| {
        args.dump
            .parent()
            .and_then(|p| p.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into())
    });
    let mut out = Vec::new();
    let mut push = |metric: &str, value: f64, extra: Value| -> CliResult<()> {
        out.push(MetricsRecord::new(&run_id, args.seed, 0, metric, value, Some(extra))?);
        Ok(())
    };
    let d = dump.dim as usize;
    for (l, x) in layers.iter().enumerate() {
        let at = json!({ "layer": l });
        for (name, k) in [("cone_top10", 10), ("cone_top50", 50)] {
            if let Some(v) = optional(cone_concentration(x, k.min(d)))? {
                push(name, v, json!({ "layer": l, "k": k.min(d) }))?;
            }
        }
        if let Some(v) = optional(isoscore(x))? {
            push("isoscore", v, at.clone())?;
        }
        if let Some(v) = optional(pca_probe_efficiency(x, PROBE_TAU).map(|k| k as f64))? {
            push("pca_probe_efficiency", v, json!({ "layer": l, "tau": PROBE_TAU }))?;
        }
        let field = RepresentationField::instantaneous(x, l, args.delta)?;
        push("grain_count", grain_decompose(&field)?.n_grains as f64, at.clone())?;
        let mut rng = Rng::derive(args.seed, Stream::Regions, l as u64);
        let ca = estimate_collapse_constant(&field, ANALYZE_REGIONS, DEFAULT_EPS, &mut rng)?;
        if ca.c_a.is_finite() {
            push("c_a", ca.c_a, json!({ "layer": l, "ln_c_a": ca.ln_c_a, "eps": DEFAULT_EPS }))?;
        }
    }
    let traj = RepresentationField::from_layers(&layers, args.delta)?;
    push(
        "grain_count",
        grain_decompose(&traj)?.n_grains as f64,
        json!({ "field": "trajectories" }),
    )?;
    if let Some(p) = &args.queries {
        let q = load(p)?.to_tensors()?;
        for (l, heads) in per_layer(&q, args.heads)?.iter().enumerate() {
            let fields = heads
                .iter()
                .map(|t| RepresentationField::instantaneous(t, l, args.delta))
                .collect::<geolan_core::Result<Vec<_>>>()?;
            let mut rng = Rng::derive(args.seed, Stream::Regions, 1000 + l as u64);
            let cb = estimate_head_constant(&fields, ANALYZE_REGIONS, &mut rng)?;
            push("c_b", cb, json!({ "layer": l }))?;
        }
    }
    if let Some(p) = &args.attn {
        let a = load(p)?.to_tensors()?;
        for (l, heads) in per_layer(&a, args.heads)?.iter().enumerate() {
            for (h, m) in heads.iter().enumerate() {
                let e = normalized_entropy(&svd(m)?.sigma)?;
                push("spectral_entropy", e, json!({ "layer": l, "head": h }))?;
            }
        }
    }
    Ok(out)
}

fn per_layer(stack: &[Tensor], heads: usize) -> CliResult<Vec<Vec<Tensor>>> {
    if stack.len() % heads != 0 {
        return Err(CliError::Corrupt(format!(
            "dump depth {} is not a multiple of {heads} heads",
            stack.len()
        )));
    }
    Ok(stack.chunks(heads).map(|c| c.to_vec()).collect())
}

pub fn run(args: &AnalyzeArgs) -> CliResult<Vec<MetricsRecord>> {
    let records = analyze(args)?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&r.to_line()?);
        text.push('\n');
    }
    write_text(&args.out.join("metrics.jsonl"), &text)?;
    if args.plot {
        let mut series: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in &records {
            let layer = r.extra.as_ref().and_then(|e| e.get("layer")).and_then(Value::as_u64);
            if let (Some(l), None) = (layer, r.extra.as_ref().and_then(|e| e.get("head"))) {
                let s = series.entry(r.metric.as_str()).or_default();
                if s.len() <= l as usize {
                    s.resize(l as usize + 1, f64::NAN);
                }
                s[l as usize] = r.value;
            }
        }
        for (name, ys) in series {
            write_text(&args.out.join(format!("{name}.svg")), &line_plot(name, &ys))?;
        }
    }
    Ok(records)
}
