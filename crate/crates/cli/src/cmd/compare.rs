use std::collections::BTreeMap;
use std::fmt::Write;
use std::fs;
use std::path::Path;

use geolan_core::formats::{validate_metric, MetricsRecord};
use geolan_core::metrics::{cohens_d, mean, welch_p};
use geolan_core::trainer::Mode;
use serde::{Deserialize, Serialize};

use super::train::RunInfo;
use super::write_text;
use crate::error::{CliError, CliResult};

/// One line of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub comparison: String,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_diff: f64,
    /// `None` when the pooled variance is zero.
    pub d: Option<f64>,
    pub p: Option<f64>,
}

/// Mean difference `a − b`, Cohen's d and the Welch p-value.
pub fn compare_groups(metric: &str, label: &str, a: &[f64], b: &[f64]) -> CliResult<ComparisonRow> {
    if a.len() < 2 || b.len() < 2 {
        return Err(CliError::Input(format!(
            "{label}: each group needs at least 2 seeds, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let undefined = |r: geolan_core::Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(geolan_core::Error::Undefined(_)) => Ok(None),
        Err(e) => Err(CliError::from(e)),
    };
    let same = a == b;
    Ok(ComparisonRow {
        metric: metric.to_string(),
        comparison: label.to_string(),
        n_a: a.len(),
        n_b: b.len(),
        mean_diff: mean(a) - mean(b),
        d: if same { Some(0.0) } else { undefined(cohens_d(a, b))? },
        p: if same { Some(1.0) } else { undefined(welch_p(a, b))? },
    })
}

/// Metric values grouped by mode, read from each run's `run.json` and `metrics.jsonl`.
pub fn collect(runs: &[impl AsRef<Path>], metric: &str) -> CliResult<BTreeMap<Mode, Vec<f64>>> {
    validate_metric(metric)?;
    let mut groups: BTreeMap<Mode, Vec<(u64, f64)>> = BTreeMap::new();
    for dir in runs {
        let dir = dir.as_ref();
        let info: RunInfo = serde_json::from_str(&fs::read_to_string(dir.join("run.json"))?)
            .map_err(|e| CliError::Corrupt(format!("{}: {e}", dir.join("run.json").display())))?;
        let text = fs::read_to_string(dir.join("metrics.jsonl"))?;
        let recs = MetricsRecord::parse_lines(&text).map_err(|e| CliError::Corrupt(format!("{}: {e}", dir.display())))?;
        let v = recs
            .iter()
            .find(|r| r.metric == metric)
            .ok_or_else(|| CliError::Input(format!("{}: no {metric} record", dir.display())))?;
        groups.entry(info.mode).or_default().push((info.seed, v.value));
    }
    // Seed order, so the table does not depend on argument order.
    Ok(groups
        .into_iter()
        .map(|(m, mut xs)| {
            xs.sort_by_key(|x| x.0);
            (m, xs.into_iter().map(|x| x.1).collect())
        })
        .collect())
}

/// Pairs in the order geolan/control, geolan/baseline, control/baseline, restricted to modes present.
pub fn compare_runs(runs: &[impl AsRef<Path>], metrics: &[String]) -> CliResult<Vec<ComparisonRow>> {
    let mut rows = Vec::new();
    for metric in metrics {
        let groups = collect(runs, metric)?;
        if groups.len() < 2 {
            return Err(CliError::Input("need runs from at least two modes".into()));
        }
        for (m, xs) in &groups {
            if xs.len() < 2 {
                return Err(CliError::Input(format!(
                    "group {} has {} seed(s); at least 2 are needed",
                    m.as_str(),
                    xs.len()
                )));
            }
        }
        let order = [Mode::Geolan, Mode::Control, Mode::Baseline];
        for (i, a) in order.iter().enumerate() {
            for b in &order[i + 1..] {
                if let (Some(xa), Some(xb)) = (groups.get(a), groups.get(b)) {
                    let label = format!("{} vs {}", a.as_str(), b.as_str());
                    rows.push(compare_groups(metric, &label, xa, xb)?);
                }
            }
        }
    }
    Ok(rows)
}

pub fn render_table(rows: &[ComparisonRow]) -> String {
    let fmt = |x: Option<f64>| x.map_or("undefined".to_string(), |v| format!("{v:.4}"));
    let mut s = String::new();
    let _ = writeln!(s, "{:<20} {:<22} {:>12} {:>10} {:>10}", "metric", "comparison", "mean_diff", "p", "d");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<20} {:<22} {:>12.6} {:>10} {:>10}",
            r.metric,
            r.comparison,
            r.mean_diff,
            fmt(r.p),
            fmt(r.d)
        );
    }
    s
}

pub fn run(runs: &[impl AsRef<Path>], metrics: &[String], json: Option<&Path>) -> CliResult<Vec<ComparisonRow>> {
    let rows = compare_runs(runs, metrics)?;
    print!("{}", render_table(&rows));
    if let Some(p) = json {
        write_text(p, &serde_json::to_string_pretty(&rows)?)?;
    }
    Ok(rows)
}
