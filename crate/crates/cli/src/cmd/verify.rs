use std::path::Path;

use geolan_core::formats::load_checkpoint;
use geolan_core::geometry::{estimate_collapse_constant, RepresentationField, DEFAULT_EPS};
use geolan_core::model::{forward, ModelConfig, Params};
use geolan_core::numcore::{Rng, Stream};
use geolan_core::verify::{
    check_fourth_moment_with, random_attention, random_unit_cloud, verify_lipschitz_with, verify_packing_with,
    verify_probe_bound_with, verify_prop_a_with, verify_prop_b_with, CheckOptions, VerificationReport,
};

use super::write_text;
use crate::error::{CliError, CliResult};

pub const SUITES: &[&str] = &["moment", "prop_a", "prop_b", "probe", "packing", "lipschitz"];

fn micro_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 256,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_head: 8,
        max_seq: 16,
        ffn_mult: 2,
    }
}

fn suite(name: &str, trials: usize, rng: &mut Rng, opts: &CheckOptions, ckpt: Option<&Path>) -> CliResult<Vec<VerificationReport>> {
    let mut out = Vec::new();
    match name {
        "moment" => {
            for d in [2, 3, 8] {
                out.push(check_fourth_moment_with(d, 1000 * trials, rng, opts)?);
            }
        }
        "prop_a" => {
            for _ in 0..10 {
                let m = 8 + rng.below(57);
                let d = 2 + rng.below(7);
                out.push(verify_prop_a_with(&random_unit_cloud(m, d, rng)?, trials, rng, opts)?);
            }
        }
        "prop_b" => {
            for _ in 0..trials {
                let n = 2 + rng.below(15);
                let heads = (0..1 + rng.below(4))
                    .map(|_| random_attention(n, rng.below(2) == 0, rng))
                    .collect::<geolan_core::Result<Vec<_>>>()?;
                out.push(verify_prop_b_with(&heads, 1 + rng.below(n), opts)?);
            }
        }
        "probe" => {
            let m = 2 + rng.below(5);
            let d = 4 * m;
            let dims: Vec<usize> = (0..m).map(|_| 1 + rng.below(3)).collect();
            out.push(verify_probe_bound_with(&dims, d, 0.5, trials, rng, opts)?);
        }
        "packing" => {
            let hidden: Vec<_> = (0..3)
                .map(|_| random_unit_cloud(16, 3, rng))
                .collect::<geolan_core::Result<Vec<_>>>()?;
            let field = RepresentationField::from_layers(&hidden, 0.05)?;
            let ca = estimate_collapse_constant(&field, 32, DEFAULT_EPS, rng)?;
            let rep = verify_packing_with(&field, 4, ca.c_a, DEFAULT_EPS, 100 * trials, rng, opts)?;
            out.push(rep.disjoint_sum);
            out.push(rep.multiplicity);
        }
        "lipschitz" => {
            let params = match ckpt {
                Some(p) => load_checkpoint(p)?,
                None => Params::init(&micro_config(), rng.next_u64())?,
            };
            let cfg = &params.config;
            let n = cfg.max_seq.min(16);
            let bases = (0..4)
                .map(|_| {
                    let toks: Vec<usize> = (0..n).map(|_| rng.below(cfg.vocab_size)).collect();
                    forward(&params, &toks).map(|t| t.hidden[0].clone())
                })
                .collect::<geolan_core::Result<Vec<_>>>()?;
            let rep = verify_lipschitz_with(&params, &bases, 8, trials, rng, opts)?;
            out.push(rep.calibration);
            out.push(rep.holdout);
        }
        other => {
            return Err(CliError::Input(format!(
                "unknown suite {other:?}; expected default, all or one of {}",
                SUITES.join(", ")
            )))
        }
    }
    Ok(out)
}

/// Reports sorted by check name; the run fails iff a theorem-backed check has a violation.
pub fn run_suites(
    suite_name: &str,
    trials: usize,
    seed: u64,
    checkpoint: Option<&Path>,
    bound_scale: f64,
) -> CliResult<Vec<VerificationReport>> {
    if trials == 0 {
        return Err(CliError::Input("--trials must be >= 1".into()));
    }
    if !(bound_scale > 0.0 && bound_scale.is_finite()) {
        return Err(CliError::Input("bound scale must be > 0".into()));
    }
    let names: Vec<&str> = match suite_name {
        "default" | "all" => SUITES.to_vec(),
        s => vec![s],
    };
    let opts = CheckOptions { bound_scale };
    let mut reports = Vec::new();
    for name in names {
        let idx = SUITES.iter().position(|s| *s == name).unwrap_or(SUITES.len()) as u64;
        let mut rng = Rng::derive(seed, Stream::Verify, idx);
        reports.extend(suite(name, trials, &mut rng, &opts, checkpoint)?);
    }
    reports.sort_by(|a, b| a.check_name.cmp(&b.check_name));
    Ok(reports)
}

pub fn run(
    suite_name: &str,
    trials: usize,
    seed: u64,
    out: Option<&Path>,
    checkpoint: Option<&Path>,
    bound_scale: f64,
) -> CliResult<()> {
    let reports = run_suites(suite_name, trials, seed, checkpoint, bound_scale)?;
    let text = serde_json::to_string_pretty(&reports)?;
    match out {
        Some(p) => write_text(p, &text)?,
        None => println!("{text}"),
    }
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| r.theorem_backed && r.violations > 0)
        .map(|r| format!("{} ({} of {} trials; offending: {})", r.check_name, r.violations, r.trials, serde_json::Value::from(r.offending.clone())))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failed.join("; ")))
    }
}
