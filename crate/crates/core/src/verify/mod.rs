//! Brute-force checks of the representation bounds.

mod bounds;
mod estimators;

pub use bounds::{
    check_fourth_moment, check_fourth_moment_with, controlled_subspaces, fourth_moment_closed_form,
    fourth_moment_monte_carlo, probe_extremal_case, random_attention, random_symmetric, random_unit_cloud,
    verify_probe_bound, verify_probe_bound_with, verify_prop_a, verify_prop_a_with, verify_prop_b,
    verify_prop_b_with, ProbeTrialSetup,
};
pub use estimators::{
    sample_disjoint_balls, tube_volume_constant, verify_lipschitz, verify_lipschitz_with, verify_packing,
    verify_packing_with, LipschitzReport, PackingReport, MAX_REGION_RETRIES,
};

use serde::{Deserialize, Serialize};

/// Absolute slack allowed before an observation counts as a violation.
pub const SLACK_TOL: f64 = 1e-9;
/// Offending cases kept verbatim in a report.
const MAX_OFFENDERS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check_name: String,
    pub trials: usize,
    pub violations: usize,
    /// Minimum of `bound − observed` over all comparisons.
    pub worst_slack: f64,
    pub parameters: serde_json::Value,
    /// Whether a violation contradicts a theorem (as opposed to an estimate).
    pub theorem_backed: bool,
    pub notes: Vec<String>,
    pub offending: Vec<serde_json::Value>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn violation_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.violations as f64 / self.trials as f64
        }
    }
}

/// Knobs shared by every check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckOptions {
    /// Multiplies every bound before comparison; 1 in normal use.
    pub bound_scale: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { bound_scale: 1.0 }
    }
}

/// Accumulates bound comparisons into a report.
pub(crate) struct Tally {
    report: VerificationReport,
    scale: f64,
}

impl Tally {
    pub fn new(name: &str, theorem_backed: bool, parameters: serde_json::Value, opts: &CheckOptions) -> Self {
        Self {
            report: VerificationReport {
                check_name: name.to_string(),
                trials: 0,
                violations: 0,
                worst_slack: f64::INFINITY,
                parameters,
                theorem_backed,
                notes: Vec::new(),
                offending: Vec::new(),
            },
            scale: opts.bound_scale,
        }
    }

    pub fn trial(&mut self) {
        self.report.trials += 1;
    }

    /// Compares one observation; returns whether it violated the bound.
    pub fn check(&mut self, observed: f64, bound: f64, context: impl FnOnce() -> serde_json::Value) -> bool {
        let bound = bound * self.scale;
        let slack = bound - observed;
        if slack < self.report.worst_slack || slack.is_nan() {
            self.report.worst_slack = slack;
        }
        let bad = observed > bound + SLACK_TOL || observed.is_nan() || bound.is_nan();
        if bad {
            self.report.violations += 1;
            if self.report.offending.len() < MAX_OFFENDERS {
                let mut v = context();
                if let Some(obj) = v.as_object_mut() {
                    obj.insert("observed".into(), observed.into());
                    obj.insert("bound".into(), bound.into());
                }
                self.report.offending.push(v);
            }
        }
        bad
    }

    pub fn note(&mut self, s: impl Into<String>) {
        let s = s.into();
        if !self.report.notes.contains(&s) {
            self.report.notes.push(s);
        }
    }

    pub fn finish(mut self) -> VerificationReport {
        if self.report.worst_slack == f64::INFINITY {
            self.report.worst_slack = f64::NAN;
        }
        self.report
    }
}
