//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every export takes plain numbers and returns a JSON string.

use geolan_core::geoloss::{kt_attn_loss, kt_cw_closed_form, kt_cw_loss_with_probes, draw_probes, normalize_rows};
use geolan_core::geometry::{grain_decompose, RepresentationField};
use geolan_core::metrics::{cone_concentration, isoscore};
use geolan_core::numcore::{svd, Rng, Tape, Tensor};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn to_js(r: geolan_core::Result<Value>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

/// Gaussian cloud whose axis `j` has scale `exp(−anisotropy · j/(d−1))`.
pub fn anisotropic_cloud(m: usize, d: usize, anisotropy: f64, rng: &mut Rng) -> geolan_core::Result<Tensor> {
    let denom = (d.max(2) - 1) as f64;
    let data = (0..m)
        .flat_map(|_| (0..d).map(|j| (-anisotropy * j as f64 / denom).exp()).collect::<Vec<_>>())
        .map(|s| s * rng.normal())
        .collect();
    Tensor::matrix(m, d, data)
}

pub fn isotropy_report(m: usize, d: usize, anisotropy: f64, n_probes: usize, seed: u64) -> geolan_core::Result<Value> {
    let mut rng = Rng::new(seed);
    let z = normalize_rows(&anisotropic_cloud(m, d, anisotropy, &mut rng)?)?;
    let probes = draw_probes(n_probes, d, &mut rng)?;
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let mc = kt_cw_loss_with_probes(&mut tape, zv, &probes)?;
    let points: Vec<[f64; 2]> = (0..m).map(|i| [z.at(i, 0), z.at(i, 1.min(d - 1))]).collect();
    Ok(json!({
        "closed_form": kt_cw_closed_form(&z)?,
        "monte_carlo": tape.scalar(mc),
        "top1_share": cone_concentration(&z, 1)?,
        "isoscore": isoscore(&z)?,
        "points": points,
    }))
}

/// Closed-form and probe-estimated isotropy loss of a random cloud, plus a 2-D projection.
#[wasm_bindgen]
pub fn isotropy(m: usize, d: usize, anisotropy: f64, n_probes: usize, seed: u64) -> Result<String, JsError> {
    to_js(isotropy_report(m, d, anisotropy, n_probes, seed))
}

pub fn attention_report(n: usize, sharpness: f64, r_cap: usize, seed: u64) -> geolan_core::Result<Value> {
    let mut rng = Rng::new(seed);
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let logits: Vec<f64> = (0..=i).map(|_| sharpness * rng.normal()).collect();
        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|x| (x - mx).exp()).sum();
        for (j, x) in logits.iter().enumerate() {
            a.set(i, j, (x - mx).exp() / z);
        }
    }
    let r = r_cap.clamp(1, n);
    let mut tape = Tape::new();
    let av = tape.constant(a.clone());
    let loss = kt_attn_loss(&mut tape, &[av], r)?;
    let sigma = svd(&a)?.sigma;
    Ok(json!({
        "attention": a.to_rows(),
        "singular_values": sigma,
        "loss": tape.scalar(loss),
        "max_loss": (r as f64).ln().powi(2),
    }))
}

/// A random causal attention head, its singular values and its spectral-entropy loss.
#[wasm_bindgen]
pub fn attention(n: usize, sharpness: f64, r_cap: usize, seed: u64) -> Result<String, JsError> {
    to_js(attention_report(n, sharpness, r_cap, seed))
}

pub fn grains_report(n: usize, layers: usize, delta: f64, seed: u64) -> geolan_core::Result<Value> {
    let mut rng = Rng::new(seed);
    let start: Vec<[f64; 2]> = (0..n).map(|_| [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)]).collect();
    let mut hidden = Vec::with_capacity(layers.max(1));
    let mut cur = start;
    for _ in 0..layers.max(1) {
        hidden.push(Tensor::from_rows(&cur.iter().map(|p| p.to_vec()).collect::<Vec<_>>())?);
        cur = cur
            .iter()
            .map(|p| [p[0] + 0.15 * rng.normal(), p[1] + 0.15 * rng.normal()])
            .collect();
    }
    let field = RepresentationField::from_layers(&hidden, delta)?;
    let g = grain_decompose(&field)?;
    let paths: Vec<Vec<Vec<f64>>> = field.tubes.iter().map(|t| t.trajectory.vertices().to_vec()).collect();
    Ok(json!({ "n_grains": g.n_grains, "grain_of": g.grain_of, "paths": paths }))
}

/// Random 2-D trajectories and their grains at tube radius `delta`.
#[wasm_bindgen]
pub fn grains(n: usize, layers: usize, delta: f64, seed: u64) -> Result<String, JsError> {
    to_js(grains_report(n, layers, delta, seed))
}
