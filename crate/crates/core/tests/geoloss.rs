mod common;

use geolan_core::geoloss::{
    anneal, draw_probes, kt_attn_loss, kt_cw_closed_form, kt_cw_loss, kt_cw_loss_with_probes, normalize_rows,
    spectral_entropy, total_loss, RegularizerConfig,
};
use geolan_core::numcore::{grad_check, svd, sphere_matrix, Rng, Tape, Tensor};

fn cw(z: &Tensor, probes: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let v = tape.constant(z.clone());
    let l = kt_cw_loss_with_probes(&mut tape, v, probes).unwrap();
    tape.scalar(l)
}

/// Per-probe losses computed directly: population variance of projections, minus 1/d, squared.
fn per_probe_oracle(z: &Tensor, probes: &Tensor) -> Vec<f64> {
    let (m, d) = (z.rows(), z.cols());
    (0..probes.rows())
        .map(|p| {
            let proj: Vec<f64> = (0..m)
                .map(|i| (0..d).map(|k| z.at(i, k) * probes.at(p, k)).sum())
                .collect();
            let mean = proj.iter().sum::<f64>() / m as f64;
            let var = proj.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m as f64;
            (var - 1.0 / d as f64).powi(2)
        })
        .collect()
}

#[test]
fn identical_rows_give_inverse_d_squared() {
    let z = Tensor::matrix(5, 4, [0.5, 0.5, 0.5, 0.5].repeat(5)).unwrap();
    let mut rng = Rng::new(1);
    let probes = draw_probes(32, 4, &mut rng).unwrap();
    assert_eq!(cw(&z, &probes), 0.0625);
    assert_eq!(kt_cw_closed_form(&z).unwrap(), 0.0625);
}

#[test]
fn signed_basis_is_isotropic() {
    let z = Tensor::matrix(4, 2, vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]).unwrap();
    let mut rng = Rng::new(2);
    let probes = draw_probes(50, 2, &mut rng).unwrap();
    assert!(cw(&z, &probes) < 1e-30);
    assert_eq!(kt_cw_closed_form(&z).unwrap(), 0.0);
}

#[test]
fn antipodal_pair_closed_form() {
    let z = Tensor::matrix(2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
    assert!((kt_cw_closed_form(&z).unwrap() - 0.125).abs() < 1e-15);
}

#[test]
fn monte_carlo_matches_closed_form() {
    let mut rng = Rng::new(3);
    let z = normalize_rows(&common::gaussian(32, 3, &mut rng)).unwrap();
    let probes = draw_probes(100_000, 3, &mut rng).unwrap();
    let per = per_probe_oracle(&z, &probes);
    let n = per.len() as f64;
    let mean = per.iter().sum::<f64>() / n;
    let se = (per.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!((cw(&z, &probes) - mean).abs() < 1e-12);
    assert!((mean - kt_cw_closed_form(&z).unwrap()).abs() < 5.0 * se);
}

#[test]
fn kt_cw_draw_returns_its_probes() {
    let mut rng = Rng::new(4);
    let z = normalize_rows(&common::gaussian(10, 4, &mut rng)).unwrap();
    let mut tape = Tape::new();
    let v = tape.constant(z.clone());
    let (loss, probes) = kt_cw_loss(&mut tape, v, 16, &mut rng).unwrap();
    assert_eq!(probes.shape(), &[16, 4]);
    assert_eq!(tape.scalar(loss), cw(&z, &probes));
}

#[test]
fn normalized_rows_have_unit_norm() {
    let mut rng = Rng::new(5);
    let z = normalize_rows(&common::gaussian(50, 7, &mut rng)).unwrap();
    for i in 0..50 {
        let n: f64 = z.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }
    assert_eq!(normalize_rows(&z).unwrap().data().len(), z.data().len());
}

#[test]
fn entropy_examples() {
    assert!((spectral_entropy(&[1.0; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
    assert_eq!(spectral_entropy(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
    assert!((spectral_entropy(&[0.5, 0.25, 0.25]).unwrap() - 1.039_720_770_839_917_9).abs() < 1e-12);
}

fn attn(heads: &[Tensor], r: usize) -> f64 {
    let mut tape = Tape::new();
    let vs: Vec<_> = heads.iter().map(|h| tape.constant(h.clone())).collect();
    let l = kt_attn_loss(&mut tape, &vs, r).unwrap();
    tape.scalar(l)
}

#[test]
fn attention_loss_extremes() {
    for n in [2, 5, 8] {
        assert!(attn(&[Tensor::identity(n)], n).abs() < 1e-20);
        let flat = Tensor::filled(&[n, n], 1.0 / n as f64);
        assert!((attn(&[flat], n) - (n as f64).ln().powi(2)).abs() < 1e-12);
    }
}

#[test]
fn attention_rejects_non_stochastic() {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::filled(&[3, 3], 0.5));
    assert!(kt_attn_loss(&mut tape, &[v], 3).is_err());
}

fn random_stochastic(n: usize, rng: &mut Rng) -> Tensor {
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let e: Vec<f64> = (0..n).map(|_| rng.normal().exp()).collect();
        let s: f64 = e.iter().sum();
        for j in 0..n {
            a.set(i, j, e[j] / s);
        }
    }
    a
}

#[test]
fn random_head_entropy_and_gradient() {
    let mut rng = Rng::new(6);
    let a = random_stochastic(4, &mut rng);
    let sigma = svd(&a).unwrap().sigma;
    let h = spectral_entropy(&sigma).unwrap();
    assert!((attn(&[a.clone()], 4) - (4f64.ln() - h).powi(2)).abs() < 1e-10);
    // Differentiate through a row softmax so the head stays stochastic under perturbation.
    let logits = Tensor::matrix(4, 4, rng.normal_vec(16, 1.0)).unwrap();
    let err = grad_check(
        |tape: &mut Tape, v| {
            let s = tape.softmax_rows(v[0], false)?;
            kt_attn_loss(tape, &[s], 4)
        },
        &[logits],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn kt_cw_gradient_with_frozen_probes() {
    let mut rng = Rng::new(7);
    let x = common::gaussian(12, 5, &mut rng);
    let probes = sphere_matrix(16, 5, &mut rng).unwrap();
    let err = grad_check(
        |tape: &mut Tape, v| {
            let z = tape.normalize_rows(v[0])?;
            kt_cw_loss_with_probes(tape, z, &probes)
        },
        &[x],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn anneal_schedule() {
    assert_eq!(anneal(0, 1e-3, 500), 0.0);
    assert_eq!(anneal(250, 1e-3, 500), 5e-4);
    assert_eq!(anneal(500, 1e-3, 500), 1e-3);
    assert_eq!(anneal(10_000, 1e-3, 500), 1e-3);
    assert_eq!(anneal(250, 1e-2, 500), 5e-3);
}

#[test]
fn total_loss_weights() {
    let cfg = RegularizerConfig::default();
    let mut tape = Tape::new();
    let ce = tape.constant(Tensor::scalar(2.0));
    let cw = [tape.constant(Tensor::scalar(0.5)), tape.constant(Tensor::scalar(0.25))];
    let at = [tape.constant(Tensor::scalar(3.0))];
    let t0 = total_loss(&mut tape, ce, &cw, &at, 0, &cfg).unwrap();
    assert_eq!(tape.scalar(t0), 2.0);
    let t = total_loss(&mut tape, ce, &cw, &at, 600, &cfg).unwrap();
    assert!((tape.scalar(t) - (2.0 + 1e-3 * 0.75 + 1e-2 * 3.0)).abs() < 1e-15);
    let off = RegularizerConfig {
        lambda1_target: 0.0,
        lambda2_target: 0.0,
        ..cfg
    };
    let z = total_loss(&mut tape, ce, &cw, &at, 600, &off).unwrap();
    assert_eq!(tape.scalar(z), 2.0);
}

#[test]
fn config_validation() {
    let mut c = RegularizerConfig::default();
    assert!(c.validate().is_ok());
    c.ramp_steps = 0;
    assert!(c.validate().is_err());
    let c = RegularizerConfig {
        lambda1_target: -1.0,
        ..RegularizerConfig::default()
    };
    assert!(c.validate().is_err());
}
