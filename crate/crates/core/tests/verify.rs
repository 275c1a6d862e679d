mod common;

use geolan_core::geometry::{cone_count, ConvexRegion, RepresentationField};
use geolan_core::numcore::{sample_unit_sphere, svd, Rng, Tensor};
use geolan_core::verify::{
    check_fourth_moment, fourth_moment_closed_form, fourth_moment_monte_carlo, probe_extremal_case,
    random_attention, random_symmetric, random_unit_cloud, sample_disjoint_balls, verify_lipschitz, verify_packing,
    verify_prop_a, verify_prop_b, verify_probe_bound,
};

fn signed_basis(d: usize, rotation: &Tensor) -> Tensor {
    let mut rows = Vec::with_capacity(2 * d);
    for i in 0..d {
        let r: Vec<f64> = (0..d).map(|j| rotation.at(j, i)).collect();
        rows.push(r.iter().map(|x| -x).collect());
        rows.push(r);
    }
    Tensor::from_rows(&rows).unwrap()
}

// ---- fourth moment ----

#[test]
fn zero_and_identity_moments() {
    let mut rng = Rng::new(50);
    let zero = Tensor::zeros(&[3, 3]);
    assert_eq!(fourth_moment_closed_form(&zero), 0.0);
    let (mc, _) = fourth_moment_monte_carlo(&zero, 100, &mut rng).unwrap();
    assert_eq!(mc, 0.0);
    let id = Tensor::identity(3);
    assert!((fourth_moment_closed_form(&id) - 1.0).abs() < 1e-15);
    let (mc, se) = fourth_moment_monte_carlo(&id, 1000, &mut rng).unwrap();
    assert!((mc - 1.0).abs() < 1e-12 && se < 1e-12);
}

#[test]
fn traceless_moment_within_five_standard_errors() {
    let mut rng = Rng::new(51);
    let a = random_symmetric(8, true, &mut rng);
    let (mc, se) = fourth_moment_monte_carlo(&a, 1_000_000, &mut rng).unwrap();
    let cf = fourth_moment_closed_form(&a);
    assert!((mc - cf).abs() <= 5.0 * se, "{mc} vs {cf} (se {se})");
}

#[test]
fn moment_report_is_clean() {
    let mut rng = Rng::new(52);
    for d in [2, 3, 8] {
        let r = check_fourth_moment(d, 20_000, &mut rng).unwrap();
        assert_eq!(r.violations, 0, "{r:?}");
    }
}

// ---- Proposition A ----

#[test]
fn isotropic_cloud_obeys_one_third_bound() {
    let mut rng = Rng::new(53);
    let d = 4;
    let mut rows = Vec::new();
    for _ in 0..10 {
        let q = svd(&common::gaussian(d, d, &mut rng)).unwrap().u;
        rows.extend(signed_basis(d, &q).to_rows());
    }
    let z = Tensor::from_rows(&rows).unwrap();
    let m = z.rows() as f64;
    let eta = geolan_core::geoloss::kt_cw_closed_form(&z).unwrap();
    assert!(eta.abs() < 1e-12);
    let aperture = std::f64::consts::FRAC_PI_6;
    for _ in 0..1000 {
        let v = sample_unit_sphere(d, &mut rng).unwrap();
        let c = cone_count(&rows, &v, aperture).unwrap() as f64;
        assert!(c <= m / 3.0 + 1e-9);
    }
    let r = verify_prop_a(&z, 1000, &mut rng).unwrap();
    assert_eq!(r.violations, 0);
}

#[test]
fn collapsed_cloud_is_vacuous() {
    let mut rng = Rng::new(54);
    let z = Tensor::from_rows(&vec![vec![0.6, 0.8, 0.0]; 12]).unwrap();
    let r = verify_prop_a(&z, 200, &mut rng).unwrap();
    // Every row vanishes once the common direction is removed.
    assert_eq!((r.trials, r.violations), (0, 0));
    assert!(r.notes.iter().any(|n| n.contains("vacuous")));
}

#[test]
fn random_clouds_have_no_cone_violations() {
    let mut rng = Rng::new(55);
    for k in 0..25 {
        let d = 2 + k % 7;
        let z = random_unit_cloud(40 + k, d, &mut rng).unwrap();
        let r = verify_prop_a(&z, 200, &mut rng).unwrap();
        assert_eq!(r.violations, 0, "{r:?}");
    }
}

// ---- Proposition B ----

#[test]
fn identity_heads_satisfy_all_bounds() {
    let heads = vec![Tensor::identity(5); 3];
    let r = verify_prop_b(&heads, 5).unwrap();
    assert_eq!(r.violations, 0);
    assert!(r.worst_slack.abs() < 1e-12);
}

#[test]
fn rank_one_head_is_tight() {
    let n = 6;
    let mut heads = vec![Tensor::identity(n); 2];
    heads.push(Tensor::filled(&[n, n], 1.0 / n as f64));
    let r = verify_prop_b(&heads, n).unwrap();
    assert_eq!(r.violations, 0);
    // The entropy-deficit comparison for the rank-1 head has zero slack.
    assert!(r.worst_slack.abs() < 1e-9, "{}", r.worst_slack);
}

#[test]
fn random_head_sets_have_no_violations() {
    let mut rng = Rng::new(56);
    for k in 0..100 {
        let n = 3 + k % 6;
        let heads: Vec<Tensor> = (0..3).map(|_| random_attention(n, k % 2 == 0, &mut rng).unwrap()).collect();
        let r = verify_prop_b(&heads, n).unwrap();
        assert_eq!(r.violations, 0, "{r:?}");
    }
}

// ---- Lemma 6 ----

#[test]
fn probe_extremal_case_is_tight() {
    for overlap in [0.0, 0.25, 0.5, 1.0 / 3.0, 0.9] {
        let r = probe_extremal_case(overlap).unwrap();
        assert!((r.interference.abs() - r.bound).abs() < 1e-9);
    }
}

#[test]
fn random_compositions_respect_interference_bound() {
    let mut rng = Rng::new(57);
    for m in 2..=6 {
        let dims = vec![2; m];
        let r = verify_probe_bound(&dims, 4 * m, 0.5, 50, &mut rng).unwrap();
        assert_eq!(r.violations, 0, "{r:?}");
    }
}

// ---- packing and Lipschitz ----

fn separated_field(n: usize, d: usize, delta: f64, rng: &mut Rng) -> RepresentationField {
    let states: Vec<Tensor> = (0..3)
        .map(|_| {
            let mut rows = Vec::new();
            for i in 0..n {
                let mut r = rng.normal_vec(d, 0.02);
                r[0] += 2.0 * i as f64;
                rows.push(r);
            }
            Tensor::from_rows(&rows).unwrap()
        })
        .collect();
    RepresentationField::from_layers(&states, delta).unwrap()
}

#[test]
fn disjoint_balls_do_not_overlap() {
    let mut rng = Rng::new(58);
    let field = separated_field(8, 3, 0.05, &mut rng);
    let balls = sample_disjoint_balls(&field, 4, &mut rng).unwrap();
    assert_eq!(balls.len(), 4);
    for i in 0..4 {
        for j in i + 1..4 {
            let (ConvexRegion::Ball { center: a, radius: ra }, ConvexRegion::Ball { center: b, radius: rb }) =
                (&balls[i], &balls[j])
            else {
                panic!("expected balls");
            };
            let gap: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!(gap >= ra + rb);
        }
    }
}

#[test]
fn synthetic_field_multiplicity_bound_holds() {
    let mut rng = Rng::new(59);
    let field = separated_field(8, 3, 0.05, &mut rng);
    let r = verify_packing(&field, 4, 8.0, 0.5, 20_000, &mut rng).unwrap();
    assert_eq!(r.disjoint_sum.violations, 0, "{r:?}");
    assert_eq!(r.multiplicity.violations, 0, "{r:?}");
    assert!(r.c_t > 0.0);
}

#[test]
fn random_model_lipschitz_calibration() {
    let p = common::micro_params(60);
    let mut rng = Rng::new(61);
    let bases: Vec<Tensor> = (0..3).map(|_| common::gaussian(6, 16, &mut rng)).collect();
    let r = verify_lipschitz(&p, &bases, 8, 40, &mut rng).unwrap();
    assert_eq!(r.calibration.violations, 0);
    assert!(r.holdout.violation_rate() <= 0.05, "{:?}", r.holdout);
    assert!(r.lambdas.iter().all(|l| *l >= 0.0));
}
