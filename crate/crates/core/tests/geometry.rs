mod common;

use common::micro_params;
use geolan_core::geometry::{
    cone_count, estimate_collapse_constant, estimate_layer_lipschitz, grain_decompose, grain_subspaces,
    point_trajectory_distance, probe_interference, projector_overlap, tube_count_in_region, tubes_intersect,
    collapse_over_regions, ConvexRegion, GrainAssignment, RepresentationField, Trajectory, Tube,
};
use geolan_core::numcore::{dot, svd, Rng, Tensor};

fn random_trajectory(layers: usize, d: usize, rng: &mut Rng) -> Trajectory {
    let states: Vec<Vec<f64>> = (0..layers).map(|_| (0..d).map(|_| rng.next_f64()).collect()).collect();
    Trajectory::from_states(&states).unwrap()
}

fn random_field(n: usize, layers: usize, d: usize, delta: f64, rng: &mut Rng) -> RepresentationField {
    let tubes = (0..n).map(|_| Tube::new(random_trajectory(layers, d, rng), delta).unwrap()).collect();
    RepresentationField::new(tubes, None).unwrap()
}

fn flood_fill(field: &RepresentationField) -> Vec<usize> {
    let n = field.len();
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| tubes_intersect(&field.tubes[i], &field.tubes[j]).unwrap()).collect())
        .collect();
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        label[s] = next;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if adj[u][v] && label[v] == usize::MAX {
                    label[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    label
}

#[test]
fn dense_sampling_distance_oracle() {
    let mut rng = Rng::new(1);
    for _ in 0..20 {
        let t = random_trajectory(4, 3, &mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.uniform(-0.5, 1.5)).collect();
        let exact = point_trajectory_distance(&x, &t).unwrap();
        let sampled = (0..=10_000)
            .map(|k| {
                let p = t.eval(k as f64 / 10_000.0);
                p.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(exact <= sampled + 1e-12);
        assert!(sampled - exact < 1e-3);
    }
}

#[test]
fn intersection_matches_sampled_minimum() {
    let mut rng = Rng::new(2);
    let samples = 2_000;
    for _ in 0..20 {
        let delta = rng.uniform(0.05, 0.3);
        let a = Tube::new(random_trajectory(3, 3, &mut rng), delta).unwrap();
        let b = Tube::new(random_trajectory(3, 3, &mut rng), delta).unwrap();
        let pa: Vec<Vec<f64>> = (0..=samples).map(|k| a.trajectory.eval(k as f64 / samples as f64)).collect();
        let pb: Vec<Vec<f64>> = (0..=samples).map(|k| b.trajectory.eval(k as f64 / samples as f64)).collect();
        let mut best = f64::INFINITY;
        for p in &pa {
            for q in &pb {
                best = best.min(p.iter().zip(q).map(|(x, y)| (x - y).powi(2)).sum::<f64>());
            }
        }
        let best = best.sqrt();
        // The grid overestimates the true minimum by at most the sampling step.
        let step = 2.0 * 3f64.sqrt() / samples as f64;
        let hit = tubes_intersect(&a, &b).unwrap();
        if best < 2.0 * delta {
            assert!(hit);
        } else if best - step > 2.0 * delta {
            assert!(!hit);
        }
    }
}

#[test]
fn grains_match_flood_fill() {
    let mut rng = Rng::new(3);
    for trial in 0..100 {
        let n = 1 + rng.below(32);
        let delta = rng.uniform(0.02, 0.25);
        let f = random_field(n, 3, 3, delta, &mut rng);
        let g = grain_decompose(&f).unwrap();
        let oracle = flood_fill(&f);
        assert_eq!(g.grain_of, oracle, "trial {trial}");
        assert!(g.n_grains >= 1 && g.n_grains <= n);
    }
}

#[test]
fn sixteen_tube_partition() {
    let mut rng = Rng::new(4);
    let f = random_field(16, 4, 2, 0.08, &mut rng);
    assert_eq!(grain_decompose(&f).unwrap().grain_of, flood_fill(&f));
}

#[test]
fn cone_count_is_a_scan() {
    let mut rng = Rng::new(5);
    let pts: Vec<Vec<f64>> = (0..40)
        .map(|_| {
            let v = rng.normal_vec(3, 1.0);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n).collect()
        })
        .collect();
    let v = pts[0].clone();
    let mut prev = 0;
    for k in 1..15 {
        let delta = k as f64 * 0.1;
        let c = cone_count(&pts, &v, delta).unwrap();
        let scan = pts.iter().filter(|p| dot(p, &v) >= delta.cos()).count();
        assert_eq!(c, scan);
        assert!(c >= prev);
        prev = c;
    }
    let same = vec![v.clone(); 5];
    assert_eq!(cone_count(&same, &v, 0.01).unwrap(), 5);
}

#[test]
fn region_containment_oracle() {
    let mut rng = Rng::new(6);
    let f = random_field(20, 3, 3, 0.05, &mut rng);
    for _ in 0..20 {
        let c: Vec<f64> = (0..3).map(|_| rng.next_f64()).collect();
        let r = rng.uniform(0.1, 1.0);
        let ball = ConvexRegion::ball(c.clone(), r).unwrap();
        // A ball is convex, so a tube lies inside iff every vertex is at least δ from the boundary.
        let oracle = f
            .tubes
            .iter()
            .filter(|t| {
                t.trajectory
                    .vertices()
                    .iter()
                    .all(|v| v.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() + 0.05 <= r)
            })
            .count();
        assert_eq!(tube_count_in_region(&f, &ball).unwrap().count, oracle);
    }
    let thin = ConvexRegion::ball(vec![0.5; 3], 0.05).unwrap();
    assert_eq!(tube_count_in_region(&f, &thin).unwrap().count, 0);
}

#[test]
fn stacked_tubes_collapse_more_than_spread_tubes() {
    let mut rng = Rng::new(7);
    let t = random_trajectory(3, 3, &mut rng);
    let stacked = RepresentationField::new((0..8).map(|_| Tube::new(t.clone(), 0.02).unwrap()).collect(), None).unwrap();
    let spread = random_field(8, 3, 3, 0.02, &mut rng);
    let regions: Vec<ConvexRegion> = (0..10)
        .map(|_| ConvexRegion::ball(vec![0.5; 3], rng.uniform(0.8, 2.0)).unwrap())
        .collect();
    let a = collapse_over_regions(&stacked, &regions, 0.1).unwrap();
    let b = collapse_over_regions(&spread, &regions, 0.1).unwrap();
    assert!(a.c_a >= b.c_a);
    let est = estimate_collapse_constant(&stacked, 16, 0.1, &mut rng).unwrap();
    assert!(est.c_a.is_finite() && est.n_regions == 16);
}

#[test]
fn zeroed_block_has_zero_lipschitz_constant() {
    let mut p = micro_params(3);
    p.zero_block(0);
    let mut rng = Rng::new(8);
    let bases = vec![common::gaussian(5, 16, &mut rng)];
    let est = estimate_layer_lipschitz(&p, 0, &bases, 4, &mut rng).unwrap();
    assert_eq!(est.lambda, 0.0);
}

#[test]
fn orthonormal_states_span_their_subspace() {
    let mut rng = Rng::new(9);
    let q = svd(&common::gaussian(6, 3, &mut rng)).unwrap().u.select_cols(&[0, 1, 2]);
    let states = q.transpose(); // three orthonormal states
    let assignment = GrainAssignment::from_labels(&[0, 0, 0]);
    let bases = grain_subspaces(&states, &assignment, 3).unwrap();
    let b = &bases[0].basis;
    let pb = b.matmul(&b.transpose()).unwrap();
    let pq = q.matmul(&q.transpose()).unwrap();
    assert!(common::max_abs_diff(&pb, &pq) < 1e-8);
}

#[test]
fn overlap_via_svd_oracle() {
    let mut rng = Rng::new(10);
    for _ in 0..10 {
        let a = svd(&common::gaussian(7, 2, &mut rng)).unwrap().u.select_cols(&[0, 1]);
        let b = svd(&common::gaussian(7, 3, &mut rng)).unwrap().u.select_cols(&[0, 1, 2]);
        let cross = a.transpose().matmul(&b).unwrap();
        let oracle = svd(&cross).unwrap().sigma[0];
        assert!((projector_overlap(&a, &b).unwrap() - oracle).abs() < 1e-8);
    }
}

#[test]
fn interference_matches_inner_products() {
    let mut rng = Rng::new(11);
    let u0 = svd(&common::gaussian(5, 2, &mut rng)).unwrap().u.select_cols(&[0, 1]);
    let u1 = svd(&common::gaussian(5, 2, &mut rng)).unwrap().u;
    let coef = |rng: &mut Rng, u: &Tensor| -> Vec<f64> {
        let c = rng.normal_vec(2, 1.0);
        (0..5).map(|i| u.at(i, 0) * c[0] + u.at(i, 1) * c[1]).collect()
    };
    let w = coef(&mut rng, &u0);
    let x0 = coef(&mut rng, &u0);
    let x1 = coef(&mut rng, &u1);
    let r = probe_interference(&w, 0, &[x0.clone(), x1.clone()], &[u0, u1]).unwrap();
    assert!((r.interference - dot(&w, &x1)).abs() < 1e-12);
    let x: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| a + b).collect();
    assert!((r.response - dot(&w, &x)).abs() < 1e-12);
    assert!(r.interference.abs() <= r.bound + 1e-9);
}
