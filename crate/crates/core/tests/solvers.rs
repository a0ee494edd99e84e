mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surface_fixtures::solvers::{LinearOptions, LinearSolver, Solver};
use surface_fixtures::{
    assemble_laplacian, build_surface, heat_step, solve_laplace, BoundaryConditions, LaplacianParams, PointCloud,
    ScalarField, SolveParams, SparseOperator, Vec3,
};

fn plane(n: usize) -> (Vec<Vec3>, PointCloud, SparseOperator) {
    let pts = grid(n, n, 1.0 / (n - 1) as f64, (0.0, 0.0));
    let cloud = build_surface(&pts, None, 12).unwrap();
    let op = assemble_laplacian(&cloud, &LaplacianParams::default()).unwrap();
    (pts, cloud, op)
}

#[test]
fn constant_dirichlet_is_preserved() {
    let (pts, _, op) = plane(25);
    let edge: Vec<usize> = (0..pts.len()).filter(|&i| pts[i].x == 0.0 || pts[i].y == 1.0).collect();
    let bc = BoundaryConditions::new().with_dirichlet(edge, 7.0);
    let u = solve_laplace(&op, &bc, &vec![true; pts.len()]).unwrap();
    assert!(u.field.values.iter().all(|v| (v - 7.0).abs() <= 1e-9));
}

#[test]
fn ramp_at_50() {
    let (pts, _, op) = plane(50);
    let left: Vec<usize> = (0..pts.len()).filter(|&i| pts[i].x == 0.0).collect();
    let right: Vec<usize> = (0..pts.len()).filter(|&i| (pts[i].x - 1.0).abs() < 1e-12).collect();
    let bc = BoundaryConditions::new().with_dirichlet(left, 0.0).with_dirichlet(right, 1.0);
    let u = solve_laplace(&op, &bc, &vec![true; pts.len()]).unwrap();
    let err = pts.iter().zip(&u.field.values).map(|(p, v)| (v - p.x).abs()).fold(0.0, f64::max);
    assert!(err <= 0.05, "L∞ {err}");
}

#[test]
fn heat_keeps_constants() {
    let (pts, _, op) = plane(20);
    let params = SolveParams::new(0.01).unwrap();
    let u = heat_step(&op, &ScalarField::constant(pts.len(), 3.5), &BoundaryConditions::new(), &params, &vec![true; pts.len()])
        .unwrap();
    assert!(u.field.values.iter().all(|v| (v - 3.5).abs() <= 1e-9));
}

#[test]
fn point_source_decays_radially() {
    let n = 21;
    let (pts, cloud, op) = plane(n);
    let h = cloud.mean_spacing();
    let center = (n / 2) * n + n / 2;
    let mut u0 = vec![0.0; pts.len()];
    u0[center] = 1.0;
    let params = SolveParams::new(h * h).unwrap();
    let u = heat_step(&op, &ScalarField::new(u0.clone()), &BoundaryConditions::new(), &params, &vec![true; pts.len()])
        .unwrap();

    // Dense solve of (M + t L) u = M u0.
    let dense = op.dense_stiffness();
    let m = DMatrix::from_diagonal(&DVector::from_column_slice(op.mass()));
    let a = &m + dense * (h * h);
    let rhs = &m * DVector::from_column_slice(&u0);
    let oracle = a.cholesky().unwrap().solve(&rhs);
    for i in 0..pts.len() {
        assert!((u.field.values[i] - oracle[i]).abs() <= 1e-12 + 1e-9 * oracle[i].abs());
    }

    // Radially non-increasing up to grid anisotropy.
    let c = pts[center];
    let mut by_radius: Vec<(f64, f64)> = (0..pts.len()).map(|i| ((pts[i] - c).norm(), oracle[i])).collect();
    by_radius.sort_by(|a, b| a.0.total_cmp(&b.0));
    let radius = 0.3;
    let inner = by_radius.iter().filter(|s| s.0 < 0.15).map(|s| s.1).fold(f64::INFINITY, f64::min);
    let outer = by_radius.iter().filter(|s| s.0 > 0.25).map(|s| s.1).fold(0.0, f64::max);
    assert!(outer < inner);
    for w in by_radius.windows(2) {
        if w[1].0 > radius {
            break;
        }
        if w[1].0 - w[0].0 > 1e-9 {
            assert!(w[1].1 <= w[0].1 * 1.05, "{w:?}");
        }
    }
}

#[test]
fn value_grows_with_diffusion_time() {
    let (pts, cloud, op) = plane(30);
    let h = cloud.mean_spacing();
    let target: Vec<usize> = (0..pts.len()).filter(|&i| (pts[i] - Vec3::new(0.5, 0.5, 0.0)).norm() < 0.1).collect();
    let bc = BoundaryConditions::new().with_dirichlet(target, 1.0);
    let domain = vec![true; pts.len()];
    let zero = ScalarField::constant(pts.len(), 0.0);
    let solves: Vec<Vec<f64>> = [1.0, 4.0, 16.0]
        .iter()
        .map(|s| {
            let params = SolveParams::new(s * h * h).unwrap();
            heat_step(&op, &zero, &bc, &params, &domain).unwrap().field.values
        })
        .collect();
    for i in 0..pts.len() {
        assert!(solves[0][i] <= solves[1][i] + 1e-15);
        assert!(solves[1][i] <= solves[2][i] + 1e-15);
    }
}

#[test]
fn solver_backends_agree() {
    let pts = fibonacci_sphere(1500, 1.0);
    let cloud = build_surface(&pts, None, 12).unwrap();
    let op = assemble_laplacian(&cloud, &LaplacianParams::default()).unwrap();
    let north: Vec<usize> = (0..pts.len()).filter(|&i| pts[i].z > 0.9).collect();
    let south: Vec<usize> = (0..pts.len()).filter(|&i| pts[i].z < -0.9).collect();
    let bc = BoundaryConditions::new().with_dirichlet(north, 1.0).with_dirichlet(south, -1.0);
    let domain = vec![true; pts.len()];
    let solve = |solver| {
        Solver::uncached()
            .solve_laplace(
                &op,
                &bc,
                &domain,
                &LinearOptions {
                    tolerance: 1e-12,
                    solver,
                    ..LinearOptions::default()
                },
            )
            .unwrap()
            .field
            .values
    };
    let a = solve(LinearSolver::Cholesky);
    let b = solve(LinearSolver::ConjugateGradient);
    let gap = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-8, "gap {gap}");
    // Antipodal symmetry of the data gives an odd solution in z.
    let equator = (0..pts.len()).filter(|&i| pts[i].z.abs() < 0.05);
    assert!(equator.map(|i| a[i].abs()).fold(0.0, f64::max) < 0.1);
}

fn random_dirichlet(seed: u64, pts: &[Vec3]) -> (BoundaryConditions, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bc = BoundaryConditions::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..rng.random_range(1..6) {
        let c = pts[rng.random_range(0..pts.len())];
        let value: f64 = rng.random_range(-5.0..5.0);
        lo = lo.min(value);
        hi = hi.max(value);
        for (i, p) in pts.iter().enumerate() {
            if (p - c).norm() < 0.08 && !bc.dirichlet.contains_key(&i) {
                bc.dirichlet.insert(i, value);
            }
        }
    }
    (bc, lo, hi)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn maximum_principle(seed in any::<u64>()) {
        let (pts, _, op) = plane(20);
        let (bc, lo, hi) = random_dirichlet(seed, &pts);
        let u = solve_laplace(&op, &bc, &vec![true; pts.len()]).unwrap();
        for v in &u.field.values {
            prop_assert!(*v >= lo - 1e-8 && *v <= hi + 1e-8);
        }
        // Dirichlet rows carry exactly the prescribed values.
        for (&i, &g) in &bc.dirichlet {
            prop_assert_eq!(u.field.values[i].to_bits(), g.to_bits());
        }
    }

    #[test]
    fn linear_in_boundary_data(seed in any::<u64>(), scale in 0.1f64..10.0) {
        let (pts, _, op) = plane(16);
        let (bc, _, _) = random_dirichlet(seed, &pts);
        let mut scaled = bc.clone();
        scaled.dirichlet.values_mut().for_each(|v| *v *= scale);
        let domain = vec![true; pts.len()];
        let a = solve_laplace(&op, &bc, &domain).unwrap();
        let b = solve_laplace(&op, &scaled, &domain).unwrap();
        let norm = a.field.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for (x, y) in a.field.values.iter().zip(&b.field.values) {
            prop_assert!((x * scale - y).abs() <= 1e-9 * scale * norm);
        }
    }

    #[test]
    fn heat_step_is_non_negative(seed in any::<u64>(), t in 1e-4f64..1.0) {
        let (pts, _, op) = plane(16);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u0 = ScalarField::new((0..pts.len()).map(|_| if rng.random_bool(0.2) { rng.random_range(0.0..3.0) } else { 0.0 }).collect());
        let (mut bc, _, _) = random_dirichlet(seed, &pts);
        bc.dirichlet.values_mut().for_each(|v| *v = v.abs());
        let params = SolveParams::new(t).unwrap();
        let u = heat_step(&op, &u0, &bc, &params, &vec![true; pts.len()]).unwrap();
        prop_assert!(u.field.values.iter().all(|&v| v >= -1e-10));
    }
}
