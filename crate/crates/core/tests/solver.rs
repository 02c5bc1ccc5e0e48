mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wulff_lab::geom::{self, Point};
use wulff_lab::mesh::{BoundaryEdge, BoundaryTag, Mesh};
use wulff_lab::solver::{
    energy, energy_gradient, free_vertices, solve, validate_condition_b, weak_residual, ComparisonSpec, ProblemSpec,
    Solution, SolverConfig, SourceSpec,
};
use wulff_lab::{ConeSpec, Error, NormSpec, WeightSpec};

#[test]
fn wulff_radial_formula_satisfies_the_equation() {
    let cases = [
        torsion(),
        ProblemSpec { p: 3.0, ..torsion() },
        ProblemSpec { p: 1.5, ..torsion() },
        ProblemSpec {
            norm: ellipse(),
            ..torsion()
        },
        ProblemSpec {
            weight: WeightSpec::monomial(1.0, 1.0).unwrap(),
            cone: ConeSpec::quadrant(),
            ..torsion()
        },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for prob in &cases {
        let d = prob.dimension();
        let u = |x: Point| radial_exact(prob.p, d, 1.0, prob.norm.dual(x));
        let mut checked = 0;
        while checked < 40 {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)];
            let rho = prob.norm.dual(x);
            if !(0.2..0.9).contains(&rho) || prob.cone.boundary_distance(x) < 0.05 || !prob.cone.contains(x) {
                continue;
            }
            let lhs = fd_operator(prob, &u, x);
            let rhs = prob.weight.eval(x);
            assert!((lhs - rhs).abs() < 1e-4 * (1.0 + rhs), "{prob:?} at {x:?}: {lhs} vs {rhs}");
            checked += 1;
        }
        // Boundary values.
        assert!(u(prob.norm.wulff_boundary([0.0, 0.0], 1.0, 8).unwrap()[3]).abs() < 1e-12);
    }
}

#[test]
fn torsion_matches_closed_form() {
    let prob = torsion();
    let (mesh, sol) = solved(&prob, 0.02);
    assert!((sol.max() - 0.25).abs() <= 5e-3);
    let err = mesh
        .vertices
        .iter()
        .zip(&sol.u)
        .map(|(x, u)| (u - (1.0 - geom::dot(*x, *x)) / 4.0).abs())
        .fold(0.0, f64::max);
    assert!(err <= 5e-3, "{err}");
    assert!(sol.min() >= -1e-10);
    assert!(weak_residual(&prob, &mesh, &sol).unwrap() <= 1e-2);
}

#[test]
fn p_laplace_and_ellipse_match_wulff_radial_solutions() {
    for prob in [
        ProblemSpec { p: 3.0, ..torsion() },
        ProblemSpec {
            norm: ellipse(),
            ..torsion()
        },
    ] {
        let (mesh, sol) = solved(&prob, 0.04);
        let err = radial_error(&prob, &mesh, &sol);
        assert!(err <= 1e-2, "{prob:?}: {err}");
        assert!(sol.min() >= -1e-10);
    }
    // p = 3 closed form written out: (2/3)(1/2)^{1/2}(1 − r^{3/2}).
    let g = |r: f64| 2.0 / 3.0 * 0.5f64.sqrt() * (1.0 - r.powf(1.5));
    assert!((radial_exact(3.0, 2.0, 1.0, 0.3) - g(0.3)).abs() < 1e-15);
}

#[test]
fn dirichlet_vertices_stay_zero_and_refinement_converges() {
    let prob = torsion();
    let mut errors = Vec::new();
    for h in [0.1, 0.05] {
        let (mesh, sol) = solved(&prob, h);
        for (d, u) in mesh.dirichlet_mask().iter().zip(&sol.u) {
            if *d {
                assert_eq!(*u, 0.0);
            }
        }
        errors.push(radial_error(&prob, &mesh, &sol));
    }
    assert!(errors[1] <= 0.5 * errors[0], "{errors:?}");
}

#[test]
fn solution_is_invariant_under_mesh_rotation() {
    let prob = ProblemSpec { p: 3.0, ..torsion() };
    let mesh = mesh_for(&prob, 0.1);
    let sol = solve(&prob, &mesh, &SolverConfig::default()).unwrap();
    let angle = 0.7;
    let rotated = Mesh::new(
        mesh.vertices.iter().map(|v| geom::rotate(*v, angle)).collect(),
        mesh.triangles.clone(),
        mesh.boundary.clone(),
        mesh.h,
    )
    .unwrap();
    let rsol = solve(&prob, &rotated, &SolverConfig::default()).unwrap();
    let m = sol.max();
    for (a, b) in sol.u.iter().zip(&rsol.u) {
        assert!((a - b).abs() <= 1e-3 * m);
    }
}

#[test]
fn hand_computed_energy_on_three_triangles() {
    let vertices = vec![[0.0, 0.0], geom::unit(0.0), geom::unit(2.0944), geom::unit(4.18879)];
    let vertices: Vec<Point> = vertices
        .iter()
        .enumerate()
        .map(|(i, v)| if i == 0 { *v } else { geom::unit(2.0 * std::f64::consts::PI * (i - 1) as f64 / 3.0) })
        .collect();
    let triangles = vec![[0, 1, 2], [0, 2, 3], [0, 3, 1]];
    let boundary = vec![
        BoundaryEdge { a: 1, b: 2, tag: BoundaryTag::Gamma0 },
        BoundaryEdge { a: 2, b: 3, tag: BoundaryTag::Gamma0 },
        BoundaryEdge { a: 3, b: 1, tag: BoundaryTag::Gamma0 },
    ];
    let mesh = Mesh::new(vertices, triangles, boundary, 1.0).unwrap();
    let u = vec![1.0, 0.0, 0.0, 0.0];
    // |∇u| = 1/dist(0, chord) = 2 and each triangle has area √3/4; ∫u = area/3.
    let area = 3f64.sqrt() / 4.0;
    let expected = 3.0 * (0.5 * 4.0 * area - area / 3.0);
    let e = energy(&torsion(), &mesh, &u, 0.0).unwrap();
    assert!((e - expected).abs() < 1e-12, "{e} vs {expected}");
    assert!((expected - 5.0 * 3f64.sqrt() / 4.0).abs() < 1e-12);
    // Only the centre is free.
    assert_eq!(free_vertices(&mesh), vec![0]);
    let g = energy_gradient(&torsion(), &mesh, &u, 0.0).unwrap();
    // ∂E/∂u₀ = Σ ∇u·∇φ₀·area − ∫φ₀ = 3(4·area − area/3).
    assert!((g[0] - 3.0 * (4.0 * area - area / 3.0)).abs() < 1e-12);
}

#[test]
fn small_epsilon_energy_approaches_unregularized_integral() {
    let prob = ProblemSpec {
        p: 1.5,
        norm: NormSpec::smoothed_q(3.0, 0.05).unwrap(),
        ..torsion()
    };
    let mesh = mesh_for(&prob, 0.1);
    let u: Vec<f64> = mesh.vertices.iter().map(|x| 0.3 * (1.0 - geom::dot(*x, *x)).max(0.0)).collect();
    let direct: f64 = (0..mesh.triangles.len())
        .map(|t| {
            let tri = mesh.triangle(t);
            let idx = mesh.triangles[t];
            let twice = geom::orient(tri[0], tri[1], tri[2]);
            let mut g = [0.0, 0.0];
            for k in 0..3 {
                let (a, b) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
                g[0] += u[idx[k]] * (a[1] - b[1]) / twice;
                g[1] += u[idx[k]] * (b[0] - a[0]) / twice;
            }
            let area = twice.abs() / 2.0;
            // F(u) = u is linear, so the centroid value integrates exactly.
            let mean = (u[idx[0]] + u[idx[1]] + u[idx[2]]) / 3.0;
            (prob.norm.eval(g).powf(prob.p) / prob.p - mean) * area
        })
        .sum();
    let e = energy(&prob, &mesh, &u, 1e-9).unwrap();
    assert!((e - direct).abs() < 1e-6, "{e} vs {direct}");
}

#[test]
fn energy_gradient_matches_finite_differences() {
    let cases = [
        ProblemSpec {
            p: 1.5,
            source: SourceSpec::step(2.0, 1.0, 0.1),
            ..torsion()
        },
        ProblemSpec {
            p: 3.0,
            norm: NormSpec::smoothed_q(3.0, 0.05).unwrap(),
            cone: ConeSpec::quadrant(),
            weight: WeightSpec::monomial(1.0, 1.0).unwrap(),
            source: SourceSpec::power(2.0),
            ..torsion()
        },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for prob in &cases {
        let mesh = mesh_for(prob, 0.25);
        let free = free_vertices(&mesh);
        for _ in 0..10 {
            let u: Vec<f64> = mesh
                .dirichlet_mask()
                .iter()
                .map(|d| if *d { 0.0 } else { rng.random_range(-0.05..0.3) })
                .collect();
            let g = energy_gradient(prob, &mesh, &u, 0.1).unwrap();
            let mut num = 0.0;
            let mut den = 0.0;
            for (k, &i) in free.iter().enumerate() {
                let step = 1e-6;
                let mut up = u.clone();
                up[i] += step;
                let mut dn = u.clone();
                dn[i] -= step;
                let fd = (energy(prob, &mesh, &up, 0.1).unwrap() - energy(prob, &mesh, &dn, 0.1).unwrap()) / (2.0 * step);
                num += (fd - g[k]).powi(2);
                den += g[k] * g[k];
            }
            let rel = (num / den).sqrt();
            assert!(rel <= 1e-5, "{prob:?}: {rel}");
        }
    }
}

#[test]
fn discontinuous_and_power_sources_converge() {
    let sublinear = ProblemSpec {
        p: 1.5,
        ..torsion()
    };
    let (mesh, sol) = solved(&sublinear, 0.05);
    assert!(weak_residual(&sublinear, &mesh, &sol).unwrap() <= 1e-4);
    assert!(radial_error(&sublinear, &mesh, &sol) <= 1e-3);

    let step = ProblemSpec {
        p: 1.5,
        source: SourceSpec::step(2.0, 1.0, 0.05),
        ..torsion()
    };
    let (mesh, sol) = solved(&step, 0.05);
    assert!(sol.min() >= -1e-10);
    assert!(sol.max() > 0.05);
    assert!(weak_residual(&step, &mesh, &sol).unwrap() <= 1e-2);

    let power = ProblemSpec {
        source: SourceSpec::power(0.5),
        ..torsion()
    };
    let (mesh, sol) = solved(&power, 0.1);
    assert!(sol.min() >= -1e-10);
    assert!(sol.max() > 0.0);
    assert!(sol.meta.outer_iterations > 1);
    assert!(weak_residual(&power, &mesh, &sol).unwrap() <= 1e-2);
}

#[test]
fn weak_residual_at_discrete_minimizer_is_tiny() {
    let prob = torsion();
    let (mesh, sol) = solved(&prob, 0.1);
    let r = weak_residual(&prob, &mesh, &sol).unwrap();
    assert!(r <= 1e-6, "{r}");
    let zero = Solution::from_values(&mesh, vec![0.0; mesh.vertices.len()]).unwrap();
    assert!(weak_residual(&prob, &mesh, &zero).unwrap() > 0.5);
}

#[test]
fn non_convergence_reports_last_iterate() {
    let prob = ProblemSpec { p: 3.0, ..torsion() };
    let mesh = mesh_for(&prob, 0.1);
    let config = SolverConfig {
        max_iter: 3,
        ..SolverConfig::default()
    };
    match solve(&prob, &mesh, &config) {
        Err(Error::NonConvergence { last, .. }) => {
            assert_eq!(last.u.len(), mesh.vertices.len());
            assert!(!last.meta.converged);
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

/// Grid oracle for `φ ≤ f ≤ k φ` with `φ` nonincreasing.
fn grid_condition_b(f: impl Fn(f64) -> f64, phi: impl Fn(f64) -> f64, k: f64) -> bool {
    let mut prev = f64::INFINITY;
    (0..=1000).all(|j| {
        let u = j as f64 / 1000.0;
        let ok = phi(u) <= prev && phi(u) <= f(u) && f(u) <= k * phi(u) + 1e-12;
        prev = phi(u);
        ok
    })
}

#[test]
fn condition_b_step_source_against_grid_oracle() {
    let step = |u: f64| if u < 0.1 { 2.0 } else { 1.0 };
    let k = 2.0 * 1.5 / (2.0 - 1.5);
    for factor in [0.1, 1.0 / 6.0, 0.5, 1.0, 1.2] {
        let prob = ProblemSpec {
            p: 1.5,
            source: SourceSpec::step(2.0, 1.0, 0.1).with_comparison(ComparisonSpec::ScaledSource { factor }),
            ..torsion()
        };
        let cert = validate_condition_b(&prob, 2.0).unwrap();
        assert_eq!(cert.passed, grid_condition_b(step, |u| factor * step(u), k), "factor {factor}");
    }
    let table = ProblemSpec {
        p: 1.5,
        source: SourceSpec::step(2.0, 1.0, 0.1).with_comparison(ComparisonSpec::Table {
            points: vec![[0.0, 1.0], [0.2, 0.5], [1.0, 0.5]],
        }),
        ..torsion()
    };
    let cert = validate_condition_b(&table, 2.0).unwrap();
    let phi = |u: f64| if u < 0.2 { 1.0 - 2.5 * u } else { 0.5 };
    assert_eq!(cert.passed, grid_condition_b(step, phi, k));
}

#[test]
fn solution_csv_round_trip() {
    let prob = torsion();
    let (mesh, sol) = solved(&prob, 0.2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("solution.csv");
    sol.save_csv(&mesh, &path).unwrap();
    let back = Solution::load_csv(&mesh, &path).unwrap();
    assert_eq!(back.u, sol.u);
    assert_eq!(back.gradients, sol.gradients);
}

#[test]
fn problem_spec_rejects_unknown_keys() {
    let json = r#"{"p":2,"norm":{"kind":"euclidean"},"weight":{"kind":"constant"},"cone":{"kind":"full_plane"},
        "radius":1,"f":{"law":{"kind":"constant","c0":1}},"extra":0}"#;
    assert!(serde_json::from_str::<ProblemSpec>(json).is_err());
    let ok = json.replace(r#","extra":0"#, "");
    let prob: ProblemSpec = serde_json::from_str(&ok).unwrap();
    assert_eq!(prob, torsion());
}

