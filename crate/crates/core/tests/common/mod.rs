#![allow(dead_code)]

use wulff_lab::geom::{self, Point};
use wulff_lab::mesh::{generate_mesh, Mesh};
use wulff_lab::solver::{solve, ProblemSpec, Solution, SolverConfig, SourceSpec};
use wulff_lab::{ConeSpec, NormSpec, WeightSpec};

/// Wulff-radial solution of the `f ≡ 1` problem on the Wulff ball of radius
/// `r_big`, as a function of `ρ = H₀(x)`.
pub fn radial_exact(p: f64, d: f64, r_big: f64, rho: f64) -> f64 {
    let pc = p / (p - 1.0);
    (p - 1.0) / p * d.powf(-1.0 / (p - 1.0)) * (r_big.powf(pc) - rho.powf(pc))
}

/// `−div(w H(∇u)^{p−1}∇H(∇u))` by nested central differences.
pub fn fd_operator(problem: &ProblemSpec, u: &dyn Fn(Point) -> f64, x: Point) -> f64 {
    let grad = |y: Point| {
        let e = 1e-5;
        [
            (u([y[0] + e, y[1]]) - u([y[0] - e, y[1]])) / (2.0 * e),
            (u([y[0], y[1] + e]) - u([y[0], y[1] - e])) / (2.0 * e),
        ]
    };
    let flux = |y: Point| {
        let g = grad(y);
        let h = problem.norm.eval(g);
        let dir = problem.norm.grad(g).unwrap();
        geom::scale(dir, problem.weight.eval(y) * h.powf(problem.p - 1.0))
    };
    let e = 1e-3;
    let dx = (flux([x[0] + e, x[1]])[0] - flux([x[0] - e, x[1]])[0]) / (2.0 * e);
    let dy = (flux([x[0], x[1] + e])[1] - flux([x[0], x[1] - e])[1]) / (2.0 * e);
    -(dx + dy)
}

pub fn torsion() -> ProblemSpec {
    ProblemSpec {
        p: 2.0,
        norm: NormSpec::euclidean(),
        weight: WeightSpec::Constant {},
        cone: ConeSpec::full_plane(),
        radius: 1.0,
        source: SourceSpec::constant(1.0),
    }
}

pub fn ellipse() -> NormSpec {
    NormSpec::ellipse([[4.0, 0.0], [0.0, 1.0]]).unwrap()
}

pub fn mesh_for(problem: &ProblemSpec, h: f64) -> Mesh {
    generate_mesh(&problem.cone, &problem.norm, problem.radius, h, true).unwrap()
}

pub fn solved(problem: &ProblemSpec, h: f64) -> (Mesh, Solution) {
    let mesh = mesh_for(problem, h);
    let sol = solve(problem, &mesh, &SolverConfig::default()).unwrap();
    (mesh, sol)
}

/// Sup-norm distance between the computed field and the Wulff-radial formula.
pub fn radial_error(problem: &ProblemSpec, mesh: &Mesh, sol: &Solution) -> f64 {
    let d = problem.dimension();
    mesh.vertices
        .iter()
        .zip(&sol.u)
        .map(|(x, u)| (u - radial_exact(problem.p, d, problem.radius, problem.norm.dual(*x))).abs())
        .fold(0.0, f64::max)
}
