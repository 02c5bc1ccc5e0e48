//! P1 finite-element energy minimization for
//! `−div(w H(∇u)^{p−1} ∇_ξH(∇u)) = f(u) w` in `Σ ∩ B_R`, `u = 0` on the
//! spherical cap `Γ₀` and zero conormal flux on the lateral boundary `Γ₁`.

use std::collections::VecDeque;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone::{ConeSpec, WeightSpec};
use crate::error::{Error, Result};
use crate::finsler::NormSpec;
use crate::geom::{self, Point};
use crate::mesh::Mesh;
use crate::quadrature::{bary_area_fraction, bary_point, degree5_rule, split_at_levels, tri_area};

/// Nonlinearity `u ↦ f(u)` for `u ≥ 0`; negative arguments are clamped to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceLaw {
    Constant { c0: f64 },
    Power { q: f64 },
    /// `a` below `s`, `b` from `s` on (right limit at the jump).
    Step { a: f64, b: f64, s: f64 },
}

/// Nonincreasing comparison function `φ` for condition (b).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComparisonSpec {
    Constant { value: f64 },
    /// `φ = factor · f`.
    ScaledSource { factor: f64 },
    /// Piecewise-linear through `(u, φ)` pairs, constant outside.
    Table { points: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub law: SourceLaw,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonSpec>,
}

impl SourceSpec {
    pub fn constant(c0: f64) -> Self {
        Self::from_law(SourceLaw::Constant { c0 })
    }

    pub fn power(q: f64) -> Self {
        Self::from_law(SourceLaw::Power { q })
    }

    pub fn step(a: f64, b: f64, s: f64) -> Self {
        Self::from_law(SourceLaw::Step { a, b, s })
    }

    pub fn from_law(law: SourceLaw) -> Self {
        Self { law, comparison: None }
    }

    pub fn with_comparison(mut self, phi: ComparisonSpec) -> Self {
        self.comparison = Some(phi);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        match self.law {
            SourceLaw::Constant { c0 } if !(c0 >= 0.0 && c0.is_finite()) => {
                return bad(format!("constant source {c0} must be nonnegative"))
            }
            SourceLaw::Power { q } if !(q >= 0.0 && q.is_finite()) => {
                return bad(format!("power exponent {q} must be nonnegative"))
            }
            SourceLaw::Step { a, b, s } if !(a >= b && b >= 0.0 && a.is_finite() && s > 0.0 && s.is_finite()) => {
                return bad(format!("step source needs a ≥ b ≥ 0 and s > 0, got a={a}, b={b}, s={s}"))
            }
            _ => {}
        }
        match &self.comparison {
            Some(ComparisonSpec::Constant { value }) if !(*value >= 0.0 && value.is_finite()) => {
                bad(format!("comparison constant {value} must be nonnegative"))
            }
            Some(ComparisonSpec::ScaledSource { factor }) if !(*factor >= 0.0 && factor.is_finite()) => {
                bad(format!("comparison factor {factor} must be nonnegative"))
            }
            Some(ComparisonSpec::Table { points }) => {
                if points.is_empty() {
                    return bad("comparison table is empty".into());
                }
                if points.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                    return bad("comparison table abscissae must increase".into());
                }
                if points.iter().any(|p| !(p[1] >= 0.0 && p[0].is_finite() && p[1].is_finite())) {
                    return bad("comparison table values must be finite and nonnegative".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn f(&self, u: f64) -> f64 {
        let u = u.max(0.0);
        match self.law {
            SourceLaw::Constant { c0 } => c0,
            SourceLaw::Power { q } => {
                if q == 0.0 {
                    1.0
                } else {
                    u.powf(q)
                }
            }
            SourceLaw::Step { a, b, s } => {
                if u < s {
                    a
                } else {
                    b
                }
            }
        }
    }

    /// `F(u) = ∫₀ᵘ f`, extended by `f(0)·u` for negative `u`.
    #[inline]
    pub fn primitive(&self, u: f64) -> f64 {
        if u < 0.0 {
            return self.f(0.0) * u;
        }
        match self.law {
            SourceLaw::Constant { c0 } => c0 * u,
            SourceLaw::Power { q } => u.powf(q + 1.0) / (q + 1.0),
            SourceLaw::Step { a, b, s } => {
                if u <= s {
                    a * u
                } else {
                    a * s + b * (u - s)
                }
            }
        }
    }

    /// Values where `f` jumps.
    pub fn jumps(&self) -> Vec<f64> {
        match self.law {
            SourceLaw::Step { a, b, s } if a != b => vec![s],
            _ => Vec::new(),
        }
    }

    /// Whether `f` is nonincreasing on `[0, ∞)`.
    pub fn is_nonincreasing(&self) -> bool {
        match self.law {
            SourceLaw::Constant { .. } | SourceLaw::Step { .. } => true,
            SourceLaw::Power { q } => q == 0.0,
        }
    }

    /// `φ(u)` if a comparison function is declared.
    pub fn comparison_value(&self, u: f64) -> Option<f64> {
        Some(match self.comparison.as_ref()? {
            ComparisonSpec::Constant { value } => *value,
            ComparisonSpec::ScaledSource { factor } => factor * self.f(u),
            ComparisonSpec::Table { points } => {
                let j = points.partition_point(|p| p[0] <= u);
                if j == 0 {
                    points[0][1]
                } else if j == points.len() {
                    points[j - 1][1]
                } else {
                    let (a, b) = (points[j - 1], points[j]);
                    a[1] + (u - a[0]) / (b[0] - a[0]) * (b[1] - a[1])
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub p: f64,
    pub norm: NormSpec,
    pub weight: WeightSpec,
    pub cone: ConeSpec,
    /// Wulff radius `R` of `Ω = B_R`.
    #[serde(alias = "R")]
    pub radius: f64,
    #[serde(rename = "f")]
    pub source: SourceSpec,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::InvalidSpec(format!("exponent p = {} must exceed 1", self.p)));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidSpec(format!("radius {} must be positive", self.radius)));
        }
        self.weight.validate_on(&self.cone)?;
        self.source.validate()?;
        if self.declares_condition_b() {
            let cert = validate_condition_b(self, self.dimension())?;
            if !cert.passed {
                return Err(Error::ConditionB(format!(
                    "monotone {:.3e}, lower {:.3e}, upper {:.3e}",
                    cert.monotone_violation, cert.lower_violation, cert.upper_violation
                )));
            }
        }
        Ok(())
    }

    /// `D = 2 + λ`.
    pub fn dimension(&self) -> f64 {
        self.weight.effective_dimension()
    }

    /// `p' = p/(p−1)`.
    pub fn conjugate(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    /// Whether the problem is run under condition (b).
    pub fn declares_condition_b(&self) -> bool {
        self.p < self.dimension() && self.source.comparison.is_some()
    }
}

/// Grid check of condition (b); all violations are absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionBCertificate {
    pub passed: bool,
    /// Largest increase of `φ` between consecutive grid values.
    pub monotone_violation: f64,
    /// Largest `φ − f`.
    pub lower_violation: f64,
    /// Largest `f − (Dp/(D−p)) φ`.
    pub upper_violation: f64,
    pub grid_max: f64,
}

const CONDITION_B_GRID: usize = 4001;

pub fn validate_condition_b(problem: &ProblemSpec, d: f64) -> Result<ConditionBCertificate> {
    let p = problem.p;
    if p >= d {
        return Err(Error::ConditionB(format!("requires p < D, got p = {p}, D = {d}")));
    }
    let src = &problem.source;
    if src.comparison.is_none() {
        return Err(Error::ConditionB("no comparison function supplied".into()));
    }
    let mut grid_max: f64 = 1.0;
    for s in src.jumps() {
        grid_max = grid_max.max(2.0 * s);
    }
    if let Some(ComparisonSpec::Table { points }) = &src.comparison {
        grid_max = grid_max.max(points.last().map_or(0.0, |p| p[0]));
    }
    let k = d * p / (d - p);
    let mut cert = ConditionBCertificate {
        passed: false,
        monotone_violation: 0.0,
        lower_violation: 0.0,
        upper_violation: 0.0,
        grid_max,
    };
    let mut prev: Option<f64> = None;
    let mut scale: f64 = 0.0;
    for j in 0..CONDITION_B_GRID {
        let u = grid_max * j as f64 / (CONDITION_B_GRID - 1) as f64;
        let f = src.f(u);
        let phi = src.comparison_value(u).unwrap_or(0.0);
        scale = scale.max(f).max(phi);
        if let Some(prev) = prev {
            cert.monotone_violation = cert.monotone_violation.max(phi - prev);
        }
        cert.lower_violation = cert.lower_violation.max(phi - f);
        cert.upper_violation = cert.upper_violation.max(f - k * phi);
        prev = Some(phi);
    }
    let tol = 1e-12 * (1.0 + scale);
    cert.passed = cert.monotone_violation <= tol && cert.lower_violation <= tol && cert.upper_violation <= tol;
    Ok(cert)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Scaled gradient tolerance: stop when `‖∇E‖ ≤ tol·(1+|E|)`.
    pub tol: f64,
    /// Iteration cap per inner minimization.
    pub max_iter: usize,
    pub eps_schedule: Vec<f64>,
    /// Finish with an unregularized (`ε = 0`) stage after the schedule.
    pub finish_unregularized: bool,
    /// Relative sup-norm change ending the Picard loop.
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Quasi-Newton memory.
    pub memory: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20_000,
            eps_schedule: vec![1e-1, 1e-2, 1e-3, 1e-4],
            finish_unregularized: true,
            outer_tol: 1e-6,
            max_outer: 60,
            memory: 10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || self.memory == 0 || self.max_outer == 0 {
            return Err(Error::InvalidSpec("solver tol, max_iter, max_outer and memory must be positive".into()));
        }
        if !(self.outer_tol > 0.0) {
            return Err(Error::InvalidSpec("outer_tol must be positive".into()));
        }
        if self.eps_schedule.is_empty() || self.eps_schedule.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(Error::InvalidSpec("eps_schedule must be a nonempty list of nonnegative values".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverMeta {
    pub epsilon: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub energy: f64,
    pub gradient_norm: f64,
    /// Largest `|∇u|` on triangles touching the `2h`-neighbourhood of the origin.
    pub vertex_gradient_max: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Values at mesh vertices.
    pub u: Vec<f64>,
    /// Constant gradient on each triangle.
    pub gradients: Vec<Point>,
    pub meta: SolverMeta,
}

impl Solution {
    /// Wraps vertex values; gradients are recomputed from the mesh.
    pub fn from_values(mesh: &Mesh, u: Vec<f64>) -> Result<Self> {
        if u.len() != mesh.vertices.len() {
            return Err(Error::InvalidSpec(format!(
                "{} values for {} vertices",
                u.len(),
                mesh.vertices.len()
            )));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateSolution("non-finite vertex value".into()));
        }
        let gradients = element_gradients(mesh, &u);
        Ok(Self {
            u,
            gradients,
            meta: SolverMeta::default(),
        })
    }

    /// `M = max u`.
    pub fn max(&self) -> f64 {
        self.u.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.u.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Writes `x,y,u` rows.
    pub fn save_csv(&self, mesh: &Mesh, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y", "u"])?;
        for (v, u) in mesh.vertices.iter().zip(&self.u) {
            w.write_record([v[0].to_string(), v[1].to_string(), u.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a file written by [`Solution::save_csv`] for the same mesh.
    pub fn load_csv(mesh: &Mesh, path: &Path) -> Result<Self> {
        let rows = csv::Reader::from_path(path)?
            .deserialize::<(f64, f64, f64)>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if rows.len() != mesh.vertices.len() {
            return Err(Error::InvalidSpec(format!(
                "{} has {} rows but the mesh has {} vertices",
                path.display(),
                rows.len(),
                mesh.vertices.len()
            )));
        }
        let tol = 1e-9 * (1.0 + mesh.h);
        for (i, (x, y, _)) in rows.iter().enumerate() {
            if geom::dist([*x, *y], mesh.vertices[i]) > tol {
                return Err(Error::InvalidSpec(format!("row {i} of {} does not match the mesh", path.display())));
            }
        }
        Self::from_values(mesh, rows.into_iter().map(|r| r.2).collect())
    }
}

/// Gradients of the P1 interpolant of `u`, one per triangle.
pub fn element_gradients(mesh: &Mesh, u: &[f64]) -> Vec<Point> {
    (0..mesh.triangles.len())
        .map(|t| {
            let g = shape_gradients(&mesh.triangle(t));
            let idx = mesh.triangles[t];
            (0..3).fold([0.0, 0.0], |acc, k| geom::add(acc, geom::scale(g[k], u[idx[k]])))
        })
        .collect()
}

fn shape_gradients(p: &[Point; 3]) -> [Point; 3] {
    let twice = geom::orient(p[0], p[1], p[2]);
    let g = |a: Point, b: Point| [(a[1] - b[1]) / twice, (b[0] - a[0]) / twice];
    [g(p[1], p[2]), g(p[2], p[0]), g(p[0], p[1])]
}

struct Element {
    v: [usize; 3],
    grad: [Point; 3],
    /// `∫_T w`.
    wint: f64,
    /// Quadrature weights with `w` and the area folded in.
    qw: [f64; 7],
}

/// Mesh-dependent data shared by energy evaluations.
pub(crate) struct Discretization<'a> {
    problem: &'a ProblemSpec,
    mesh: &'a Mesh,
    elems: Vec<Element>,
    /// Free index of each vertex, `usize::MAX` on `Γ₀`.
    free_of: Vec<usize>,
    free: Vec<usize>,
    jumps: Vec<f64>,
}

/// How the `F`-term is evaluated.
#[derive(Clone, Copy)]
enum Load<'b> {
    /// `∫ F(u) w`, split exactly at the jumps of `f`.
    Exact,
    /// `∫ f̄ u w` with `f̄` frozen at the quadrature points of each element.
    Frozen(&'b [[f64; 7]]),
}

impl<'a> Discretization<'a> {
    pub(crate) fn new(problem: &'a ProblemSpec, mesh: &'a Mesh) -> Self {
        let rule = degree5_rule();
        let w = &problem.weight;
        let elems = (0..mesh.triangles.len())
            .map(|t| {
                let tri = mesh.triangle(t);
                let area = tri_area(&tri).abs();
                let mut qw = [0.0; 7];
                for (q, node) in rule.iter().enumerate() {
                    qw[q] = node.weight * area * w.eval(bary_point(&tri, node.bary));
                }
                Element {
                    v: mesh.triangles[t],
                    grad: shape_gradients(&tri),
                    wint: qw.iter().sum(),
                    qw,
                }
            })
            .collect();
        let mask = mesh.dirichlet_mask();
        let mut free_of = vec![usize::MAX; mask.len()];
        let mut free = Vec::new();
        for (i, fixed) in mask.iter().enumerate() {
            if !fixed {
                free_of[i] = free.len();
                free.push(i);
            }
        }
        Self {
            problem,
            mesh,
            elems,
            free_of,
            free,
            jumps: problem.source.jumps(),
        }
    }

    pub(crate) fn n_free(&self) -> usize {
        self.free.len()
    }

    pub(crate) fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.free_of.len()];
        for (k, &i) in self.free.iter().enumerate() {
            u[i] = x[k];
        }
        u
    }

    pub(crate) fn restrict(&self, u: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| u[i]).collect()
    }

    /// Energy and gradient over all vertices.
    fn evaluate(&self, u: &[f64], eps: f64, load: Load) -> (f64, Vec<f64>) {
        let p = self.problem.p;
        let norm = &self.problem.norm;
        let src = &self.problem.source;
        let eps_p = if eps > 0.0 { eps.powf(p) } else { 0.0 };
        let rule = degree5_rule();
        let per: Vec<(f64, [f64; 3])> = self
            .elems
            .par_iter()
            .enumerate()
            .map(|(t, el)| {
                let uv = el.v.map(|i| u[i]);
                let gu = (0..3).fold([0.0, 0.0], |acc, k| geom::add(acc, geom::scale(el.grad[k], uv[k])));
                let h = norm.eval(gu);
                let s = eps * eps + h * h;
                let mut e = (s.powf(0.5 * p) - eps_p) / p * el.wint;
                let mut g = [0.0; 3];
                if h > 0.0 {
                    let flux = geom::scale(norm.half_sq_grad(gu), s.powf(0.5 * (p - 2.0)) * el.wint);
                    for k in 0..3 {
                        g[k] = geom::dot(flux, el.grad[k]);
                    }
                }
                match load {
                    Load::Frozen(fq) => {
                        for (q, node) in rule.iter().enumerate() {
                            let b = node.bary;
                            let uq = b[0] * uv[0] + b[1] * uv[1] + b[2] * uv[2];
                            let c = el.qw[q] * fq[t][q];
                            e -= c * uq;
                            for k in 0..3 {
                                g[k] -= c * b[k];
                            }
                        }
                    }
                    Load::Exact => {
                        let lo = uv.iter().cloned().fold(f64::INFINITY, f64::min);
                        let hi = uv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut cuts: Vec<f64> = self.jumps.iter().cloned().filter(|&c| c > lo && c < hi).collect();
                        if lo < 0.0 && hi > 0.0 {
                            cuts.push(0.0);
                            cuts.sort_by(f64::total_cmp);
                        }
                        if cuts.is_empty() {
                            for (q, node) in rule.iter().enumerate() {
                                let b = node.bary;
                                let uq = b[0] * uv[0] + b[1] * uv[1] + b[2] * uv[2];
                                e -= el.qw[q] * src.primitive(uq);
                                let fq = el.qw[q] * src.f(uq);
                                for k in 0..3 {
                                    g[k] -= fq * b[k];
                                }
                            }
                        } else {
                            let (de, dg) = self.split_load(t, uv, &cuts);
                            e -= de;
                            for k in 0..3 {
                                g[k] -= dg[k];
                            }
                        }
                    }
                }
                (e, g)
            })
            .collect();
        let mut energy = 0.0;
        let mut grad = vec![0.0; u.len()];
        for (el, (e, g)) in self.elems.iter().zip(per) {
            energy += e;
            for k in 0..3 {
                grad[el.v[k]] += g[k];
            }
        }
        (energy, grad)
    }

    /// `∫_T F(u) w` and `∫_T f(u) φ_k w` on a triangle crossed by a jump.
    fn split_load(&self, t: usize, uv: [f64; 3], cuts: &[f64]) -> (f64, [f64; 3]) {
        let tri = self.mesh.triangle(t);
        let area = tri_area(&tri).abs();
        let w = &self.problem.weight;
        let src = &self.problem.source;
        let mut e = 0.0;
        let mut g = [0.0; 3];
        for piece in split_at_levels(uv, cuts) {
            let frac = bary_area_fraction(&piece);
            for node in degree5_rule() {
                let b = [0, 1, 2].map(|k| {
                    node.bary[0] * piece[0][k] + node.bary[1] * piece[1][k] + node.bary[2] * piece[2][k]
                });
                let c = node.weight * area * frac * w.eval(bary_point(&tri, b));
                let uq = b[0] * uv[0] + b[1] * uv[1] + b[2] * uv[2];
                e += c * src.primitive(uq);
                // Nodes are interior to the piece, so f is evaluated off the jump.
                let fval = src.f(uq);
                for k in 0..3 {
                    g[k] += c * fval * b[k];
                }
            }
        }
        (e, g)
    }

    fn frozen_load(&self, u: &[f64]) -> Vec<[f64; 7]> {
        let rule = degree5_rule();
        let src = &self.problem.source;
        self.elems
            .iter()
            .map(|el| {
                let uv = el.v.map(|i| u[i]);
                let mut f = [0.0; 7];
                for (q, node) in rule.iter().enumerate() {
                    let b = node.bary;
                    f[q] = src.f(b[0] * uv[0] + b[1] * uv[1] + b[2] * uv[2]);
                }
                f
            })
            .collect()
    }

    fn free_energy(&self, x: &[f64], eps: f64, load: Load) -> (f64, Vec<f64>) {
        let u = self.expand(x);
        let (e, g) = self.evaluate(&u, eps, load);
        (e, self.restrict(&g))
    }

    /// Diagonal of the linearized operator, used as the quasi-Newton seed.
    fn preconditioner(&self, u: &[f64], eps: f64) -> Vec<f64> {
        let p = self.problem.p;
        let (_, k2) = self.problem.norm.equivalence_constants();
        let coef: Vec<f64> = self
            .elems
            .iter()
            .map(|el| {
                let gu = (0..3).fold([0.0, 0.0], |acc, k| geom::add(acc, geom::scale(el.grad[k], u[el.v[k]])));
                let h = self.problem.norm.eval(gu);
                let s = (eps * eps + h * h).max(1e-300);
                s.powf(0.5 * (p - 2.0)) * k2 * k2
            })
            .collect();
        let cmax = coef.iter().cloned().fold(0.0, f64::max);
        let mut d = vec![0.0; u.len()];
        for (el, c) in self.elems.iter().zip(&coef) {
            let c = c.max(1e-6 * cmax).min(1e6 * cmax.max(1e-300));
            for k in 0..3 {
                d[el.v[k]] += c * geom::dot(el.grad[k], el.grad[k]) * el.wint;
            }
        }
        let mut d = self.restrict(&d);
        let dmax = d.iter().cloned().fold(0.0, f64::max);
        for v in d.iter_mut() {
            *v = v.max(1e-10 * dmax).max(f64::MIN_POSITIVE);
        }
        d
    }
}

/// Discrete energy `Σ_T ψ_ε(H(∇u|_T))∫_T w − ∫ F(u) w`.
pub fn energy(problem: &ProblemSpec, mesh: &Mesh, u: &[f64], eps: f64) -> Result<f64> {
    check_field(mesh, u)?;
    Ok(Discretization::new(problem, mesh).evaluate(u, eps, Load::Exact).0)
}

/// Gradient of [`energy`] with respect to the free (non-`Γ₀`) vertex values,
/// listed in increasing vertex order.
pub fn energy_gradient(problem: &ProblemSpec, mesh: &Mesh, u: &[f64], eps: f64) -> Result<Vec<f64>> {
    check_field(mesh, u)?;
    let disc = Discretization::new(problem, mesh);
    let (_, g) = disc.evaluate(u, eps, Load::Exact);
    Ok(disc.restrict(&g))
}

/// Vertex indices matching the entries of [`energy_gradient`].
pub fn free_vertices(mesh: &Mesh) -> Vec<usize> {
    mesh.dirichlet_mask()
        .iter()
        .enumerate()
        .filter(|(_, d)| !**d)
        .map(|(i, _)| i)
        .collect()
}

fn check_field(mesh: &Mesh, u: &[f64]) -> Result<()> {
    if u.len() != mesh.vertices.len() {
        return Err(Error::InvalidSpec(format!(
            "{} values for {} vertices",
            u.len(),
            mesh.vertices.len()
        )));
    }
    Ok(())
}

struct InnerOutcome {
    energy: f64,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
    reason: String,
}

/// Limited-memory BFGS with a diagonal seed and Armijo backtracking.
fn lbfgs(
    x: &mut Vec<f64>,
    fg: impl Fn(&[f64]) -> (f64, Vec<f64>),
    diag: &[f64],
    tol: f64,
    max_iter: usize,
    memory: usize,
) -> InnerOutcome {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (mut f, mut g) = fg(x);
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    let mut gamma = 1.0;
    let out = |f: f64, g: &[f64], it: usize, ok: bool, reason: &str| InnerOutcome {
        energy: f,
        grad_norm: dot(g, g).sqrt(),
        iterations: it,
        converged: ok,
        reason: reason.to_string(),
    };
    for it in 0..max_iter {
        let gnorm = dot(&g, &g).sqrt();
        if !f.is_finite() || !gnorm.is_finite() {
            return out(f, &g, it, false, "non-finite energy or gradient");
        }
        if gnorm <= tol * (1.0 + f.abs()) {
            return out(f, &g, it, true, "");
        }
        let mut accepted = None;
        for attempt in 0..2 {
            // Two-loop recursion.
            let mut d: Vec<f64> = g.clone();
            let mut alphas = Vec::with_capacity(hist.len());
            for (s, y, rho) in hist.iter().rev() {
                let a = rho * dot(s, &d);
                for (di, yi) in d.iter_mut().zip(y) {
                    *di -= a * yi;
                }
                alphas.push(a);
            }
            for (di, dd) in d.iter_mut().zip(diag) {
                *di *= gamma / dd;
            }
            for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
                let b = rho * dot(y, &d);
                for (di, si) in d.iter_mut().zip(s) {
                    *di += (a - b) * si;
                }
            }
            for di in d.iter_mut() {
                *di = -*di;
            }
            let mut slope = dot(&g, &d);
            if !(slope < 0.0) {
                hist.clear();
                gamma = 1.0;
                d = g.iter().zip(diag).map(|(gi, di)| -gi / di).collect();
                slope = dot(&g, &d);
            }
            let mut step = 1.0;
            for _ in 0..60 {
                let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
                let (fnew, gnew) = fg(&xn);
                if fnew.is_finite() {
                    let armijo = fnew <= f + 1e-4 * step * slope;
                    // Approximate Wolfe test for when energy differences drown in round-off.
                    let approx = fnew <= f + 1e-12 * f.abs() && dot(&gnew, &d) <= (2.0 * 1e-4 - 1.0) * slope;
                    if armijo || approx {
                        accepted = Some((xn, fnew, gnew));
                        break;
                    }
                }
                step *= 0.5;
            }
            if accepted.is_some() || attempt == 1 || hist.is_empty() {
                break;
            }
            hist.clear();
            gamma = 1.0;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            return out(f, &g, it, false, "line search failed");
        };
        let s: Vec<f64> = xn.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 && sy > 1e-14 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if hist.len() == memory {
                hist.pop_front();
            }
            let yhy: f64 = y.iter().zip(diag).map(|(yi, di)| yi * yi / di).sum();
            gamma = sy / yhy;
            hist.push_back((s, y, 1.0 / sy));
        }
        *x = xn;
        f = fnew;
        g = gnew;
    }
    let ok = dot(&g, &g).sqrt() <= tol * (1.0 + f.abs());
    out(f, &g, max_iter, ok, "iteration limit reached")
}

/// Minimizes the regularized energy with ε-continuation; `f` is handled
/// directly when nonincreasing and by a Picard loop otherwise.
pub fn solve(problem: &ProblemSpec, mesh: &Mesh, config: &SolverConfig) -> Result<Solution> {
    problem.validate()?;
    config.validate()?;
    let disc = Discretization::new(problem, mesh);
    if disc.n_free() == 0 {
        return Err(Error::Mesh("mesh has no free vertices".into()));
    }
    let src = &problem.source;
    let mut u = vec![0.0; mesh.vertices.len()];
    if src.f(0.0) == 0.0 {
        // u ≡ 0 solves the problem; start from a positive bump instead.
        let amp = 0.25 * problem.radius.powf(problem.conjugate());
        for (i, x) in mesh.vertices.iter().enumerate() {
            let r = problem.norm.dual(*x) / problem.radius;
            u[i] = amp * (1.0 - r * r).max(0.0);
        }
        for (i, d) in mesh.dirichlet_mask().into_iter().enumerate() {
            if d {
                u[i] = 0.0;
            }
        }
    }
    let mut x = disc.restrict(&u);
    let mut meta = SolverMeta::default();
    let mut failure: Option<String> = None;
    let mut schedule = config.eps_schedule.clone();
    if config.finish_unregularized && schedule.last() != Some(&0.0) {
        schedule.push(0.0);
    }
    let stages = schedule.len();
    for (stage, &eps) in schedule.iter().enumerate() {
        let last = stage + 1 == stages;
        let tol = if last { config.tol } else { config.tol.max(1e-6) };
        meta.epsilon = eps;
        if src.is_nonincreasing() {
            let diag = disc.preconditioner(&disc.expand(&x), eps);
            let r = lbfgs(
                &mut x,
                |y| disc.free_energy(y, eps, Load::Exact),
                &diag,
                tol,
                config.max_iter,
                config.memory,
            );
            meta.iterations += r.iterations;
            meta.energy = r.energy;
            meta.gradient_norm = r.grad_norm;
            if !r.converged {
                failure = Some(format!("ε = {eps}: {} after {} iterations", r.reason, r.iterations));
                break;
            }
        } else {
            let mut settled = false;
            for _ in 0..config.max_outer {
                let prev = x.clone();
                let full = disc.expand(&x);
                let frozen = disc.frozen_load(&full);
                let diag = disc.preconditioner(&full, eps);
                let r = lbfgs(
                    &mut x,
                    |y| disc.free_energy(y, eps, Load::Frozen(&frozen)),
                    &diag,
                    tol,
                    config.max_iter,
                    config.memory,
                );
                meta.iterations += r.iterations;
                meta.outer_iterations += 1;
                meta.gradient_norm = r.grad_norm;
                if !r.converged {
                    failure = Some(format!("ε = {eps}: {} after {} iterations", r.reason, r.iterations));
                    break;
                }
                let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                let change = x.iter().zip(&prev).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                if change <= config.outer_tol * scale {
                    settled = true;
                    break;
                }
            }
            if failure.is_none() && !settled {
                failure = Some(format!("ε = {eps}: Picard loop did not settle in {} steps", config.max_outer));
            }
            meta.energy = disc.free_energy(&x, eps, Load::Exact).0;
            if failure.is_some() {
                break;
            }
        }
    }
    let u = disc.expand(&x);
    let mut sol = Solution::from_values(mesh, u).map_err(|e| Error::NonConvergence {
        reason: e.to_string(),
        last: Box::new(Solution {
            u: disc.expand(&x),
            gradients: Vec::new(),
            meta: meta.clone(),
        }),
    })?;
    meta.vertex_gradient_max = vertex_gradient_max(mesh, &sol.gradients);
    meta.converged = failure.is_none();
    sol.meta = meta;
    match failure {
        None => Ok(sol),
        Some(reason) => Err(Error::NonConvergence {
            reason,
            last: Box::new(sol),
        }),
    }
}

fn vertex_gradient_max(mesh: &Mesh, grads: &[Point]) -> f64 {
    let r = 2.0 * mesh.h;
    mesh.triangles
        .iter()
        .zip(grads)
        .filter(|(t, _)| t.iter().any(|&i| geom::norm(mesh.vertices[i]) <= r))
        .map(|(_, g)| geom::norm(*g))
        .fold(0.0, f64::max)
}

/// `max_i |∫ H(∇u)^{p−1}⟨∇_ξH(∇u), ∇φ_i⟩ w − ∫ f(u) φ_i w|` over hat functions
/// of free vertices, divided by `max_i ∫ f(u) φ_i w`.
/// Unregularized residual `∫ H^{p−1}∇H(∇u)·∇φ_i w − ∫ f(u) φ_i w` at every
/// vertex, including `Γ₀` where it equals the boundary flux against `φ_i`.
pub(crate) fn nodal_residual(problem: &ProblemSpec, mesh: &Mesh, u: &[f64]) -> Vec<f64> {
    Discretization::new(problem, mesh).evaluate(u, 0.0, Load::Exact).1
}

pub fn weak_residual(problem: &ProblemSpec, mesh: &Mesh, solution: &Solution) -> Result<f64> {
    check_field(mesh, &solution.u)?;
    let disc = Discretization::new(problem, mesh);
    let (_, r) = disc.evaluate(&solution.u, 0.0, Load::Exact);
    let unloaded = ProblemSpec {
        source: SourceSpec::constant(0.0),
        ..problem.clone()
    };
    let (_, flux) = Discretization::new(&unloaded, mesh).evaluate(&solution.u, 0.0, Load::Exact);
    let free = &disc.free;
    let res = free.iter().map(|&i| r[i].abs()).fold(0.0, f64::max);
    let load = free.iter().map(|&i| (flux[i] - r[i]).abs()).fold(0.0, f64::max);
    if load == 0.0 {
        return Err(Error::DegenerateSolution("source term vanishes on the free vertices".into()));
    }
    Ok(res / load)
}
