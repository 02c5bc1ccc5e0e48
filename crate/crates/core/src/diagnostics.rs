//! Level-set diagnostics of a computed solution: distribution functions,
//! Gauss–Green and Hölder–isoperimetric identities, Pohozaev residual,
//! gradient constancy and the Wulff-radial fit.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone::{ConeSpec, EdgeTag, PolygonalSet};
use crate::error::{Error, Result};
use crate::geom::{self, Point};
use crate::isoperimetry;
use crate::mesh::{BoundaryTag, Mesh};
use crate::quadrature::{
    bary_area_fraction, bary_point, degree5_rule, integrate_segment, split_at_levels, tri_area,
};
use crate::solver::{ProblemSpec, Solution};

/// Connected piece of a level curve; segment `k` joins `points[k]` and
/// `points[k + 1]` and lies in triangle `triangles[k]`. Oriented so that
/// `{u > t}` is on the left.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub points: Vec<Point>,
    pub triangles: Vec<usize>,
    pub closed: bool,
}

impl Polyline {
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| geom::dist(w[0], w[1])).sum()
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point, Point, usize)> + '_ {
        self.points
            .windows(2)
            .zip(&self.triangles)
            .map(|(w, t)| (w[0], w[1], *t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Key {
    Vertex(usize),
    Edge(usize, usize),
}

/// Point where the linear interpolant along edge `ij` equals `t`.
fn crossing(mesh: &Mesh, u: &[f64], i: usize, j: usize, t: f64) -> (Key, Point) {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    if u[i] == t {
        return (Key::Vertex(i), mesh.vertices[i]);
    }
    if u[j] == t {
        return (Key::Vertex(j), mesh.vertices[j]);
    }
    let s = (t - u[i]) / (u[j] - u[i]);
    (Key::Edge(i, j), geom::lerp(mesh.vertices[i], mesh.vertices[j], s))
}

struct Piece {
    from: (Key, Point),
    to: (Key, Point),
    triangle: usize,
    tag: EdgeTag,
}

fn level_pieces(mesh: &Mesh, sol: &Solution, t: f64) -> Vec<Piece> {
    let u = &sol.u;
    let mut out = Vec::new();
    for (k, tri) in mesh.triangles.iter().enumerate() {
        let above = tri.map(|i| u[i] > t);
        if above.iter().all(|a| *a) || above.iter().all(|a| !*a) {
            continue;
        }
        let mut ends = Vec::with_capacity(2);
        for e in 0..3 {
            let (i, j) = (tri[e], tri[(e + 1) % 3]);
            if above[e] != above[(e + 1) % 3] {
                ends.push(crossing(mesh, u, i, j, t));
            }
        }
        let (mut a, mut b) = (ends[0], ends[1]);
        if a.0 == b.0 {
            continue;
        }
        if geom::cross(geom::sub(b.1, a.1), sol.gradients[k]) < 0.0 {
            std::mem::swap(&mut a, &mut b);
        }
        out.push(Piece {
            from: a,
            to: b,
            triangle: k,
            tag: EdgeTag::Interior,
        });
    }
    out
}

/// Chains oriented pieces by matching end keys. Open chains are returned
/// before closed loops.
fn chain(pieces: &[Piece]) -> Vec<(Vec<usize>, bool)> {
    let mut next: BTreeMap<Key, usize> = BTreeMap::new();
    let mut has_pred = vec![false; pieces.len()];
    for (k, p) in pieces.iter().enumerate() {
        next.insert(p.from.0, k);
    }
    for p in pieces {
        if let Some(&k) = next.get(&p.to.0) {
            has_pred[k] = true;
        }
    }
    let mut used = vec![false; pieces.len()];
    let mut out = Vec::new();
    let starts: Vec<usize> = (0..pieces.len())
        .filter(|k| !has_pred[*k])
        .chain(0..pieces.len())
        .collect();
    for s in starts {
        if used[s] {
            continue;
        }
        let mut path = vec![s];
        used[s] = true;
        let mut cur = s;
        let mut closed = false;
        while let Some(&n) = next.get(&pieces[cur].to.0) {
            if n == s {
                closed = true;
                break;
            }
            if used[n] {
                break;
            }
            used[n] = true;
            path.push(n);
            cur = n;
        }
        out.push((path, closed));
    }
    out
}

/// Marching-triangles extraction of `{u = t}`.
pub fn extract_level_set(mesh: &Mesh, solution: &Solution, t: f64) -> Result<Vec<Polyline>> {
    let m = solution.max();
    if !(t < m) {
        return Err(Error::EmptyLevel(t));
    }
    let pieces = level_pieces(mesh, solution, t);
    if pieces.is_empty() {
        return Err(Error::EmptyLevel(t));
    }
    Ok(chain(&pieces)
        .into_iter()
        .map(|(path, closed)| {
            let mut points: Vec<Point> = path.iter().map(|&k| pieces[k].from.1).collect();
            let last = &pieces[*path.last().unwrap()];
            points.push(if closed { pieces[path[0]].from.1 } else { last.to.1 });
            Polyline {
                points,
                triangles: path.iter().map(|&k| pieces[k].triangle).collect(),
                closed,
            }
        })
        .collect())
}

/// Largest connected component of `{u > t}` as a polygon; level-curve and
/// `Γ₀` edges are tagged interior, pieces of `Γ₁` lie on the cone boundary.
pub fn superlevel_region(mesh: &Mesh, solution: &Solution, t: f64) -> Result<PolygonalSet> {
    if !(t < solution.max()) {
        return Err(Error::EmptyLevel(t));
    }
    let u = &solution.u;
    let mut pieces = level_pieces(mesh, solution, t);
    for e in &mesh.boundary {
        let tag = match e.tag {
            BoundaryTag::Gamma0 => EdgeTag::Interior,
            BoundaryTag::Gamma1 => EdgeTag::ConeBoundary,
        };
        let va = (Key::Vertex(e.a), mesh.vertices[e.a]);
        let vb = (Key::Vertex(e.b), mesh.vertices[e.b]);
        let (from, to) = match (u[e.a] > t, u[e.b] > t) {
            (true, true) => (va, vb),
            (true, false) => (va, crossing(mesh, u, e.a, e.b, t)),
            (false, true) => (crossing(mesh, u, e.a, e.b, t), vb),
            (false, false) => continue,
        };
        if from.0 != to.0 {
            pieces.push(Piece {
                from,
                to,
                triangle: usize::MAX,
                tag,
            });
        }
    }
    let mut best: Option<(f64, Vec<Point>, Vec<EdgeTag>)> = None;
    for (path, closed) in chain(&pieces) {
        if !closed {
            continue;
        }
        let pts: Vec<Point> = path.iter().map(|&k| pieces[k].from.1).collect();
        let tags: Vec<EdgeTag> = path.iter().map(|&k| pieces[k].tag).collect();
        let area = geom::polygon_area(&pts);
        if area > 0.0 && best.as_ref().is_none_or(|b| area > b.0) {
            best = Some((area, pts, tags));
        }
    }
    let (_, pts, tags) = best.ok_or_else(|| Error::Geometry(format!("superlevel set at t = {t} has no closed boundary")))?;
    PolygonalSet::new(pts, tags)
}

/// Weighted integral of `g(u)` over `{u > t}`, split exactly at `cuts`.
fn superlevel_integral(
    problem: &ProblemSpec,
    mesh: &Mesh,
    u: &[f64],
    t: f64,
    cuts: &[f64],
    g: impl Fn(f64) -> f64 + Sync,
) -> f64 {
    let w = &problem.weight;
    let rule = degree5_rule();
    let per: Vec<f64> = (0..mesh.triangles.len())
        .into_par_iter()
        .map(|k| {
            let idx = mesh.triangles[k];
            let uv = idx.map(|i| u[i]);
            if uv.iter().all(|v| *v <= t) {
                return 0.0;
            }
            let tri = mesh.triangle(k);
            let area = tri_area(&tri).abs();
            let mut cs: Vec<f64> = cuts.iter().cloned().filter(|c| *c > t).collect();
            cs.push(t);
            cs.sort_by(f64::total_cmp);
            let mut acc = 0.0;
            for piece in split_at_levels(uv, &cs) {
                let centroid: f64 = (0..3).map(|c| (piece[0][c] + piece[1][c] + piece[2][c]) / 3.0 * uv[c]).sum();
                if centroid <= t {
                    continue;
                }
                let frac = bary_area_fraction(&piece);
                for node in rule {
                    let b = [0, 1, 2].map(|c| {
                        node.bary[0] * piece[0][c] + node.bary[1] * piece[1][c] + node.bary[2] * piece[2][c]
                    });
                    let uq = b[0] * uv[0] + b[1] * uv[1] + b[2] * uv[2];
                    acc += node.weight * area * frac * w.eval(bary_point(&tri, b)) * g(uq);
                }
            }
            acc
        })
        .collect();
    per.iter().sum()
}

/// `μ(t) = w({u > t})`.
pub fn superlevel_measure(problem: &ProblemSpec, mesh: &Mesh, solution: &Solution, t: f64) -> f64 {
    superlevel_integral(problem, mesh, &solution.u, t, &[], |_| 1.0)
}

/// `I(t) = ∫_{u > t} f(u) w`.
pub fn superlevel_source(problem: &ProblemSpec, mesh: &Mesh, solution: &Solution, t: f64) -> f64 {
    let src = &problem.source;
    superlevel_integral(problem, mesh, &solution.u, t, &src.jumps(), |v| src.f(v))
}

/// One row of the level table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub t: f64,
    pub mu: f64,
    pub source: f64,
    pub k: f64,
    /// `∮ w/|∇u|` over resolved level components.
    pub s_inverse_gradient: f64,
    /// `∮ H(∇u)^{p−1} H(ν) w` over resolved level components.
    pub s_flux: f64,
    pub quotient: f64,
    pub grad_cv: f64,
    /// Wulff-ball center restricted to the line factor of the cone.
    pub center: Point,
    pub rho: f64,
    /// Unconstrained Wulff-ball center fitted to the same level curve.
    pub free_center: Point,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelTable {
    pub m: f64,
    pub h: f64,
    pub p: f64,
    pub d: f64,
    /// Optimal isoperimetric constant of the configuration.
    pub constant: f64,
    pub records: Vec<LevelRecord>,
}

impl LevelTable {
    /// `α = p'`.
    pub fn alpha(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    /// `β = (p − D)/(D(p − 1))`.
    pub fn beta(&self) -> f64 {
        (self.p - self.d) / (self.d * (self.p - 1.0))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "mu", "I", "K", "Q", "grad_cv", "center_x", "center_y", "rho"])?;
        for r in &self.records {
            w.write_record(
                [r.t, r.mu, r.source, r.k, r.quotient, r.grad_cv, r.center[0], r.center[1], r.rho].map(|v| v.to_string()),
            )?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Level grid `t_i = M(0.05 + 0.9 i/(n−1))`.
pub fn level_grid(m: f64, n_levels: usize) -> Vec<f64> {
    (0..n_levels)
        .map(|i| m * (0.05 + 0.9 * i as f64 / (n_levels - 1) as f64))
        .collect()
}

/// How `∇u` is evaluated on level segments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Constant gradient of the triangle containing the segment.
    Element,
    /// Area-weighted vertex averages of the element gradients, interpolated
    /// linearly inside each triangle.
    #[default]
    Recovered,
}

/// Area-weighted average of the element gradients around each vertex.
pub fn recovered_gradients(mesh: &Mesh, solution: &Solution) -> Vec<Point> {
    let mut acc = vec![[0.0, 0.0]; mesh.vertices.len()];
    let mut wsum = vec![0.0; mesh.vertices.len()];
    for (k, tri) in mesh.triangles.iter().enumerate() {
        let a = tri_area(&mesh.triangle(k)).abs();
        for &i in tri {
            acc[i] = geom::add(acc[i], geom::scale(solution.gradients[k], a));
            wsum[i] += a;
        }
    }
    acc.iter()
        .zip(&wsum)
        .map(|(g, w)| if *w > 0.0 { geom::scale(*g, 1.0 / w) } else { [0.0, 0.0] })
        .collect()
}

fn barycentric(tri: &[Point; 3], x: Point) -> [f64; 3] {
    let area = geom::orient(tri[0], tri[1], tri[2]);
    let b1 = geom::orient(tri[0], x, tri[2]) / area;
    let b2 = geom::orient(tri[0], tri[1], x) / area;
    [1.0 - b1 - b2, b1, b2]
}

/// Gradient evaluator for level-curve integrals.
struct GradientField<'a> {
    mesh: &'a Mesh,
    element: &'a [Point],
    vertex: Option<Vec<Point>>,
}

impl<'a> GradientField<'a> {
    fn new(mesh: &'a Mesh, solution: &'a Solution, mode: GradientMode) -> Self {
        let vertex = match mode {
            GradientMode::Element => None,
            GradientMode::Recovered => Some(recovered_gradients(mesh, solution)),
        };
        Self {
            mesh,
            element: &solution.gradients,
            vertex,
        }
    }

    fn at(&self, k: usize, x: Point) -> Point {
        match &self.vertex {
            None => self.element[k],
            Some(v) => {
                let b = barycentric(&self.mesh.triangle(k), x);
                let idx = self.mesh.triangles[k];
                (0..3).fold([0.0, 0.0], |g, c| geom::add(g, geom::scale(v[idx[c]], b[c])))
            }
        }
    }
}

/// Surface integrals and gradient statistics along resolved components.
struct LevelIntegrals {
    s_inverse_gradient: f64,
    s_flux: f64,
    grad_cv: f64,
    length: f64,
}

fn level_integrals(problem: &ProblemSpec, field: &GradientField, lines: &[Polyline]) -> Result<LevelIntegrals> {
    let p = problem.p;
    let w = &problem.weight;
    let norm = &problem.norm;
    let min_len = 4.0 * field.mesh.h;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut len = 0.0;
    let mut hsum = 0.0;
    let mut h2sum = 0.0;
    for line in lines.iter().filter(|l| l.length() >= min_len) {
        for (a, b, k) in line.segments() {
            let ge = field.element[k];
            let gen = geom::norm(ge);
            if gen == 0.0 {
                continue;
            }
            // H(∇u)^{p−1} H(∇u/|∇u|), with the direction taken from the
            // discrete level curve.
            let hdir = norm.eval(ge) / gen;
            let l = geom::dist(a, b);
            let q1 = integrate_segment(a, b, |x| {
                let g = field.at(k, x);
                let gn = geom::norm(g);
                if gn > 0.0 { w.eval(x) / gn } else { 0.0 }
            });
            let q2 = integrate_segment(a, b, |x| {
                let g = field.at(k, x);
                norm.eval(g).powf(p - 1.0) * hdir * w.eval(x)
            });
            let m1 = integrate_segment(a, b, |x| norm.eval(field.at(k, x)));
            let m2 = integrate_segment(a, b, |x| norm.eval(field.at(k, x)).powi(2));
            s1 += q1;
            s2 += q2;
            len += l;
            hsum += m1;
            h2sum += m2;
        }
    }
    if len == 0.0 {
        return Err(Error::EmptyLevel(f64::NAN));
    }
    let mean = hsum / len;
    let var = (h2sum / len - mean * mean).max(0.0);
    Ok(LevelIntegrals {
        s_inverse_gradient: s1,
        s_flux: s2,
        grad_cv: var.sqrt() / mean,
        length: len,
    })
}

/// Length-weighted coefficient of variation of `H(∇u)` along `{u = t}`.
pub fn gradient_constancy(
    problem: &ProblemSpec,
    mesh: &Mesh,
    solution: &Solution,
    t: f64,
    mode: GradientMode,
) -> Result<f64> {
    let lines = extract_level_set(mesh, solution, t)?;
    level_integrals(problem, &GradientField::new(mesh, solution, mode), &lines)
        .map(|l| l.grad_cv)
        .map_err(|_| Error::EmptyLevel(t))
}

fn level_record(
    problem: &ProblemSpec,
    field: &GradientField,
    sol: &Solution,
    t: f64,
    alpha: f64,
    beta: f64,
) -> Result<LevelRecord> {
    let mesh = field.mesh;
    let lines = extract_level_set(mesh, sol, t)?;
    let li = level_integrals(problem, field, &lines).map_err(|_| Error::EmptyLevel(t))?;
    let mu = superlevel_measure(problem, mesh, sol, t);
    let source = superlevel_source(problem, mesh, sol, t);
    let region = superlevel_region(mesh, sol, t)?;
    let quotient = isoperimetry::quotient(&problem.norm, &problem.weight, &problem.cone, &region)?;
    let fit = isoperimetry::characterize_minimizer(&problem.norm, &problem.weight, &problem.cone, &region)?;
    let free_points: Vec<Point> = lines
        .iter()
        .filter(|l| l.length() >= 4.0 * mesh.h)
        .flat_map(|l| l.points.iter().copied())
        .collect();
    let (free, _) = isoperimetry::fit_wulff_ball(&problem.norm, &ConeSpec::full_plane(), &free_points)?;
    Ok(LevelRecord {
        t,
        mu,
        source,
        k: source.powf(alpha) * mu.powf(beta),
        s_inverse_gradient: li.s_inverse_gradient,
        s_flux: li.s_flux,
        quotient,
        grad_cv: li.grad_cv,
        center: fit.ball.center,
        rho: fit.ball.radius,
        free_center: free.center,
        length: li.length,
    })
}

/// Builds the level table on `n_levels` uniform levels in `[0.05M, 0.95M]`.
pub fn distribution_table(
    problem: &ProblemSpec,
    mesh: &Mesh,
    solution: &Solution,
    n_levels: usize,
    mode: GradientMode,
) -> Result<LevelTable> {
    problem.validate()?;
    if n_levels < 3 {
        return Err(Error::InsufficientData(format!("{n_levels} levels, at least 3 needed")));
    }
    let m = solution.max();
    if !(m > 0.0) {
        return Err(Error::DegenerateSolution(format!("M = {m} is not positive")));
    }
    let constant = isoperimetry::optimal_constant(&problem.norm, &problem.weight, &problem.cone)?.constant;
    let d = problem.dimension();
    let p = problem.p;
    let alpha = p / (p - 1.0);
    let beta = (p - d) / (d * (p - 1.0));
    let field = GradientField::new(mesh, solution, mode);
    let records = level_grid(m, n_levels)
        .into_par_iter()
        .map(|t| level_record(problem, &field, solution, t, alpha, beta))
        .collect::<Result<Vec<_>>>()?;
    Ok(LevelTable {
        m,
        h: mesh.h,
        p,
        d,
        constant,
        records,
    })
}

/// Largest relative increase `(K(t_{i+1}) − K(t_i))/K(t_i)`, clipped at 0.
pub fn check_k_monotone(table: &LevelTable) -> Result<f64> {
    require_levels(table, 10)?;
    Ok(table
        .records
        .windows(2)
        .map(|w| ((w[1].k - w[0].k) / w[0].k).max(0.0))
        .fold(0.0, f64::max))
}

/// Smallest relative slack `(−μ′ − ∮w/|∇u|)/∮w/|∇u|` over interior levels,
/// with `μ′` from centered differences.
pub fn mu_derivative_check(table: &LevelTable) -> Result<f64> {
    require_levels(table, 10)?;
    let r = &table.records;
    let mut worst = f64::INFINITY;
    for i in 1..r.len() - 1 {
        let s = r[i].s_inverse_gradient;
        if !(s > 0.0 && s.is_finite()) {
            continue;
        }
        let dmu = -(r[i + 1].mu - r[i - 1].mu) / (r[i + 1].t - r[i - 1].t);
        worst = worst.min((dmu - s) / s);
    }
    if worst.is_infinite() {
        return Err(Error::InsufficientData("no interior level with a resolved curve".into()));
    }
    Ok(worst)
}

/// Range of the relative slack
/// `[I^{1/p}(∮w/|∇u|)^{(p−1)/p} − c μ^{(D−1)/D}] / (c μ^{(D−1)/D})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlackRange {
    pub min: f64,
    pub max: f64,
}

impl SlackRange {
    /// The endpoint with the larger magnitude.
    pub fn worst(&self) -> f64 {
        if self.max.abs() > self.min.abs() {
            self.max
        } else {
            self.min
        }
    }
}

pub fn holder_isoperimetric_check(table: &LevelTable, c: f64) -> Result<SlackRange> {
    require_levels(table, 1)?;
    let p = table.p;
    let d = table.d;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in &table.records {
        let rhs = c * r.mu.powf((d - 1.0) / d);
        let lhs = r.source.powf(1.0 / p) * r.s_inverse_gradient.powf((p - 1.0) / p);
        let s = (lhs - rhs) / rhs;
        lo = lo.min(s);
        hi = hi.max(s);
    }
    Ok(SlackRange { min: lo, max: hi })
}

/// Largest `|I(t) − ∮H(∇u)^{p−1}H(ν)w| / I(t)` over the table.
pub fn gauss_green_max(table: &LevelTable) -> f64 {
    table
        .records
        .iter()
        .map(|r| (r.source - r.s_flux).abs() / r.source)
        .fold(0.0, f64::max)
}

/// Largest `|Q(t) − c|/c` over the table.
pub fn quotient_worst(table: &LevelTable) -> f64 {
    table
        .records
        .iter()
        .map(|r| (r.quotient - table.constant).abs() / table.constant)
        .fold(0.0, f64::max)
}

fn require_levels(table: &LevelTable, n: usize) -> Result<()> {
    if table.m <= 0.0 {
        return Err(Error::DegenerateSolution("M = 0".into()));
    }
    if table.records.len() < n {
        return Err(Error::InsufficientData(format!(
            "{} levels, at least {n} needed",
            table.records.len()
        )));
    }
    Ok(())
}

/// Terms of the Pohozaev identity
/// `D∫F(u)w + ((p−D)/p)∫u f(u) w = (1/p')∫_{Γ₀} H(∇u)^p ⟨x,ν⟩ w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pohozaev {
    pub bulk: f64,
    /// Boundary term from the recovered boundary flux.
    pub boundary: f64,
    /// Boundary term from the constant gradient of the owning triangles.
    pub boundary_element: f64,
    /// `|bulk − boundary| / |boundary|`.
    pub residual: f64,
}

/// Pohozaev residual. The boundary flux `q = −H^{p−1}∇H(∇u)·ν` on `Γ₀` is
/// recovered from the discrete residual at the Dirichlet vertices (lumped
/// against `∫φ_i w ds`) and interpolated linearly along each edge; then
/// `H(∇u)^p = (q/H(−ν))^{p'}`.
pub fn pohozaev_residual(problem: &ProblemSpec, mesh: &Mesh, solution: &Solution) -> Result<Pohozaev> {
    problem.validate()?;
    let p = problem.p;
    let pc = p / (p - 1.0);
    let d = problem.dimension();
    let src = &problem.source;
    let w = &problem.weight;
    let u = &solution.u;
    let jumps = src.jumps();
    let f_int = superlevel_integral(problem, mesh, u, 0.0, &jumps, |v| src.primitive(v));
    let uf_int = superlevel_integral(problem, mesh, u, 0.0, &jumps, |v| v * src.f(v));
    let bulk = d * f_int + (p - d) / p * uf_int;

    let residual = crate::solver::nodal_residual(problem, mesh, u);
    let mut lumped = vec![0.0; mesh.vertices.len()];
    for e in mesh.boundary.iter().filter(|e| e.tag == BoundaryTag::Gamma0) {
        let (a, b) = (mesh.vertices[e.a], mesh.vertices[e.b]);
        let l2 = geom::dist(a, b).powi(2);
        let s_of = |x: Point| geom::dot(geom::sub(x, a), geom::sub(b, a)) / l2;
        lumped[e.a] += integrate_segment(a, b, |x| (1.0 - s_of(x)) * w.eval(x));
        lumped[e.b] += integrate_segment(a, b, |x| s_of(x) * w.eval(x));
    }
    let q: Vec<f64> = residual
        .iter()
        .zip(&lumped)
        .map(|(r, m)| if *m > 0.0 { (-r / m).max(0.0) } else { 0.0 })
        .collect();

    let owners = mesh.boundary_owners();
    let mut boundary = 0.0;
    let mut boundary_element = 0.0;
    for (e, &t) in mesh.boundary.iter().zip(&owners) {
        if e.tag != BoundaryTag::Gamma0 {
            continue;
        }
        let (a, b) = (mesh.vertices[e.a], mesh.vertices[e.b]);
        let len = geom::dist(a, b);
        // Edge runs with the domain on its left; the outward normal is on the right.
        let nu = [(b[1] - a[1]) / len, -(b[0] - a[0]) / len];
        let h_in = problem.norm.eval(geom::scale(nu, -1.0));
        let l2 = len * len;
        boundary += integrate_segment(a, b, |x| {
            let s = geom::dot(geom::sub(x, a), geom::sub(b, a)) / l2;
            let qx = (1.0 - s) * q[e.a] + s * q[e.b];
            (qx / h_in).powf(pc) * geom::dot(x, nu) * w.eval(x)
        });
        if t != usize::MAX {
            let hp = problem.norm.eval(solution.gradients[t]).powf(p);
            boundary_element += hp * integrate_segment(a, b, |x| geom::dot(x, nu) * w.eval(x));
        }
    }
    boundary /= pc;
    boundary_element /= pc;
    if boundary == 0.0 {
        return Err(Error::DegenerateSolution("vanishing boundary flux".into()));
    }
    Ok(Pohozaev {
        bulk,
        boundary,
        boundary_element,
        residual: (bulk - boundary).abs() / boundary.abs(),
    })
}

/// Radially nonincreasing profile fitted to the level table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialFit {
    /// Global center on the line factor of the cone.
    pub center: Point,
    /// Profile knots `(ρ, g(ρ))`, increasing in `ρ`.
    pub knots: Vec<[f64; 2]>,
    slopes: Vec<f64>,
    /// `sup |u(x) − g(H₀(x − x₀))|` over mesh vertices.
    pub deviation: f64,
    /// Largest distance between a per-level center and the global center.
    pub center_drift: f64,
    /// Largest distance between an unconstrained per-level center and the
    /// global center.
    pub free_center_offset: f64,
    /// Largest `H₀(x(t) − x(s)) − (ρ(t) − ρ(s))` over level pairs `t < s`.
    pub nesting_max: f64,
}

impl RadialFit {
    /// Monotone cubic interpolant through the knots; zero beyond the last.
    pub fn profile(&self, rho: f64) -> f64 {
        let k = &self.knots;
        if rho <= k[0][0] {
            return k[0][1];
        }
        if rho >= k[k.len() - 1][0] {
            return k[k.len() - 1][1];
        }
        let j = k.partition_point(|q| q[0] <= rho).clamp(1, k.len() - 1);
        let (x0, y0, x1, y1) = (k[j - 1][0], k[j - 1][1], k[j][0], k[j][1]);
        let hh = x1 - x0;
        let s = (rho - x0) / hh;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * y0 + h10 * hh * self.slopes[j - 1] + h01 * y1 + h11 * hh * self.slopes[j]
    }
}

/// Fritsch–Carlson slopes with a prescribed first slope.
fn pchip_slopes(k: &[[f64; 2]], first: f64) -> Vec<f64> {
    let n = k.len();
    let delta: Vec<f64> = k.windows(2).map(|w| (w[1][1] - w[0][1]) / (w[1][0] - w[0][0])).collect();
    let mut m = vec![0.0; n];
    m[0] = first;
    m[n - 1] = delta[n - 2];
    for i in 1..n - 1 {
        let (a, b) = (delta[i - 1], delta[i]);
        if a * b <= 0.0 {
            m[i] = 0.0;
        } else {
            let (h0, h1) = (k[i][0] - k[i - 1][0], k[i + 1][0] - k[i][0]);
            let (w1, w2) = (2.0 * h1 + h0, h1 + 2.0 * h0);
            m[i] = (w1 + w2) / (w1 / a + w2 / b);
        }
    }
    m
}

pub fn radial_fit(problem: &ProblemSpec, mesh: &Mesh, solution: &Solution, table: &LevelTable) -> Result<RadialFit> {
    let recs: Vec<&LevelRecord> = table
        .records
        .iter()
        .filter(|r| r.rho.is_finite() && r.rho > 0.0 && r.center.iter().all(|c| c.is_finite()))
        .collect();
    if recs.len() < 5 {
        return Err(Error::InsufficientData(format!("{} usable levels, at least 5 needed", recs.len())));
    }
    let n = recs.len() as f64;
    let mean = recs.iter().fold([0.0, 0.0], |a, r| geom::add(a, geom::scale(r.center, 1.0 / n)));
    let center = problem.cone.project_to_lineality(mean);
    let center_drift = recs.iter().map(|r| geom::dist(r.center, center)).fold(0.0, f64::max);
    let free_center_offset = recs.iter().map(|r| geom::dist(r.free_center, center)).fold(0.0, f64::max);
    let norm = &problem.norm;
    let mut nesting_max = f64::NEG_INFINITY;
    for (i, a) in recs.iter().enumerate() {
        for b in &recs[i + 1..] {
            let v = norm.dual_fast(geom::sub(a.center, b.center)) - (a.rho - b.rho);
            nesting_max = nesting_max.max(v);
        }
    }
    // Knots ordered by radius: (0, M), then levels from the top down, then (R, 0).
    let mut knots = vec![[0.0, table.m]];
    for r in recs.iter().rev() {
        let last = knots[knots.len() - 1];
        if r.rho > last[0] && r.t < last[1] {
            knots.push([r.rho, r.t]);
        }
    }
    let last = knots[knots.len() - 1];
    if problem.radius > last[0] && last[1] > 0.0 {
        knots.push([problem.radius, 0.0]);
    }
    let slopes = pchip_slopes(&knots, 0.0);
    let mut fit = RadialFit {
        center,
        knots,
        slopes,
        deviation: 0.0,
        center_drift,
        free_center_offset,
        nesting_max,
    };
    fit.deviation = mesh
        .vertices
        .iter()
        .zip(&solution.u)
        .map(|(x, u)| (u - fit.profile(norm.dual_fast(geom::sub(*x, center)))).abs())
        .fold(0.0, f64::max);
    Ok(fit)
}

/// Acceptance thresholds for [`verify`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub pohozaev: f64,
    pub gauss_green: f64,
    pub holder: f64,
    pub quotient: f64,
    pub grad_cv: f64,
    pub k_increment: f64,
    pub mu_slack: f64,
    /// Radial-profile deviation relative to `M`.
    pub radial: f64,
    /// Center drift, center offset and nesting slack in multiples of `h`.
    pub mesh_multiple: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            pohozaev: 0.03,
            gauss_green: 0.02,
            holder: 0.02,
            quotient: 0.02,
            grad_cv: 0.03,
            k_increment: 0.02,
            mu_slack: 0.02,
            radial: 0.01,
            mesh_multiple: 2.0,
        }
    }
}

/// Summary of all diagnostics; `failing` names the ones out of tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub pohozaev: f64,
    pub gauss_green_max: f64,
    pub holder_worst: f64,
    pub holder_min: f64,
    pub holder_max: f64,
    pub quotient_worst: f64,
    pub grad_cv_max: f64,
    #[serde(rename = "K_increment_max")]
    pub k_increment_max: f64,
    pub mu_slack_min: f64,
    pub center_drift: f64,
    pub center: Point,
    pub free_center_offset: f64,
    pub radial_deviation: f64,
    pub nesting_max: f64,
    pub optimal_constant: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub h: f64,
    pub levels: usize,
    /// Weighted measure of triangles with `H(∇u) < 1e−3 max H(∇u)`.
    pub critical_set_measure: f64,
    /// Largest `f(u)` on those triangles.
    pub critical_set_source_max: f64,
    pub failing: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failing.is_empty()
    }
}

fn critical_set(problem: &ProblemSpec, mesh: &Mesh, sol: &Solution) -> (f64, f64) {
    let hs: Vec<f64> = sol.gradients.iter().map(|g| problem.norm.eval(*g)).collect();
    let hmax = hs.iter().cloned().fold(0.0, f64::max);
    let mut measure = 0.0;
    let mut fmax: f64 = 0.0;
    for (k, h) in hs.iter().enumerate() {
        if *h < 1e-3 * hmax {
            let tri = mesh.triangle(k);
            measure += crate::quadrature::integrate_triangle(&tri, |x| problem.weight.eval(x));
            let idx = mesh.triangles[k];
            let mean = idx.iter().map(|i| sol.u[*i]).sum::<f64>() / 3.0;
            fmax = fmax.max(problem.source.f(mean));
        }
    }
    (measure, fmax)
}

/// Runs the full diagnostic chain.
pub fn verify(
    problem: &ProblemSpec,
    mesh: &Mesh,
    solution: &Solution,
    n_levels: usize,
    mode: GradientMode,
    tol: &Tolerances,
) -> Result<(LevelTable, VerifyReport)> {
    let table = distribution_table(problem, mesh, solution, n_levels, mode)?;
    let poh = pohozaev_residual(problem, mesh, solution)?;
    let holder = holder_isoperimetric_check(&table, table.constant)?;
    let k_inc = check_k_monotone(&table)?;
    let mu_slack = mu_derivative_check(&table)?;
    let fit = radial_fit(problem, mesh, solution, &table)?;
    let (crit_measure, crit_f) = critical_set(problem, mesh, solution);
    let grad_cv_max = table.records.iter().map(|r| r.grad_cv).fold(0.0, f64::max);
    let h = mesh.h;
    let mut report = VerifyReport {
        pohozaev: poh.residual,
        gauss_green_max: gauss_green_max(&table),
        holder_worst: holder.worst(),
        holder_min: holder.min,
        holder_max: holder.max,
        quotient_worst: quotient_worst(&table),
        grad_cv_max,
        k_increment_max: k_inc,
        mu_slack_min: mu_slack,
        center_drift: fit.center_drift,
        center: fit.center,
        free_center_offset: fit.free_center_offset,
        radial_deviation: fit.deviation / table.m,
        nesting_max: fit.nesting_max,
        optimal_constant: table.constant,
        m: table.m,
        h,
        levels: table.records.len(),
        critical_set_measure: crit_measure,
        critical_set_source_max: crit_f,
        failing: Vec::new(),
    };
    let checks: [(&str, bool); 11] = [
        ("pohozaev", report.pohozaev <= tol.pohozaev),
        ("gauss_green_max", report.gauss_green_max <= tol.gauss_green),
        ("holder_worst", report.holder_worst.abs() <= tol.holder),
        ("quotient_worst", report.quotient_worst <= tol.quotient),
        ("grad_cv_max", report.grad_cv_max <= tol.grad_cv),
        ("K_increment_max", report.k_increment_max <= tol.k_increment),
        ("mu_slack_min", report.mu_slack_min >= -tol.mu_slack),
        ("center_drift", report.center_drift <= tol.mesh_multiple * h),
        ("free_center_offset", report.free_center_offset <= tol.mesh_multiple * h),
        ("radial_deviation", report.radial_deviation <= tol.radial),
        ("nesting_max", report.nesting_max <= tol.mesh_multiple * h),
    ];
    report.failing = checks
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(name, _)| name.to_string())
        .collect();
    Ok((table, report))
}

