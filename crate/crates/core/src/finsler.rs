//! Finsler norms `H`, their gradients and polar (dual) norms `H₀`, and Wulff
//! shapes `{H₀ = r}`.

use std::f64::consts::{PI, TAU};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Point};

const SCAN_POINTS: usize = 256;
const ANGLE_TOL: f64 = 1e-10;
const TABLE_POINTS: usize = 8192;

/// Serialized description of a norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NormKind {
    Euclidean {},
    /// `H(ξ) = sqrt(ξᵀ A ξ)` for a symmetric positive definite `A`.
    Ellipse { matrix: [[f64; 2]; 2] },
    /// `H(ξ) = ((ξ₁² + δ²|ξ|²)^{q/2} + (ξ₂² + δ²|ξ|²)^{q/2})^{1/q}`, normalized
    /// so that `H(e₁) = 1`.
    SmoothedQ { q: f64, delta: f64 },
}

#[derive(Debug, Clone, Copy)]
enum Repr {
    Euclidean,
    Ellipse { a: [f64; 3], inv: [f64; 3] },
    SmoothedQ { q: f64, d2: f64, z: f64 },
}

/// A uniformly elliptic, even, 1-homogeneous norm on the plane.
#[derive(Clone, Serialize, Deserialize)]
#[serde(try_from = "NormKind", into = "NormKind")]
pub struct NormSpec {
    kind: NormKind,
    repr: Repr,
    k1: f64,
    k2: f64,
    /// Points `e_θ / H(e_θ)` on the unit sphere of `H` at the scan angles.
    scan: Arc<Vec<Point>>,
    table: Arc<OnceLock<DualTable>>,
}

impl std::fmt::Debug for NormSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NormSpec")
            .field("kind", &self.kind)
            .field("k1", &self.k1)
            .field("k2", &self.k2)
            .finish()
    }
}

impl PartialEq for NormSpec {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl From<NormSpec> for NormKind {
    fn from(n: NormSpec) -> Self {
        n.kind
    }
}

impl TryFrom<NormKind> for NormSpec {
    type Error = Error;

    fn try_from(kind: NormKind) -> Result<Self> {
        NormSpec::new(kind)
    }
}

impl NormSpec {
    pub fn new(kind: NormKind) -> Result<Self> {
        let repr = match kind {
            NormKind::Euclidean {} => Repr::Euclidean,
            NormKind::Ellipse { matrix: m } => {
                if !m.iter().flatten().all(|v| v.is_finite()) {
                    return Err(Error::InvalidSpec("ellipse matrix must be finite".into()));
                }
                if (m[0][1] - m[1][0]).abs() > 1e-12 * (m[0][1].abs() + m[1][0].abs() + 1.0) {
                    return Err(Error::InvalidSpec("ellipse matrix must be symmetric".into()));
                }
                let (a11, a12, a22) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
                let det = a11 * a22 - a12 * a12;
                if a11 <= 0.0 || det <= 0.0 {
                    return Err(Error::InvalidSpec(
                        "ellipse matrix must be positive definite".into(),
                    ));
                }
                Repr::Ellipse {
                    a: [a11, a12, a22],
                    inv: [a22 / det, -a12 / det, a11 / det],
                }
            }
            NormKind::SmoothedQ { q, delta } => {
                if !(q > 1.0 && q.is_finite()) {
                    return Err(Error::InvalidSpec(format!("smoothed-q exponent {q} must lie in (1, inf)")));
                }
                if !(delta > 0.0 && delta.is_finite()) {
                    return Err(Error::InvalidSpec(format!("smoothing {delta} must be positive")));
                }
                let d2 = delta * delta;
                let z = ((1.0 + d2).powf(q / 2.0) + d2.powf(q / 2.0)).powf(1.0 / q);
                Repr::SmoothedQ { q, d2, z }
            }
        };
        let mut spec = NormSpec {
            kind,
            repr,
            k1: 1.0,
            k2: 1.0,
            scan: Arc::new(Vec::new()),
            table: Arc::new(OnceLock::new()),
        };
        let scan = (0..SCAN_POINTS)
            .map(|j| {
                let e = geom::unit(TAU * j as f64 / SCAN_POINTS as f64);
                geom::scale(e, 1.0 / spec.eval(e))
            })
            .collect();
        spec.scan = Arc::new(scan);
        let (k1, k2) = spec.compute_equivalence();
        spec.k1 = k1;
        spec.k2 = k2;
        Ok(spec)
    }

    pub fn euclidean() -> Self {
        Self::new(NormKind::Euclidean {}).expect("euclidean norm is valid")
    }

    pub fn ellipse(matrix: [[f64; 2]; 2]) -> Result<Self> {
        Self::new(NormKind::Ellipse { matrix })
    }

    pub fn smoothed_q(q: f64, delta: f64) -> Result<Self> {
        Self::new(NormKind::SmoothedQ { q, delta })
    }

    pub fn kind(&self) -> &NormKind {
        &self.kind
    }

    /// Whether `H` is the Euclidean norm.
    pub fn is_euclidean(&self) -> bool {
        matches!(self.repr, Repr::Euclidean)
    }

    /// Constants `k₁ ≤ k₂` with `k₁|ξ| ≤ H(ξ) ≤ k₂|ξ|`.
    pub fn equivalence_constants(&self) -> (f64, f64) {
        (self.k1, self.k2)
    }

    /// `H(ξ)`.
    pub fn eval(&self, xi: Point) -> f64 {
        match self.repr {
            Repr::Euclidean => geom::norm(xi),
            Repr::Ellipse { a, .. } => quad_form(a, xi).max(0.0).sqrt(),
            Repr::SmoothedQ { q, d2, z } => {
                let m = xi[0].abs().max(xi[1].abs());
                if m == 0.0 {
                    return 0.0;
                }
                let (x, y) = (xi[0] / m, xi[1] / m);
                let n1 = ((1.0 + d2) * x * x + d2 * y * y).sqrt();
                let n2 = (d2 * x * x + (1.0 + d2) * y * y).sqrt();
                m * (n1.powf(q) + n2.powf(q)).powf(1.0 / q) / z
            }
        }
    }

    /// `∇_ξ H(ξ)`; undefined at the origin.
    pub fn grad(&self, xi: Point) -> Result<Point> {
        if xi == [0.0, 0.0] {
            return Err(Error::DegenerateArgument("gradient of H at the origin"));
        }
        Ok(self.grad_unchecked(xi))
    }

    fn grad_unchecked(&self, xi: Point) -> Point {
        match self.repr {
            Repr::Euclidean => geom::scale(xi, 1.0 / geom::norm(xi)),
            Repr::Ellipse { a, .. } => {
                let ax = mat_vec(a, xi);
                geom::scale(ax, 1.0 / quad_form(a, xi).sqrt())
            }
            Repr::SmoothedQ { q, d2, z } => {
                // 0-homogeneous, so normalize first.
                let m = xi[0].abs().max(xi[1].abs());
                let (x, y) = (xi[0] / m, xi[1] / m);
                let n1 = ((1.0 + d2) * x * x + d2 * y * y).sqrt();
                let n2 = (d2 * x * x + (1.0 + d2) * y * y).sqrt();
                let s = n1.powf(q) + n2.powf(q);
                let pre = s.powf(1.0 / q - 1.0) / z;
                let c1 = n1.powf(q - 2.0);
                let c2 = n2.powf(q - 2.0);
                [
                    pre * (c1 * (1.0 + d2) * x + c2 * d2 * x),
                    pre * (c1 * d2 * y + c2 * (1.0 + d2) * y),
                ]
            }
        }
    }

    /// `H(ξ) ∇_ξ H(ξ)`, the gradient of `H²/2`; zero at the origin.
    pub fn half_sq_grad(&self, xi: Point) -> Point {
        match self.repr {
            Repr::Euclidean => xi,
            Repr::Ellipse { a, .. } => mat_vec(a, xi),
            Repr::SmoothedQ { .. } => {
                if xi == [0.0, 0.0] {
                    return [0.0, 0.0];
                }
                geom::scale(self.grad_unchecked(xi), self.eval(xi))
            }
        }
    }

    /// Polar norm `H₀(x) = sup_{ξ≠0} ⟨x, ξ⟩ / H(ξ)`.
    ///
    /// Closed form for the Euclidean and ellipse kinds; otherwise a 256-point
    /// angular scan followed by golden-section refinement.
    pub fn dual(&self, x: Point) -> f64 {
        match self.repr {
            Repr::Euclidean => geom::norm(x),
            Repr::Ellipse { inv, .. } => quad_form(inv, x).max(0.0).sqrt(),
            Repr::SmoothedQ { .. } => {
                if x == [0.0, 0.0] {
                    return 0.0;
                }
                let best = self
                    .scan
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (j, geom::dot(x, *v)))
                    .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
                let theta = TAU * best.0 as f64 / SCAN_POINTS as f64;
                let ratio = |th: f64| {
                    let e = geom::unit(th);
                    geom::dot(x, e) / self.eval(e)
                };
                let step = TAU / SCAN_POINTS as f64;
                golden_max(ratio, theta - step, theta + step, ANGLE_TOL).max(best.1)
            }
        }
    }

    /// Polar norm for hot loops: closed form where available, otherwise a
    /// periodic cubic interpolant of `θ ↦ H₀(e_θ)` tabulated from [`dual`].
    ///
    /// [`dual`]: NormSpec::dual
    pub fn dual_fast(&self, x: Point) -> f64 {
        match self.repr {
            Repr::Euclidean | Repr::Ellipse { .. } => self.dual(x),
            Repr::SmoothedQ { .. } => {
                let r = geom::norm(x);
                if r == 0.0 {
                    return 0.0;
                }
                let table = self.table.get_or_init(|| DualTable::build(self));
                r * table.eval(x[1].atan2(x[0]))
            }
        }
    }

    /// Max relative error of reconstructing `H` from `H₀` on `samples`
    /// uniformly spaced directions.
    pub fn bidual_error(&self, samples: usize) -> f64 {
        let samples = samples.max(1);
        (0..samples)
            .map(|j| {
                let xi = geom::unit(TAU * (j as f64 + 0.5) / samples as f64);
                let ratio = |th: f64| {
                    let e = geom::unit(th);
                    geom::dot(e, xi) / self.dual(e)
                };
                let (mut best_th, mut best) = (0.0, f64::NEG_INFINITY);
                for k in 0..SCAN_POINTS {
                    let th = TAU * k as f64 / SCAN_POINTS as f64;
                    let v = ratio(th);
                    if v > best {
                        best = v;
                        best_th = th;
                    }
                }
                let step = TAU / SCAN_POINTS as f64;
                let sup = golden_max(ratio, best_th - step, best_th + step, ANGLE_TOL).max(best);
                let h = self.eval(xi);
                (sup - h).abs() / h
            })
            .fold(0.0, f64::max)
    }

    /// Distance from the origin to the unit Wulff sphere along direction `θ`.
    pub fn wulff_radius(&self, theta: f64) -> f64 {
        1.0 / self.dual_fast(geom::unit(theta))
    }

    /// `n` points on `{H₀(x − center) = r}` at uniform angular spacing,
    /// starting on the positive first axis.
    pub fn wulff_boundary(&self, center: Point, r: f64, n: usize) -> Result<Vec<Point>> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::DegenerateArgument("Wulff radius must be positive"));
        }
        if n < 8 {
            return Err(Error::DegenerateArgument("Wulff boundary needs at least 8 points"));
        }
        (0..n)
            .map(|j| {
                let e = geom::unit(TAU * j as f64 / n as f64);
                let d = self.dual(e);
                if !(d > 0.0 && d.is_finite()) {
                    return Err(Error::Geometry(format!("dual norm {d} along ray {j} is not positive")));
                }
                Ok(geom::add(center, geom::scale(e, r / d)))
            })
            .collect()
    }

    fn compute_equivalence(&self) -> (f64, f64) {
        match self.repr {
            Repr::Euclidean => (1.0, 1.0),
            Repr::Ellipse { a, .. } => {
                let tr = a[0] + a[2];
                let det = a[0] * a[2] - a[1] * a[1];
                let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
                ((0.5 * tr - disc).sqrt(), (0.5 * tr + disc).sqrt())
            }
            Repr::SmoothedQ { .. } => {
                let n = 4096;
                let step = PI / n as f64;
                let vals: Vec<f64> = (0..n)
                    .map(|j| self.eval(geom::unit(step * j as f64)))
                    .collect();
                let (imin, _) = vals
                    .iter()
                    .enumerate()
                    .fold((0, f64::INFINITY), |a, (i, &v)| if v < a.1 { (i, v) } else { a });
                let (imax, _) = vals
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
                let h = |th: f64| self.eval(geom::unit(th));
                let t0 = step * imin as f64;
                let t1 = step * imax as f64;
                let kmin = -golden_max(|t| -h(t), t0 - step, t0 + step, 1e-12);
                let kmax = golden_max(h, t1 - step, t1 + step, 1e-12);
                (kmin.min(vals[imin]), kmax.max(vals[imax]))
            }
        }
    }
}

/// A Wulff ball `{H₀(x − center) < radius}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WulffBall {
    pub center: Point,
    pub radius: f64,
    pub norm: NormSpec,
}

impl WulffBall {
    pub fn new(norm: NormSpec, center: Point, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::DegenerateArgument("Wulff radius must be positive"));
        }
        Ok(Self {
            center,
            radius,
            norm,
        })
    }

    pub fn contains(&self, x: Point) -> bool {
        self.norm.dual(geom::sub(x, self.center)) < self.radius
    }

    pub fn boundary(&self, n: usize) -> Result<Vec<Point>> {
        self.norm.wulff_boundary(self.center, self.radius, n)
    }
}

/// Periodic table of `θ ↦ H₀(e_θ)` with fourth-order Hermite interpolation.
#[derive(Debug)]
struct DualTable {
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl DualTable {
    fn build(norm: &NormSpec) -> Self {
        let n = TABLE_POINTS;
        let h = TAU / n as f64;
        let values: Vec<f64> = (0..n)
            .map(|j| norm.dual(geom::unit(h * j as f64)))
            .collect();
        let at = |j: isize| values[j.rem_euclid(n as isize) as usize];
        let slopes = (0..n as isize)
            .map(|j| (at(j - 2) - 8.0 * at(j - 1) + 8.0 * at(j + 1) - at(j + 2)) / (12.0 * h))
            .collect();
        Self { values, slopes }
    }

    fn eval(&self, theta: f64) -> f64 {
        let n = self.values.len();
        let h = TAU / n as f64;
        let s = theta.rem_euclid(TAU) / h;
        let j = (s.floor() as usize).min(n - 1);
        let u = s - j as f64;
        let k = (j + 1) % n;
        let (y0, y1) = (self.values[j], self.values[k]);
        let (m0, m1) = (self.slopes[j] * h, self.slopes[k] * h);
        let u2 = u * u;
        let u3 = u2 * u;
        (2.0 * u3 - 3.0 * u2 + 1.0) * y0
            + (u3 - 2.0 * u2 + u) * m0
            + (-2.0 * u3 + 3.0 * u2) * y1
            + (u3 - u2) * m1
    }
}

#[inline]
fn quad_form(a: [f64; 3], x: Point) -> f64 {
    a[0] * x[0] * x[0] + 2.0 * a[1] * x[0] * x[1] + a[2] * x[1] * x[1]
}

#[inline]
fn mat_vec(a: [f64; 3], x: Point) -> Point {
    [a[0] * x[0] + a[1] * x[1], a[1] * x[0] + a[2] * x[1]]
}

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
pub(crate) fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    fc.max(fd)
}
