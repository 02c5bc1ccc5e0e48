//! Weighted anisotropic isoperimetry in cones: quotients, the optimal
//! constant attained by Wulff sectors, and least-squares Wulff fits used to
//! characterize (near-)minimizers.

use std::f64::consts::{PI, TAU};

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cone::{self, ConeSpec, PolygonalSet, WeightSpec};
use crate::error::{Error, Result};
use crate::finsler::{NormSpec, WulffBall};
use crate::geom::{self, Point};

/// Boundary resolution used for the reference Wulff sector.
pub const CONSTANT_RESOLUTION: usize = 1 << 14;

/// Relative slack below which a negative margin still counts as satisfying
/// the inequality.
pub const INEQUALITY_TOLERANCE: f64 = 1e-6;

/// `P_{w,H}(E;Σ) / w(Σ∩E)^{(D−1)/D}`.
pub fn quotient(norm: &NormSpec, w: &WeightSpec, cone: &ConeSpec, set: &PolygonalSet) -> Result<f64> {
    let volume = cone::weighted_volume(w, set, cone)?;
    if !(volume > 0.0) {
        return Err(Error::ZeroVolume);
    }
    let perimeter = cone::weighted_perimeter_unchecked(norm, w, set);
    let d = w.effective_dimension();
    Ok(perimeter / volume.powf((d - 1.0) / d))
}

/// Polygonal approximation of `B_r(center) ∩ Σ` with `n` arc segments.
///
/// For cones other than the plane the center must lie on the line factor
/// (the origin for proper sectors).
pub fn wulff_sector(
    norm: &NormSpec,
    cone: &ConeSpec,
    center: Point,
    r: f64,
    n: usize,
) -> Result<PolygonalSet> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::DegenerateArgument("Wulff radius must be positive"));
    }
    if n < 8 {
        return Err(Error::DegenerateArgument("Wulff sector needs at least 8 points"));
    }
    if cone.is_full_plane() {
        let pts = norm.wulff_boundary(center, r, n)?;
        return PolygonalSet::with_cone_tags(pts, cone);
    }
    if geom::dist(cone.project_to_lineality(center), center) > 1e-12 * (1.0 + r) {
        return Err(Error::Geometry(
            "Wulff sector center must lie on the line factor of the cone".into(),
        ));
    }
    let (start, opening) = (cone.start_angle(), cone.opening());
    let mut vertices = Vec::with_capacity(n + 2);
    vertices.push(center);
    for j in 0..=n {
        let e = geom::unit(start + opening * j as f64 / n as f64);
        let d = norm.dual(e);
        vertices.push(geom::add(center, geom::scale(e, r / d)));
    }
    PolygonalSet::with_cone_tags(vertices, cone)
}

/// The optimal constant together with the perimeter–volume cross-check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalConstant {
    /// `c = P_{w,H}(B;Σ) / w(Σ∩B)^{(D−1)/D}`.
    pub constant: f64,
    /// `D · w(Σ∩B)^{1/D}`, equal to `c` when `P(B;Σ) = D·w(Σ∩B)`.
    pub crosscheck: f64,
    pub perimeter: f64,
    pub volume: f64,
    pub dimension: f64,
}

pub fn optimal_constant(norm: &NormSpec, w: &WeightSpec, cone: &ConeSpec) -> Result<OptimalConstant> {
    w.validate_on(cone)?;
    let ball = wulff_sector(norm, cone, [0.0, 0.0], 1.0, CONSTANT_RESOLUTION)?;
    let volume = cone::weighted_volume(w, &ball, cone)?;
    let perimeter = cone::weighted_perimeter_unchecked(norm, w, &ball);
    let d = w.effective_dimension();
    Ok(OptimalConstant {
        constant: perimeter / volume.powf((d - 1.0) / d),
        crosscheck: d * volume.powf(1.0 / d),
        perimeter,
        volume,
        dimension: d,
    })
}

/// Result of testing one set against the isoperimetric inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsopReport {
    pub quotient: f64,
    pub constant: f64,
    /// `quotient − constant`.
    pub margin: f64,
    pub center: Option<Point>,
    pub radius: Option<f64>,
    pub deviation: Option<f64>,
}

impl IsopReport {
    /// `margin ≥ −1e−6·c`.
    pub fn holds(&self) -> bool {
        self.margin >= -INEQUALITY_TOLERANCE * self.constant
    }
}

pub fn verify_inequality(
    norm: &NormSpec,
    w: &WeightSpec,
    cone: &ConeSpec,
    set: &PolygonalSet,
) -> Result<IsopReport> {
    let c = optimal_constant(norm, w, cone)?;
    verify_against(norm, w, cone, set, c.constant)
}

/// Same as [`verify_inequality`] with a precomputed optimal constant.
pub fn verify_against(
    norm: &NormSpec,
    w: &WeightSpec,
    cone: &ConeSpec,
    set: &PolygonalSet,
    constant: f64,
) -> Result<IsopReport> {
    let q = quotient(norm, w, cone, set)?;
    let fit = characterize_minimizer(norm, w, cone, set).ok();
    Ok(IsopReport {
        quotient: q,
        constant,
        margin: q - constant,
        center: fit.as_ref().map(|f| f.ball.center),
        radius: fit.as_ref().map(|f| f.ball.radius),
        deviation: fit.as_ref().map(|f| f.deviation),
    })
}

/// Least-squares Wulff ball fitted to the free boundary of a set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizerFit {
    pub ball: WulffBall,
    /// RMS of `H₀(v − center) − radius` over free boundary vertices, relative
    /// to the radius.
    pub deviation: f64,
    /// Whether equality in the inequality is known to force a Wulff shape for
    /// this (norm, weight) pair: unweighted anisotropic or weighted isotropic.
    pub certified: bool,
}

struct FitCost<'a> {
    norm: &'a NormSpec,
    points: &'a [Point],
    basis: Vec<Point>,
}

impl FitCost<'_> {
    fn center(&self, s: &[f64]) -> Point {
        self.basis
            .iter()
            .zip(s)
            .fold([0.0, 0.0], |acc, (b, t)| geom::add(acc, geom::scale(*b, *t)))
    }

    /// Mean radius and mean squared deviation for a given center.
    fn stats(&self, c: Point) -> (f64, f64) {
        let n = self.points.len() as f64;
        let radii: Vec<f64> = self
            .points
            .iter()
            .map(|v| self.norm.dual_fast(geom::sub(*v, c)))
            .collect();
        let mean = radii.iter().sum::<f64>() / n;
        let mse = radii.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        (mean, mse)
    }
}

impl CostFunction for FitCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, s: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.stats(self.center(s)).1)
    }
}

/// Fits a Wulff ball whose center is restricted to the line factor of the
/// cone, by Nelder–Mead from five seeded starts.
pub fn characterize_minimizer(
    norm: &NormSpec,
    w: &WeightSpec,
    cone: &ConeSpec,
    set: &PolygonalSet,
) -> Result<MinimizerFit> {
    let tol = 1e-9 * set.diameter();
    let points: Vec<Point> = set
        .vertices()
        .iter()
        .copied()
        .filter(|v| cone.boundary_distance(*v) > tol)
        .collect();
    fit_wulff_ball(norm, cone, &points).map(|(ball, deviation)| MinimizerFit {
        ball,
        deviation,
        certified: norm.is_euclidean() || w.degree() == 0.0,
    })
}

/// Wulff ball fit to free boundary points; returns the ball and its relative
/// RMS deviation.
pub(crate) fn fit_wulff_ball(norm: &NormSpec, cone: &ConeSpec, points: &[Point]) -> Result<(WulffBall, f64)> {
    if points.len() < 8 {
        return Err(Error::InsufficientData(format!(
            "{} free boundary vertices, at least 8 needed",
            points.len()
        )));
    }
    let lin = cone.lineality();
    let basis: Vec<Point> = match (lin.k, lin.line) {
        (2, _) => vec![[1.0, 0.0], [0.0, 1.0]],
        (1, Some(d)) => vec![d],
        _ => vec![],
    };
    let cost = FitCost {
        norm,
        points,
        basis,
    };
    let best_s = if cost.basis.is_empty() {
        vec![]
    } else {
        let n = points.len() as f64;
        let centroid = points
            .iter()
            .fold([0.0, 0.0], |a, p| geom::add(a, geom::scale(*p, 1.0 / n)));
        let spread = points
            .iter()
            .map(|p| geom::dist(*p, centroid))
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let guess: Vec<f64> = cost.basis.iter().map(|b| geom::dot(*b, centroid)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0xf17);
        let mut best: Option<(Vec<f64>, f64)> = None;
        for start in 0..5 {
            let x0: Vec<f64> = if start == 0 {
                guess.clone()
            } else {
                guess
                    .iter()
                    .map(|g| g + 0.25 * spread * rng.random_range(-1.0..1.0))
                    .collect()
            };
            let step = 0.05 * spread;
            let mut simplex = vec![x0.clone()];
            for k in 0..x0.len() {
                let mut v = x0.clone();
                v[k] += step;
                simplex.push(v);
            }
            let solver = NelderMead::new(simplex)
                .with_sd_tolerance(1e-18 * spread.powi(2))
                .map_err(|e| Error::Geometry(e.to_string()))?;
            let res = Executor::new(
                FitCost {
                    norm,
                    points,
                    basis: cost.basis.clone(),
                },
                solver,
            )
            .configure(|s| s.max_iters(600))
            .run()
            .map_err(|e| Error::Geometry(e.to_string()))?;
            let state = res.state();
            if let Some(p) = state.get_best_param() {
                let c = state.get_best_cost();
                if best.as_ref().is_none_or(|b| c < b.1) {
                    best = Some((p.clone(), c));
                }
            }
        }
        best.map(|b| b.0).unwrap_or(guess)
    };
    let center = cost.center(&best_s);
    let (radius, mse) = cost.stats(center);
    let ball = WulffBall::new(norm.clone(), center, radius)?;
    Ok((ball, mse.sqrt() / radius))
}

/// Star-shaped perturbation of a Wulff sector,
/// `r(θ) = ρ(θ)·r₀·(1 + Σₘ aₘ cos(mψ + φₘ))`, with `Σ|aₘ| = amplitude`.
pub fn random_star_set<R: Rng>(
    norm: &NormSpec,
    cone: &ConeSpec,
    rng: &mut R,
    amplitude: f64,
    n: usize,
) -> Result<PolygonalSet> {
    let modes = 5;
    let raw: Vec<f64> = (0..modes).map(|_| rng.random_range(0.0..1.0)).collect();
    let total: f64 = raw.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let amps: Vec<f64> = raw.iter().map(|a| amplitude * a / total).collect();
    let phases: Vec<f64> = (0..modes).map(|_| rng.random_range(0.0..TAU)).collect();
    let r0 = rng.random_range(0.5..2.0);
    let radial = |theta: f64, psi: f64| {
        let bump: f64 = amps
            .iter()
            .zip(&phases)
            .enumerate()
            .map(|(m, (a, ph))| a * ((m + 1) as f64 * psi + ph).cos())
            .sum();
        r0 * (1.0 + bump) / norm.dual(geom::unit(theta))
    };
    let vertices: Vec<Point> = if cone.is_full_plane() {
        (0..n)
            .map(|j| {
                let theta = TAU * j as f64 / n as f64;
                geom::scale(geom::unit(theta), radial(theta, theta))
            })
            .collect()
    } else {
        let (start, opening) = (cone.start_angle(), cone.opening());
        std::iter::once([0.0, 0.0])
            .chain((0..=n).map(|j| {
                let s = j as f64 / n as f64;
                let theta = start + opening * s;
                geom::scale(geom::unit(theta), radial(theta, PI * s))
            }))
            .collect()
    };
    PolygonalSet::with_cone_tags(vertices, cone)
}
