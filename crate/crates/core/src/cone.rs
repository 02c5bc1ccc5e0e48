//! Planar convex cones, homogeneous weights, and weighted volumes and
//! anisotropic perimeters of polygonal sets relative to a cone.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finsler::NormSpec;
use crate::geom::{self, Point};
use crate::quadrature;

/// Serialized description of an open convex cone with vertex at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConeKind {
    FullPlane {},
    /// `{x : ⟨x, normal⟩ > 0}`.
    HalfPlane { normal: Point },
    /// Points whose polar angle lies in `(theta1, theta2)`, with `theta2 − theta1 ≤ π`.
    Sector { theta1: f64, theta2: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConeKind", into = "ConeKind")]
pub struct ConeSpec {
    kind: ConeKind,
    start: f64,
    opening: f64,
}

impl From<ConeSpec> for ConeKind {
    fn from(c: ConeSpec) -> Self {
        c.kind
    }
}

impl TryFrom<ConeKind> for ConeSpec {
    type Error = Error;

    fn try_from(kind: ConeKind) -> Result<Self> {
        ConeSpec::new(kind)
    }
}

/// Splitting `Σ = ℝᵏ × Σ̃` with `Σ̃` containing no lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lineality {
    pub k: usize,
    /// Angle of the rotation taking the first axis onto the line factor (k = 1).
    pub rotation: f64,
    /// Unit direction spanning the line factor when `k = 1`.
    pub line: Option<Point>,
}

impl ConeSpec {
    pub fn new(kind: ConeKind) -> Result<Self> {
        let (start, opening) = match kind {
            ConeKind::FullPlane {} => (0.0, TAU),
            ConeKind::HalfPlane { normal } => {
                let len = geom::norm(normal);
                if !(len > 0.0 && len.is_finite()) {
                    return Err(Error::InvalidSpec("half-plane normal must be nonzero".into()));
                }
                (normal[1].atan2(normal[0]) - PI / 2.0, PI)
            }
            ConeKind::Sector { theta1, theta2 } => {
                let opening = theta2 - theta1;
                if !(theta1.is_finite() && theta2.is_finite()) || opening <= 0.0 {
                    return Err(Error::InvalidSpec("sector needs theta1 < theta2".into()));
                }
                if opening > PI + 1e-12 {
                    return Err(Error::InvalidSpec(format!(
                        "sector opening {opening} exceeds pi; the cone would not be convex"
                    )));
                }
                (theta1, opening.min(PI))
            }
        };
        Ok(Self {
            kind,
            start: start.rem_euclid(TAU),
            opening,
        })
    }

    pub fn full_plane() -> Self {
        Self::new(ConeKind::FullPlane {}).expect("valid cone")
    }

    pub fn half_plane(normal: Point) -> Result<Self> {
        Self::new(ConeKind::HalfPlane { normal })
    }

    pub fn sector(theta1: f64, theta2: f64) -> Result<Self> {
        Self::new(ConeKind::Sector { theta1, theta2 })
    }

    /// The open positive quadrant.
    pub fn quadrant() -> Self {
        Self::sector(0.0, PI / 2.0).expect("valid cone")
    }

    pub fn kind(&self) -> &ConeKind {
        &self.kind
    }

    pub fn is_full_plane(&self) -> bool {
        matches!(self.kind, ConeKind::FullPlane {})
    }

    /// Polar angle of the first bounding ray (counterclockwise orientation).
    pub fn start_angle(&self) -> f64 {
        self.start
    }

    pub fn opening(&self) -> f64 {
        self.opening
    }

    fn first_ray(&self) -> Point {
        geom::unit(self.start)
    }

    fn second_ray(&self) -> Point {
        geom::unit(self.start + self.opening)
    }

    /// Membership in the open cone.
    pub fn contains(&self, x: Point) -> bool {
        if self.is_full_plane() {
            return true;
        }
        let left_of_first = geom::cross(self.first_ray(), x) > 0.0;
        if self.opening >= PI {
            return left_of_first;
        }
        left_of_first && geom::cross(x, self.second_ray()) > 0.0
    }

    /// Distance from `x` to `∂Σ` (infinite for the full plane).
    pub fn boundary_distance(&self, x: Point) -> f64 {
        if self.is_full_plane() {
            return f64::INFINITY;
        }
        let ray = |d: Point| {
            if geom::dot(x, d) >= 0.0 {
                geom::cross(d, x).abs()
            } else {
                geom::norm(x)
            }
        };
        if self.opening >= PI {
            return geom::cross(self.first_ray(), x).abs();
        }
        ray(self.first_ray()).min(ray(self.second_ray()))
    }

    /// Whether `x` lies in the closed cone up to `tol`.
    pub fn contains_closed(&self, x: Point, tol: f64) -> bool {
        self.contains(x) || self.boundary_distance(x) <= tol
    }

    pub fn lineality(&self) -> Lineality {
        match self.kind {
            ConeKind::FullPlane {} => Lineality {
                k: 2,
                rotation: 0.0,
                line: None,
            },
            _ if self.opening >= PI => {
                let rotation = self.start.rem_euclid(PI);
                Lineality {
                    k: 1,
                    rotation,
                    line: Some(geom::unit(self.start)),
                }
            }
            _ => Lineality {
                k: 0,
                rotation: 0.0,
                line: None,
            },
        }
    }

    /// Orthogonal projection onto the line factor `ℝᵏ × {0}`.
    pub fn project_to_lineality(&self, x: Point) -> Point {
        let lin = self.lineality();
        match (lin.k, lin.line) {
            (2, _) => x,
            (1, Some(d)) => geom::scale(d, geom::dot(x, d)),
            _ => [0.0, 0.0],
        }
    }

    /// Directions spanning the closed cone: both rays and the bisector.
    pub fn extreme_directions(&self) -> Vec<Point> {
        if self.is_full_plane() {
            return (0..4).map(|j| geom::unit(PI / 2.0 * j as f64)).collect();
        }
        vec![
            self.first_ray(),
            geom::unit(self.start + 0.5 * self.opening),
            self.second_ray(),
        ]
    }

    /// Random point of `Σ ∩ {|x| ≤ radius}`.
    pub(crate) fn sample<R: Rng>(&self, rng: &mut R, radius: f64) -> Point {
        let theta = self.start + rng.random_range(0.0..1.0) * self.opening;
        let r = radius * rng.random_range(0.0f64..1.0).sqrt();
        geom::scale(geom::unit(theta), r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSpec {
    /// `w ≡ 1`, degree 0.
    Constant {},
    /// `w(x, y) = xᵃ yᵇ`, degree `a + b`.
    Monomial { a: f64, b: f64 },
}

impl WeightSpec {
    pub fn monomial(a: f64, b: f64) -> Result<Self> {
        let w = WeightSpec::Monomial { a, b };
        w.validate()?;
        Ok(w)
    }

    fn validate(&self) -> Result<()> {
        if let WeightSpec::Monomial { a, b } = *self {
            if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
                return Err(Error::InvalidSpec(format!("monomial exponents ({a}, {b}) must be nonnegative")));
            }
        }
        Ok(())
    }

    /// Homogeneity degree `λ`.
    pub fn degree(&self) -> f64 {
        match *self {
            WeightSpec::Constant {} => 0.0,
            WeightSpec::Monomial { a, b } => a + b,
        }
    }

    /// `D = 2 + λ`.
    pub fn effective_dimension(&self) -> f64 {
        2.0 + self.degree()
    }

    /// Unchecked evaluation; coordinates are clamped at zero so round-off just
    /// outside the closed cone cannot produce NaN.
    #[inline]
    pub fn eval(&self, x: Point) -> f64 {
        match *self {
            WeightSpec::Constant {} => 1.0,
            WeightSpec::Monomial { a, b } => pow0(x[0], a) * pow0(x[1], b),
        }
    }

    /// Checks that `w ≥ 0` is well defined on the closed cone.
    pub fn validate_on(&self, cone: &ConeSpec) -> Result<()> {
        self.validate()?;
        if let WeightSpec::Monomial { a, b } = *self {
            for d in cone.extreme_directions() {
                if (a > 0.0 && d[0] < -1e-12) || (b > 0.0 && d[1] < -1e-12) {
                    return Err(Error::InvalidSpec(format!(
                        "monomial weight x^{a} y^{b} is not defined on the cone {:?}",
                        cone.kind()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[inline]
fn pow0(v: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if e == 1.0 {
        v.max(0.0)
    } else if e == 2.0 {
        let v = v.max(0.0);
        v * v
    } else {
        v.max(0.0).powf(e)
    }
}

/// `w(x)` for `x` in the closed cone.
pub fn weight_eval(w: &WeightSpec, cone: &ConeSpec, x: Point) -> Result<f64> {
    if !cone.contains_closed(x, 1e-12 * (1.0 + geom::norm(x))) {
        return Err(Error::OutsideCone { x: x[0], y: x[1] });
    }
    Ok(w.eval(x))
}

/// Edge classification of a polygon relative to the cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeTag {
    /// Inside `Σ`; counts towards the relative perimeter.
    Interior,
    /// Lies on `∂Σ`; excluded from the relative perimeter.
    ConeBoundary,
}

/// Closed counterclockwise polygon with per-edge tags; edge `i` joins
/// vertex `i` to vertex `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonalSet {
    vertices: Vec<Point>,
    tags: Vec<EdgeTag>,
}

impl PolygonalSet {
    pub fn new(vertices: Vec<Point>, tags: Vec<EdgeTag>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::NonSimplePolygon("fewer than 3 vertices".into()));
        }
        if tags.len() != vertices.len() {
            return Err(Error::InvalidSpec("one tag per edge is required".into()));
        }
        if !vertices.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::NonSimplePolygon("non-finite vertex".into()));
        }
        if geom::polygon_area(&vertices) <= 0.0 {
            return Err(Error::NonSimplePolygon(
                "signed area must be positive (counterclockwise)".into(),
            ));
        }
        Ok(Self { vertices, tags })
    }

    /// Builds a polygon tagging edges that lie on `∂Σ` within
    /// `1e-9 · diameter`.
    pub fn with_cone_tags(vertices: Vec<Point>, cone: &ConeSpec) -> Result<Self> {
        let tol = 1e-9 * diameter(&vertices).max(f64::MIN_POSITIVE);
        let n = vertices.len();
        let tags = (0..n)
            .map(|i| {
                let a = vertices[i];
                let b = vertices[(i + 1) % n];
                let on = [a, b, geom::lerp(a, b, 0.5)]
                    .iter()
                    .all(|p| cone.boundary_distance(*p) <= tol);
                if on {
                    EdgeTag::ConeBoundary
                } else {
                    EdgeTag::Interior
                }
            })
            .collect();
        Self::new(vertices, tags)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn tags(&self) -> &[EdgeTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point, EdgeTag)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n], self.tags[i]))
    }

    pub fn area(&self) -> f64 {
        geom::polygon_area(&self.vertices)
    }

    pub fn diameter(&self) -> f64 {
        diameter(&self.vertices)
    }

    /// The dilation `tE`.
    pub fn scaled(&self, t: f64) -> Result<Self> {
        Self::new(
            self.vertices.iter().map(|v| geom::scale(*v, t)).collect(),
            self.tags.clone(),
        )
    }

    /// Rejects self-intersecting boundaries. Uses a uniform grid so that
    /// polygons with many thousands of edges stay cheap.
    pub fn check_simple(&self) -> Result<()> {
        let n = self.vertices.len();
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in &self.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let cells = (n as f64).sqrt().ceil().max(1.0) as usize;
        let size = [
            ((hi[0] - lo[0]) / cells as f64).max(f64::MIN_POSITIVE),
            ((hi[1] - lo[1]) / cells as f64).max(f64::MIN_POSITIVE),
        ];
        let cell = |p: Point, k: usize| (((p[k] - lo[k]) / size[k]) as usize).min(cells - 1);
        let mut grid: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            for cx in cell(a, 0).min(cell(b, 0))..=cell(a, 0).max(cell(b, 0)) {
                for cy in cell(a, 1).min(cell(b, 1))..=cell(a, 1).max(cell(b, 1)) {
                    grid.entry((cx, cy)).or_default().push(i);
                }
            }
        }
        for bucket in grid.values() {
            for (x, &i) in bucket.iter().enumerate() {
                for &j in &bucket[x + 1..] {
                    let adjacent = (i + 1) % n == j || (j + 1) % n == i;
                    if adjacent {
                        // consecutive edges may only share their common vertex
                        let (first, second) = if (i + 1) % n == j { (i, j) } else { (j, i) };
                        let a = self.vertices[first];
                        let m = self.vertices[second];
                        let c = self.vertices[(second + 1) % n];
                        let o = geom::orient(a, m, c);
                        if o == 0.0 && geom::dot(geom::sub(a, m), geom::sub(c, m)) > 0.0 {
                            return Err(Error::NonSimplePolygon(format!("edges {i} and {j} fold back")));
                        }
                        continue;
                    }
                    let (p1, p2) = (self.vertices[i], self.vertices[(i + 1) % n]);
                    let (q1, q2) = (self.vertices[j], self.vertices[(j + 1) % n]);
                    if geom::segments_intersect(p1, p2, q1, q2) {
                        return Err(Error::NonSimplePolygon(format!("edges {i} and {j} intersect")));
                    }
                }
            }
        }
        Ok(())
    }

    fn check_in_cone(&self, cone: &ConeSpec) -> Result<()> {
        let tol = 1e-9 * self.diameter();
        match self
            .vertices
            .iter()
            .find(|v| !cone.contains_closed(**v, tol))
        {
            Some(v) => Err(Error::OutsideCone { x: v[0], y: v[1] }),
            None => Ok(()),
        }
    }

    /// Reads a CSV vertex list with header `x,y`; edge tags are recomputed
    /// from the cone.
    pub fn load_csv(path: &Path, cone: &ConeSpec) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["x", "y"] {
            return Err(Error::InvalidSpec(format!(
                "{}: expected header x,y",
                path.display()
            )));
        }
        let vertices = rdr
            .deserialize::<(f64, f64)>()
            .map(|r| r.map(|(x, y)| [x, y]))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::with_cone_tags(vertices, cone)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["x", "y"])?;
        for v in &self.vertices {
            wtr.write_record([v[0].to_string(), v[1].to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn diameter(vertices: &[Point]) -> f64 {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for v in vertices {
        for k in 0..2 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    (hi[0] - lo[0]).hypot(hi[1] - lo[1])
}

/// `w(E) = ∫_E w` by a signed fan triangulation from the first vertex, each
/// fan triangle integrated with the degree-5 rule after two uniform
/// refinements.
pub fn weighted_volume(w: &WeightSpec, set: &PolygonalSet, cone: &ConeSpec) -> Result<f64> {
    set.check_simple()?;
    set.check_in_cone(cone)?;
    Ok(weighted_volume_unchecked(w, set))
}

pub(crate) fn weighted_volume_unchecked(w: &WeightSpec, set: &PolygonalSet) -> f64 {
    let v = set.vertices();
    let o = v[0];
    let mut g = |x: Point| w.eval(x);
    (1..v.len() - 1)
        .map(|i| {
            let tri = [o, v[i], v[i + 1]];
            let sign = geom::orient(tri[0], tri[1], tri[2]).signum();
            if sign == 0.0 {
                return 0.0;
            }
            sign * quadrature::integrate_triangle_refined(&tri, 2, &mut g)
        })
        .sum()
}

/// `P_{w,H}(E; Σ) = Σ_{interior edges} H(ν) w(midpoint) |edge|`.
pub fn weighted_perimeter(
    norm: &NormSpec,
    w: &WeightSpec,
    set: &PolygonalSet,
    cone: &ConeSpec,
) -> Result<f64> {
    set.check_simple()?;
    set.check_in_cone(cone)?;
    Ok(weighted_perimeter_unchecked(norm, w, set))
}

pub(crate) fn weighted_perimeter_unchecked(norm: &NormSpec, w: &WeightSpec, set: &PolygonalSet) -> f64 {
    set.edges()
        .filter(|e| e.2 == EdgeTag::Interior)
        .map(|(a, b, _)| {
            let e = geom::sub(b, a);
            // H(ν)|e| with ν the outward unit normal
            norm.eval([e[1], -e[0]]) * w.eval(geom::lerp(a, b, 0.5))
        })
        .sum()
}

/// Worst midpoint-concavity slack of `w^{1/λ}` over `samples` seeded random
/// pairs in `Σ ∩ B₁`. Nonnegative means the certificate passes.
pub fn concavity_certificate(w: &WeightSpec, cone: &ConeSpec, samples: usize) -> Result<f64> {
    let lambda = w.degree();
    if lambda == 0.0 {
        return Err(Error::InvalidSpec(
            "concavity certificate requires a weight of positive degree".into(),
        ));
    }
    w.validate_on(cone)?;
    let g = |x: Point| w.eval(x).powf(1.0 / lambda);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0ca);
    let worst = (0..samples.max(1))
        .map(|_| {
            let x = cone.sample(&mut rng, 1.0);
            let y = cone.sample(&mut rng, 1.0);
            g(geom::lerp(x, y, 0.5)) - 0.5 * (g(x) + g(y))
        })
        .fold(f64::INFINITY, f64::min);
    Ok(worst)
}
