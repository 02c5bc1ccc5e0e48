//! Triangulation of `Σ ∩ B_R` (cone cut by a Wulff ball centered at the
//! origin) from concentric scaled copies of the Wulff shape.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cone::ConeSpec;
use crate::error::{Error, Result};
use crate::finsler::NormSpec;
use crate::geom::{self, Point};

/// Smallest interior angle accepted in a generated mesh.
pub const MIN_ANGLE_DEG: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryTag {
    /// `Σ ∩ ∂Ω`: homogeneous Dirichlet.
    Gamma0,
    /// `∂Σ ∩ Ω`: natural (conormal) condition.
    Gamma1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub a: usize,
    pub b: usize,
    pub tag: BoundaryTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    /// Boundary edges oriented as in their owning triangle.
    pub boundary: Vec<BoundaryEdge>,
    /// Target element size.
    pub h: f64,
}

impl Mesh {
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>, boundary: Vec<BoundaryEdge>, h: f64) -> Result<Self> {
        let n = vertices.len();
        let mut tris = triangles;
        for t in tris.iter_mut() {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::Mesh("triangle references a missing vertex".into()));
            }
            let o = geom::orient(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            if o == 0.0 {
                return Err(Error::Mesh("degenerate triangle".into()));
            }
            if o < 0.0 {
                t.swap(1, 2);
            }
        }
        let mesh = Self {
            vertices,
            triangles: tris,
            boundary,
            h,
        };
        mesh.check_boundary()?;
        Ok(mesh)
    }

    pub fn triangle(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// `true` for vertices carrying the Dirichlet condition.
    pub fn dirichlet_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.vertices.len()];
        for e in self.boundary.iter().filter(|e| e.tag == BoundaryTag::Gamma0) {
            mask[e.a] = true;
            mask[e.b] = true;
        }
        mask
    }

    /// Triangle owning each boundary edge, in the order of `self.boundary`.
    pub fn boundary_owners(&self) -> Vec<usize> {
        let mut owner = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                owner.insert((tri[k], tri[(k + 1) % 3]), t);
            }
        }
        self.boundary
            .iter()
            .map(|e| owner.get(&(e.a, e.b)).or_else(|| owner.get(&(e.b, e.a))).copied().unwrap_or(usize::MAX))
            .collect()
    }

    /// Smallest interior angle in degrees.
    pub fn min_angle_deg(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let p = [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]];
                (0..3)
                    .map(|k| {
                        let u = geom::sub(p[(k + 1) % 3], p[k]);
                        let v = geom::sub(p[(k + 2) % 3], p[k]);
                        geom::cross(u, v).abs().atan2(geom::dot(u, v))
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min)
            .to_degrees()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let p = self.triangle(t);
                0.5 * geom::orient(p[0], p[1], p[2])
            })
            .sum()
    }

    /// Every edge used by exactly one triangle must carry exactly one tag.
    fn check_boundary(&self) -> Result<()> {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut tagged: HashMap<(usize, usize), usize> = HashMap::new();
        for e in &self.boundary {
            *tagged.entry((e.a.min(e.b), e.a.max(e.b))).or_default() += 1;
        }
        for (edge, c) in &count {
            if *c > 2 {
                return Err(Error::Mesh(format!("edge {edge:?} shared by {c} triangles")));
            }
            let tags = tagged.get(edge).copied().unwrap_or(0);
            if (*c == 1 && tags != 1) || (*c == 2 && tags != 0) {
                return Err(Error::Mesh(format!("edge {edge:?} has {tags} boundary tags")));
            }
        }
        if tagged.keys().any(|e| !count.contains_key(e)) {
            return Err(Error::Mesh("tagged edge is not a mesh edge".into()));
        }
        Ok(())
    }

    /// Writes `vertices.csv`, `triangles.csv` and `edges.csv` into `dir`.
    pub fn save_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut w = csv::Writer::from_path(dir.join("vertices.csv"))?;
        w.write_record(["x", "y"])?;
        for v in &self.vertices {
            w.write_record([v[0].to_string(), v[1].to_string()])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
        let mut w = csv::Writer::from_path(dir.join("triangles.csv"))?;
        w.write_record(["a", "b", "c"])?;
        for t in &self.triangles {
            w.write_record(t.map(|i| i.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
        let mut w = csv::Writer::from_path(dir.join("edges.csv"))?;
        w.write_record(["a", "b", "tag"])?;
        for e in &self.boundary {
            let tag = match e.tag {
                BoundaryTag::Gamma0 => "gamma0",
                BoundaryTag::Gamma1 => "gamma1",
            };
            w.write_record([e.a.to_string(), e.b.to_string(), tag.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
        Ok(())
    }

    /// Reads the files written by [`Mesh::save_csv`]. The target size is
    /// recovered as the longest edge.
    pub fn load_csv(dir: &Path) -> Result<Self> {
        let vertices = csv::Reader::from_path(dir.join("vertices.csv"))?
            .deserialize::<(f64, f64)>()
            .map(|r| r.map(|(x, y)| [x, y]))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let triangles = csv::Reader::from_path(dir.join("triangles.csv"))?
            .deserialize::<(usize, usize, usize)>()
            .map(|r| r.map(|(a, b, c)| [a, b, c]))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let boundary = csv::Reader::from_path(dir.join("edges.csv"))?
            .deserialize::<BoundaryEdge>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let h = triangles
            .iter()
            .flat_map(|t: &[usize; 3]| (0..3).map(move |k| (t[k], t[(k + 1) % 3])))
            .filter_map(|(a, b)| Some(geom::dist(*vertices.get(a)?, *vertices.get(b)?)))
            .fold(0.0, f64::max);
        Self::new(vertices, triangles, boundary, h)
    }
}

/// Parametrization of the unit Wulff curve over the cone's angular range by
/// the measure `dℓ/ρ(θ)`, so that points equally spaced in it are separated
/// proportionally to the local radius and rings stay locally isotropic.
struct WulffArc {
    thetas: Vec<f64>,
    cumulative: Vec<f64>,
    radii: Vec<f64>,
}

impl WulffArc {
    fn new(norm: &NormSpec, start: f64, span: f64) -> Self {
        let samples = ((4096.0 * span / TAU).ceil() as usize).max(256);
        let thetas: Vec<f64> = (0..=samples)
            .map(|j| start + span * j as f64 / samples as f64)
            .collect();
        let radii: Vec<f64> = thetas.iter().map(|t| norm.wulff_radius(*t)).collect();
        let mut cumulative = vec![0.0];
        for j in 1..=samples {
            let a = geom::scale(geom::unit(thetas[j - 1]), radii[j - 1]);
            let b = geom::scale(geom::unit(thetas[j]), radii[j]);
            let rho = 0.5 * (radii[j - 1] + radii[j]);
            cumulative.push(cumulative[j - 1] + geom::dist(a, b) / rho);
        }
        Self {
            thetas,
            cumulative,
            radii,
        }
    }

    fn measure(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Angle at measure fraction `s ∈ [0, 1]`.
    fn theta_at(&self, s: f64) -> f64 {
        let target = s.clamp(0.0, 1.0) * self.measure();
        let j = self.cumulative.partition_point(|c| *c < target).clamp(1, self.thetas.len() - 1);
        let (c0, c1) = (self.cumulative[j - 1], self.cumulative[j]);
        let f = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
        self.thetas[j - 1] + f * (self.thetas[j] - self.thetas[j - 1])
    }

    fn radius_bounds(&self) -> (f64, f64) {
        self.radii
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(*r), hi.max(*r)))
    }
}

/// Triangulates `Σ ∩ B_R` with target size `h`. For cones with a vertex the
/// elements within distance `R/8` of it are refined by a factor two when
/// `grading` is set.
pub fn generate_mesh(cone: &ConeSpec, norm: &NormSpec, radius: f64, h: f64, grading: bool) -> Result<Mesh> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Mesh("domain radius must be positive".into()));
    }
    if !(h > 0.0 && h <= radius / 4.0) {
        return Err(Error::Mesh(format!("element size {h} must lie in (0, R/4]")));
    }
    let closed = cone.is_full_plane();
    let (start, span) = if closed {
        (0.0, TAU)
    } else {
        (cone.start_angle(), cone.opening())
    };
    let arc = WulffArc::new(norm, start, span);
    let (rho_min, rho_max) = arc.radius_bounds();
    let graded = grading && !closed;

    // Ring scales s ∈ (0, 1]; radial spacing ≤ h (≤ h/2 inside the graded zone).
    let mut rings: Vec<(f64, f64)> = Vec::new();
    let outer_len = radius * rho_max;
    if graded {
        let s_g = (1.0 / (8.0 * rho_min)).min(0.5);
        let n_in = ((s_g * outer_len) / (0.5 * h)).ceil().max(1.0) as usize;
        let n_out = (((1.0 - s_g) * outer_len) / h).ceil().max(1.0) as usize;
        rings.extend((1..=n_in).map(|i| (s_g * i as f64 / n_in as f64, 0.5 * h)));
        rings.extend((1..=n_out).map(|i| (s_g + (1.0 - s_g) * i as f64 / n_out as f64, h)));
    } else {
        let n = (outer_len / h).ceil().max(1.0) as usize;
        rings.extend((1..=n).map(|i| (i as f64 / n as f64, h)));
    }

    let mut vertices: Vec<Point> = vec![[0.0, 0.0]];
    let mut ring_ids: Vec<Vec<usize>> = vec![vec![0]];
    let mut ring_fracs: Vec<Vec<f64>> = vec![vec![0.0]];
    for (i, &(s, hl)) in rings.iter().enumerate() {
        let len = s * radius * rho_max * arc.measure();
        let (ids, fracs) = if closed {
            let n = ((len / hl).ceil() as usize).max(6);
            let offset = if i % 2 == 1 { 0.5 } else { 0.0 };
            let fracs: Vec<f64> = (0..n).map(|j| (j as f64 + offset) / n as f64).collect();
            let ids = (0..n).map(|j| vertices.len() + j).collect();
            (ids, fracs)
        } else {
            let n = ((len / hl).ceil() as usize).max(1);
            let fracs: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();
            let ids = (0..=n).map(|j| vertices.len() + j).collect();
            (ids, fracs)
        };
        for f in &fracs {
            let th = arc.theta_at(*f);
            let p = geom::scale(geom::unit(th), s * radius * norm.wulff_radius(th));
            vertices.push(p);
        }
        ring_ids.push(ids);
        ring_fracs.push(fracs);
    }

    let mut triangles = Vec::new();
    for r in 0..rings.len() {
        let (ia, fa) = (&ring_ids[r], &ring_fracs[r]);
        let (ib, fb) = (&ring_ids[r + 1], &ring_fracs[r + 1]);
        if r == 0 {
            let n = ib.len();
            let segs = if closed { n } else { n - 1 };
            for j in 0..segs {
                triangles.push([0, ib[j], ib[(j + 1) % n]]);
            }
            continue;
        }
        stitch(ia, fa, ib, fb, closed, &mut triangles);
    }
    for t in triangles.iter_mut() {
        if geom::orient(vertices[t[0]], vertices[t[1]], vertices[t[2]]) < 0.0 {
            t.swap(1, 2);
        }
    }

    delaunay_flips(&vertices, &mut triangles, h);
    smooth_interior(&mut vertices, &triangles, 4);
    delaunay_flips(&vertices, &mut triangles, h);

    let outer: std::collections::HashSet<usize> = ring_ids.last().unwrap().iter().copied().collect();
    let mut count: HashMap<(usize, usize), (usize, usize, usize)> = HashMap::new();
    for t in &triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            let e = count.entry((a.min(b), a.max(b))).or_insert((a, b, 0));
            e.2 += 1;
        }
    }
    let mut boundary: Vec<BoundaryEdge> = count
        .values()
        .filter(|(_, _, c)| *c == 1)
        .map(|&(a, b, _)| BoundaryEdge {
            a,
            b,
            tag: if outer.contains(&a) && outer.contains(&b) {
                BoundaryTag::Gamma0
            } else {
                BoundaryTag::Gamma1
            },
        })
        .collect();
    boundary.sort_by_key(|e| (e.a, e.b));

    let mesh = Mesh::new(vertices, triangles, boundary, h)?;
    let min_angle = mesh.min_angle_deg();
    if min_angle < MIN_ANGLE_DEG {
        return Err(Error::Mesh(format!(
            "minimum angle {min_angle:.2} deg is below {MIN_ANGLE_DEG} deg"
        )));
    }
    Ok(mesh)
}

/// Fills the strip between two rings by merging their arc-length fractions.
fn stitch(ia: &[usize], fa: &[f64], ib: &[usize], fb: &[f64], closed: bool, out: &mut Vec<[usize; 3]>) {
    let (m, n) = (ia.len(), ib.len());
    if closed {
        // unwrap both rings starting from the outer point nearest to fa[0]
        let k0 = (0..n)
            .min_by(|&x, &y| {
                let dx = circ_dist(fb[x], fa[0]);
                let dy = circ_dist(fb[y], fa[0]);
                dx.total_cmp(&dy)
            })
            .unwrap();
        let mut b0 = fb[k0];
        if b0 - fa[0] > 0.5 {
            b0 -= 1.0;
        } else if fa[0] - b0 > 0.5 {
            b0 += 1.0;
        }
        let a_at = |i: usize| fa[i % m] + (i / m) as f64;
        let b_at = |k: usize| {
            let idx = k0 + k;
            fb[idx % n] + (idx / n) as f64 - fb[k0] + b0
        };
        let (mut i, mut k) = (0, 0);
        while i < m || k < n {
            let advance_inner = if i == m {
                false
            } else if k == n {
                true
            } else {
                a_at(i + 1) < b_at(k + 1)
            };
            if advance_inner {
                out.push([ia[i % m], ia[(i + 1) % m], ib[(k0 + k) % n]]);
                i += 1;
            } else {
                out.push([ia[i % m], ib[(k0 + k + 1) % n], ib[(k0 + k) % n]]);
                k += 1;
            }
        }
    } else {
        let (mut i, mut k) = (0, 0);
        while i + 1 < m || k + 1 < n {
            let advance_inner = if i + 1 == m {
                false
            } else if k + 1 == n {
                true
            } else {
                fa[i + 1] < fb[k + 1]
            };
            if advance_inner {
                out.push([ia[i], ia[i + 1], ib[k]]);
                i += 1;
            } else {
                out.push([ia[i], ib[k + 1], ib[k]]);
                k += 1;
            }
        }
    }
}

/// Laplacian smoothing of vertices not on the mesh boundary; an iteration that
/// would invert a triangle is discarded.
fn smooth_interior(vertices: &mut [Point], triangles: &[[usize; 3]], iterations: usize) {
    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); vertices.len()];
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_default() += 1;
            if !neighbors[a].contains(&b) {
                neighbors[a].push(b);
            }
            if !neighbors[b].contains(&a) {
                neighbors[b].push(a);
            }
        }
    }
    let mut fixed = vec![false; vertices.len()];
    for (&(a, b), &c) in &count {
        if c == 1 {
            fixed[a] = true;
            fixed[b] = true;
        }
    }
    for _ in 0..iterations {
        let next: Vec<Point> = (0..vertices.len())
            .map(|i| {
                if fixed[i] || neighbors[i].is_empty() {
                    return vertices[i];
                }
                let n = neighbors[i].len() as f64;
                neighbors[i]
                    .iter()
                    .fold([0.0, 0.0], |acc, &j| geom::add(acc, geom::scale(vertices[j], 1.0 / n)))
            })
            .collect();
        let valid = triangles
            .iter()
            .all(|t| geom::orient(next[t[0]], next[t[1]], next[t[2]]) > 0.0);
        if !valid {
            break;
        }
        vertices.copy_from_slice(&next);
    }
}

/// Lawson flips until every interior edge is locally Delaunay. Boundary
/// edges are never touched, so tags computed afterwards are unaffected.
fn delaunay_flips(vertices: &[Point], triangles: &mut [[usize; 3]], h: f64) {
    let tol = 1e-10 * h.powi(4);
    for _ in 0..100 {
        let mut owner: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                owner.insert((tri[k], tri[(k + 1) % 3]), (t, k));
            }
        }
        let mut touched = vec![false; triangles.len()];
        let mut flipped = 0;
        for t1 in 0..triangles.len() {
            for k in 0..3 {
                if touched[t1] {
                    break;
                }
                let [a, b, c] = [triangles[t1][k], triangles[t1][(k + 1) % 3], triangles[t1][(k + 2) % 3]];
                let Some(&(t2, k2)) = owner.get(&(b, a)) else {
                    continue;
                };
                if touched[t2] {
                    continue;
                }
                let d = triangles[t2][(k2 + 2) % 3];
                if in_circle(vertices[a], vertices[b], vertices[c], vertices[d]) > tol {
                    triangles[t1] = [c, a, d];
                    triangles[t2] = [d, b, c];
                    touched[t1] = true;
                    touched[t2] = true;
                    flipped += 1;
                }
            }
        }
        if flipped == 0 {
            break;
        }
    }
}

/// Positive when `d` lies strictly inside the circumcircle of the
/// counterclockwise triangle `abc`.
fn in_circle(a: Point, b: Point, c: Point, d: Point) -> f64 {
    let (adx, ady) = (a[0] - d[0], a[1] - d[1]);
    let (bdx, bdy) = (b[0] - d[0], b[1] - d[1]);
    let (cdx, cdy) = (c[0] - d[0], c[1] - d[1]);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

fn circ_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}
