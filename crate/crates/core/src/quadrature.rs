//! Triangle and segment quadrature rules, plus clipping of P1 fields.

use std::sync::OnceLock;

use crate::geom::{lerp, Point};

/// Barycentric node and weight (weights sum to 1).
#[derive(Debug, Clone, Copy)]
pub struct TriNode {
    pub bary: [f64; 3],
    pub weight: f64,
}

/// Seven-point rule exact for polynomials of degree five.
pub fn degree5_rule() -> &'static [TriNode; 7] {
    static RULE: OnceLock<[TriNode; 7]> = OnceLock::new();
    RULE.get_or_init(|| {
        let s15 = 15f64.sqrt();
        let a1 = (9.0 - 2.0 * s15) / 21.0;
        let b1 = (6.0 + s15) / 21.0;
        let w1 = (155.0 + s15) / 1200.0;
        let a2 = (9.0 + 2.0 * s15) / 21.0;
        let b2 = (6.0 - s15) / 21.0;
        let w2 = (155.0 - s15) / 1200.0;
        let third = 1.0 / 3.0;
        [
            TriNode {
                bary: [third, third, third],
                weight: 9.0 / 40.0,
            },
            TriNode {
                bary: [a1, b1, b1],
                weight: w1,
            },
            TriNode {
                bary: [b1, a1, b1],
                weight: w1,
            },
            TriNode {
                bary: [b1, b1, a1],
                weight: w1,
            },
            TriNode {
                bary: [a2, b2, b2],
                weight: w2,
            },
            TriNode {
                bary: [b2, a2, b2],
                weight: w2,
            },
            TriNode {
                bary: [b2, b2, a2],
                weight: w2,
            },
        ]
    })
}

/// Three-point Gauss–Legendre nodes on `[0, 1]` with weights summing to 1.
pub const GAUSS3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_3, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

#[inline]
pub fn bary_point(tri: &[Point; 3], b: [f64; 3]) -> Point {
    [
        b[0] * tri[0][0] + b[1] * tri[1][0] + b[2] * tri[2][0],
        b[0] * tri[0][1] + b[1] * tri[1][1] + b[2] * tri[2][1],
    ]
}

#[inline]
pub fn tri_area(tri: &[Point; 3]) -> f64 {
    0.5 * crate::geom::orient(tri[0], tri[1], tri[2])
}

/// Integrates `g` over a triangle with the degree-5 rule.
pub fn integrate_triangle(tri: &[Point; 3], mut g: impl FnMut(Point) -> f64) -> f64 {
    let area = tri_area(tri).abs();
    degree5_rule()
        .iter()
        .map(|n| n.weight * g(bary_point(tri, n.bary)))
        .sum::<f64>()
        * area
}

/// Same as [`integrate_triangle`] after `levels` uniform 1-to-4 refinements.
pub fn integrate_triangle_refined(
    tri: &[Point; 3],
    levels: u32,
    g: &mut impl FnMut(Point) -> f64,
) -> f64 {
    if levels == 0 {
        return integrate_triangle(tri, &mut *g);
    }
    let [a, b, c] = *tri;
    let ab = lerp(a, b, 0.5);
    let bc = lerp(b, c, 0.5);
    let ca = lerp(c, a, 0.5);
    [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
        .iter()
        .map(|t| integrate_triangle_refined(t, levels - 1, g))
        .sum()
}

/// Integrates `g` along the segment `[a, b]` with three Gauss points.
pub fn integrate_segment(a: Point, b: Point, mut g: impl FnMut(Point) -> f64) -> f64 {
    let len = crate::geom::dist(a, b);
    GAUSS3
        .iter()
        .map(|&(s, w)| w * g(lerp(a, b, s)))
        .sum::<f64>()
        * len
}

/// Clips a triangle (given in barycentric corners) to `{value > t}` where the
/// value is linear with corner values `vals`. Returns the clipped polygon in
/// barycentric coordinates of the parent triangle (empty, 3 or 4 corners).
pub fn clip_above(corners: &[[f64; 3]], vals: &[f64], t: f64) -> Vec<([f64; 3], f64)> {
    let n = corners.len();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..n {
        let j = (i + 1) % n;
        let (vi, vj) = (vals[i], vals[j]);
        let in_i = vi > t;
        let in_j = vj > t;
        if in_i {
            out.push((corners[i], vi));
        }
        if in_i != in_j {
            let s = (t - vi) / (vj - vi);
            let b = [
                corners[i][0] + s * (corners[j][0] - corners[i][0]),
                corners[i][1] + s * (corners[j][1] - corners[i][1]),
                corners[i][2] + s * (corners[j][2] - corners[i][2]),
            ];
            out.push((b, t));
        }
    }
    out
}

/// Same as [`clip_above`] for `{value < t}`.
pub fn clip_below(corners: &[[f64; 3]], vals: &[f64], t: f64) -> Vec<([f64; 3], f64)> {
    let neg: Vec<f64> = vals.iter().map(|v| -v).collect();
    clip_above(corners, &neg, -t)
        .into_iter()
        .map(|(b, v)| (b, -v))
        .collect()
}

/// Splits the reference triangle into convex pieces on which the linear field
/// with corner values `vals` does not cross any of `cuts` (sorted ascending).
/// Each piece is returned as a fan-triangulated list of barycentric triangles.
pub fn split_at_levels(vals: [f64; 3], cuts: &[f64]) -> Vec<[[f64; 3]; 3]> {
    let unit = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let active: Vec<f64> = cuts.iter().cloned().filter(|&c| c > lo && c < hi).collect();
    if active.is_empty() {
        return vec![unit];
    }
    let mut pieces = Vec::new();
    let mut rest: Vec<([f64; 3], f64)> = unit.iter().cloned().zip(vals).collect();
    for &c in &active {
        let (cs, vs): (Vec<_>, Vec<_>) = rest.iter().cloned().unzip();
        let below = clip_below(&cs, &vs, c);
        fan(&below, &mut pieces);
        rest = clip_above(&cs, &vs, c);
    }
    fan(&rest, &mut pieces);
    pieces
}

fn fan(poly: &[([f64; 3], f64)], out: &mut Vec<[[f64; 3]; 3]>) {
    for i in 1..poly.len().saturating_sub(1) {
        out.push([poly[0].0, poly[i].0, poly[i + 1].0]);
    }
}

/// Area of a barycentric sub-triangle relative to its parent.
pub fn bary_area_fraction(t: &[[f64; 3]; 3]) -> f64 {
    let p = |b: [f64; 3]| [b[1], b[2]];
    let (a, b, c) = (p(t[0]), p(t[1]), p(t[2]));
    crate::geom::orient(a, b, c).abs()
}
