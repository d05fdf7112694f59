//! Small planar geometry kit shared by the structured and exterior meshes.

use serde::{Deserialize, Serialize};

pub type P2 = [f64; 2];

#[inline]
pub fn sub(a: P2, b: P2) -> P2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add(a: P2, b: P2) -> P2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn scale(a: P2, s: f64) -> P2 {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn dot(a: P2, b: P2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn cross(a: P2, b: P2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn norm(a: P2) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn lerp(a: P2, b: P2, t: f64) -> P2 {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// Twice the signed area; positive for counter-clockwise input.
#[inline]
pub fn orient(a: P2, b: P2, c: P2) -> f64 {
    cross(sub(b, a), sub(c, a))
}

pub fn polygon_area(poly: &[P2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n).map(|i| cross(poly[i], poly[(i + 1) % n])).sum::<f64>()
}

pub fn centroid(v: &[P2; 3]) -> P2 {
    [(v[0][0] + v[1][0] + v[2][0]) / 3.0, (v[0][1] + v[1][1] + v[2][1]) / 3.0]
}

/// Keeps the part of `poly` left of (or on) the directed line `a -> b`.
pub fn clip_left(poly: &[P2], a: P2, b: P2) -> Vec<P2> {
    let d = sub(b, a);
    let side = |p: P2| cross(d, sub(p, a));
    let mut out = Vec::with_capacity(poly.len() + 2);
    let n = poly.len();
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        let sp = side(p);
        let sq = side(q);
        if sp >= 0.0 {
            out.push(p);
        }
        if (sp >= 0.0) != (sq >= 0.0) {
            let t = sp / (sp - sq);
            out.push(lerp(p, q, t));
        }
    }
    out
}

/// Incenter of a triangle.
pub fn incenter(v: &[P2; 3]) -> P2 {
    let a = norm(sub(v[1], v[2]));
    let b = norm(sub(v[2], v[0]));
    let c = norm(sub(v[0], v[1]));
    let s = a + b + c;
    [
        (a * v[0][0] + b * v[1][0] + c * v[2][0]) / s,
        (a * v[0][1] + b * v[1][1] + c * v[2][1]) / s,
    ]
}

/// The three directed lines whose left half-planes intersect to sector `j`
/// of triangle `v` (counter-clockwise). Sector `j` lies opposite local vertex
/// `j`, beyond edge `(v[j+1], v[j+2])` and between the outward bisector rays
/// through those two vertices.
pub fn sector_lines(v: &[P2; 3], j: usize) -> [(P2, P2); 3] {
    let c = incenter(v);
    let a = v[(j + 1) % 3];
    let b = v[(j + 2) % 3];
    [(c, a), (b, c), (b, a)]
}

/// Area of `poly` inside sector `j` of `v`.
pub fn sector_clip_area(v: &[P2; 3], j: usize, poly: &[P2]) -> f64 {
    let mut p = poly.to_vec();
    for (a, b) in sector_lines(v, j) {
        p = clip_left(&p, a, b);
        if p.len() < 3 {
            return 0.0;
        }
    }
    polygon_area(&p)
}

/// The two triangle shapes of the structured mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElemType {
    /// Right angle at the bottom-right corner of its grid square.
    One,
    /// Right angle at the top-left corner of its grid square.
    Two,
}

impl ElemType {
    pub fn code(self) -> u32 {
        match self {
            ElemType::One => 1,
            ElemType::Two => 2,
        }
    }

    pub fn from_code(c: u32) -> Option<Self> {
        match c {
            1 => Some(ElemType::One),
            2 => Some(ElemType::Two),
            _ => None,
        }
    }

    /// Local corners in unit-square coordinates, counter-clockwise.
    pub fn unit_corners(self) -> [P2; 3] {
        match self {
            ElemType::One => [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
            ElemType::Two => [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        }
    }
}

/// Reference triangle: unit-leg copy of the element shape, centroid at the
/// origin, vertices in the same local order as the structured mesh.
pub fn reference_vertices(t: ElemType) -> [P2; 3] {
    let c = t.unit_corners();
    let g = centroid(&c);
    [sub(c[0], g), sub(c[1], g), sub(c[2], g)]
}
