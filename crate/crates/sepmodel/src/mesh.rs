//! Structured triangulation of the unit square and the uniform 1D mesh.

use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::geometry::{self, ElemType, P2};

/// Side of the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Bottom,
    Right,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Bottom, Side::Right, Side::Top];

    /// Outward unit normal.
    pub fn normal(self) -> P2 {
        match self {
            Side::Left => [-1.0, 0.0],
            Side::Bottom => [0.0, -1.0],
            Side::Right => [1.0, 0.0],
            Side::Top => [0.0, 1.0],
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn contains(self, p: P2) -> bool {
        const TOL: f64 = 1e-12;
        match self {
            Side::Left => p[0].abs() < TOL,
            Side::Bottom => p[1].abs() < TOL,
            Side::Right => (p[0] - 1.0).abs() < TOL,
            Side::Top => (p[1] - 1.0).abs() < TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub a: usize,
    pub b: usize,
    pub side: Side,
}

#[derive(Debug, Clone)]
pub struct Mesh2D {
    pub n_ref: u32,
    pub vertices: Vec<P2>,
    /// Counter-clockwise vertex triples.
    pub elements: Vec<[usize; 3]>,
    pub elem_type: Vec<ElemType>,
    pub boundary_vertex: Vec<bool>,
    pub boundary_edges: Vec<BoundaryEdge>,
    vertex_elements: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub area: f64,
    /// Rows belong to local vertices: `D = sqrt(|T|) * grad(phi_a)ᵀ`.
    pub d: [[f64; 2]; 3],
    pub centroid: P2,
    pub local_to_global: [usize; 3],
}

impl ElementGeometry {
    /// `D Dᵀ`, the unit-conductivity local stiffness.
    pub fn local_stiffness(&self) -> [[f64; 3]; 3] {
        let mut k = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                k[a][b] = self.d[a][0] * self.d[b][0] + self.d[a][1] * self.d[b][1];
            }
        }
        k
    }

    /// `Dᵀ u_loc / sqrt|T|`, the constant gradient of the interpolant.
    pub fn gradient(&self, u_loc: [f64; 3]) -> P2 {
        let s = self.area.sqrt();
        let mut g = [0.0; 2];
        for a in 0..3 {
            g[0] += self.d[a][0] * u_loc[a];
            g[1] += self.d[a][1] * u_loc[a];
        }
        [g[0] / s, g[1] / s]
    }
}

/// Geometry factor of a triangle with counter-clockwise vertices.
pub fn triangle_geometry(v: [P2; 3]) -> ElementGeometry {
    let j = [
        [v[1][0] - v[0][0], v[2][0] - v[0][0]],
        [v[1][1] - v[0][1], v[2][1] - v[0][1]],
    ];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let jinv = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
    let g = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
    let s = (det / 2.0).sqrt();
    let mut d = [[0.0; 2]; 3];
    for a in 0..3 {
        for c in 0..2 {
            d[a][c] = s * (g[a][0] * jinv[0][c] + g[a][1] * jinv[1][c]);
        }
    }
    ElementGeometry { area: det / 2.0, d, centroid: geometry::centroid(&v), local_to_global: [0, 1, 2] }
}

impl Mesh2D {
    pub fn build(n_ref: u32) -> Result<Self> {
        if !(2..=10).contains(&n_ref) {
            return Err(Error::Parameter(format!("n_ref must lie in [2, 10], got {n_ref}")));
        }
        let n = 1usize << n_ref;
        let h = 1.0 / n as f64;
        let vid = |i: usize, j: usize| j * (n + 1) + i;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 * h, j as f64 * h]);
            }
        }
        let mut elements = Vec::with_capacity(2 * n * n);
        let mut elem_type = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (bl, br, tr, tl) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
                elements.push([bl, br, tr]);
                elem_type.push(ElemType::One);
                elements.push([bl, tr, tl]);
                elem_type.push(ElemType::Two);
            }
        }
        let boundary_vertex: Vec<bool> = vertices
            .iter()
            .map(|&p| Side::ALL.iter().any(|s| s.contains(p)))
            .collect();
        let mut boundary_edges = Vec::with_capacity(4 * n);
        for k in 0..n {
            boundary_edges.push(BoundaryEdge { a: vid(k, 0), b: vid(k + 1, 0), side: Side::Bottom });
            boundary_edges.push(BoundaryEdge { a: vid(n, k), b: vid(n, k + 1), side: Side::Right });
            boundary_edges.push(BoundaryEdge { a: vid(k + 1, n), b: vid(k, n), side: Side::Top });
            boundary_edges.push(BoundaryEdge { a: vid(0, k + 1), b: vid(0, k), side: Side::Left });
        }
        let mut vertex_elements = vec![Vec::new(); vertices.len()];
        for (l, e) in elements.iter().enumerate() {
            for &v in e {
                vertex_elements[v].push(l);
            }
        }
        Ok(Mesh2D { n_ref, vertices, elements, elem_type, boundary_vertex, boundary_edges, vertex_elements })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    /// Grid cells per side.
    pub fn cells(&self) -> usize {
        1usize << self.n_ref
    }

    pub fn h(&self) -> f64 {
        1.0 / self.cells() as f64
    }

    pub fn element_vertices(&self, l: usize) -> [P2; 3] {
        let e = self.elements[l];
        [self.vertices[e[0]], self.vertices[e[1]], self.vertices[e[2]]]
    }

    pub fn element_geometry(&self, l: usize) -> Result<ElementGeometry> {
        check_index(l, self.num_elements())?;
        let mut g = triangle_geometry(self.element_vertices(l));
        g.local_to_global = self.elements[l];
        Ok(g)
    }

    /// All element geometries in index order.
    pub fn geometries(&self) -> Vec<ElementGeometry> {
        (0..self.num_elements()).map(|l| self.element_geometry(l).unwrap()).collect()
    }

    /// No vertex on the boundary of the square.
    pub fn is_interior_element(&self, l: usize) -> bool {
        self.elements[l].iter().all(|&v| !self.boundary_vertex[v])
    }

    pub fn interior_elements(&self) -> Vec<usize> {
        (0..self.num_elements()).filter(|&l| self.is_interior_element(l)).collect()
    }

    /// Sides touched by at least one vertex of element `l`.
    pub fn touched_sides(&self, l: usize) -> Vec<Side> {
        let v = self.element_vertices(l);
        Side::ALL.into_iter().filter(|s| v.iter().any(|&p| s.contains(p))).collect()
    }

    /// Element index of the given type in grid cell (i, j).
    pub fn cell_element(&self, i: usize, j: usize, t: ElemType) -> usize {
        let base = 2 * (j * self.cells() + i);
        match t {
            ElemType::One => base,
            ElemType::Two => base + 1,
        }
    }

    /// Type-1 element whose bottom-right corner is the vertex nearest `p`.
    pub fn type_one_with_bottom_right(&self, p: P2) -> Result<usize> {
        let n = self.cells() as f64;
        let i = (p[0] * n).round() as isize - 1;
        let j = (p[1] * n).round() as isize;
        let c = self.cells() as isize;
        if i < 0 || j < 0 || i >= c || j >= c {
            return Err(Error::Parameter(format!("no type-1 element with bottom-right corner {p:?}")));
        }
        Ok(self.cell_element(i as usize, j as usize, ElemType::One))
    }

    pub fn vertex_elements(&self, v: usize) -> &[usize] {
        &self.vertex_elements[v]
    }

    /// Elements sharing at least one vertex with `l`, excluding `l`, sorted.
    pub fn vertex_neighbors(&self, l: usize) -> Result<Vec<usize>> {
        check_index(l, self.num_elements())?;
        let mut out: Vec<usize> = self.elements[l]
            .iter()
            .flat_map(|&v| self.vertex_elements[v].iter().copied())
            .filter(|&k| k != l)
            .collect();
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Area fractions of each vertex neighbor inside the three sectors of `l`.
    ///
    /// Boundary elements are rejected unless `allow_boundary` is set.
    pub fn sector_weights(&self, l: usize, allow_boundary: bool) -> Result<SectorWeights> {
        check_index(l, self.num_elements())?;
        if !allow_boundary && !self.is_interior_element(l) {
            return Err(Error::Domain(format!("element {l} touches the boundary")));
        }
        let tri = self.element_vertices(l);
        let neighbors = self.vertex_neighbors(l)?;
        let weights = neighbors
            .iter()
            .map(|&k| {
                let poly = self.element_vertices(k);
                let area = geometry::polygon_area(&poly);
                let mut w = [0.0; 3];
                for (j, wj) in w.iter_mut().enumerate() {
                    *wj = geometry::sector_clip_area(&tri, j, &poly) / area;
                }
                w
            })
            .collect();
        Ok(SectorWeights { element: l, neighbors, weights })
    }
}

#[derive(Debug, Clone)]
pub struct SectorWeights {
    pub element: usize,
    pub neighbors: Vec<usize>,
    /// `weights[i][j]` = |T_i ∩ S_j| / |T_i| for `neighbors[i]`.
    pub weights: Vec<[f64; 3]>,
}

impl SectorWeights {
    pub fn sector_total(&self, j: usize) -> f64 {
        self.weights.iter().map(|w| w[j]).sum()
    }
}

/// Uniform mesh of [0, 1] with `m` elements.
#[derive(Debug, Clone)]
pub struct Mesh1D {
    pub m: usize,
    pub vertices: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry1D {
    pub length: f64,
    pub d: [f64; 2],
    pub centroid: f64,
    pub local_to_global: [usize; 2],
}

impl Mesh1D {
    pub fn build(m: usize) -> Result<Self> {
        if m < 1 {
            return Err(Error::Parameter("1D mesh needs at least one element".into()));
        }
        let h = 1.0 / m as f64;
        Ok(Mesh1D { m, vertices: (0..=m).map(|i| i as f64 * h).collect() })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn element_geometry(&self, l: usize) -> Result<ElementGeometry1D> {
        check_index(l, self.m)?;
        let h = self.vertices[l + 1] - self.vertices[l];
        let s = 1.0 / h.sqrt();
        Ok(ElementGeometry1D {
            length: h,
            d: [-s, s],
            centroid: 0.5 * (self.vertices[l] + self.vertices[l + 1]),
            local_to_global: [l, l + 1],
        })
    }
}
