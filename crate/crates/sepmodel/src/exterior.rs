//! Truncated exterior problems around a single reference triangle.
//!
//! The disk (or half-disk) is split into the reference triangle and up to
//! three sector patches. Each patch is bounded by a triangle edge, two
//! straight spokes and an arc of the rim, and is meshed by stacking layers
//! between the edge and the arc and zipping neighbouring layers together.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fem::Mat2;
use crate::geometry::{self as geo, ElemType, P2};
use crate::linalg::{rcm_ordering, CsrMatrix, SkylineCholesky};
use crate::mesh::{triangle_geometry, ElementGeometry, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeBc {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Interior,
    /// Half-disk whose straight edge touches the triangle on the given side.
    Boundary { side: Side, bc: EdgeBc },
}

impl Variant {
    pub fn code(self) -> u32 {
        match self {
            Variant::Interior => 0,
            Variant::Boundary { side, bc } => {
                10 * (side.index() as u32 + 1)
                    + match bc {
                        EdgeBc::Dirichlet => 1,
                        EdgeBc::Neumann => 2,
                    }
            }
        }
    }

    pub fn from_code(c: u32) -> Option<Self> {
        if c == 0 {
            return Some(Variant::Interior);
        }
        let side = *Side::ALL.get((c / 10).checked_sub(1)? as usize)?;
        let bc = match c % 10 {
            1 => EdgeBc::Dirichlet,
            2 => EdgeBc::Neumann,
            _ => return None,
        };
        Some(Variant::Boundary { side, bc })
    }
}

/// Element region tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Hat,
    Sector(usize),
}

impl Region {
    pub fn group(self) -> usize {
        match self {
            Region::Hat => 0,
            Region::Sector(j) => j + 1,
        }
    }
}

/// Mesh size control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grading {
    /// Target edge length next to the reference triangle.
    pub h_inner: f64,
    /// Minimum number of segments on the full rim circle.
    pub rim_segments: usize,
}

impl Default for Grading {
    fn default() -> Self {
        Grading { h_inner: 1.1, rim_segments: 160 }
    }
}

/// Conductivities inside the reference triangle and in the three sectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorMaterials {
    pub hat: f64,
    pub sectors: [f64; 3],
}

impl SectorMaterials {
    pub fn homogeneous(l: f64) -> Self {
        SectorMaterials { hat: l, sectors: [l; 3] }
    }

    pub fn new(hat: f64, sectors: [f64; 3]) -> Self {
        SectorMaterials { hat, sectors }
    }

    fn group_values(&self) -> [f64; 4] {
        [self.hat, self.sectors[0], self.sectors[1], self.sectors[2]]
    }

    fn validate(&self) -> Result<()> {
        if self.group_values().iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Parameter(format!("conductivities must be positive: {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExteriorMesh {
    pub r: f64,
    pub elem_type: ElemType,
    pub variant: Variant,
    pub grading: Grading,
    pub vertices: Vec<P2>,
    pub elements: Vec<[usize; 3]>,
    pub region: Vec<Region>,
    pub hat_element: usize,
    pub is_dirichlet: Vec<bool>,
    /// Radial layer index per vertex (0 on the reference triangle).
    pub layer: Vec<usize>,
    pub num_layers: usize,
    /// Which sector patches exist.
    pub sector_present: [bool; 3],
    /// Area of the meshed polygon computed from its patch outlines.
    pub outline_area: f64,
    pub free_index: Vec<Option<usize>>,
    pub n_free: usize,
    geom: Vec<ElementGeometry>,
    ordering: Vec<usize>,
}

struct Spoke {
    ids: Vec<usize>,
    end: P2,
}

struct VertexBuilder {
    vertices: Vec<P2>,
    layer: Vec<usize>,
    dirichlet: Vec<bool>,
}

impl VertexBuilder {
    fn push(&mut self, p: P2, layer: usize, dirichlet: bool) -> usize {
        self.vertices.push(p);
        self.layer.push(layer);
        self.dirichlet.push(dirichlet);
        self.vertices.len() - 1
    }
}

impl ExteriorMesh {
    pub fn build(r: f64, elem_type: ElemType, variant: Variant) -> Result<Self> {
        Self::build_graded(r, elem_type, variant, Grading::default())
    }

    pub fn build_graded(r: f64, elem_type: ElemType, variant: Variant, grading: Grading) -> Result<Self> {
        if !(r >= 10.0) {
            return Err(Error::Parameter(format!("truncation radius must be >= 10, got {r}")));
        }
        if !(grading.h_inner > 0.0) || grading.rim_segments < 16 {
            return Err(Error::Parameter(format!("invalid grading {grading:?}")));
        }
        let tri = geo::reference_vertices(elem_type);
        let inc = geo::incenter(&tri);
        let line = match variant {
            Variant::Interior => None,
            Variant::Boundary { side, .. } => {
                let n = side.normal();
                let c = tri.iter().map(|&v| geo::dot(n, v)).fold(f64::MIN, f64::max);
                Some((n, c))
            }
        };
        let on_line = |k: usize| line.is_some_and(|(n, c)| (geo::dot(n, tri[k]) - c).abs() < 1e-12);
        let circle_hit = |p: P2, d: P2| -> P2 {
            let b = geo::dot(p, d);
            let t = -b + (b * b - geo::dot(p, p) + r * r).sqrt();
            geo::add(p, geo::scale(d, t))
        };

        // patch j: edge (tri[j+1], tri[j+2]) and spoke directions at both ends
        let mut patches: Vec<(usize, [usize; 2], [P2; 2])> = Vec::new();
        let mut sector_present = [false; 3];
        for j in 0..3 {
            let (ka, kb) = ((j + 1) % 3, (j + 2) % 3);
            if on_line(ka) && on_line(kb) {
                continue;
            }
            let e = geo::sub(tri[kb], tri[ka]);
            let right = [e[1], -e[0]];
            let mut dirs = [[0.0; 2]; 2];
            for (s, &k) in [ka, kb].iter().enumerate() {
                dirs[s] = if on_line(k) {
                    let (n, _) = line.unwrap();
                    let t = [-n[1], n[0]];
                    if geo::dot(t, right) > 0.0 {
                        t
                    } else {
                        geo::scale(t, -1.0)
                    }
                } else {
                    let d = geo::sub(tri[k], inc);
                    let d = geo::scale(d, 1.0 / geo::norm(d));
                    if let Some((n, _)) = line {
                        if geo::dot(n, d) > 1e-12 {
                            return Err(Error::Construction(format!(
                                "bisector ray from vertex {k} leaves the half-disk"
                            )));
                        }
                    }
                    d
                };
            }
            sector_present[j] = true;
            patches.push((j, [ka, kb], dirs));
        }

        // shared radial layer fractions
        let spoke_len: Vec<f64> = patches
            .iter()
            .flat_map(|(_, ks, ds)| (0..2).map(move |s| (ks[s], ds[s])))
            .map(|(k, d)| geo::norm(geo::sub(circle_hit(tri[k], d), tri[k])))
            .collect();
        let mean_len = spoke_len.iter().sum::<f64>() / spoke_len.len() as f64;
        let h_rim = 2.0 * std::f64::consts::PI * r / grading.rim_segments as f64;
        let h_at = |d: f64| grading.h_inner + (h_rim - grading.h_inner) * (d / mean_len).clamp(0.0, 1.0);
        let mut dist = vec![0.0];
        while *dist.last().unwrap() < mean_len {
            let d = *dist.last().unwrap();
            dist.push(d + h_at(d));
        }
        // drop a sliver last layer
        let nl = dist.len();
        if nl > 2 && mean_len - dist[nl - 2] < 0.5 * h_at(dist[nl - 2]) {
            dist.remove(nl - 2);
        }
        let total = *dist.last().unwrap();
        let g: Vec<f64> = dist.iter().map(|d| d / total).collect();
        let g_last = g.len() - 1;
        let layer_h: Vec<f64> = g.iter().map(|&gk| h_at(gk * mean_len)).collect();

        let line_dirichlet = matches!(variant, Variant::Boundary { bc: EdgeBc::Dirichlet, .. });
        let mut vb = VertexBuilder {
            vertices: tri.to_vec(),
            layer: vec![0; 3],
            dirichlet: (0..3).map(|k| line_dirichlet && on_line(k)).collect(),
        };

        // spokes keyed by (vertex, direction) so ray spokes are shared
        let mut spokes: Vec<(usize, P2, Spoke)> = Vec::new();
        let mut spoke_of = |k: usize, d: P2, vb: &mut VertexBuilder| -> (Vec<usize>, P2) {
            if let Some((_, _, s)) = spokes.iter().find(|(kk, dd, _)| *kk == k && geo::norm(geo::sub(*dd, d)) < 1e-12) {
                return (s.ids.clone(), s.end);
            }
            let end = circle_hit(tri[k], d);
            let along_line = on_line(k);
            let mut ids = vec![k];
            for (lay, &gk) in g.iter().enumerate().skip(1) {
                let p = if lay == g_last { end } else { geo::lerp(tri[k], end, gk) };
                ids.push(vb.push(p, lay, lay == g_last || (along_line && line_dirichlet)));
            }
            spokes.push((k, d, Spoke { ids: ids.clone(), end }));
            (ids, end)
        };

        let mut elements: Vec<[usize; 3]> = vec![[0, 1, 2]];
        let mut region = vec![Region::Hat];
        let mut outline_area = geo::polygon_area(&tri);

        for (j, ks, ds) in &patches {
            let (ids_a, ea) = spoke_of(ks[0], ds[0], &mut vb);
            let (ids_b, eb) = spoke_of(ks[1], ds[1], &mut vb);
            let (pa, pb) = (tri[ks[0]], tri[ks[1]]);
            let th_a = ea[1].atan2(ea[0]);
            let mut dth = eb[1].atan2(eb[0]) - th_a;
            while dth <= 0.0 {
                dth += 2.0 * std::f64::consts::PI;
            }
            let curve = |gk: f64, s: f64| -> P2 {
                let inner = geo::lerp(pa, pb, s);
                let th = th_a + s * dth;
                let outer = [r * th.cos(), r * th.sin()];
                geo::lerp(inner, outer, gk)
            };
            // per-layer vertex ids and parameters
            let mut rows: Vec<(Vec<usize>, Vec<f64>)> = Vec::with_capacity(g.len());
            for (lay, &gk) in g.iter().enumerate() {
                let n_seg = if lay == 0 {
                    1
                } else {
                    let samples = 64;
                    let len: f64 = (0..samples)
                        .map(|i| {
                            let s0 = i as f64 / samples as f64;
                            let s1 = (i + 1) as f64 / samples as f64;
                            geo::norm(geo::sub(curve(gk, s1), curve(gk, s0)))
                        })
                        .sum();
                    let target = if lay == g_last { h_rim } else { layer_h[lay] };
                    let n = len / target;
                    (if lay == g_last { n.ceil() } else { n.round() } as usize).max(1)
                };
                let mut ids = vec![ids_a[lay]];
                let mut params = vec![0.0];
                for i in 1..n_seg {
                    let s = i as f64 / n_seg as f64;
                    let p = if lay == g_last {
                        let th = th_a + s * dth;
                        [r * th.cos(), r * th.sin()]
                    } else {
                        curve(gk, s)
                    };
                    ids.push(vb.push(p, lay, lay == g_last));
                    params.push(s);
                }
                ids.push(ids_b[lay]);
                params.push(1.0);
                rows.push((ids, params));
            }
            for lay in 0..g_last {
                let (a, _) = &rows[lay];
                let (b, _) = &rows[lay + 1];
                zip_layers(a, b, &vb.vertices, &mut elements).map_err(|e| {
                    Error::Construction(format!("sector {} layer {lay}: {e}", j + 1))
                })?;
            }
            region.resize(elements.len(), Region::Sector(*j));
            // patch outline: edge, spoke b outward, rim back, spoke a inward
            let mut outline: Vec<P2> = Vec::new();
            outline.extend(ids_a.iter().map(|&i| vb.vertices[i]));
            outline.extend(rows[g_last].0[1..rows[g_last].0.len() - 1].iter().map(|&i| vb.vertices[i]));
            outline.extend(ids_b.iter().rev().map(|&i| vb.vertices[i]));
            outline_area += geo::polygon_area(&outline);
        }

        let VertexBuilder { vertices, layer, dirichlet } = vb;
        let n = vertices.len();
        let mut free_index = vec![None; n];
        let mut n_free = 0;
        for v in 0..n {
            if !dirichlet[v] {
                free_index[v] = Some(n_free);
                n_free += 1;
            }
        }
        let geom: Vec<ElementGeometry> = elements
            .iter()
            .map(|e| {
                let mut gm = triangle_geometry([vertices[e[0]], vertices[e[1]], vertices[e[2]]]);
                gm.local_to_global = *e;
                gm
            })
            .collect();
        if let Some((l, gm)) = geom.iter().enumerate().find(|(_, gm)| !(gm.area > 0.0)) {
            return Err(Error::Construction(format!("element {l} has non-positive area {}", gm.area)));
        }
        let mut mesh = ExteriorMesh {
            r,
            elem_type,
            variant,
            grading,
            vertices,
            elements,
            region,
            hat_element: 0,
            is_dirichlet: dirichlet,
            layer,
            num_layers: g.len(),
            sector_present,
            outline_area,
            free_index,
            n_free,
            geom,
            ordering: Vec::new(),
        };
        let (k, _) = mesh.stiffness(&SectorMaterials::homogeneous(1.0));
        mesh.ordering = rcm_ordering(&k);
        Ok(mesh)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn element_geometry(&self, l: usize) -> &ElementGeometry {
        &self.geom[l]
    }

    pub fn hat_geometry(&self) -> &ElementGeometry {
        &self.geom[self.hat_element]
    }

    pub fn total_area(&self) -> f64 {
        self.geom.iter().map(|g| g.area).sum()
    }

    pub fn region_area(&self, reg: Region) -> f64 {
        self.geom.iter().zip(&self.region).filter(|(_, r)| **r == reg).map(|(g, _)| g.area).sum()
    }

    /// 64-bit digest of radius, variant and the full mesh.
    pub fn mesh_hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.r.to_le_bytes());
        h.update(self.elem_type.code().to_le_bytes());
        h.update(self.variant.code().to_le_bytes());
        for v in &self.vertices {
            h.update(v[0].to_le_bytes());
            h.update(v[1].to_le_bytes());
        }
        for (e, reg) in self.elements.iter().zip(&self.region) {
            for &i in e {
                h.update((i as u64).to_le_bytes());
            }
            h.update((reg.group() as u32).to_le_bytes());
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }

    fn stiffness(&self, mats: &SectorMaterials) -> (CsrMatrix, Vec<f64>) {
        let vals = mats.group_values();
        let mut trip = Vec::with_capacity(9 * self.geom.len());
        for (l, gm) in self.geom.iter().enumerate() {
            let lam = vals[self.region[l].group()];
            let kl = gm.local_stiffness();
            let e = self.elements[l];
            for a in 0..3 {
                let Some(ia) = self.free_index[e[a]] else { continue };
                for b in 0..3 {
                    if let Some(ib) = self.free_index[e[b]] {
                        trip.push((ia, ib, lam * kl[a][b]));
                    }
                }
            }
        }
        let k = CsrMatrix::from_triplets(self.n_free, &trip);
        let d = k.diagonal();
        (k, d)
    }

    fn factor(&self, mats: &SectorMaterials) -> Result<(CsrMatrix, SkylineCholesky)> {
        mats.validate()?;
        let (k, _) = self.stiffness(mats);
        let f = SkylineCholesky::factor_with_ordering(&k, self.ordering.clone())?;
        Ok((k, f))
    }

    /// Load `-scale * ∫_T̂ ζ·∇ψ` on the free dofs.
    fn hat_load(&self, zeta: P2, scale: f64) -> Vec<f64> {
        let gm = self.hat_geometry();
        let s = gm.area.sqrt();
        let mut b = vec![0.0; self.n_free];
        for a in 0..3 {
            if let Some(i) = self.free_index[self.elements[self.hat_element][a]] {
                b[i] = -scale * s * (gm.d[a][0] * zeta[0] + gm.d[a][1] * zeta[1]);
            }
        }
        b
    }

    fn expand(&self, x: &[f64]) -> Vec<f64> {
        self.free_index.iter().map(|i| i.map_or(0.0, |i| x[i])).collect()
    }

    /// Gradient of a nodal field on the reference triangle.
    pub fn hat_gradient(&self, w: &[f64]) -> P2 {
        let e = self.elements[self.hat_element];
        self.hat_geometry().gradient([w[e[0]], w[e[1]], w[e[2]]])
    }

    /// Writes vertices and tagged elements as two CSV files.
    pub fn write_csv(&self, vertex_path: &Path, element_path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(vertex_path)?);
        writeln!(f, "id,x,y,layer,dirichlet")?;
        for (i, v) in self.vertices.iter().enumerate() {
            writeln!(f, "{i},{},{},{},{}", v[0], v[1], self.layer[i], self.is_dirichlet[i] as u8)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(element_path)?);
        writeln!(f, "id,v0,v1,v2,region")?;
        for (l, e) in self.elements.iter().enumerate() {
            let tag = match self.region[l] {
                Region::Hat => "hat".to_string(),
                Region::Sector(j) => format!("S{}", j + 1),
            };
            writeln!(f, "{l},{},{},{},{tag}", e[0], e[1], e[2])?;
        }
        Ok(())
    }
}

/// Triangulates the strip between two vertex rows running in the same
/// direction, `inner` on the left of `outer`.
fn zip_layers(inner: &[usize], outer: &[usize], v: &[P2], out: &mut Vec<[usize; 3]>) -> std::result::Result<(), String> {
    let (na, nb) = (inner.len() - 1, outer.len() - 1);
    let (mut i, mut j) = (0, 0);
    while i < na || j < nb {
        let tri_a = || [inner[i], outer[j], inner[i + 1]];
        let tri_b = || [inner[i], outer[j], outer[j + 1]];
        let ok = |t: [usize; 3]| geo::orient(v[t[0]], v[t[1]], v[t[2]]) > 0.0;
        let advance_a = if i == na {
            false
        } else if j == nb {
            true
        } else {
            let da = geo::norm(geo::sub(v[inner[i + 1]], v[outer[j]]));
            let db = geo::norm(geo::sub(v[inner[i]], v[outer[j + 1]]));
            let prefer_a = da <= db;
            if prefer_a && ok(tri_a()) {
                true
            } else if !prefer_a && ok(tri_b()) {
                false
            } else {
                prefer_a && !ok(tri_b()) || !prefer_a && ok(tri_a())
            }
        };
        let t = if advance_a { tri_a() } else { tri_b() };
        if !ok(t) {
            return Err(format!("inverted triangle {t:?}"));
        }
        out.push(t);
        if advance_a {
            i += 1;
        } else {
            j += 1;
        }
    }
    Ok(())
}

/// Solves the W problem for direction `k` (0 or 1). Returns the nodal field.
pub fn solve_w(ext: &ExteriorMesh, mats: &SectorMaterials, k: usize) -> Result<Vec<f64>> {
    let zeta = unit(k)?;
    let (kmat, f) = ext.factor(mats)?;
    let b = ext.hat_load(zeta, 1.0);
    let x = f.solve(&b);
    check_residual(&kmat, &x, &b)?;
    Ok(ext.expand(&x))
}

/// Corrector for an inclusion of conductivity `lambda_in` in a background
/// with sector conductivities `sectors`, driven by the far-field gradient
/// `zeta` and the contrast `lambda_in - lambda_out`.
pub fn solve_corrector_k(
    ext: &ExteriorMesh,
    sectors: [f64; 3],
    lambda_out: f64,
    lambda_in: f64,
    zeta: P2,
) -> Result<Vec<f64>> {
    let mats = SectorMaterials::new(lambda_in, sectors);
    let (kmat, f) = ext.factor(&mats)?;
    let b = ext.hat_load(zeta, lambda_in - lambda_out);
    let x = f.solve(&b);
    check_residual(&kmat, &x, &b)?;
    Ok(ext.expand(&x))
}

fn check_residual(k: &CsrMatrix, x: &[f64], b: &[f64]) -> Result<()> {
    let nb = crate::linalg::norm2(b);
    if nb == 0.0 {
        return Ok(());
    }
    let r: Vec<f64> = k.mul_vec(x).iter().zip(b).map(|(a, c)| a - c).collect();
    let rel = crate::linalg::norm2(&r) / nb;
    if rel > 1e-10 {
        return Err(Error::Singular(format!("exterior residual {rel:e}")));
    }
    Ok(())
}

fn unit(k: usize) -> Result<P2> {
    match k {
        0 => Ok([1.0, 0.0]),
        1 => Ok([0.0, 1.0]),
        _ => Err(Error::Parameter(format!("direction must be 0 or 1, got {k}"))),
    }
}

/// Γ̂ by two full solves; column k is the gradient of W_k on the triangle.
pub fn gamma_hat(ext: &ExteriorMesh, mats: &SectorMaterials) -> Result<Mat2> {
    let (_, f) = ext.factor(mats)?;
    let mut g = Mat2::zeros();
    for k in 0..2 {
        let x = f.solve(&ext.hat_load(unit(k)?, 1.0));
        let gr = ext.hat_gradient(&ext.expand(&x));
        g[(0, k)] = gr[0];
        g[(1, k)] = gr[1];
    }
    Ok(g)
}

/// Weak polarization matrix P̂; column k is the corrector gradient on the
/// triangle for far-field direction e_k.
pub fn polarization_hat(ext: &ExteriorMesh, sectors: [f64; 3], lambda_out: f64, lambda_in: f64) -> Result<Mat2> {
    let mats = SectorMaterials::new(lambda_in, sectors);
    let (_, f) = ext.factor(&mats)?;
    let mut p = Mat2::zeros();
    for k in 0..2 {
        let x = f.solve(&ext.hat_load(unit(k)?, lambda_in - lambda_out));
        let gr = ext.hat_gradient(&ext.expand(&x));
        p[(0, k)] = gr[0];
        p[(1, k)] = gr[1];
    }
    Ok(p)
}

/// Static condensation of the exterior operator onto the dofs shared by
/// several material regions. Each region's unit-conductivity Schur
/// complement is computed once, so Γ̂ for a new material tuple only needs a
/// small dense solve.
#[derive(Debug, Clone)]
pub struct CondensedExterior {
    /// Free-dof index per interface position.
    pub interface: Vec<usize>,
    hat_rows: Vec<(usize, [f64; 2])>,
    schur: [DMatrix<f64>; 4],
    present: [bool; 4],
}

impl CondensedExterior {
    pub fn new(ext: &ExteriorMesh) -> Result<Self> {
        let nf = ext.n_free;
        let mut mask = vec![0u8; nf];
        for (l, e) in ext.elements.iter().enumerate() {
            let bit = 1u8 << ext.region[l].group();
            for &v in e {
                if let Some(i) = ext.free_index[v] {
                    mask[i] |= bit;
                }
            }
        }
        let interface: Vec<usize> = (0..nf).filter(|&i| mask[i].count_ones() >= 2).collect();
        let mut pos = vec![usize::MAX; nf];
        for (p, &i) in interface.iter().enumerate() {
            pos[i] = p;
        }
        let ni = interface.len();
        let mut schur: [DMatrix<f64>; 4] = std::array::from_fn(|_| DMatrix::zeros(ni, ni));
        let mut present = [false; 4];
        for grp in 0..4 {
            let bit = 1u8 << grp;
            let mut trip = Vec::new();
            for (l, e) in ext.elements.iter().enumerate() {
                if ext.region[l].group() != grp {
                    continue;
                }
                present[grp] = true;
                let kl = ext.geom[l].local_stiffness();
                for a in 0..3 {
                    let Some(ia) = ext.free_index[e[a]] else { continue };
                    for b in 0..3 {
                        if let Some(ib) = ext.free_index[e[b]] {
                            trip.push((ia, ib, kl[a][b]));
                        }
                    }
                }
            }
            if !present[grp] {
                continue;
            }
            let a = CsrMatrix::from_triplets(nf, &trip);
            // interior dofs of this region
            let inner: Vec<usize> = (0..nf).filter(|&i| mask[i] == bit).collect();
            let mut ipos = vec![usize::MAX; nf];
            for (p, &i) in inner.iter().enumerate() {
                ipos[i] = p;
            }
            let touches: Vec<usize> = interface.iter().copied().filter(|&i| mask[i] & bit != 0).collect();
            let s = &mut schur[grp];
            for &c in &touches {
                for &r in &touches {
                    s[(pos[r], pos[c])] = a.get(r, c);
                }
            }
            if inner.is_empty() {
                continue;
            }
            let itrip: Vec<(usize, usize, f64)> = inner
                .iter()
                .flat_map(|&i| {
                    let ipos = &ipos;
                    a.row(i).filter(move |(j, _)| ipos[*j] != usize::MAX).map(move |(j, v)| (ipos[i], ipos[j], v))
                })
                .collect();
            let aii = CsrMatrix::from_triplets(inner.len(), &itrip);
            let chol = SkylineCholesky::factor(&aii)?;
            for &c in &touches {
                let rhs: Vec<f64> = inner.iter().map(|&i| a.get(i, c)).collect();
                if rhs.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let x = chol.solve(&rhs);
                for &r in &touches {
                    let corr: f64 = a
                        .row(r)
                        .filter(|(j, _)| ipos[*j] != usize::MAX)
                        .map(|(j, v)| v * x[ipos[j]])
                        .sum();
                    s[(pos[r], pos[c])] -= corr;
                }
            }
        }
        let hat = ext.hat_geometry();
        let hat_rows = (0..3)
            .filter_map(|a| {
                ext.free_index[ext.elements[ext.hat_element][a]].map(|i| (pos[i], hat.d[a]))
            })
            .collect::<Vec<_>>();
        if hat_rows.iter().any(|(p, _)| *p == usize::MAX) {
            return Err(Error::Construction("reference triangle vertex is not an interface dof".into()));
        }
        Ok(CondensedExterior { interface, hat_rows, schur, present })
    }

    pub fn interface_size(&self) -> usize {
        self.interface.len()
    }

    /// Γ̂ from the condensed system.
    pub fn gamma_hat(&self, mats: &SectorMaterials) -> Result<Mat2> {
        mats.validate()?;
        let vals = mats.group_values();
        let ni = self.interface.len();
        let mut m = DMatrix::<f64>::zeros(ni, ni);
        for g in 0..4 {
            if self.present[g] {
                m += &self.schur[g] * vals[g];
            }
        }
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::Singular("condensed exterior matrix not positive definite".into()))?;
        let mut out = Mat2::zeros();
        for c in 0..2 {
            let mut b = DVector::<f64>::zeros(ni);
            for &(p, d) in &self.hat_rows {
                b[p] = d[c];
            }
            let x = chol.solve(&b);
            for r in 0..2 {
                out[(r, c)] = -self.hat_rows.iter().map(|&(p, d)| d[r] * x[p]).sum::<f64>();
            }
        }
        Ok(out)
    }
}
