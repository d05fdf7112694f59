//! Model curves, relative error maps, the one-step binary decision study,
//! Hölder exponent sweeps and the boundary table comparison.

use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::{compliance_resolve_oracle, Discretization, MaterialField};
use crate::geometry::P2;
use crate::mesh::{Mesh2D, Side};
use crate::models::{eval_model, ModelContext, ModelKind, TableSet};
use crate::parallel::Execution;
use crate::tables::NodeSet;

/// Material layouts used by the studies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Scenario {
    Homogeneous(f64),
    /// `inner` within radius `r1` of `center`, `outer` beyond `r2`, linear in between.
    Radial { r1: f64, r2: f64, center: P2, inner: f64, outer: f64 },
    Custom(Vec<f64>),
}

impl Scenario {
    pub fn radial_default(lb: f64, ub: f64) -> Self {
        Scenario::Radial { r1: 0.15, r2: 0.35, center: [0.5, 0.5], inner: ub, outer: lb }
    }

    /// Samples the layout at element centroids.
    pub fn material_field(&self, mesh: &Mesh2D, lb: f64, ub: f64) -> Result<MaterialField> {
        let m = mesh.num_elements();
        let values = match self {
            Scenario::Homogeneous(v) => vec![*v; m],
            Scenario::Radial { r1, r2, center, inner, outer } => (0..m)
                .map(|l| {
                    let c = crate::geometry::centroid(&mesh.element_vertices(l));
                    let r = crate::geometry::norm(crate::geometry::sub(c, *center));
                    if r <= *r1 {
                        *inner
                    } else if r >= *r2 {
                        *outer
                    } else {
                        inner + (outer - inner) * (r - r1) / (r2 - r1)
                    }
                })
                .collect(),
            Scenario::Custom(v) => {
                if v.len() != m {
                    return Err(Error::Parameter(format!("custom field has {} values for {m} elements", v.len())));
                }
                v.clone()
            }
        };
        MaterialField::new(values, lb, ub)
    }
}

/// Evaluation grid for δĴ: the nodes plus `refine` equispaced points inside
/// every interval.
pub fn eta_grid(nodes: &NodeSet, refine: usize) -> Vec<f64> {
    let x = &nodes.nodes;
    let mut out = Vec::with_capacity(x.len() + refine * (x.len() - 1));
    for w in x.windows(2) {
        out.push(w[0]);
        for k in 1..=refine {
            out.push(w[0] + (w[1] - w[0]) * k as f64 / (refine + 1) as f64);
        }
    }
    out.push(*x.last().unwrap());
    out
}

/// Ground truth used for δĴ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    /// Full re-assembly and solve per (ℓ, η).
    Oracle,
    /// The exact rank-two update; equal to the oracle up to round-off.
    Smw,
}

fn reference_values(ctx: &ModelContext, l: usize, grid: &[f64], reference: Reference) -> Result<Vec<f64>> {
    grid.iter()
        .map(|&eta| match reference {
            Reference::Oracle => compliance_resolve_oracle(&ctx.disc, ctx.lambda(), l, eta),
            Reference::Smw => eval_model(ctx, ModelKind::Smw, l, eta),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurvePoint {
    pub eta: f64,
    pub model: f64,
    pub oracle: Option<f64>,
}

pub fn model_curve(ctx: &ModelContext, kind: ModelKind, l: usize, grid: &[f64], with_oracle: bool) -> Result<Vec<CurvePoint>> {
    let oracle = if with_oracle { Some(reference_values(ctx, l, grid, Reference::Oracle)?) } else { None };
    grid.iter()
        .enumerate()
        .map(|(i, &eta)| {
            Ok(CurvePoint { eta, model: eval_model(ctx, kind, l, eta)?, oracle: oracle.as_ref().map(|o| o[i]) })
        })
        .collect()
}

fn delta_from(ctx: &ModelContext, kind: ModelKind, l: usize, grid: &[f64], truth: &[f64]) -> Result<f64> {
    let (lo, hi) = truth.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
    let var = hi - lo;
    if var < 1e-14 * ctx.compliance().abs() {
        return Err(Error::Degenerate(format!("element {l}: compliance variation {var:e}")));
    }
    let mut worst: f64 = 0.0;
    for (&eta, &t) in grid.iter().zip(truth) {
        worst = worst.max((eval_model(ctx, kind, l, eta)? - t).abs());
    }
    Ok(worst / var)
}

/// Relative error `max_η |Ĵ - J| / (max_η J - min_η J)` for element `l`.
pub fn delta_error(ctx: &ModelContext, kind: ModelKind, l: usize, grid: &[f64], reference: Reference) -> Result<f64> {
    let truth = reference_values(ctx, l, grid, reference)?;
    delta_from(ctx, kind, l, grid, &truth)
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorMap {
    pub kind: String,
    pub elements: Vec<usize>,
    pub centroids: Vec<P2>,
    pub delta: Vec<f64>,
    pub excluded: usize,
    pub grid_size: usize,
}

impl ErrorMap {
    pub fn max(&self) -> f64 {
        self.delta.iter().copied().fold(0.0, f64::max)
    }

    pub fn argmax(&self) -> Option<usize> {
        self.delta
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| self.elements[i])
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "cx", "cy", "delta"])?;
        for ((l, c), d) in self.elements.iter().zip(&self.centroids).zip(&self.delta) {
            w.write_record([l.to_string(), c[0].to_string(), c[1].to_string(), d.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// δĴ for every listed element (interior elements when `elements` is `None`).
pub fn error_map(
    ctx: &ModelContext,
    kind: ModelKind,
    grid: &[f64],
    elements: Option<&[usize]>,
    reference: Reference,
    exec: Execution,
) -> Result<ErrorMap> {
    let mesh = ctx.mesh();
    let list: Vec<usize> = match elements {
        Some(e) => e.to_vec(),
        None => mesh.interior_elements(),
    };
    if reference == Reference::Smw || kind == ModelKind::Smw {
        ctx.prepare_exact(&list, exec)?;
    }
    let delta = exec.try_map(list.len(), |i| delta_error(ctx, kind, list[i], grid, reference))?;
    let centroids = list.iter().map(|&l| crate::geometry::centroid(&mesh.element_vertices(l))).collect();
    Ok(ErrorMap {
        kind: kind.to_string(),
        excluded: mesh.num_elements() - list.len(),
        elements: list,
        centroids,
        delta,
        grid_size: grid.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinaryDesign {
    pub values: Vec<f64>,
    pub omega: f64,
    pub lb: f64,
    pub ub: f64,
}

impl BinaryDesign {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "value"])?;
        for (l, v) in self.values.iter().enumerate() {
            w.write_record([l.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn count_upper(&self) -> usize {
        self.values.iter().filter(|&&v| v == self.ub).count()
    }
}

fn volume_term(area: f64, eta: f64, lb: f64, ub: f64, omega: f64) -> f64 {
    omega * area * (eta - lb) / (ub - lb)
}

/// Per element, the bound minimizing model value plus volume penalty.
/// Ties go to the lower bound.
pub fn binary_step(ctx: &ModelContext, kind: ModelKind, omega: f64, exec: Execution) -> Result<BinaryDesign> {
    if !(omega >= 0.0) {
        return Err(Error::Parameter(format!("omega must be non-negative, got {omega}")));
    }
    let lam = ctx.lambda();
    let (lb, ub) = (lam.lb, lam.ub);
    let m = ctx.num_elements();
    if kind == ModelKind::Smw {
        ctx.prepare_exact(&(0..m).collect::<Vec<_>>(), exec)?;
    }
    let values = exec.try_map(m, |l| {
        let area = ctx.disc.geom[l].area;
        let cost_lb = ctx.correction(kind, l, lb)? + volume_term(area, lb, lb, ub, omega);
        let cost_ub = ctx.correction(kind, l, ub)? + volume_term(area, ub, lb, ub, omega);
        Ok::<_, Error>(if cost_ub < cost_lb { ub } else { lb })
    })?;
    Ok(BinaryDesign { values, omega, lb, ub })
}

/// Number of (interior) elements where two designs differ.
pub fn decision_diff(mesh: &Mesh2D, a: &BinaryDesign, b: &BinaryDesign, interior_only: bool) -> Result<usize> {
    let m = mesh.num_elements();
    if a.values.len() != m || b.values.len() != m {
        return Err(Error::Parameter("design length does not match the mesh".into()));
    }
    Ok((0..m)
        .filter(|&l| (!interior_only || mesh.is_interior_element(l)) && a.values[l] != b.values[l])
        .count())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FlipCheck {
    pub element: usize,
    pub chosen: f64,
    pub cost_chosen: f64,
    pub cost_flipped: f64,
}

impl FlipCheck {
    pub fn holds(&self) -> bool {
        self.cost_chosen <= self.cost_flipped + 1e-10 * self.cost_chosen.abs().max(1.0)
    }
}

/// True augmented cost of the chosen and the flipped bound for sampled elements,
/// each switched alone from the expansion point.
pub fn single_flip_check(ctx: &ModelContext, design: &BinaryDesign, sample: &[usize], exec: Execution) -> Result<Vec<FlipCheck>> {
    let lam = ctx.lambda();
    exec.try_map(sample.len(), |i| {
        let l = sample[i];
        let area = ctx.disc.geom[l].area;
        let chosen = design.values[l];
        let other = if chosen == design.ub { design.lb } else { design.ub };
        let cost = |eta: f64| -> Result<f64> {
            Ok(compliance_resolve_oracle(&ctx.disc, lam, l, eta)? + volume_term(area, eta, design.lb, design.ub, design.omega))
        };
        Ok(FlipCheck { element: l, chosen, cost_chosen: cost(chosen)?, cost_flipped: cost(other)? })
    })
}

/// Maximum δĴ of the table model for each Hölder exponent.
pub fn alpha_sweep(
    disc: &Arc<Discretization>,
    lambda: &MaterialField,
    tables: &Arc<TableSet>,
    alphas: &[f64],
    grid: &[f64],
    reference: Reference,
    exec: Execution,
) -> Result<Vec<(f64, f64)>> {
    let base = ModelContext::new(disc, lambda)?.with_tables(tables.clone());
    let interior = disc.mesh.interior_elements();
    base.prepare_exact(&interior, exec)?;
    let mut out = Vec::with_capacity(alphas.len());
    let mut ctx = base;
    for &a in alphas {
        ctx = ctx.with_alpha(a);
        let map = error_map(&ctx, ModelKind::SmwApprox, grid, Some(&interior), reference, exec)?;
        out.push((a, map.max()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryComparison {
    pub side: Side,
    /// Elements touching only `side`.
    pub side_elements: usize,
    pub interior_elements: usize,
    /// Max δ over interior and side elements, interior tables everywhere.
    pub max_without: f64,
    /// Same with half-disk tables on side elements.
    pub max_with: f64,
    pub side_max_without: f64,
    pub side_max_with: f64,
    pub interior_max_without: f64,
    pub interior_max_with: f64,
}

pub fn boundary_comparison(
    disc: &Arc<Discretization>,
    lambda: &MaterialField,
    tables: &Arc<TableSet>,
    side: Side,
    grid: &[f64],
    reference: Reference,
    exec: Execution,
) -> Result<BoundaryComparison> {
    let mesh = &disc.mesh;
    for t in [crate::geometry::ElemType::One, crate::geometry::ElemType::Two] {
        if tables.boundary(t, side).is_none() {
            return Err(Error::Config(format!(
                "missing half-disk table for element type {} on side {side:?}; run precompute with boundary tables",
                t.code()
            )));
        }
    }
    let side_elems: Vec<usize> = (0..mesh.num_elements()).filter(|&l| mesh.touched_sides(l) == [side]).collect();
    let interior = mesh.interior_elements();
    let mut all = interior.clone();
    all.extend_from_slice(&side_elems);
    let without = ModelContext::new(disc, lambda)?.with_tables(tables.clone());
    without.prepare_exact(&all, exec)?;
    let with = ModelContext::new(disc, lambda)?.with_tables(tables.clone()).with_boundary_tables(true);
    with.prepare_exact(&all, exec)?;
    let split = |ctx: &ModelContext| -> Result<(f64, f64)> {
        let m_int = error_map(ctx, ModelKind::SmwApprox, grid, Some(&interior), reference, exec)?;
        let m_side = error_map(ctx, ModelKind::SmwApprox, grid, Some(&side_elems), reference, exec)?;
        Ok((m_int.max(), m_side.max()))
    };
    let (iw, sw) = split(&without)?;
    let (ib, sb) = split(&with)?;
    Ok(BoundaryComparison {
        side,
        side_elements: side_elems.len(),
        interior_elements: interior.len(),
        max_without: iw.max(sw),
        max_with: ib.max(sb),
        side_max_without: sw,
        side_max_with: sb,
        interior_max_without: iw,
        interior_max_with: ib,
    })
}

/// Writes curve points as CSV with columns eta, model, oracle.
pub fn write_curves_csv(path: &Path, curves: &[(String, Vec<CurvePoint>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "eta", "value", "oracle"])?;
    for (name, pts) in curves {
        for p in pts {
            w.write_record([
                name.clone(),
                p.eta.to_string(),
                p.model.to_string(),
                p.oracle.map(|o| o.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
