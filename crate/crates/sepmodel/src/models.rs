//! Separable single-element models of the compliance.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use crate::error::{check_index, Error, Result};
use crate::exterior::{gamma_hat, polarization_hat, ExteriorMesh, SectorMaterials};
use crate::fem::{self, assemble_on, solve_state, AssembledSystem, Discretization, Mat2, MaterialField, StateSolution};
use crate::geometry::{ElemType, P2};
use crate::mesh::{Mesh2D, Side};
use crate::parallel::Execution;
use crate::tables::GammaTable;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    /// Exact rank-two update with Γ = -Bᵀ K⁻¹ B.
    Smw,
    /// Γ from the diagonal of K.
    SmwDiag,
    /// Γ̂ interpolated from exterior-problem tables.
    SmwApprox,
    /// Topological derivative of a circular inclusion.
    TdCirc,
    Linear,
    /// Reciprocal-type model with vertical asymptote at L.
    Mma(f64),
}

impl ModelKind {
    pub const ALL_BASIC: [ModelKind; 5] =
        [ModelKind::Smw, ModelKind::SmwDiag, ModelKind::SmwApprox, ModelKind::TdCirc, ModelKind::Linear];

    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Smw => write!(f, "smw"),
            ModelKind::SmwDiag => write!(f, "smwdiag"),
            ModelKind::SmwApprox => write!(f, "smwapprox"),
            ModelKind::TdCirc => write!(f, "tdcirc"),
            ModelKind::Linear => write!(f, "linear"),
            ModelKind::Mma(l) => write!(f, "mma({l})"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        Ok(match t.as_str() {
            "smw" => ModelKind::Smw,
            "smwdiag" => ModelKind::SmwDiag,
            "smwapprox" => ModelKind::SmwApprox,
            "tdcirc" => ModelKind::TdCirc,
            "linear" => ModelKind::Linear,
            _ => {
                let inner = t
                    .strip_prefix("mma(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| t.strip_prefix("mma:"))
                    .ok_or_else(|| Error::Parameter(format!("unknown model kind '{s}'")))?;
                let l: f64 = inner
                    .parse()
                    .map_err(|_| Error::Parameter(format!("bad asymptote in '{s}'")))?;
                ModelKind::Mma(l)
            }
        })
    }
}

/// Γ̂ tables by element type, plus optional half-disk tables per side.
#[derive(Debug, Clone, Default)]
pub struct TableSet {
    interior: [Option<Arc<GammaTable>>; 2],
    boundary: Vec<(ElemType, Side, Arc<GammaTable>)>,
}

fn type_slot(t: ElemType) -> usize {
    match t {
        ElemType::One => 0,
        ElemType::Two => 1,
    }
}

impl TableSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_interior(mut self, table: GammaTable) -> Self {
        let slot = type_slot(table.elem_type);
        self.interior[slot] = Some(Arc::new(table));
        self
    }

    pub fn with_boundary(mut self, side: Side, table: GammaTable) -> Self {
        self.boundary.retain(|(t, s, _)| !(*t == table.elem_type && *s == side));
        self.boundary.push((table.elem_type, side, Arc::new(table)));
        self
    }

    pub fn interior(&self, t: ElemType) -> Option<&GammaTable> {
        self.interior[type_slot(t)].as_deref()
    }

    pub fn boundary(&self, t: ElemType, side: Side) -> Option<&GammaTable> {
        self.boundary.iter().find(|(tt, s, _)| *tt == t && *s == side).map(|(_, _, g)| g.as_ref())
    }

    pub fn has_boundary(&self) -> bool {
        !self.boundary.is_empty()
    }
}

/// Weighted Hölder mean `(Σ w v^α / Σ w)^(1/α)`; `None` if all weights vanish.
pub fn holder_mean(values: &[f64], weights: &[f64], alpha: f64) -> Option<f64> {
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) {
        return None;
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut s = 0.0;
    for (v, w) in values.iter().zip(weights) {
        if *w > 0.0 {
            lo = lo.min(*v);
            hi = hi.max(*v);
            s += w * v.powf(alpha);
        }
    }
    // rounding can push a mean of equal values past them
    Some((s / wsum).powf(1.0 / alpha).clamp(lo, hi))
}

/// Hölder averages of the neighbour conductivities in the three sectors of
/// element `l`. Empty sectors fall back to λ_ℓ.
pub fn holder_sector_averages(mesh: &Mesh2D, lambda: &MaterialField, l: usize, alpha: f64, allow_boundary: bool) -> Result<[f64; 3]> {
    if alpha == 0.0 || !alpha.is_finite() {
        return Err(Error::Parameter(format!("Hölder exponent must be finite and nonzero, got {alpha}")));
    }
    let sw = mesh.sector_weights(l, allow_boundary)?;
    let values: Vec<f64> = sw.neighbors.iter().map(|&k| lambda.values[k]).collect();
    let mut out = [0.0; 3];
    for (j, o) in out.iter_mut().enumerate() {
        let w: Vec<f64> = sw.weights.iter().map(|w| w[j]).collect();
        *o = match holder_mean(&values, &w, alpha) {
            Some(v) => v,
            None => {
                log::debug!("element {l}: sector {} is empty, using λ_ℓ", j + 1);
                lambda.values[l]
            }
        };
    }
    Ok(out)
}

/// Expansion point with cached per-element data.
pub struct ModelContext {
    pub disc: Arc<Discretization>,
    pub sys: AssembledSystem,
    pub state: StateSolution,
    pub alpha: f64,
    tables: Option<Arc<TableSet>>,
    use_boundary_tables: bool,
    exact: Vec<OnceLock<Mat2>>,
    diag: Vec<Mat2>,
    approx: Vec<OnceLock<Mat2>>,
}

impl fmt::Debug for ModelContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelContext")
            .field("compliance", &self.state.compliance)
            .field("alpha", &self.alpha)
            .field("use_boundary_tables", &self.use_boundary_tables)
            .finish_non_exhaustive()
    }
}

impl ModelContext {
    pub fn new(disc: &Arc<Discretization>, lambda: &MaterialField) -> Result<Self> {
        let sys = assemble_on(disc, lambda)?;
        let state = solve_state(&sys)?;
        let m = disc.num_elements();
        let diag = (0..m).map(|l| fem::diag_gamma(&sys, l)).collect::<Result<Vec<_>>>()?;
        Ok(ModelContext {
            disc: disc.clone(),
            sys,
            state,
            alpha: -0.5,
            tables: None,
            use_boundary_tables: false,
            exact: (0..m).map(|_| OnceLock::new()).collect(),
            diag,
            approx: (0..m).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn with_tables(mut self, tables: Arc<TableSet>) -> Self {
        self.tables = Some(tables);
        self.reset_approx();
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self.reset_approx();
        self
    }

    /// Use half-disk tables for elements touching a single side.
    pub fn with_boundary_tables(mut self, on: bool) -> Self {
        self.use_boundary_tables = on;
        self.reset_approx();
        self
    }

    fn reset_approx(&mut self) {
        self.approx = (0..self.exact.len()).map(|_| OnceLock::new()).collect();
    }

    pub fn mesh(&self) -> &Mesh2D {
        &self.disc.mesh
    }

    pub fn lambda(&self) -> &MaterialField {
        &self.sys.lambda
    }

    pub fn compliance(&self) -> f64 {
        self.state.compliance
    }

    pub fn num_elements(&self) -> usize {
        self.exact.len()
    }

    pub fn tables(&self) -> Option<&TableSet> {
        self.tables.as_deref()
    }

    pub fn exact_gamma(&self, l: usize) -> Result<Mat2> {
        check_index(l, self.num_elements())?;
        if let Some(g) = self.exact[l].get() {
            return Ok(*g);
        }
        let g = fem::exact_gamma(&self.sys, l)?;
        Ok(*self.exact[l].get_or_init(|| g))
    }

    /// Fills the exact-Γ cache for `elements`.
    pub fn prepare_exact(&self, elements: &[usize], exec: Execution) -> Result<()> {
        exec.try_map(elements.len(), |k| self.exact_gamma(elements[k]).map(|_| ()))?;
        Ok(())
    }

    pub fn diag_gamma(&self, l: usize) -> Result<Mat2> {
        check_index(l, self.num_elements())?;
        Ok(self.diag[l])
    }

    pub fn sector_averages(&self, l: usize) -> Result<[f64; 3]> {
        let mesh = self.mesh();
        holder_sector_averages(mesh, self.lambda(), l, self.alpha, !mesh.is_interior_element(l))
    }

    /// The table used for element `l` under the current boundary policy.
    pub fn table_for(&self, l: usize) -> Result<&GammaTable> {
        let tables = self
            .tables
            .as_deref()
            .ok_or_else(|| Error::Config("no Γ̂ tables loaded; run the precompute command first".into()))?;
        let mesh = self.mesh();
        let t = mesh.elem_type[l];
        if self.use_boundary_tables {
            let sides = mesh.touched_sides(l);
            if sides.len() == 1 {
                if let Some(tb) = tables.boundary(t, sides[0]) {
                    return Ok(tb);
                }
            }
        }
        tables
            .interior(t)
            .ok_or_else(|| Error::Config(format!("missing interior Γ̂ table for element type {}", t.code())))
    }

    pub fn approx_gamma(&self, l: usize) -> Result<Mat2> {
        check_index(l, self.num_elements())?;
        if let Some(g) = self.approx[l].get() {
            return Ok(*g);
        }
        let s = self.sector_averages(l)?;
        let g = self.table_for(l)?.interpolate([self.lambda().values[l], s[0], s[1], s[2]])?;
        Ok(*self.approx[l].get_or_init(|| g))
    }

    pub fn gamma(&self, kind: ModelKind, l: usize) -> Result<Option<Mat2>> {
        Ok(match kind {
            ModelKind::Smw => Some(self.exact_gamma(l)?),
            ModelKind::SmwDiag => Some(self.diag_gamma(l)?),
            ModelKind::SmwApprox => Some(self.approx_gamma(l)?),
            _ => None,
        })
    }

    /// `Ĵ_kind - J(λ)` for a change of component `l` to `eta`.
    pub fn correction(&self, kind: ModelKind, l: usize, eta: f64) -> Result<f64> {
        check_index(l, self.num_elements())?;
        let lam = self.lambda().values[l];
        let area = self.disc.geom[l].area;
        let g = self.state.grad[l];
        let gg = g[0] * g[0] + g[1] * g[1];
        let delta = eta - lam;
        if delta == 0.0 {
            return Ok(0.0);
        }
        Ok(match kind {
            ModelKind::Smw | ModelKind::SmwDiag | ModelKind::SmwApprox => {
                let gamma = self.gamma(kind, l)?.unwrap();
                -area * delta * rational_form(gamma, delta, g)?
            }
            ModelKind::TdCirc => -area * delta * (2.0 * lam / (eta + lam)) * gg,
            ModelKind::Linear => -area * delta * gg,
            ModelKind::Mma(asym) => {
                if !(asym < self.lambda().lb) {
                    return Err(Error::Parameter(format!(
                        "asymptote {asym} must lie below the lower bound {}",
                        self.lambda().lb
                    )));
                }
                -area * gg * delta * (lam - asym) / (eta - asym)
            }
        })
    }
}

/// `gᵀ (I - δ Γ)⁻¹ g`.
pub fn rational_form(gamma: Mat2, delta: f64, g: P2) -> Result<f64> {
    let m = Mat2::identity() - gamma * delta;
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if !det.is_finite() || det.abs() < 1e-300 {
        return Err(Error::Numeric(format!("singular 2x2 update matrix (det {det:e})")));
    }
    let x0 = (m[(1, 1)] * g[0] - m[(0, 1)] * g[1]) / det;
    let x1 = (-m[(1, 0)] * g[0] + m[(0, 0)] * g[1]) / det;
    Ok(g[0] * x0 + g[1] * x1)
}

/// Single-element model value `Ĵ(λ + (η - λ_ℓ) e_ℓ)`.
pub fn eval_model(ctx: &ModelContext, kind: ModelKind, l: usize, eta: f64) -> Result<f64> {
    let lam = ctx.lambda();
    if !(eta >= lam.lb && eta <= lam.ub) {
        return Err(Error::Range { value: eta, lo: lam.lb, hi: lam.ub });
    }
    Ok(ctx.compliance() + ctx.correction(kind, l, eta)?)
}

/// Full separable model `J(λ) + Σ_ℓ correction_ℓ(η_ℓ)`.
pub fn eval_model_full(ctx: &ModelContext, kind: ModelKind, eta: &MaterialField, exec: Execution) -> Result<f64> {
    if eta.len() != ctx.num_elements() {
        return Err(Error::Parameter("design length does not match the mesh".into()));
    }
    let parts = exec.try_map(eta.len(), |l| ctx.correction(kind, l, eta.values[l]))?;
    Ok(ctx.compliance() + parts.iter().sum::<f64>())
}

#[derive(Debug, Clone, Copy)]
pub struct TdNumReport {
    pub element: usize,
    pub eta: f64,
    pub sectors: [f64; 3],
    pub tdnum: f64,
    pub smwapprox: f64,
    /// Difference relative to the larger correction magnitude.
    pub relative_difference: f64,
}

/// Evaluates the polarization form `-|T| δ gᵀ (I + P̂) g` and the Γ̂ form
/// from fresh exterior solves on `ext` and compares them.
pub fn tdnum_equals_smwapprox_check(
    ctx: &ModelContext,
    ext: &ExteriorMesh,
    l: usize,
    eta: f64,
    sectors: Option<[f64; 3]>,
) -> Result<TdNumReport> {
    check_index(l, ctx.num_elements())?;
    let lam = ctx.lambda().values[l];
    let sectors = match sectors {
        Some(s) => s,
        None => ctx.sector_averages(l)?,
    };
    let area = ctx.disc.geom[l].area;
    let g = ctx.state.grad[l];
    let delta = eta - lam;
    let gam = gamma_hat(ext, &SectorMaterials::new(lam, sectors))?;
    let p = polarization_hat(ext, sectors, lam, eta)?;
    let ip = Mat2::identity() + p;
    let td_corr = -area * delta * (g[0] * (ip[(0, 0)] * g[0] + ip[(0, 1)] * g[1]) + g[1] * (ip[(1, 0)] * g[0] + ip[(1, 1)] * g[1]));
    let smw_corr = if delta == 0.0 { 0.0 } else { -area * delta * rational_form(gam, delta, g)? };
    let scale = td_corr.abs().max(smw_corr.abs());
    let rel = if scale == 0.0 { 0.0 } else { (td_corr - smw_corr).abs() / scale };
    let j = ctx.compliance();
    Ok(TdNumReport {
        element: l,
        eta,
        sectors,
        tdnum: j + td_corr,
        smwapprox: j + smw_corr,
        relative_difference: rel,
    })
}
