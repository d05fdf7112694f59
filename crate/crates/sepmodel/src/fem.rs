//! P1 assembly and solution of the heat equation, element Γ matrices and
//! the brute-force re-solve oracle.

use std::sync::Arc;

use nalgebra::Matrix2;

use crate::error::{check_index, Error, Result};
use crate::geometry::P2;
use crate::linalg::{norm2, rcm_ordering, CsrMatrix, SkylineCholesky};
use crate::mesh::{ElementGeometry, Mesh1D, Mesh2D, Side};
use crate::parallel::Execution;

pub type Mat2 = Matrix2<f64>;
pub type ScalarFn = Arc<dyn Fn(P2) -> f64 + Send + Sync>;

/// Per-element conductivities with their admissible bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialField {
    pub values: Vec<f64>,
    pub lb: f64,
    pub ub: f64,
}

impl MaterialField {
    pub fn new(values: Vec<f64>, lb: f64, ub: f64) -> Result<Self> {
        if !(lb > 0.0 && lb <= ub) {
            return Err(Error::Parameter(format!("bounds must satisfy 0 < lb <= ub, got [{lb}, {ub}]")));
        }
        for (l, &v) in values.iter().enumerate() {
            if !(v >= lb && v <= ub) {
                return Err(Error::Parameter(format!("conductivity {v} of element {l} outside [{lb}, {ub}]")));
            }
        }
        Ok(MaterialField { values, lb, ub })
    }

    pub fn homogeneous(m: usize, value: f64, lb: f64, ub: f64) -> Result<Self> {
        Self::new(vec![value; m], lb, ub)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Copy with component `l` replaced by `eta`.
    pub fn with_value(&self, l: usize, eta: f64) -> Result<Self> {
        check_index(l, self.len())?;
        if !(eta >= self.lb && eta <= self.ub) {
            return Err(Error::Range { value: eta, lo: self.lb, hi: self.ub });
        }
        let mut v = self.clone();
        v.values[l] = eta;
        Ok(v)
    }
}

/// Boundary conditions and volume source.
#[derive(Clone)]
pub struct BoundaryData {
    pub dirichlet: Vec<Side>,
    pub neumann: Vec<Side>,
    pub g_d: ScalarFn,
    pub g_n: ScalarFn,
    pub source: ScalarFn,
}

impl std::fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoundaryData")
            .field("dirichlet", &self.dirichlet)
            .field("neumann", &self.neumann)
            .finish_non_exhaustive()
    }
}

impl BoundaryData {
    /// Zero temperature on left and bottom, flux `x1 x2` on top and right,
    /// unit source.
    pub fn standard() -> Self {
        BoundaryData {
            dirichlet: vec![Side::Left, Side::Bottom],
            neumann: vec![Side::Top, Side::Right],
            g_d: Arc::new(|_| 0.0),
            g_n: Arc::new(|p| p[0] * p[1]),
            source: Arc::new(|_| 1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dirichlet.is_empty() {
            return Err(Error::Singular("pure Neumann problem has no unique solution".into()));
        }
        if self.dirichlet.iter().any(|s| self.neumann.contains(s)) {
            return Err(Error::Parameter("Dirichlet and Neumann sides overlap".into()));
        }
        Ok(())
    }
}

const TRI_QUAD: [([f64; 3], f64); 3] = [
    ([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
];

/// Mesh, boundary data and everything that does not depend on λ.
pub struct Discretization {
    pub mesh: Arc<Mesh2D>,
    pub geom: Vec<ElementGeometry>,
    pub bc: BoundaryData,
    pub is_dirichlet: Vec<bool>,
    /// Global vertex -> reduced (free) index.
    pub free_index: Vec<Option<usize>>,
    pub n_free: usize,
    /// Full load vector; Dirichlet rows carry g_D.
    pub load: Vec<f64>,
    pub u_dirichlet: Vec<f64>,
    ordering: Vec<usize>,
}

impl std::fmt::Debug for Discretization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Discretization")
            .field("n_ref", &self.mesh.n_ref)
            .field("n_free", &self.n_free)
            .finish_non_exhaustive()
    }
}

impl Discretization {
    pub fn new(mesh: Arc<Mesh2D>, bc: BoundaryData) -> Result<Arc<Self>> {
        bc.validate()?;
        let n = mesh.num_vertices();
        let mut is_dirichlet = vec![false; n];
        for e in &mesh.boundary_edges {
            if bc.dirichlet.contains(&e.side) {
                is_dirichlet[e.a] = true;
                is_dirichlet[e.b] = true;
            }
        }
        let mut free_index = vec![None; n];
        let mut n_free = 0;
        for v in 0..n {
            if !is_dirichlet[v] {
                free_index[v] = Some(n_free);
                n_free += 1;
            }
        }
        let geom = mesh.geometries();
        let mut load = vec![0.0; n];
        for (l, g) in geom.iter().enumerate() {
            let v = mesh.element_vertices(l);
            for (bary, w) in TRI_QUAD {
                let p = [
                    bary[0] * v[0][0] + bary[1] * v[1][0] + bary[2] * v[2][0],
                    bary[0] * v[0][1] + bary[1] * v[1][1] + bary[2] * v[2][1],
                ];
                let fp = (bc.source)(p);
                for a in 0..3 {
                    load[mesh.elements[l][a]] += g.area * w * fp * bary[a];
                }
            }
        }
        let gauss = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
        for e in &mesh.boundary_edges {
            if !bc.neumann.contains(&e.side) {
                continue;
            }
            let (pa, pb) = (mesh.vertices[e.a], mesh.vertices[e.b]);
            let len = crate::geometry::norm(crate::geometry::sub(pb, pa));
            for s in gauss {
                let p = crate::geometry::lerp(pa, pb, s);
                let g = (bc.g_n)(p) * len * 0.5;
                load[e.a] += g * (1.0 - s);
                load[e.b] += g * s;
            }
        }
        let mut u_dirichlet = vec![0.0; n];
        for v in 0..n {
            if is_dirichlet[v] {
                u_dirichlet[v] = (bc.g_d)(mesh.vertices[v]);
                load[v] = u_dirichlet[v];
            }
        }
        let mut disc = Discretization {
            mesh,
            geom,
            bc,
            is_dirichlet,
            free_index,
            n_free,
            load,
            u_dirichlet,
            ordering: Vec::new(),
        };
        let unit = MaterialField::homogeneous(disc.mesh.num_elements(), 1.0, 1.0, 1.0)?;
        let (k, _) = disc.stiffness(&unit);
        disc.ordering = rcm_ordering(&k);
        Ok(Arc::new(disc))
    }

    pub fn num_elements(&self) -> usize {
        self.mesh.num_elements()
    }

    /// Free-dof stiffness and the Dirichlet lifting contribution `K_FD u_D`.
    fn stiffness(&self, lambda: &MaterialField) -> (CsrMatrix, Vec<f64>) {
        let mut trip = Vec::with_capacity(9 * self.geom.len());
        let mut lift = vec![0.0; self.n_free];
        for (l, g) in self.geom.iter().enumerate() {
            let kl = g.local_stiffness();
            let lam = lambda.values[l];
            let e = self.mesh.elements[l];
            for a in 0..3 {
                let Some(ia) = self.free_index[e[a]] else { continue };
                for b in 0..3 {
                    match self.free_index[e[b]] {
                        Some(ib) => trip.push((ia, ib, lam * kl[a][b])),
                        None => lift[ia] += lam * kl[a][b] * self.u_dirichlet[e[b]],
                    }
                }
            }
        }
        (CsrMatrix::from_triplets(self.n_free, &trip), lift)
    }

    /// Reduced geometry factor `P B_ℓ`: (free index, D row) per free local vertex.
    pub fn reduced_b(&self, l: usize) -> Vec<(usize, [f64; 2])> {
        let e = self.mesh.elements[l];
        (0..3)
            .filter_map(|a| self.free_index[e[a]].map(|i| (i, self.geom[l].d[a])))
            .collect()
    }
}

/// Factorized free-dof system for one material field.
pub struct AssembledSystem {
    pub disc: Arc<Discretization>,
    pub lambda: MaterialField,
    pub k: CsrMatrix,
    pub rhs: Vec<f64>,
    pub factor: SkylineCholesky,
    pub diag: Vec<f64>,
}

impl std::fmt::Debug for AssembledSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AssembledSystem").field("n_free", &self.disc.n_free).finish_non_exhaustive()
    }
}

/// Assembles and factorizes `K(λ)` on an existing discretization.
pub fn assemble_on(disc: &Arc<Discretization>, lambda: &MaterialField) -> Result<AssembledSystem> {
    if lambda.len() != disc.num_elements() {
        return Err(Error::Parameter(format!(
            "material field has {} entries, mesh has {} elements",
            lambda.len(),
            disc.num_elements()
        )));
    }
    if let Some(v) = lambda.values.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Parameter(format!("non-positive conductivity {v}")));
    }
    let (k, lift) = disc.stiffness(lambda);
    let rhs: Vec<f64> = (0..disc.mesh.num_vertices())
        .filter_map(|v| disc.free_index[v].map(|i| disc.load[v] - lift[i]))
        .collect();
    let factor = SkylineCholesky::factor_with_ordering(&k, disc.ordering.clone())?;
    let diag = k.diagonal();
    Ok(AssembledSystem { disc: disc.clone(), lambda: lambda.clone(), k, rhs, factor, diag })
}

/// One-shot assembly from mesh, material field and boundary data.
pub fn assemble(mesh: Arc<Mesh2D>, lambda: &MaterialField, bc: BoundaryData) -> Result<AssembledSystem> {
    let disc = Discretization::new(mesh, bc)?;
    assemble_on(&disc, lambda)
}

#[derive(Debug, Clone)]
pub struct StateSolution {
    pub u: Vec<f64>,
    pub compliance: f64,
    /// Constant gradient of u_h per element.
    pub grad: Vec<P2>,
    pub relative_residual: f64,
}

pub fn solve_state(sys: &AssembledSystem) -> Result<StateSolution> {
    let disc = &sys.disc;
    let x = sys.factor.solve(&sys.rhs);
    let r: Vec<f64> = sys.k.mul_vec(&x).iter().zip(&sys.rhs).map(|(a, b)| a - b).collect();
    let rel = norm2(&r) / norm2(&sys.rhs).max(f64::MIN_POSITIVE);
    if rel > 1e-10 {
        return Err(Error::Singular(format!("relative residual {rel:e} exceeds 1e-10")));
    }
    let mut u = disc.u_dirichlet.clone();
    for (v, idx) in disc.free_index.iter().enumerate() {
        if let Some(i) = idx {
            u[v] = x[*i];
        }
    }
    let compliance = disc.load.iter().zip(&u).map(|(f, u)| f * u).sum();
    let grad = disc
        .geom
        .iter()
        .enumerate()
        .map(|(l, g)| {
            let e = disc.mesh.elements[l];
            g.gradient([u[e[0]], u[e[1]], u[e[2]]])
        })
        .collect();
    Ok(StateSolution { u, compliance, grad, relative_residual: rel })
}

/// `Γ = -(P B_ℓ)ᵀ K⁻¹ (P B_ℓ)` via two solves.
pub fn exact_gamma(sys: &AssembledSystem, l: usize) -> Result<Mat2> {
    check_index(l, sys.disc.num_elements())?;
    let b = sys.disc.reduced_b(l);
    let mut g = Mat2::zeros();
    let mut rhs = vec![0.0; sys.disc.n_free];
    for c in 0..2 {
        for &(i, d) in &b {
            rhs[i] = d[c];
        }
        let x = sys.factor.solve(&rhs);
        for &(i, _) in &b {
            rhs[i] = 0.0;
        }
        for r in 0..2 {
            g[(r, c)] = -b.iter().map(|&(i, d)| d[r] * x[i]).sum::<f64>();
        }
    }
    Ok(g)
}

pub fn exact_gammas(sys: &AssembledSystem, elements: &[usize], exec: Execution) -> Result<Vec<Mat2>> {
    exec.try_map(elements.len(), |k| exact_gamma(sys, elements[k]))
}

/// `Γ_diag = -(P B_ℓ)ᵀ diag(K)⁻¹ (P B_ℓ)`.
pub fn diag_gamma(sys: &AssembledSystem, l: usize) -> Result<Mat2> {
    check_index(l, sys.disc.num_elements())?;
    let mut g = Mat2::zeros();
    for (i, d) in sys.disc.reduced_b(l) {
        let kii = sys.diag[i];
        if kii == 0.0 {
            return Err(Error::Singular(format!("zero diagonal entry at free dof {i}")));
        }
        for r in 0..2 {
            for c in 0..2 {
                g[(r, c)] -= d[r] * d[c] / kii;
            }
        }
    }
    Ok(g)
}

/// `J(λ + (η - λ_ℓ) e_ℓ)` by full re-assembly and solve.
pub fn compliance_resolve_oracle(disc: &Arc<Discretization>, lambda: &MaterialField, l: usize, eta: f64) -> Result<f64> {
    let lam = lambda.with_value(l, eta)?;
    let sys = assemble_on(disc, &lam)?;
    Ok(solve_state(&sys)?.compliance)
}

/// Outcome of the 1D diagonal-model checks.
#[derive(Debug, Clone)]
pub struct Report1D {
    pub m: usize,
    pub lambda_out: f64,
    pub lambda_in: f64,
    pub elements_checked: usize,
    /// max |Γ_diag + 1/λ_out|
    pub gamma_diag_error: f64,
    /// max |Ĵ_SMWdiag - closed form with λ_out/λ_in factor|
    pub closed_form_error: f64,
    /// max |Ĵ_SMWdiag - 1D topological derivative model|
    pub td_model_error: f64,
}

impl Report1D {
    pub fn max_error(&self) -> f64 {
        self.gamma_diag_error.max(self.closed_form_error).max(self.td_model_error)
    }
}

/// 1D Poisson problem `-(λ u')' = 1`, `u(0) = u(1) = 0`, homogeneous λ_out.
pub fn solve_1d_models(m: usize, lambda_out: f64, lambda_in: f64) -> Result<Report1D> {
    if m < 4 {
        return Err(Error::Parameter("need at least 4 elements".into()));
    }
    if !(lambda_out > 0.0 && lambda_in > 0.0) {
        return Err(Error::Parameter("conductivities must be positive".into()));
    }
    let mesh = Mesh1D::build(m)?;
    let h = mesh.h();
    let nf = m - 1;
    let mut trip = Vec::new();
    let mut f = vec![0.0; nf];
    for l in 0..m {
        let g = mesh.element_geometry(l)?;
        for a in 0..2 {
            let va = g.local_to_global[a];
            if va == 0 || va == m {
                continue;
            }
            f[va - 1] += 0.5 * g.length;
            for b in 0..2 {
                let vb = g.local_to_global[b];
                if vb == 0 || vb == m {
                    continue;
                }
                trip.push((va - 1, vb - 1, lambda_out * g.d[a] * g.d[b]));
            }
        }
    }
    let k = CsrMatrix::from_triplets(nf, &trip);
    let chol = SkylineCholesky::factor(&k)?;
    let x = chol.solve(&f);
    let j: f64 = f.iter().zip(&x).map(|(a, b)| a * b).sum();
    let diag = k.diagonal();
    let u = |v: usize| if v == 0 || v == m { 0.0 } else { x[v - 1] };
    let delta = lambda_in - lambda_out;
    let mut rep = Report1D {
        m,
        lambda_out,
        lambda_in,
        elements_checked: 0,
        gamma_diag_error: 0.0,
        closed_form_error: 0.0,
        td_model_error: 0.0,
    };
    // elements whose neighbors exist and both vertices are free
    for l in 1..m - 1 {
        let g = mesh.element_geometry(l)?;
        let [a, b] = g.local_to_global;
        let gamma = -(g.d[0] * g.d[0] / diag[a - 1] + g.d[1] * g.d[1] / diag[b - 1]);
        let du = (u(b) - u(a)) / h;
        let smwdiag = j - h * delta * du * du / (1.0 - delta * gamma);
        let closed = j - h * (lambda_out / lambda_in) * delta * du * du;
        // 1D polarization of an interval inclusion: λ_out/λ_in, adjoint p = -u
        let td = j + h * delta * (lambda_out / lambda_in) * du * (-du);
        rep.gamma_diag_error = rep.gamma_diag_error.max((gamma + 1.0 / lambda_out).abs());
        rep.closed_form_error = rep.closed_form_error.max((smwdiag - closed).abs());
        rep.td_model_error = rep.td_model_error.max((smwdiag - td).abs());
        rep.elements_checked += 1;
    }
    Ok(rep)
}
