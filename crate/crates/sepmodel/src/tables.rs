//! Equilibrated interpolation nodes, offline Γ̂ tables and their online
//! multilinear interpolation.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, LoadError, Result};
use crate::exterior::{gamma_hat, CondensedExterior, ExteriorMesh, SectorMaterials, Variant};
use crate::fem::Mat2;
use crate::geometry::ElemType;
use crate::parallel::Execution;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    pub nodes: Vec<f64>,
    pub exponent: f64,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn lb(&self) -> f64 {
        self.nodes[0]
    }

    pub fn ub(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Maximum chord error of `x^exponent` on each interval.
    pub fn interval_errors(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| chord_error(w[0], w[1], self.exponent)).collect()
    }
}

/// Largest gap between `x^p` (p < 0) and its chord on [a, b].
pub fn chord_error(a: f64, b: f64, p: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (fa, fb) = (a.powf(p), b.powf(p));
    let s = (fb - fa) / (b - a);
    let x = (s / p).powf(1.0 / (p - 1.0));
    if !x.is_finite() {
        // slope lost to rounding on a vanishing interval
        return 0.0;
    }
    let x = x.clamp(a, b);
    (fa + s * (x - a) - x.powf(p)).max(0.0)
}

/// Nodes `lb = x_0 < … < x_{n-1} = ub` whose chord errors are all equal.
pub fn equilibrated_nodes(n: usize, lb: f64, ub: f64, exponent: f64) -> Result<NodeSet> {
    if n < 3 {
        return Err(Error::Parameter(format!("need at least 3 nodes, got {n}")));
    }
    if !(lb > 0.0 && lb < ub) {
        return Err(Error::Parameter(format!("need 0 < lb < ub, got [{lb}, {ub}]")));
    }
    if !(exponent < 0.0) {
        return Err(Error::Parameter(format!("exponent must be negative, got {exponent}")));
    }
    // next node from `a` at error level `e`, or None once past `ub`
    let step = |a: f64, e: f64| -> Option<f64> {
        if chord_error(a, ub, exponent) < e {
            return None;
        }
        let (mut lo, mut hi) = (a, ub);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if chord_error(a, mid, exponent) < e {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        Some(0.5 * (lo + hi))
    };
    // shooting: does level e reach ub within n-1 intervals?
    let shoot = |e: f64| -> (bool, Vec<f64>) {
        let mut xs = vec![lb];
        for _ in 0..n - 2 {
            match step(*xs.last().unwrap(), e) {
                Some(x) => xs.push(x),
                None => return (true, xs),
            }
        }
        let last = chord_error(*xs.last().unwrap(), ub, exponent);
        (last <= e, xs)
    };
    let mut e_hi = chord_error(lb, ub, exponent);
    let mut e_lo = e_hi * 1e-12;
    if !shoot(e_hi).0 || shoot(e_lo).0 {
        return Err(Error::Numeric("could not bracket the equal-error level".into()));
    }
    for _ in 0..400 {
        let mid = (e_lo * e_hi).sqrt();
        if shoot(mid).0 {
            e_hi = mid;
        } else {
            e_lo = mid;
        }
        if e_hi / e_lo - 1.0 < 1e-14 {
            break;
        }
    }
    if e_hi / e_lo - 1.0 > 1e-10 {
        return Err(Error::Numeric(format!("equal-error bisection stalled at [{e_lo:e}, {e_hi:e}]")));
    }
    let (_, mut xs) = shoot(e_hi);
    if xs.len() != n - 1 {
        return Err(Error::Numeric(format!("shooting produced {} nodes, expected {}", xs.len() + 1, n)));
    }
    xs.push(ub);
    Ok(NodeSet { nodes: xs, exponent })
}

/// N⁴ grid of Γ̂ matrices over (λ_hat, λ_S1, λ_S2, λ_S3).
#[derive(Debug, Clone, PartialEq)]
pub struct GammaTable {
    pub nodes: NodeSet,
    pub elem_type: ElemType,
    pub variant: Variant,
    pub r: f64,
    pub mesh_hash: u64,
    /// Row-major `[g00, g01, g10, g11]`, λ_hat slowest.
    pub entries: Vec<[f64; 4]>,
}

pub const TABLE_MAGIC: &[u8; 4] = b"GTBL";
pub const TABLE_VERSION: u32 = 1;

fn flat(idx: [usize; 4], n: usize) -> usize {
    ((idx[0] * n + idx[1]) * n + idx[2]) * n + idx[3]
}

fn unflat(mut k: usize, n: usize) -> [usize; 4] {
    let mut out = [0; 4];
    for d in (0..4).rev() {
        out[d] = k % n;
        k /= n;
    }
    out
}

fn to_mat(e: &[f64; 4]) -> Mat2 {
    Mat2::new(e[0], e[1], e[2], e[3])
}

/// How Γ̂ entries are computed during precomputation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableSolver {
    /// Full exterior solve per tuple.
    Full,
    /// Condensed interface system; identical up to round-off.
    Condensed,
}

/// Fills the table for every node tuple. `progress` receives the number of
/// finished λ_hat slices.
pub fn precompute_table(
    ext: &ExteriorMesh,
    nodes: &NodeSet,
    solver: TableSolver,
    exec: Execution,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<GammaTable> {
    let n = nodes.len();
    let condensed = match solver {
        TableSolver::Condensed => Some(CondensedExterior::new(ext)?),
        TableSolver::Full => None,
    };
    let done = std::sync::atomic::AtomicUsize::new(0);
    let total = n * n * n * n;
    let entries = exec.try_map(total, |k| {
        let idx = unflat(k, n);
        let mats = SectorMaterials::new(
            nodes.nodes[idx[0]],
            [nodes.nodes[idx[1]], nodes.nodes[idx[2]], nodes.nodes[idx[3]]],
        );
        let g = match &condensed {
            Some(c) => c.gamma_hat(&mats),
            None => gamma_hat(ext, &mats),
        }
        .map_err(|e| Error::Numeric(format!("tuple {idx:?} ({mats:?}): {e}")))?;
        if (k + 1) % (n * n * n) == 0 {
            let d = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
            progress(d, n);
        }
        Ok::<_, Error>([g[(0, 0)], g[(0, 1)], g[(1, 0)], g[(1, 1)]])
    })?;
    Ok(GammaTable {
        nodes: nodes.clone(),
        elem_type: ext.elem_type,
        variant: ext.variant,
        r: ext.r,
        mesh_hash: ext.mesh_hash(),
        entries,
    })
}

impl GammaTable {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn entry(&self, idx: [usize; 4]) -> Mat2 {
        to_mat(&self.entries[flat(idx, self.n())])
    }

    /// Fails with a hash-mismatch error if `ext` is not the mesh the table was built on.
    pub fn check_mesh(&self, ext: &ExteriorMesh) -> Result<()> {
        let h = ext.mesh_hash();
        if h != self.mesh_hash {
            return Err(LoadError::HashMismatch { found: self.mesh_hash, expected: h }.into());
        }
        Ok(())
    }

    /// Largest asymmetry and largest eigenvalue over all entries.
    pub fn health(&self) -> (f64, f64) {
        let mut asym: f64 = 0.0;
        let mut max_eig = f64::MIN;
        for e in &self.entries {
            asym = asym.max((e[1] - e[2]).abs());
            let m = to_mat(e);
            let s = (m + m.transpose()) * 0.5;
            max_eig = max_eig.max(s.symmetric_eigenvalues().max());
        }
        (asym, max_eig)
    }

    /// Multilinear interpolation in (λ_hat, λ_S1, λ_S2, λ_S3).
    pub fn interpolate(&self, q: [f64; 4]) -> Result<Mat2> {
        let xs = &self.nodes.nodes;
        let n = xs.len();
        let (lo, hi) = (xs[0], xs[n - 1]);
        let mut base = [0usize; 4];
        let mut t = [0.0; 4];
        for d in 0..4 {
            let v = q[d];
            if !(v >= lo && v <= hi) {
                return Err(Error::Range { value: v, lo, hi });
            }
            let k = xs.partition_point(|&x| x <= v).clamp(1, n - 1) - 1;
            base[d] = k;
            t[d] = (v - xs[k]) / (xs[k + 1] - xs[k]);
        }
        let mut acc = [0.0; 4];
        for corner in 0..16usize {
            let mut w = 1.0;
            let mut idx = base;
            for d in 0..4 {
                if corner >> d & 1 == 1 {
                    w *= t[d];
                    idx[d] += 1;
                } else {
                    w *= 1.0 - t[d];
                }
            }
            if w == 0.0 {
                continue;
            }
            let e = &self.entries[flat(idx, n)];
            for c in 0..4 {
                acc[c] += w * e[c];
            }
        }
        Ok(to_mat(&acc))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(64 + 8 * self.n() + 32 * self.entries.len());
        buf.extend_from_slice(TABLE_MAGIC);
        buf.extend_from_slice(&TABLE_VERSION.to_le_bytes());
        let code = self.elem_type.code() * 1000 + self.variant.code();
        buf.extend_from_slice(&code.to_le_bytes());
        buf.extend_from_slice(&(self.n() as u32).to_le_bytes());
        buf.extend_from_slice(&self.r.to_le_bytes());
        buf.extend_from_slice(&self.nodes.exponent.to_le_bytes());
        for x in &self.nodes.nodes {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf.extend_from_slice(&self.mesh_hash.to_le_bytes());
        for e in &self.entries {
            for v in e {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Ok(Self::from_bytes(&bytes)?)
    }

    /// Loads and checks the mesh hash against `ext`.
    pub fn load_for(path: &Path, ext: &ExteriorMesh) -> Result<Self> {
        let t = Self::load(path)?;
        t.check_mesh(ext)?;
        Ok(t)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, LoadError> {
        let mut cur = Cursor { b: bytes, pos: 0 };
        if cur.take(4).map_err(|_| LoadError::BadMagic)? != TABLE_MAGIC {
            return Err(LoadError::BadMagic);
        }
        let version = cur.u32()?;
        if version != TABLE_VERSION {
            return Err(LoadError::Version { found: version, expected: TABLE_VERSION });
        }
        let code = cur.u32()?;
        let elem_type = ElemType::from_code(code / 1000)
            .ok_or_else(|| LoadError::Header(format!("bad element type in code {code}")))?;
        let variant = Variant::from_code(code % 1000)
            .ok_or_else(|| LoadError::Header(format!("bad variant in code {code}")))?;
        let n = cur.u32()? as usize;
        if !(2..=256).contains(&n) {
            return Err(LoadError::Header(format!("implausible node count {n}")));
        }
        let r = cur.f64()?;
        let exponent = cur.f64()?;
        let nodes = (0..n).map(|_| cur.f64()).collect::<std::result::Result<Vec<_>, _>>()?;
        if nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(LoadError::Header("nodes not strictly increasing".into()));
        }
        let mesh_hash = cur.u64()?;
        let total = n * n * n * n;
        let mut entries = Vec::with_capacity(total);
        for _ in 0..total {
            entries.push([cur.f64()?, cur.f64()?, cur.f64()?, cur.f64()?]);
        }
        if cur.pos != bytes.len() {
            return Err(LoadError::Header(format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        Ok(GammaTable { nodes: NodeSet { nodes, exponent }, elem_type, variant, r, mesh_hash, entries })
    }
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, k: usize) -> std::result::Result<&[u8], LoadError> {
        if self.pos + k > self.b.len() {
            return Err(LoadError::Truncated);
        }
        let s = &self.b[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, LoadError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, LoadError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, LoadError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
