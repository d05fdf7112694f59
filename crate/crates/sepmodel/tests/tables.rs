use std::sync::OnceLock;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use sepmodel::exterior::{gamma_hat, CondensedExterior, EdgeBc, ExteriorMesh, SectorMaterials, Variant};
use sepmodel::fem::Mat2;
use sepmodel::geometry::ElemType;
use sepmodel::mesh::Side;
use sepmodel::tables::*;
use sepmodel::{Error, Execution, LoadError};

const REFERENCE: [f64; 16] = [
    1.0, 1.252, 1.590, 2.050, 2.688, 3.596, 4.921, 6.917, 10.035, 15.127, 23.901, 40.072, 72.563, 145.834, 340.187, 1000.0,
];

fn max_abs(m: Mat2) -> f64 {
    m.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn small_ext() -> &'static ExteriorMesh {
    static E: OnceLock<ExteriorMesh> = OnceLock::new();
    E.get_or_init(|| ExteriorMesh::build(12.0, ElemType::One, Variant::Interior).unwrap())
}

fn toy_table() -> &'static GammaTable {
    static T: OnceLock<GammaTable> = OnceLock::new();
    T.get_or_init(|| {
        let nodes = equilibrated_nodes(4, 1.0, 1000.0, -0.5).unwrap();
        precompute_table(small_ext(), &nodes, TableSolver::Full, Execution::Parallel, &|_, _| {}).unwrap()
    })
}

fn full_ext() -> &'static ExteriorMesh {
    static E: OnceLock<ExteriorMesh> = OnceLock::new();
    E.get_or_init(|| ExteriorMesh::build(30.0, ElemType::One, Variant::Interior).unwrap())
}

fn full_table(n: usize) -> GammaTable {
    let nodes = equilibrated_nodes(n, 1.0, 1000.0, -0.5).unwrap();
    precompute_table(full_ext(), &nodes, TableSolver::Condensed, Execution::Parallel, &|_, _| {}).unwrap()
}

fn tmp(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("sepmodel-tables-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn sixteen_nodes_reproduce_reference_values() {
    let ns = equilibrated_nodes(16, 1.0, 1000.0, -0.5).unwrap();
    assert_eq!(ns.len(), 16);
    for (got, want) in ns.nodes.iter().zip(REFERENCE) {
        let ok = if want < 10.0 { (got - want).abs() <= 0.002 } else { (got - want).abs() <= 1e-3 * want };
        assert!(ok, "{got} vs {want}");
    }
    assert_eq!(ns.nodes[0], 1.0);
    assert_eq!(ns.nodes[15], 1000.0);
}

#[test]
fn interval_errors_are_equal() {
    for n in [3, 5, 8, 16, 24] {
        let ns = equilibrated_nodes(n, 1.0, 1000.0, -0.5).unwrap();
        let e = ns.interval_errors();
        let (lo, hi) = e.iter().fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(*x), b.max(*x)));
        assert!((hi - lo) / hi <= 1e-8, "n={n}: {e:?}");
        assert!(ns.nodes.windows(2).all(|w| w[0] < w[1]));
    }
}

/// Max of chord minus function by ternary search; the gap is concave for a
/// convex function.
fn gap_max(a: f64, b: f64, p: f64) -> f64 {
    let (fa, fb) = (a.powf(p), b.powf(p));
    let gap = |x: f64| fa + (fb - fa) * (x - a) / (b - a) - x.powf(p);
    let (mut lo, mut hi) = (a, b);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if gap(m1) < gap(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    gap(0.5 * (lo + hi))
}

#[test]
fn three_nodes_match_brute_force_search() {
    let p = -0.5;
    let imbalance = |m: f64| (gap_max(1.0, m, p) - gap_max(m, 4.0, p)).abs();
    let coarse = (1..3000).map(|i| 1.0 + i as f64 * 1e-3).min_by(|a, b| imbalance(*a).total_cmp(&imbalance(*b))).unwrap();
    let fine = (-2000..=2000)
        .map(|i| coarse + i as f64 * 1e-6)
        .min_by(|a, b| imbalance(*a).total_cmp(&imbalance(*b)))
        .unwrap();
    let ns = equilibrated_nodes(3, 1.0, 4.0, p).unwrap();
    assert!((ns.nodes[1] - fine).abs() <= 1.5e-6, "{} vs {fine}", ns.nodes[1]);
}

#[test]
fn closed_form_chord_error_matches_search() {
    for (a, b) in [(1.0, 2.0), (1.0, 1000.0), (40.0, 72.5)] {
        for p in [-0.5, -1.0, -2.0] {
            let want = gap_max(a, b, p);
            assert!((chord_error(a, b, p) - want).abs() <= 1e-12 * want.max(1e-300));
        }
    }
}

#[test]
fn invalid_node_requests_are_rejected() {
    assert!(equilibrated_nodes(2, 1.0, 10.0, -0.5).is_err());
    assert!(equilibrated_nodes(5, 10.0, 1.0, -0.5).is_err());
    assert!(equilibrated_nodes(5, 0.0, 1.0, -0.5).is_err());
    assert!(equilibrated_nodes(5, 1.0, 10.0, 0.5).is_err());
}

#[test]
fn toy_table_is_healthy() {
    let t = toy_table();
    assert_eq!(t.entries.len(), 256);
    let (asym, max_eig) = t.health();
    assert!(asym <= 1e-8, "{asym}");
    assert!(max_eig < 0.0, "{max_eig}");
    assert_eq!(t.mesh_hash, small_ext().mesh_hash());
}

#[test]
fn homogeneous_diagonal_scales_inversely() {
    let t = toy_table();
    let g1 = t.entry([0, 0, 0, 0]);
    for k in 1..t.n() {
        let lam = t.nodes.nodes[k];
        let gk = t.entry([k, k, k, k]);
        assert!(max_abs(gk - g1 / lam) <= 1e-9 * max_abs(gk));
    }
}

#[test]
fn rerun_is_bit_identical_across_solvers_and_schedules() {
    let t = toy_table();
    let again = precompute_table(small_ext(), &t.nodes, TableSolver::Full, Execution::Sequential, &|_, _| {}).unwrap();
    assert_eq!(&again, t);
    let c1 = precompute_table(small_ext(), &t.nodes, TableSolver::Condensed, Execution::Parallel, &|_, _| {}).unwrap();
    let c2 = precompute_table(small_ext(), &t.nodes, TableSolver::Condensed, Execution::Sequential, &|_, _| {}).unwrap();
    assert_eq!(c1, c2);
    for (a, b) in c1.entries.iter().zip(&t.entries) {
        for c in 0..4 {
            assert!((a[c] - b[c]).abs() <= 1e-10 * b[0].abs());
        }
    }
}

#[test]
fn progress_reports_every_slice() {
    let nodes = NodeSet { nodes: vec![1.0, 10.0, 100.0], exponent: -0.5 };
    let calls = std::sync::Mutex::new(Vec::new());
    precompute_table(small_ext(), &nodes, TableSolver::Condensed, Execution::Sequential, &|d, n| {
        calls.lock().unwrap().push((d, n))
    })
    .unwrap();
    assert_eq!(calls.into_inner().unwrap(), vec![(1, 3), (2, 3), (3, 3)]);
}

#[test]
fn interpolation_at_nodes_is_exact() {
    let t = toy_table();
    let xs = &t.nodes.nodes;
    for k in 0..t.entries.len() {
        let idx = [k / 64, k / 16 % 4, k / 4 % 4, k % 4];
        let g = t.interpolate([xs[idx[0]], xs[idx[1]], xs[idx[2]], xs[idx[3]]]).unwrap();
        assert_eq!(g, t.entry(idx));
    }
}

#[test]
fn interpolation_midpoint_is_mean() {
    let t = toy_table();
    let xs = &t.nodes.nodes;
    for d in 0..4 {
        let mut lo = [1, 2, 0, 3];
        lo[d] = 1;
        let mut hi = lo;
        hi[d] = 2;
        let mut q = [xs[lo[0]], xs[lo[1]], xs[lo[2]], xs[lo[3]]];
        q[d] = 0.5 * (xs[1] + xs[2]);
        let g = t.interpolate(q).unwrap();
        let want = (t.entry(lo) + t.entry(hi)) * 0.5;
        assert!(max_abs(g - want) <= 1e-15 * max_abs(want));
    }
}

#[test]
fn interpolation_rejects_out_of_range() {
    let t = toy_table();
    assert!(matches!(t.interpolate([0.5, 1.0, 1.0, 1.0]), Err(Error::Range { .. })));
    assert!(matches!(t.interpolate([1.0, 1.0, 1000.5, 1.0]), Err(Error::Range { .. })));
    assert!(t.interpolate([1.0, f64::NAN, 1.0, 1.0]).is_err());
}

#[test]
fn save_load_roundtrip_is_bit_exact() {
    let t = toy_table();
    let p = tmp("roundtrip.gtbl");
    t.save(&p).unwrap();
    let back = GammaTable::load(&p).unwrap();
    assert_eq!(&back, t);
    assert!(back.entries.iter().zip(&t.entries).all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())));
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(&bytes[..4], b"GTBL");
    assert_eq!(bytes.len(), 4 + 4 + 4 + 4 + 8 + 8 + 8 * 4 + 8 + 256 * 32);
    GammaTable::load_for(&p, small_ext()).unwrap();
}

#[test]
fn corrupted_files_give_distinct_errors() {
    let t = toy_table();
    let p = tmp("corrupt.gtbl");
    t.save(&p).unwrap();
    let good = std::fs::read(&p).unwrap();

    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(GammaTable::from_bytes(&bad), Err(LoadError::BadMagic)));

    let mut bad = good.clone();
    bad[4..8].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(GammaTable::from_bytes(&bad), Err(LoadError::Version { found: 7, .. })));

    assert!(matches!(GammaTable::from_bytes(&good[..good.len() - 3]), Err(LoadError::Truncated)));
    assert!(matches!(GammaTable::from_bytes(&good[..20]), Err(LoadError::Truncated)));

    let mut bad = good.clone();
    bad.push(0);
    assert!(matches!(GammaTable::from_bytes(&bad), Err(LoadError::Header(_))));

    let other = ExteriorMesh::build(13.0, ElemType::One, Variant::Interior).unwrap();
    assert!(matches!(GammaTable::load_for(&p, &other), Err(Error::Load(LoadError::HashMismatch { .. }))));
}

#[test]
fn header_records_type_and_variant() {
    let ext = ExteriorMesh::build(10.0, ElemType::Two, Variant::Boundary { side: Side::Top, bc: EdgeBc::Neumann }).unwrap();
    let nodes = NodeSet { nodes: vec![1.0, 1000.0], exponent: -0.5 };
    let t = precompute_table(&ext, &nodes, TableSolver::Condensed, Execution::Parallel, &|_, _| {}).unwrap();
    let p = tmp("variant.gtbl");
    t.save(&p).unwrap();
    let back = GammaTable::load_for(&p, &ext).unwrap();
    assert_eq!(back.elem_type, ElemType::Two);
    assert_eq!(back.variant, ext.variant);
    assert_eq!(back.r, 10.0);
}

#[test]
fn off_grid_interpolation_tracks_fresh_solves() {
    // Multilinear interpolation of a 1/λ-like function leaves a worst case of
    // roughly 30 percent at N = 16; the typical error is far smaller and
    // both shrink as the grid is refined.
    let cond = CondensedExterior::new(full_ext()).unwrap();
    let t16 = full_table(16);
    let t8 = full_table(8);
    let mut rng = StdRng::seed_from_u64(23);
    let dom = |m: Mat2| m.symmetric_eigenvalues().iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let (mut e8, mut e16) = (Vec::new(), Vec::new());
    for _ in 0..100 {
        let q: [f64; 4] = std::array::from_fn(|_| 1000f64.powf(rng.gen::<f64>()));
        let fresh = dom(cond.gamma_hat(&SectorMaterials::new(q[0], [q[1], q[2], q[3]])).unwrap());
        e16.push((dom(t16.interpolate(q).unwrap()) - fresh).abs() / fresh);
        e8.push((dom(t8.interpolate(q).unwrap()) - fresh).abs() / fresh);
    }
    let stats = |e: &mut Vec<f64>| {
        e.sort_by(f64::total_cmp);
        (e[e.len() / 2], e.iter().sum::<f64>() / e.len() as f64, e[e.len() - 1])
    };
    let (med8, mean8, worst8) = stats(&mut e8);
    let (med16, mean16, worst16) = stats(&mut e16);
    println!("dominant eigenvalue error N=8: median {med8:.4} mean {mean8:.4} worst {worst8:.4}");
    println!("dominant eigenvalue error N=16: median {med16:.4} mean {mean16:.4} worst {worst16:.4}");
    assert!(med16 <= 0.10);
    assert!(mean16 < mean8 && worst16 < worst8 && med16 < med8);
    // condensed entries agree with full solves on the grid
    let xs = &t16.nodes.nodes;
    for idx in [[0, 0, 0, 0], [15, 0, 7, 3], [4, 15, 15, 0]] {
        let mats = SectorMaterials::new(xs[idx[0]], [xs[idx[1]], xs[idx[2]], xs[idx[3]]]);
        let full = gamma_hat(full_ext(), &mats).unwrap();
        assert!(max_abs(full - t16.entry(idx)) <= 1e-10 * max_abs(full));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn interpolation_stays_in_bracket_envelope(u in proptest::array::uniform4(0.0f64..1.0)) {
        let t = toy_table();
        let xs = &t.nodes.nodes;
        let q: [f64; 4] = std::array::from_fn(|d| 1000f64.powf(u[d]));
        let base: [usize; 4] = std::array::from_fn(|d| xs.partition_point(|&x| x <= q[d]).clamp(1, xs.len() - 1) - 1);
        let g = t.interpolate(q).unwrap();
        for c in 0..4 {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for corner in 0..16usize {
                let idx: [usize; 4] = std::array::from_fn(|d| base[d] + (corner >> d & 1));
                let v = t.entry(idx)[(c / 2, c % 2)];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let v = g[(c / 2, c % 2)];
            let slack = 1e-14 * (lo.abs() + hi.abs());
            prop_assert!(v >= lo - slack && v <= hi + slack);
        }
    }

    #[test]
    fn equilibration_holds_for_random_ranges(n in 3usize..20, lb in 0.1f64..10.0, ratio in 2.0f64..5000.0, p in -2.0f64..-0.2) {
        let ns = equilibrated_nodes(n, lb, lb * ratio, p).unwrap();
        prop_assert_eq!(ns.nodes[0], lb);
        prop_assert_eq!(ns.nodes[n - 1], lb * ratio);
        let e = ns.interval_errors();
        let hi = e.iter().cloned().fold(0.0, f64::max);
        let lo = e.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!((hi - lo) / hi <= 1e-8);
    }
}
