use std::f64::consts::PI;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use sepmodel::exterior::*;
use sepmodel::fem::Mat2;
use sepmodel::geometry::{self, reference_vertices, ElemType, P2};
use sepmodel::mesh::Side;

const TYPES: [ElemType; 2] = [ElemType::One, ElemType::Two];

fn interior(t: ElemType) -> ExteriorMesh {
    ExteriorMesh::build(30.0, t, Variant::Interior).unwrap()
}

fn small(t: ElemType, v: Variant) -> ExteriorMesh {
    ExteriorMesh::build(12.0, t, v).unwrap()
}

fn max_abs(m: Mat2) -> f64 {
    m.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Gradient of a nodal field on a triangle from its plane fit.
fn plane_gradient(v: [P2; 3], u: [f64; 3]) -> P2 {
    let e1 = geometry::sub(v[1], v[0]);
    let e2 = geometry::sub(v[2], v[0]);
    let det = geometry::cross(e1, e2);
    let (r1, r2) = (u[1] - u[0], u[2] - u[0]);
    [(r1 * e2[1] - r2 * e1[1]) / det, (e1[0] * r2 - e2[0] * r1) / det]
}

fn tri(ext: &ExteriorMesh, l: usize) -> [P2; 3] {
    let e = ext.elements[l];
    [ext.vertices[e[0]], ext.vertices[e[1]], ext.vertices[e[2]]]
}

fn all_variants() -> Vec<Variant> {
    let mut v = vec![Variant::Interior];
    for side in Side::ALL {
        for bc in [EdgeBc::Dirichlet, EdgeBc::Neumann] {
            v.push(Variant::Boundary { side, bc });
        }
    }
    v
}

#[test]
fn reference_triangle_is_a_single_element() {
    for t in TYPES {
        for v in all_variants() {
            let ext = small(t, v);
            let r = reference_vertices(t);
            let hat = ext.elements[ext.hat_element];
            for a in 0..3 {
                let p = ext.vertices[hat[a]];
                assert!((p[0] - r[a][0]).abs() <= 1e-14 && (p[1] - r[a][1]).abs() <= 1e-14);
            }
            let tagged = ext.region.iter().filter(|r| **r == Region::Hat).count();
            assert_eq!(tagged, 1, "{t:?} {v:?}");
            assert!((ext.hat_geometry().area - 0.5).abs() <= 1e-14);
        }
    }
}

#[test]
fn radius_below_minimum_is_rejected() {
    assert!(ExteriorMesh::build(9.5, ElemType::One, Variant::Interior).is_err());
}

#[test]
fn default_mesh_size_is_in_expected_range() {
    for t in TYPES {
        let ext = interior(t);
        assert!((2000..=10_000).contains(&ext.num_elements()), "{}", ext.num_elements());
        assert!((1000..=6000).contains(&ext.num_vertices()), "{}", ext.num_vertices());
        // about 4400 elements and 2300 vertices for the default grading
        assert!((ext.num_elements() as f64 - 4400.0).abs() < 0.1 * 4400.0);
        assert!((ext.num_vertices() as f64 - 2300.0).abs() < 0.1 * 2300.0);
    }
}

#[test]
fn elements_are_positively_oriented_and_partition_the_outline() {
    for t in TYPES {
        for v in all_variants() {
            let ext = small(t, v);
            for l in 0..ext.num_elements() {
                assert!(geometry::polygon_area(&tri(&ext, l)) > 0.0);
            }
            let parts = ext.region_area(Region::Hat) + (0..3).map(|j| ext.region_area(Region::Sector(j))).sum::<f64>();
            assert!((parts - ext.outline_area).abs() <= 1e-8 * ext.outline_area);
            assert!((ext.total_area() - ext.outline_area).abs() <= 1e-8 * ext.outline_area);
        }
    }
}

#[test]
fn disk_area_is_within_inscribed_polygon_error() {
    for t in TYPES {
        let ext = interior(t);
        let r = ext.r;
        let n = ext.grading.rim_segments as f64;
        let inscribed = 0.5 * n * r * r * (2.0 * PI / n).sin();
        assert!(ext.outline_area <= PI * r * r * (1.0 + 1e-12));
        assert!(ext.outline_area >= inscribed * (1.0 - 1e-12));
        // every rim vertex lies on the circle
        for (i, p) in ext.vertices.iter().enumerate() {
            if ext.layer[i] == ext.num_layers - 1 {
                assert!((geometry::norm(*p) - r).abs() <= 1e-9 * r);
            }
        }
    }
}

/// Independent angular classification of a point outside T̂.
fn sector_of(v: &[P2; 3], p: P2) -> usize {
    let c = geometry::incenter(v);
    let ang = |q: P2| (q[1] - c[1]).atan2(q[0] - c[0]);
    let t = ang(p);
    (0..3)
        .find(|&j| {
            let a0 = ang(v[(j + 1) % 3]);
            let span = (ang(v[(j + 2) % 3]) - a0).rem_euclid(2.0 * PI);
            (t - a0).rem_euclid(2.0 * PI) < span
        })
        .unwrap()
}

#[test]
fn sector_boundaries_are_resolved_by_edges() {
    for t in TYPES {
        let ext = small(t, Variant::Interior);
        let r = reference_vertices(t);
        for l in 0..ext.num_elements() {
            if let Region::Sector(j) = ext.region[l] {
                // an element straddling a ray would have vertices on both sides
                for p in tri(&ext, l) {
                    if r.contains(&p) {
                        continue;
                    }
                    let c = geometry::centroid(&tri(&ext, l));
                    let mid = geometry::lerp(c, p, 0.999);
                    assert_eq!(sector_of(&r, mid), j, "element {l}");
                }
            }
        }
    }
}

#[test]
fn half_disk_sits_on_the_straight_edge() {
    for t in TYPES {
        for side in Side::ALL {
            let ext = small(t, Variant::Boundary { side, bc: EdgeBc::Neumann });
            let n = side.normal();
            let r = reference_vertices(t);
            let c = r.iter().map(|p| geometry::dot(*p, n)).fold(f64::NEG_INFINITY, f64::max);
            for p in &ext.vertices {
                assert!(geometry::dot(*p, n) <= c + 1e-12);
            }
            // roughly half of the disk remains
            let half = 0.5 * PI * ext.r * ext.r;
            assert!(ext.outline_area < half + 2.0 * ext.r && ext.outline_area > 0.9 * half - 2.0 * ext.r);
            // a sector whose base edge lies on the line has no patch
            for j in 0..3 {
                let a = r[(j + 1) % 3];
                let b = r[(j + 2) % 3];
                let on_line = (geometry::dot(a, n) - c).abs() < 1e-12 && (geometry::dot(b, n) - c).abs() < 1e-12;
                assert_eq!(ext.sector_present[j], !on_line, "{t:?} {side:?} sector {j}");
                if on_line {
                    assert_eq!(ext.region_area(Region::Sector(j)), 0.0);
                }
            }
        }
    }
}

#[test]
fn dirichlet_line_pins_its_vertices() {
    let n = Side::Top.normal();
    for t in TYPES {
        let d = small(t, Variant::Boundary { side: Side::Top, bc: EdgeBc::Dirichlet });
        let nn = small(t, Variant::Boundary { side: Side::Top, bc: EdgeBc::Neumann });
        let c = d.vertices.iter().map(|p| geometry::dot(*p, n)).fold(f64::NEG_INFINITY, f64::max);
        for (i, p) in d.vertices.iter().enumerate() {
            if (geometry::dot(*p, n) - c).abs() < 1e-12 {
                assert!(d.is_dirichlet[i]);
            }
        }
        assert!(d.n_free < nn.n_free);
    }
}

#[test]
fn corrector_scales_with_homogeneous_conductivity() {
    let ext = small(ElemType::One, Variant::Interior);
    for k in 0..2 {
        let w1 = solve_w(&ext, &SectorMaterials::homogeneous(1.0), k).unwrap();
        let w7 = solve_w(&ext, &SectorMaterials::homogeneous(7.0), k).unwrap();
        let scale = w1.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        for (a, b) in w1.iter().zip(&w7) {
            assert!((a / 7.0 - b).abs() <= 1e-10 * scale);
        }
    }
    assert!(solve_w(&ext, &SectorMaterials::homogeneous(1.0), 2).is_err());
    assert!(solve_w(&ext, &SectorMaterials::homogeneous(-1.0), 0).is_err());
}

#[test]
fn corrector_decays_toward_the_rim() {
    for t in TYPES {
        let ext = interior(t);
        for mats in [SectorMaterials::homogeneous(1.0), SectorMaterials::new(1.0, [1000.0, 1.0, 30.0])] {
            for k in 0..2 {
                let w = solve_w(&ext, &mats, k).unwrap();
                let ring_max = |lay: usize| {
                    w.iter().zip(&ext.layer).filter(|(_, l)| **l == lay).fold(0.0f64, |a, (x, _)| a.max(x.abs()))
                };
                let inner = ring_max(1);
                let outer = ring_max(ext.num_layers - 2);
                assert!(outer <= 0.05 * inner, "{t:?} k={k}: {outer} vs {inner}");
            }
        }
    }
}

#[test]
fn load_is_supported_on_reference_triangle_only() {
    // Apply an independently assembled operator to W and compare with
    // -∫_T̂ e_k·∇ψ.
    let ext = small(ElemType::Two, Variant::Interior);
    let mats = SectorMaterials::new(2.0, [5.0, 1.0, 40.0]);
    let value = |l: usize| match ext.region[l] {
        Region::Hat => mats.hat,
        Region::Sector(j) => mats.sectors[j],
    };
    for k in 0..2 {
        let w = solve_w(&ext, &mats, k).unwrap();
        let mut kw = vec![0.0; ext.num_vertices()];
        for l in 0..ext.num_elements() {
            let v = tri(&ext, l);
            let e = ext.elements[l];
            let area = geometry::polygon_area(&v);
            let gw = plane_gradient(v, [w[e[0]], w[e[1]], w[e[2]]]);
            for a in 0..3 {
                let mut unit = [0.0; 3];
                unit[a] = 1.0;
                kw[e[a]] += value(l) * area * geometry::dot(gw, plane_gradient(v, unit));
            }
        }
        let hat = ext.elements[ext.hat_element];
        let hv = tri(&ext, ext.hat_element);
        for (i, r) in kw.iter().enumerate() {
            if ext.free_index[i].is_none() {
                continue;
            }
            match hat.iter().position(|&h| h == i) {
                Some(a) => {
                    let mut unit = [0.0; 3];
                    unit[a] = 1.0;
                    let want = -0.5 * plane_gradient(hv, unit)[k];
                    assert!((r - want).abs() <= 1e-10, "vertex {i}: {r} vs {want}");
                }
                None => assert!(r.abs() <= 1e-10, "vertex {i}: {r}"),
            }
        }
    }
}

#[test]
fn corrector_k_relations() {
    let ext = small(ElemType::One, Variant::Interior);
    let sectors = [3.0, 1.0, 20.0];
    let zero = solve_corrector_k(&ext, sectors, 5.0, 5.0, [0.3, -0.7]).unwrap();
    assert!(zero.iter().all(|x| *x == 0.0));
    let (lo, li) = (2.0, 50.0);
    let k1 = solve_corrector_k(&ext, sectors, lo, li, [1.0, 0.0]).unwrap();
    let k2 = solve_corrector_k(&ext, sectors, lo, li, [0.0, 1.0]).unwrap();
    let (a, b) = (0.6, -1.7);
    let kab = solve_corrector_k(&ext, sectors, lo, li, [a, b]).unwrap();
    let scale = kab.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for i in 0..kab.len() {
        assert!((kab[i] - a * k1[i] - b * k2[i]).abs() <= 1e-12 * scale);
    }
    let w1 = solve_w(&ext, &SectorMaterials::new(li, sectors), 0).unwrap();
    for i in 0..k1.len() {
        assert!((k1[i] - (li - lo) * w1[i]).abs() <= 1e-12 * scale);
    }
}

#[test]
fn gamma_hat_is_symmetric_negative_definite() {
    let mut rng = StdRng::seed_from_u64(3);
    for t in TYPES {
        let ext = small(t, Variant::Interior);
        for _ in 0..6 {
            let mut draw = || 1000f64.powf(rng.gen::<f64>());
            let mats = SectorMaterials::new(draw(), [draw(), draw(), draw()]);
            let g = gamma_hat(&ext, &mats).unwrap();
            assert!((g[(0, 1)] - g[(1, 0)]).abs() <= 1e-8 * max_abs(g));
            let e = g.symmetric_eigenvalues();
            assert!(e[0] < 0.0 && e[1] < 0.0);
        }
        let g1 = gamma_hat(&ext, &SectorMaterials::homogeneous(1.0)).unwrap();
        let g9 = gamma_hat(&ext, &SectorMaterials::homogeneous(9.0)).unwrap();
        assert!(max_abs(g1 / 9.0 - g9) <= 1e-10 * max_abs(g9));
    }
}

#[test]
fn polarization_and_gamma_identities() {
    let mut rng = StdRng::seed_from_u64(11);
    let ext = small(ElemType::One, Variant::Interior);
    for _ in 0..12 {
        let mut draw = || 1000f64.powf(rng.gen::<f64>());
        let (lo, li) = (draw(), draw());
        let sectors = [draw(), draw(), draw()];
        let g = gamma_hat(&ext, &SectorMaterials::new(lo, sectors)).unwrap();
        let p = polarization_hat(&ext, sectors, lo, li).unwrap();
        let d = li - lo;
        let inv = (Mat2::identity() - g * d).try_inverse().unwrap();
        assert!(max_abs(p - g * d * inv) <= 1e-9 * (1.0 + max_abs(p)));
        assert!(max_abs(Mat2::identity() + p - inv) <= 1e-9 * (1.0 + max_abs(inv)));
    }
    let p0 = polarization_hat(&ext, [4.0; 3], 4.0, 4.0).unwrap();
    assert_eq!(max_abs(p0), 0.0);
}

#[test]
fn reflected_reference_triangles_agree() {
    // the two reference triangles are point reflections of each other, and
    // conjugation by -I leaves Γ̂ unchanged
    let g1 = gamma_hat(&interior(ElemType::One), &SectorMaterials::homogeneous(1.0)).unwrap();
    let g2 = gamma_hat(&interior(ElemType::Two), &SectorMaterials::homogeneous(1.0)).unwrap();
    let rot = -Mat2::identity();
    assert!(max_abs(rot * g1 * rot.transpose() - g2) <= 1e-8, "{g1} vs {g2}");
}

#[test]
fn condensed_solver_matches_full_solve() {
    let mut rng = StdRng::seed_from_u64(5);
    for t in TYPES {
        for v in [Variant::Interior, Variant::Boundary { side: Side::Top, bc: EdgeBc::Neumann }, Variant::Boundary { side: Side::Left, bc: EdgeBc::Dirichlet }] {
            let ext = small(t, v);
            let cond = CondensedExterior::new(&ext).unwrap();
            assert!(cond.interface_size() < ext.n_free);
            for _ in 0..4 {
                let mut draw = || 1000f64.powf(rng.gen::<f64>());
                let mats = SectorMaterials::new(draw(), [draw(), draw(), draw()]);
                let full = gamma_hat(&ext, &mats).unwrap();
                let fast = cond.gamma_hat(&mats).unwrap();
                assert!(max_abs(full - fast) <= 1e-10 * max_abs(full), "{t:?} {v:?}");
            }
        }
    }
}

#[test]
fn mesh_hash_identifies_geometry() {
    let a = small(ElemType::One, Variant::Interior);
    let b = small(ElemType::One, Variant::Interior);
    assert_eq!(a.mesh_hash(), b.mesh_hash());
    let c = ExteriorMesh::build(13.0, ElemType::One, Variant::Interior).unwrap();
    assert_ne!(a.mesh_hash(), c.mesh_hash());
    assert_ne!(a.mesh_hash(), small(ElemType::Two, Variant::Interior).mesh_hash());
    let top = Variant::Boundary { side: Side::Top, bc: EdgeBc::Neumann };
    let topd = Variant::Boundary { side: Side::Top, bc: EdgeBc::Dirichlet };
    assert_ne!(small(ElemType::One, top).mesh_hash(), small(ElemType::One, topd).mesh_hash());
}

#[test]
fn variant_codes_roundtrip() {
    for v in all_variants() {
        assert_eq!(Variant::from_code(v.code()), Some(v));
    }
    assert_eq!(Variant::from_code(13), None);
    assert_eq!(Variant::from_code(51), None);
}

#[test]
fn mesh_dump_lists_every_vertex_and_element() {
    let ext = small(ElemType::One, Variant::Interior);
    let dir = std::env::temp_dir().join(format!("sepmodel-ext-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (vp, ep) = (dir.join("v.csv"), dir.join("e.csv"));
    ext.write_csv(&vp, &ep).unwrap();
    let vs = std::fs::read_to_string(&vp).unwrap();
    let es = std::fs::read_to_string(&ep).unwrap();
    assert_eq!(vs.lines().count(), ext.num_vertices() + 1);
    assert_eq!(es.lines().count(), ext.num_elements() + 1);
    assert!(es.lines().nth(1).unwrap().ends_with(",hat"));
    std::fs::remove_dir_all(&dir).unwrap();
}
