use std::f64::consts::PI;

use lawson_dpw::solver::{area_series, continue_in_t, ClosingConfig};
use lawson_dpw::surface::{
    extend_by_symmetry, export_obj, generate_group, load_obj, numeric_area, reconstruct_with, stitch, ObjHeader,
    SurfaceMesh, SurfaceOptions, Unitarizer, STITCH_TOL,
};

fn coarse() -> SurfaceOptions {
    // Near rings stay at the default: the cone-angle fit needs them.
    SurfaceOptions { far_rings: 3, sectors: 3, ..SurfaceOptions::default() }
}

#[test]
fn genus_24_surface_at_small_t() {
    let t = 0.02;
    let sol = continue_in_t(0.01, t, &ClosingConfig::default()).unwrap().pop().unwrap();
    let opts = coarse();
    let un = Unitarizer::new(&sol.coeffs, &opts).unwrap();
    let piece = reconstruct_with(&un, &opts).unwrap();
    let mesh = extend_by_symmetry(&piece.mesh(), &piece.generators, t).unwrap();

    assert_eq!(mesh.symmetry_order, 25);
    assert_eq!(mesh.euler_characteristic(), -46);
    assert_eq!(mesh.boundary_edges(), 0);
    assert_eq!(mesh.nonmanifold_edges(), 0);
    assert!(mesh.max_norm_defect() < 1e-9);

    let area = numeric_area(&mesh);
    let series = area_series(t);
    assert!((area - series).abs() / series < 2e-2, "{area} vs {series}");
    // Conformality: the Dirichlet energy is twice the area.
    let half = 0.5 * piece.dirichlet_energy() * mesh.symmetry_order as f64;
    assert!((half - area).abs() / area < 2e-2, "{half} vs {area}");
    let cone = piece.cone_angle().unwrap();
    assert!((cone - 4.0 * PI * t).abs() / (4.0 * PI * t) < 0.05, "{cone}");

    // The area does not depend on which copy of the piece is extended.
    let group = generate_group(&piece.generators, t).unwrap();
    let g = group[group.len() / 2];
    let moved = SurfaceMesh {
        vertices: piece.mesh().vertices.iter().map(|v| g.apply(v)).collect(),
        ..piece.mesh()
    };
    let other = extend_by_symmetry(&moved, &piece.generators, t).unwrap();
    assert!((numeric_area(&other) - area).abs() < 1e-9 * area);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g24.obj");
    export_obj(&mesh, &path, &ObjHeader { t, genus: 24, area }).unwrap();
    let (back, header) = load_obj(&path).unwrap();
    assert_eq!(header.unwrap().genus, 24);
    assert_eq!(back.triangles.len(), mesh.triangles.len());
    assert!((numeric_area(&back) - area).abs() / area < 1e-6);
    let restitched = stitch(&back.vertices, &back.triangles, STITCH_TOL, 25);
    assert_eq!(restitched.euler_characteristic(), -46);
}

#[test]
fn reconstruction_rejects_bad_inputs() {
    let sol = lawson_dpw::potential::first_order_seed(0.03, 6).unwrap();
    assert!(Unitarizer::new(&sol, &SurfaceOptions { loop_samples: 9, ..coarse() }).is_err());
    let sym = lawson_dpw::surface::reconstruct_surface(&sol, &coarse());
    assert!(matches!(sym, Err(lawson_dpw::Error::NonCompactAngle(_))));
}
