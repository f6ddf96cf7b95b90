//! Randomized invariants of the geometry and calculus layers.

use std::f64::consts::PI;

use nalgebra::DVector;
use proptest::prelude::*;

use conflab::calculus::{conformality_state, first_jet, lemma1_report};
use conflab::geometry::{sphere_volume, Manifold};
use conflab::presets::{matrix_inequality_check, Preset};

fn sphere_point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    let polar = proptest::collection::vec(0.1..PI - 0.1, dim - 1);
    (polar, 0.0..2.0 * PI).prop_map(|(mut p, az)| {
        p.push(az);
        p
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sphere_frames_are_orthonormal_and_tangent(
        (dim, x) in (2usize..6).prop_flat_map(|d| (Just(d), sphere_point(d)))
    ) {
        let s = Manifold::sphere(dim).unwrap();
        let y = s.embed(&x);
        let frame = s.orthonormal_frame(&x).unwrap();
        for (i, a) in frame.ambient.iter().enumerate() {
            prop_assert!(a.dot(&y).abs() < 1e-12);
            for (j, b) in frame.ambient.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((a.dot(b) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn curvature_operator_is_antisymmetric(
        u in proptest::collection::vec(-1.0..1.0f64, 4),
        v in proptest::collection::vec(-1.0..1.0f64, 4),
        w in proptest::collection::vec(-1.0..1.0f64, 4),
        z in proptest::collection::vec(-1.0..1.0f64, 4),
    ) {
        let s = Manifold::sphere(4).unwrap();
        let (u, v, w, z) = (DVector::from_vec(u), DVector::from_vec(v), DVector::from_vec(w), DVector::from_vec(z));
        let ruv = s.riemann_apply(&u, &v, &w);
        let rvu = s.riemann_apply(&v, &u, &w);
        prop_assert!((ruv + rvu).norm() < 1e-14);
        // pair symmetry: h(R(u,v)w, z) = h(R(w,z)u, v)
        let a = s.riemann_apply(&u, &v, &w).dot(&z);
        let b = s.riemann_apply(&w, &z, &u).dot(&v);
        prop_assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn sphere_exp_preserves_the_sphere(x in sphere_point(3), v in proptest::collection::vec(-2.0..2.0f64, 3)) {
        let s = Manifold::sphere(3).unwrap();
        let frame = s.orthonormal_frame(&x).unwrap();
        let mut amb = DVector::zeros(4);
        for (c, e) in v.iter().zip(&frame.ambient) {
            amb += e * *c;
        }
        let y = s.ambient_exp(&s.embed(&x), &amb);
        prop_assert!((y.norm() - 1.0).abs() < 1e-12);
        // geodesic distance equals |v| while |v| < π
        let n = amb.norm();
        let d = s.embed(&x).dot(&y).clamp(-1.0, 1.0).acos();
        prop_assert!((d - n).abs() < 1e-9);
    }

    #[test]
    fn matrix_inequality_holds(n in 1usize..7, entries in proptest::collection::vec(-3.0..3.0f64, 36)) {
        let a = nalgebra::DMatrix::from_fn(n, n, |i, j| entries[i * 6 + j]);
        prop_assert!(matrix_inequality_check(&a) >= -1e-12);
    }

    #[test]
    fn tensor_identities_hold_for_wobbles(a in -0.5..0.5f64, x in sphere_point(3)) {
        let f = Preset::LatitudeWobble { a, dim: 3 }.build().unwrap();
        let j = first_jet(&f, &x).unwrap();
        prop_assert!(lemma1_report(&j, 3).max() < 1e-10);
        let s = conformality_state(&j, 3);
        prop_assert!(s.t_norm_sq >= 0.0);
    }
}

#[test]
fn quadrature_recovers_volumes() {
    for d in 1..=5 {
        let s = Manifold::sphere(d).unwrap();
        let g = s.quadrature_grid(12).unwrap();
        let rel = (g.total_weight() - sphere_volume(d)).abs() / sphere_volume(d);
        assert!(rel < 1e-12, "S^{d}: {rel}");
    }
    let t = Manifold::circle_product(vec![2.0, 0.5, 1.0]).unwrap();
    let g = t.quadrature_grid(4).unwrap();
    let want = (2.0 * PI).powi(3) * 2.0 * 0.5;
    assert!((g.total_weight() - want).abs() < 1e-12 * want);
}

#[test]
fn energy_is_independent_of_the_frame() {
    // composing with an isometry of the target leaves Φ unchanged
    let f = Preset::LatitudeWobble { a: 0.3, dim: 2 }.build().unwrap();
    let r = nalgebra::Rotation3::from_euler_angles(0.3, -0.7, 1.1).into_inner();
    let q = nalgebra::DMatrix::from_fn(3, 3, |i, j| r[(i, j)]);
    let cod = f.codomain().clone();
    let base = f.clone();
    let rotated = conflab::calculus::SmoothMap::analytic(
        "rotated wobble",
        f.domain().clone(),
        cod,
        move |x| &q * base.eval(x),
    );
    let g = f.domain().quadrature_grid(16).unwrap();
    let a = conflab::calculus::phi(&f, &g).unwrap();
    let b = conflab::calculus::phi(&rotated, &g).unwrap();
    assert!((a - b).abs() < 1e-9 * (1.0 + a), "{a} vs {b}");
}
