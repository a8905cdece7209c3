use std::collections::BTreeMap;
use std::sync::Arc;

use koopman::dynamics::{lookup, SystemSpec, Tolerance};
use koopman::geometry::{
    check_conservative, check_linearizing, check_symmetry, complex_field, dual_frame, lie_bracket, real_field,
    unit_field, CMatrix, CVector, ScalarField,
};
use koopman::koopman::{LinearizingField, PrincipalEigenfunction};
use koopman::sampling::{annulus_points, box_points};
use koopman::spectral::{decompose, linearize};
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[test]
fn rotation_commutes_with_radial_contraction() {
    let radial = SystemSpec::linear("radial", DMatrix::from_diagonal_element(2, 2, -1.0)).unwrap();
    let rotation = real_field(2, |x| vec![-x[1], x[0]]);
    let pts = box_points(&[-1.0, -1.0], &[1.0, 1.0], 20, 4).unwrap();
    let r = check_symmetry(&rotation, &radial, &pts, 1e-6);
    assert!(r.pass, "{r:?}");
    assert_eq!(r.points_tested, 20);
}

#[test]
fn unit_field_is_not_a_vdp_symmetry() {
    let sys = lookup("vdp-reverse", &BTreeMap::new()).unwrap();
    let pts = box_points(&[-1.0, -1.0], &[1.0, 1.0], 10, 5).unwrap();
    let r = check_symmetry(&unit_field(2, 0), &sys, &pts, 1e-3);
    assert!(!r.pass);
    let json = serde_json::to_value(&r).unwrap();
    assert_eq!(json["check_name"], "symmetry");
    assert_eq!(json["pass"], false);
}

#[test]
fn linear_gradient_frame_dual_is_right_eigenvectors() {
    let a = DMatrix::from_row_slice(3, 3, &[-1.0, 0.5, 0.0, -0.4, -0.7, 0.3, 0.0, 0.2, -1.3]);
    let sp = decompose(&a).unwrap();
    // X_i = conj(w_i): columns are the conjugated rows of W
    let x: CMatrix = sp.left.adjoint();
    let e = dual_frame(&x).unwrap();
    assert!((&e - &sp.right).norm() < 1e-10);
}

#[test]
fn linearizing_pairing_on_linear_and_vdp() {
    let tol = Tolerance::default();
    let lin = SystemSpec::linear("l", DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, -0.2, -1.6])).unwrap();
    let lsp = linearize(&lin).unwrap();
    let pts = box_points(&[0.2, 0.2], &[1.0, 1.0], 10, 9).unwrap();
    for i in 0..2 {
        let psi = Arc::new(PrincipalEigenfunction::new(&lin, &lsp, i, 4.0, tol).unwrap());
        let x = LinearizingField {
            psi,
            dim: 2,
            floor: 1e-12,
        };
        let r = check_linearizing(&x, &lin, lsp.eigenvalues[i], &pts, 1e-6);
        assert!(r.pass(), "{r:?}");
    }

    let sys = lookup("vdp-reverse", &BTreeMap::new()).unwrap();
    let sp = linearize(&sys).unwrap();
    let pts = annulus_points(2, 0.3, 0.9, 10, 2).unwrap();
    let psi = Arc::new(PrincipalEigenfunction::new(&sys, &sp, 0, 45.0, tol).unwrap());
    let x = LinearizingField {
        psi,
        dim: 2,
        floor: 1e-9,
    };
    let r = check_linearizing(&x, &sys, sp.eigenvalues[0], &pts, 1e-2);
    assert!(r.pass(), "{r:?}");
    let wrong = check_linearizing(&unit_field(2, 0), &sys, c(0.0, 0.0), &pts, 1e-2);
    assert!(!wrong.pairing.pass);
}

#[test]
fn eigenfunction_gradient_is_conservative() {
    let sys = lookup("vdp-reverse", &BTreeMap::new()).unwrap();
    let sp = linearize(&sys).unwrap();
    let psi = PrincipalEigenfunction::new(&sys, &sp, 0, 45.0, Tolerance::default()).unwrap();
    let grad = complex_field(2, move |x: &[f64]| psi.gradient(x, 0.0).unwrap());
    let pts = box_points(&[-0.8, -0.8], &[0.8, 0.8], 10, 6).unwrap();
    let r = check_conservative(&grad, &pts, None, 1e-4);
    assert!(r.pass, "{r:?}");
}

fn poly_field(k: [f64; 6]) -> impl koopman::geometry::VectorField {
    real_field(2, move |x| {
        vec![
            k[0] * x[0] + k[1] * x[1] * x[1] + k[2] * x[0] * x[1],
            k[3] * x[1] + k[4] * x[0] * x[0] * x[1] + k[5],
        ]
    })
}

fn matrix_2x2() -> impl Strategy<Value = CMatrix> {
    prop::collection::vec(-1.0f64..1.0, 8).prop_filter_map("well conditioned", |v| {
        let m = CMatrix::from_fn(2, 2, |r, col| c(v[2 * (2 * r + col)], v[2 * (2 * r + col) + 1]))
            + CMatrix::identity(2, 2) * c(1.5, 0.0);
        let inv = m.clone().try_inverse()?;
        (m.norm() * inv.norm() < 100.0).then_some(m)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bracket_is_antisymmetric(
        k in prop::array::uniform6(-1.0f64..1.0),
        l in prop::array::uniform6(-1.0f64..1.0),
        x in prop::array::uniform2(-1.0f64..1.0),
    ) {
        let (g, f) = (poly_field(k), poly_field(l));
        let a = lie_bracket(&g, &f, &x, 1e-4).unwrap();
        let b = lie_bracket(&f, &g, &x, 1e-4).unwrap();
        prop_assert!((&a + &b).norm() < 1e-10);
    }

    #[test]
    fn bracket_is_bilinear(
        k1 in prop::array::uniform6(-1.0f64..1.0),
        k2 in prop::array::uniform6(-1.0f64..1.0),
        l in prop::array::uniform6(-1.0f64..1.0),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        x in prop::array::uniform2(-1.0f64..1.0),
    ) {
        let (g1, g2, f) = (poly_field(k1), poly_field(k2), poly_field(l));
        let mix = {
            let (g1, g2) = (poly_field(k1), poly_field(k2));
            complex_field(2, move |p: &[f64]| {
                use koopman::geometry::VectorField;
                g1.eval(p).unwrap() * c(a, 0.0) + g2.eval(p).unwrap() * c(b, 0.0)
            })
        };
        let lhs = lie_bracket(&mix, &f, &x, 1e-4).unwrap();
        let rhs: CVector = lie_bracket(&g1, &f, &x, 1e-4).unwrap() * c(a, 0.0)
            + lie_bracket(&g2, &f, &x, 1e-4).unwrap() * c(b, 0.0);
        prop_assert!((&lhs - &rhs).norm() < 1e-8);
    }

    #[test]
    fn duality_is_an_involution(m in matrix_2x2()) {
        let dual = dual_frame(&m).unwrap();
        let back = dual_frame(&dual).unwrap();
        prop_assert!((&back - &m).norm() < 1e-9 * m.norm().max(1.0));
        prop_assert!((dual.adjoint() * &m - CMatrix::identity(2, 2)).norm() < 1e-10);
    }
}
