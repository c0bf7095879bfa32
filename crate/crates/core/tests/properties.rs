//! Structural invariants checked over randomized inputs.

mod common;

use std::sync::OnceLock;

use nalgebra::DMatrix;
use proptest::prelude::*;

use trirgnm::cli::{coefficient_grid, dump_field, generate_data, trajectory_norm};
use trirgnm::estimator::{objective_error_estimator, state_error_estimator};
use trirgnm::io::{read_field, read_matrix_from, write_matrix_to};
use trirgnm::linalg::{col, tr_gemm, CsrMatrix};
use trirgnm::model::{ParameterBounds, ParameterVector};
use trirgnm::objective::{DiscreteModel, FomModel};
use trirgnm::rom::{pod_compress, ReducedBasisPair};
use trirgnm::tr::tr_accept;

fn toy() -> &'static FomModel {
    static FOM: OnceLock<FomModel> = OnceLock::new();
    FOM.get_or_init(|| common::toy_fom(8))
}

fn params(n: usize) -> impl Strategy<Value = ParameterVector> {
    prop::collection::vec(0.2f64..4.0, n).prop_map(ParameterVector::from_vec)
}

fn energy(m: &DMatrix<f64>, gram: &CsrMatrix) -> f64 {
    (0..m.ncols()).map(|j| {
        let c = col(m, j);
        c.iter().zip(gram.apply(c)).map(|(a, b)| a * b).sum::<f64>()
    }).sum()
}

proptest! {
    #[test]
    fn box_projection_is_idempotent_and_admissible(
        v in prop::collection::vec(-10.0f64..10.0, 1..20),
        lo in -3.0f64..1.0,
        width in 0.0f64..5.0,
    ) {
        let bounds = ParameterBounds { lower: lo, upper: lo + width };
        let q = ParameterVector::from_vec(v);
        let p = bounds.project(&q);
        prop_assert!(bounds.contains(&p));
        prop_assert_eq!(bounds.project(&p), p.clone());
        for i in 0..q.len() {
            if bounds.contains(&ParameterVector::from_element(1, q[i])) {
                prop_assert_eq!(p[i], q[i]);
            }
        }
    }

    #[test]
    fn binary_matrices_round_trip_bitwise(
        rows in 0usize..6,
        cols in 0usize..6,
        seed in prop::collection::vec(any::<f64>(), 36),
    ) {
        let m = DMatrix::from_fn(rows, cols, |i, j| seed[i * 6 + j]);
        let mut buf = Vec::new();
        write_matrix_to(&mut buf, &m).unwrap();
        let back = read_matrix_from(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        for (a, b) in back.iter().zip(m.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn tr_accept_iff_full_order_decrease(cur in 0.0f64..10.0, trial in 0.0f64..10.0, drop in -1.0f64..1.0) {
        let a = tr_accept(cur, trial, drop);
        prop_assert_eq!(a.accepted, trial < cur);
        if a.accepted {
            let rho = a.rho.unwrap();
            prop_assert!(rho > 0.0);
            prop_assert_eq!(a.flat_surrogate, drop <= 0.0);
        } else {
            prop_assert!(a.rho.is_none());
        }
    }

    #[test]
    fn state_estimator_is_homogeneous_and_monotone(
        r in prop::collection::vec(0.0f64..5.0, 1..40),
        dt in 1e-3f64..1.0,
        s in 0.0f64..10.0,
        k in any::<prop::sample::Index>(),
        bump in 0.0f64..1.0,
    ) {
        let base = state_error_estimator(&r, dt, 0.5);
        let scaled: Vec<f64> = r.iter().map(|x| s * x).collect();
        let lhs = state_error_estimator(&scaled, dt, 0.5);
        prop_assert!((lhs - s * base).abs() <= 1e-12 * (1.0 + s * base));
        let mut up = r.clone();
        up[k.index(r.len())] += bump;
        prop_assert!(state_error_estimator(&up, dt, 0.5) >= base);
    }

    #[test]
    fn objective_estimator_grows_with_the_state_bound(
        j in 0.0f64..10.0,
        d in 0.0f64..10.0,
        bump in 0.0f64..1.0,
        a in 1e-3f64..10.0,
        c in 0.0f64..10.0,
    ) {
        let e0 = objective_error_estimator(j, d, a, c);
        prop_assert!(e0 >= 0.0);
        prop_assert!(objective_error_estimator(j, d + bump, a, c) >= e0);
        prop_assert!(objective_error_estimator(j + bump, d, a, c) >= e0);
        prop_assert_eq!(objective_error_estimator(j, 0.0, a, c), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn operator_is_affine_in_the_parameter(q in params(4), d in params(4), s in -2.0f64..2.0) {
        let fam = toy().family();
        let a = fam.operator(&q).unwrap();
        let lin = fam.direction_operator(&q).unwrap();
        for ((x, y), z) in a.values().iter().zip(fam.a0().values()).zip(lin.values()) {
            prop_assert!((x - y - z).abs() <= 1e-12 * (1.0 + x.abs()));
        }
        let combo = fam.direction_operator(&(&q + &d * s)).unwrap();
        let dd = fam.direction_operator(&d).unwrap();
        for ((c, x), y) in combo.values().iter().zip(lin.values()).zip(dd.values()) {
            prop_assert!((c - x - s * y).abs() <= 1e-12 * (1.0 + c.abs() + y.abs()));
        }
    }

    #[test]
    fn parameter_restriction_inverts_lift(
        dirs in prop::collection::vec(params(4), 1..4),
        coords in prop::collection::vec(-3.0f64..3.0, 4),
    ) {
        let fom = toy();
        let family = fom.family();
        let cols: Vec<Vec<f64>> = dirs.iter().map(|d| d.as_slice().to_vec()).collect();
        let basis = ReducedBasisPair::from_vectors(&[], &cols, family.gram_v(), family.n_dofs(), family.n_params());
        let k = basis.n_q();
        prop_assume!(k > 0);
        let q_r = ParameterVector::from_column_slice(&coords[..k]);
        let back = basis.restrict_parameter(&basis.lift_parameter(&q_r));
        prop_assert!((back - q_r).amax() <= 1e-10);
        prop_assert!(basis.orthonormality_defect(family.gram_v()) <= 1e-10);
    }

    #[test]
    fn pod_modes_are_orthonormal_and_keep_the_energy(
        raw in prop::collection::vec(-1.0f64..1.0, 24 * 6),
        scales in prop::collection::vec(-6i32..1, 6),
        eps in prop::sample::select(vec![1e-1, 1e-3, 1e-6]),
    ) {
        let gram = toy().family().gram_v();
        let n = gram.nrows();
        let s = DMatrix::from_fn(n, 6, |i, j| raw[(i % 24) * 6 + j] * (1.0 + i as f64).sin() * 10f64.powi(scales[j]));
        let modes = pod_compress(&s, gram, eps);
        let m_modes = gram.mul_dense(&modes);
        let g = tr_gemm(&modes, &m_modes);
        prop_assert!((g - DMatrix::identity(modes.ncols(), modes.ncols())).amax() <= 1e-9);
        let coeff = tr_gemm(&m_modes, &s);
        let kept = coeff.norm_squared();
        let total = energy(&s, gram);
        prop_assert!(kept >= (1.0 - eps * eps) * total - 1e-12 * total);
        prop_assert!(kept <= total * (1.0 + 1e-10));
    }

    #[test]
    fn coefficient_fields_round_trip_through_text(q in params(4), tag in 0u32..1000) {
        let layout = toy().family().layout();
        let path = std::env::temp_dir().join(format!("trirgnm-field-{}-{tag}.txt", std::process::id()));
        dump_field(&path, layout, &q, "random field").unwrap();
        let back = read_field(&path).unwrap();
        std::fs::remove_file(&path).ok();
        prop_assert_eq!(back, coefficient_grid(layout, &q).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn synthetic_noise_has_the_requested_norm(rel in 0.0f64..0.2, seed in any::<u64>()) {
        let fom = toy();
        let data = generate_data(fom, &common::toy_truth(), rel, seed).unwrap();
        let obs = fom.observation();
        let dt = fom.time().dt();
        let signal = trajectory_norm(obs, &data.exact, dt);
        prop_assert!((data.delta - rel * signal).abs() <= 1e-14 * signal);
        let noise = trajectory_norm(obs, &(&data.noisy - &data.exact), dt);
        prop_assert!((noise - data.delta).abs() <= 1e-10 * (1.0 + data.delta));
        prop_assert!(data.noisy.column(0) == data.exact.column(0));
        let again = generate_data(fom, &common::toy_truth(), rel, seed).unwrap();
        prop_assert_eq!(again.noisy, data.noisy);
    }
}
