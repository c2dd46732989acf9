use cfkalman::cfverify::{gaussian_cf, mgf_evolution_residual, third_moment_identity};
use cfkalman::kf_bilinear::{self, BilinearFilterConfig, CovarianceForm};
use cfkalman::kf_cc::{self, CcFilterConfig};
use cfkalman::kf_cd::{self, CdFilterConfig};
use cfkalman::numkit::{cholesky_spd, kron, lyapunov_solve, min_eigenvalue, sym_eigen, unvec, vec};
use cfkalman::{
    BilinearStateModel, ContinuousMeasurementModel, DiscreteMeasurementModel, GaussianBelief, LinearStateModel,
    Matrix, Vector,
};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |d| Matrix::new(rows, cols, d))
}

fn spd(n: usize, floor: f64) -> impl Strategy<Value = Matrix> {
    matrix(n, n, 1.0).prop_map(move |m| {
        let mut p = &m * &m.transpose();
        for i in 0..n {
            p[(i, i)] += floor;
        }
        p.symmetrize()
    })
}

fn belief(n: usize) -> impl Strategy<Value = GaussianBelief> {
    (prop::collection::vec(-1.0..1.0f64, n), spd(n, 0.05)).prop_map(|(m, p)| GaussianBelief::new(0.0, m, p))
}

#[derive(Debug, Clone)]
struct Case {
    model: LinearStateModel,
    b: GaussianBelief,
    c: Matrix,
    r: Matrix,
    y: Vector,
}

fn case() -> impl Strategy<Value = Case> {
    (1usize..=4, 1usize..=3, 1usize..=3).prop_flat_map(|(n, m, d)| {
        (matrix(n, n, 1.0), matrix(n, d, 1.0), belief(n), matrix(m, n, 1.0), spd(m, 0.1), prop::collection::vec(-2.0..2.0f64, m))
            .prop_map(|(a, g, b, c, r, y)| Case { model: LinearStateModel::new(a, g), b, c, r, y: Vector::new(y) })
    })
}

fn is_psd(p: &Matrix) -> bool {
    min_eigenvalue(p) >= -1e-9 * p.trace().abs().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_stays_symmetric_psd(case in case(), horizons in prop::collection::vec(0.05..0.5f64, 1..5)) {
        let cfg = CdFilterConfig::default();
        let dm = DiscreteMeasurementModel::new(case.c.clone(), case.r.clone(), vec![]);
        let mut b = case.b.clone();
        for h in horizons {
            b = kf_cd::predict(&b, &case.model, b.t + h, &cfg).unwrap();
            prop_assert!(b.cov.asymmetry() <= 1e-10);
            prop_assert!(is_psd(&b.cov));
            let t = b.t;
            b = kf_cd::update(&b, &dm, &case.y, t, &cfg).unwrap();
            prop_assert!(b.cov.asymmetry() <= 1e-10);
            prop_assert!(is_psd(&b.cov));
        }
    }

    #[test]
    fn update_never_increases_covariance(case in case()) {
        let dm = DiscreteMeasurementModel::new(case.c.clone(), case.r.clone(), vec![]);
        let post = kf_cd::update(&case.b, &dm, &case.y, 0.0, &CdFilterConfig::default()).unwrap();
        let (vals, _) = sym_eigen(&(&case.b.cov - &post.cov));
        prop_assert!(vals[0] >= -1e-10, "smallest eigenvalue of P⁻ − P⁺ is {}", vals[0]);
    }

    #[test]
    fn vec_and_matrix_forms_agree(case in case(), horizon in 0.05..1.0f64) {
        let cfg = CdFilterConfig::default();
        let a = kf_cd::predict(&case.b, &case.model, horizon, &cfg).unwrap();
        let v = kf_cd::predict_vec(&case.b, &case.model, horizon, &cfg).unwrap();
        prop_assert!(a.max_abs_diff(&v) <= 1e-12);
        let dm = DiscreteMeasurementModel::new(case.c.clone(), case.r.clone(), vec![]);
        let a = kf_cd::update(&case.b, &dm, &case.y, 0.0, &cfg).unwrap();
        let v = kf_cd::update_vec(&case.b, &dm, &case.y, 0.0).unwrap();
        prop_assert!(a.max_abs_diff(&v) <= 1e-12);
        let cm = ContinuousMeasurementModel::new(case.c.clone(), case.r.clone());
        let dz = case.y.scale(0.01);
        let ccfg = CcFilterConfig::new(1e-2);
        let a = kf_cc::step(&case.b, &case.model, &cm, &dz, &ccfg).unwrap();
        let v = kf_cc::step_vec(&case.b, &case.model, &cm, &dz, &ccfg).unwrap();
        prop_assert!(a.max_abs_diff(&v) <= 1e-12);
    }

    #[test]
    fn prediction_composes(case in case(), t1 in 0.1..0.6f64, extra in 0.1..0.6f64) {
        let cfg = CdFilterConfig { ode_substep: Some(1e-3), ..Default::default() };
        let t2 = t1 + extra;
        let split = kf_cd::predict(&kf_cd::predict(&case.b, &case.model, t1, &cfg).unwrap(), &case.model, t2, &cfg).unwrap();
        let whole = kf_cd::predict(&case.b, &case.model, t2, &cfg).unwrap();
        prop_assert!(split.max_abs_diff(&whole) <= 1e-10);
    }

    #[test]
    fn stationary_update_matches_update(case in case()) {
        let dm = DiscreteMeasurementModel::new(case.c.clone(), case.r.clone(), vec![]);
        let direct = kf_cd::update(&case.b, &dm, &case.y, 0.0, &CdFilterConfig::default()).unwrap();
        let stationary = kf_cd::stationary_update_cov(&case.b.cov, &dm).unwrap();
        prop_assert!(direct.cov.max_abs_diff(&stationary) <= 1e-12);
    }

    #[test]
    fn kalman_bucy_covariance_stays_psd(case in case(), steps in 1usize..200) {
        let cm = ContinuousMeasurementModel::new(case.c.clone(), case.r.clone());
        let cfg = CcFilterConfig::new(1e-3);
        let mut b = case.b.clone();
        for _ in 0..steps {
            let dz = Vector::zeros(case.c.rows());
            b = kf_cc::step(&b, &case.model, &cm, &dz, &cfg).unwrap();
        }
        prop_assert!(b.cov.asymmetry() <= 1e-10);
        prop_assert!(is_psd(&b.cov));
    }

    #[test]
    fn bilinear_without_multiplicative_noise_is_kalman_bucy(case in case(), form in prop_oneof![Just(CovarianceForm::AsPrinted), Just(CovarianceForm::MomentExact)]) {
        let cm = ContinuousMeasurementModel::new(case.c.clone(), case.r.clone());
        let bilinear = BilinearStateModel::from_linear(&case.model);
        let dz = case.y.scale(0.01);
        let a = kf_bilinear::step(&case.b, &bilinear, &cm, &dz, &BilinearFilterConfig::new(1e-2, form)).unwrap();
        let k = kf_cc::step(&case.b, &case.model, &cm, &dz, &CcFilterConfig::new(1e-2)).unwrap();
        prop_assert!(a.max_abs_diff(&k) <= 1e-12);
    }

    #[test]
    fn bilinear_covariance_stays_symmetric(
        b0 in belief(2),
        bvec in prop::collection::vec(-1.0..1.0f64, 2),
        a in matrix(2, 2, 1.0),
        g in matrix(2, 2, 1.0),
    ) {
        let model = BilinearStateModel::new(Vector::zeros(2), a, g, Vector::new(bvec));
        let cm = ContinuousMeasurementModel::new(Matrix::from_rows(&[[1.0, 0.0]]), Matrix::from_rows(&[[0.5]]));
        let cfg = BilinearFilterConfig::new(1e-3, CovarianceForm::MomentExact);
        let mut b = b0;
        for _ in 0..100 {
            b = kf_bilinear::step(&b, &model, &cm, &[0.0], &cfg).unwrap();
        }
        prop_assert!(b.cov.asymmetry() <= 1e-10);
        prop_assert!(is_psd(&b.cov));
    }

    #[test]
    fn mgf_identity_holds(case in case(), s in prop::collection::vec(-1.0..1.0f64, 4)) {
        let n = case.b.dim();
        prop_assert!(mgf_evolution_residual(&case.model, &case.b, &s[..n]).unwrap() <= 1e-10);
    }

    #[test]
    fn third_moment_identity_holds(b in (1usize..=4).prop_flat_map(belief), idx in prop::collection::vec(0usize..4, 3)) {
        let n = b.dim();
        let (lhs, rhs) = third_moment_identity(&b, idx[0] % n, idx[1] % n, idx[2] % n);
        prop_assert!((lhs - rhs).abs() <= 1e-12);
    }

    #[test]
    fn characteristic_function_bounded(b in (1usize..=3).prop_flat_map(belief), w in prop::collection::vec(-5.0..5.0f64, 3)) {
        let n = b.dim();
        prop_assert!(gaussian_cf(&b, &w[..n]).norm() <= 1.0 + 1e-15);
        prop_assert_eq!(gaussian_cf(&b, &vec![0.0; n]).re, 1.0);
        prop_assert_eq!(gaussian_cf(&b, &vec![0.0; n]).im, 0.0);
    }

    #[test]
    fn kronecker_vec_identity(x in matrix(3, 2, 1.0), a in matrix(2, 3, 1.0), b in matrix(2, 4, 1.0)) {
        // vec(A X B) = (Bᵀ ⊗ A) vec(X)
        let lhs = vec(&(&(&a * &x) * &b));
        let rhs = kron(&b.transpose(), &a).mul_vec(&vec(&x));
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-13);
        prop_assert_eq!(unvec(&vec(&x), 3, 2), x);
    }

    #[test]
    fn lyapunov_residual_small(n in 1usize..=4, seed_a in matrix(4, 4, 1.0), g in matrix(4, 4, 1.0)) {
        let s = Matrix::from_fn(n, n, |i, j| seed_a[(i, j)]);
        let mut a = &(&s * &s.transpose()).scale(-1.0) + &(&s - &s.transpose()).scale(0.5);
        for i in 0..n {
            a[(i, i)] -= 0.5;
        }
        let g = Matrix::from_fn(n, n, |i, j| g[(i, j)]);
        let q = &g * &g.transpose();
        let p = lyapunov_solve(&a, &q).unwrap();
        let mut r = &a * &p;
        r += &(&p * &a.transpose());
        r += &q;
        prop_assert!(r.frobenius_norm() <= 1e-9);
        prop_assert!(is_psd(&p));
    }

    #[test]
    fn cholesky_reconstructs(p in (1usize..=5).prop_flat_map(|n| spd(n, 0.1))) {
        let l = cholesky_spd(&p).unwrap();
        prop_assert!((&l * &l.transpose()).max_abs_diff(&p) <= 1e-12);
    }
}
