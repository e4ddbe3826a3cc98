use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kfunmix::kalman::{kf_update, rls_update, FilterState, NoiseConfig, RlsState};

fn simplex(rng: &mut ChaCha8Rng, k: usize) -> DVector<f64> {
    let v = DVector::from_fn(k, |_, _| rng.random::<f64>() + 1e-3);
    let s = v.sum();
    v / s
}

#[test]
fn covariance_stays_symmetric_positive_definite() {
    let (m, k) = (4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = NoiseConfig::new(0.01, 0.5).unwrap();
    let mut state = FilterState::new(DVector::zeros(m * k), DMatrix::identity(m * k, m * k), m).unwrap();
    for t in 0..10_000 {
        let c = simplex(&mut rng, k);
        let y = DVector::from_fn(m, |_, _| rng.random::<f64>());
        state = kf_update(&state, &y, &c, &noise).unwrap();
        if t % 500 == 0 || t == 9_999 {
            let p = state.covariance();
            assert_eq!(p, &p.transpose());
            let eig = p.clone().symmetric_eigen().eigenvalues;
            assert!(eig.min() > 0.0, "step {t}: min eigenvalue {}", eig.min());
        }
    }
    assert_eq!(state.t(), 10_000);
}

#[test]
fn rls_without_forgetting_matches_regularized_least_squares() {
    let (m, k, n) = (2, 2, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p0 = 1e3;
    let mut state = RlsState::new(DVector::zeros(m * k), DMatrix::identity(m * k, m * k) * p0, m).unwrap();
    let mut info = DMatrix::identity(m * k, m * k) / p0;
    let mut rhs = DVector::zeros(m * k);
    for _ in 0..n {
        let c = simplex(&mut rng, k);
        let h = c.transpose().kronecker(&DMatrix::<f64>::identity(m, m));
        let y = DVector::from_fn(m, |_, _| rng.random::<f64>());
        state = rls_update(&state, &y, &c, 1.0).unwrap();
        info += h.transpose() * &h;
        rhs += h.transpose() * y;
    }
    let ls = info.cholesky().unwrap().solve(&rhs);
    let err = (state.mean() - &ls).norm() / ls.norm();
    assert!(err < 1e-9, "relative error {err:e}");
}
