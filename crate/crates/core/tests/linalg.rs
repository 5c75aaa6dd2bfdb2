use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trslds::linalg::*;

#[test]
fn rq_reconstructs_and_is_upper() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 1..5 {
        let m = std_normal_mat(n, n, &mut rng);
        let (u, o) = rq_square(&m);
        assert!((&u * &o - &m).norm() < 1e-12);
        assert!((&o * o.transpose() - Mat::identity(n, n)).norm() < 1e-12);
        for i in 0..n {
            assert!(u[(i, i)] >= 0.0);
            for j in 0..i {
                assert!(u[(i, j)].abs() < 1e-12);
            }
        }
    }
}

#[test]
fn sigmoid_is_stable() {
    assert_eq!(sigmoid(800.0), 1.0);
    assert_eq!(sigmoid(-800.0), 0.0);
    assert!((log_sigmoid(-700.0) + 700.0).abs() < 1e-12);
    assert!(log_sigmoid(700.0).abs() < 1e-300);
    assert!((sigmoid(2.0) - 0.880_797_077_977_882_3).abs() < 1e-15);
}

#[test]
fn kron_matches_vec_identity() {
    // vec(A X B) = (Bᵀ ⊗ A) vec(X)
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = std_normal_mat(2, 2, &mut rng);
    let x = std_normal_mat(2, 3, &mut rng);
    let b = std_normal_mat(3, 3, &mut rng);
    let lhs = vec_of(&(&a * &x * &b));
    let rhs = kron(&b.transpose(), &a) * vec_of(&x);
    assert!((lhs - rhs).norm() < 1e-12);
}

#[test]
fn inverse_wishart_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let scale = Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    let df = 8.0;
    let n = 20_000;
    let mut acc = Mat::zeros(2, 2);
    for _ in 0..n {
        acc += sample_inv_wishart(df, &scale, &mut rng).unwrap();
    }
    let mean = acc / n as f64;
    let expect = &scale / (df - 3.0);
    assert!((mean - &expect).norm() / expect.norm() < 0.03);
}

#[test]
fn inverse_wishart_density_1d_is_inverse_gamma() {
    // IW_1(df, s) is InvGamma(df/2, s/2).
    let (df, s, x) = (5.0, 0.7, 0.4);
    let lp = log_inv_wishart(&Mat::from_element(1, 1, x), df, &Mat::from_element(1, 1, s))
        .unwrap();
    let (a, b) = (df / 2.0, s / 2.0);
    let ig = a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x;
    assert!((lp - ig).abs() < 1e-12);
}
