mod common;

use common::{gauss_jordan_inverse, gaussian, orthogonal, rel_err, spd, symmetric};
use proptest::prelude::*;
use splus_core::{kron, matrix_norms, sym_eigh, sym_power, CounterRng, Matrix};

#[test]
fn eigh_reconstructs_a_thousand_random_matrices() {
    let mut rng = CounterRng::new(1, "eigh-1000");
    for trial in 0..1000 {
        let d = 1 + (rng.below(32) as usize);
        let scale = 10f64.powf(rng.uniform() * 8.0 - 4.0);
        let a = symmetric(d, &mut rng).scale(scale);
        let eig = sym_eigh(&a).unwrap();
        let recon = eig.reconstruct();
        let err = recon.sub(&a).unwrap().frobenius();
        assert!(err <= 1e-8 * a.frobenius().max(1.0), "trial {trial}, d {d}: err {err}");
        let qtq = eig.q.t_matmul(&eig.q).unwrap();
        let ortho = qtq.sub(&Matrix::identity(d)).unwrap().frobenius();
        assert!(ortho < 1e-10 * d as f64, "trial {trial}: orthonormality {ortho}");
        assert!(eig.lambda.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn eigh_recovers_planted_spectra_above_the_jacobi_cutoff() {
    let mut rng = CounterRng::new(11, "eigh-planted");
    for d in [65, 96, 160] {
        let q = orthogonal(d, &mut rng);
        let mut lambda: Vec<f64> = (0..d).map(|_| 10f64.powf(rng.uniform() * 6.0 - 3.0)).collect();
        lambda[1] = lambda[0];
        let mut a = q.matmul(&Matrix::diag(&lambda)).unwrap().matmul_t(&q).unwrap();
        a.symmetrize();
        let eig = sym_eigh(&a).unwrap();
        lambda.sort_by(f64::total_cmp);
        let top = lambda[d - 1];
        for (got, want) in eig.lambda.iter().zip(&lambda) {
            assert!((got - want).abs() <= 1e-11 * top, "d {d}: {got} vs {want}");
        }
        assert!(eig.reconstruct().sub(&a).unwrap().frobenius() <= 1e-11 * a.frobenius());
        for j in 0..d {
            let col = eig.q.column(j);
            let big = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(*col.iter().find(|x| x.abs() == big).unwrap() > 0.0);
        }
    }
}

#[test]
fn eigh_sign_convention_holds() {
    let mut rng = CounterRng::new(2, "eigh-sign");
    for _ in 0..50 {
        let eig = sym_eigh(&symmetric(7, &mut rng)).unwrap();
        for j in 0..7 {
            let col = eig.q.column(j);
            let top = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let first = col.iter().find(|x| x.abs() == top).unwrap();
            assert!(*first > 0.0);
        }
    }
}

#[test]
fn eigh_is_deterministic() {
    let mut rng = CounterRng::new(3, "det");
    let a = symmetric(20, &mut rng);
    let x = sym_eigh(&a).unwrap();
    let y = sym_eigh(&a).unwrap();
    assert_eq!(
        x.q.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        y.q.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(
        x.lambda.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        y.lambda.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn two_by_two_matches_characteristic_polynomial() {
    // det([[2-l, 1], [1, 2-l]]) = (l - 1)(l - 3).
    let eig = sym_eigh(&Matrix::<f64>::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
    assert!((eig.lambda[0] - 1.0).abs() < 1e-15 && (eig.lambda[1] - 3.0).abs() < 1e-15);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    // Columns (1, -1)/sqrt2 and (1, 1)/sqrt2; first index wins the magnitude tie.
    assert!(rel_err(&eig.q, &Matrix::from_rows(&[&[r, r], &[-r, r]])) < 1e-14);
}

#[test]
fn inverse_sqrt_squared_is_inverse() {
    let mut rng = CounterRng::new(4, "pow");
    for _ in 0..100 {
        let a = spd(4, &mut rng);
        let s = sym_power(&a, -0.5, 0.0).unwrap();
        let sq = s.matmul(&s).unwrap();
        assert!(rel_err(&sq, &gauss_jordan_inverse(&a)) < 1e-8);
    }
}

#[test]
fn square_root_squares_back() {
    let mut rng = CounterRng::new(5, "sqrt");
    let a = spd(9, &mut rng);
    let s = sym_power(&a, 0.5, 0.0).unwrap();
    assert!(rel_err(&s.matmul(&s).unwrap(), &a) < 1e-12);
}

#[test]
fn kronecker_inverse_root_factorizes() {
    let mut rng = CounterRng::new(6, "kron-inv");
    for _ in 0..50 {
        let a = spd(3, &mut rng);
        let b = spd(2, &mut rng);
        let whole = sym_power(&kron(&a, &b).unwrap(), -0.5, 0.0).unwrap();
        let parts = kron(&sym_power(&a, -0.5, 0.0).unwrap(), &sym_power(&b, -0.5, 0.0).unwrap()).unwrap();
        assert!(whole.sub(&parts).unwrap().frobenius() <= 1e-8);
    }
}

#[test]
fn kronecker_matvec_matches_sandwich() {
    let mut rng = CounterRng::new(7, "kron-vec");
    for _ in 0..50 {
        let a = spd(3, &mut rng);
        let b = spd(2, &mut rng);
        let g = gaussian(3, 2, &mut rng);
        let (ai, bi) = (sym_power(&a, -0.5, 0.0).unwrap(), sym_power(&b, -0.5, 0.0).unwrap());
        let flat = sym_power(&kron(&a, &b).unwrap(), -0.5, 0.0).unwrap().matmul(&g.vec_r()).unwrap();
        let sandwich = ai.matmul(&g).unwrap().matmul(&bi).unwrap().vec_r();
        assert!(flat.sub(&sandwich).unwrap().frobenius() <= 1e-8);
    }
}

#[test]
fn kron_vec_uses_row_major_convention() {
    let mut rng = CounterRng::new(8, "vec-r");
    let a = gaussian(3, 3, &mut rng);
    let b = gaussian(2, 2, &mut rng);
    let g = gaussian(3, 2, &mut rng);
    let lhs = kron(&a, &b).unwrap().matmul(&g.vec_r()).unwrap();
    // Direct oracle: (A G B^T)_{ij} = sum_kl a_ik g_kl b_jl.
    let want = Matrix::from_fn(6, 1, |r, _| {
        let (i, j) = (r / 2, r % 2);
        let mut s = 0.0;
        for k in 0..3 {
            for l in 0..2 {
                s += a[(i, k)] * g[(k, l)] * b[(j, l)];
            }
        }
        s
    });
    assert!(lhs.sub(&want).unwrap().max_abs() < 1e-13);
}

#[test]
fn kron_guard() {
    assert!(kron(&Matrix::<f64>::identity(9), &Matrix::identity(2)).is_err());
    let b = Matrix::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
    assert_eq!(kron(&Matrix::from_rows(&[&[2.0]]), &b).unwrap(), b.scale(2.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn spectral_norm_bounded_by_frobenius(seed in any::<u64>(), m in 1usize..12, n in 1usize..12) {
        let mut rng = CounterRng::new(seed, "norms");
        let a = gaussian(m, n, &mut rng);
        let norms = matrix_norms(&a).unwrap();
        prop_assert!(norms.spectral <= norms.frobenius * (1.0 + 1e-12));
        prop_assert!(norms.max_abs <= norms.spectral * (1.0 + 1e-12));
    }

    #[test]
    fn sign_matrices_have_root_mn_frobenius(seed in any::<u64>(), m in 1usize..20, n in 1usize..20) {
        let mut rng = CounterRng::new(seed, "pm1");
        let a = Matrix::<f64>::from_fn(m, n, |_, _| if rng.next_u64() & 1 == 0 { 1.0 } else { -1.0 });
        prop_assert_eq!(matrix_norms(&a).unwrap().frobenius, ((m * n) as f64).sqrt());
    }

    #[test]
    fn eigenvalues_are_invariant_under_similarity(seed in any::<u64>(), d in 1usize..10) {
        let mut rng = CounterRng::new(seed, "sim");
        let a = symmetric(d, &mut rng);
        let q = common::orthogonal(d, &mut rng);
        let mut b = q.matmul(&a).unwrap().matmul_t(&q).unwrap();
        b.symmetrize();
        let (la, lb) = (sym_eigh(&a).unwrap().lambda, sym_eigh(&b).unwrap().lambda);
        let scale = a.frobenius().max(1.0);
        for (x, y) in la.iter().zip(&lb) {
            prop_assert!((x - y).abs() < 1e-10 * scale);
        }
    }
}
