#![allow(dead_code)]

use splus_core::{sym_eigh, CounterRng, Matrix};

pub fn gaussian(rows: usize, cols: usize, rng: &mut CounterRng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

pub fn symmetric(d: usize, rng: &mut CounterRng) -> Matrix<f64> {
    let g = gaussian(d, d, rng);
    let mut s = g.add(&g.transpose()).unwrap();
    s.symmetrize();
    s
}

/// `G G^T / d + I / 2`: comfortably conditioned SPD.
pub fn spd(d: usize, rng: &mut CounterRng) -> Matrix<f64> {
    let g = gaussian(d, d, rng);
    let mut a = g.matmul_t(&g).unwrap().scale(1.0 / d as f64);
    a.add_diagonal(0.5);
    a.symmetrize();
    a
}

pub fn orthogonal(d: usize, rng: &mut CounterRng) -> Matrix<f64> {
    sym_eigh(&symmetric(d, rng)).unwrap().q
}

pub fn rel_err(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.sub(b).unwrap().frobenius() / b.frobenius().max(1e-300)
}

/// Gauss-Jordan inverse with partial pivoting, written independently of the
/// eigensolver so it can serve as an oracle.
pub fn gauss_jordan_inverse(a: &Matrix<f64>) -> Matrix<f64> {
    let n = a.rows();
    let mut aug: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a.row(i).to_vec();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs())).unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        assert!(p.abs() > 1e-300, "singular");
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = aug[r][col];
                if f != 0.0 {
                    let pivot_row = aug[col].clone();
                    for (x, &y) in aug[r].iter_mut().zip(&pivot_row) {
                        *x -= f * y;
                    }
                }
            }
        }
    }
    Matrix::from_fn(n, n, |i, j| aug[i][n + j])
}

/// Elementwise sign with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
