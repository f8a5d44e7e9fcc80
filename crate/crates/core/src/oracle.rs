//! Reference routines used only to check the main implementations.
//!
//! Nothing here is called on the training path. Each routine takes a
//! deliberately different route from the code it checks: a triple-loop
//! product, a two-sided cyclic Jacobi eigensolver on the Gram matrix
//! (instead of the one-sided SVD), and central finite differences.

use crate::tensor::Tensor;

/// Textbook `i, j, k` triple loop.
pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    assert_eq!(k, b.rows(), "naive_matmul: inner dimensions");
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.at(i, p) * b.at(p, j);
            }
            out.set(i, j, acc);
        }
    }
    out
}

/// Eigenvalues of a symmetric matrix, descending, by cyclic two-sided
/// Jacobi rotations.
pub fn symmetric_eigenvalues(a: &Tensor) -> Vec<f64> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "symmetric_eigenvalues: square input");
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[i][j] + m[j][i]);
            m[i][j] = avg;
            m[j][i] = avg;
        }
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum();
        if off <= 1e-32 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in m.iter_mut() {
                    let (x, y) = (row[p], row[q]);
                    row[p] = c * x - s * y;
                    row[q] = s * x + c * y;
                }
                for k in 0..n {
                    let (x, y) = (m[p][k], m[q][k]);
                    m[p][k] = c * x - s * y;
                    m[q][k] = s * x + c * y;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig
}

/// Singular values of `a` as square roots of the leading `min(M, N)`
/// eigenvalues of `AᵀA`, descending. Returns the raw eigenvalues too.
pub fn gram_singular_values(a: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let p = a.rows().min(a.cols());
    let at = a.t();
    let gram = naive_matmul(&at, a);
    let eig: Vec<f64> = symmetric_eigenvalues(&gram).into_iter().take(p).collect();
    let sv = eig.iter().map(|&l| l.max(0.0).sqrt()).collect();
    (sv, eig)
}

/// Central difference `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every entry.
pub fn central_difference(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    out
}

/// Normwise relative error `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    let denom = a.frobenius_norm().max(b.frobenius_norm()).max(floor);
    a.distance(b) / denom
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_of_known_matrix() {
        let a = Tensor::from_rows(&[[2.0, 1.0], [1.0, 2.0]]);
        let e = symmetric_eigenvalues(&a);
        assert!((e[0] - 3.0).abs() < 1e-14 && (e[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn central_difference_of_quadratic() {
        let x = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let g = central_difference(&x, 1e-5, |t| t.data().iter().map(|v| v * v).sum());
        assert!(g.max_abs_diff(&x.scale(2.0)) < 1e-9);
    }
}
