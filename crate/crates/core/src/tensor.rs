//! Dense row-major `f64` tensors.
//!
//! A [`Tensor`] owns its storage; there are no views or strides, so
//! [`Tensor::transpose`] copies. Matrix products accumulate over the inner
//! index in ascending order, which makes every product bitwise reproducible.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= 64 {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "[{} values]", self.data.len())
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "dimensions must be a nonempty list of positive sizes".into(),
        });
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("expected {len} values, got {}", data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panics on an empty or zero-sized shape.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = check_shape(shape).expect("zeros/full: invalid shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let len = check_shape(shape).expect("from_fn: invalid shape");
        Tensor {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(&[rows, cols], data)
    }

    /// Build a matrix from nested rows; panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let n = rows.len();
        let m = rows[0].as_ref().len();
        let mut data = Vec::with_capacity(n * m);
        for r in rows {
            assert_eq!(r.as_ref().len(), m, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Tensor {
            shape: vec![n, m],
            data,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len().max(1)],
            data: if data.is_empty() { vec![0.0] } else { data },
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// `rows × cols` matrix with `diag` on the main diagonal, zero elsewhere.
    pub fn diag_rect(rows: usize, cols: usize, diag: &[f64]) -> Self {
        let mut t = Self::zeros(&[rows, cols]);
        for (i, &d) in diag.iter().enumerate().take(rows.min(cols)) {
            t.data[i * cols + i] = d;
        }
        t
    }

    pub fn diag(diag: &[f64]) -> Self {
        Self::diag_rect(diag.len(), diag.len(), diag)
    }

    /// Standard-normal entries drawn from `rng`.
    pub fn gaussian(rng: &mut Rng, shape: &[usize]) -> Self {
        Self::from_fn(shape, |_| rng.normal())
    }

    pub fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Self {
        Self::from_fn(shape, |_| rng.uniform(lo, hi))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all trailing dimensions.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    fn require_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("{op} expects a rank-2 tensor"),
            }),
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let c = self.shape[1];
        self.data[i * c + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let c = self.shape[1];
        (0..self.shape[0]).map(|i| self.data[i * c + j]).collect()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn into_shape(self, shape: &[usize]) -> Result<Tensor> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    /// Matrix product with a fixed ascending-k accumulation order.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.require_matrix("matmul")?;
        let (k2, n) = other.require_matrix("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        // Four rows of A share each pass over a row of B.
        let mut i = 0;
        while i + 4 <= m {
            let (r0, rest) = out[i * n..(i + 4) * n].split_at_mut(n);
            let (r1, rest) = rest.split_at_mut(n);
            let (r2, r3) = rest.split_at_mut(n);
            for p in 0..k {
                let a = [
                    self.data[i * k + p],
                    self.data[(i + 1) * k + p],
                    self.data[(i + 2) * k + p],
                    self.data[(i + 3) * k + p],
                ];
                if a == [0.0; 4] {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for ((((c0, c1), c2), c3), &b) in r0
                    .iter_mut()
                    .zip(r1.iter_mut())
                    .zip(r2.iter_mut())
                    .zip(r3.iter_mut())
                    .zip(b_row)
                {
                    *c0 += a[0] * b;
                    *c1 += a[1] * b;
                    *c2 += a[2] * b;
                    *c3 += a[3] * b;
                }
            }
            i += 4;
        }
        for i in i..m {
            let row = &mut out[i * n..(i + 1) * n];
            let a_row = &self.data[i * k..(i + 1) * k];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (c, &b) in row.iter_mut().zip(b_row) {
                    *c += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (m, k) = self.require_matrix("matvec")?;
        if x.len() != k {
            return Err(Error::shape("matvec", &self.shape, &[x.len()]));
        }
        Ok((0..m)
            .map(|i| self.data[i * k..(i + 1) * k].iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.require_matrix("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    /// Transpose of a matrix known to be rank 2; panics otherwise.
    pub fn t(&self) -> Tensor {
        self.transpose().expect("t(): not a matrix")
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add_scaled", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        self.map(|x| alpha * x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Squares are summed in ascending order, so the result does not depend
    /// on element layout (bitwise equal for a matrix and its transpose).
    pub fn frobenius_norm(&self) -> f64 {
        let mut sq: Vec<f64> = self.data.iter().map(|x| x * x).collect();
        sq.sort_by(f64::total_cmp);
        sq.iter().sum::<f64>().sqrt()
    }

    /// Largest absolute elementwise difference; `INFINITY` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `‖self − other‖_F`; `INFINITY` on shape mismatch.
    pub fn distance(&self, other: &Tensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
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

    #[test]
    fn identity_product() {
        let a = Tensor::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.5]]);
        assert_eq!(Tensor::eye(3).matmul(&a).unwrap(), a);
    }

    #[test]
    fn diagonal_product() {
        let p = Tensor::diag(&[2.0, 3.0]).matmul(&Tensor::diag(&[5.0, 7.0])).unwrap();
        assert_eq!(p, Tensor::diag(&[10.0, 21.0]));
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = Rng::seed_from(9);
        let a = Tensor::gaussian(&mut rng, &[4, 5]);
        let b = Tensor::gaussian(&mut rng, &[5, 3]);
        assert!(a.matmul(&b).unwrap().max_abs_diff(&naive_matmul(&a, &b)) <= 1e-12);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = Tensor::zeros(&[2, 3]).matmul(&Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
    }

    #[test]
    fn transpose_cases() {
        assert_eq!(Tensor::eye(4).t(), Tensor::eye(4));
        let a = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(a.t(), Tensor::from_rows(&[[1.0, 3.0], [2.0, 4.0]]));
        let mut rng = Rng::seed_from(1);
        let r = Tensor::gaussian(&mut rng, &[3, 7]);
        assert_eq!(r.t().t(), r);
        assert!(Tensor::zeros(&[2, 2, 2]).transpose().is_err());
    }

    #[test]
    fn gaussian_determinism_and_moments() {
        let a = Tensor::gaussian(&mut Rng::seed_from(42), &[2, 2]);
        let b = Tensor::gaussian(&mut Rng::seed_from(42), &[2, 2]);
        let c = Tensor::gaussian(&mut Rng::seed_from(43), &[2, 2]);
        assert_eq!(a, b);
        assert_ne!(a, c);

        let big = Tensor::gaussian(&mut Rng::seed_from(7), &[100_000]);
        let n = big.len() as f64;
        let mean = big.sum() / n;
        let var = big.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(&[0, 2], vec![]).is_err());
        assert!(Tensor::new(&[], vec![]).is_err());
    }

    mod props {
        use super::*;
        use crate::rng::Rng;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn matmul_associative(seed in any::<u64>(), m in 1usize..6, k in 1usize..6, n in 1usize..6) {
                let mut rng = Rng::seed_from(seed);
                let a = Tensor::gaussian(&mut rng, &[m, k]);
                let b = Tensor::gaussian(&mut rng, &[k, n]);
                let x = Tensor::gaussian(&mut rng, &[n, 1]);
                let left = a.matmul(&b).unwrap().matmul(&x).unwrap();
                let right = a.matmul(&b.matmul(&x).unwrap()).unwrap();
                let scale = left.frobenius_norm().max(1e-300);
                prop_assert!(left.distance(&right) / scale <= 1e-10);
            }

            #[test]
            fn frobenius_transpose_invariant(seed in any::<u64>(), m in 1usize..8, n in 1usize..8) {
                let a = Tensor::gaussian(&mut Rng::seed_from(seed), &[m, n]);
                prop_assert_eq!(a.frobenius_norm().to_bits(), a.t().frobenius_norm().to_bits());
            }
        }
    }
}
