//! Singular value decomposition and the spectral projection used by
//! singular value bounding.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration: column pairs of the
//! working matrix are rotated until every pair is orthogonal to working
//! precision. It computes small singular values to high relative accuracy,
//! which matters because the lower band edge sits just below 1.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Hard cap on Jacobi sweeps before reporting non-convergence.
pub const MAX_SWEEPS: usize = 60;

/// Thin SVD `A = U · diag(s) · Vᵀ` with `P = min(M, N)` columns in `U` and `V`.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    pub u: Tensor,
    pub s: Vec<f64>,
    pub v: Tensor,
}

impl SvdFactors {
    /// `U · diag(values) · Vᵀ` for a replacement spectrum of the same length.
    pub fn reconstruct_with(&self, values: &[f64]) -> Tensor {
        assert_eq!(values.len(), self.s.len());
        let (m, p) = (self.u.rows(), self.s.len());
        let mut us = self.u.clone();
        let data = us.data_mut();
        for i in 0..m {
            for (j, &sv) in values.iter().enumerate() {
                data[i * p + j] *= sv;
            }
        }
        us.matmul(&self.v.t()).expect("factor shapes agree")
    }

    pub fn reconstruct(&self) -> Tensor {
        self.reconstruct_with(&self.s)
    }

    pub fn min_singular_value(&self) -> f64 {
        self.s.last().copied().unwrap_or(0.0)
    }

    pub fn max_singular_value(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }
}

/// Column-major working copy for the Jacobi sweeps.
struct Columns {
    len: usize,
    data: Vec<f64>,
}

impl Columns {
    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.len..(j + 1) * self.len]
    }

    fn dot(&self, p: usize, q: usize) -> f64 {
        self.col(p).iter().zip(self.col(q)).map(|(a, b)| a * b).sum()
    }

    fn norm_sq(&self, j: usize) -> f64 {
        self.col(j).iter().map(|a| a * a).sum()
    }

    /// `(c_p, c_q) ← (c·c_p − s·c_q, s·c_p + c·c_q)`.
    fn rotate(&mut self, p: usize, q: usize, c: f64, s: f64) {
        let len = self.len;
        let (lo, hi) = self.data.split_at_mut(q * len);
        let cp = &mut lo[p * len..(p + 1) * len];
        let cq = &mut hi[..len];
        for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
            let (a, b) = (*x, *y);
            *x = c * a - s * b;
            *y = s * a + c * b;
        }
    }
}

/// Thin SVD of a finite `M × N` matrix.
pub fn svd(a: &Tensor) -> Result<SvdFactors> {
    if a.rank() != 2 {
        return Err(Error::InvalidShape {
            shape: a.shape().to_vec(),
            reason: "svd expects a matrix".into(),
        });
    }
    a.ensure_finite("svd input")?;
    let (m, n) = (a.rows(), a.cols());
    let (mut u, s, mut v) = if m >= n {
        jacobi_tall(a)?
    } else {
        let (u, s, v) = jacobi_tall(&a.t())?;
        (v, s, u)
    };
    fix_signs(&mut u, &mut v);
    Ok(SvdFactors { u, s, v })
}

/// One-sided Jacobi for `M ≥ N`; returns `(U: M×N, s, V: N×N)`.
fn jacobi_tall(a: &Tensor) -> Result<(Tensor, Vec<f64>, Tensor)> {
    let (m, n) = (a.rows(), a.cols());
    let mut g = Columns {
        len: m,
        data: a.t().into_data(),
    };
    let mut v = Columns {
        len: n,
        data: Tensor::eye(n).into_data(),
    };
    let tol = (m as f64) * f64::EPSILON;

    let mut sweeps = 0;
    loop {
        let mut norms: Vec<f64> = (0..n).map(|j| g.norm_sq(j)).collect();
        let mut rotated = false;
        let mut residual = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta) = (norms[p], norms[q]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = g.dot(p, q);
                let off = gamma.abs() / (alpha.sqrt() * beta.sqrt());
                residual = residual.max(off);
                if off <= tol {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                g.rotate(p, q, c, s);
                v.rotate(p, q, c, s);
                norms[p] = alpha - t * gamma;
                norms[q] = beta + t * gamma;
            }
        }
        sweeps += 1;
        if !rotated {
            break;
        }
        if sweeps >= MAX_SWEEPS {
            return Err(Error::Convergence { sweeps, residual });
        }
    }

    let mut order: Vec<(usize, f64)> = (0..n).map(|j| (j, g.norm_sq(j).sqrt())).collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1));
    let s_max = order.first().map_or(0.0, |o| o.1);
    let floor = s_max * (m as f64) * f64::EPSILON;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut next_basis = 0;
    for &(j, sj) in &order {
        let candidate = if sj > floor && sj > 0.0 {
            orthonormalize(g.col(j).iter().map(|x| x / sj).collect(), &u_cols)
        } else {
            None
        };
        let col = match candidate {
            Some(c) => c,
            None => loop {
                // Rank-deficient direction: complete with a standard basis vector.
                assert!(next_basis < m, "orthonormal completion exhausted");
                let mut e = vec![0.0; m];
                e[next_basis] = 1.0;
                next_basis += 1;
                if let Some(c) = orthonormalize(e, &u_cols) {
                    break c;
                }
            },
        };
        u_cols.push(col);
    }

    let mut u = Tensor::zeros(&[m, n]);
    let mut vt = Tensor::zeros(&[n, n]);
    let mut s = Vec::with_capacity(n);
    for (k, &(j, sj)) in order.iter().enumerate() {
        for i in 0..m {
            u.set(i, k, u_cols[k][i]);
        }
        for (i, &x) in v.col(j).iter().enumerate() {
            vt.set(i, k, x);
        }
        s.push(sj);
    }
    Ok((u, s, vt))
}

/// Two passes of modified Gram–Schmidt against `basis`, then normalize.
/// Returns `None` when the vector is (numerically) inside the span.
fn orthonormalize(mut x: Vec<f64>, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let start: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    for _ in 0..2 {
        for b in basis {
            let d: f64 = x.iter().zip(b).map(|(a, c)| a * c).sum();
            for (a, c) in x.iter_mut().zip(b) {
                *a -= d * c;
            }
        }
    }
    let norm: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm <= 0.5 * start || norm == 0.0 {
        return None;
    }
    x.iter_mut().for_each(|a| *a /= norm);
    Some(x)
}

/// Make the largest-magnitude entry of every `U` column positive.
fn fix_signs(u: &mut Tensor, v: &mut Tensor) {
    let (m, p) = (u.rows(), u.cols());
    for j in 0..p {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for i in 0..m {
            let x = u.at(i, j);
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            for i in 0..m {
                u.set(i, j, -u.at(i, j));
            }
            for i in 0..v.rows() {
                v.set(i, j, -v.at(i, j));
            }
        }
    }
}

/// The interval `[1/(1+ε), 1+ε]` around 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralBand {
    epsilon: f64,
}

impl SpectralBand {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::Input(format!(
                "band epsilon must be finite and nonnegative, got {epsilon}"
            )));
        }
        Ok(SpectralBand { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn lower(&self) -> f64 {
        1.0 / (1.0 + self.epsilon)
    }

    pub fn upper(&self) -> f64 {
        1.0 + self.epsilon
    }

    pub fn clamp(&self, x: f64) -> f64 {
        if x > self.upper() {
            self.upper()
        } else if x < self.lower() {
            self.lower()
        } else {
            x
        }
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lower() - tol && x <= self.upper() + tol
    }
}

/// Weight matrix with all singular values equal to one: the polar factor
/// `U·Vᵀ` of a Gaussian draw. Orthonormal rows when `rows ≤ cols`,
/// orthonormal columns otherwise.
pub fn orthogonal_init(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let draw = Tensor::gaussian(rng, &[rows, cols]);
    let f = svd(&draw).expect("svd of a finite gaussian draw");
    f.u.matmul(&f.v.t()).expect("factor shapes agree")
}

/// Clamp every singular value of `w` into `band`, keeping the singular
/// vectors. Values already inside the band pass through the same
/// reconstruction; there is no tolerance dead-zone.
pub fn bound_singular_values(w: &Tensor, band: SpectralBand) -> Result<Tensor> {
    Ok(bound_with_factors(w, band)?.0)
}

/// Like [`bound_singular_values`], also returning the input's factors.
pub fn bound_with_factors(w: &Tensor, band: SpectralBand) -> Result<(Tensor, SvdFactors)> {
    let f = svd(w)?;
    let clipped: Vec<f64> = f.s.iter().map(|&x| band.clamp(x)).collect();
    Ok((f.reconstruct_with(&clipped), f))
}

/// Outcome of checking the bound on singular values of `diag(g)·W`
/// for `W` with unit spectrum.
#[derive(Clone, Debug)]
pub struct GainBoundReport {
    /// Singular values of `diag(g)·W`, descending.
    pub sigma: Vec<f64>,
    pub g_min: f64,
    pub g_max: f64,
    /// Every singular value lies in `[g_min, g_max]` within tolerance.
    pub within_bound: bool,
    /// For fat `W` (`M ≤ N`): whether the singular values equal sorted `|g|`.
    pub exact: Option<bool>,
    /// Largest deviation found by the exact comparison, when applicable.
    pub exact_error: Option<f64>,
}

impl GainBoundReport {
    pub fn passed(&self) -> bool {
        self.within_bound && self.exact.unwrap_or(true)
    }
}

/// Tolerance for both the bound and the exact fat-case comparison.
pub const GAIN_BOUND_TOL: f64 = 1e-9;

/// Verify that row scaling by nonzero gains `g` keeps the singular values of
/// a unit-spectrum `W` inside `[min|g|, max|g|]`, and that they are exactly
/// `{|gᵢ|}` when `W` is fat.
pub fn check_lemma1(w: &Tensor, g: &[f64]) -> Result<GainBoundReport> {
    let f = svd(w)?;
    if let Some(bad) = f.s.iter().find(|&&s| (s - 1.0).abs() > 1e-8) {
        return Err(Error::Input(format!(
            "weight must have unit spectrum; found singular value {bad}"
        )));
    }
    let m = w.rows();
    if g.len() != m {
        return Err(Error::Input(format!("expected {m} gains, got {}", g.len())));
    }
    if g.iter().any(|&x| x == 0.0 || !x.is_finite()) {
        return Err(Error::Input("gains must be finite and nonzero".into()));
    }
    let abs: Vec<f64> = g.iter().map(|x| x.abs()).collect();
    let g_min = abs.iter().copied().fold(f64::INFINITY, f64::min);
    let g_max = abs.iter().copied().fold(0.0, f64::max);

    let mut scaled = w.clone();
    let n = w.cols();
    for (i, &gi) in g.iter().enumerate() {
        scaled.data_mut()[i * n..(i + 1) * n].iter_mut().for_each(|x| *x *= gi);
    }
    let sigma = svd(&scaled)?.s;
    let within_bound = sigma
        .iter()
        .all(|&s| s >= g_min - GAIN_BOUND_TOL && s <= g_max + GAIN_BOUND_TOL);

    let (exact, exact_error) = if m <= n {
        let mut sorted = abs.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let err = sigma
            .iter()
            .zip(&sorted)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        (Some(err <= GAIN_BOUND_TOL), Some(err))
    } else {
        (None, None)
    };
    Ok(GainBoundReport {
        sigma,
        g_min,
        g_max,
        within_bound,
        exact,
        exact_error,
    })
}
