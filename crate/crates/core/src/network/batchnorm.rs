//! Batch normalization `BN(z) = Γ·Σ·(z − μ) + β`, where `Γ = diag(γ)` and
//! `Σ = diag(1/ς)` with `ς = sqrt(var + c)`.
//!
//! Dense inputs (`B × N`) are normalized per neuron; feature maps
//! (`B × C × H × W`) per channel over batch and spatial positions.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stability constant added to the variance.
pub const BN_EPS: f64 = 1e-5;

/// Weight on the previous running statistics.
pub const BN_AVG_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Training,
    Inference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub run_mean: Tensor,
    /// Running `ς = sqrt(var + c)`, never below `sqrt(c)`.
    pub run_std: Tensor,
    pub avg_momentum: f64,
    pub mode: BnMode,
}

/// What the backward pass needs from a forward call.
#[derive(Clone, Debug)]
pub struct BnCache {
    x_hat: Tensor,
    std: Vec<f64>,
    mode: BnMode,
}

#[derive(Clone, Debug)]
pub struct BnGrads {
    pub dz: Tensor,
    pub dgamma: Tensor,
    pub dbeta: Tensor,
}

/// `(channels, positions per channel per sample)` for a supported input.
fn layout(shape: &[usize], n: usize) -> Result<(usize, usize)> {
    match shape {
        [_, c] if *c == n => Ok((n, 1)),
        [_, c, h, w] if *c == n => Ok((n, h * w)),
        _ => Err(Error::shape("batch norm", shape, &[n])),
    }
}

impl BnState {
    pub fn new(features: usize) -> Self {
        BnState {
            gamma: Tensor::full(&[features], 1.0),
            beta: Tensor::zeros(&[features]),
            run_mean: Tensor::zeros(&[features]),
            run_std: Tensor::full(&[features], (1.0 + BN_EPS).sqrt()),
            avg_momentum: BN_AVG_MOMENTUM,
            mode: BnMode::Training,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// Effective per-feature gains `γᵢ/ςᵢ` from the running statistics.
    pub fn gains(&self) -> Vec<f64> {
        self.gamma
            .data()
            .iter()
            .zip(self.run_std.data())
            .map(|(g, s)| g / s)
            .collect()
    }

    pub fn forward(&mut self, z: &Tensor) -> Result<(Tensor, BnCache)> {
        let n = self.features();
        let (_, inner) = layout(z.shape(), n)?;
        let batch = z.shape()[0];
        let count = (batch * inner) as f64;
        let channel = |i: usize| (i / inner) % n;

        let (mean, std) = match self.mode {
            BnMode::Training => {
                if batch < 2 {
                    return Err(Error::Input(
                        "batch norm needs a batch of at least 2 in training mode".into(),
                    ));
                }
                let mut mean = vec![0.0; n];
                for (i, &v) in z.data().iter().enumerate() {
                    mean[channel(i)] += v;
                }
                mean.iter_mut().for_each(|m| *m /= count);
                let mut var = vec![0.0; n];
                for (i, &v) in z.data().iter().enumerate() {
                    let d = v - mean[channel(i)];
                    var[channel(i)] += d * d;
                }
                let std: Vec<f64> = var.iter().map(|v| (v / count + BN_EPS).sqrt()).collect();
                let m = self.avg_momentum;
                for c in 0..n {
                    let rm = &mut self.run_mean.data_mut()[c];
                    *rm = m * *rm + (1.0 - m) * mean[c];
                    let rs = &mut self.run_std.data_mut()[c];
                    *rs = m * *rs + (1.0 - m) * std[c];
                }
                (mean, std)
            }
            BnMode::Inference => (self.run_mean.data().to_vec(), self.run_std.data().to_vec()),
        };

        let x_hat = Tensor::new(
            z.shape(),
            z.data()
                .iter()
                .enumerate()
                .map(|(i, &v)| (v - mean[channel(i)]) / std[channel(i)])
                .collect(),
        )?;
        let (g, b) = (self.gamma.data(), self.beta.data());
        let out = Tensor::new(
            z.shape(),
            x_hat
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| g[channel(i)] * v + b[channel(i)])
                .collect(),
        )?;
        Ok((
            out,
            BnCache {
                x_hat,
                std,
                mode: self.mode,
            },
        ))
    }

    pub fn backward(&self, cache: &BnCache, dout: &Tensor) -> Result<BnGrads> {
        if dout.shape() != cache.x_hat.shape() {
            return Err(Error::shape("batch norm backward", dout.shape(), cache.x_hat.shape()));
        }
        let n = self.features();
        let (_, inner) = layout(dout.shape(), n)?;
        let count = (dout.shape()[0] * inner) as f64;
        let channel = |i: usize| (i / inner) % n;
        let xh = cache.x_hat.data();

        let mut dgamma = vec![0.0; n];
        let mut dbeta = vec![0.0; n];
        for (i, &g) in dout.data().iter().enumerate() {
            dgamma[channel(i)] += g * xh[i];
            dbeta[channel(i)] += g;
        }
        let gamma = self.gamma.data();
        let dz: Vec<f64> = match cache.mode {
            BnMode::Inference => dout
                .data()
                .iter()
                .enumerate()
                .map(|(i, &g)| g * gamma[channel(i)] / cache.std[channel(i)])
                .collect(),
            BnMode::Training => {
                // With d = γ·dout: dz = (d − mean(d) − x̂·mean(d·x̂)) / ς_batch,
                // and Σd = γ·dβ, Σd·x̂ = γ·dγ.
                dout.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| {
                        let c = channel(i);
                        gamma[c] * (g - dbeta[c] / count - xh[i] * dgamma[c] / count) / cache.std[c]
                    })
                    .collect()
            }
        };
        Ok(BnGrads {
            dz: Tensor::new(dout.shape(), dz)?,
            dgamma: Tensor::vector(dgamma),
            dbeta: Tensor::vector(dbeta),
        })
    }
}

/// Fold inference-mode BN into the preceding bias-free linear map:
/// `BN(W·x) = W̃·x + b̃` with `W̃ = ΓΣW` and `b̃ = β − ΓΣμ`.
pub fn bn_as_linear(state: &BnState, w: &Tensor) -> Result<(Tensor, Tensor)> {
    if w.rank() != 2 || w.rows() != state.features() {
        return Err(Error::shape("bn_as_linear", w.shape(), state.gamma.shape()));
    }
    let gains = state.gains();
    let cols = w.cols();
    let mut folded = w.clone();
    for (row, g) in folded.data_mut().chunks_mut(cols).zip(&gains) {
        row.iter_mut().for_each(|v| *v *= g);
    }
    let bias = gains
        .iter()
        .zip(state.beta.data())
        .zip(state.run_mean.data())
        .map(|((g, b), m)| b - g * m)
        .collect();
    Ok((folded, Tensor::vector(bias)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn training_output_is_standardized() {
        let mut bn = BnState::new(3);
        let z = Tensor::gaussian(&mut Rng::seed_from(1), &[16, 3]).map(|v| 4.0 * v + 2.0);
        let (out, _) = bn.forward(&z).unwrap();
        for c in 0..3 {
            let col = out.column(c);
            let mean = col.iter().sum::<f64>() / 16.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6);
            // Variance is var/(var + c), a hair under 1.
            assert!((var - 1.0).abs() < 1e-6, "{var}");
        }
    }

    #[test]
    fn affine_on_standardized_input() {
        let mut bn = BnState::new(2);
        bn.gamma = Tensor::full(&[2], 2.0);
        bn.beta = Tensor::full(&[2], 3.0);
        // Batch variance 1 − c, so var + c = 1 and normalization is exact.
        let a = (1.0 - BN_EPS).sqrt();
        let z = Tensor::from_rows(&[[a, -a], [-a, a]]);
        let (out, _) = bn.forward(&z).unwrap();
        let want = z.map(|v| 2.0 * v + 3.0);
        assert!(out.max_abs_diff(&want) < 1e-6);
    }

    #[test]
    fn batch_of_one_rejected_in_training() {
        let mut bn = BnState::new(2);
        assert!(bn.forward(&Tensor::zeros(&[1, 2])).is_err());
        bn.mode = BnMode::Inference;
        assert!(bn.forward(&Tensor::zeros(&[1, 2])).is_ok());
    }

    #[test]
    fn running_std_never_below_floor() {
        let mut bn = BnState::new(2);
        for _ in 0..200 {
            bn.forward(&Tensor::full(&[4, 2], 3.0)).unwrap();
        }
        assert!(bn.run_std.data().iter().all(|&s| s >= BN_EPS.sqrt()));
        assert!((bn.run_mean.data()[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn fold_identity_case() {
        let mut bn = BnState::new(2);
        bn.run_std = Tensor::vector(vec![1.5, 0.5]);
        bn.gamma = bn.run_std.clone();
        let w = Tensor::gaussian(&mut Rng::seed_from(0), &[2, 3]);
        let (wf, bf) = bn_as_linear(&bn, &w).unwrap();
        assert!(wf.max_abs_diff(&w) < 1e-15);
        assert!(bf.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fold_scalar_arithmetic() {
        let mut bn = BnState::new(2);
        bn.gamma = Tensor::full(&[2], 2.0);
        bn.run_std = Tensor::full(&[2], 4.0);
        bn.run_mean = Tensor::full(&[2], 1.0);
        let (wf, bf) = bn_as_linear(&bn, &Tensor::eye(2)).unwrap();
        assert_eq!(wf, Tensor::eye(2).scale(0.5));
        assert_eq!(bf.data(), &[-0.5, -0.5]);
    }

    #[test]
    fn conv_features_normalize_per_channel() {
        let mut bn = BnState::new(2);
        let z = Tensor::gaussian(&mut Rng::seed_from(9), &[3, 2, 2, 2]);
        let (out, _) = bn.forward(&z).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|b| out.data()[(b * 2 + c) * 4..(b * 2 + c + 1) * 4].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / 12.0;
            assert!(mean.abs() < 1e-12);
        }
    }
}
