//! Deep linear networks: full-matrix gradients of the squared loss,
//! decoupled per-direction dynamics under aligned weights, the mixing
//! matrix between adjacent layers and error back-propagation analysis.
//!
//! Gradients follow the descent convention: every `*_grad` returns
//! `−∂E/∂θ`, so a gradient-flow step is `θ ← θ + η·grad`.
//!
//! Layers are indexed from 0. Layer `i` maps activations of width
//! `widths[i]` to width `widths[i + 1]`; in aligned form its weight is
//! `W_i = R_{i+1}·S_i·R_iᵀ` with `rotations[i]` of order `widths[i]`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::spectral::{bound_singular_values, orthogonal_init, svd, SpectralBand};
use crate::tensor::Tensor;

/// Tolerance on `‖RᵀR − I‖_F` for a rotation to count as orthogonal.
pub const ORTHO_TOL: f64 = 1e-10;
/// Tolerance on `‖Cxx − I‖_F` for whitened covariance.
pub const WHITE_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct LinearNetSpec {
    pub widths: Vec<usize>,
    pub rotations: Vec<Tensor>,
    /// One spectrum per layer, each of length `M = min(widths)`.
    pub spectra: Vec<Vec<f64>>,
    /// Spectrum of the target cross-covariance, length `M`.
    pub target_sigma: Vec<f64>,
    pub weights: Vec<Tensor>,
}

fn orthogonality_error(r: &Tensor) -> f64 {
    r.t()
        .matmul(r)
        .map(|p| p.distance(&Tensor::eye(r.cols())))
        .unwrap_or(f64::INFINITY)
}

/// `R_out · diag(s) · R_inᵀ` with the spectrum embedded in the rectangle.
fn aligned_matrix(r_out: &Tensor, s: &[f64], r_in: &Tensor) -> Tensor {
    let d = Tensor::diag_rect(r_out.rows(), r_in.rows(), s);
    r_out
        .matmul(&d)
        .and_then(|x| x.matmul(&r_in.t()))
        .expect("rotation shapes agree")
}

impl LinearNetSpec {
    pub fn new(
        widths: Vec<usize>,
        rotations: Vec<Tensor>,
        spectra: Vec<Vec<f64>>,
        target_sigma: Vec<f64>,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Input("a linear network needs at least one layer".into()));
        }
        let depth = widths.len() - 1;
        if rotations.len() != depth + 1 || spectra.len() != depth {
            return Err(Error::Input(format!(
                "depth {depth} needs {} rotations and {depth} spectra, got {} and {}",
                depth + 1,
                rotations.len(),
                spectra.len()
            )));
        }
        let m = *widths.iter().min().expect("nonempty");
        for (i, (r, &n)) in rotations.iter().zip(&widths).enumerate() {
            if r.shape() != [n, n] {
                return Err(Error::shape("rotation", r.shape(), &[n, n]).in_layer(format!("rotation {i}")));
            }
            let err = orthogonality_error(r);
            if err > ORTHO_TOL {
                return Err(Error::Input(format!(
                    "rotation {i} is not orthogonal (‖RᵀR − I‖ = {err:e})"
                )));
            }
        }
        for (i, s) in spectra.iter().enumerate() {
            if s.len() != m {
                return Err(Error::Input(format!(
                    "spectrum {i} has {} entries, expected {m}",
                    s.len()
                )));
            }
            if s.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::Input(format!("spectrum {i} has a negative or NaN entry")));
            }
        }
        if target_sigma.len() != m {
            return Err(Error::Input(format!(
                "target spectrum has {} entries, expected {m}",
                target_sigma.len()
            )));
        }
        let weights = (0..depth)
            .map(|i| aligned_matrix(&rotations[i + 1], &spectra[i], &rotations[i]))
            .collect();
        Ok(LinearNetSpec {
            widths,
            rotations,
            spectra,
            target_sigma,
            weights,
        })
    }

    /// Random rotations with per-layer spectra drawn uniformly from `s_range`.
    pub fn random_aligned(rng: &mut Rng, widths: &[usize], s_range: (f64, f64), sigma: &[f64]) -> Result<Self> {
        let m = widths.iter().copied().min().unwrap_or(0);
        let rotations = widths.iter().map(|&n| orthogonal_init(rng, n, n)).collect();
        let spectra = (0..widths.len().saturating_sub(1))
            .map(|_| (0..m).map(|_| rng.uniform(s_range.0, s_range.1)).collect())
            .collect();
        Self::new(widths.to_vec(), rotations, spectra, sigma.to_vec())
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// `M = min(widths)`, the number of decoupled directions.
    pub fn directions(&self) -> usize {
        self.target_sigma.len()
    }

    /// Largest deviation of a stored weight from its aligned reconstruction.
    pub fn alignment_error(&self) -> f64 {
        (0..self.depth())
            .map(|i| {
                self.weights[i].distance(&aligned_matrix(
                    &self.rotations[i + 1],
                    &self.spectra[i],
                    &self.rotations[i],
                ))
            })
            .fold(0.0, f64::max)
    }

    /// Whitened covariance with `Cyx = R_L·diag(σ)·R_0ᵀ`.
    pub fn target_cov(&self) -> CrossCov {
        let n0 = self.widths[0];
        CrossCov {
            cyx: aligned_matrix(&self.rotations[self.depth()], &self.target_sigma, &self.rotations[0]),
            cxx: Tensor::eye(n0),
        }
    }

    /// Per-layer values `s_m^i` along direction `m`.
    pub fn direction(&self, m: usize) -> Result<Vec<f64>> {
        if m >= self.directions() {
            return Err(Error::Input(format!(
                "direction {m} out of range (M = {})",
                self.directions()
            )));
        }
        Ok(self.spectra.iter().map(|s| s[m]).collect())
    }

    /// Decoupled gradient for direction `m` at layer `l`.
    pub fn decoupled_grad(&self, m: usize, l: usize) -> Result<f64> {
        let s = self.direction(m)?;
        decoupled_deep_grad(&s, self.target_sigma[m], l)
    }

    /// `R_{l+1} · diag(decoupled gradients) · R_lᵀ`.
    pub fn decoupled_grad_matrix(&self, l: usize) -> Result<Tensor> {
        if l >= self.depth() {
            return Err(Error::Input(format!("layer {l} out of range (depth {})", self.depth())));
        }
        let g = (0..self.directions())
            .map(|m| self.decoupled_grad(m, l))
            .collect::<Result<Vec<_>>>()?;
        Ok(aligned_matrix(&self.rotations[l + 1], &g, &self.rotations[l]))
    }

    /// `Σ_m (σ_m − ∏_i s_m^i)² / 2`.
    pub fn energy(&self) -> f64 {
        (0..self.directions())
            .map(|m| {
                deep_energy(
                    &self.spectra.iter().map(|s| s[m]).collect::<Vec<_>>(),
                    self.target_sigma[m],
                )
            })
            .sum()
    }
}

/// Second moments of paired samples.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossCov {
    /// `N_y × N_x`.
    pub cyx: Tensor,
    /// `N_x × N_x`.
    pub cxx: Tensor,
}

impl CrossCov {
    pub fn whitening_error(&self) -> f64 {
        self.cxx.distance(&Tensor::eye(self.cxx.rows()))
    }

    pub fn is_whitened(&self) -> bool {
        self.whitening_error() <= WHITE_TOL
    }
}

/// `Cyx = YᵀX/K` and `Cxx = XᵀX/K` for row-stacked samples.
pub fn cross_covariance(x: &Tensor, y: &Tensor) -> Result<CrossCov> {
    if x.rank() != 2 || y.rank() != 2 || x.rows() != y.rows() {
        return Err(Error::shape("cross_covariance", x.shape(), y.shape()));
    }
    let k = x.rows();
    if k == 0 {
        return Err(Error::Input("cross_covariance needs at least one sample".into()));
    }
    let inv = 1.0 / k as f64;
    Ok(CrossCov {
        cyx: y.t().matmul(x)?.scale(inv),
        cxx: x.t().matmul(x)?.scale(inv),
    })
}

/// Descent directions for `y ≈ W2·W1·x`:
/// `G1 = W2ᵀ(Cyx − W2W1Cxx)`, `G2 = (Cyx − W2W1Cxx)W1ᵀ`.
pub fn two_layer_grads(w1: &Tensor, w2: &Tensor, cov: &CrossCov) -> Result<(Tensor, Tensor)> {
    let residual = cov.cyx.sub(&w2.matmul(w1)?.matmul(&cov.cxx)?)?;
    Ok((w2.t().matmul(&residual)?, residual.matmul(&w1.t())?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoupledTwoLayer {
    pub ds: f64,
    pub dt: f64,
    pub energy: f64,
}

/// One direction of the two-layer dynamics: `ds = (σ − st)t`,
/// `dt = (σ − st)s`, `E = (σ − st)²/2`.
pub fn decoupled_two_layer(s: f64, t: f64, sigma: f64) -> DecoupledTwoLayer {
    let r = sigma - s * t;
    DecoupledTwoLayer {
        ds: r * t,
        dt: r * s,
        energy: 0.5 * r * r,
    }
}

/// Ordered product `W_{hi−1} ⋯ W_lo` (identity of order `n` when empty).
fn chain(weights: &[Tensor], lo: usize, hi: usize, n: usize) -> Result<Tensor> {
    let mut acc = Tensor::eye(n);
    for w in &weights[lo..hi] {
        acc = w.matmul(&acc)?;
    }
    Ok(acc)
}

fn check_chain(weights: &[Tensor]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::Input("empty weight list".into()));
    }
    for pair in weights.windows(2) {
        if pair[1].cols() != pair[0].rows() {
            return Err(Error::shape("weight chain", pair[0].shape(), pair[1].shape()));
        }
    }
    Ok(())
}

/// `(∏_{i>l} W_i)ᵀ (Cyx − ∏ W_i) (∏_{i<l} W_i)ᵀ` under whitened input.
pub fn deep_grad(weights: &[Tensor], cov: &CrossCov, l: usize) -> Result<Tensor> {
    deep_grads(weights, cov)?.swap_remove_checked(l, weights.len())
}

trait TakeAt {
    fn swap_remove_checked(self, l: usize, len: usize) -> Result<Tensor>;
}

impl TakeAt for Vec<Tensor> {
    fn swap_remove_checked(mut self, l: usize, len: usize) -> Result<Tensor> {
        if l >= len {
            return Err(Error::Input(format!("layer {l} out of range (depth {len})")));
        }
        Ok(self.swap_remove(l))
    }
}

/// [`deep_grad`] for every layer at once, sharing prefix and suffix
/// products.
pub fn deep_grads(weights: &[Tensor], cov: &CrossCov) -> Result<Vec<Tensor>> {
    check_chain(weights)?;
    if !cov.is_whitened() {
        return Err(Error::Input(format!(
            "deep gradient assumes whitened input, ‖Cxx − I‖ = {:e}",
            cov.whitening_error()
        )));
    }
    let depth = weights.len();
    let n0 = weights[0].cols();
    // below[l] = W_{l−1}⋯W_0, above[l] = W_{L−1}⋯W_{l+1}.
    let mut below = Vec::with_capacity(depth + 1);
    below.push(Tensor::eye(n0));
    for w in weights {
        let next = w.matmul(below.last().expect("seeded"))?;
        below.push(next);
    }
    let residual = cov.cyx.sub(&below[depth])?;
    let mut above = vec![Tensor::eye(weights[depth - 1].rows())];
    for l in (0..depth - 1).rev() {
        let next = above.last().expect("seeded").matmul(&weights[l + 1])?;
        above.push(next);
    }
    above.reverse();
    (0..depth)
        .map(|l| above[l].t().matmul(&residual)?.matmul(&below[l].t()))
        .collect()
}

/// `½‖Cyx − ∏ W_i‖²_F`, the whitened squared loss up to a constant.
pub fn deep_loss(weights: &[Tensor], cov: &CrossCov) -> Result<f64> {
    check_chain(weights)?;
    let p = chain(weights, 0, weights.len(), weights[0].cols())?;
    let r = cov.cyx.sub(&p)?.frobenius_norm();
    Ok(0.5 * r * r)
}

/// `∏_{i>l} s_i · (σ − ∏ s_i) · ∏_{i<l} s_i` for one direction.
pub fn decoupled_deep_grad(s: &[f64], sigma: f64, l: usize) -> Result<f64> {
    if l >= s.len() {
        return Err(Error::Input(format!("layer {l} out of range (depth {})", s.len())));
    }
    let total: f64 = s.iter().product();
    let others: f64 = s.iter().enumerate().filter(|&(i, _)| i != l).map(|(_, v)| v).product();
    Ok(others * (sigma - total))
}

/// `(σ − ∏ s_i)² / 2`.
pub fn deep_energy(s: &[f64], sigma: f64) -> f64 {
    let r = sigma - s.iter().product::<f64>();
    0.5 * r * r
}

#[derive(Clone, Debug)]
pub struct Mixing {
    /// `S_next · V_nextᵀ · U_prev · S_prev` in thin-SVD coordinates.
    pub matrix: Tensor,
    /// Largest deviation from the entrywise `s_m · s_m' · ⟨v_m, u_m'⟩`.
    pub factor_error: f64,
    /// Left singular vectors of the upper layer.
    pub u_next: Tensor,
    /// Right singular vectors of the lower layer.
    pub v_prev: Tensor,
    pub s_next: Vec<f64>,
    pub s_prev: Vec<f64>,
}

/// How strongly direction `m'` of the lower layer feeds direction `m` of
/// the upper one.
pub fn mixing_matrix(w_next: &Tensor, w_prev: &Tensor) -> Result<Mixing> {
    if w_next.cols() != w_prev.rows() {
        return Err(Error::shape("mixing_matrix", w_next.shape(), w_prev.shape()));
    }
    let next = svd(w_next)?;
    let prev = svd(w_prev)?;
    let (pn, pp) = (next.s.len(), prev.s.len());
    let inner = next.v.t().matmul(&prev.u)?;
    let matrix = Tensor::diag(&next.s).matmul(&inner)?.matmul(&Tensor::diag(&prev.s))?;
    let mut factor_error = 0.0f64;
    for m in 0..pn {
        for mp in 0..pp {
            let dot: f64 = next.v.column(m).iter().zip(prev.u.column(mp)).map(|(a, b)| a * b).sum();
            let want = next.s[m] * prev.s[mp] * dot;
            factor_error = factor_error.max((matrix.at(m, mp) - want).abs());
        }
    }
    Ok(Mixing {
        matrix,
        factor_error,
        u_next: next.u,
        v_prev: prev.v,
        s_next: next.s,
        s_prev: prev.s,
    })
}

#[derive(Clone, Debug)]
pub struct BackpropError {
    /// `(W_{L−1} ⋯ W_l)ᵀ · dL_top`, the error at the input of layer `l`.
    pub grad: Vec<f64>,
    /// Per-direction terms `(∏_{i≥l} s_m^i) · r_m^{(l)} · ⟨r_m^{(L)}, dL_top⟩`.
    pub components: Vec<Vec<f64>>,
    /// `∏_{i≥l} s_m^i` for each direction. At `l = L` the path is the
    /// identity and every one of the `N_L` directions has gain 1.
    pub amplification: Vec<f64>,
}

/// Error vector at activation `l` (`0 ≤ l ≤ L`) given the output error,
/// both as a matrix product and as a sum of per-direction components.
pub fn backprop_error(spec: &LinearNetSpec, l: usize, d_top: &[f64]) -> Result<BackpropError> {
    let depth = spec.depth();
    if l > depth {
        return Err(Error::Input(format!("activation {l} out of range (depth {depth})")));
    }
    if d_top.len() != spec.widths[depth] {
        return Err(Error::shape("backprop_error", &[d_top.len()], &[spec.widths[depth]]));
    }
    let misaligned = spec.alignment_error();
    if misaligned > ORTHO_TOL.max(1e-10) {
        return Err(Error::Input(format!(
            "weights are not aligned (deviation {misaligned:e})"
        )));
    }
    let mut grad = d_top.to_vec();
    for w in spec.weights[l..].iter().rev() {
        grad = w.t().matvec(&grad)?;
    }
    let top = &spec.rotations[depth];
    let here = &spec.rotations[l];
    let modes = if l == depth {
        spec.widths[depth]
    } else {
        spec.directions()
    };
    let mut components = Vec::with_capacity(modes);
    let mut amplification = Vec::with_capacity(modes);
    for m in 0..modes {
        let gain: f64 = spec.spectra[l..].iter().map(|s| s[m]).product();
        let proj: f64 = top.column(m).iter().zip(d_top).map(|(a, b)| a * b).sum();
        components.push(here.column(m).iter().map(|r| gain * proj * r).collect());
        amplification.push(gain);
    }
    Ok(BackpropError {
        grad,
        components,
        amplification,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Feasibility {
    /// `σ ∈ [(1+ε)^−L, (1+ε)^L]`.
    pub feasible: bool,
    pub lower: f64,
    pub upper: f64,
    /// `σ > 1`: some layer must have `s > 1`, else the energy stays positive.
    pub requires_expansion: bool,
    /// `σ < 1`: some layer must have `s < 1`.
    pub requires_contraction: bool,
}

/// Whether a depth-`L` product of band-limited scalars can reach `σ`.
pub fn band_feasibility(sigma: f64, depth: usize, epsilon: f64) -> Feasibility {
    let upper = (1.0 + epsilon).powi(depth as i32);
    let lower = 1.0 / upper;
    Feasibility {
        feasible: sigma >= lower && sigma <= upper,
        lower,
        upper,
        requires_expansion: sigma > 1.0,
        requires_contraction: sigma < 1.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DynamicsMode {
    Full,
    Decoupled,
    Both,
}

impl FromStr for DynamicsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(DynamicsMode::Full),
            "decoupled" => Ok(DynamicsMode::Decoupled),
            "both" => Ok(DynamicsMode::Both),
            other => Err(Error::Input(format!(
                "unknown mode {other:?} (full | decoupled | both)"
            ))),
        }
    }
}

impl fmt::Display for DynamicsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DynamicsMode::Full => "full",
            DynamicsMode::Decoupled => "decoupled",
            DynamicsMode::Both => "both",
        })
    }
}

/// Gradient-flow experiment on a square deep linear network.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub depth: usize,
    pub width: usize,
    pub sigmas: Vec<f64>,
    /// Band for per-step bounding; negative runs unconstrained.
    pub epsilon: f64,
    pub mode: DynamicsMode,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

/// Default explicit Euler step.
pub const EULER_STEP: f64 = 1e-3;

impl Experiment {
    pub fn new(depth: usize, width: usize, sigmas: Vec<f64>, epsilon: f64, mode: DynamicsMode) -> Self {
        Experiment {
            depth,
            width,
            sigmas,
            epsilon,
            mode,
            steps: 1000,
            step_size: EULER_STEP,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub sigma: f64,
    pub depth: usize,
    pub epsilon: f64,
    pub mode: DynamicsMode,
    pub energy_final: f64,
    pub grad_norm: f64,
    pub amplification_min: f64,
    pub amplification_max: f64,
}

pub const DYNAMICS_HEADER: &str = "sigma,L,epsilon,mode,energy_final,grad_norm,amplification_min,amplification_max";

impl ExperimentRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.sigma,
            self.depth,
            self.epsilon,
            self.mode,
            self.energy_final,
            self.grad_norm,
            self.amplification_min,
            self.amplification_max
        )
    }
}

/// Run every `σ` of the experiment from an orthogonal start (all `s = 1`)
/// toward a target with every singular value equal to `σ`.
pub fn run_experiment(exp: &Experiment) -> Result<Vec<ExperimentRow>> {
    if exp.depth == 0 || exp.width == 0 {
        return Err(Error::Input("depth and width must be positive".into()));
    }
    if exp.sigmas.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Input("every σ must be positive".into()));
    }
    let band = if exp.epsilon >= 0.0 {
        Some(SpectralBand::new(exp.epsilon)?)
    } else {
        None
    };
    let mut rows = Vec::new();
    for (k, &sigma) in exp.sigmas.iter().enumerate() {
        let mut rng = Rng::seed_from(exp.seed.wrapping_add(k as u64));
        let widths = vec![exp.width; exp.depth + 1];
        let spec = LinearNetSpec::random_aligned(&mut rng, &widths, (1.0, 1.0), &vec![sigma; exp.width])?;
        let modes: &[DynamicsMode] = match exp.mode {
            DynamicsMode::Both => &[DynamicsMode::Full, DynamicsMode::Decoupled],
            DynamicsMode::Full => &[DynamicsMode::Full],
            DynamicsMode::Decoupled => &[DynamicsMode::Decoupled],
        };
        for &mode in modes {
            let (energy_final, grad_norm, amplification_min, amplification_max) = match mode {
                DynamicsMode::Full => run_full(&spec, band, exp)?,
                _ => run_decoupled(&spec, band, exp)?,
            };
            rows.push(ExperimentRow {
                sigma,
                depth: exp.depth,
                epsilon: exp.epsilon,
                mode,
                energy_final,
                grad_norm,
                amplification_min,
                amplification_max,
            });
        }
    }
    Ok(rows)
}

fn run_full(spec: &LinearNetSpec, band: Option<SpectralBand>, exp: &Experiment) -> Result<(f64, f64, f64, f64)> {
    let cov = spec.target_cov();
    let mut weights = spec.weights.clone();
    for step in 0..exp.steps {
        let grads = deep_grads(&weights, &cov)?;
        for (w, g) in weights.iter_mut().zip(&grads) {
            w.add_scaled(exp.step_size, g)?;
            if let Some(b) = band {
                *w = bound_singular_values(w, b)?;
            }
        }
        if !weights.iter().all(Tensor::is_finite) {
            return Err(Error::Divergence {
                iteration: step as u64,
                detail: "linear network weights became non-finite".into(),
            });
        }
    }
    let grads = deep_grads(&weights, &cov)?;
    let grad_norm = grads.iter().map(|g| g.frobenius_norm().powi(2)).sum::<f64>().sqrt();
    let product = chain(&weights, 0, weights.len(), exp.width)?;
    let f = svd(&product)?;
    Ok((
        deep_loss(&weights, &cov)?,
        grad_norm,
        f.min_singular_value(),
        f.max_singular_value(),
    ))
}

fn run_decoupled(spec: &LinearNetSpec, band: Option<SpectralBand>, exp: &Experiment) -> Result<(f64, f64, f64, f64)> {
    let depth = spec.depth();
    let mut energy = 0.0;
    let mut grad_sq = 0.0;
    let mut amp_min = f64::INFINITY;
    let mut amp_max = 0.0f64;
    for m in 0..spec.directions() {
        let sigma = spec.target_sigma[m];
        let mut s = spec.direction(m)?;
        for step in 0..exp.steps {
            let g = (0..depth)
                .map(|l| decoupled_deep_grad(&s, sigma, l))
                .collect::<Result<Vec<_>>>()?;
            for (v, d) in s.iter_mut().zip(&g) {
                *v += exp.step_size * d;
                if let Some(b) = band {
                    *v = b.clamp(*v);
                }
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    iteration: step as u64,
                    detail: format!("direction {m} became non-finite"),
                });
            }
        }
        for l in 0..depth {
            grad_sq += decoupled_deep_grad(&s, sigma, l)?.powi(2);
        }
        energy += deep_energy(&s, sigma);
        let amp: f64 = s.iter().product();
        amp_min = amp_min.min(amp);
        amp_max = amp_max.max(amp);
    }
    Ok((energy, grad_sq.sqrt(), amp_min, amp_max))
}
