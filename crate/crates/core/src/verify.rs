//! Randomized property suites checked against the [`crate::oracle`]
//! routines. The `svb verify` command and the acceptance tests both run
//! these.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::lineardyn::{
    backprop_error, cross_covariance, decoupled_deep_grad, decoupled_two_layer, deep_energy, deep_grad,
    two_layer_grads, LinearNetSpec,
};
use crate::network::layers::{gap_backward, gap_forward, relu_backward, relu_forward};
use crate::network::{bn_as_linear, softmax_xent, BnMode, BnState, ConvLayer, LinearLayer, Network};
use crate::optim::bound_bn_gains;
use crate::oracle::{central_difference, gram_singular_values, relative_error};
use crate::rng::Rng;
use crate::spectral::{bound_singular_values, check_lemma1, orthogonal_init, svd, SpectralBand};
use crate::tensor::Tensor;

/// Finite-difference step for gradient checks.
pub const FD_STEP: f64 = 1e-5;
/// Normwise relative error allowed between analytic and numeric gradients.
pub const FD_TOL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    /// `worst ≤ tol` over `count` instances.
    fn within(name: &str, worst: f64, tol: f64, count: usize) -> Self {
        Check::new(
            name,
            worst <= tol,
            format!("{count} instances, worst {worst:.3e} (tolerance {tol:e})"),
        )
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Svd,
    Svb,
    Lemma1,
    Gradcheck,
    Bbn,
    Fold,
    Dynamics,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Svd,
        Suite::Svb,
        Suite::Lemma1,
        Suite::Gradcheck,
        Suite::Bbn,
        Suite::Fold,
        Suite::Dynamics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Svd => "svd",
            Suite::Svb => "svb",
            Suite::Lemma1 => "lemma1",
            Suite::Gradcheck => "gradcheck",
            Suite::Bbn => "bbn",
            Suite::Fold => "fold",
            Suite::Dynamics => "dynamics",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown suite {s:?}")))
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Run a suite at its full size, or at a reduced size when `quick`.
pub fn run_suite(suite: Suite, quick: bool, seed: u64) -> Result<Vec<Check>> {
    let n = |full: usize, small: usize| if quick { small } else { full };
    match suite {
        Suite::Svd => svd_suite(n(1000, 100), 64, seed),
        Suite::Svb => svb_suite(n(100, 20), seed),
        Suite::Lemma1 => lemma1_suite(n(200, 40), seed),
        Suite::Gradcheck => gradcheck_suite(n(20, 20), seed),
        Suite::Bbn => bbn_suite(n(100, 20), seed),
        Suite::Fold => fold_suite(n(20, 20), seed),
        Suite::Dynamics => dynamics_suite(n(50, 50), seed),
    }
}

/// Random `M × N` with `M, N ≤ max_dim`, cycling square, fat and tall shapes,
/// with entries on a random scale.
fn random_matrix(rng: &mut Rng, i: usize, max_dim: usize) -> Tensor {
    let a = 1 + rng.below(max_dim);
    let b = 1 + rng.below(max_dim);
    let (m, n) = match i % 3 {
        0 => (a, a),
        1 => (a.min(b), a.max(b)),
        _ => (a.max(b), a.min(b)),
    };
    let scale = 10f64.powf(rng.uniform(-2.0, 2.0));
    Tensor::gaussian(rng, &[m, n]).scale(scale)
}

/// Reconstruction error relative to `max(1, ‖A‖)` and agreement of `s²`
/// with the eigenvalues of `AᵀA` relative to the largest one.
pub fn svd_suite(count: usize, max_dim: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::seed_from(seed);
    let start = Instant::now();
    let mut worst_rec = 0.0f64;
    let mut worst_sv = 0.0f64;
    let mut worst_orth = 0.0f64;
    for i in 0..count {
        let a = random_matrix(&mut rng, i, max_dim);
        let f = svd(&a)?;
        worst_rec = worst_rec.max(f.reconstruct().distance(&a) / a.frobenius_norm().max(1.0));
        let p = f.s.len();
        let ortho = |q: &Tensor| {
            q.t()
                .matmul(q)
                .map(|g| g.distance(&Tensor::eye(p)))
                .unwrap_or(f64::INFINITY)
        };
        worst_orth = worst_orth.max(ortho(&f.u)).max(ortho(&f.v));
        let (_, eig) = gram_singular_values(&a);
        let top = eig.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
        for (s, l) in f.s.iter().zip(&eig) {
            worst_sv = worst_sv.max((s * s - l).abs() / top);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(vec![
        Check::within("svd reconstruction", worst_rec, 1e-9, count),
        Check::within("svd singular values vs Gram eigenvalues", worst_sv, 1e-8, count),
        Check::within("svd factor orthonormality", worst_orth, 1e-9, count),
        Check::new(
            "svd runtime",
            secs < 60.0,
            format!("{secs:.2} s for {count} matrices (limit 60 s)"),
        ),
    ])
}

/// Bounded spectra stay in band and bounding is idempotent.
pub fn svb_suite(count_per_eps: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::seed_from(seed);
    let mut checks = Vec::new();
    for eps in [0.01, 0.05, 0.5, 1.0] {
        let band = SpectralBand::new(eps)?;
        let mut worst_out = 0.0f64;
        let mut worst_idem = 0.0f64;
        for i in 0..count_per_eps {
            let a = random_matrix(&mut rng, i, 24);
            let b = bound_singular_values(&a, band)?;
            for s in svd(&b)?.s {
                worst_out = worst_out.max(band.lower() - s).max(s - band.upper());
            }
            worst_idem = worst_idem.max(bound_singular_values(&b, band)?.distance(&b));
        }
        checks.push(Check::within(
            &format!("svb band eps={eps}"),
            worst_out.max(0.0),
            1e-9,
            count_per_eps,
        ));
        checks.push(Check::within(
            &format!("svb idempotence eps={eps}"),
            worst_idem,
            1e-9,
            count_per_eps,
        ));
    }
    Ok(checks)
}

fn random_gains(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.uniform(0.1, 3.0);
            if rng.coin() {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// Row-scaled unit-spectrum matrices: bounded by the gains (tall) and
/// exactly the gains (fat).
pub fn lemma1_suite(count: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::seed_from(seed);
    let mut bound_fail = 0;
    let mut exact_fail = 0;
    let mut worst_exact = 0.0f64;
    for _ in 0..count {
        let n = 1 + rng.below(12);
        let m = n + 1 + rng.below(12);
        let w = orthogonal_init(&mut rng, m, n);
        let g = random_gains(&mut rng, m);
        if !check_lemma1(&w, &g)?.within_bound {
            bound_fail += 1;
        }
    }
    for _ in 0..count {
        let m = 1 + rng.below(12);
        let n = m + rng.below(12);
        let w = orthogonal_init(&mut rng, m, n);
        let g = random_gains(&mut rng, m);
        let r = check_lemma1(&w, &g)?;
        if !r.passed() {
            exact_fail += 1;
        }
        worst_exact = worst_exact.max(r.exact_error.unwrap_or(f64::INFINITY));
    }
    Ok(vec![
        Check::new(
            "lemma1 bound (tall)",
            bound_fail == 0,
            format!("{count} pairs, {bound_fail} outside [min|g|, max|g|] ± 1e-9"),
        ),
        Check::new(
            "lemma1 exact (fat)",
            exact_fail == 0,
            format!("{count} pairs, {exact_fail} failures, worst |σ − sorted|g|| {worst_exact:.3e}"),
        ),
    ])
}

/// `Σ r ⊙ t` for a fixed random projection `r`.
fn project(r: &Tensor, t: &Tensor) -> f64 {
    r.data().iter().zip(t.data()).map(|(a, b)| a * b).sum()
}

fn gap_check(worst: &mut f64, analytic: &Tensor, x: &Tensor, f: impl FnMut(&Tensor) -> f64) {
    let numeric = central_difference(x, FD_STEP, f);
    *worst = worst.max(relative_error(analytic, &numeric, 1e-6));
}

/// Central finite differences against every layer's backward pass.
pub fn gradcheck_suite(instances: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::seed_from(seed);
    let mut checks = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (b, i, o) = (1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(6));
        let layer = LinearLayer::new(Tensor::gaussian(&mut rng, &[o, i]), Tensor::gaussian(&mut rng, &[o]))?;
        let x = Tensor::gaussian(&mut rng, &[b, i]);
        let r = Tensor::gaussian(&mut rng, &[b, o]);
        let g = layer.backward(&x, &r)?;
        gap_check(&mut worst, &g.dx, &x, |x| {
            project(&r, &layer.forward(x).expect("shapes"))
        });
        gap_check(&mut worst, &g.dw, &layer.w, |w| {
            let l = LinearLayer::new(w.clone(), layer.b.clone()).expect("shapes");
            project(&r, &l.forward(&x).expect("shapes"))
        });
        gap_check(&mut worst, &g.db, &layer.b, |bias| {
            let l = LinearLayer::new(layer.w.clone(), bias.clone()).expect("shapes");
            project(&r, &l.forward(&x).expect("shapes"))
        });
    }
    checks.push(Check::within("gradcheck linear", worst, FD_TOL, instances));

    let mut worst = 0.0f64;
    for n in 0..instances {
        let k = if n % 2 == 0 { 3 } else { 1 };
        let stride = 1 + rng.below(2);
        let pad = if k == 3 { rng.below(2) } else { 0 };
        let (cin, cout) = (1 + rng.below(3), 1 + rng.below(3));
        let (h, w) = (3 + rng.below(4), 3 + rng.below(4));
        let batch = 1 + rng.below(2);
        let conv = ConvLayer::new(
            Tensor::gaussian(&mut rng, &[cout, cin, k, k]),
            Tensor::gaussian(&mut rng, &[cout]),
            stride,
            pad,
        )?;
        let x = Tensor::gaussian(&mut rng, &[batch, cin, h, w]);
        let y = conv.forward(&x)?;
        let r = Tensor::gaussian(&mut rng, y.shape());
        let g = conv.backward(&x, &r)?;
        gap_check(&mut worst, &g.dx, &x, |x| {
            project(&r, &conv.forward(x).expect("shapes"))
        });
        gap_check(&mut worst, &g.dkernel, &conv.kernel, |kern| {
            let c = ConvLayer::new(kern.clone(), conv.bias.clone(), stride, pad).expect("valid");
            project(&r, &c.forward(&x).expect("shapes"))
        });
        gap_check(&mut worst, &g.dbias, &conv.bias, |bias| {
            let c = ConvLayer::new(conv.kernel.clone(), bias.clone(), stride, pad).expect("valid");
            project(&r, &c.forward(&x).expect("shapes"))
        });
    }
    checks.push(Check::within("gradcheck conv", worst, FD_TOL, instances));

    let mut worst = 0.0f64;
    for _ in 0..instances {
        // Keep every input away from the kink at 0.
        let x = Tensor::gaussian(&mut rng, &[3, 5]).map(|v| if v.abs() < 1e-2 { v + 0.1 } else { v });
        let r = Tensor::gaussian(&mut rng, &[3, 5]);
        let dx = relu_backward(&x, &r)?;
        gap_check(&mut worst, &dx, &x, |x| project(&r, &relu_forward(x)));
    }
    checks.push(Check::within("gradcheck relu", worst, FD_TOL, instances));

    let mut worst = 0.0f64;
    for _ in 0..instances {
        let shape = [1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4)];
        let x = Tensor::gaussian(&mut rng, &shape);
        let r = Tensor::gaussian(&mut rng, &[shape[0], shape[1]]);
        let dx = gap_backward(x.shape(), &r)?;
        gap_check(&mut worst, &dx, &x, |x| project(&r, &gap_forward(x).expect("rank 4")));
    }
    checks.push(Check::within("gradcheck gap", worst, FD_TOL, instances));

    let mut worst = 0.0f64;
    for n in 0..instances {
        let features = 1 + rng.below(4);
        let shape: Vec<usize> = if n % 2 == 0 {
            vec![3 + rng.below(5), features]
        } else {
            vec![2 + rng.below(2), features, 2 + rng.below(2), 1 + rng.below(3)]
        };
        let mut bn = BnState::new(features);
        bn.gamma = Tensor::uniform(&mut rng, &[features], 0.5, 2.0);
        bn.beta = Tensor::gaussian(&mut rng, &[features]);
        let z = Tensor::gaussian(&mut rng, &shape).map(|v| 1.5 * v + 0.3);
        let r = Tensor::gaussian(&mut rng, &shape);
        let base = bn.clone();
        let (_, cache) = bn.forward(&z)?;
        let g = base.backward(&cache, &r)?;
        let eval = |state: &BnState, z: &Tensor| {
            let mut s = state.clone();
            project(&r, &s.forward(z).expect("shapes").0)
        };
        gap_check(&mut worst, &g.dz, &z, |z| eval(&base, z));
        gap_check(&mut worst, &g.dgamma, &base.gamma, |gamma| {
            let mut s = base.clone();
            s.gamma = gamma.clone();
            eval(&s, &z)
        });
        gap_check(&mut worst, &g.dbeta, &base.beta, |beta| {
            let mut s = base.clone();
            s.beta = beta.clone();
            eval(&s, &z)
        });
        // Inference mode uses the stored statistics.
        let mut frozen = base.clone();
        frozen.run_std = Tensor::uniform(&mut rng, &[features], 0.5, 2.0);
        frozen.mode = BnMode::Inference;
        let (_, cache) = frozen.clone().forward(&z)?;
        let g = frozen.backward(&cache, &r)?;
        gap_check(&mut worst, &g.dz, &z, |z| eval(&frozen, z));
    }
    checks.push(Check::within("gradcheck batchnorm", worst, FD_TOL, instances));

    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (b, c) = (1 + rng.below(5), 2 + rng.below(6));
        let logits = Tensor::gaussian(&mut rng, &[b, c]).scale(2.0);
        let labels: Vec<usize> = (0..b).map(|_| rng.below(c)).collect();
        let (_, d) = softmax_xent(&logits, &labels)?;
        gap_check(&mut worst, &d, &logits, |l| softmax_xent(l, &labels).expect("labels").0);
    }
    checks.push(Check::within("gradcheck softmax-xent", worst, FD_TOL, instances));

    checks.push(network_gradcheck(&mut rng, instances)?);
    Ok(checks)
}

/// Whole-model check on a small ConvNet: random parameter coordinates of
/// the end-to-end loss against the assembled backward pass.
fn network_gradcheck(rng: &mut Rng, coords: usize) -> Result<Check> {
    let mut net = Network::convnet(1, 2, 4, rng)?;
    for p in net.params_mut() {
        let noise = Tensor::gaussian(rng, p.value.shape()).scale(0.05);
        *p.value = p.value.map(|v| v * 1.1).add(&noise)?;
    }
    let x = Tensor::gaussian(rng, &[3, 2, 6, 6]);
    let labels: Vec<usize> = (0..3).map(|_| rng.below(4)).collect();
    let (logits, caches) = net.clone().forward(&x)?;
    let (_, d) = softmax_xent(&logits, &labels)?;
    let grads = net.backward(&caches, &d)?;
    let loss = |n: &Network| {
        let mut n = n.clone();
        let (out, _) = n.forward(&x).expect("shapes");
        softmax_xent(&out, &labels).expect("labels").0
    };
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let sizes: Vec<usize> = net.params_mut().iter().map(|p| p.value.len()).collect();
    for _ in 0..coords.max(1) * 3 {
        let pi = rng.below(sizes.len());
        let ei = rng.below(sizes[pi]);
        let mut probe = net.clone();
        let orig = probe.params_mut()[pi].value.data()[ei];
        probe.params_mut()[pi].value.data_mut()[ei] = orig + FD_STEP;
        let plus = loss(&probe);
        probe.params_mut()[pi].value.data_mut()[ei] = orig - FD_STEP;
        let minus = loss(&probe);
        numeric.push((plus - minus) / (2.0 * FD_STEP));
        analytic.push(grads[pi].data()[ei]);
    }
    let n = analytic.len();
    let worst = relative_error(&Tensor::vector(analytic), &Tensor::vector(numeric), 1e-6);
    Ok(Check::within("gradcheck convnet end-to-end", worst, FD_TOL, n))
}

/// Normalized BN gains land in band for the `α` used to clip them.
pub fn bbn_suite(count: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::seed_from(seed);
    let mut checks = Vec::new();
    for eps in [0.2, 1.0] {
        let (lo, hi) = (1.0 / (1.0 + eps), 1.0 + eps);
        let mut worst = 0.0f64;
        for _ in 0..count {
            let n = 1 + rng.below(16);
            let mut bn = BnState::new(n);
            bn.gamma = Tensor::uniform(&mut rng, &[n], 0.05, 4.0);
            bn.run_std = Tensor::uniform(&mut rng, &[n], 0.2, 3.0);
            let alpha = bound_bn_gains(&mut bn, eps, "bn")?;
            for r in bn.gains() {
                let v = r / alpha;
                worst = worst.max(lo - v).max(v - hi);
            }
        }
        checks.push(Check::within(
            &format!("bbn band eps~={eps}"),
            worst.max(0.0),
            1e-12,
            count,
        ));
    }
    let mut bn = BnState::new(3);
    bn.run_std = Tensor::full(&[3], 1.0);
    bn.gamma = Tensor::vector(vec![2.0, 1.0, 0.5]);
    bound_bn_gains(&mut bn, 0.5, "bn")?;
    let want = Tensor::vector(vec![1.75, 1.0, 7.0 / 9.0]);
    checks.push(Check::within(
        "bbn worked example",
        bn.gamma.max_abs_diff(&want),
        1e-12,
        1,
    ));
    Ok(checks)
}

/// Inference BN of `W·x` equals the folded affine map, and the folded
/// matrix of a unit-spectrum `W` respects the gain bound.
pub fn fold_suite(count: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::seed_from(seed);
    let mut worst = 0.0f64;
    let mut bound_fail = 0;
    for _ in 0..count {
        let (n, d, b) = (1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(5));
        let w = Tensor::gaussian(&mut rng, &[n, d]);
        let mut bn = BnState::new(n);
        bn.gamma = Tensor::uniform(&mut rng, &[n], 0.2, 3.0);
        bn.beta = Tensor::gaussian(&mut rng, &[n]);
        bn.run_mean = Tensor::gaussian(&mut rng, &[n]);
        bn.run_std = Tensor::uniform(&mut rng, &[n], 0.3, 2.0);
        bn.mode = BnMode::Inference;
        let x = Tensor::gaussian(&mut rng, &[b, d]);
        let (via_bn, _) = bn.clone().forward(&x.matmul(&w.t())?)?;
        let (wf, bf) = bn_as_linear(&bn, &w)?;
        let folded = LinearLayer::new(wf, bf)?.forward(&x)?;
        worst = worst.max(via_bn.max_abs_diff(&folded));

        let cols = n + rng.below(4);
        let q = orthogonal_init(&mut rng, n, cols);
        let (qf, _) = bn_as_linear(&bn, &q)?;
        let gains = bn.gains();
        let (gmin, gmax) = gains
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), g| (a.min(g.abs()), b.max(g.abs())));
        if svd(&qf)?.s.iter().any(|&s| s < gmin - 1e-9 || s > gmax + 1e-9) {
            bound_fail += 1;
        }
    }
    Ok(vec![
        Check::within("fold equivalence", worst, 1e-12, count),
        Check::new(
            "fold gain bound",
            bound_fail == 0,
            format!("{count} instances, {bound_fail} outside [min gain, max gain]"),
        ),
    ])
}

/// Deep-linear identities: gradient equivalences, norm preservation and
/// the remaining dynamics properties.
pub fn dynamics_suite(count: usize, seed: u64) -> Result<Vec<Check>> {
    let mut checks = gradient_equivalence_suite(count, seed)?;
    checks.extend(norm_preservation_suite(seed)?);
    checks.extend(dynamics_property_suite(count, seed)?);
    Ok(checks)
}

/// Full-matrix deep gradients against the decoupled reconstruction, and the
/// two-layer and decoupled gradients against finite differences.
pub fn gradient_equivalence_suite(count: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::seed_from(seed);
    let mut checks = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..count {
        let depth = 1 + rng.below(10);
        let widths: Vec<usize> = (0..=depth).map(|_| 2 + rng.below(5)).collect();
        let m = *widths.iter().min().expect("nonempty");
        let sigma: Vec<f64> = (0..m).map(|_| rng.uniform(0.2, 3.0)).collect();
        let spec = LinearNetSpec::random_aligned(&mut rng, &widths, (0.5, 1.5), &sigma)?;
        let cov = spec.target_cov();
        for l in 0..depth {
            let full = deep_grad(&spec.weights, &cov, l)?;
            worst = worst.max(full.max_abs_diff(&spec.decoupled_grad_matrix(l)?));
        }
    }
    checks.push(Check::within(
        "deep gradient vs decoupled reconstruction",
        worst,
        1e-9,
        count,
    ));

    let mut worst = 0.0f64;
    for _ in 0..count {
        let (k, nx, nh, ny) = (5 + rng.below(20), 1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4));
        let x = Tensor::gaussian(&mut rng, &[k, nx]);
        let y = Tensor::gaussian(&mut rng, &[k, ny]);
        let w1 = Tensor::gaussian(&mut rng, &[nh, nx]);
        let w2 = Tensor::gaussian(&mut rng, &[ny, nh]);
        let cov = cross_covariance(&x, &y)?;
        let (g1, g2) = two_layer_grads(&w1, &w2, &cov)?;
        let sample_loss = |w1: &Tensor, w2: &Tensor| {
            let pred = x.matmul(&w1.t()).and_then(|h| h.matmul(&w2.t())).expect("shapes");
            let r = y.sub(&pred).expect("shapes").frobenius_norm();
            r * r / (2.0 * k as f64)
        };
        // The descent directions are the negated loss gradients.
        let n1 = central_difference(&w1, FD_STEP, |w| sample_loss(w, &w2)).scale(-1.0);
        let n2 = central_difference(&w2, FD_STEP, |w| sample_loss(&w1, w)).scale(-1.0);
        worst = worst
            .max(relative_error(&g1, &n1, 1e-6))
            .max(relative_error(&g2, &n2, 1e-6));
    }
    checks.push(Check::within(
        "two-layer gradient vs sample-loss finite difference",
        worst,
        1e-6,
        count,
    ));

    let mut worst = 0.0f64;
    for _ in 0..count {
        let (s, t, sigma) = (rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0), rng.uniform(0.2, 3.0));
        let d = decoupled_two_layer(s, t, sigma);
        let e = |s: f64| decoupled_two_layer(s, t, sigma).energy;
        let fd = (e(s + FD_STEP) - e(s - FD_STEP)) / (2.0 * FD_STEP);
        worst = worst.max((d.ds + fd).abs());
        let depth = 10;
        let sv: Vec<f64> = (0..depth).map(|_| rng.uniform(0.9, 1.1)).collect();
        let l = rng.below(depth);
        let g = decoupled_deep_grad(&sv, sigma, l)?;
        let mut probe = sv.clone();
        probe[l] += FD_STEP;
        let up = deep_energy(&probe, sigma);
        probe[l] -= 2.0 * FD_STEP;
        let down = deep_energy(&probe, sigma);
        worst = worst.max((g + (up - down) / (2.0 * FD_STEP)).abs());
    }
    checks.push(Check::within(
        "decoupled gradient vs energy finite difference",
        worst,
        1e-8,
        count,
    ));
    Ok(checks)
}

/// Back-propagated error norms through 20 square aligned layers with unit
/// spectra and with every singular value 1.2.
pub fn norm_preservation_suite(seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::seed_from(seed ^ 0x6e6f726d);
    let mut checks = Vec::new();
    let mut worst_norm = 0.0f64;
    let mut worst_amp = 0.0f64;
    for _ in 0..5 {
        let width = 2 + rng.below(6);
        let widths = vec![width; 21];
        let rotations: Vec<Tensor> = widths.iter().map(|&n| orthogonal_init(&mut rng, n, n)).collect();
        let top: Vec<f64> = (0..width).map(|_| rng.normal()).collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let unit = LinearNetSpec::new(
            widths.clone(),
            rotations.clone(),
            vec![vec![1.0; width]; 20],
            vec![1.0; width],
        )?;
        let e = backprop_error(&unit, 0, &top)?;
        worst_norm = worst_norm.max((norm(&e.grad) / norm(&top) - 1.0).abs());
        let grown = LinearNetSpec::new(widths, rotations, vec![vec![1.2; width]; 20], vec![1.0; width])?;
        let e = backprop_error(&grown, 0, &top)?;
        let want = 1.2f64.powi(20);
        worst_amp = worst_amp.max((norm(&e.grad) / norm(&top) / want - 1.0).abs());
        for a in &e.amplification {
            worst_amp = worst_amp.max((a / want - 1.0).abs());
        }
    }
    checks.push(Check::within(
        "norm preservation, L=20 unit spectra",
        worst_norm,
        1e-10,
        5,
    ));
    checks.push(Check::within("amplification 1.2^20, L=20", worst_amp, 1e-6, 5));
    Ok(checks)
}

/// Band control of per-direction amplification, component sums and energy
/// descent under small explicit steps.
pub fn dynamics_property_suite(count: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::seed_from(seed ^ 0x64796e);
    let mut checks = Vec::new();

    let mut worst = 0.0f64;
    let mut sum_err = 0.0f64;
    for _ in 0..count {
        let eps = rng.uniform(0.01, 1.0);
        let depth = 1 + rng.below(12);
        let widths: Vec<usize> = (0..=depth).map(|_| 2 + rng.below(4)).collect();
        let m = *widths.iter().min().expect("nonempty");
        let range = (1.0 / (1.0 + eps), 1.0 + eps);
        let spec = LinearNetSpec::random_aligned(&mut rng, &widths, range, &vec![1.0; m])?;
        let l = rng.below(depth + 1);
        let top: Vec<f64> = (0..widths[depth]).map(|_| rng.normal()).collect();
        let e = backprop_error(&spec, l, &top)?;
        let span = (1.0 + eps).powi((depth - l) as i32);
        for a in &e.amplification {
            worst = worst.max(1.0 / span - a).max(a - span);
        }
        let mut total = vec![0.0; e.grad.len()];
        for c in &e.components {
            total.iter_mut().zip(c).for_each(|(t, v)| *t += v);
        }
        sum_err = sum_err.max(Tensor::vector(total).max_abs_diff(&Tensor::vector(e.grad.clone())));
    }
    checks.push(Check::within(
        "band control of component amplification",
        worst.max(0.0),
        1e-12,
        count,
    ));
    checks.push(Check::within(
        "components sum to the product path",
        sum_err,
        1e-9,
        count,
    ));

    let mut increases = 0;
    for _ in 0..count {
        let depth = 2 + rng.below(3);
        let mut s: Vec<f64> = (0..depth).map(|_| rng.uniform(0.5, 2.0)).collect();
        let sigma = rng.uniform(0.5, 2.0);
        let before = deep_energy(&s, sigma);
        let g = (0..depth)
            .map(|l| decoupled_deep_grad(&s, sigma, l))
            .collect::<Result<Vec<_>>>()?;
        s.iter_mut().zip(&g).for_each(|(v, d)| *v += 1e-3 * d);
        if deep_energy(&s, sigma) > before {
            increases += 1;
        }
    }
    checks.push(Check::new(
        "energy descent with step 1e-3",
        increases == 0,
        format!("{count} instances, {increases} energy increases"),
    ));
    Ok(checks)
}
