//! Momentum SGD, the learning-rate schedule, the SVB/BBN projections and
//! the training loop.

use std::io::Write;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::harness::dataset::Dataset;
use crate::network::{softmax_xent, BnMode, BnState, Layer, Network};
use crate::rng::Rng;
use crate::spectral::{bound_with_factors, svd, SpectralBand};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub lr_decay_every_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Iterations between SVB applications; 0 disables SVB.
    pub t_svb: u64,
    pub epsilon: f64,
    /// BBN band; negative disables BBN.
    pub epsilon_tilde: f64,
    pub seed: u64,
    /// Whether the final classifier matrix is bounded along with the rest.
    pub svb_include_classifier: bool,
    /// Record real elapsed time in `wall_ms`; off keeps metrics reproducible.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_start: 0.5,
            lr_end: 0.001,
            lr_decay_every_epochs: 2,
            epochs: 160,
            batch_size: 128,
            momentum: 0.9,
            weight_decay: 1e-4,
            t_svb: 391,
            epsilon: 0.05,
            epsilon_tilde: -1.0,
            seed: 0,
            svb_include_classifier: true,
            wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end) {
            return bad(format!(
                "need lr_start ≥ lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return bad(format!("epsilon must be ≥ 0, got {}", self.epsilon));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be ≥ 0, got {}", self.weight_decay));
        }
        if self.epsilon_tilde.is_nan() {
            return bad("epsilon_tilde is NaN".into());
        }
        if self.epochs == 0 || self.batch_size == 0 || self.lr_decay_every_epochs == 0 {
            return bad("epochs, batch_size and lr_decay_every_epochs must be positive".into());
        }
        Ok(())
    }

    pub fn bbn_enabled(&self) -> bool {
        self.epsilon_tilde >= 0.0
    }

    pub fn iterations_per_epoch(&self, samples: usize) -> u64 {
        samples.div_ceil(self.batch_size) as u64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub velocities: Vec<Tensor>,
    /// SGD steps taken so far.
    pub iteration: u64,
    /// Completed epochs.
    pub epoch: u64,
}

impl OptState {
    pub fn new(net: &mut Network) -> Self {
        OptState {
            velocities: net
                .params_mut()
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
            iteration: 0,
            epoch: 0,
        }
    }
}

/// One heavy-ball step over named parameters:
/// `v ← m·v − lr·(g + wd·θ)`, `θ ← θ + v`. Nothing is modified if any
/// gradient is non-finite.
pub fn sgd_momentum_step(
    params: &mut [(String, &mut Tensor)],
    grads: &[Tensor],
    state: &mut OptState,
    lr: f64,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocities.len() {
        return Err(Error::Input(format!(
            "{} parameters, {} gradients, {} velocities",
            params.len(),
            grads.len(),
            state.velocities.len()
        )));
    }
    for ((name, value), g) in params.iter().zip(grads) {
        if value.shape() != g.shape() {
            return Err(Error::shape("sgd step", g.shape(), value.shape()).in_layer(name));
        }
        if !g.is_finite() {
            return Err(Error::Divergence {
                iteration: state.iteration,
                detail: format!("non-finite gradient in {name}"),
            });
        }
    }
    let (m, wd) = (config.momentum, config.weight_decay);
    for (((_, theta), g), v) in params.iter_mut().zip(grads).zip(&mut state.velocities) {
        for ((t, &gi), vi) in theta.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = m * *vi - lr * (gi + wd * *t);
            *t += *vi;
        }
    }
    state.iteration += 1;
    Ok(())
}

/// Geometric decay from `lr_start` to `lr_end`, stepping every
/// `lr_decay_every_epochs` epochs; the final interval runs at `lr_end`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    let every = config.lr_decay_every_epochs.max(1);
    let intervals = config.epochs.saturating_sub(1) / every;
    if intervals == 0 {
        return config.lr_start;
    }
    let k = (epoch / every).min(intervals);
    if k == intervals {
        return config.lr_end;
    }
    let f = (config.lr_end / config.lr_start).powf(1.0 / intervals as f64);
    config.lr_start * f.powi(k as i32)
}

/// Spectrum extremes observed while projecting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvbReport {
    pub matrices: usize,
    pub sv_min_before: f64,
    pub sv_max_before: f64,
}

/// Replace every weight matrix by its singular-value-bounded version.
pub fn apply_svb(net: &mut Network, epsilon: f64, include_classifier: bool) -> Result<SvbReport> {
    let band = SpectralBand::new(epsilon)?;
    let mut report = SvbReport {
        matrices: 0,
        sv_min_before: f64::INFINITY,
        sv_max_before: 0.0,
    };
    for m in net.bounded_matrices(include_classifier) {
        let (bounded, f) = bound_with_factors(&m.matrix, band).map_err(|e| e.in_layer(&m.name))?;
        report.sv_min_before = report.sv_min_before.min(f.min_singular_value());
        report.sv_max_before = report.sv_max_before.max(f.max_singular_value());
        report.matrices += 1;
        net.set_bounded_matrix(m.layer, &bounded)
            .map_err(|e| e.in_layer(&m.name))?;
    }
    Ok(report)
}

/// Clip one BN layer's gains: with `α = mean(γᵢ/ςᵢ)`, each ratio
/// `γᵢ/(α·ςᵢ)` is pulled into `[1/(1+ε̃), 1+ε̃]` by rewriting `γᵢ`.
/// Returns the `α` used.
pub fn bound_bn_gains(bn: &mut BnState, epsilon_tilde: f64, layer: &str) -> Result<f64> {
    let ratios = bn.gains();
    let alpha = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
    if !(alpha > 0.0) {
        return Err(Error::DegenerateScale {
            layer: layer.to_string(),
            alpha,
        });
    }
    let upper = 1.0 + epsilon_tilde;
    let lower = 1.0 / upper;
    let std = bn.run_std.data().to_vec();
    for ((gamma, r), s) in bn.gamma.data_mut().iter_mut().zip(&ratios).zip(&std) {
        let normalized = r / alpha;
        if normalized > upper {
            *gamma = alpha * s * upper;
        } else if normalized < lower {
            *gamma = alpha * s * lower;
        }
    }
    Ok(alpha)
}

/// Apply [`bound_bn_gains`] to every BN layer, returning each layer's `α`.
pub fn apply_bbn(net: &mut Network, epsilon_tilde: f64) -> Result<Vec<f64>> {
    if !(epsilon_tilde >= 0.0) {
        return Err(Error::Config(format!("BBN band must be ≥ 0, got {epsilon_tilde}")));
    }
    let mut alphas = Vec::new();
    for i in 0..net.layers.len() {
        let name = net.layer_name(i);
        if let Layer::BatchNorm(bn) = &mut net.layers[i] {
            alphas.push(bound_bn_gains(bn, epsilon_tilde, &name)?);
        }
    }
    Ok(alphas)
}

/// Smallest and largest singular value over all weight matrices.
pub fn spectrum_extremes(net: &Network) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for m in net.bounded_matrices(true) {
        let f = svd(&m.matrix).map_err(|e| e.in_layer(&m.name))?;
        lo = lo.min(f.min_singular_value());
        hi = hi.max(f.max_singular_value());
    }
    Ok((lo, hi))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub iter: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub sv_min: f64,
    pub sv_max: f64,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "epoch,iter,lr,train_loss,train_acc,test_loss,test_acc,sv_min,sv_max,wall_ms";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.iter,
            self.lr,
            self.train_loss,
            self.train_acc,
            self.test_loss,
            self.test_acc,
            self.sv_min,
            self.sv_max,
            self.wall_ms
        )
    }
}

pub trait MetricSink {
    fn record(&mut self, metrics: &EpochMetrics) -> Result<()>;
}

impl MetricSink for Vec<EpochMetrics> {
    fn record(&mut self, metrics: &EpochMetrics) -> Result<()> {
        self.push(metrics.clone());
        Ok(())
    }
}

/// Appends one CSV row per epoch, writing the header first.
pub struct CsvSink<W: Write> {
    out: W,
    wrote_header: bool,
}

impl<W: Write> CsvSink<W> {
    pub fn new(out: W) -> Self {
        CsvSink {
            out,
            wrote_header: false,
        }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> MetricSink for CsvSink<W> {
    fn record(&mut self, metrics: &EpochMetrics) -> Result<()> {
        if !self.wrote_header {
            writeln!(self.out, "{METRICS_HEADER}")?;
            self.wrote_header = true;
        }
        writeln!(self.out, "{}", metrics.csv_row())?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub state: OptState,
    pub svb_calls: u64,
    pub bbn_calls: u64,
    /// Spectrum extremes measured right after each SVB call.
    pub post_svb_extremes: Vec<(f64, f64)>,
}

/// Mean loss and accuracy over a labelled dataset in inference mode.
pub fn evaluate(net: &mut Network, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    let n = data.len();
    if n == 0 {
        return Ok((f64::NAN, f64::NAN));
    }
    net.set_mode(BnMode::Inference);
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch(chunk, None)?;
        let logits = net.predict(&x)?;
        let (loss, _) = softmax_xent(&logits, &labels)?;
        loss_sum += loss * chunk.len() as f64;
        correct += count_correct(&logits, &labels);
    }
    Ok((loss_sum / n as f64, correct as f64 / n as f64))
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &label)| {
            let row = logits.row(i);
            let best = row
                .iter()
                .enumerate()
                .fold(0, |best, (j, &v)| if v > row[best] { j } else { best });
            best == label
        })
        .count()
}

/// Seed offset separating the shuffling stream from weight initialization.
const SHUFFLE_STREAM: u64 = 0x0053_4855_4646_4c45;

/// Minibatch SGD with momentum, projecting with SVB (and then BBN, when
/// enabled) whenever the iteration count reaches a multiple of `t_svb`.
pub fn train(
    net: &mut Network,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    config: &TrainConfig,
    sink: &mut dyn MetricSink,
) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if train_set.labels().is_none() {
        return Err(Error::Input("training needs class labels".into()));
    }
    let mut state = OptState::new(net);
    let mut rng = Rng::seed_from(config.seed ^ SHUFFLE_STREAM);
    let mut report = TrainReport {
        epochs: Vec::new(),
        state: state.clone(),
        svb_calls: 0,
        bbn_calls: 0,
        post_svb_extremes: Vec::new(),
    };
    let start = Instant::now();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..config.epochs {
        let lr = lr_at(epoch, config);
        net.set_mode(BnMode::Training);
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let (x, labels) = train_set.batch(chunk, Some(&mut rng))?;
            let (logits, caches) = net.forward(&x)?;
            let (loss, dlogits) = softmax_xent(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    iteration: state.iteration,
                    detail: format!("loss is {loss}"),
                });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += count_correct(&logits, &labels);
            let grads = net.backward(&caches, &dlogits)?;
            let mut params: Vec<(String, &mut Tensor)> =
                net.params_mut().into_iter().map(|p| (p.name, p.value)).collect();
            sgd_momentum_step(&mut params, &grads, &mut state, lr, config)?;

            if config.t_svb > 0 && state.iteration.is_multiple_of(config.t_svb) {
                apply_svb(net, config.epsilon, config.svb_include_classifier)?;
                report.svb_calls += 1;
                if config.bbn_enabled() && net.has_batch_norm() {
                    apply_bbn(net, config.epsilon_tilde)?;
                    report.bbn_calls += 1;
                }
                report.post_svb_extremes.push(spectrum_extremes(net)?);
            }
        }
        state.epoch += 1;
        let n = train_set.len() as f64;
        let (test_loss, test_acc) = match test_set {
            Some(t) => evaluate(net, t, config.batch_size)?,
            None => (f64::NAN, f64::NAN),
        };
        net.set_mode(BnMode::Training);
        let (sv_min, sv_max) = spectrum_extremes(net)?;
        let metrics = EpochMetrics {
            epoch: state.epoch,
            iter: state.iteration,
            lr,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            test_loss,
            test_acc,
            sv_min,
            sv_max,
            wall_ms: if config.wall_clock {
                start.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        sink.record(&metrics)?;
        report.epochs.push(metrics);
    }
    report.state = state;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{BnState, LinearLayer};

    fn cfg(momentum: f64, wd: f64) -> TrainConfig {
        TrainConfig {
            momentum,
            weight_decay: wd,
            ..TrainConfig::default()
        }
    }

    fn step(theta: &mut Tensor, g: &Tensor, state: &mut OptState, lr: f64, c: &TrainConfig) {
        let mut params = vec![("p".to_string(), theta)];
        sgd_momentum_step(&mut params, std::slice::from_ref(g), state, lr, c).unwrap();
    }

    fn fresh(shape: &[usize]) -> OptState {
        OptState {
            velocities: vec![Tensor::zeros(shape)],
            iteration: 0,
            epoch: 0,
        }
    }

    #[test]
    fn plain_sgd_without_momentum() {
        let mut theta = Tensor::vector(vec![1.0, 2.0]);
        let g = Tensor::vector(vec![0.5, -1.0]);
        let mut st = fresh(&[2]);
        step(&mut theta, &g, &mut st, 0.1, &cfg(0.0, 0.0));
        assert_eq!(theta.data(), &[1.0 - 0.05, 2.0 + 0.1]);
        assert_eq!(st.iteration, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut theta = Tensor::vector(vec![3.0]);
        let mut st = fresh(&[1]);
        step(&mut theta, &Tensor::zeros(&[1]), &mut st, 0.5, &cfg(0.9, 0.0));
        assert_eq!(theta.data(), &[3.0]);
    }

    #[test]
    fn two_momentum_steps_displace_by_2_9() {
        let (lr, g) = (0.1, 0.7);
        let mut theta = Tensor::vector(vec![0.0]);
        let mut st = fresh(&[1]);
        let c = cfg(0.9, 0.0);
        step(&mut theta, &Tensor::vector(vec![g]), &mut st, lr, &c);
        step(&mut theta, &Tensor::vector(vec![g]), &mut st, lr, &c);
        assert!((theta.data()[0] + lr * g * 2.9).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_divergence_and_atomic() {
        let mut a = Tensor::vector(vec![1.0]);
        let mut b = Tensor::vector(vec![1.0]);
        let mut st = OptState {
            velocities: vec![Tensor::zeros(&[1]), Tensor::zeros(&[1])],
            iteration: 7,
            epoch: 0,
        };
        let mut params = vec![("first".to_string(), &mut a), ("second".to_string(), &mut b)];
        let grads = [Tensor::vector(vec![1.0]), Tensor::vector(vec![f64::NAN])];
        let err = sgd_momentum_step(&mut params, &grads, &mut st, 0.1, &cfg(0.9, 0.0)).unwrap_err();
        match err {
            Error::Divergence { iteration, detail } => {
                assert_eq!(iteration, 7);
                assert!(detail.contains("second"));
            }
            other => panic!("{other}"),
        }
        assert_eq!(a.data(), &[1.0]);
    }

    #[test]
    fn lr_schedule_endpoints() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, &c), 0.5);
        assert_eq!(lr_at(158, &c), 0.001);
        assert_eq!(lr_at(159, &c), 0.001);
        let f = lr_at(2, &c) / lr_at(0, &c);
        assert!((f - (0.001f64 / 0.5).powf(1.0 / 79.0)).abs() < 1e-15);
        assert!((f - 0.924_348_7).abs() < 1e-7);
        assert!((lr_at(156, &c) * f - 0.001).abs() < 1e-12 * 0.001);
        let mut prev = f64::INFINITY;
        for e in 0..160 {
            assert!(lr_at(e, &c) <= prev);
            prev = lr_at(e, &c);
        }
    }

    #[test]
    fn lr_single_interval_is_constant() {
        let c = TrainConfig {
            epochs: 2,
            lr_decay_every_epochs: 2,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(1, &c), 0.5);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                lr_end: 0.0,
                ..Default::default()
            },
            TrainConfig {
                lr_start: 0.0001,
                ..Default::default()
            },
            TrainConfig {
                momentum: 1.0,
                ..Default::default()
            },
            TrainConfig {
                epsilon: -0.1,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn bbn_worked_example() {
        let mut bn = BnState::new(3);
        bn.run_std = Tensor::full(&[3], 1.0);
        bn.gamma = Tensor::vector(vec![2.0, 1.0, 0.5]);
        let alpha = bound_bn_gains(&mut bn, 0.5, "bn").unwrap();
        assert!((alpha - 7.0 / 6.0).abs() < 1e-15);
        let want = [1.75, 1.0, 7.0 / 9.0];
        for (g, w) in bn.gamma.data().iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn bbn_equal_ratios_unchanged() {
        let mut bn = BnState::new(4);
        bn.run_std = Tensor::vector(vec![1.0, 2.0, 0.5, 4.0]);
        bn.gamma = bn.run_std.scale(1.3);
        let before = bn.gamma.clone();
        let alpha = bound_bn_gains(&mut bn, 0.1, "bn").unwrap();
        assert!((alpha - 1.3).abs() < 1e-14);
        assert!(bn.gamma.max_abs_diff(&before) < 1e-14);
    }

    #[test]
    fn bbn_degenerate_alpha() {
        let mut bn = BnState::new(2);
        bn.gamma = Tensor::vector(vec![1.0, -1.0]);
        assert!(matches!(
            bound_bn_gains(&mut bn, 0.5, "layer3.bn"),
            Err(Error::DegenerateScale { .. })
        ));
    }

    #[test]
    fn svb_on_single_layer() {
        let w = Tensor::diag_rect(2, 3, &[2.0, 0.3]);
        let mut net = Network::new(vec![Layer::Linear(LinearLayer::new(w, Tensor::zeros(&[2])).unwrap())]);
        let report = apply_svb(&mut net, 0.5, true).unwrap();
        assert_eq!(report.matrices, 1);
        let s = svd(&net.bounded_matrices(true)[0].matrix).unwrap().s;
        assert!((s[0] - 1.5).abs() < 1e-12 && (s[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn svb_keeps_orthogonal_network() {
        let mut rng = Rng::seed_from(3);
        let mut net = Network::convnet(1, 3, 10, &mut rng).unwrap();
        let before = net.clone();
        apply_svb(&mut net, 0.05, true).unwrap();
        for (a, b) in net.state_tensors().iter().zip(before.state_tensors()) {
            assert!(a.1.distance(b.1) < 1e-9, "{}", a.0);
        }
    }

    #[test]
    fn csv_sink_writes_header_once() {
        let mut sink = CsvSink::new(Vec::new());
        let m = EpochMetrics {
            epoch: 1,
            iter: 3,
            lr: 0.5,
            train_loss: 1.0,
            train_acc: 0.25,
            test_loss: 2.0,
            test_acc: 0.5,
            sv_min: 1.0,
            sv_max: 1.0,
            wall_ms: 0,
        };
        sink.record(&m).unwrap();
        sink.record(&m).unwrap();
        let text = String::from_utf8(sink.into_inner()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines[1], "1,3,0.5,1,0.25,2,0.5,1,1,0");
    }
}
