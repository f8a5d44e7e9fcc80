//! The work behind each `svb` subcommand, kept free of argument parsing.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::checkpoint::{load_checkpoint, save_checkpoint};
use crate::harness::config::{parse_config, DatasetSpec, RunConfig};
use crate::harness::dataset::{synth_digits, Dataset};
use crate::harness::formats::{load_cifar_dir, load_mnist_dir};
use crate::lineardyn::{run_experiment, Experiment, ExperimentRow, DYNAMICS_HEADER};
use crate::network::Network;
use crate::optim::{train, CsvSink, TrainReport};
use crate::rng::Rng;
use crate::spectral::svd;
use crate::tensor::Tensor;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.svbc";

/// Load the train and test splits named by `spec`.
pub fn load_dataset(spec: &DatasetSpec) -> Result<(Dataset, Dataset)> {
    match spec {
        DatasetSpec::Idx { dir, train, test } => load_mnist_dir(dir, *train, *test),
        DatasetSpec::Cifar { dir, train, test } => load_cifar_dir(dir, *train, *test),
        DatasetSpec::SynthDigits { train, test, style } => {
            let mut rng = Rng::seed_from(style.wrapping_add(1));
            synth_digits(&mut rng, *train, *test, *style)
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

/// Train per `config` (seed optionally overridden), writing the metrics CSV
/// and final checkpoint into `out`.
pub fn run_train(config: &RunConfig, seed: Option<u64>, out: &Path) -> Result<TrainOutcome> {
    let (train_set, test_set) = load_dataset(&config.dataset)?;
    let mut cfg = config.resolved(train_set.len());
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let classes = train_set
        .classes()
        .ok_or_else(|| Error::Input("training data has no class labels".into()))?;
    let mut net = Network::build(
        &config.arch,
        train_set.sample_shape(),
        classes,
        &mut Rng::seed_from(cfg.seed),
    )?;
    fs::create_dir_all(out)?;
    let metrics = out.join(METRICS_FILE);
    let checkpoint = out.join(CHECKPOINT_FILE);
    let mut sink = CsvSink::new(BufWriter::new(File::create(&metrics)?));
    let report = train(&mut net, &train_set, Some(&test_set), &cfg, &mut sink)?;
    sink.into_inner().flush()?;
    save_checkpoint(&checkpoint, &net, &report.state)?;
    Ok(TrainOutcome {
        report,
        metrics,
        checkpoint,
    })
}

/// Read and parse a config file.
pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Run the deep-linear experiment and write its CSV.
pub fn run_lineardyn(exp: &Experiment, out: &Path) -> Result<Vec<ExperimentRow>> {
    let rows = run_experiment(exp)?;
    let mut w = BufWriter::new(File::create(out)?);
    writeln!(w, "{DYNAMICS_HEADER}")?;
    for r in &rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    w.flush()?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramRow {
    pub layer: String,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub frac: f64,
}

pub const SPECTRA_HEADER: &str = "layer,bin_lo,bin_hi,frac";

/// Bin width shared by every layer: bins start at 0, the range reaches at
/// least `max(2, largest value)`, and 1.0 sits in the middle of a bin
/// whenever there are enough bins for that.
pub fn histogram_width(bins: usize, largest: f64) -> f64 {
    let span = largest.max(2.0);
    let t = bins as f64 / span - 0.5;
    if t >= 0.0 {
        1.0 / (t.floor() + 0.5)
    } else {
        span / bins as f64
    }
}

/// Per-layer fraction of singular values falling in each bin.
pub fn spectrum_histogram(layers: &[(String, Vec<f64>)], bins: usize) -> Result<Vec<HistogramRow>> {
    if bins == 0 {
        return Err(Error::Input("need at least one bin".into()));
    }
    let largest = layers.iter().flat_map(|(_, s)| s.iter().copied()).fold(0.0, f64::max);
    let h = histogram_width(bins, largest);
    let mut rows = Vec::with_capacity(layers.len() * bins);
    for (name, values) in layers {
        let mut counts = vec![0usize; bins];
        for &v in values {
            counts[((v / h).floor() as usize).min(bins - 1)] += 1;
        }
        let total = values.len().max(1) as f64;
        for (b, &c) in counts.iter().enumerate() {
            rows.push(HistogramRow {
                layer: name.clone(),
                bin_lo: b as f64 * h,
                bin_hi: (b + 1) as f64 * h,
                frac: c as f64 / total,
            });
        }
    }
    Ok(rows)
}

/// Singular values of every weight matrix stored in a checkpoint; conv
/// kernels are taken in their `C_out × (C_in·k·k)` view.
pub fn checkpoint_spectra(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let ck = load_checkpoint(path)?;
    ck.weight_tensors()
        .map(|(name, t)| {
            let m = Tensor::new(&[t.shape()[0], t.len() / t.shape()[0]], t.data().to_vec())?;
            Ok((name.to_string(), svd(&m).map_err(|e| e.in_layer(name))?.s))
        })
        .collect()
}

/// Histogram a checkpoint's spectra into `out`.
pub fn run_spectra(checkpoint: &Path, bins: usize, out: &Path) -> Result<Vec<HistogramRow>> {
    let rows = spectrum_histogram(&checkpoint_spectra(checkpoint)?, bins)?;
    let mut w = BufWriter::new(File::create(out)?);
    writeln!(w, "{SPECTRA_HEADER}")?;
    for r in &rows {
        writeln!(w, "{},{},{},{}", r.layer, r.bin_lo, r.bin_hi, r.frac)?;
    }
    w.flush()?;
    Ok(rows)
}
