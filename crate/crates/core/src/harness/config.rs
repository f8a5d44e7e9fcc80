//! `key = value` run configuration.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::network::Arch;
use crate::optim::TrainConfig;

/// Where training data comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Idx {
        dir: PathBuf,
        train: Option<usize>,
        test: Option<usize>,
    },
    Cifar {
        dir: PathBuf,
        train: Option<usize>,
        test: Option<usize>,
    },
    /// Stroke-drawn digit stand-in, see [`crate::harness::dataset::synth_digits`].
    SynthDigits { train: usize, test: usize, style: u64 },
}

fn parse_options(parts: &[&str]) -> Result<Vec<(String, String)>> {
    parts
        .iter()
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("dataset option {p:?} is not key=value")))
        })
        .collect()
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl FromStr for DatasetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').ok_or_else(|| {
            Error::Config(format!(
                "dataset {s:?} should look like idx:<dir>, cifar:<dir> or synth:digits"
            ))
        })?;
        let mut parts: Vec<&str> = rest.split(',').map(str::trim).collect();
        let head = parts.remove(0);
        let opts = parse_options(&parts)?;
        let mut train = None;
        let mut test = None;
        let mut style = 0u64;
        for (k, v) in &opts {
            match k.as_str() {
                "train" => train = Some(parse_num(k, v)?),
                "test" => test = Some(parse_num(k, v)?),
                "style" if kind == "synth" => style = parse_num(k, v)?,
                _ => return Err(Error::Config(format!("unknown dataset option {k:?}"))),
            }
        }
        match kind {
            "idx" | "cifar" if head.is_empty() => Err(Error::Config(format!("{kind} dataset needs a directory"))),
            "idx" => Ok(DatasetSpec::Idx {
                dir: head.into(),
                train,
                test,
            }),
            "cifar" => Ok(DatasetSpec::Cifar {
                dir: head.into(),
                train,
                test,
            }),
            "synth" if head == "digits" => Ok(DatasetSpec::SynthDigits {
                train: train.unwrap_or(8000),
                test: test.unwrap_or(2000),
                style,
            }),
            "synth" => Err(Error::Config(format!("unknown synthetic dataset {head:?}"))),
            other => Err(Error::Config(format!("unknown dataset kind {other:?}"))),
        }
    }
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sizes = |f: &mut fmt::Formatter<'_>, train: &Option<usize>, test: &Option<usize>| {
            if let Some(n) = train {
                write!(f, ",train={n}")?;
            }
            if let Some(n) = test {
                write!(f, ",test={n}")?;
            }
            Ok(())
        };
        match self {
            DatasetSpec::Idx { dir, train, test } => {
                write!(f, "idx:{}", dir.display())?;
                sizes(f, train, test)
            }
            DatasetSpec::Cifar { dir, train, test } => {
                write!(f, "cifar:{}", dir.display())?;
                sizes(f, train, test)
            }
            DatasetSpec::SynthDigits { train, test, style } => {
                write!(f, "synth:digits,train={train},test={test},style={style}")
            }
        }
    }
}

/// SVB cadence as written in the config.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvbCadence {
    Iterations(u64),
    /// Once per epoch, `⌈K / batch_size⌉` iterations.
    Epoch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub cadence: SvbCadence,
    pub arch: Arch,
    pub dataset: DatasetSpec,
}

impl RunConfig {
    /// Training config with the cadence resolved for `samples` training
    /// examples.
    pub fn resolved(&self, samples: usize) -> TrainConfig {
        let mut c = self.train.clone();
        c.t_svb = match self.cadence {
            SvbCadence::Iterations(n) => n,
            SvbCadence::Epoch => c.iterations_per_epoch(samples),
        };
        c
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

/// Parse the config text. Unknown or repeated keys are errors; `arch` and
/// `dataset` are required, every training key defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut train = TrainConfig::default();
    let mut cadence = SvbCadence::Iterations(train.t_svb);
    let mut arch = None;
    let mut dataset = None;
    let mut seen = HashSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = |e: Error| {
            Error::Config(format!(
                "line {}: {}",
                lineno + 1,
                e.to_string().trim_start_matches("config error: ")
            ))
        };
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| at(Error::Config(format!("expected key = value, got {line:?}"))))?;
        if !seen.insert(key.to_string()) {
            return Err(at(Error::Config(format!("duplicate key {key:?}"))));
        }
        let r: Result<()> = (|| {
            match key {
                "lr_start" => train.lr_start = parse_num(key, value)?,
                "lr_end" => train.lr_end = parse_num(key, value)?,
                "lr_decay_every_epochs" => train.lr_decay_every_epochs = parse_num(key, value)?,
                "epochs" => train.epochs = parse_num(key, value)?,
                "batch_size" => train.batch_size = parse_num(key, value)?,
                "momentum" => train.momentum = parse_num(key, value)?,
                "weight_decay" => train.weight_decay = parse_num(key, value)?,
                "t_svb" => {
                    cadence = if value == "epoch" {
                        SvbCadence::Epoch
                    } else {
                        SvbCadence::Iterations(parse_num(key, value)?)
                    }
                }
                "epsilon" => train.epsilon = parse_num(key, value)?,
                "epsilon_tilde" => train.epsilon_tilde = parse_num(key, value)?,
                "seed" => train.seed = parse_num(key, value)?,
                "svb_include_classifier" => train.svb_include_classifier = parse_bool(key, value)?,
                "wall_clock" => train.wall_clock = parse_bool(key, value)?,
                "arch" => arch = Some(value.parse::<Arch>()?),
                "dataset" => dataset = Some(value.parse::<DatasetSpec>()?),
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            }
            Ok(())
        })();
        r.map_err(at)?;
    }
    train.validate()?;
    Ok(RunConfig {
        train,
        cadence,
        arch: arch.ok_or_else(|| Error::Config("missing key \"arch\"".into()))?,
        dataset: dataset.ok_or_else(|| Error::Config("missing key \"dataset\"".into()))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# desk-scale run
arch = mlp:784,256,10
dataset = synth:digits,train=100,test=50,style=3
lr_start = 0.1   # trailing comment
lr_end = 0.001
epochs = 3
t_svb = epoch
epsilon = 0.5
epsilon_tilde = -1
seed = 42
";

    #[test]
    fn parses_sample() {
        let c = parse_config(SAMPLE).unwrap();
        assert_eq!(c.arch, "mlp:784,256,10".parse().unwrap());
        assert_eq!(
            c.dataset,
            DatasetSpec::SynthDigits {
                train: 100,
                test: 50,
                style: 3
            }
        );
        assert_eq!(c.train.seed, 42);
        assert_eq!(c.cadence, SvbCadence::Epoch);
        assert_eq!(c.resolved(50_000).t_svb, 391);
        assert_eq!(c.train.momentum, 0.9);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let err = parse_config("arch = mlp:2,2\ndataset = synth:digits\nlearning_rate = 1").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(parse_config("arch = mlp:2,2\narch = mlp:2,2").is_err());
        assert!(parse_config("dataset = synth:digits").is_err());
        assert!(parse_config("arch = mlp:2,2\ndataset = synth:digits\nmomentum = 1.5").is_err());
        assert!(parse_config("arch mlp").is_err());
    }

    #[test]
    fn dataset_specs() {
        assert_eq!(
            "idx:/data/mnist,train=8000,test=2000".parse::<DatasetSpec>().unwrap(),
            DatasetSpec::Idx {
                dir: "/data/mnist".into(),
                train: Some(8000),
                test: Some(2000)
            }
        );
        for s in ["cifar:/d", "idx:/x,train=5", "synth:digits,train=10,test=5,style=2"] {
            assert_eq!(s.parse::<DatasetSpec>().unwrap().to_string(), s);
        }
        for bad in ["idx:", "mnist:/x", "synth:linear", "idx:/x,frac=2", "cifar:/d,train"] {
            assert!(bad.parse::<DatasetSpec>().is_err(), "{bad}");
        }
    }
}
