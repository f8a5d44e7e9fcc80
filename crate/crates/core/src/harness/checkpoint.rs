//! Flat binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SVBC" | version: u32 | count: u32 | count × record
//! record = name_len: u32 | name bytes | ndim: u32 | dims: u32 × ndim | f64 × ∏dims
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::Network;
use crate::optim::OptState;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SVBC";
pub const CHECKPOINT_VERSION: u32 = 1;

const VELOCITY_PREFIX: &str = "velocity.";
const ITERATION: &str = "opt.iteration";
const EPOCH: &str = "opt.epoch";

/// Ordered named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Format {
                offset: self.pos as u64,
                detail: format!("{what}: need {n} bytes, {} remain", self.bytes.len() - self.pos),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

impl Checkpoint {
    /// Network state followed by optimizer velocities and counters.
    pub fn capture(net: &Network, opt: &OptState) -> Self {
        let mut tensors: Vec<(String, Tensor)> = net.state_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
        let mut net = net.clone();
        for (p, v) in net.params_mut().iter().zip(&opt.velocities) {
            tensors.push((format!("{VELOCITY_PREFIX}{}", p.name), v.clone()));
        }
        tensors.push((ITERATION.into(), Tensor::vector(vec![opt.iteration as f64])));
        tensors.push((EPOCH.into(), Tensor::vector(vec![opt.epoch as f64])));
        Checkpoint { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Weight tensors (linear weights and conv kernels) in stored order.
    pub fn weight_tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors
            .iter()
            .filter(|(n, _)| !n.starts_with(VELOCITY_PREFIX))
            .filter(|(n, _)| n.ends_with(".linear.weight") || n.ends_with(".conv.kernel"))
            .map(|(n, t)| (n.as_str(), t))
    }

    /// Copy the stored state into `net`, which must have the same
    /// architecture. Everything is validated before anything is written.
    pub fn restore(&self, net: &mut Network) -> Result<OptState> {
        let counter = |name: &str| -> Result<u64> {
            match self.get(name).map(|t| t.data()) {
                Some(&[v]) if v >= 0.0 && v.fract() == 0.0 => Ok(v as u64),
                _ => Err(Error::Input(format!("checkpoint lacks a valid {name}"))),
            }
        };
        let iteration = counter(ITERATION)?;
        let epoch = counter(EPOCH)?;
        let mut staged = Vec::new();
        for (name, t) in net.state_tensors() {
            let stored = self
                .get(&name)
                .ok_or_else(|| Error::Input(format!("checkpoint lacks {name}")))?;
            if stored.shape() != t.shape() {
                return Err(Error::shape("checkpoint restore", stored.shape(), t.shape()).in_layer(name));
            }
            staged.push(stored.clone());
        }
        let mut velocities = Vec::new();
        for p in net.params_mut() {
            let name = format!("{VELOCITY_PREFIX}{}", p.name);
            let stored = self
                .get(&name)
                .ok_or_else(|| Error::Input(format!("checkpoint lacks {name}")))?;
            if stored.shape() != p.value.shape() {
                return Err(Error::shape("checkpoint restore", stored.shape(), p.value.shape()).in_layer(name));
            }
            velocities.push(stored.clone());
        }
        for ((_, slot), value) in net.state_tensors_mut().into_iter().zip(staged) {
            *slot = value;
        }
        Ok(OptState {
            velocities,
            iteration,
            epoch,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                detail: format!("bad magic {magic:?}, expected \"SVBC\""),
            });
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let start = r.pos as u64;
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|e| Error::Format {
                    offset: start + 4,
                    detail: format!("tensor name is not UTF-8: {e}"),
                })?
                .to_string();
            let ndim = r.u32("rank")? as usize;
            let mut dims = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                dims.push(r.u32("dimension")? as usize);
            }
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some())
                .ok_or_else(|| Error::Format {
                    offset: start,
                    detail: format!("dimensions {dims:?} of {name} overflow"),
                })?;
            let payload = r.take(len * 8, &format!("payload of {name}"))?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(&dims, data).map_err(|e| Error::Format {
                offset: start,
                detail: format!("{name}: {e}"),
            })?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                detail: format!("{} trailing bytes after the last tensor", bytes.len() - r.pos),
            });
        }
        Ok(Checkpoint { tensors })
    }
}

pub fn save_checkpoint(path: &Path, net: &Network, opt: &OptState) -> Result<()> {
    fs::write(path, Checkpoint::capture(net, opt).encode())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sample() -> (Network, OptState) {
        let mut rng = Rng::seed_from(1);
        let mut net = Network::convnet(1, 3, 10, &mut rng).unwrap();
        let mut opt = OptState::new(&mut net);
        for v in &mut opt.velocities {
            *v = Tensor::gaussian(&mut rng, v.shape());
        }
        opt.iteration = 391;
        opt.epoch = 1;
        (net, opt)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (net, opt) = sample();
        let ck = Checkpoint::capture(&net, &opt);
        let back = Checkpoint::decode(&ck.encode()).unwrap();
        assert_eq!(back, ck);
        let mut fresh = Network::convnet(1, 3, 10, &mut Rng::seed_from(99)).unwrap();
        let restored = back.restore(&mut fresh).unwrap();
        assert_eq!(fresh, net);
        assert_eq!(restored, opt);
    }

    #[test]
    fn wrong_magic() {
        let (net, opt) = sample();
        let mut bytes = Checkpoint::capture(&net, &opt).encode();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::decode(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn version_mismatch() {
        let (net, opt) = sample();
        let mut bytes = Checkpoint::capture(&net, &opt).encode();
        bytes[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
        assert!(matches!(
            Checkpoint::decode(&bytes),
            Err(Error::Version { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn truncated_and_padded_payloads() {
        let (net, opt) = sample();
        let bytes = Checkpoint::capture(&net, &opt).encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(Checkpoint::decode(&long).is_err());
    }

    #[test]
    fn restore_into_other_architecture_changes_nothing() {
        let (net, opt) = sample();
        let ck = Checkpoint::capture(&net, &opt);
        let mut other = Network::mlp(&[4, 3, 2], &mut Rng::seed_from(2));
        let before = other.clone();
        assert!(ck.restore(&mut other).is_err());
        assert_eq!(other, before);
    }

    #[test]
    fn weight_tensor_listing() {
        let (net, opt) = sample();
        let ck = Checkpoint::capture(&net, &opt);
        assert_eq!(ck.weight_tensors().count(), 8);
    }
}
