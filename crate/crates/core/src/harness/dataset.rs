//! In-memory datasets, augmentation and synthetic generators.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::spectral::{orthogonal_init, svd};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, classes: usize },
    Continuous(Tensor),
}

/// `K` samples stacked along the first axis of `inputs`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub inputs: Tensor,
    pub targets: Targets,
    pub split: Split,
    pub provenance: String,
    /// Apply pad-crop-flip augmentation when drawing training batches.
    pub augment: bool,
}

impl Dataset {
    pub fn classification(
        inputs: Tensor,
        labels: Vec<usize>,
        classes: usize,
        split: Split,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Input(format!(
                "{} inputs but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Input(format!("label {bad} ≥ class count {classes}")));
        }
        Ok(Dataset {
            inputs,
            targets: Targets::Classes { labels, classes },
            split,
            provenance: provenance.into(),
            augment: false,
        })
    }

    pub fn regression(inputs: Tensor, targets: Tensor, split: Split, provenance: impl Into<String>) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::Input(format!(
                "{} inputs but {} targets",
                inputs.rows(),
                targets.rows()
            )));
        }
        Ok(Dataset {
            inputs,
            targets: Targets::Continuous(targets),
            split,
            provenance: provenance.into(),
            augment: false,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-sample shape (everything after the batch axis).
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes { labels, .. } => Some(labels),
            Targets::Continuous(_) => None,
        }
    }

    pub fn classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Classes { classes, .. } => Some(*classes),
            Targets::Continuous(_) => None,
        }
    }

    /// First `n` samples (or all, if fewer).
    pub fn take(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let (inputs, labels) = self.batch(&idx, None)?;
        let targets = match &self.targets {
            Targets::Classes { classes, .. } => Targets::Classes {
                labels,
                classes: *classes,
            },
            Targets::Continuous(t) => {
                let cols = t.cols();
                let mut shape = t.shape().to_vec();
                shape[0] = idx.len();
                Targets::Continuous(Tensor::new(&shape, t.data()[..idx.len() * cols].to_vec())?)
            }
        };
        Ok(Dataset {
            inputs,
            targets,
            split: self.split,
            provenance: format!("{} [first {}]", self.provenance, idx.len()),
            augment: self.augment,
        })
    }

    /// Gather samples by index. When `augment_rng` is given and the dataset
    /// has augmentation enabled, each image goes through pad-crop-flip.
    pub fn batch(&self, indices: &[usize], augment_rng: Option<&mut Rng>) -> Result<(Tensor, Vec<usize>)> {
        let per = self.inputs.cols();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.inputs.data()[i * per..(i + 1) * per]);
        }
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = indices.len();
        let mut x = Tensor::new(&shape, data)?;
        if let (true, Some(rng)) = (self.augment, augment_rng) {
            let sample = self.sample_shape().to_vec();
            for chunk in x.data_mut().chunks_mut(per) {
                let img = Tensor::new(&sample, chunk.to_vec())?;
                chunk.copy_from_slice(augment_pad_crop_flip(rng, &img)?.data());
            }
        }
        let labels = match &self.targets {
            Targets::Classes { labels, .. } => indices.iter().map(|&i| labels[i]).collect(),
            Targets::Continuous(_) => Vec::new(),
        };
        Ok((x, labels))
    }
}

/// Zero-padding on each side before cropping.
pub const AUGMENT_PAD: usize = 4;
/// Spatial size the augmentation pipeline expects.
pub const AUGMENT_SIZE: usize = 32;

/// Crop the `C × 32 × 32` window at `(top, left)` from the image zero-padded
/// by 4 pixels per side, optionally mirrored horizontally. `(4, 4)` without
/// flip returns the original image.
pub fn pad_crop_flip(image: &Tensor, top: usize, left: usize, flip: bool) -> Result<Tensor> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::InvalidShape {
            shape: image.shape().to_vec(),
            reason: "augmentation expects C × H × W".into(),
        });
    };
    if h != AUGMENT_SIZE || w != AUGMENT_SIZE {
        return Err(Error::Input(format!("augmentation expects 32×32 images, got {h}×{w}")));
    }
    if top > 2 * AUGMENT_PAD || left > 2 * AUGMENT_PAD {
        return Err(Error::Input(format!(
            "crop offset ({top}, {left}) outside the padded frame"
        )));
    }
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + top) as isize - AUGMENT_PAD as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let cx = if flip { w - 1 - x } else { x };
                let sx = (cx + left) as isize - AUGMENT_PAD as isize;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                out[(ch * h + y) * w + x] = image.data()[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    Tensor::new(image.shape(), out)
}

/// Random crop offset in `[0, 8]²` and a fair coin for the flip.
pub fn augment_pad_crop_flip(rng: &mut Rng, image: &Tensor) -> Result<Tensor> {
    let top = rng.below(2 * AUGMENT_PAD + 1);
    let left = rng.below(2 * AUGMENT_PAD + 1);
    let flip = rng.coin();
    pad_crop_flip(image, top, left, flip)
}

/// Regression data for the deep-linear lab.
#[derive(Clone, Debug)]
pub struct LinearData {
    /// `K × N_x`, zero mean with `XᵀX/K = I` to machine precision.
    pub x: Tensor,
    /// `K × N_y`.
    pub y: Tensor,
    /// The ground-truth map `A` (`N_y × N_x`) with the requested spectrum.
    pub map: Tensor,
}

/// Whitened Gaussian inputs and targets `y = A·x + noise`, where `A` has
/// singular values `sigma` and random orthogonal singular vectors.
pub fn synth_linear(rng: &mut Rng, k: usize, n_x: usize, n_y: usize, sigma: &[f64], noise: f64) -> Result<LinearData> {
    if sigma.len() > n_x.min(n_y) {
        return Err(Error::Input(format!(
            "{} singular values do not fit a {n_y}×{n_x} map",
            sigma.len()
        )));
    }
    if k < n_x + 1 {
        return Err(Error::Input(format!(
            "need more than {n_x} samples to whiten exactly, got {k}"
        )));
    }
    let mut x = Tensor::gaussian(rng, &[k, n_x]);
    for j in 0..n_x {
        let mean = (0..k).map(|i| x.at(i, j)).sum::<f64>() / k as f64;
        for i in 0..k {
            x.set(i, j, x.at(i, j) - mean);
        }
    }
    // X ← X·C^{-1/2} with C = XᵀX/K = U·diag(λ)·Uᵀ.
    let c = x.t().matmul(&x)?.scale(1.0 / k as f64);
    let f = svd(&c)?;
    let inv_sqrt: Vec<f64> = f.s.iter().map(|&l| 1.0 / l.sqrt()).collect();
    let whitener = f.reconstruct_with(&inv_sqrt);
    let x = x.matmul(&whitener)?;

    let p = sigma.len();
    let map = if p == 0 {
        Tensor::zeros(&[n_y, n_x])
    } else {
        let u = orthogonal_init(rng, n_y, p);
        let v = orthogonal_init(rng, n_x, p);
        let mut us = u.clone();
        for i in 0..n_y {
            for (j, &s) in sigma.iter().enumerate() {
                us.set(i, j, u.at(i, j) * s);
            }
        }
        us.matmul(&v.t())?
    };
    let mut y = x.matmul(&map.t())?;
    if noise > 0.0 {
        y.data_mut().iter_mut().for_each(|v| *v += noise * rng.normal());
    }
    Ok(LinearData { x, y, map })
}

/// Side length of the synthetic digit images.
pub const DIGIT_SIZE: usize = 28;

/// Stroke-drawn 28×28 grey-level images in 10 classes, pixel values in
/// `[0, 1]`, shape `K × 1 × 28 × 28`. Each class is a fixed set of strokes;
/// samples jitter the strokes, shift the glyph and add pixel noise. Used as
/// a stand-in when the MNIST files are not available.
pub fn synth_digits(rng: &mut Rng, train: usize, test: usize, style_seed: u64) -> Result<(Dataset, Dataset)> {
    let mut style = Rng::seed_from(style_seed);
    let prototypes: Vec<Vec<[f64; 4]>> = (0..10)
        .map(|_| {
            (0..3)
                .map(|_| {
                    [
                        style.uniform(5.0, 23.0),
                        style.uniform(5.0, 23.0),
                        style.uniform(5.0, 23.0),
                        style.uniform(5.0, 23.0),
                    ]
                })
                .collect()
        })
        .collect();

    let mut make = |n: usize, split: Split| -> Result<Dataset> {
        let px = DIGIT_SIZE * DIGIT_SIZE;
        let mut data = Vec::with_capacity(n * px);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let label = rng.below(10);
            let dy = rng.below(5) as f64 - 2.0;
            let dx = rng.below(5) as f64 - 2.0;
            let width = rng.uniform(0.9, 1.6);
            let strokes: Vec<[f64; 4]> = prototypes[label]
                .iter()
                .map(|s| {
                    [
                        s[0] + dy + 1.8 * rng.normal(),
                        s[1] + dx + 1.8 * rng.normal(),
                        s[2] + dy + 1.8 * rng.normal(),
                        s[3] + dx + 1.8 * rng.normal(),
                    ]
                })
                .collect();
            for r in 0..DIGIT_SIZE {
                for c in 0..DIGIT_SIZE {
                    let (py, pxl) = (r as f64, c as f64);
                    let ink = strokes
                        .iter()
                        .map(|s| {
                            let d2 = segment_distance_sq(py, pxl, s);
                            (-d2 / (2.0 * width * width)).exp()
                        })
                        .fold(0.0, f64::max);
                    data.push((ink + 0.2 * rng.normal()).clamp(0.0, 1.0));
                }
            }
            labels.push(label);
        }
        let inputs = Tensor::new(&[n, 1, DIGIT_SIZE, DIGIT_SIZE], data)?;
        Dataset::classification(inputs, labels, 10, split, format!("synth:digits style={style_seed}"))
    };
    let train_set = make(train, Split::Train)?;
    let test_set = make(test, Split::Test)?;
    Ok((train_set, test_set))
}

fn segment_distance_sq(y: f64, x: f64, s: &[f64; 4]) -> f64 {
    let (ay, ax, by, bx) = (s[0], s[1], s[2], s[3]);
    let (vy, vx) = (by - ay, bx - ax);
    let len2 = vy * vy + vx * vx;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((y - ay) * vy + (x - ax) * vx) / len2).clamp(0.0, 1.0)
    };
    let (qy, qx) = (ay + t * vy - y, ax + t * vx - x);
    qy * qy + qx * qx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(rng: &mut Rng) -> Tensor {
        Tensor::uniform(rng, &[3, 32, 32], 0.1, 1.0)
    }

    #[test]
    fn centre_crop_is_identity() {
        let img = image(&mut Rng::seed_from(0));
        assert_eq!(pad_crop_flip(&img, 4, 4, false).unwrap(), img);
    }

    #[test]
    fn corner_crop_shifts_and_zero_fills() {
        let img = image(&mut Rng::seed_from(1));
        let out = pad_crop_flip(&img, 0, 0, false).unwrap();
        for ch in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    let v = out.data()[(ch * 32 + y) * 32 + x];
                    if y < 4 || x < 4 {
                        assert_eq!(v, 0.0);
                    } else {
                        assert_eq!(v, img.data()[(ch * 32 + y - 4) * 32 + x - 4]);
                    }
                }
            }
        }
    }

    #[test]
    fn double_flip_restores_crop() {
        let img = image(&mut Rng::seed_from(2));
        let once = pad_crop_flip(&img, 2, 7, true).unwrap();
        let plain = pad_crop_flip(&img, 2, 7, false).unwrap();
        // Mirroring the flipped crop gives back the unflipped crop.
        let mut back = once.clone();
        for ch in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    back.data_mut()[(ch * 32 + y) * 32 + x] = once.data()[(ch * 32 + y) * 32 + 31 - x];
                }
            }
        }
        assert_eq!(back, plain);
    }

    #[test]
    fn augmentation_rejects_wrong_size() {
        let mut rng = Rng::seed_from(3);
        assert!(augment_pad_crop_flip(&mut rng, &Tensor::zeros(&[3, 28, 28])).is_err());
    }

    #[test]
    fn synth_linear_is_whitened() {
        let mut rng = Rng::seed_from(4);
        let d = synth_linear(&mut rng, 500, 6, 4, &[3.0, 1.0, 0.5], 0.0).unwrap();
        let k = d.x.rows() as f64;
        let cxx = d.x.t().matmul(&d.x).unwrap().scale(1.0 / k);
        assert!(cxx.distance(&Tensor::eye(6)) <= 1e-8);
        let s = svd(&d.map).unwrap().s;
        assert!((s[0] - 3.0).abs() < 1e-12 && (s[2] - 0.5).abs() < 1e-12 && s[3] < 1e-12);
    }

    #[test]
    fn synth_linear_zero_spectrum() {
        let d = synth_linear(&mut Rng::seed_from(5), 50, 3, 2, &[0.0, 0.0], 0.0).unwrap();
        assert!(d.y.data().iter().all(|&v| v.abs() < 1e-14));
        assert!(synth_linear(&mut Rng::seed_from(5), 3, 3, 2, &[], 0.0).is_err());
        assert!(synth_linear(&mut Rng::seed_from(5), 30, 3, 2, &[1.0, 1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn digits_shapes_and_range() {
        let (tr, te) = synth_digits(&mut Rng::seed_from(6), 20, 10, 1).unwrap();
        assert_eq!(tr.inputs.shape(), &[20, 1, 28, 28]);
        assert_eq!(te.len(), 10);
        assert!(tr.inputs.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(tr.classes(), Some(10));
    }

    #[test]
    fn batch_gathers_rows() {
        let inputs = Tensor::from_rows(&[[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]]);
        let ds = Dataset::classification(inputs, vec![0, 1, 2], 3, Split::Train, "t").unwrap();
        let (x, y) = ds.batch(&[2, 0], None).unwrap();
        assert_eq!(x.data(), &[4.0, 5.0, 0.0, 1.0]);
        assert_eq!(y, vec![2, 0]);
        assert!(Dataset::classification(Tensor::zeros(&[2, 2]), vec![0, 3], 3, Split::Test, "t").is_err());
    }
}
