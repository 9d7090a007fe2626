//! Synthetic 3x32x32 image tasks. Each class is an oriented sinusoidal
//! texture, a Gaussian blob, or both, rendered with per-image jitter and
//! additive Gaussian noise.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::net::{Images, IMAGE_LEN, IN_CH, SIDE};
use crate::MicronetError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Texture {
    /// Radians.
    pub orientation: f64,
    /// Cycles across the image.
    pub frequency: f64,
    pub amplitude: f64,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blob {
    /// Fractions of the image side.
    pub center: [f64; 2],
    pub radius: f64,
    pub amplitude: f64,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    #[serde(default)]
    pub texture: Option<Texture>,
    #[serde(default)]
    pub blob: Option<Blob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub name: String,
    pub classes: Vec<ClassSpec>,
    pub noise: f64,
    /// 0 renders every image of a class identically up to noise and phase;
    /// 1 is the largest per-image perturbation.
    pub jitter: f64,
}

impl GeneratorSpec {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<(), MicronetError> {
        let bad = |msg: String| Err(MicronetError::InvalidSpec(format!("{}: {msg}", self.name)));
        if self.classes.len() < 2 {
            return bad(format!("{} classes, need at least 2", self.classes.len()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!("noise {}", self.noise));
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return bad(format!("jitter {} outside [0, 1]", self.jitter));
        }
        for (c, class) in self.classes.iter().enumerate() {
            if class.texture.is_none() && class.blob.is_none() {
                return bad(format!("class {c} has neither texture nor blob"));
            }
            let mut nums = Vec::new();
            if let Some(t) = &class.texture {
                nums.extend([t.orientation, t.frequency, t.amplitude]);
                nums.extend(t.color);
                if t.frequency <= 0.0 {
                    return bad(format!("class {c} texture frequency {}", t.frequency));
                }
            }
            if let Some(b) = &class.blob {
                nums.extend([b.center[0], b.center[1], b.radius, b.amplitude]);
                nums.extend(b.color);
                if b.radius <= 0.0 {
                    return bad(format!("class {c} blob radius {}", b.radius));
                }
            }
            if nums.iter().any(|v| !v.is_finite()) {
                return bad(format!("class {c} has a non-finite parameter"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: GeneratorSpec,
    pub seed: u64,
    pub images: Images,
    pub labels: Vec<usize>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }
}

fn sym(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen::<f64>() * 2.0 - 1.0
}

fn render(spec: &GeneratorSpec, class: &ClassSpec, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let j = spec.jitter;
    out.fill(0.0);
    let plane = SIDE * SIDE;
    if let Some(t) = &class.texture {
        let theta = t.orientation + j * PI / 8.0 * sym(rng);
        let freq = t.frequency * (1.0 + 0.15 * j * sym(rng));
        let amp = t.amplitude * (1.0 + 0.3 * j * sym(rng));
        let phase = rng.gen::<f64>() * 2.0 * PI;
        let (s, c) = theta.sin_cos();
        let k = 2.0 * PI * freq / SIDE as f64;
        for y in 0..SIDE {
            for x in 0..SIDE {
                let v = amp * (k * (x as f64 * c + y as f64 * s) + phase).sin();
                for ch in 0..IN_CH {
                    out[ch * plane + y * SIDE + x] += t.color[ch] * v;
                }
            }
        }
    }
    if let Some(b) = &class.blob {
        let cx = (b.center[0] + 0.15 * j * sym(rng)) * SIDE as f64;
        let cy = (b.center[1] + 0.15 * j * sym(rng)) * SIDE as f64;
        let r = b.radius * (1.0 + 0.3 * j * sym(rng)) * SIDE as f64;
        let amp = b.amplitude * (1.0 + 0.3 * j * sym(rng));
        for y in 0..SIDE {
            for x in 0..SIDE {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let v = amp * (-d2 / (2.0 * r * r)).exp();
                for ch in 0..IN_CH {
                    out[ch * plane + y * SIDE + x] += b.color[ch] * v;
                }
            }
        }
    }
    if spec.noise > 0.0 {
        for v in out.iter_mut() {
            *v += spec.noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn generate_with(
    spec: &GeneratorSpec,
    n: usize,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> SyntheticDataset {
    let c = spec.num_classes();
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let mut data = vec![0.0; n * IMAGE_LEN];
    for (img, &y) in data.chunks_exact_mut(IMAGE_LEN).zip(&labels) {
        render(spec, &spec.classes[y], rng, img);
    }
    SyntheticDataset {
        spec: spec.clone(),
        seed,
        images: Images::new(n, data).expect("sized above"),
        labels,
    }
}

/// `n` images with interleaved labels `i % C`, so classes are balanced
/// within one.
pub fn generate(
    spec: &GeneratorSpec,
    n: usize,
    seed: u64,
) -> Result<SyntheticDataset, MicronetError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(generate_with(spec, n, &mut rng, seed))
}

/// Images per class in each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: SyntheticDataset,
    pub val: SyntheticDataset,
    pub test: SyntheticDataset,
}

/// Train, validation and test sets drawn in that order from one seeded stream.
pub fn generate_splits(
    spec: &GeneratorSpec,
    split: SplitSpec,
    seed: u64,
) -> Result<Splits, MicronetError> {
    spec.validate()?;
    if split.train == 0 || split.val == 0 || split.test == 0 {
        return Err(MicronetError::InvalidSpec(format!("empty split {split:?}")));
    }
    let c = spec.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Splits {
        train: generate_with(spec, split.train * c, &mut rng, seed),
        val: generate_with(spec, split.val * c, &mut rng, seed),
        test: generate_with(spec, split.test * c, &mut rng, seed),
    })
}

pub const DESCRIPTOR_DIM: usize = IN_CH * 16;

/// Model-free image descriptor: per-channel means over a 4x4 grid of 8x8
/// cells (48 values).
pub fn pooled_descriptor(images: &Images) -> DMatrix<f64> {
    let cell = SIDE / 4;
    let mut out = DMatrix::zeros(images.len(), DESCRIPTOR_DIM);
    for i in 0..images.len() {
        let img = images.image(i);
        for ch in 0..IN_CH {
            for gy in 0..4 {
                for gx in 0..4 {
                    let mut s = 0.0;
                    for y in gy * cell..(gy + 1) * cell {
                        let row = ch * SIDE * SIDE + y * SIDE;
                        s += img[row + gx * cell..row + (gx + 1) * cell]
                            .iter()
                            .sum::<f64>();
                    }
                    out[(i, ch * 16 + gy * 4 + gx)] = s / (cell * cell) as f64;
                }
            }
        }
    }
    out
}
