//! Triplet sampling and the triplet margin loss on embeddings.
//!
//! Sampling uses SplitMix64 with `draw % len` index selection so that other
//! implementations (the Python extractor) can reproduce the exact triplet list:
//! anchors are visited in index order, and for each of `triplets_per_anchor`
//! rounds one draw picks the positive (among same-class samples other than the
//! anchor, ascending index order) and the next draw picks the negative (among
//! all other-class samples, ascending index order).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::TransferError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    MeanAll,
    MeanNonzero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TripletConfig {
    pub margin: f64,
    pub triplets_per_anchor: usize,
    pub seed: u64,
    pub reduction: Reduction,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            margin: 0.05,
            triplets_per_anchor: 1,
            seed: 0,
            reduction: Reduction::MeanAll,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// SplitMix64 (Steele, Lea, Flood 2014).
#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn index(&mut self, len: usize) -> usize {
        (self.next_u64() % len as u64) as usize
    }
}

pub fn sample_triplets(
    labels: &[usize],
    cfg: &TripletConfig,
) -> Result<Vec<Triplet>, TransferError> {
    if cfg.triplets_per_anchor == 0 {
        return Err(TransferError::InvalidConfig(
            "triplets_per_anchor must be positive".into(),
        ));
    }
    let n = labels.len();
    let mut rng = SplitMix64::new(cfg.seed);
    let mut out = Vec::new();
    for anchor in 0..n {
        let class = labels[anchor];
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != anchor && labels[j] == class)
            .collect();
        let negatives: Vec<usize> = (0..n).filter(|&j| labels[j] != class).collect();
        if positives.is_empty() || negatives.is_empty() {
            continue;
        }
        for _ in 0..cfg.triplets_per_anchor {
            let positive = positives[rng.index(positives.len())];
            let negative = negatives[rng.index(negatives.len())];
            out.push(Triplet {
                anchor,
                positive,
                negative,
            });
        }
    }
    if out.is_empty() {
        return Err(TransferError::NoValidTriplet);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss {
    pub loss: f64,
    /// Gradient of `loss` w.r.t. every embedding row.
    pub grad: DMatrix<f64>,
    pub active: usize,
}

fn unit_or_zero(v: nalgebra::RowDVector<f64>) -> (f64, nalgebra::RowDVector<f64>) {
    let norm = v.norm();
    if norm > 0.0 {
        (norm, v / norm)
    } else {
        (0.0, v * 0.0)
    }
}

/// `max(|a - p| - |a - n| + margin, 0)` reduced over triplets, with its exact
/// subgradient. At a zero distance the direction is taken as zero.
pub fn triplet_loss_and_embedding_grads(
    x: &DMatrix<f64>,
    triplets: &[Triplet],
    margin: f64,
    reduction: Reduction,
) -> Result<TripletLoss, TransferError> {
    let n = x.nrows();
    if !(margin > 0.0) {
        return Err(TransferError::InvalidConfig(format!(
            "margin must be positive, got {margin}"
        )));
    }
    for t in triplets {
        for idx in [t.anchor, t.positive, t.negative] {
            if idx >= n {
                return Err(TransferError::IndexOutOfRange { index: idx, n });
            }
        }
    }
    let mut grad = DMatrix::zeros(n, x.ncols());
    let mut total = 0.0;
    let mut active = 0;
    let mut contributions = Vec::new();
    for t in triplets {
        let (d_ap, u_ap) = unit_or_zero(x.row(t.anchor) - x.row(t.positive));
        let (d_an, u_an) = unit_or_zero(x.row(t.anchor) - x.row(t.negative));
        let hinge = d_ap - d_an + margin;
        if hinge > 0.0 {
            total += hinge;
            active += 1;
            contributions.push((t, u_ap, u_an));
        }
    }
    let denom = match reduction {
        Reduction::MeanAll => triplets.len(),
        Reduction::MeanNonzero => active,
    };
    if denom == 0 {
        return Ok(TripletLoss {
            loss: 0.0,
            grad,
            active,
        });
    }
    let scale = 1.0 / denom as f64;
    for (t, u_ap, u_an) in contributions {
        let mut ga = grad.row_mut(t.anchor);
        ga += (&u_ap - &u_an) * scale;
        let mut gp = grad.row_mut(t.positive);
        gp -= &u_ap * scale;
        let mut gn = grad.row_mut(t.negative);
        gn += &u_an * scale;
    }
    Ok(TripletLoss {
        loss: total * scale,
        grad,
        active,
    })
}
