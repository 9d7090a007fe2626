//! Fixed two-layer convolutional network:
//! 3x32x32 -> conv 3x3 (8) -> ReLU -> maxpool 2x2 -> conv 3x3 (16) -> ReLU
//! -> global average pool -> 16-d embedding -> optional linear head.

use std::ops::Range;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::MicronetError;

pub const SIDE: usize = 32;
pub const IN_CH: usize = 3;
pub const C1: usize = 8;
pub const C2: usize = 16;
pub const POOLED: usize = SIDE / 2;
pub const EMBED_DIM: usize = C2;
pub const IMAGE_LEN: usize = IN_CH * SIDE * SIDE;

const PLANE1: usize = SIDE * SIDE;
const PLANE2: usize = POOLED * POOLED;
const CONV1_W: usize = C1 * IN_CH * 9;
const CONV2_W: usize = C2 * C1 * 9;
const HEAD_START: usize = CONV1_W + C1 + CONV2_W + C2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Conv1Weight,
    Conv1Bias,
    Conv2Weight,
    Conv2Bias,
    HeadWeight,
    HeadBias,
}

fn group_range(group: ParamGroup, head_classes: usize) -> Range<usize> {
    let c1b = CONV1_W;
    let c2w = c1b + C1;
    let c2b = c2w + CONV2_W;
    let hw = HEAD_START;
    let hb = hw + head_classes * EMBED_DIM;
    match group {
        ParamGroup::Conv1Weight => 0..c1b,
        ParamGroup::Conv1Bias => c1b..c2w,
        ParamGroup::Conv2Weight => c2w..c2b,
        ParamGroup::Conv2Bias => c2b..hw,
        ParamGroup::HeadWeight => hw..hb,
        ParamGroup::HeadBias => hb..hb + head_classes,
    }
}

/// All parameters live in one flat vector; see [`ParamGroup`] for the layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroNet {
    params: Vec<f64>,
    head_classes: Option<usize>,
}

impl MicroNet {
    /// He-normal conv weights, `N(0, 1/16)` head weights, zero biases.
    pub fn new(head_classes: Option<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(head_classes);
        let fill = |slice: &mut [f64], std: f64, rng: &mut ChaCha8Rng| {
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in slice {
                *v = normal.sample(rng);
            }
        };
        fill(
            net.group_mut(ParamGroup::Conv1Weight),
            (2.0 / 27.0f64).sqrt(),
            &mut rng,
        );
        fill(
            net.group_mut(ParamGroup::Conv2Weight),
            (2.0 / 72.0f64).sqrt(),
            &mut rng,
        );
        if head_classes.is_some() {
            fill(net.group_mut(ParamGroup::HeadWeight), 0.25, &mut rng);
        }
        net
    }

    pub fn zeros(head_classes: Option<usize>) -> Self {
        let z = head_classes.unwrap_or(0);
        Self {
            params: vec![0.0; HEAD_START + z * (EMBED_DIM + 1)],
            head_classes,
        }
    }

    /// Same conv layers with a freshly initialized head.
    pub fn with_new_head(&self, classes: usize, seed: u64) -> Self {
        let fresh = MicroNet::new(Some(classes), seed);
        let mut params = self.params[..HEAD_START].to_vec();
        params.extend_from_slice(&fresh.params[HEAD_START..]);
        Self {
            params,
            head_classes: Some(classes),
        }
    }

    pub fn head_classes(&self) -> Option<usize> {
        self.head_classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn group_range(&self, group: ParamGroup) -> Range<usize> {
        group_range(group, self.head_classes.unwrap_or(0))
    }

    pub fn group(&self, group: ParamGroup) -> &[f64] {
        &self.params[self.group_range(group)]
    }

    pub fn group_mut(&mut self, group: ParamGroup) -> &mut [f64] {
        let r = self.group_range(group);
        &mut self.params[r]
    }

    /// FNV-1a over the parameter bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.params {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }
}

/// A batch of `n` images, each `3 x 32 x 32`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Images {
    n: usize,
    data: Vec<f64>,
}

impl Images {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self, MicronetError> {
        if data.len() != n * IMAGE_LEN {
            return Err(MicronetError::ShapeMismatch(format!(
                "{} values for {n} images of {IMAGE_LEN}",
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.data[i * IMAGE_LEN..(i + 1) * IMAGE_LEN]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * IMAGE_LEN);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Self {
            n: indices.len(),
            data,
        }
    }
}

/// Valid output positions `lo..hi` for a tap offset `d` in {-1, 0, 1}.
fn tap_range(d: isize, side: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (side as isize - d).min(side as isize) as usize;
    (lo, hi)
}

/// Same-size 3x3 convolution with zero padding 1.
fn conv3x3(input: &[f64], in_ch: usize, side: usize, w: &[f64], b: &[f64], out: &mut [f64]) {
    let plane = side * side;
    for (o, out_plane) in out.chunks_exact_mut(plane).enumerate() {
        out_plane.fill(b[o]);
        for c in 0..in_ch {
            let in_plane = &input[c * plane..(c + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(dy, side);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(dx, side);
                    let wv = w[((o * in_ch + c) * 3 + ky) * 3 + kx];
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let orow = &mut out_plane[y * side + x0..y * side + x1];
                        let start = (iy * side) as isize + x0 as isize + dx;
                        let irow = &in_plane[start as usize..start as usize + (x1 - x0)];
                        for (a, &v) in orow.iter_mut().zip(irow) {
                            *a += wv * v;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight and bias gradients of [`conv3x3`], and the input
/// gradient when `din` is given.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    in_ch: usize,
    side: usize,
    w: &[f64],
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut din: Option<&mut [f64]>,
) {
    let plane = side * side;
    for (o, dplane) in dout.chunks_exact(plane).enumerate() {
        db[o] += dplane.iter().sum::<f64>();
        for c in 0..in_ch {
            let in_plane = &input[c * plane..(c + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(dy, side);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(dx, side);
                    let widx = ((o * in_ch + c) * 3 + ky) * 3 + kx;
                    let wv = w[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let drow = &dplane[y * side + x0..y * side + x1];
                        let start = ((iy * side) as isize + x0 as isize + dx) as usize;
                        let irow = &in_plane[start..start + (x1 - x0)];
                        for (&g, &v) in drow.iter().zip(irow) {
                            acc += g * v;
                        }
                        if let Some(din) = din.as_deref_mut() {
                            let dirow = &mut din[c * plane + start..c * plane + start + (x1 - x0)];
                            for (d, &g) in dirow.iter_mut().zip(drow) {
                                *d += wv * g;
                            }
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
}

/// Activations kept by [`forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    checksum: u64,
    n: usize,
    input: Vec<f64>,
    /// ReLU-then-maxpool output of conv1, `n x C1 x 16 x 16`.
    pooled: Vec<f64>,
    /// Index into the conv1 plane of each pooled maximum.
    pool_arg: Vec<u32>,
    /// conv2 pre-activation, `n x C2 x 16 x 16`.
    pre2: Vec<f64>,
    embeddings: DMatrix<f64>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Hash of the piecewise-linear region: max-pool winners and ReLU on/off
    /// state of both layers. Two parameter vectors with equal fingerprints
    /// lie (with overwhelming probability) in the same smooth piece.
    pub fn activation_pattern(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for &a in &self.pool_arg {
            mix(a as u64);
        }
        for &v in self.pooled.iter().chain(&self.pre2) {
            mix((v > 0.0) as u64);
        }
        h
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub embeddings: DMatrix<f64>,
    /// Present when the network has a head.
    pub logits: Option<DMatrix<f64>>,
    pub cache: ForwardCache,
}

pub fn forward(net: &MicroNet, images: &Images) -> Forward {
    let n = images.len();
    let mut pre1 = vec![0.0; C1 * PLANE1];
    let mut pooled = vec![0.0; n * C1 * PLANE2];
    let mut pool_arg = vec![0u32; n * C1 * PLANE2];
    let mut pre2 = vec![0.0; n * C2 * PLANE2];
    let mut embeddings = DMatrix::zeros(n, EMBED_DIM);
    let w1 = net.group(ParamGroup::Conv1Weight);
    let b1 = net.group(ParamGroup::Conv1Bias);
    let w2 = net.group(ParamGroup::Conv2Weight);
    let b2 = net.group(ParamGroup::Conv2Bias);
    for i in 0..n {
        conv3x3(images.image(i), IN_CH, SIDE, w1, b1, &mut pre1);
        let pooled_i = &mut pooled[i * C1 * PLANE2..(i + 1) * C1 * PLANE2];
        let arg_i = &mut pool_arg[i * C1 * PLANE2..(i + 1) * C1 * PLANE2];
        for c in 0..C1 {
            let plane = &pre1[c * PLANE1..(c + 1) * PLANE1];
            for py in 0..POOLED {
                for px in 0..POOLED {
                    let mut best = 2 * py * SIDE + 2 * px;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (2 * py + dy) * SIDE + 2 * px + dx;
                        if plane[idx] > plane[best] {
                            best = idx;
                        }
                    }
                    let out = c * PLANE2 + py * POOLED + px;
                    pooled_i[out] = plane[best].max(0.0);
                    arg_i[out] = best as u32;
                }
            }
        }
        let pre2_i = &mut pre2[i * C2 * PLANE2..(i + 1) * C2 * PLANE2];
        conv3x3(pooled_i, C1, POOLED, w2, b2, pre2_i);
        for o in 0..C2 {
            let s: f64 = pre2_i[o * PLANE2..(o + 1) * PLANE2]
                .iter()
                .map(|v| v.max(0.0))
                .sum();
            embeddings[(i, o)] = s / PLANE2 as f64;
        }
    }
    let logits = net.head_classes.map(|z| {
        let w = DMatrix::from_row_slice(z, EMBED_DIM, net.group(ParamGroup::HeadWeight));
        let b = net.group(ParamGroup::HeadBias);
        let mut l = &embeddings * w.transpose();
        for mut row in l.row_iter_mut() {
            for (v, bias) in row.iter_mut().zip(b) {
                *v += bias;
            }
        }
        l
    });
    Forward {
        embeddings: embeddings.clone(),
        logits,
        cache: ForwardCache {
            checksum: net.checksum(),
            n,
            input: images.data().to_vec(),
            pooled,
            pool_arg,
            pre2,
            embeddings,
        },
    }
}

/// Gradient of a scalar loss in the same flat layout as [`MicroNet::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    values: Vec<f64>,
    head_classes: usize,
}

impl Gradients {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn group(&self, group: ParamGroup) -> &[f64] {
        &self.values[group_range(group, self.head_classes)]
    }

    pub fn group_norm(&self, group: ParamGroup) -> f64 {
        self.group(group).iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn check_cache(
    net: &MicroNet,
    cache: &ForwardCache,
    rows: usize,
    cols: usize,
    what: &str,
) -> Result<(), MicronetError> {
    if cache.checksum != net.checksum() {
        return Err(MicronetError::StaleCache);
    }
    if rows != cache.n || cols == usize::MAX {
        return Err(MicronetError::ShapeMismatch(format!(
            "{what} has {rows} rows, cache holds {} images",
            cache.n
        )));
    }
    Ok(())
}

/// Conv-layer gradients of a loss given its gradient w.r.t. the embeddings.
/// Head entries are zero.
pub fn backward_from_embedding_grads(
    net: &MicroNet,
    cache: &ForwardCache,
    d_emb: &DMatrix<f64>,
) -> Result<Gradients, MicronetError> {
    check_cache(
        net,
        cache,
        d_emb.nrows(),
        d_emb.ncols(),
        "embedding gradient",
    )?;
    if d_emb.ncols() != EMBED_DIM {
        return Err(MicronetError::ShapeMismatch(format!(
            "embedding gradient has {} columns, expected {EMBED_DIM}",
            d_emb.ncols()
        )));
    }
    let head_classes = net.head_classes.unwrap_or(0);
    let mut values = vec![0.0; net.params.len()];
    let w2 = net.group(ParamGroup::Conv2Weight);
    let (mut dw1, mut db1) = (vec![0.0; CONV1_W], vec![0.0; C1]);
    let (mut dw2, mut db2) = (vec![0.0; CONV2_W], vec![0.0; C2]);
    let mut dpre2 = vec![0.0; C2 * PLANE2];
    let mut dpooled = vec![0.0; C1 * PLANE2];
    let mut dpre1 = vec![0.0; C1 * PLANE1];
    for i in 0..cache.n {
        if d_emb.row(i).iter().all(|&g| g == 0.0) {
            continue;
        }
        let pre2 = &cache.pre2[i * C2 * PLANE2..(i + 1) * C2 * PLANE2];
        for o in 0..C2 {
            let g = d_emb[(i, o)] / PLANE2 as f64;
            for p in 0..PLANE2 {
                let idx = o * PLANE2 + p;
                dpre2[idx] = if pre2[idx] > 0.0 { g } else { 0.0 };
            }
        }
        let pooled = &cache.pooled[i * C1 * PLANE2..(i + 1) * C1 * PLANE2];
        dpooled.fill(0.0);
        conv3x3_backward(
            pooled,
            C1,
            POOLED,
            w2,
            &dpre2,
            &mut dw2,
            &mut db2,
            Some(&mut dpooled),
        );
        dpre1.fill(0.0);
        let args = &cache.pool_arg[i * C1 * PLANE2..(i + 1) * C1 * PLANE2];
        for c in 0..C1 {
            for p in 0..PLANE2 {
                let idx = c * PLANE2 + p;
                if pooled[idx] > 0.0 {
                    dpre1[c * PLANE1 + args[idx] as usize] += dpooled[idx];
                }
            }
        }
        let input = &cache.input[i * IMAGE_LEN..(i + 1) * IMAGE_LEN];
        let w1 = net.group(ParamGroup::Conv1Weight);
        conv3x3_backward(input, IN_CH, SIDE, w1, &dpre1, &mut dw1, &mut db1, None);
    }
    for (group, src) in [
        (ParamGroup::Conv1Weight, &dw1),
        (ParamGroup::Conv1Bias, &db1),
        (ParamGroup::Conv2Weight, &dw2),
        (ParamGroup::Conv2Bias, &db2),
    ] {
        values[group_range(group, head_classes)].copy_from_slice(src);
    }
    Ok(Gradients {
        values,
        head_classes,
    })
}

/// Full gradient (head and conv layers) given the gradient w.r.t. the logits.
pub fn backward_from_logit_grads(
    net: &MicroNet,
    cache: &ForwardCache,
    d_logits: &DMatrix<f64>,
) -> Result<Gradients, MicronetError> {
    let z = net
        .head_classes
        .ok_or_else(|| MicronetError::InvalidSpec("network has no head".into()))?;
    check_cache(
        net,
        cache,
        d_logits.nrows(),
        d_logits.ncols(),
        "logit gradient",
    )?;
    if d_logits.ncols() != z {
        return Err(MicronetError::ShapeMismatch(format!(
            "logit gradient has {} columns, head has {z}",
            d_logits.ncols()
        )));
    }
    let w = DMatrix::from_row_slice(z, EMBED_DIM, net.group(ParamGroup::HeadWeight));
    let d_emb = d_logits * &w;
    let mut grads = backward_from_embedding_grads(net, cache, &d_emb)?;
    let dw = d_logits.transpose() * &cache.embeddings;
    let hw = group_range(ParamGroup::HeadWeight, z);
    for r in 0..z {
        for c in 0..EMBED_DIM {
            grads.values[hw.start + r * EMBED_DIM + c] = dw[(r, c)];
        }
    }
    let hb = group_range(ParamGroup::HeadBias, z);
    for r in 0..z {
        grads.values[hb.start + r] = d_logits.column(r).sum();
    }
    Ok(grads)
}

pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = logits.clone();
    for mut row in p.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// Mean cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy(
    logits: &DMatrix<f64>,
    labels: &[usize],
) -> Result<(f64, DMatrix<f64>), MicronetError> {
    let (n, z) = logits.shape();
    if labels.len() != n {
        return Err(MicronetError::ShapeMismatch(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= z) {
        return Err(MicronetError::ShapeMismatch(format!(
            "label {bad} for {z} classes"
        )));
    }
    let p = softmax_rows(logits);
    let mut loss = 0.0;
    let mut grad = p.clone();
    for (i, &y) in labels.iter().enumerate() {
        loss -= p[(i, y)].max(f64::MIN_POSITIVE).ln();
        grad[(i, y)] -= 1.0;
    }
    Ok((loss / n as f64, grad / n as f64))
}
