//! Multiplier-free feedforward inference over sparse ternary connections.
//!
//! Each hidden unit stores two bit masks over the visible units, one for `+1`
//! connections and one for `-1` connections. Real-valued inputs are
//! accumulated by adding and subtracting the selected entries; binary inputs
//! reduce to two AND-popcounts per unit.

use crate::error::{check_len, Error, Result};
use crate::numerics::{sigmoid, DenseMatrix};

pub const WORD_BITS: usize = 64;

#[inline]
pub fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD_BITS)
}

/// Fixed-length bit vector packed little-endian into `u64` words.
/// Bits past `len` are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        BitVector {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut out = BitVector::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                out.set(i, true);
            }
        }
        out
    }

    /// Sets bit `i` iff `values[i] > threshold`.
    pub fn threshold(values: &[f64], threshold: f64) -> Self {
        let mut out = BitVector::zeros(values.len());
        for (i, &x) in values.iter().enumerate() {
            if x > threshold {
                out.set(i, true);
            }
        }
        out
    }

    pub fn from_words(len: usize, words: Vec<u64>) -> Result<Self> {
        check_len("BitVector words", words_for(len), words.len())?;
        let v = BitVector { len, words };
        if v.tail_is_clear() {
            Ok(v)
        } else {
            Err(Error::contract("bits beyond the vector length must be zero"))
        }
    }

    fn tail_is_clear(&self) -> bool {
        let rem = self.len % WORD_BITS;
        rem == 0 || self.words.last().is_none_or(|w| w >> rem == 0)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % WORD_BITS);
        if value {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    /// 0.0 / 1.0 embedding.
    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.len).map(|i| if self.get(i) { 1.0 } else { 0.0 }).collect()
    }
}

#[inline]
fn and_popcount(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones()).sum()
}

/// Sum of `v[i]` over the set bits of `mask`.
#[inline]
fn masked_sum(mask: &[u64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (k, &word) in mask.iter().enumerate() {
        let mut w = word;
        let base = k * WORD_BITS;
        while w != 0 {
            acc += v[base + w.trailing_zeros() as usize];
            w &= w - 1;
        }
    }
    acc
}

/// One layer of `+1` / `-1` / absent connections with real hidden biases.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBinaryLayer {
    visible: usize,
    hidden: usize,
    words_per_mask: usize,
    /// `hidden * words_per_mask` words; unit `j` owns `[j * wpm, (j + 1) * wpm)`.
    pos: Vec<u64>,
    neg: Vec<u64>,
    pub bias: Vec<f64>,
}

impl SparseBinaryLayer {
    /// Packs an `n x d` matrix over `{-1, 0, +1}`.
    pub fn pack(weights: &DenseMatrix, bias: &[f64]) -> Result<Self> {
        let (n, d) = weights.shape();
        check_len("pack_layer bias", d, bias.len())?;
        let wpm = words_for(n);
        let mut pos = vec![0u64; d * wpm];
        let mut neg = vec![0u64; d * wpm];
        for i in 0..n {
            let (word, bit) = (i / WORD_BITS, 1u64 << (i % WORD_BITS));
            for (j, &w) in weights.row(i).iter().enumerate() {
                if w == 1.0 {
                    pos[j * wpm + word] |= bit;
                } else if w == -1.0 {
                    neg[j * wpm + word] |= bit;
                } else if w != 0.0 {
                    return Err(Error::contract(format!(
                        "weight ({i}, {j}) = {w} is not in {{-1, 0, +1}}"
                    )));
                }
            }
        }
        Ok(SparseBinaryLayer {
            visible: n,
            hidden: d,
            words_per_mask: wpm,
            pos,
            neg,
            bias: bias.to_vec(),
        })
    }

    /// Rebuilds a layer from raw mask words, validating disjointness and padding.
    pub fn from_masks(visible: usize, hidden: usize, pos: Vec<u64>, neg: Vec<u64>, bias: Vec<f64>) -> Result<Self> {
        let wpm = words_for(visible);
        check_len("positive mask words", hidden * wpm, pos.len())?;
        check_len("negative mask words", hidden * wpm, neg.len())?;
        check_len("sparse layer bias", hidden, bias.len())?;
        let layer = SparseBinaryLayer {
            visible,
            hidden,
            words_per_mask: wpm,
            pos,
            neg,
            bias,
        };
        for j in 0..hidden {
            let (p, q) = (layer.pos_mask(j), layer.neg_mask(j));
            if p.iter().zip(q).any(|(a, b)| a & b != 0) {
                return Err(Error::contract(format!("unit {j} has a connection marked both +1 and -1")));
            }
            let rem = visible % WORD_BITS;
            if rem != 0 && (p[wpm - 1] >> rem != 0 || q[wpm - 1] >> rem != 0) {
                return Err(Error::contract(format!("unit {j} has mask bits past the visible count")));
            }
        }
        Ok(layer)
    }

    pub fn visible_count(&self) -> usize {
        self.visible
    }

    pub fn hidden_count(&self) -> usize {
        self.hidden
    }

    pub fn words_per_mask(&self) -> usize {
        self.words_per_mask
    }

    pub fn pos_mask(&self, j: usize) -> &[u64] {
        &self.pos[j * self.words_per_mask..(j + 1) * self.words_per_mask]
    }

    pub fn neg_mask(&self, j: usize) -> &[u64] {
        &self.neg[j * self.words_per_mask..(j + 1) * self.words_per_mask]
    }

    /// Number of `+1` and `-1` connections into unit `j`.
    pub fn in_degree(&self, j: usize) -> usize {
        let ones = |m: &[u64]| m.iter().map(|w| w.count_ones() as usize).sum::<usize>();
        ones(self.pos_mask(j)) + ones(self.neg_mask(j))
    }

    pub fn reserved_count(&self) -> usize {
        (0..self.hidden).map(|j| self.in_degree(j)).sum()
    }

    /// Bytes occupied by the two connection masks of every unit.
    pub fn mask_bytes(&self) -> usize {
        2 * self.hidden * self.words_per_mask * 8
    }

    pub fn unpack(&self) -> DenseMatrix {
        let mut w = DenseMatrix::zeros(self.visible, self.hidden);
        for j in 0..self.hidden {
            for i in 0..self.visible {
                let (word, bit) = (i / WORD_BITS, i % WORD_BITS);
                if self.pos_mask(j)[word] >> bit & 1 == 1 {
                    w.set(i, j, 1.0);
                } else if self.neg_mask(j)[word] >> bit & 1 == 1 {
                    w.set(i, j, -1.0);
                }
            }
        }
        w
    }

    /// Pre-activations `sum_{pos} v_i - sum_{neg} v_i + b_j`.
    pub fn preactivation_real(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("forward_real input", self.visible, v.len())?;
        Ok((0..self.hidden)
            .map(|j| masked_sum(self.pos_mask(j), v) - masked_sum(self.neg_mask(j), v) + self.bias[j])
            .collect())
    }

    /// Hidden probabilities for a real-valued input.
    pub fn forward_real(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.preactivation_real(v)?.into_iter().map(sigmoid).collect())
    }

    /// Integer pre-activations `z_j` and output bits `z_j + b_j > 0` for a
    /// binary input. The tie `z_j + b_j = 0` maps to 0.
    pub fn forward_binary(&self, v: &BitVector) -> Result<(Vec<i32>, BitVector)> {
        check_len("forward_binary input", self.visible, v.len())?;
        let mut z = Vec::with_capacity(self.hidden);
        let mut bits = BitVector::zeros(self.hidden);
        for j in 0..self.hidden {
            let zj = and_popcount(v.words(), self.pos_mask(j)) as i32
                - and_popcount(v.words(), self.neg_mask(j)) as i32;
            if zj as f64 + self.bias[j] > 0.0 {
                bits.set(j, true);
            }
            z.push(zj);
        }
        Ok((z, bits))
    }
}

/// Whether features between layers stay real (probabilities) or are binarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    RealFeatures,
    BinaryFeatures,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetworkOutput {
    Real(Vec<f64>),
    Bits(BitVector),
}

impl NetworkOutput {
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            NetworkOutput::Real(v) => v.clone(),
            NetworkOutput::Bits(b) => b.to_f64(),
        }
    }
}

/// Input binarization threshold for the binary-feature pipeline.
pub const FEATURE_THRESHOLD: f64 = 0.5;

/// Runs the packed layers in sequence.
///
/// In binary mode the input is first thresholded at 0.5 and every layer's
/// output stays binary; with zero layers the (binarized) input is returned.
pub fn run_network(layers: &[SparseBinaryLayer], v: &[f64], mode: FeatureMode) -> Result<NetworkOutput> {
    for w in layers.windows(2) {
        check_len("run_network layer chaining", w[0].hidden_count(), w[1].visible_count())?;
    }
    if let Some(first) = layers.first() {
        check_len("run_network input", first.visible_count(), v.len())?;
    }
    match mode {
        FeatureMode::RealFeatures => {
            let mut x = v.to_vec();
            for layer in layers {
                x = layer.forward_real(&x)?;
            }
            Ok(NetworkOutput::Real(x))
        }
        FeatureMode::BinaryFeatures => {
            let mut x = BitVector::threshold(v, FEATURE_THRESHOLD);
            for layer in layers {
                x = layer.forward_binary(&x)?.1;
            }
            Ok(NetworkOutput::Bits(x))
        }
    }
}

/// [`run_network`] over every row of `data`, returning features as reals.
pub fn run_network_batch(layers: &[SparseBinaryLayer], data: &DenseMatrix, mode: FeatureMode) -> Result<DenseMatrix> {
    let width = layers.last().map_or(data.cols(), |l| l.hidden_count());
    let mut out = Vec::with_capacity(data.rows() * width);
    for row in data.iter_rows() {
        out.extend(run_network(layers, row, mode)?.to_f64());
    }
    DenseMatrix::from_vec(data.rows(), width, out)
}
