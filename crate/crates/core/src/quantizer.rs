//! Threshold sparsification, sign binarization and weight-memory accounting.
//!
//! A trained stack is quantized in up to three steps: weights with
//! `|w| <= u` are dropped ([`sparsify`]), the survivors are replaced by their
//! signs ([`binarize`]), and optionally the hidden features are thresholded
//! at 0.5 ([`binarize_features`]). Biases are never quantized.

use std::fmt::Write as _;

use crate::classifier::ClassifierHead;
use crate::error::{check_len, Error, Result};
use crate::numerics::DenseMatrix;
use crate::rbm::RbmParams;
use crate::sparse::{run_network_batch, words_for, FeatureMode, SparseBinaryLayer, FEATURE_THRESHOLD};
use crate::stack::DanModel;

/// Number of weights with `|w| >= u`.
pub fn reserved_count(w: &DenseMatrix, u: f64) -> usize {
    w.as_slice().iter().filter(|x| x.abs() >= u).count()
}

/// Reserved ratio: the fraction of weights with `|w| >= u`.
pub fn sigma(w: &DenseMatrix, u: f64) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    reserved_count(w, u) as f64 / w.len() as f64
}

/// Threshold that keeps the `floor(target * N)` largest-magnitude weights.
///
/// The returned `u` lies strictly between the largest dropped magnitude and
/// the smallest kept one, so `sigma(w, u) <= target` and [`sparsify`] (which
/// drops `|w| <= u`) keeps exactly the weights counted by `sigma`. When ties
/// straddle the cut the whole tied group is dropped. `target = 1` returns 0.
pub fn threshold_for_sigma(w: &DenseMatrix, target: f64) -> Result<f64> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::domain(format!("target reserved ratio {target} outside (0, 1]")));
    }
    let n = w.len();
    let exact = target * n as f64;
    let keep = if (exact - exact.round()).abs() < 1e-6 {
        exact.round() as usize
    } else {
        exact.floor() as usize
    };
    if keep >= n {
        return Ok(0.0);
    }
    let mut mags: Vec<f64> = w.as_slice().iter().map(|x| x.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    let dropped = mags[keep];
    let kept = mags[..keep].iter().rev().find(|&&m| m > dropped).copied();
    Ok(match kept {
        Some(a) => {
            let mid = dropped + (a - dropped) / 2.0;
            if mid > dropped && mid < a {
                mid
            } else {
                a
            }
        }
        None => dropped.next_up(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    /// Thresholded real weights.
    SparseReal,
    /// Thresholded `+1 / -1` weights, real features.
    SparseBinary,
    /// Thresholded `+1 / -1` weights and 0.5-thresholded binary features.
    SparseBinaryBinaryFeatures,
}

impl QuantMode {
    pub fn variant_name(self) -> &'static str {
        match self {
            QuantMode::SparseReal => "DAN_s",
            QuantMode::SparseBinary => "DAN_b",
            QuantMode::SparseBinaryBinaryFeatures => "DAN_B",
        }
    }

    pub fn weight_bits(self) -> u32 {
        match self {
            QuantMode::SparseReal => 32,
            _ => 1,
        }
    }

    pub fn feature_bits(self) -> u32 {
        match self {
            QuantMode::SparseBinaryBinaryFeatures => 1,
            _ => 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuantizedLayers {
    SparseReal(Vec<RbmParams>),
    SparseBinary {
        layers: Vec<SparseBinaryLayer>,
        binary_features: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub layers: QuantizedLayers,
    /// Threshold `u` used for each layer.
    pub thresholds: Vec<f64>,
    pub head: Option<ClassifierHead>,
}

impl QuantizedModel {
    pub fn mode(&self) -> QuantMode {
        match &self.layers {
            QuantizedLayers::SparseReal(_) => QuantMode::SparseReal,
            QuantizedLayers::SparseBinary { binary_features: false, .. } => QuantMode::SparseBinary,
            QuantizedLayers::SparseBinary { binary_features: true, .. } => {
                QuantMode::SparseBinaryBinaryFeatures
            }
        }
    }

    /// 0.5 for the binary-feature mode; `None` otherwise.
    pub fn feature_threshold(&self) -> Option<f64> {
        (self.mode() == QuantMode::SparseBinaryBinaryFeatures).then_some(FEATURE_THRESHOLD)
    }

    pub fn depth(&self) -> usize {
        match &self.layers {
            QuantizedLayers::SparseReal(l) => l.len(),
            QuantizedLayers::SparseBinary { layers, .. } => layers.len(),
        }
    }

    pub fn input_dim(&self) -> Option<usize> {
        match &self.layers {
            QuantizedLayers::SparseReal(l) => l.first().map(RbmParams::visible_count),
            QuantizedLayers::SparseBinary { layers, .. } => layers.first().map(SparseBinaryLayer::visible_count),
        }
    }

    /// `(visible, hidden, reserved)` per layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, usize)> {
        match &self.layers {
            QuantizedLayers::SparseReal(l) => l
                .iter()
                .map(|p| (p.visible_count(), p.hidden_count(), reserved_count_nonzero(&p.weights)))
                .collect(),
            QuantizedLayers::SparseBinary { layers, .. } => layers
                .iter()
                .map(|p| (p.visible_count(), p.hidden_count(), p.reserved_count()))
                .collect(),
        }
    }

    /// Hidden biases of each layer.
    pub fn hidden_biases(&self) -> Vec<&[f64]> {
        match &self.layers {
            QuantizedLayers::SparseReal(l) => l.iter().map(|p| p.hidden_bias.as_slice()).collect(),
            QuantizedLayers::SparseBinary { layers, .. } => layers.iter().map(|p| p.bias.as_slice()).collect(),
        }
    }

    /// Features of the last layer for every row of `data`. Binary features
    /// are returned as 0.0 / 1.0.
    pub fn transform(&self, data: &DenseMatrix) -> Result<DenseMatrix> {
        match &self.layers {
            QuantizedLayers::SparseReal(layers) => {
                let mut x = data.clone();
                for layer in layers {
                    x = layer.hidden_probs_batch(&x)?;
                }
                Ok(x)
            }
            QuantizedLayers::SparseBinary { layers, binary_features } => {
                let mode = if *binary_features {
                    FeatureMode::BinaryFeatures
                } else {
                    FeatureMode::RealFeatures
                };
                run_network_batch(layers, data, mode)
            }
        }
    }
}

fn reserved_count_nonzero(w: &DenseMatrix) -> usize {
    w.as_slice().iter().filter(|&&x| x != 0.0).count()
}

/// Zeroes every weight with `|w| <= u`. `thresholds` holds one value per
/// layer, or a single value shared by all layers. The classifier head and all
/// biases are carried over unchanged.
pub fn sparsify(model: &DanModel, thresholds: &[f64]) -> Result<QuantizedModel> {
    let per_layer: Vec<f64> = match thresholds.len() {
        1 => vec![thresholds[0]; model.depth()],
        _ => {
            check_len("sparsify thresholds", model.depth(), thresholds.len())?;
            thresholds.to_vec()
        }
    };
    if let Some(bad) = per_layer.iter().find(|u| !(**u >= 0.0)) {
        return Err(Error::domain(format!("threshold {bad} must be >= 0")));
    }
    let layers = model
        .layers
        .iter()
        .zip(&per_layer)
        .map(|(p, &u)| {
            let mut q = p.clone();
            q.weights.map_inplace(|w| if w.abs() <= u { 0.0 } else { w });
            q
        })
        .collect();
    Ok(QuantizedModel {
        layers: QuantizedLayers::SparseReal(layers),
        thresholds: per_layer,
        head: model.head.clone(),
    })
}

/// Per-layer thresholds that reserve `target` of each layer's weights.
pub fn thresholds_for_sigma(model: &DanModel, target: f64) -> Result<Vec<f64>> {
    model
        .layers
        .iter()
        .map(|p| threshold_for_sigma(&p.weights, target))
        .collect()
}

/// Replaces every reserved weight by its sign and packs the layers.
pub fn binarize(model: &QuantizedModel) -> Result<QuantizedModel> {
    let QuantizedLayers::SparseReal(layers) = &model.layers else {
        return Err(Error::contract(format!(
            "binarize expects a sparse real-valued model, got {}",
            model.mode().variant_name()
        )));
    };
    let packed = layers
        .iter()
        .map(|p| SparseBinaryLayer::pack(&p.weights.map(sign), &p.hidden_bias))
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedModel {
        layers: QuantizedLayers::SparseBinary {
            layers: packed,
            binary_features: false,
        },
        thresholds: model.thresholds.clone(),
        head: model.head.clone(),
    })
}

/// Switches a binary-weight model to binary (0.5-thresholded) features.
pub fn binarize_features(model: &QuantizedModel) -> Result<QuantizedModel> {
    match &model.layers {
        QuantizedLayers::SparseBinary { layers, .. } => Ok(QuantizedModel {
            layers: QuantizedLayers::SparseBinary {
                layers: layers.clone(),
                binary_features: true,
            },
            thresholds: model.thresholds.clone(),
            head: model.head.clone(),
        }),
        QuantizedLayers::SparseReal(_) => Err(Error::contract(
            "binary features need binary weights; binarize the model first",
        )),
    }
}

fn sign(w: f64) -> f64 {
    if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Quantizes a trained stack into the requested mode with one shared target
/// reserved ratio per layer.
pub fn quantize_to_sigma(model: &DanModel, mode: QuantMode, target: f64) -> Result<QuantizedModel> {
    let thresholds = thresholds_for_sigma(model, target)?;
    quantize_with_thresholds(model, mode, &thresholds)
}

pub fn quantize_with_thresholds(model: &DanModel, mode: QuantMode, thresholds: &[f64]) -> Result<QuantizedModel> {
    let sparse = sparsify(model, thresholds)?;
    match mode {
        QuantMode::SparseReal => Ok(sparse),
        QuantMode::SparseBinary => binarize(&sparse),
        QuantMode::SparseBinaryBinaryFeatures => binarize_features(&binarize(&sparse)?),
    }
}

/// Memory figures of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub layer: usize,
    pub visible: usize,
    pub hidden: usize,
    pub threshold: f64,
    pub sigma: f64,
    pub reserved_count: usize,
    pub total_count: usize,
    /// Storage of this layer's weights in its deployable packed form.
    pub with_index_bytes: usize,
}

/// Per-layer reserved ratios and weight-memory totals.
///
/// `dense_bytes` is 4 bytes per weight, `sparse_real_bytes` 4 bytes per
/// reserved weight and `sparse_binary_bytes` one bit per reserved weight.
/// None of them counts biases or index structures. `with_index_bytes` is the
/// size of the packed representation actually used: two `n`-bit masks per
/// hidden unit for binary weights, and one presence mask plus 4-byte values
/// for sparse real weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationReport {
    pub variant: String,
    pub weight_bits: u32,
    pub feature_bits: u32,
    pub layers: Vec<LayerReport>,
    pub dense_bytes: usize,
    pub sparse_real_bytes: usize,
    pub sparse_binary_bytes: usize,
    pub with_index_bytes: usize,
}

pub const REPORT_CSV_HEADER: &str =
    "layer,visible,hidden,threshold,sigma,reserved,total,dense_bytes,sparse_real_bytes,sparse_binary_bytes,with_index_bytes";

impl QuantizationReport {
    fn from_layers(variant: &str, weight_bits: u32, feature_bits: u32, layers: Vec<LayerReport>) -> Self {
        let total: usize = layers.iter().map(|l| l.total_count).sum();
        let reserved: usize = layers.iter().map(|l| l.reserved_count).sum();
        let with_index_bytes = layers.iter().map(|l| l.with_index_bytes).sum();
        QuantizationReport {
            variant: variant.to_string(),
            weight_bits,
            feature_bits,
            layers,
            dense_bytes: 4 * total,
            sparse_real_bytes: 4 * reserved,
            sparse_binary_bytes: reserved.div_ceil(8),
            with_index_bytes,
        }
    }

    /// Unweighted mean of the per-layer reserved ratios.
    pub fn average_sigma(&self) -> f64 {
        if self.layers.is_empty() {
            return 0.0;
        }
        self.layers.iter().map(|l| l.sigma).sum::<f64>() / self.layers.len() as f64
    }

    /// Weight memory of this variant in KiB, in the reporting convention
    /// of the published comparison table: 32-bit weight tables round to the
    /// nearest KiB (halves up), single-bit tables truncate.
    pub fn weight_memory_kib(&self) -> u64 {
        if self.weight_bits == 1 {
            (self.sparse_binary_bytes / 1024) as u64
        } else if self.variant == QuantMode::SparseReal.variant_name() {
            kib_round_half_up(self.sparse_real_bytes)
        } else {
            kib_round_half_up(self.dense_bytes)
        }
    }

    /// Packed-format weight memory in KiB, rounded up.
    pub fn with_index_kib(&self) -> u64 {
        self.with_index_bytes.div_ceil(1024) as u64
    }

    /// One row per layer followed by a `total` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{REPORT_CSV_HEADER}").unwrap();
        for l in &self.layers {
            writeln!(
                out,
                "{},{},{},{:.9},{:.6},{},{},{},{},{},{}",
                l.layer,
                l.visible,
                l.hidden,
                l.threshold,
                l.sigma,
                l.reserved_count,
                l.total_count,
                4 * l.total_count,
                4 * l.reserved_count,
                l.reserved_count.div_ceil(8),
                l.with_index_bytes
            )
            .unwrap();
        }
        let total: usize = self.layers.iter().map(|l| l.total_count).sum();
        let reserved: usize = self.layers.iter().map(|l| l.reserved_count).sum();
        writeln!(
            out,
            "total,,,,{:.6},{},{},{},{},{},{}",
            self.average_sigma(),
            reserved,
            total,
            self.dense_bytes,
            self.sparse_real_bytes,
            self.sparse_binary_bytes,
            self.with_index_bytes
        )
        .unwrap();
        out
    }
}

fn kib_round_half_up(bytes: usize) -> u64 {
    ((bytes + 512) / 1024) as u64
}

/// Report for an unquantized stack: every weight reserved, stored densely.
pub fn dense_memory_report(model: &DanModel, variant: &str) -> QuantizationReport {
    let layers = model
        .layers
        .iter()
        .enumerate()
        .map(|(t, p)| {
            let total = p.weights.len();
            LayerReport {
                layer: t,
                visible: p.visible_count(),
                hidden: p.hidden_count(),
                threshold: 0.0,
                sigma: sigma(&p.weights, 0.0),
                reserved_count: total,
                total_count: total,
                with_index_bytes: 4 * total,
            }
        })
        .collect();
    QuantizationReport::from_layers(variant, 32, 32, layers)
}

pub fn memory_report(model: &QuantizedModel) -> QuantizationReport {
    let mode = model.mode();
    let layers = model
        .layer_shapes()
        .into_iter()
        .enumerate()
        .map(|(t, (n, d, reserved))| {
            let total = n * d;
            let mask_bytes = d * words_for(n) * 8;
            let with_index_bytes = match mode {
                QuantMode::SparseReal => mask_bytes + 4 * reserved,
                _ => 2 * mask_bytes,
            };
            LayerReport {
                layer: t,
                visible: n,
                hidden: d,
                threshold: model.thresholds.get(t).copied().unwrap_or(0.0),
                sigma: if total == 0 { 0.0 } else { reserved as f64 / total as f64 },
                reserved_count: reserved,
                total_count: total,
                with_index_bytes,
            }
        })
        .collect();
    QuantizationReport::from_layers(mode.variant_name(), mode.weight_bits(), mode.feature_bits(), layers)
}
