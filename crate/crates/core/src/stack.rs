//! Greedy layer-wise training of stacked RBMs and feedforward feature
//! extraction through the stack.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierHead;
use crate::error::{check_len, Error, Result};
use crate::numerics::{sigmoid, DenseMatrix, Rng};
use crate::rbm::{RbmParams, TrainConfig, VisibleKind};
use crate::regularizer::{decay_update, RegularizerConfig};

/// A stack of trained RBM layers (a DBN when unregularized).
#[derive(Debug, Clone, PartialEq)]
pub struct DanModel {
    pub layers: Vec<RbmParams>,
    pub reg_config: Option<RegularizerConfig>,
    pub train_config: Option<TrainConfig>,
    /// Free-form metadata such as the training data hash.
    pub provenance: BTreeMap<String, String>,
    pub head: Option<ClassifierHead>,
}

/// Progress of one training epoch, reported after the epoch finishes.
pub struct EpochProgress<'a> {
    pub layer: usize,
    pub epoch: usize,
    /// Mean squared mean-field reconstruction error over the epoch's batches.
    pub reconstruction_error: f64,
    pub params: &'a RbmParams,
}

/// Serializable snapshot of the configs that produced a model.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub(crate) struct ModelMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularizer: Option<RegularizerConfig>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provenance: BTreeMap<String, String>,
}

impl DanModel {
    pub fn from_layers(layers: Vec<RbmParams>) -> Result<Self> {
        let model = DanModel {
            layers,
            reg_config: None,
            train_config: None,
            provenance: BTreeMap::new(),
            head: None,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks parameter shapes and that adjacent layers chain.
    pub fn validate(&self) -> Result<()> {
        for (t, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if t > 0 {
                check_len(
                    "DanModel layer chaining",
                    self.layers[t - 1].hidden_count(),
                    layer.visible_count(),
                )?;
                if layer.visible_kind != VisibleKind::Bernoulli {
                    return Err(Error::contract(format!(
                        "layer {t} consumes probabilities and must have Bernoulli visible units"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(RbmParams::visible_count)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(RbmParams::hidden_count)
    }

    /// Hidden probabilities of layer `depth` for one input; `depth = 0` is the input.
    pub fn extract_features(&self, v: &[f64], depth: usize) -> Result<Vec<f64>> {
        if depth > self.layers.len() {
            return Err(Error::contract(format!(
                "feature depth {depth} exceeds the {} layers of the model",
                self.layers.len()
            )));
        }
        if let Some(n) = self.input_dim() {
            check_len("extract_features input", n, v.len())?;
        }
        let mut x = v.to_vec();
        for layer in &self.layers[..depth] {
            x = layer.prob_h_given_v(&x)?;
        }
        Ok(x)
    }

    /// Batched [`extract_features`](Self::extract_features) over the rows of `data`.
    pub fn transform(&self, data: &DenseMatrix, depth: usize) -> Result<DenseMatrix> {
        if depth > self.layers.len() {
            return Err(Error::contract(format!(
                "feature depth {depth} exceeds the {} layers of the model",
                self.layers.len()
            )));
        }
        let mut x = data.clone();
        for layer in &self.layers[..depth] {
            x = layer.hidden_probs_batch(&x)?;
        }
        Ok(x)
    }

    pub(crate) fn metadata(&self) -> ModelMetadata {
        ModelMetadata {
            train: self.train_config.clone(),
            regularizer: self.reg_config.clone(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Trains one layer on `data` with contrastive divergence, calling
/// `after_batch` on the parameters after every mini-batch update.
///
/// Each epoch visits the rows in a fresh seeded shuffle; the final batch may
/// be shorter than `cfg.batch_size`.
pub fn train_layer(
    rng: &mut Rng,
    data: &DenseMatrix,
    hidden: usize,
    visible_kind: VisibleKind,
    cfg: &TrainConfig,
    mut after_batch: impl FnMut(&mut RbmParams),
    mut progress: impl FnMut(usize, f64, &RbmParams),
) -> Result<RbmParams> {
    cfg.validate()?;
    if data.rows() == 0 {
        return Err(Error::contract("cannot train on an empty data set"));
    }
    if hidden == 0 {
        return Err(Error::contract("a layer needs at least one hidden unit"));
    }
    let mut params = RbmParams::initial(rng, data.cols(), hidden, visible_kind);
    let mut order: Vec<usize> = (0..data.rows()).collect();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut err_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select_rows(chunk);
            err_sum += params.cd_update(rng, &batch, cfg)?;
            batches += 1;
            after_batch(&mut params);
        }
        progress(epoch, err_sum / batches as f64, &params);
    }
    Ok(params)
}

/// Greedy layer-wise training: layer `t` is trained on the hidden
/// probabilities of the frozen layers below it, with the regularizer's decay
/// step applied after every contrastive-divergence batch.
///
/// `layer_sizes[0]` is the input dimension. Layer `t` draws from the child
/// stream `Rng::new(cfg.seed).split(t)`.
pub fn train_stack(
    data: &DenseMatrix,
    layer_sizes: &[usize],
    train_cfg: &TrainConfig,
    reg_cfg: &RegularizerConfig,
) -> Result<DanModel> {
    train_stack_with_progress(data, layer_sizes, train_cfg, reg_cfg, |_| {})
}

pub fn train_stack_with_progress(
    data: &DenseMatrix,
    layer_sizes: &[usize],
    train_cfg: &TrainConfig,
    reg_cfg: &RegularizerConfig,
    mut progress: impl FnMut(&EpochProgress<'_>),
) -> Result<DanModel> {
    if layer_sizes.len() < 2 {
        return Err(Error::contract("a stack needs the input size and at least one hidden layer"));
    }
    check_len("train_stack input dimension", layer_sizes[0], data.cols())?;
    if data.rows() == 0 {
        return Err(Error::contract("cannot train on an empty data set"));
    }
    reg_cfg.validate()?;

    let root = Rng::new(train_cfg.seed);
    let mut layers = Vec::with_capacity(layer_sizes.len() - 1);
    let mut input = data.clone();
    for (t, &hidden) in layer_sizes[1..].iter().enumerate() {
        let mut rng = root.split(t as u64);
        let report = |epoch: usize, err: f64, p: &RbmParams| {
            progress(&EpochProgress {
                layer: t,
                epoch,
                reconstruction_error: err,
                params: p,
            })
        };
        let params = if reg_cfg.is_inactive() {
            train_layer(&mut rng, &input, hidden, VisibleKind::Bernoulli, train_cfg, |_| {}, report)?
        } else {
            let lr = train_cfg.learning_rate;
            train_layer(
                &mut rng,
                &input,
                hidden,
                VisibleKind::Bernoulli,
                train_cfg,
                |p| decay_update(p, reg_cfg, lr),
                report,
            )?
        };
        if t + 2 < layer_sizes.len() {
            input = params.hidden_probs_batch(&input)?;
        }
        layers.push(params);
    }

    let mut model = DanModel::from_layers(layers)?;
    model.reg_config = Some(reg_cfg.clone());
    model.train_config = Some(train_cfg.clone());
    Ok(model)
}

/// Activation statistics of one hidden unit over a data set.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitStats {
    pub layer: usize,
    pub unit: usize,
    pub mean_activation: f64,
    /// Mean of `|h_j - sigmoid(b_j)|`: activity relative to the unit's
    /// input-independent resting value.
    pub mean_centered: f64,
}

pub const UNIT_STATS_CSV_HEADER: &str = "layer,unit,mean_activation,mean_centered";

impl UnitStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.8},{:.8}",
            self.layer, self.unit, self.mean_activation, self.mean_centered
        )
    }
}

/// Per-unit activation statistics for every layer, in layer then unit order.
pub fn feature_sparsity_stats(model: &DanModel, data: &DenseMatrix) -> Result<Vec<UnitStats>> {
    let mut out = Vec::new();
    let mut x = data.clone();
    for (t, layer) in model.layers.iter().enumerate() {
        x = layer.hidden_probs_batch(&x)?;
        let rest: Vec<f64> = layer.hidden_bias.iter().map(|&b| sigmoid(b)).collect();
        let mut sum = vec![0.0; layer.hidden_count()];
        let mut centered = vec![0.0; layer.hidden_count()];
        for row in x.iter_rows() {
            for j in 0..row.len() {
                sum[j] += row[j];
                centered[j] += (row[j] - rest[j]).abs();
            }
        }
        let inv = if x.rows() > 0 { 1.0 / x.rows() as f64 } else { 0.0 };
        for j in 0..layer.hidden_count() {
            out.push(UnitStats {
                layer: t,
                unit: j,
                mean_activation: sum[j] * inv,
                mean_centered: centered[j] * inv,
            });
        }
    }
    Ok(out)
}
