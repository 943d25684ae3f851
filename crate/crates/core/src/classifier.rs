//! Softmax classifier head trained on extracted features.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{gemm, DenseMatrix, Rng};

/// Real-valued fully connected layer from features to class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    /// `feature_dim x class_count`.
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            learning_rate: 0.5,
            epochs: 100,
            batch_size: 100,
            seed: 0,
        }
    }
}

impl ClassifierHead {
    pub fn zeros(feature_dim: usize, class_count: usize) -> Self {
        ClassifierHead {
            weights: DenseMatrix::zeros(feature_dim, class_count),
            bias: vec![0.0; class_count],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn class_count(&self) -> usize {
        self.weights.cols()
    }

    /// Class scores `W^T f + bias`.
    pub fn scores(&self, feature: &[f64]) -> Result<Vec<f64>> {
        check_len("classifier input", self.feature_dim(), feature.len())?;
        let mut s = self.weights.vec_mul(feature)?;
        for (x, b) in s.iter_mut().zip(&self.bias) {
            *x += b;
        }
        Ok(s)
    }

    /// Highest-scoring class; ties go to the lowest index.
    pub fn predict(&self, feature: &[f64]) -> Result<usize> {
        Ok(argmax(&self.scores(feature)?))
    }

    /// Predictions for every row of `features`.
    pub fn predict_batch(&self, features: &DenseMatrix) -> Result<Vec<usize>> {
        Ok(self.logits(features)?.iter_rows().map(argmax).collect())
    }

    fn logits(&self, features: &DenseMatrix) -> Result<DenseMatrix> {
        check_len("classifier input", self.feature_dim(), features.cols())?;
        let mut out = DenseMatrix::zeros(features.rows(), self.class_count());
        gemm(1.0, features, false, &self.weights, false, 0.0, &mut out);
        out.add_row_vector(&self.bias)?;
        Ok(out)
    }

    /// Fraction of rows whose prediction equals the label. Empty input is a
    /// domain error.
    pub fn accuracy(&self, features: &DenseMatrix, labels: &[usize]) -> Result<f64> {
        check_len("accuracy labels", features.rows(), labels.len())?;
        if labels.is_empty() {
            return Err(Error::domain("accuracy of an empty set is undefined"));
        }
        let correct = self
            .predict_batch(features)?
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        Ok(correct as f64 / labels.len() as f64)
    }

    /// Mean softmax cross-entropy over the rows and its gradient
    /// `(d/dW, d/dbias)`.
    pub fn loss_and_gradient(&self, features: &DenseMatrix, labels: &[usize]) -> Result<(f64, DenseMatrix, Vec<f64>)> {
        check_len("loss labels", features.rows(), labels.len())?;
        if labels.is_empty() {
            return Err(Error::domain("loss of an empty batch is undefined"));
        }
        let k = self.class_count();
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::contract(format!("label {bad} outside 0..{k}")));
        }
        let mut delta = self.logits(features)?;
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = delta.row_mut(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                z += *x;
            }
            loss -= (row[label] / z).ln();
            for x in row.iter_mut() {
                *x /= z;
            }
            row[label] -= 1.0;
        }
        let inv = 1.0 / labels.len() as f64;
        let mut grad_w = DenseMatrix::zeros(self.feature_dim(), k);
        gemm(inv, features, true, &delta, false, 0.0, &mut grad_w);
        let grad_b = delta.column_means();
        Ok((loss * inv, grad_w, grad_b))
    }
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Trains a zero-initialized head by mini-batch gradient descent on the
/// softmax cross-entropy, reshuffling the rows each epoch with the
/// configured seed.
pub fn train_head(
    features: &DenseMatrix,
    labels: &[usize],
    class_count: usize,
    cfg: &HeadConfig,
) -> Result<ClassifierHead> {
    train_head_with_progress(features, labels, class_count, cfg, |_, _| {})
}

/// [`train_head`] reporting the mean mini-batch loss after every epoch.
pub fn train_head_with_progress(
    features: &DenseMatrix,
    labels: &[usize],
    class_count: usize,
    cfg: &HeadConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<ClassifierHead> {
    check_len("train_head labels", features.rows(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::contract("cannot train a classifier on an empty data set"));
    }
    if class_count == 0 || cfg.batch_size == 0 {
        return Err(Error::contract("class count and batch size must be positive"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
        return Err(Error::contract(format!("label {bad} outside 0..{class_count}")));
    }

    let mut head = ClassifierHead::zeros(features.cols(), class_count);
    let mut rng = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, gw, gb) = head.loss_and_gradient(&x, &y)?;
            head.weights.add_scaled(-cfg.learning_rate, &gw)?;
            for (b, g) in head.bias.iter_mut().zip(&gb) {
                *b -= cfg.learning_rate * g;
            }
            loss_sum += loss;
            batches += 1;
        }
        progress(epoch, loss_sum / batches as f64);
    }
    Ok(head)
}
