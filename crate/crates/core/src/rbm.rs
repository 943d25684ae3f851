//! A single restricted Boltzmann machine layer: energy, conditionals, Gibbs
//! sampling and the contrastive-divergence update.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{gemm, sigmoid, DenseMatrix, Rng};

/// Distribution of the visible units given the hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VisibleKind {
    /// Binary visible units; `p(v_i = 1 | h)` is a sigmoid.
    Bernoulli,
    /// Real visible units with unit-variance Gaussian conditionals.
    Gaussian,
}

/// Parameters of one RBM layer with `n` visible and `d` hidden units.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    /// Connection weights, `n x d`.
    pub weights: DenseMatrix,
    /// Hidden bias, length `d`.
    pub hidden_bias: Vec<f64>,
    /// Visible bias, length `n`.
    pub visible_bias: Vec<f64>,
    pub visible_kind: VisibleKind,
}

/// Hyperparameters of contrastive-divergence training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub cd_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 50,
            batch_size: 100,
            cd_steps: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::contract(format!(
                "learning rate must be non-negative and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch size must be at least 1"));
        }
        if self.cd_steps == 0 {
            return Err(Error::contract("contrastive divergence needs at least one Gibbs step"));
        }
        Ok(())
    }
}

/// Result of one Gibbs iteration started from a visible vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsStep {
    pub h_sample: Vec<bool>,
    /// Mean-field reconstruction of the visible layer.
    pub v_recon: Vec<f64>,
    pub h_recon_prob: Vec<f64>,
}

impl RbmParams {
    pub fn new(
        weights: DenseMatrix,
        hidden_bias: Vec<f64>,
        visible_bias: Vec<f64>,
        visible_kind: VisibleKind,
    ) -> Result<Self> {
        let params = RbmParams {
            weights,
            hidden_bias,
            visible_bias,
            visible_kind,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn zeros(n: usize, d: usize, visible_kind: VisibleKind) -> Self {
        RbmParams {
            weights: DenseMatrix::zeros(n, d),
            hidden_bias: vec![0.0; d],
            visible_bias: vec![0.0; n],
            visible_kind,
        }
    }

    /// Weights drawn from `N(0, 0.01^2)`, zero biases.
    pub fn initial(rng: &mut Rng, n: usize, d: usize, visible_kind: VisibleKind) -> Self {
        let weights = DenseMatrix::from_fn(n, d, |_, _| 0.01 * rng.standard_normal());
        RbmParams {
            weights,
            ..RbmParams::zeros(n, d, visible_kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_len("RbmParams visible bias", self.weights.rows(), self.visible_bias.len())?;
        check_len("RbmParams hidden bias", self.weights.cols(), self.hidden_bias.len())?;
        let finite = self.weights.is_finite()
            && self.hidden_bias.iter().chain(&self.visible_bias).all(|x| x.is_finite());
        if !finite {
            return Err(Error::domain("RBM parameters contain non-finite values"));
        }
        Ok(())
    }

    #[inline]
    pub fn visible_count(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn hidden_count(&self) -> usize {
        self.weights.cols()
    }

    /// `E(v, h) = -b'h - c'v - v'Wh`.
    pub fn energy(&self, v: &[f64], h: &[bool]) -> Result<f64> {
        check_len("energy visible", self.visible_count(), v.len())?;
        check_len("energy hidden", self.hidden_count(), h.len())?;
        let hidden_term: f64 = self
            .hidden_bias
            .iter()
            .zip(h)
            .filter(|(_, &on)| on)
            .map(|(b, _)| b)
            .sum();
        let visible_term: f64 = self.visible_bias.iter().zip(v).map(|(c, x)| c * x).sum();
        let mut coupling = 0.0;
        for (i, &vi) in v.iter().enumerate() {
            let row = self.weights.row(i);
            for (j, &on) in h.iter().enumerate() {
                if on {
                    coupling += vi * row[j];
                }
            }
        }
        Ok(-hidden_term - visible_term - coupling)
    }

    /// `p(h_j = 1 | v) = sigmoid(sum_i w_ij v_i + b_j)`.
    pub fn prob_h_given_v(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("prob_h_given_v", self.visible_count(), v.len())?;
        let mut act = self.weights.vec_mul(v)?;
        for (a, b) in act.iter_mut().zip(&self.hidden_bias) {
            *a = sigmoid(*a + b);
        }
        Ok(act)
    }

    /// Bernoulli kind: `p(v_i = 1 | h)`; Gaussian kind: the conditional means.
    pub fn prob_v_given_h(&self, h: &[bool]) -> Result<Vec<f64>> {
        let hf: Vec<f64> = h.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        self.visible_mean(&hf)
    }

    /// Conditional mean of the visible layer for real-valued hidden activity.
    pub fn visible_mean(&self, h: &[f64]) -> Result<Vec<f64>> {
        check_len("prob_v_given_h", self.hidden_count(), h.len())?;
        let mut act = self.weights.mul_vec(h)?;
        for (a, c) in act.iter_mut().zip(&self.visible_bias) {
            *a += c;
            if self.visible_kind == VisibleKind::Bernoulli {
                *a = sigmoid(*a);
            }
        }
        Ok(act)
    }

    pub fn sample_h(&self, rng: &mut Rng, v: &[f64]) -> Result<Vec<bool>> {
        Ok(self
            .prob_h_given_v(v)?
            .into_iter()
            .map(|p| rng.bit(p))
            .collect())
    }

    /// Draws a visible vector: binary for Bernoulli units, `N(mean, 1)` for Gaussian.
    pub fn sample_v(&self, rng: &mut Rng, h: &[bool]) -> Result<Vec<f64>> {
        let means = self.prob_v_given_h(h)?;
        Ok(match self.visible_kind {
            VisibleKind::Bernoulli => means
                .into_iter()
                .map(|p| if rng.bit(p) { 1.0 } else { 0.0 })
                .collect(),
            VisibleKind::Gaussian => means
                .into_iter()
                .map(|m| m + rng.standard_normal())
                .collect(),
        })
    }

    pub fn gibbs_step(&self, rng: &mut Rng, v: &[f64]) -> Result<GibbsStep> {
        let h_sample = self.sample_h(rng, v)?;
        let v_recon = self.prob_v_given_h(&h_sample)?;
        let h_recon_prob = self.prob_h_given_v(&v_recon)?;
        Ok(GibbsStep {
            h_sample,
            v_recon,
            h_recon_prob,
        })
    }

    /// Hidden probabilities for every row of `v` (`batch x n` -> `batch x d`).
    pub fn hidden_probs_batch(&self, v: &DenseMatrix) -> Result<DenseMatrix> {
        check_len("hidden_probs_batch", self.visible_count(), v.cols())?;
        let mut out = DenseMatrix::zeros(v.rows(), self.hidden_count());
        gemm(1.0, v, false, &self.weights, false, 0.0, &mut out);
        out.add_row_vector(&self.hidden_bias)?;
        out.map_inplace(sigmoid);
        Ok(out)
    }

    /// Visible conditional means for every row of `h` (`batch x d` -> `batch x n`).
    pub fn visible_means_batch(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        check_len("visible_means_batch", self.hidden_count(), h.cols())?;
        let mut out = DenseMatrix::zeros(h.rows(), self.visible_count());
        gemm(1.0, h, false, &self.weights, true, 0.0, &mut out);
        out.add_row_vector(&self.visible_bias)?;
        if self.visible_kind == VisibleKind::Bernoulli {
            out.map_inplace(sigmoid);
        }
        Ok(out)
    }

    /// One contrastive-divergence update from a mini-batch (rows of `batch`).
    ///
    /// Data-side statistics use hidden probabilities. The model side runs
    /// `cfg.cd_steps` Gibbs iterations with sampled hidden states and
    /// mean-field visible reconstructions. Returns the mean squared
    /// reconstruction error of the batch.
    pub fn cd_update(&mut self, rng: &mut Rng, batch: &DenseMatrix, cfg: &TrainConfig) -> Result<f64> {
        if batch.rows() == 0 {
            return Err(Error::contract("contrastive divergence needs a non-empty batch"));
        }
        check_len("cd_update batch width", self.visible_count(), batch.cols())?;
        cfg.validate()?;

        let h_data = self.hidden_probs_batch(batch)?;
        let mut h_model = h_data.clone();
        let mut v_model = batch.clone();
        for _ in 0..cfg.cd_steps {
            let mut h_sample = h_model;
            h_sample.map_inplace_with(|p| if rng.bit(p) { 1.0 } else { 0.0 });
            v_model = self.visible_means_batch(&h_sample)?;
            h_model = self.hidden_probs_batch(&v_model)?;
        }

        let scale = cfg.learning_rate / batch.rows() as f64;
        gemm(scale, batch, true, &h_data, false, 1.0, &mut self.weights);
        gemm(-scale, &v_model, true, &h_model, false, 1.0, &mut self.weights);

        let hd = h_data.column_means();
        let hm = h_model.column_means();
        for ((b, d), m) in self.hidden_bias.iter_mut().zip(&hd).zip(&hm) {
            *b += cfg.learning_rate * (d - m);
        }
        let vd = batch.column_means();
        let vm = v_model.column_means();
        for ((c, d), m) in self.visible_bias.iter_mut().zip(&vd).zip(&vm) {
            *c += cfg.learning_rate * (d - m);
        }

        let sq: f64 = batch
            .as_slice()
            .iter()
            .zip(v_model.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sq / batch.len() as f64)
    }

    /// Mean squared error between rows of `data` and one deterministic
    /// mean-field reconstruction through the hidden probabilities.
    pub fn reconstruction_error(&self, data: &DenseMatrix) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let h = self.hidden_probs_batch(data)?;
        let v = self.visible_means_batch(&h)?;
        let sq: f64 = data
            .as_slice()
            .iter()
            .zip(v.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sq / data.len() as f64)
    }

    /// `sum_k log p(v_k)` by full enumeration of the partition function.
    ///
    /// Only defined for binary visible units and samples, and refuses models
    /// with more than 20 units in total.
    pub fn exact_log_likelihood<S: AsRef<[f64]>>(&self, samples: &[S]) -> Result<f64> {
        let (n, d) = (self.visible_count(), self.hidden_count());
        if n + d > MAX_ENUMERATED_UNITS {
            return Err(Error::contract(format!(
                "exact likelihood enumerates 2^(n+d) states; n + d = {} exceeds {MAX_ENUMERATED_UNITS}",
                n + d
            )));
        }
        if self.visible_kind != VisibleKind::Bernoulli {
            return Err(Error::contract("exact likelihood requires Bernoulli visible units"));
        }
        for s in samples {
            let s = s.as_ref();
            check_len("exact_log_likelihood sample", n, s.len())?;
            if s.iter().any(|&x| x != 0.0 && x != 1.0) {
                return Err(Error::contract("exact likelihood samples must be binary"));
            }
        }

        let hidden_states: Vec<Vec<bool>> = (0..1u64 << d).map(|m| bits_of(m, d)).collect();
        let log_unnormalized = |v: &[f64]| -> Result<f64> {
            let neg_energies = hidden_states
                .iter()
                .map(|h| self.energy(v, h).map(|e| -e))
                .collect::<Result<Vec<_>>>()?;
            Ok(log_sum_exp(&neg_energies))
        };

        let per_visible = (0..1u64 << n)
            .map(|m| {
                let v: Vec<f64> = bits_of(m, n).into_iter().map(|b| b as u8 as f64).collect();
                log_unnormalized(&v)
            })
            .collect::<Result<Vec<_>>>()?;
        let log_z = log_sum_exp(&per_visible);

        let mut total = 0.0;
        for s in samples {
            let index = s
                .as_ref()
                .iter()
                .enumerate()
                .fold(0usize, |acc, (i, &x)| acc | ((x as usize) << i));
            total += per_visible[index] - log_z;
        }
        Ok(total)
    }
}

/// Enumeration guard for [`RbmParams::exact_log_likelihood`].
pub const MAX_ENUMERATED_UNITS: usize = 20;

/// Bit `i` of `mask` as the `i`-th entry.
pub fn bits_of(mask: u64, len: usize) -> Vec<bool> {
    (0..len).map(|i| mask >> i & 1 == 1).collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl DenseMatrix {
    /// Replaces every entry in row-major order; `f` may be stateful.
    pub(crate) fn map_inplace_with(&mut self, mut f: impl FnMut(f64) -> f64) {
        for x in self.as_mut_slice() {
            *x = f(*x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(rng: &mut Rng, n: usize, d: usize, scale: f64) -> RbmParams {
        RbmParams {
            weights: DenseMatrix::from_fn(n, d, |_, _| scale * rng.standard_normal()),
            hidden_bias: (0..d).map(|_| scale * rng.standard_normal()).collect(),
            visible_bias: (0..n).map(|_| scale * rng.standard_normal()).collect(),
            visible_kind: VisibleKind::Bernoulli,
        }
    }

    #[test]
    fn energy_examples() {
        let mut rng = Rng::new(1);
        let p = small(&mut rng, 3, 2, 1.0);
        assert_eq!(p.energy(&[0.0; 3], &[false; 2]).unwrap(), 0.0);

        let q = RbmParams {
            hidden_bias: vec![1.0, 1.0],
            ..RbmParams::zeros(3, 2, VisibleKind::Bernoulli)
        };
        assert_eq!(q.energy(&[0.3, 0.9, 1.0], &[true, true]).unwrap(), -2.0);

        let r = RbmParams {
            weights: DenseMatrix::identity(2),
            ..RbmParams::zeros(2, 2, VisibleKind::Bernoulli)
        };
        assert_eq!(r.energy(&[1.0, 1.0], &[true, false]).unwrap(), -1.0);

        assert!(matches!(
            r.energy(&[1.0], &[true, false]),
            Err(Error::Dimension { .. })
        ));
        assert!(r.energy(&[1.0, 1.0], &[true]).is_err());
    }

    #[test]
    fn conditionals_of_zero_model() {
        let p = RbmParams::zeros(4, 3, VisibleKind::Bernoulli);
        assert_eq!(p.prob_h_given_v(&[1.0, 0.0, 1.0, 1.0]).unwrap(), vec![0.5; 3]);
        assert_eq!(p.prob_v_given_h(&[true, false, true]).unwrap(), vec![0.5; 4]);

        let mut q = p.clone();
        q.hidden_bias[1] = -100.0;
        assert!(q.prob_h_given_v(&[1.0; 4]).unwrap()[1] < 1e-40);

        let mut g = RbmParams::zeros(3, 2, VisibleKind::Gaussian);
        g.visible_bias = vec![0.25, -1.5, 3.0];
        g.weights = DenseMatrix::from_fn(3, 2, |i, j| (i + j) as f64);
        assert_eq!(g.prob_v_given_h(&[false, false]).unwrap(), g.visible_bias);
        assert!(p.prob_h_given_v(&[1.0; 3]).is_err());
        assert!(p.prob_v_given_h(&[true; 4]).is_err());
    }

    #[test]
    fn gibbs_step_on_zero_model_and_determinism() {
        let p = RbmParams::zeros(5, 4, VisibleKind::Bernoulli);
        let mut rng = Rng::new(3);
        let step = p.gibbs_step(&mut rng, &[1.0, 0.0, 0.2, 0.9, 0.0]).unwrap();
        assert_eq!(step.v_recon, vec![0.5; 5]);
        assert_eq!(step.h_recon_prob, vec![0.5; 4]);

        let q = small(&mut Rng::new(4), 5, 4, 1.0);
        let v = [1.0, 0.0, 1.0, 1.0, 0.0];
        let a = q.gibbs_step(&mut Rng::new(77), &v).unwrap();
        let b = q.gibbs_step(&mut Rng::new(77), &v).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batched_conditionals_match_single_vectors() {
        let mut rng = Rng::new(8);
        let p = small(&mut rng, 6, 4, 0.7);
        let data = DenseMatrix::from_fn(5, 6, |_, _| rng.uniform());
        let hb = p.hidden_probs_batch(&data).unwrap();
        for (i, row) in data.iter_rows().enumerate() {
            let h = p.prob_h_given_v(row).unwrap();
            for (a, b) in h.iter().zip(hb.row(i)) {
                assert!((a - b).abs() < 1e-14);
            }
            let vm = p.visible_mean(&h).unwrap();
            let vb = p.visible_means_batch(&DenseMatrix::from_rows(&[&h]).unwrap()).unwrap();
            for (a, b) in vm.iter().zip(vb.row(0)) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cd_with_zero_learning_rate_is_identity_and_empty_batch_fails() {
        let mut rng = Rng::new(5);
        let mut p = small(&mut rng, 4, 3, 0.5);
        let before = p.clone();
        let batch = DenseMatrix::from_fn(6, 4, |_, _| rng.uniform());
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        p.cd_update(&mut rng, &batch, &cfg).unwrap();
        assert_eq!(p, before);

        let empty = DenseMatrix::zeros(0, 4);
        assert!(matches!(
            p.cd_update(&mut rng, &empty, &TrainConfig::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn single_row_cd_reuses_gibbs_step_draws() {
        let mut rng = Rng::new(12);
        let p = small(&mut rng, 5, 3, 0.8);
        let v = vec![1.0, 0.0, 1.0, 0.0, 1.0];
        let step = p.gibbs_step(&mut Rng::new(99), &v).unwrap();

        let mut q = p.clone();
        let cfg = TrainConfig {
            learning_rate: 1.0,
            ..TrainConfig::default()
        };
        let batch = DenseMatrix::from_rows(&[&v]).unwrap();
        q.cd_update(&mut Rng::new(99), &batch, &cfg).unwrap();

        let h0 = p.prob_h_given_v(&v).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let expect = p.weights.get(i, j) + v[i] * h0[j] - step.v_recon[i] * step.h_recon_prob[j];
                assert!((q.weights.get(i, j) - expect).abs() < 1e-12);
            }
        }
        for j in 0..3 {
            let expect = p.hidden_bias[j] + h0[j] - step.h_recon_prob[j];
            assert!((q.hidden_bias[j] - expect).abs() < 1e-12);
        }
        for i in 0..5 {
            let expect = p.visible_bias[i] + v[i] - step.v_recon[i];
            assert!((q.visible_bias[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_likelihood_of_uniform_model_and_guards() {
        let p = RbmParams::zeros(3, 2, VisibleKind::Bernoulli);
        let ll = p.exact_log_likelihood(&[[1.0, 0.0, 1.0]]).unwrap();
        assert!((ll + 3.0 * 2f64.ln()).abs() < 1e-12);

        let big = RbmParams::zeros(12, 9, VisibleKind::Bernoulli);
        assert!(matches!(
            big.exact_log_likelihood(&[[0.0; 12]]),
            Err(Error::Contract(_))
        ));
        assert!(p.exact_log_likelihood(&[[0.5, 0.0, 1.0]]).is_err());
        let g = RbmParams::zeros(3, 2, VisibleKind::Gaussian);
        assert!(g.exact_log_likelihood(&[[0.0; 3]]).is_err());
    }

    #[test]
    fn exact_likelihood_is_additive() {
        let p = small(&mut Rng::new(21), 3, 2, 1.0);
        let v = [1.0, 1.0, 0.0];
        let one = p.exact_log_likelihood(&[v]).unwrap();
        let five = p.exact_log_likelihood(&[v; 5]).unwrap();
        assert!((five - 5.0 * one).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { learning_rate: -1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { cd_steps: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
