//! Matrix norms, the row/column mixed-norm penalty and the weight-decay step
//! interleaved with contrastive divergence.

use serde::{Deserialize, Serialize};

use crate::numerics::DenseMatrix;
use crate::rbm::RbmParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegularizerKind {
    /// `lambda * (gamma * |W|_M + (1 - gamma) * |W^T|_M)`.
    Mixed,
    /// `lambda * sum |w_ij|`.
    L1,
    /// `lambda * sum w_ij^2`.
    L2,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub kind: RegularizerKind,
    pub lambda: f64,
    /// Balance between row (`gamma`) and column (`1 - gamma`) sparsity.
    /// Ignored by the L1 and L2 kinds.
    pub gamma: f64,
    /// Lower bound on row and column norms in gradient denominators.
    pub eps_norm: f64,
}

pub const DEFAULT_EPS_NORM: f64 = 1e-8;

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig::none()
    }
}

impl RegularizerConfig {
    pub fn none() -> Self {
        RegularizerConfig {
            kind: RegularizerKind::None,
            lambda: 0.0,
            gamma: 0.5,
            eps_norm: DEFAULT_EPS_NORM,
        }
    }

    pub fn mixed(lambda: f64, gamma: f64) -> Self {
        RegularizerConfig {
            kind: RegularizerKind::Mixed,
            lambda,
            gamma,
            eps_norm: DEFAULT_EPS_NORM,
        }
    }

    pub fn l1(lambda: f64) -> Self {
        RegularizerConfig {
            kind: RegularizerKind::L1,
            lambda,
            ..RegularizerConfig::mixed(lambda, 0.5)
        }
    }

    pub fn l2(lambda: f64) -> Self {
        RegularizerConfig {
            kind: RegularizerKind::L2,
            lambda,
            ..RegularizerConfig::mixed(lambda, 0.5)
        }
    }

    /// True when the penalty contributes nothing to training.
    pub fn is_inactive(&self) -> bool {
        self.kind == RegularizerKind::None || self.lambda == 0.0
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(crate::Error::Contract(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(crate::Error::Contract(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.eps_norm > 0.0) {
            return Err(crate::Error::Contract(format!("eps_norm must be > 0, got {}", self.eps_norm)));
        }
        Ok(())
    }
}

/// Euclidean length of every row.
pub fn row_norms(w: &DenseMatrix) -> Vec<f64> {
    w.iter_rows()
        .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect()
}

/// Euclidean length of every column.
pub fn column_norms(w: &DenseMatrix) -> Vec<f64> {
    let mut sq = vec![0.0; w.cols()];
    for r in w.iter_rows() {
        for (s, x) in sq.iter_mut().zip(r) {
            *s += x * x;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// `|W|_M`: the sum of the Euclidean lengths of the rows.
pub fn mixed_norm(w: &DenseMatrix) -> f64 {
    row_norms(w).iter().sum()
}

/// `|W^T|_M`: the sum of the Euclidean lengths of the columns.
pub fn mixed_norm_transposed(w: &DenseMatrix) -> f64 {
    column_norms(w).iter().sum()
}

pub fn l1_norm(w: &DenseMatrix) -> f64 {
    w.as_slice().iter().map(|x| x.abs()).sum()
}

/// Frobenius norm.
pub fn l2_norm(w: &DenseMatrix) -> f64 {
    w.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn reg_value(w: &DenseMatrix, cfg: &RegularizerConfig) -> f64 {
    match cfg.kind {
        RegularizerKind::Mixed => {
            cfg.lambda * (cfg.gamma * mixed_norm(w) + (1.0 - cfg.gamma) * mixed_norm_transposed(w))
        }
        RegularizerKind::L1 => cfg.lambda * l1_norm(w),
        RegularizerKind::L2 => cfg.lambda * w.as_slice().iter().map(|x| x * x).sum::<f64>(),
        RegularizerKind::None => 0.0,
    }
}

/// Per-entry multiplier `m_ij` with `grad_ij = m_ij * w_ij`, for the kinds
/// whose gradient is proportional to the weight.
fn proportional_factors(w: &DenseMatrix, cfg: &RegularizerConfig) -> Option<(Vec<f64>, Vec<f64>)> {
    match cfg.kind {
        RegularizerKind::Mixed => {
            let rows = row_norms(w)
                .into_iter()
                .map(|r| cfg.lambda * cfg.gamma / r.max(cfg.eps_norm))
                .collect();
            let cols = column_norms(w)
                .into_iter()
                .map(|c| cfg.lambda * (1.0 - cfg.gamma) / c.max(cfg.eps_norm))
                .collect();
            Some((rows, cols))
        }
        RegularizerKind::L2 => Some((vec![2.0 * cfg.lambda; w.rows()], vec![0.0; w.cols()])),
        _ => None,
    }
}

/// Gradient of [`reg_value`] with respect to every weight.
///
/// For the mixed kind, entry `(i, j)` is
/// `lambda * (gamma * w_ij / |row_i| + (1 - gamma) * w_ij / |col_j|)` with both
/// norms bounded below by `eps_norm`. L1 uses `lambda * sign(w_ij)` (zero at 0).
pub fn reg_gradient(w: &DenseMatrix, cfg: &RegularizerConfig) -> DenseMatrix {
    if cfg.kind == RegularizerKind::None {
        return DenseMatrix::zeros(w.rows(), w.cols());
    }
    if cfg.kind == RegularizerKind::L1 {
        return w.map(|x| {
            if x == 0.0 {
                0.0
            } else {
                cfg.lambda * x.signum()
            }
        });
    }
    let (rows, cols) = proportional_factors(w, cfg).expect("mixed or L2 kind");
    DenseMatrix::from_fn(w.rows(), w.cols(), |i, j| (rows[i] + cols[j]) * w.get(i, j))
}

/// Applies `W <- W - lr * reg_gradient(W)` without letting any weight change
/// sign: an entry whose step would cross zero is set to zero. Biases are not
/// touched.
pub fn decay_update(params: &mut RbmParams, cfg: &RegularizerConfig, lr: f64) {
    decay_weights(&mut params.weights, cfg, lr);
}

pub fn decay_weights(w: &mut DenseMatrix, cfg: &RegularizerConfig, lr: f64) {
    if cfg.is_inactive() || lr == 0.0 {
        return;
    }
    if cfg.kind == RegularizerKind::L1 {
        let step = lr * cfg.lambda;
        w.map_inplace(|x| {
            if x.abs() <= step {
                0.0
            } else {
                x - step * x.signum()
            }
        });
        return;
    }
    let (rows, cols) = proportional_factors(w, cfg).expect("mixed or L2 kind");
    let cols: Vec<f64> = cols.into_iter().map(|c| lr * c).collect();
    for (i, row_factor) in rows.into_iter().enumerate() {
        let row_factor = lr * row_factor;
        for (x, c) in w.row_mut(i).iter_mut().zip(&cols) {
            let keep = 1.0 - (row_factor + c);
            *x = if keep <= 0.0 { 0.0 } else { *x * keep };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use crate::rbm::VisibleKind;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn norm_examples() {
        assert_eq!(mixed_norm(&m(&[&[3.0, 4.0], &[0.0, 0.0]])), 5.0);
        assert_eq!(mixed_norm(&DenseMatrix::identity(2)), 2.0);
        let col = m(&[&[1.5], &[-2.0], &[0.25]]);
        assert_eq!(mixed_norm(&col), l1_norm(&col));
        assert_eq!(l1_norm(&m(&[&[1.0, -2.0], &[3.0, -4.0]])), 10.0);
        assert_eq!(l2_norm(&m(&[&[3.0, 4.0], &[0.0, 0.0]])), 5.0);
        let z = DenseMatrix::zeros(3, 2);
        assert_eq!((l1_norm(&z), l2_norm(&z), mixed_norm(&z)), (0.0, 0.0, 0.0));
    }

    #[test]
    fn reg_value_gamma_extremes() {
        let mut rng = Rng::new(4);
        let w = DenseMatrix::from_fn(4, 3, |_, _| rng.standard_normal());
        let lam = 0.3;
        assert_eq!(reg_value(&w, &RegularizerConfig::mixed(lam, 1.0)), lam * mixed_norm(&w));
        assert_eq!(
            reg_value(&w, &RegularizerConfig::mixed(lam, 0.0)),
            lam * mixed_norm_transposed(&w)
        );
        let a = DenseMatrix::from_fn(3, 3, |_, _| rng.standard_normal());
        let sym = DenseMatrix::from_fn(3, 3, |i, j| a.get(i, j) + a.get(j, i));
        for g in [0.0, 0.2, 0.7, 1.0] {
            let v = reg_value(&sym, &RegularizerConfig::mixed(lam, g));
            assert!((v - lam * mixed_norm(&sym)).abs() < 1e-12);
        }
        assert_eq!(reg_value(&w, &RegularizerConfig::none()), 0.0);
        assert_eq!(reg_value(&w, &RegularizerConfig::l1(2.0)), 2.0 * l1_norm(&w));
    }

    #[test]
    fn gradient_examples() {
        let z = DenseMatrix::zeros(3, 4);
        for cfg in [RegularizerConfig::mixed(1.0, 0.5), RegularizerConfig::l1(1.0), RegularizerConfig::l2(1.0)] {
            assert!(reg_gradient(&z, &cfg).as_slice().iter().all(|&g| g == 0.0));
        }
        let w = m(&[&[3.0, 4.0], &[0.0, 0.0]]);
        let g = reg_gradient(&w, &RegularizerConfig::mixed(0.5, 1.0));
        assert!((g.get(0, 0) - 0.3).abs() < 1e-15);
        assert!((g.get(0, 1) - 0.4).abs() < 1e-15);
        assert_eq!(g.row(1), &[0.0, 0.0]);
        assert_eq!(reg_gradient(&w, &RegularizerConfig::l2(0.5)).row(0), &[3.0, 4.0]);
        assert_eq!(reg_gradient(&w, &RegularizerConfig::l1(0.5)).row(0), &[0.5, 0.5]);
    }

    #[test]
    fn decay_examples() {
        let mut rng = Rng::new(6);
        let mut p = RbmParams::initial(&mut rng, 4, 3, VisibleKind::Bernoulli);
        p.hidden_bias = vec![1.0, 2.0, 3.0];
        let before = p.clone();
        decay_update(&mut p, &RegularizerConfig::mixed(0.0, 0.5), 0.1);
        assert_eq!(p, before);

        let mut q = RbmParams::zeros(2, 2, VisibleKind::Bernoulli);
        q.weights = m(&[&[3.0, 4.0], &[0.0, 0.0]]);
        decay_update(&mut q, &RegularizerConfig::mixed(5.0, 1.0), 1.0);
        assert_eq!(q.weights.row(0), &[0.0, 0.0]);

        // Overshooting steps clamp instead of flipping sign.
        let mut r = m(&[&[0.5, -0.25], &[-3.0, 0.01]]);
        decay_weights(&mut r, &RegularizerConfig::l1(1.0), 0.3);
        assert_eq!(r.as_slice(), &[0.2, 0.0, -2.7, 0.0]);

        let mut s = m(&[&[0.5, -0.25]]);
        decay_weights(&mut s, &RegularizerConfig::l2(1.0), 0.75);
        assert_eq!(s.as_slice(), &[0.0, 0.0]);

        let mut t = m(&[&[1.0, 2.0]]);
        let before = t.clone();
        decay_weights(&mut t, &RegularizerConfig::none(), 1.0);
        assert_eq!(t, before);
    }

    #[test]
    fn biases_untouched_by_decay() {
        let mut rng = Rng::new(2);
        let mut p = RbmParams::initial(&mut rng, 5, 4, VisibleKind::Bernoulli);
        p.hidden_bias = vec![0.1, -0.2, 0.3, 0.4];
        p.visible_bias = vec![1.0; 5];
        let (b, c) = (p.hidden_bias.clone(), p.visible_bias.clone());
        decay_update(&mut p, &RegularizerConfig::mixed(10.0, 0.5), 0.1);
        assert_eq!((p.hidden_bias, p.visible_bias), (b, c));
    }

    #[test]
    fn config_validation() {
        assert!(RegularizerConfig::mixed(1e-4, 0.5).validate().is_ok());
        assert!(RegularizerConfig::mixed(-1.0, 0.5).validate().is_err());
        assert!(RegularizerConfig::mixed(1.0, 1.5).validate().is_err());
        assert!(RegularizerConfig::none().is_inactive());
        assert!(RegularizerConfig::mixed(0.0, 0.5).is_inactive());
    }
}
