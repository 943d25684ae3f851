//! Independent reference computations shared by the integration and
//! acceptance tests. Nothing here calls the routine it checks.
#![allow(dead_code)]

use dan::io::{decode, encode, SavedModel};
use dan::quantizer::{sigma, sparsify, threshold_for_sigma};
use dan::regularizer::{reg_gradient, reg_value, RegularizerConfig};
use dan::sparse::{BitVector, SparseBinaryLayer};
use dan::{DanModel, DenseMatrix, RbmParams, Rng, TrainConfig, VisibleKind};

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| scale * rng.standard_normal())
}

pub fn random_rbm(rng: &mut Rng, n: usize, d: usize, scale: f64) -> RbmParams {
    RbmParams {
        weights: random_matrix(rng, n, d, scale),
        hidden_bias: (0..d).map(|_| scale * rng.standard_normal()).collect(),
        visible_bias: (0..n).map(|_| scale * rng.standard_normal()).collect(),
        visible_kind: VisibleKind::Bernoulli,
    }
}

pub fn states(len: usize) -> Vec<Vec<f64>> {
    (0..1usize << len)
        .map(|m| (0..len).map(|i| ((m >> i) & 1) as f64).collect())
        .collect()
}

/// `-E(v, h) = a.v + b.h + v^T W h`, written out directly.
pub fn neg_energy(p: &RbmParams, v: &[f64], h: &[f64]) -> f64 {
    let mut e = 0.0;
    for (i, &vi) in v.iter().enumerate() {
        e += p.visible_bias[i] * vi;
        for (j, &hj) in h.iter().enumerate() {
            e += vi * p.weights.get(i, j) * hj;
        }
    }
    for (j, &hj) in h.iter().enumerate() {
        e += p.hidden_bias[j] * hj;
    }
    e
}

/// Exact joint distribution over all `(v, h)` states, indexed `[v][h]`.
pub fn joint(p: &RbmParams) -> Vec<Vec<f64>> {
    let (vs, hs) = (states(p.weights.rows()), states(p.weights.cols()));
    let mut w: Vec<Vec<f64>> = vs
        .iter()
        .map(|v| hs.iter().map(|h| neg_energy(p, v, h).exp()).collect())
        .collect();
    let z: f64 = w.iter().flatten().sum();
    for row in &mut w {
        for x in row.iter_mut() {
            *x /= z;
        }
    }
    w
}

/// Largest deviation between the model's conditionals and brute force, and
/// the deviation of the summed joint from 1.
pub fn conditional_errors(p: &RbmParams) -> (f64, f64) {
    let (n, d) = p.weights.shape();
    let (vs, hs) = (states(n), states(d));
    let pj = joint(p);
    let mut worst: f64 = 0.0;
    for (vi, v) in vs.iter().enumerate() {
        let pv: f64 = pj[vi].iter().sum();
        let model = p.prob_h_given_v(v).unwrap();
        for j in 0..d {
            let brute: f64 = hs.iter().zip(&pj[vi]).filter(|(h, _)| h[j] == 1.0).map(|(_, q)| q).sum::<f64>() / pv;
            worst = worst.max((brute - model[j]).abs());
        }
    }
    for (hi, h) in hs.iter().enumerate() {
        let ph: f64 = pj.iter().map(|row| row[hi]).sum();
        let hb: Vec<bool> = h.iter().map(|&x| x == 1.0).collect();
        let model = p.prob_v_given_h(&hb).unwrap();
        for i in 0..n {
            let brute: f64 = vs.iter().zip(&pj).filter(|(v, _)| v[i] == 1.0).map(|(_, row)| row[hi]).sum::<f64>() / ph;
            worst = worst.max((brute - model[i]).abs());
        }
    }
    let total: f64 = pj.iter().flatten().sum();
    (worst, (total - 1.0).abs())
}

/// Brute-force `sum_k log p(v_k)`.
pub fn log_likelihood(p: &RbmParams, data: &[Vec<f64>]) -> f64 {
    let (n, d) = p.weights.shape();
    let hs = states(d);
    let unnorm = |v: &[f64]| hs.iter().map(|h| neg_energy(p, v, h).exp()).sum::<f64>();
    let z: f64 = states(n).iter().map(|v| unnorm(v)).sum();
    data.iter().map(|v| (unnorm(v) / z).ln()).sum()
}

/// Exact gradient of the mean log-likelihood with respect to `W`.
pub fn exact_weight_gradient(p: &RbmParams, data: &[Vec<f64>]) -> DenseMatrix {
    let (n, d) = p.weights.shape();
    let mut g = DenseMatrix::zeros(n, d);
    for v in data {
        for j in 0..d {
            let act: f64 = (0..n).map(|i| v[i] * p.weights.get(i, j)).sum::<f64>() + p.hidden_bias[j];
            let hj = logistic(act);
            for i in 0..n {
                g.set(i, j, g.get(i, j) + v[i] * hj / data.len() as f64);
            }
        }
    }
    let (vs, hs) = (states(n), states(d));
    let pj = joint(p);
    for (vi, v) in vs.iter().enumerate() {
        for (hi, h) in hs.iter().enumerate() {
            for i in 0..n {
                for j in 0..d {
                    g.set(i, j, g.get(i, j) - pj[vi][hi] * v[i] * h[j]);
                }
            }
        }
    }
    g
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Cosine between the mean CD-1 weight step (averaged over `repeats`
/// independent updates from the same parameters) and the exact gradient.
pub fn cd_alignment(seed: u64, repeats: usize) -> f64 {
    let mut rng = Rng::new(seed);
    let p = random_rbm(&mut rng, 5, 3, 0.5);
    let data: Vec<Vec<f64>> = (0..12)
        .map(|k| (0..5).map(|i| ((k * 7 + i * 3) % 5 < 2) as u8 as f64).collect())
        .collect();
    let batch = DenseMatrix::from_rows(&data).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1.0,
        ..TrainConfig::default()
    };
    let mut mean = vec![0.0; 15];
    for _ in 0..repeats {
        let mut q = p.clone();
        q.cd_update(&mut rng, &batch, &cfg).unwrap();
        for (m, (a, b)) in mean.iter_mut().zip(q.weights.as_slice().iter().zip(p.weights.as_slice())) {
            *m += (a - b) / repeats as f64;
        }
    }
    cosine(&mean, exact_weight_gradient(&p, &data).as_slice())
}

/// Relative error `|g - fd| / |fd|` of the analytic regularizer gradient
/// against central differences of the regularizer value.
pub fn reg_gradient_error(w: &DenseMatrix, cfg: &RegularizerConfig) -> f64 {
    let step = 1e-6;
    let g = reg_gradient(w, cfg);
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..w.len() {
        let mut plus = w.clone();
        plus.as_mut_slice()[k] += step;
        let mut minus = w.clone();
        minus.as_mut_slice()[k] -= step;
        let fd = (reg_value(&plus, cfg) - reg_value(&minus, cfg)) / (2.0 * step);
        num += (g.as_slice()[k] - fd).powi(2);
        den += fd * fd;
    }
    (num / den).sqrt()
}

/// Matrix with entries of magnitude in `[0.1, 1.1)` and random signs, so
/// that finite differences never straddle a kink of `|w|`.
pub fn matrix_away_from_zero(rng: &mut Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| {
        let m = 0.1 + rng.uniform();
        if rng.uniform() < 0.5 {
            -m
        } else {
            m
        }
    })
}

/// Worst regularizer finite-difference error over `count` random matrices
/// for each of the mixed, L1 and L2 kinds.
pub fn reg_gradient_sweep(seed: u64, count: usize) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let rows = 2 + rng.below(6) as usize;
        let cols = 2 + rng.below(6) as usize;
        let w = matrix_away_from_zero(&mut rng, rows, cols);
        let lambda = 0.01 + rng.uniform();
        let gamma = rng.uniform();
        for cfg in [
            RegularizerConfig::mixed(lambda, gamma),
            RegularizerConfig::l1(lambda),
            RegularizerConfig::l2(lambda),
        ] {
            worst = worst.max(reg_gradient_error(&w, &cfg));
        }
    }
    worst
}

pub fn random_ternary(rng: &mut Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| match rng.below(3) {
        0 => -1.0,
        1 => 0.0,
        _ => 1.0,
    })
}

/// Worst real-path deviation and number of binary-path mismatches between
/// the packed engine and a dense evaluation of the same ternary layer.
pub fn sparse_vs_dense(seed: u64, cases: usize) -> (f64, usize) {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    let mut mismatches = 0;
    for _ in 0..cases {
        let n = 1 + rng.below(200) as usize;
        let d = 1 + rng.below(12) as usize;
        let w = random_ternary(&mut rng, n, d);
        // Integer-valued biases make exact ties reachable on the binary path.
        let bias: Vec<f64> = (0..d)
            .map(|_| {
                if rng.uniform() < 0.3 {
                    rng.below(7) as f64 - 3.0
                } else {
                    3.0 * rng.standard_normal()
                }
            })
            .collect();
        let layer = SparseBinaryLayer::pack(&w, &bias).unwrap();

        let v: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let got = layer.forward_real(&v).unwrap();
        for j in 0..d {
            let z: f64 = (0..n).map(|i| v[i] * w.get(i, j)).sum::<f64>() + bias[j];
            worst = worst.max((got[j] - logistic(z)).abs());
        }

        let bits: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.5).collect();
        let (z, out) = layer.forward_binary(&BitVector::from_bools(&bits)).unwrap();
        for j in 0..d {
            let zi: i64 = (0..n).filter(|&i| bits[i]).map(|i| w.get(i, j) as i64).sum();
            let fires = zi as f64 + bias[j] > 0.0;
            if z[j] as i64 != zi || out.get(j) != fires {
                mismatches += 1;
            }
        }
    }
    (worst, mismatches)
}

/// Random `depth`-layer model whose parameters are exactly representable in
/// 32 bits, so a file round trip must reproduce it bit for bit.
pub fn f32_exact_model(rng: &mut Rng, sizes: &[usize]) -> DanModel {
    let mut layers = Vec::new();
    for (t, w) in sizes.windows(2).enumerate() {
        let mut p = random_rbm(rng, w[0], w[1], 0.3);
        p.weights.map_inplace(|x| x as f32 as f64);
        for b in p.hidden_bias.iter_mut().chain(p.visible_bias.iter_mut()) {
            *b = *b as f32 as f64;
        }
        if t == 0 && rng.uniform() < 0.5 {
            p.visible_kind = VisibleKind::Gaussian;
        }
        layers.push(p);
    }
    DanModel::from_layers(layers).unwrap()
}

/// Flips one bit in every byte of `bytes` in turn and counts how many of the
/// corrupted images still decode successfully.
pub fn undetected_corruptions(bytes: &[u8]) -> usize {
    let mut undetected = 0;
    for k in 0..bytes.len() {
        let mut c = bytes.to_vec();
        c[k] ^= 1 << (k % 8);
        if decode(&c).is_ok() {
            undetected += 1;
        }
    }
    undetected
}

pub fn round_trips(model: &SavedModel) -> bool {
    let bytes = encode(model).unwrap();
    let back = decode(&bytes).unwrap();
    &back == model && encode(&back).unwrap() == bytes
}

/// Number of random matrices for which `threshold_for_sigma` fails to keep
/// exactly `floor(s * N)` weights.
pub fn sigma_round_trip_failures(seed: u64, count: usize) -> usize {
    let mut rng = Rng::new(seed);
    let mut failures = 0;
    for _ in 0..count {
        let rows = 1 + rng.below(40) as usize;
        let cols = 1 + rng.below(40) as usize;
        let w = random_matrix(&mut rng, rows, cols, 0.2);
        let target = 0.01 + 0.99 * rng.uniform();
        let keep = (target * w.len() as f64).floor() as usize;
        let u = threshold_for_sigma(&w, target).unwrap();
        let s = sigma(&w, u);
        let model = DanModel::from_layers(vec![RbmParams {
            weights: w.clone(),
            hidden_bias: vec![0.0; cols],
            visible_bias: vec![0.0; rows],
            visible_kind: VisibleKind::Bernoulli,
        }])
        .unwrap();
        let q = sparsify(&model, &[u]).unwrap();
        let kept = q.layer_shapes()[0].2;
        if s > target || kept != keep || (s * w.len() as f64).round() as usize != keep {
            failures += 1;
        }
    }
    failures
}
