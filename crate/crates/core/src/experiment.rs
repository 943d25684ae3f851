//! End-to-end MNIST experiments: data selection, cached stack training,
//! per-variant evaluation and the CSV tables emitted by the command-line tool.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::classifier::{train_head, ClassifierHead, HeadConfig};
use crate::error::{Error, Result};
use crate::io::{decode, encode_dense, load_idx, subsample, Dataset, SavedModel};
use crate::numerics::{DenseMatrix, Rng};
use crate::quantizer::{
    dense_memory_report, memory_report, quantize_to_sigma, sigma, QuantMode, QuantizationReport, QuantizedModel,
};
use crate::rbm::TrainConfig;
use crate::regularizer::{mixed_norm, mixed_norm_transposed, RegularizerConfig, RegularizerKind};
use crate::stack::{train_stack_with_progress, DanModel, EpochProgress};

pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Threshold at which reserved ratios of trained (unquantized) stacks are
/// reported.
pub const TYPICAL_THRESHOLD: f64 = 0.1;

const TRAIN_SAMPLE_STREAM: u64 = 0xda7a_0001;
const TEST_SAMPLE_STREAM: u64 = 0xda7a_0002;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPreset {
    pub name: &'static str,
    /// Input size followed by the hidden layer sizes.
    pub layer_sizes: Vec<usize>,
    pub train_images: usize,
    pub test_images: usize,
    pub train: TrainConfig,
    pub reg: RegularizerConfig,
    pub head: HeadConfig,
    /// Reserved ratio of the sparse real-valued variant.
    pub sigma_sparse: f64,
    /// Reserved ratio of the binary-weight variants.
    pub sigma_binary: f64,
}

impl ExperimentPreset {
    pub fn table2() -> Self {
        ExperimentPreset {
            name: "table2",
            layer_sizes: vec![784, 800, 800],
            train_images: 10_000,
            test_images: 10_000,
            train: TrainConfig::default(),
            reg: RegularizerConfig::mixed(1e-4, 0.5),
            head: HeadConfig::default(),
            sigma_sparse: 0.25,
            sigma_binary: 0.20,
        }
    }

    /// Reduced configuration for quick end-to-end runs.
    pub fn small() -> Self {
        ExperimentPreset {
            name: "small",
            layer_sizes: vec![784, 200, 200],
            train_images: 2_000,
            test_images: 2_000,
            train: TrainConfig {
                epochs: 15,
                ..TrainConfig::default()
            },
            ..Self::table2()
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "table2" => Some(Self::table2()),
            "small" => Some(Self::small()),
            _ => None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.head.seed = seed;
        self
    }
}

/// The MNIST training and test splits.
#[derive(Debug, Clone)]
pub struct Mnist {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_mnist(dir: impl AsRef<Path>) -> Result<Mnist> {
    let dir = dir.as_ref();
    Ok(Mnist {
        train: load_idx(dir.join(MNIST_TRAIN_IMAGES), dir.join(MNIST_TRAIN_LABELS))?,
        test: load_idx(dir.join(MNIST_TEST_IMAGES), dir.join(MNIST_TEST_LABELS))?,
    })
}

/// Training and evaluation sets of one run.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

/// Samples `train_n` training images from the training split and `test_n`
/// images from the test split. Asking for the whole test split keeps it in
/// its original order.
pub fn select_split(mnist: &Mnist, train_n: usize, test_n: usize, seed: u64) -> Result<Split> {
    let root = Rng::new(seed);
    let train = subsample(&mut root.split(TRAIN_SAMPLE_STREAM), &mnist.train, train_n)?;
    let test = if test_n == mnist.test.len() {
        mnist.test.clone()
    } else {
        subsample(&mut root.split(TEST_SAMPLE_STREAM), &mnist.test, test_n)?
    };
    Ok(Split { train, test })
}

fn matrix_hash(m: &DenseMatrix) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&(m.rows() as u64).to_le_bytes());
    h.update(&(m.cols() as u64).to_le_bytes());
    for x in m.as_slice() {
        h.update(&x.to_le_bytes());
    }
    h.finalize()
}

#[derive(Serialize)]
struct CacheKey<'a> {
    data: u32,
    layer_sizes: &'a [usize],
    train: &'a TrainConfig,
    reg: &'a RegularizerConfig,
}

/// Trains a stack, or loads it from `cache_dir` when an identical run was
/// cached before.
///
/// The returned model always carries 32-bit weights, exactly as stored in a
/// model file, so a cached and a fresh run give identical downstream results.
pub fn train_cached(
    cache_dir: Option<&Path>,
    data: &DenseMatrix,
    layer_sizes: &[usize],
    train: &TrainConfig,
    reg: &RegularizerConfig,
    progress: impl FnMut(&EpochProgress<'_>),
) -> Result<DanModel> {
    let data_hash = matrix_hash(data);
    let key = serde_json::to_vec(&CacheKey {
        data: data_hash,
        layer_sizes,
        train,
        reg,
    })
    .map_err(|e| Error::Format(e.to_string()))?;
    let path: Option<PathBuf> = cache_dir.map(|d| d.join(format!("stack-{:08x}.danm", crc32fast::hash(&key))));
    if let Some(p) = &path {
        if let Ok(bytes) = fs::read(p) {
            if let Ok(SavedModel::Dense(m)) = decode(&bytes) {
                return Ok(m);
            }
        }
    }
    let mut model = train_stack_with_progress(data, layer_sizes, train, reg, progress)?;
    model
        .provenance
        .insert("train_data_crc32".into(), format!("{data_hash:08x}"));
    let bytes = encode_dense(&model)?;
    if let Some(p) = &path {
        fs::create_dir_all(p.parent().unwrap())?;
        let tmp = p.with_extension("tmp");
        fs::write(&tmp, &bytes)?;
        fs::rename(&tmp, p)?;
    }
    match decode(&bytes)? {
        SavedModel::Dense(m) => Ok(m),
        SavedModel::Quantized(_) => unreachable!("a dense model decodes as dense"),
    }
}

/// A network whose top-layer activations feed the classifier.
#[derive(Debug, Clone, Copy)]
pub enum Network<'a> {
    Dense(&'a DanModel),
    Quantized(&'a QuantizedModel),
}

impl Network<'_> {
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            Network::Dense(m) => m.input_dim(),
            Network::Quantized(q) => q.input_dim(),
        }
    }

    pub fn transform(&self, data: &DenseMatrix) -> Result<DenseMatrix> {
        if let Some(n) = self.input_dim() {
            if n != data.cols() {
                return Err(Error::Dimension {
                    context: "network input vs data pixels",
                    expected: n,
                    found: data.cols(),
                });
            }
        }
        match self {
            Network::Dense(m) => m.transform(data, m.depth()),
            Network::Quantized(q) => q.transform(data),
        }
    }
}

fn class_count(split: &Split) -> usize {
    split
        .train
        .labels
        .iter()
        .chain(&split.test.labels)
        .max()
        .map_or(1, |&m| m + 1)
}

/// Trains a classifier head on the network's training features and returns
/// its test accuracy.
pub fn evaluate(net: Network<'_>, split: &Split, head: &HeadConfig) -> Result<(f64, ClassifierHead)> {
    let train_features = net.transform(&split.train.images)?;
    let test_features = net.transform(&split.test.images)?;
    let trained = train_head(&train_features, &split.train.labels, class_count(split), head)?;
    let accuracy = trained.accuracy(&test_features, &split.test.labels)?;
    Ok((accuracy, trained))
}

/// Accuracy of an existing head on the network's test features.
pub fn evaluate_with_head(net: Network<'_>, test: &Dataset, head: &ClassifierHead) -> Result<f64> {
    head.accuracy(&net.transform(&test.images)?, &test.labels)
}

/// One line of the method comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub method: String,
    pub weight_bits: u32,
    pub feature_bits: u32,
    pub weight_kib: u64,
    pub weight_kib_with_index: u64,
    /// Average per-layer reserved ratio.
    pub sigma: f64,
    pub accuracy: f64,
}

pub const TABLE_CSV_HEADER: &str = "method,weight_bits,feature_bits,weight_kib,weight_kib_with_index,sigma,accuracy";

impl TableRow {
    fn from_report(method: &str, report: &QuantizationReport, accuracy: f64) -> Self {
        TableRow {
            method: method.to_string(),
            weight_bits: report.weight_bits,
            feature_bits: report.feature_bits,
            weight_kib: report.weight_memory_kib(),
            weight_kib_with_index: report.with_index_kib(),
            sigma: report.average_sigma(),
            accuracy,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.4},{:.4}",
            self.method,
            self.weight_bits,
            self.feature_bits,
            self.weight_kib,
            self.weight_kib_with_index,
            self.sigma,
            self.accuracy
        )
    }
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::new();
    writeln!(out, "{TABLE_CSV_HEADER}").unwrap();
    for r in rows {
        writeln!(out, "{}", r.csv_row()).unwrap();
    }
    out
}

/// Evaluates a trained stack as-is.
pub fn dense_row(method: &str, model: &DanModel, split: &Split, head: &HeadConfig) -> Result<TableRow> {
    let (accuracy, _) = evaluate(Network::Dense(model), split, head)?;
    Ok(TableRow::from_report(method, &dense_memory_report(model, method), accuracy))
}

/// Quantizes a trained stack to `target` reserved ratio per layer and
/// evaluates it with a freshly trained head. `base` names the source stack
/// (`"DAN"` gives `DAN_s`, `DAN_b`, `DAN_B`).
pub fn quantized_row(
    base: &str,
    model: &DanModel,
    mode: QuantMode,
    target: f64,
    split: &Split,
    head: &HeadConfig,
) -> Result<TableRow> {
    let q = quantize_to_sigma(model, mode, target)?;
    let (accuracy, _) = evaluate(Network::Quantized(&q), split, head)?;
    let suffix = &mode.variant_name()[3..];
    Ok(TableRow::from_report(&format!("{base}{suffix}"), &memory_report(&q), accuracy))
}

/// The two stacks behind a comparison table.
pub struct TrainedPair {
    pub dbn: DanModel,
    pub dan: DanModel,
}

pub fn train_pair(
    preset: &ExperimentPreset,
    split: &Split,
    cache_dir: Option<&Path>,
    mut progress: impl FnMut(&str, &EpochProgress<'_>),
) -> Result<TrainedPair> {
    let dbn = train_cached(
        cache_dir,
        &split.train.images,
        &preset.layer_sizes,
        &preset.train,
        &RegularizerConfig::none(),
        |p| progress("DBN", p),
    )?;
    let dan = train_cached(
        cache_dir,
        &split.train.images,
        &preset.layer_sizes,
        &preset.train,
        &preset.reg,
        |p| progress("DAN", p),
    )?;
    Ok(TrainedPair { dbn, dan })
}

/// The DBN, DAN, DAN_s, DAN_b and DAN_B rows of the comparison table.
pub fn comparison_table(preset: &ExperimentPreset, split: &Split, pair: &TrainedPair) -> Result<Vec<TableRow>> {
    Ok(vec![
        dense_row("DBN", &pair.dbn, split, &preset.head)?,
        dense_row("DAN", &pair.dan, split, &preset.head)?,
        quantized_row("DAN", &pair.dan, QuantMode::SparseReal, preset.sigma_sparse, split, &preset.head)?,
        quantized_row("DAN", &pair.dan, QuantMode::SparseBinary, preset.sigma_binary, split, &preset.head)?,
        quantized_row(
            "DAN",
            &pair.dan,
            QuantMode::SparseBinaryBinaryFeatures,
            preset.sigma_binary,
            split,
            &preset.head,
        )?,
    ])
}

/// Which hyperparameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Lambda,
    Gamma,
    Sigma,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Gamma => "gamma",
            SweepParam::Sigma => "sigma",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub variant: String,
    pub layer_sigma: Vec<f64>,
    pub norm_m: Vec<f64>,
    pub norm_mt: Vec<f64>,
    pub accuracy: f64,
}

pub const SWEEP_CSV_HEADER: &str = "param,value,variant,sigma_per_layer,norm_m_per_layer,norm_mt_per_layer,accuracy";

fn join(xs: &[f64], decimals: usize) -> String {
    xs.iter()
        .map(|x| format!("{x:.decimals$}"))
        .collect::<Vec<_>>()
        .join(";")
}

impl SweepRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.4}",
            self.param.name(),
            self.value,
            self.variant,
            join(&self.layer_sigma, 6),
            join(&self.norm_m, 6),
            join(&self.norm_mt, 6),
            self.accuracy
        )
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    writeln!(out, "{SWEEP_CSV_HEADER}").unwrap();
    for r in rows {
        writeln!(out, "{}", r.csv_row()).unwrap();
    }
    out
}

/// Reserved ratio at the typical threshold and both mixed norms, per layer.
pub fn layer_statistics(weights: &[&DenseMatrix]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    (
        weights.iter().map(|w| sigma(w, TYPICAL_THRESHOLD)).collect(),
        weights.iter().map(|w| mixed_norm(w)).collect(),
        weights.iter().map(|w| mixed_norm_transposed(w)).collect(),
    )
}

/// Name of a trained stack in sweep output.
pub fn stack_variant_name(reg: &RegularizerConfig) -> &'static str {
    match reg.kind {
        _ if reg.is_inactive() => "DBN",
        RegularizerKind::Mixed => "DAN",
        RegularizerKind::L1 => "DBN_1",
        RegularizerKind::L2 => "DBN_2",
        RegularizerKind::None => "DBN",
    }
}

/// Trains one stack per value of `λ` (or `γ`) with `base` as the template.
pub fn sweep_regularizer(
    param: SweepParam,
    values: &[f64],
    preset: &ExperimentPreset,
    base: &RegularizerConfig,
    split: &Split,
    cache_dir: Option<&Path>,
    mut progress: impl FnMut(f64, &EpochProgress<'_>),
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut reg = base.clone();
        match param {
            SweepParam::Lambda => reg.lambda = value,
            SweepParam::Gamma => reg.gamma = value,
            SweepParam::Sigma => return Err(Error::contract("sigma sweeps quantize a trained stack; use sweep_sigma")),
        }
        let model = train_cached(
            cache_dir,
            &split.train.images,
            &preset.layer_sizes,
            &preset.train,
            &reg,
            |p| progress(value, p),
        )?;
        let weights: Vec<&DenseMatrix> = model.layers.iter().map(|l| &l.weights).collect();
        let (layer_sigma, norm_m, norm_mt) = layer_statistics(&weights);
        let (accuracy, _) = evaluate(Network::Dense(&model), split, &preset.head)?;
        rows.push(SweepRow {
            param,
            value,
            variant: stack_variant_name(&reg).to_string(),
            layer_sigma,
            norm_m,
            norm_mt,
            accuracy,
        });
    }
    Ok(rows)
}

/// Quantizes each named stack at every target reserved ratio in every mode.
pub fn sweep_sigma(
    values: &[f64],
    modes: &[QuantMode],
    stacks: &[(&str, &DanModel)],
    split: &Split,
    head: &HeadConfig,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &value in values {
        for &(base, model) in stacks {
            for &mode in modes {
                let q = quantize_to_sigma(model, mode, value)?;
                let report = memory_report(&q);
                let unpacked: Vec<DenseMatrix> = match &q.layers {
                    crate::quantizer::QuantizedLayers::SparseReal(l) => l.iter().map(|p| p.weights.clone()).collect(),
                    crate::quantizer::QuantizedLayers::SparseBinary { layers, .. } => {
                        layers.iter().map(|l| l.unpack()).collect()
                    }
                };
                let (accuracy, _) = evaluate(Network::Quantized(&q), split, head)?;
                rows.push(SweepRow {
                    param: SweepParam::Sigma,
                    value,
                    variant: format!("{base}{}", &mode.variant_name()[3..]),
                    layer_sigma: report.layers.iter().map(|l| l.sigma).collect(),
                    norm_m: unpacked.iter().map(mixed_norm).collect(),
                    norm_mt: unpacked.iter().map(mixed_norm_transposed).collect(),
                    accuracy,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_mnist() -> Mnist {
        let mut rng = Rng::new(77);
        let make = |rng: &mut Rng, n: usize| {
            let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let images = DenseMatrix::from_fn(n, 12, |i, j| {
                let on = j / 4 == labels[i];
                if on ^ (rng.uniform() < 0.1) {
                    1.0
                } else {
                    0.0
                }
            });
            Dataset {
                images,
                labels,
                source_hash: 0,
            }
        };
        Mnist {
            train: make(&mut rng, 90),
            test: make(&mut rng, 30),
        }
    }

    fn toy_preset() -> ExperimentPreset {
        ExperimentPreset {
            name: "toy",
            layer_sizes: vec![12, 8, 6],
            train_images: 60,
            test_images: 30,
            train: TrainConfig {
                epochs: 40,
                batch_size: 10,
                learning_rate: 0.5,
                ..TrainConfig::default()
            },
            reg: RegularizerConfig::mixed(1e-3, 0.5),
            head: HeadConfig {
                epochs: 60,
                batch_size: 10,
                ..HeadConfig::default()
            },
            sigma_sparse: 0.5,
            sigma_binary: 0.5,
        }
    }

    #[test]
    fn presets() {
        let t = ExperimentPreset::table2();
        assert_eq!(t.layer_sizes, vec![784, 800, 800]);
        assert_eq!((t.train_images, t.test_images), (10_000, 10_000));
        assert_eq!((t.reg.lambda, t.reg.gamma), (1e-4, 0.5));
        assert_eq!((t.sigma_sparse, t.sigma_binary), (0.25, 0.20));
        let s = ExperimentPreset::by_name("small").unwrap();
        assert_eq!(s.layer_sizes, vec![784, 200, 200]);
        assert_eq!(s.train.epochs, 15);
        assert!(ExperimentPreset::by_name("huge").is_none());
    }

    #[test]
    fn split_keeps_full_test_set_in_order() {
        let m = toy_mnist();
        let s = select_split(&m, 40, 30, 5).unwrap();
        assert_eq!(s.test, m.test);
        assert_eq!(s.train.len(), 40);
        let again = select_split(&m, 40, 30, 5).unwrap();
        assert_eq!(s.train, again.train);
        assert_ne!(select_split(&m, 40, 30, 6).unwrap().train, s.train);
        assert_eq!(select_split(&m, 40, 10, 5).unwrap().test.len(), 10);
    }

    #[test]
    fn cache_returns_identical_model() {
        let m = toy_mnist();
        let preset = toy_preset();
        let split = select_split(&m, 60, 30, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let fresh = train_cached(Some(dir.path()), &split.train.images, &preset.layer_sizes, &preset.train, &preset.reg, |_| {})
            .unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        let mut calls = 0;
        let cached = train_cached(Some(dir.path()), &split.train.images, &preset.layer_sizes, &preset.train, &preset.reg, |_| {
            calls += 1
        })
        .unwrap();
        assert_eq!(calls, 0);
        assert_eq!(fresh, cached);
        let uncached =
            train_cached(None, &split.train.images, &preset.layer_sizes, &preset.train, &preset.reg, |_| {}).unwrap();
        assert_eq!(fresh, uncached);
    }

    #[test]
    fn comparison_table_shape() {
        let m = toy_mnist();
        let preset = toy_preset();
        let split = select_split(&m, 60, 30, 2).unwrap();
        let pair = train_pair(&preset, &split, None, |_, _| {}).unwrap();
        let rows = comparison_table(&preset, &split, &pair).unwrap();
        let methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(methods, ["DBN", "DAN", "DAN_s", "DAN_b", "DAN_B"]);
        let bits: Vec<(u32, u32)> = rows.iter().map(|r| (r.weight_bits, r.feature_bits)).collect();
        assert_eq!(bits, [(32, 32), (32, 32), (32, 32), (1, 32), (1, 1)]);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
        assert!(rows[0].accuracy > 0.6, "{rows:?}");
        let csv = table_csv(&rows);
        assert!(csv.starts_with(TABLE_CSV_HEADER));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn dimension_mismatch_is_explicit() {
        let m = toy_mnist();
        let split = select_split(&m, 20, 30, 2).unwrap();
        let model = DanModel::from_layers(vec![crate::rbm::RbmParams::zeros(10, 3, crate::rbm::VisibleKind::Bernoulli)])
            .unwrap();
        assert!(matches!(
            evaluate(Network::Dense(&model), &split, &HeadConfig::default()),
            Err(Error::Dimension { expected: 10, found: 12, .. })
        ));
    }

    #[test]
    fn sweeps_emit_one_row_per_value() {
        let m = toy_mnist();
        let mut preset = toy_preset();
        preset.train.epochs = 3;
        let split = select_split(&m, 60, 30, 3).unwrap();
        let rows = sweep_regularizer(SweepParam::Lambda, &[1e-1, 1e-3], &preset, &preset.reg, &split, None, |_, _| {})
            .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].layer_sigma.len(), 2);
        assert!(rows[0].csv_row().starts_with("lambda,0.1,DAN,"));

        let pair = train_pair(&preset, &split, None, |_, _| {}).unwrap();
        let rows = sweep_sigma(
            &[0.1, 0.3],
            &[QuantMode::SparseReal, QuantMode::SparseBinary],
            &[("DBN", &pair.dbn), ("DAN", &pair.dan)],
            &split,
            &preset.head,
        )
        .unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
        assert_eq!(names, ["DBN_s", "DBN_b", "DAN_s", "DAN_b", "DBN_s", "DBN_b", "DAN_s", "DAN_b"]);
        assert!(rows.iter().all(|r| r.layer_sigma.iter().all(|&s| s <= r.value + 1e-12)));
    }
}
