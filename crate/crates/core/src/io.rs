//! MNIST IDX loading and the `DANM` model file format.
//!
//! # Model file layout
//!
//! All integers are little-endian and all reals are IEEE-754 `f32`.
//!
//! ```text
//! header (12 bytes)
//!   magic        4  b"DANM"
//!   version      u16  = 1
//!   layer_count  u16
//!   mode         u8   0 dense, 1 sparse real, 2 sparse binary,
//!                     3 sparse binary with binary features
//!   flags        u8   bit 0: a classifier head record follows the layers
//!   meta_len     u16  length of the JSON metadata (0 = none)
//! metadata       meta_len bytes of UTF-8 JSON
//! layer record (repeated layer_count times, then once more for the head)
//!   tag          u8   0 dense real, 1 sparse binary, 2 classifier head
//!   visible_kind u8   0 Bernoulli, 1 Gaussian
//!   reserved     u16  = 0
//!   n, d         u32, u32
//!   payload
//!     tag 0: weights n*d row-major, hidden bias d, visible bias n
//!     tag 1: hidden bias d, then for each unit ceil(n/64) u64 words of the
//!            +1 mask followed by ceil(n/64) words of the -1 mask
//!     tag 2: weights n*d row-major, bias d
//! crc32          u32 over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierHead;
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, Rng};
use crate::quantizer::{QuantMode, QuantizedLayers, QuantizedModel};
use crate::rbm::{RbmParams, VisibleKind};
use crate::sparse::{words_for, SparseBinaryLayer, FEATURE_THRESHOLD};
use crate::stack::{DanModel, ModelMetadata};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

pub const MODEL_MAGIC: &[u8; 4] = b"DANM";
pub const MODEL_VERSION: u16 = 1;
pub const MODEL_HEADER_BYTES: usize = 12;
const CRC_BYTES: usize = 4;

const TAG_DENSE: u8 = 0;
const TAG_SPARSE_BINARY: u8 = 1;
const TAG_HEAD: u8 = 2;
const FLAG_HEAD: u8 = 1;

/// Labelled images with pixels scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One image per row.
    pub images: DenseMatrix,
    pub labels: Vec<usize>,
    /// CRC32 of the raw image file followed by the raw label file.
    pub source_hash: u32,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        self.images.cols()
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            source_hash: self.source_hash,
        }
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn idx_header(bytes: &[u8], what: &'static str, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let header = 4 + 4 * dims;
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            what,
            needed: header,
            available: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::BadMagic {
            what,
            expected: magic,
            found,
        });
    }
    if bytes.len() < header {
        return Err(Error::Truncated {
            what,
            needed: header,
            available: bytes.len(),
        });
    }
    let shape: Vec<usize> = (0..dims).map(|k| be_u32(bytes, 4 + 4 * k) as usize).collect();
    let needed = header + shape.iter().product::<usize>();
    if bytes.len() < needed {
        return Err(Error::Truncated {
            what,
            needed,
            available: bytes.len(),
        });
    }
    Ok(shape)
}

/// Parses an IDX3 image file; returns `count x (rows * cols)` pixels in `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<DenseMatrix> {
    let shape = idx_header(bytes, "IDX image file", IDX_IMAGES_MAGIC, 3)?;
    let (count, pixels) = (shape[0], shape[1] * shape[2]);
    let data = bytes[16..16 + count * pixels].iter().map(|&b| b as f64 / 255.0).collect();
    DenseMatrix::from_vec(count, pixels, data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let shape = idx_header(bytes, "IDX label file", IDX_LABELS_MAGIC, 1)?;
    Ok(bytes[8..8 + shape[0]].iter().map(|&b| b as usize).collect())
}

/// Loads an image file and its label file.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;
    let images = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if images.rows() != labels.len() {
        return Err(Error::CountMismatch {
            images: images.rows(),
            labels: labels.len(),
        });
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&image_bytes);
    hasher.update(&label_bytes);
    Ok(Dataset {
        images,
        labels,
        source_hash: hasher.finalize(),
    })
}

/// Uniform sample of `k` items without replacement, in sampled order.
pub fn subsample(rng: &mut Rng, ds: &Dataset, k: usize) -> Result<Dataset> {
    let n = ds.len();
    if k > n {
        return Err(Error::domain(format!("cannot sample {k} items from a data set of {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + rng.below((n - i) as u64) as usize;
        order.swap(i, j);
    }
    Ok(ds.select(&order[..k]))
}

/// Contents of a model file.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Dense(DanModel),
    Quantized(QuantizedModel),
}

#[derive(Default, Serialize, Deserialize)]
struct FileMetadata {
    #[serde(flatten)]
    model: ModelMetadata,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    thresholds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_threshold: Option<f64>,
}

fn mode_byte(mode: Option<QuantMode>) -> u8 {
    match mode {
        None => 0,
        Some(QuantMode::SparseReal) => 1,
        Some(QuantMode::SparseBinary) => 2,
        Some(QuantMode::SparseBinaryBinaryFeatures) => 3,
    }
}

fn kind_byte(kind: VisibleKind) -> u8 {
    match kind {
        VisibleKind::Bernoulli => 0,
        VisibleKind::Gaussian => 1,
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn header(layer_count: usize, mode: u8, has_head: bool, meta: &FileMetadata) -> Result<Writer> {
        let json = serde_json::to_vec(meta).map_err(|e| Error::Format(e.to_string()))?;
        let json = if json == b"{}" { Vec::new() } else { json };
        let layer_count = u16::try_from(layer_count)
            .map_err(|_| Error::contract(format!("{layer_count} layers do not fit a model file")))?;
        let meta_len = u16::try_from(json.len())
            .map_err(|_| Error::contract("model metadata exceeds 65535 bytes"))?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        buf.extend_from_slice(&layer_count.to_le_bytes());
        buf.push(mode);
        buf.push(if has_head { FLAG_HEAD } else { 0 });
        buf.extend_from_slice(&meta_len.to_le_bytes());
        buf.extend_from_slice(&json);
        Ok(Writer { buf })
    }

    fn record(&mut self, tag: u8, kind: u8, n: usize, d: usize) -> Result<()> {
        let dim = |x: usize| u32::try_from(x).map_err(|_| Error::contract(format!("dimension {x} exceeds u32")));
        self.buf.push(tag);
        self.buf.push(kind);
        self.buf.extend_from_slice(&0u16.to_le_bytes());
        self.buf.extend_from_slice(&dim(n)?.to_le_bytes());
        self.buf.extend_from_slice(&dim(d)?.to_le_bytes());
        Ok(())
    }

    fn reals(&mut self, xs: &[f64]) {
        for &x in xs {
            self.buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }

    fn words(&mut self, ws: &[u64]) {
        for w in ws {
            self.buf.extend_from_slice(&w.to_le_bytes());
        }
    }

    fn dense(&mut self, p: &RbmParams) -> Result<()> {
        self.record(TAG_DENSE, kind_byte(p.visible_kind), p.visible_count(), p.hidden_count())?;
        self.reals(p.weights.as_slice());
        self.reals(&p.hidden_bias);
        self.reals(&p.visible_bias);
        Ok(())
    }

    fn head(&mut self, head: &ClassifierHead) -> Result<()> {
        self.record(TAG_HEAD, 0, head.feature_dim(), head.class_count())?;
        self.reals(head.weights.as_slice());
        self.reals(&head.bias);
        Ok(())
    }

    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

pub fn encode_dense(model: &DanModel) -> Result<Vec<u8>> {
    let meta = FileMetadata {
        model: model.metadata(),
        ..FileMetadata::default()
    };
    let mut w = Writer::header(model.depth(), mode_byte(None), model.head.is_some(), &meta)?;
    for p in &model.layers {
        w.dense(p)?;
    }
    if let Some(head) = &model.head {
        w.head(head)?;
    }
    Ok(w.finish())
}

pub fn encode_quantized(model: &QuantizedModel) -> Result<Vec<u8>> {
    let meta = FileMetadata {
        thresholds: model.thresholds.clone(),
        feature_threshold: model.feature_threshold(),
        ..FileMetadata::default()
    };
    let mut w = Writer::header(model.depth(), mode_byte(Some(model.mode())), model.head.is_some(), &meta)?;
    match &model.layers {
        QuantizedLayers::SparseReal(layers) => {
            for p in layers {
                w.dense(p)?;
            }
        }
        QuantizedLayers::SparseBinary { layers, .. } => {
            for l in layers {
                w.record(TAG_SPARSE_BINARY, 0, l.visible_count(), l.hidden_count())?;
                w.reals(&l.bias);
                for j in 0..l.hidden_count() {
                    w.words(l.pos_mask(j));
                    w.words(l.neg_mask(j));
                }
            }
        }
    }
    if let Some(head) = &model.head {
        w.head(head)?;
    }
    Ok(w.finish())
}

pub fn encode(model: &SavedModel) -> Result<Vec<u8>> {
    match model {
        SavedModel::Dense(m) => encode_dense(m),
        SavedModel::Quantized(m) => encode_quantized(m),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated {
                what,
                needed: self.pos.saturating_add(len),
                available: self.bytes.len(),
            });
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1, "model file")?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, "model file")?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, "model file")?.try_into().unwrap()))
    }

    fn reals(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count.saturating_mul(4), "model payload")?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn words(&mut self, count: usize) -> Result<Vec<u64>> {
        let bytes = self.take(count.saturating_mul(8), "model payload")?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

struct Header {
    layer_count: usize,
    mode: u8,
    has_head: bool,
    meta: FileMetadata,
}

struct Record {
    tag: u8,
    kind: u8,
    n: usize,
    d: usize,
}

fn payload_bytes(r: &Record) -> Result<usize> {
    let (n, d) = (r.n, r.d);
    let sized = match r.tag {
        TAG_DENSE => n.checked_mul(d).and_then(|nd| nd.checked_add(n + d)).map(|c| c * 4),
        TAG_SPARSE_BINARY => d.checked_mul(2 * words_for(n) * 8).map(|m| m + 4 * d),
        TAG_HEAD => n.checked_mul(d).map(|nd| (nd + d) * 4),
        t => return Err(Error::Format(format!("unknown layer tag {t}"))),
    };
    sized.ok_or_else(|| Error::Format("layer dimensions overflow".into()))
}

fn read_header(r: &mut Reader) -> Result<Header> {
    let magic = r.take(4, "model file header")?;
    if magic != MODEL_MAGIC {
        return Err(Error::BadMagic {
            what: "model file",
            expected: u32::from_le_bytes(*MODEL_MAGIC),
            found: u32::from_le_bytes(magic.try_into().unwrap()),
        });
    }
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let layer_count = r.u16()? as usize;
    let mode = r.u8()?;
    let flags = r.u8()?;
    let meta_len = r.u16()? as usize;
    let json = r.take(meta_len, "model metadata")?;
    let meta = if json.is_empty() {
        FileMetadata::default()
    } else {
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("metadata: {e}")))?
    };
    if mode > 3 {
        return Err(Error::Format(format!("unknown model mode {mode}")));
    }
    if flags & !FLAG_HEAD != 0 {
        return Err(Error::Format(format!("unknown header flags {flags:#04x}")));
    }
    Ok(Header {
        layer_count,
        mode,
        has_head: flags & FLAG_HEAD != 0,
        meta,
    })
}

fn read_record(r: &mut Reader) -> Result<Record> {
    let tag = r.u8()?;
    let kind = r.u8()?;
    let _reserved = r.u16()?;
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    Ok(Record { tag, kind, n, d })
}

/// Walks the record headers without decoding payloads and returns the
/// length the file claims to have, CRC included.
fn declared_len(bytes: &[u8]) -> Result<usize> {
    let mut r = Reader { bytes, pos: 0 };
    let header = read_header(&mut r)?;
    for _ in 0..header.layer_count + header.has_head as usize {
        let rec = read_record(&mut r)?;
        let len = payload_bytes(&rec)?;
        r.pos = r
            .pos
            .checked_add(len)
            .ok_or_else(|| Error::Format("layer dimensions overflow".into()))?;
    }
    Ok(r.pos + CRC_BYTES)
}

/// Decodes a model file image. Structure and length are checked first, then
/// the checksum, and only then the payloads.
pub fn decode(bytes: &[u8]) -> Result<SavedModel> {
    let declared = declared_len(bytes)?;
    if bytes.len() < declared {
        return Err(Error::Truncated {
            what: "model file",
            needed: declared,
            available: bytes.len(),
        });
    }
    if bytes.len() > declared {
        return Err(Error::Format(format!(
            "{} trailing bytes after the checksum",
            bytes.len() - declared
        )));
    }
    let body = &bytes[..declared - CRC_BYTES];
    let stored = u32::from_le_bytes(bytes[declared - CRC_BYTES..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::CrcMismatch { stored, computed });
    }

    let mut r = Reader { bytes: body, pos: 0 };
    let header = read_header(&mut r)?;
    let expected_tag = if header.mode >= 2 { TAG_SPARSE_BINARY } else { TAG_DENSE };
    let mut dense = Vec::new();
    let mut packed = Vec::new();
    for t in 0..header.layer_count {
        let rec = read_record(&mut r)?;
        if rec.tag != expected_tag {
            return Err(Error::Format(format!("layer {t} has tag {} in mode {}", rec.tag, header.mode)));
        }
        if rec.tag == TAG_DENSE {
            let visible_kind = match rec.kind {
                0 => VisibleKind::Bernoulli,
                1 => VisibleKind::Gaussian,
                k => return Err(Error::Format(format!("unknown visible kind {k}"))),
            };
            let weights = DenseMatrix::from_vec(rec.n, rec.d, r.reals(rec.n * rec.d)?)?;
            let hidden_bias = r.reals(rec.d)?;
            let visible_bias = r.reals(rec.n)?;
            dense.push(RbmParams::new(weights, hidden_bias, visible_bias, visible_kind)?);
        } else {
            let bias = r.reals(rec.d)?;
            let wpm = words_for(rec.n);
            let mut pos = Vec::with_capacity(rec.d * wpm);
            let mut neg = Vec::with_capacity(rec.d * wpm);
            for _ in 0..rec.d {
                pos.extend(r.words(wpm)?);
                neg.extend(r.words(wpm)?);
            }
            packed.push(SparseBinaryLayer::from_masks(rec.n, rec.d, pos, neg, bias)?);
        }
    }
    let head = if header.has_head {
        let rec = read_record(&mut r)?;
        if rec.tag != TAG_HEAD {
            return Err(Error::Format(format!("expected a classifier head record, found tag {}", rec.tag)));
        }
        Some(ClassifierHead {
            weights: DenseMatrix::from_vec(rec.n, rec.d, r.reals(rec.n * rec.d)?)?,
            bias: r.reals(rec.d)?,
        })
    } else {
        None
    };

    let meta = header.meta;
    if header.mode == 0 {
        let model = DanModel {
            layers: dense,
            reg_config: meta.model.regularizer,
            train_config: meta.model.train,
            provenance: meta.model.provenance,
            head,
        };
        model.validate()?;
        return Ok(SavedModel::Dense(model));
    }

    let depth = header.layer_count;
    let thresholds = meta.thresholds;
    if thresholds.len() != depth {
        return Err(Error::Format(format!(
            "{} thresholds recorded for {depth} layers",
            thresholds.len()
        )));
    }
    let layers = match header.mode {
        1 => {
            DanModel::from_layers(dense.clone())?;
            QuantizedLayers::SparseReal(dense)
        }
        mode => {
            if mode == 3 && meta.feature_threshold != Some(FEATURE_THRESHOLD) {
                return Err(Error::Format("binary-feature model without a 0.5 feature threshold".into()));
            }
            for (t, w) in packed.windows(2).enumerate() {
                if w[0].hidden_count() != w[1].visible_count() {
                    return Err(Error::Format(format!("layers {t} and {} do not chain", t + 1)));
                }
            }
            QuantizedLayers::SparseBinary {
                layers: packed,
                binary_features: mode == 3,
            }
        }
    };
    Ok(SavedModel::Quantized(QuantizedModel {
        layers,
        thresholds,
        head,
    }))
}

pub fn save_model(model: &SavedModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(model)?)?;
    Ok(())
}

pub fn save_dense(model: &DanModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_dense(model)?)?;
    Ok(())
}

pub fn save_quantized(model: &QuantizedModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_quantized(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for x in [count, rows, cols] {
            b.extend_from_slice(&x.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn idx_examples() {
        let zeros = parse_idx_images(&idx_images(1, 28, 28, &[0; 784])).unwrap();
        assert_eq!(zeros.shape(), (1, 784));
        assert!(zeros.as_slice().iter().all(|&x| x == 0.0));

        let px = parse_idx_images(&idx_images(2, 1, 2, &[255, 0, 128, 1])).unwrap();
        assert_eq!(px.row(0), &[1.0, 0.0]);
        assert_eq!(px.get(1, 0), 128.0 / 255.0);

        assert_eq!(parse_idx_labels(&idx_labels(&[7, 2, 1])).unwrap(), vec![7, 2, 1]);
    }

    #[test]
    fn idx_errors_are_distinct() {
        let mut bad = idx_images(1, 1, 1, &[0]);
        bad[3] = 0x01;
        assert!(matches!(
            parse_idx_images(&bad),
            Err(Error::BadMagic { expected: 2051, found: 2049, .. })
        ));
        assert!(matches!(
            parse_idx_labels(&idx_images(1, 1, 1, &[0])),
            Err(Error::BadMagic { expected: 2049, .. })
        ));
        assert!(matches!(
            parse_idx_images(&idx_images(3, 2, 2, &[0; 11])),
            Err(Error::Truncated { needed: 28, available: 27, .. })
        ));
        assert!(matches!(parse_idx_labels(&[0, 0, 8]), Err(Error::Truncated { .. })));

        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&ip, idx_images(2, 1, 1, &[0, 255])).unwrap();
        fs::write(&lp, idx_labels(&[1, 2, 3])).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(Error::CountMismatch { images: 2, labels: 3 })
        ));
        fs::write(&lp, idx_labels(&[4, 5])).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.labels, vec![4, 5]);
        assert_eq!(ds.images.get(1, 0), 1.0);
        assert!(matches!(load_idx(dir.path().join("missing"), &lp), Err(Error::Io(_))));
    }

    fn toy_dataset(n: usize) -> Dataset {
        Dataset {
            images: DenseMatrix::from_fn(n, 2, |i, j| (i * 2 + j) as f64),
            labels: (0..n).collect(),
            source_hash: 9,
        }
    }

    #[test]
    fn subsample_examples() {
        let ds = toy_dataset(20);
        let all = subsample(&mut Rng::new(1), &ds, 20).unwrap();
        let mut seen = all.labels.clone();
        seen.sort_unstable();
        assert_eq!(seen, ds.labels);
        for (row, &l) in all.images.iter_rows().zip(&all.labels) {
            assert_eq!(row, ds.images.row(l));
        }

        assert!(subsample(&mut Rng::new(1), &ds, 0).unwrap().is_empty());
        assert!(matches!(subsample(&mut Rng::new(1), &ds, 21), Err(Error::Domain(_))));

        let a = subsample(&mut Rng::new(3), &ds, 7).unwrap();
        let b = subsample(&mut Rng::new(3), &ds, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.source_hash, 9);
    }

    #[test]
    fn empty_model_file() {
        let model = DanModel::from_layers(Vec::new()).unwrap();
        let bytes = encode_dense(&model).unwrap();
        assert_eq!(bytes.len(), MODEL_HEADER_BYTES + CRC_BYTES);
        assert_eq!(&bytes[..4], b"DANM");
        assert_eq!(decode(&bytes).unwrap(), SavedModel::Dense(model));
    }

    #[test]
    fn header_errors() {
        let model = DanModel::from_layers(Vec::new()).unwrap();
        let bytes = encode_dense(&model).unwrap();

        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode(&v2), Err(Error::UnsupportedVersion(2))));

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode(&magic), Err(Error::BadMagic { .. })));

        assert!(matches!(decode(&bytes[..14]), Err(Error::Truncated { .. })));
        assert!(matches!(decode(&bytes[..6]), Err(Error::Truncated { .. })));

        let mut crc = bytes.clone();
        crc[13] ^= 0x10;
        assert!(matches!(decode(&crc), Err(Error::CrcMismatch { .. })));

        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode(&long), Err(Error::Format(_))));
    }
}
