//! Binary formats for trained models (`DHMD`) and packed codes (`DHCB`).
//!
//! Model layout, all little-endian:
//!
//! ```text
//! "DHMD" u32 version
//! u8 method (0 = fsdh, 1 = sdh)
//! u32 bits, u32 classes, u32 anchors, u32 dim
//! f64 sigma, u8 sigma rule (0 mean, 1 median, 2 fixed), f64 fixed value
//! f64 lambda, f64 nu, u32 max_iters, u64 seed, f64 ridge_eps, u64 requested anchors
//! u64 x anchors       anchor row indices
//! f64 x anchors*dim   anchor features, row-major
//! f64 x anchors*bits  P, row-major
//! f64 x bits*classes  W, row-major (classes x bits for fsdh, bits x classes for sdh)
//! [u8; 32]            SHA-256 of everything above
//! ```
//!
//! Code layout: `"DHCB" u32 version, u64 rows, u32 bits`, then each row's
//! packed `u64` words, then one `u32` label per row ([`UNLABELED`] when
//! unknown).

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::codes::{words_for, CodeMatrix};
use crate::dataset::{AnchorSet, FeatureMatrix};
use crate::error::{Error, Result};
use crate::model::{HashModel, Method, TrainConfig};
use crate::rbf::{RbfMap, SigmaRule};

const MODEL_MAGIC: &[u8; 4] = b"DHMD";
const MODEL_VERSION: u32 = 1;
const CODES_MAGIC: &[u8; 4] = b"DHCB";
const CODES_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

/// Label written for rows without ground truth.
pub const UNLABELED: u32 = u32::MAX;

struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::validation(format!("{v} exceeds u32")))?;
        self.bytes(&v.to_le_bytes());
        Ok(())
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn matrix(&mut self, m: &DMatrix<f64>) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f64(m[(i, j)]);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Corrupt("unexpected end of data".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap_or_default()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap_or_default()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap_or_default()))
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Corrupt("matrix size overflow".into()))?;
        let raw = self.take(len)?;
        let vals: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap_or_default()))
            .collect();
        Ok(DMatrix::from_row_slice(rows, cols, &vals))
    }
}

pub fn model_to_bytes(model: &HashModel) -> Result<Vec<u8>> {
    let (m, l, c, d) = (model.rbf.len(), model.bits(), model.classes, model.dim());
    let cfg = &model.config;
    let mut w = Writer(Vec::new());
    w.bytes(MODEL_MAGIC);
    w.u32(MODEL_VERSION as usize)?;
    w.u8(match model.method {
        Method::Fsdh => 0,
        Method::Sdh => 1,
    });
    w.u32(l)?;
    w.u32(c)?;
    w.u32(m)?;
    w.u32(d)?;
    w.f64(model.rbf.sigma());
    let (tag, value) = match cfg.sigma_rule {
        SigmaRule::MeanDistance => (0, 0.0),
        SigmaRule::MedianDistance => (1, 0.0),
        SigmaRule::Fixed(v) => (2, v),
    };
    w.u8(tag);
    w.f64(value);
    w.f64(cfg.lambda);
    w.f64(cfg.nu);
    w.u32(cfg.max_iters)?;
    w.u64(cfg.seed);
    w.f64(cfg.ridge_eps);
    w.u64(cfg.anchors as u64);
    let anchors = model.rbf.anchors();
    for &i in &anchors.indices {
        w.u64(i as u64);
    }
    w.matrix(&anchors.anchors.to_dmatrix());
    w.matrix(&model.projection);
    w.matrix(&model.regression);
    let digest = Sha256::digest(&w.0);
    w.bytes(&digest);
    Ok(w.0)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<HashModel> {
    if bytes.len() < MODEL_MAGIC.len() + CHECKSUM_LEN {
        return Err(Error::Corrupt("model file truncated".into()));
    }
    let (payload, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if payload[..4] != MODEL_MAGIC[..] {
        return Err(Error::Corrupt("bad model magic".into()));
    }
    if Sha256::digest(payload).as_slice() != checksum {
        return Err(Error::Corrupt("model checksum mismatch".into()));
    }
    let mut r = Reader { buf: payload, pos: 4 };
    let version = r.u32()?;
    if version != MODEL_VERSION as usize {
        return Err(Error::Corrupt(format!("unsupported model version {version}")));
    }
    let method = match r.u8()? {
        0 => Method::Fsdh,
        1 => Method::Sdh,
        t => return Err(Error::Corrupt(format!("unknown method tag {t}"))),
    };
    let (l, c, m, d) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let sigma = r.f64()?;
    let tag = r.u8()?;
    let value = r.f64()?;
    let sigma_rule = match tag {
        0 => SigmaRule::MeanDistance,
        1 => SigmaRule::MedianDistance,
        2 => SigmaRule::Fixed(value),
        t => return Err(Error::Corrupt(format!("unknown sigma rule tag {t}"))),
    };
    let config = TrainConfig {
        bits: l,
        lambda: r.f64()?,
        nu: r.f64()?,
        max_iters: r.u32()?,
        seed: r.u64()?,
        ridge_eps: r.f64()?,
        anchors: r.u64()? as usize,
        sigma_rule,
    };
    let indices = (0..m)
        .map(|_| r.u64().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let anchor_m = r.matrix(m, d)?;
    let projection = r.matrix(m, l)?;
    let regression = match method {
        Method::Fsdh => r.matrix(c, l)?,
        Method::Sdh => r.matrix(l, c)?,
    };
    if r.pos != payload.len() {
        return Err(Error::Corrupt("trailing bytes after model payload".into()));
    }
    let anchor_vals: Vec<f64> = anchor_m.transpose().iter().copied().collect();
    let anchors = AnchorSet {
        anchors: FeatureMatrix::new(m, d, anchor_vals)
            .map_err(|e| Error::Corrupt(format!("anchors: {e}")))?,
        indices,
    };
    let rbf = RbfMap::new(anchors, sigma).map_err(|e| Error::Corrupt(e.to_string()))?;
    HashModel::new(method, rbf, projection, regression, config)
        .map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn save_model(path: impl AsRef<Path>, model: &HashModel) -> Result<()> {
    fs::write(path, model_to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<HashModel> {
    model_from_bytes(&fs::read(path)?)
}

pub fn codes_to_bytes(codes: &CodeMatrix, labels: &[u32]) -> Result<Vec<u8>> {
    if labels.len() != codes.rows() {
        return Err(Error::validation(format!(
            "{} labels for {} code rows",
            labels.len(),
            codes.rows()
        )));
    }
    let mut w = Writer(Vec::with_capacity(20 + codes.words().len() * 8 + labels.len() * 4));
    w.bytes(CODES_MAGIC);
    w.u32(CODES_VERSION as usize)?;
    w.u64(codes.rows() as u64);
    w.u32(codes.bits())?;
    for &word in codes.words() {
        w.u64(word);
    }
    for &l in labels {
        w.bytes(&l.to_le_bytes());
    }
    Ok(w.0)
}

pub fn codes_from_bytes(bytes: &[u8]) -> Result<(CodeMatrix, Vec<u32>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CODES_MAGIC {
        return Err(Error::Corrupt("bad codes magic".into()));
    }
    let version = r.u32()?;
    if version != CODES_VERSION as usize {
        return Err(Error::Corrupt(format!("unsupported codes version {version}")));
    }
    let rows = r.u64()? as usize;
    let bits = r.u32()?;
    let n_words = rows
        .checked_mul(words_for(bits))
        .ok_or_else(|| Error::Corrupt("code size overflow".into()))?;
    let words = (0..n_words).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let labels = (0..rows)
        .map(|_| r.u32().map(|v| v as u32))
        .collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::Corrupt("trailing bytes after codes".into()));
    }
    let codes =
        CodeMatrix::from_words(rows, bits, words).map_err(|e| Error::Corrupt(e.to_string()))?;
    Ok((codes, labels))
}

pub fn save_codes(path: impl AsRef<Path>, codes: &CodeMatrix, labels: &[u32]) -> Result<()> {
    fs::write(path, codes_to_bytes(codes, labels)?)?;
    Ok(())
}

pub fn load_codes(path: impl AsRef<Path>) -> Result<(CodeMatrix, Vec<u32>)> {
    codes_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::sample_anchors;
    use proptest::prelude::*;

    fn toy_model(method: Method) -> HashModel {
        let x = FeatureMatrix::new(5, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.5])
            .unwrap();
        let rbf = RbfMap::new(sample_anchors(&x, 3, 2).unwrap(), 1.5).unwrap();
        let p = DMatrix::from_fn(3, 4, |i, j| i as f64 * 0.25 - j as f64);
        let w = match method {
            Method::Fsdh => DMatrix::from_fn(2, 4, |i, j| (i + j) as f64 / 7.0),
            Method::Sdh => DMatrix::from_fn(4, 2, |i, j| (i * j) as f64 / 3.0),
        };
        let config = TrainConfig {
            bits: 4,
            sigma_rule: SigmaRule::Fixed(1.5),
            ..TrainConfig::default()
        };
        HashModel::new(method, rbf, p, w, config).unwrap()
    }

    #[test]
    fn model_round_trip_is_byte_exact() {
        for method in [Method::Fsdh, Method::Sdh] {
            let model = toy_model(method);
            let bytes = model_to_bytes(&model).unwrap();
            let back = model_from_bytes(&bytes).unwrap();
            assert_eq!(back, model);
            assert_eq!(model_to_bytes(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn corrupt_models_rejected() {
        let bytes = model_to_bytes(&toy_model(Method::Fsdh)).unwrap();
        let truncated = &bytes[..bytes.len() - 9];
        assert!(matches!(model_from_bytes(truncated), Err(Error::Corrupt(_))));
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(model_from_bytes(&flipped), Err(Error::Corrupt(_))));
        assert!(matches!(model_from_bytes(&bytes[..10]), Err(Error::Corrupt(_))));
    }

    #[test]
    fn codes_header_layout() {
        let codes = CodeMatrix::from_rows(&[vec![1, -1, 1], vec![-1, -1, 1]]).unwrap();
        let bytes = codes_to_bytes(&codes, &[7, UNLABELED]).unwrap();
        assert_eq!(&bytes[..4], b"DHCB");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[20..28].try_into().unwrap()), 0b101);
        assert_eq!(bytes.len(), 20 + 16 + 8);
        assert!(codes_from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn codes_round_trip(rows in 0usize..5, bits in 1usize..140, seed in any::<u64>()) {
            let words: Vec<u64> = (0..rows * words_for(bits))
                .map(|k| seed.rotate_left(k as u32 * 7) ^ k as u64)
                .collect();
            let tail = bits % 64;
            let wpr = words_for(bits);
            let words: Vec<u64> = words
                .into_iter()
                .enumerate()
                .map(|(k, w)| if tail != 0 && k % wpr == wpr - 1 { w & ((1u64 << tail) - 1) } else { w })
                .collect();
            let codes = CodeMatrix::from_words(rows, bits, words).unwrap();
            let labels: Vec<u32> = (0..rows as u32).collect();
            let bytes = codes_to_bytes(&codes, &labels).unwrap();
            let (back, back_labels) = codes_from_bytes(&bytes).unwrap();
            prop_assert_eq!(back, codes);
            prop_assert_eq!(back_labels, labels);
        }
    }
}
