//! On-disk formats: the dataset and model checkpoint binary codecs, the flat
//! key=value config format, and CSV assembly.
//!
//! Dataset file ("PGDS", version 1):
//!   magic "PGDS" | u8 version | u32le count, rows, cols, channels, classes |
//!   count * rows * cols * channels f32le pixels in [0, 1] |
//!   count u16le labels
//!
//! Model checkpoint ("PGMD", version 1):
//!   magic "PGMD" | u8 version |
//!   u32le rf_rows, rf_cols, stride_rows, stride_cols, image_rows, image_cols,
//!         channels, classes, hidden |
//!   f64le w1 (hidden x input, row-major), b1, w2 (classes x hidden), b2
//!
//! Both formats are little-endian throughout; the model round trip is
//! bit-exact on weights.

use crate::error::{Error, Result};
use crate::geometry::RFGeometry;
use crate::model::{LabeledDataset, PatchEnsembleModel};
use crate::tensor::ImageTensor;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const DATASET_MAGIC: &[u8; 4] = b"PGDS";
const MODEL_MAGIC: &[u8; 4] = b"PGMD";
const VERSION: u8 = 1;

/// Byte-counting reader so format errors carry the offset of the failure.
struct Cursor<'a> {
    data: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8]) -> Self {
        Cursor { data, offset: 0 }
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format { offset: self.offset as u64, message: message.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.offset + n > self.data.len() {
            return Err(self.fail(format!(
                "unexpected end of file (need {n} bytes, {} left)",
                self.data.len() - self.offset
            )));
        }
        let out = &self.data[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
    }

    fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {:?}, expected {:?}", got, magic),
            });
        }
        Ok(())
    }

    fn done(&self) -> Result<()> {
        if self.offset != self.data.len() {
            return Err(self.fail(format!("{} trailing bytes", self.data.len() - self.offset)));
        }
        Ok(())
    }
}

pub fn write_dataset(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let (rows, cols, channels) = dataset.dims().unwrap_or((0, 0, 0));
    let mut buf = Vec::new();
    buf.extend_from_slice(DATASET_MAGIC);
    buf.push(VERSION);
    for v in [dataset.len(), rows, cols, channels, dataset.class_count()] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for image in dataset.images() {
        for px in image.pixels() {
            buf.extend_from_slice(&(*px as f32).to_le_bytes());
        }
    }
    for label in dataset.labels() {
        buf.extend_from_slice(&(*label as u16).to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let mut cur = Cursor::new(&data);
    cur.expect_magic(DATASET_MAGIC)?;
    let version = cur.u8()?;
    if version != VERSION {
        return Err(cur.fail(format!("unsupported dataset version {version}")));
    }
    let count = cur.u32()? as usize;
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    let channels = cur.u32()? as usize;
    let classes = cur.u32()? as usize;
    if classes == 0 {
        return Err(cur.fail("class count must be positive"));
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let mut pixels = Vec::with_capacity(rows * cols * channels);
        for _ in 0..rows * cols * channels {
            let v = cur.f32()? as f64;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Format {
                    offset: (cur.offset - 4) as u64,
                    message: format!("pixel {v} outside [0, 1] in image {i}"),
                });
            }
            pixels.push(v);
        }
        images.push(
            ImageTensor::new(rows, cols, channels, pixels)
                .map_err(|e| cur.fail(format!("image {i}: {e}")))?,
        );
    }
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = cur.u16()? as usize;
        if label >= classes {
            return Err(Error::Format {
                offset: (cur.offset - 2) as u64,
                message: format!("label {label} out of range in record {i}"),
            });
        }
        labels.push(label);
    }
    cur.done()?;
    LabeledDataset::new(images, labels, classes).map_err(|e| Error::Format {
        offset: 0,
        message: e.to_string(),
    })
}

pub fn write_model(model: &PatchEnsembleModel, path: &Path) -> Result<()> {
    let geom = model.geom();
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.push(VERSION);
    for v in [
        geom.rf_rows(),
        geom.rf_cols(),
        geom.stride_rows(),
        geom.stride_cols(),
        geom.image_rows(),
        geom.image_cols(),
        model.channels(),
        model.classes(),
        model.hidden(),
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for w in model
        .w1
        .iter()
        .chain(&model.b1)
        .chain(&model.w2)
        .chain(&model.b2)
    {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<PatchEnsembleModel> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let mut cur = Cursor::new(&data);
    cur.expect_magic(MODEL_MAGIC)?;
    let version = cur.u8()?;
    if version != VERSION {
        return Err(cur.fail(format!("unsupported model version {version}")));
    }
    let rf_rows = cur.u32()? as usize;
    let rf_cols = cur.u32()? as usize;
    let stride_rows = cur.u32()? as usize;
    let stride_cols = cur.u32()? as usize;
    let image_rows = cur.u32()? as usize;
    let image_cols = cur.u32()? as usize;
    let channels = cur.u32()? as usize;
    let classes = cur.u32()? as usize;
    let hidden = cur.u32()? as usize;
    let geom = RFGeometry::new(rf_rows, rf_cols, stride_rows, stride_cols, image_rows, image_cols)
        .map_err(|e| cur.fail(e.to_string()))?;
    let input = rf_rows * rf_cols * channels;
    let mut read_vec = |len: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(cur.f64()?);
        }
        Ok(out)
    };
    let w1 = read_vec(hidden * input)?;
    let b1 = read_vec(hidden)?;
    let w2 = read_vec(classes * hidden)?;
    let b2 = read_vec(classes)?;
    cur.done()?;
    PatchEnsembleModel::from_weights(geom, channels, classes, hidden, w1, b1, w2, b2)
        .map_err(|e| Error::Format { offset: 0, message: e.to_string() })
}

/// Parses the flat key=value config format: one pair per line, `#` starts a
/// comment, blank lines ignored. Later keys override earlier ones.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
        })?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

/// Minimal CSV assembly: numeric and plain-identifier fields only, so no
/// quoting is needed. Rows end with '\n'.
pub struct CsvWriter {
    buf: String,
    columns: usize,
}

impl CsvWriter {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = header.join(",");
        buf.push('\n');
        CsvWriter { buf, columns: header.len() }
    }

    pub fn row(&mut self, fields: &[String]) {
        assert_eq!(fields.len(), self.columns, "row width does not match header");
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

/// Deterministic float formatting for CSV output (shortest round-trip form).
pub fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TrainConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_dataset() -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let images: Vec<ImageTensor> = (0..4)
            .map(|_| {
                let px: Vec<f64> = (0..2 * 3 * 1).map(|_| rng.gen::<f32>() as f64).collect();
                ImageTensor::new(2, 3, 1, px).unwrap()
            })
            .collect();
        LabeledDataset::new(images, vec![0, 1, 2, 1], 3).unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.pgds");
        let data = sample_dataset();
        write_dataset(&data, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.len(), data.len());
        assert_eq!(back.labels(), data.labels());
        assert_eq!(back.class_count(), data.class_count());
        // Pixels pass through f32, which is how they were generated here.
        for (a, b) in back.images().iter().zip(data.images()) {
            assert_eq!(a.pixels(), b.pixels());
        }
    }

    #[test]
    fn empty_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.pgds");
        let data = LabeledDataset::new(vec![], vec![], 5).unwrap();
        write_dataset(&data, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.class_count(), 5);
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pgmd");
        let geom = RFGeometry::square(4, 2, 8, 8).unwrap();
        let data = {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let images: Vec<ImageTensor> = (0..6)
                .map(|_| {
                    let px: Vec<f64> = (0..64).map(|_| rng.gen::<f64>()).collect();
                    ImageTensor::new(8, 8, 1, px).unwrap()
                })
                .collect();
            LabeledDataset::new(images, vec![0, 1, 0, 1, 0, 1], 2).unwrap()
        };
        let config = TrainConfig {
            learning_rate: 0.1,
            epochs: 2,
            batch_size: 3,
            seed: 3,
            hidden_units: 5,
            adv_mask_shape: None,
        };
        let model = crate::model::train(&data, &geom, &config).unwrap().model;
        crate::model::save_model(&model, &path).unwrap();
        let back = crate::model::load_model(&path).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn truncated_model_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.pgmd");
        std::fs::write(&path, b"PGMD\x01\x03\x00\x00\x00").unwrap();
        match read_model(&path) {
            Err(Error::Format { offset, .. }) => assert!(offset >= 5),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgds");
        std::fs::write(&path, b"NOPE\x01").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn config_parsing() {
        let text = "\n# comment\nrf = 9\nstride=4 # trailing\n\nkind=logits\n";
        let map = parse_config(text).unwrap();
        assert_eq!(map["rf"], "9");
        assert_eq!(map["stride"], "4");
        assert_eq!(map["kind"], "logits");
        assert!(parse_config("no_equals_here").is_err());
    }

    #[test]
    fn csv_shape() {
        let mut w = CsvWriter::new(&["a", "b"]);
        w.row(&["1".into(), "2".into()]);
        assert_eq!(w.finish(), "a,b\n1,2\n");
    }
}
