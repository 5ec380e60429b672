//! On-disk artifacts: the `SFOC` model container, dataset directories and
//! content hashes.
//!
//! A model file is `b"SFOC"`, a little-endian `u32` format version, a `u64`
//! metadata length, that many bytes of UTF-8 JSON with sorted keys, the raw
//! little-endian `f64` payloads in the order the metadata lists them, and a
//! trailing little-endian CRC-64/XZ of everything before it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crc::{Crc, CRC_64_XZ};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::cnn::{Architecture, CnnModel};
use crate::dataset::{Dataset, Split};
use crate::detector::{DetectorConfig, SafeOccDetector};
use crate::error::{Error, Result};
use crate::numeric::{Mat, Tensor3};
use crate::occ::OcSvmModel;
use crate::reduction::{PcaModel, RefinerModel, TwoDPcaFilter, TwoDPcaModel};

pub const MAGIC: &[u8; 4] = b"SFOC";
pub const FORMAT_VERSION: u32 = 1;
const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);
const HEADER_LEN: usize = 16;
/// Refuse metadata blocks larger than this when decoding.
const MAX_METADATA: u64 = 64 << 20;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl PayloadSpec {
    fn len(&self) -> Option<usize> {
        self.shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Payload {
    pub spec: PayloadSpec,
    pub data: Vec<f64>,
}

/// Decoded model container. `metadata` never holds the `payloads` key; it is
/// generated from `payloads` on encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub version: u32,
    pub metadata: Map<String, Value>,
    pub payloads: Vec<Payload>,
}

impl ModelFile {
    pub fn new(kind: &str) -> Self {
        let mut metadata = Map::new();
        metadata.insert("kind".into(), Value::String(kind.into()));
        Self { version: FORMAT_VERSION, metadata, payloads: vec![] }
    }

    pub fn kind(&self) -> &str {
        self.metadata.get("kind").and_then(Value::as_str).unwrap_or("")
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind() != kind {
            return Err(format_err(format!("expected a {kind} file, found {:?}", self.kind())));
        }
        Ok(())
    }

    pub fn set_meta(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.metadata.insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn meta<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self.metadata.get(key).ok_or_else(|| format_err(format!("metadata lacks {key:?}")))?;
        Ok(T::deserialize(v)?)
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        let spec = PayloadSpec { name: name.into(), shape };
        debug_assert_eq!(spec.len(), Some(data.len()));
        self.payloads.push(Payload { spec, data });
    }

    pub fn push_mat(&mut self, name: impl Into<String>, m: &Mat) {
        self.push(name, vec![m.rows(), m.cols()], m.data().to_vec());
    }

    pub fn payload(&self, name: &str) -> Result<&Payload> {
        self.payloads
            .iter()
            .find(|p| p.spec.name == name)
            .ok_or_else(|| format_err(format!("missing payload {name:?}")))
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        let p = self.payload(name)?;
        if p.spec.shape.len() != 1 {
            return Err(format_err(format!("payload {name:?} is not a vector")));
        }
        Ok(p.data.clone())
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let p = self.payload(name)?;
        if !p.spec.shape.is_empty() {
            return Err(format_err(format!("payload {name:?} is not a scalar")));
        }
        Ok(p.data[0])
    }

    pub fn mat(&self, name: &str) -> Result<Mat> {
        let p = self.payload(name)?;
        match p.spec.shape[..] {
            [r, c] => Mat::new(r, c, p.data.clone()),
            _ => Err(format_err(format!("payload {name:?} is not a matrix"))),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut meta = self.metadata.clone();
        let specs: Vec<&PayloadSpec> = self.payloads.iter().map(|p| &p.spec).collect();
        meta.insert("payloads".into(), serde_json::to_value(specs)?);
        let meta_bytes = serde_json::to_vec(&Value::Object(meta))?;
        let n_values: usize = self.payloads.iter().map(|p| p.data.len()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + meta_bytes.len() + 8 * n_values + 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta_bytes);
        for p in &self.payloads {
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = CRC64.checksum(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN + 8 {
            return Err(format_err("file too short"));
        }
        if &bytes[..4] != MAGIC {
            return Err(format_err("bad magic"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(trailer.try_into().expect("8 bytes"));
        if CRC64.checksum(body) != stored {
            return Err(format_err("checksum mismatch"));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(format_err(format!("unsupported format version {version}")));
        }
        let meta_len = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes"));
        if meta_len > MAX_METADATA || meta_len as usize > body.len() - HEADER_LEN {
            return Err(format_err("metadata length exceeds file"));
        }
        let meta_end = HEADER_LEN + meta_len as usize;
        let mut metadata = match serde_json::from_slice::<Value>(&body[HEADER_LEN..meta_end]) {
            Ok(Value::Object(m)) => m,
            Ok(_) => return Err(format_err("metadata is not a JSON object")),
            Err(e) => return Err(format_err(format!("metadata: {e}"))),
        };
        let specs: Vec<PayloadSpec> = match metadata.remove("payloads") {
            Some(v) => serde_json::from_value(v).map_err(|e| format_err(format!("payload table: {e}")))?,
            None => return Err(format_err("metadata lacks the payload table")),
        };
        let mut rest = &body[meta_end..];
        let mut payloads = Vec::with_capacity(specs.len());
        for spec in specs {
            let n = spec.len().ok_or_else(|| format_err("payload shape overflows"))?;
            let n_bytes = n.checked_mul(8).filter(|b| *b <= rest.len()).ok_or_else(|| format_err("payloads exceed file"))?;
            let (chunk, tail) = rest.split_at(n_bytes);
            let data = chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            payloads.push(Payload { spec, data });
            rest = tail;
        }
        if !rest.is_empty() {
            return Err(format_err(format!("{} trailing bytes after payloads", rest.len())));
        }
        Ok(Self { version, metadata, payloads })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    hex::encode(h.finalize())
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&[&fs::read(path)?]))
}

// ---- sensors ----

/// Provenance stored next to a trained sensor's weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorInfo {
    pub seed: u64,
    pub dataset_hash: String,
    pub learning_rate: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

pub fn sensor_to_file(model: &CnnModel, info: &SensorInfo) -> Result<ModelFile> {
    let mut f = ModelFile::new("sensor");
    f.set_meta("architecture", model.architecture())?;
    f.set_meta("info", info)?;
    for (i, b) in model.blocks.iter().enumerate() {
        let op = &b.op;
        f.push(format!("block{}.kernel", i + 1), vec![op.filters, op.fan_in()], op.kernel.clone());
        f.push(format!("block{}.bias", i + 1), vec![op.filters], op.bias.clone());
    }
    for (i, d) in model.dense.iter().enumerate() {
        f.push_mat(format!("dense{}.weights", i + 1), &d.weights);
        f.push(format!("dense{}.bias", i + 1), vec![d.outputs()], d.bias.clone());
    }
    Ok(f)
}

pub fn sensor_from_file(f: &ModelFile) -> Result<(CnnModel, SensorInfo)> {
    f.expect_kind("sensor")?;
    let arch: Architecture = f.meta("architecture")?;
    let info: SensorInfo = f.meta("info")?;
    // Checked before allocating, so a forged architecture cannot request
    // more memory than the file itself holds.
    let stored: usize = f.payloads.iter().map(|p| p.data.len()).sum();
    if arch.param_count() != Some(stored) {
        return Err(format_err("architecture does not match the stored parameter count"));
    }
    let mut model = CnnModel::zeroed(&arch)?;
    let mut names = Vec::new();
    for i in 1..=model.blocks.len() {
        names.push(format!("block{i}.kernel"));
        names.push(format!("block{i}.bias"));
    }
    for i in 1..=model.dense.len() {
        names.push(format!("dense{i}.weights"));
        names.push(format!("dense{i}.bias"));
    }
    if names.len() != f.payloads.len() {
        return Err(format_err(format!("sensor has {} payloads, architecture needs {}", f.payloads.len(), names.len())));
    }
    for (slot, name) in model.params_mut().into_iter().zip(&names) {
        let p = f.payload(name)?;
        if p.data.len() != slot.len() {
            return Err(format_err(format!("payload {name} has {} values, expected {}", p.data.len(), slot.len())));
        }
        slot.copy_from_slice(&p.data);
    }
    model.validate()?;
    Ok((model, info))
}

pub fn save_sensor(path: &Path, model: &CnnModel, info: &SensorInfo) -> Result<()> {
    sensor_to_file(model, info)?.save(path)
}

pub fn load_sensor(path: &Path) -> Result<(CnnModel, SensorInfo)> {
    sensor_from_file(&ModelFile::load(path)?)
}

// ---- detectors ----

/// Which sensor and data a detector was fitted against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorInfo {
    pub sensor_hash: String,
    pub dataset_hash: String,
}

#[derive(Serialize, Deserialize)]
struct DetectorLayout {
    twod_pca_filters: Option<usize>,
    refiner: crate::reduction::RefinerKind,
    pca: bool,
    n_support: usize,
    gamma: f64,
    nu: f64,
    n_train: usize,
}

pub fn detector_to_file(det: &SafeOccDetector, info: &DetectorInfo) -> Result<ModelFile> {
    let mut f = ModelFile::new("detector");
    f.set_meta("config", &det.config)?;
    f.set_meta("info", info)?;
    let svm = &det.ocsvm;
    f.set_meta(
        "layout",
        DetectorLayout {
            twod_pca_filters: det.twod_pca.as_ref().map(TwoDPcaModel::filter_count),
            refiner: det.refiner.kind,
            pca: det.pca.is_some(),
            n_support: svm.alphas.len(),
            gamma: svm.gamma,
            nu: svm.nu,
            n_train: svm.n_train,
        },
    )?;
    if let Some(t) = &det.twod_pca {
        for (j, flt) in t.filters.iter().enumerate() {
            f.push_mat(format!("twod_pca.{j}.w"), &flt.w);
            f.push_mat(format!("twod_pca.{j}.q"), &flt.q);
            f.push_mat(format!("twod_pca.{j}.mean"), &flt.mean_map);
        }
    }
    let r = &det.refiner;
    for (name, v) in [("min", &r.min), ("max", &r.max), ("mean", &r.mean), ("std", &r.std)] {
        f.push(format!("refiner.{name}"), vec![v.len()], v.clone());
    }
    if let Some(p) = &det.pca {
        f.push("pca.mean", vec![p.mean.len()], p.mean.clone());
        f.push_mat("pca.projection", &p.projection);
        f.push("pca.eigenvalues", vec![p.eigenvalues.len()], p.eigenvalues.clone());
    }
    let d = svm.dim();
    f.push("ocsvm.support_vectors", vec![svm.alphas.len(), d], svm.support_vectors.concat());
    f.push("ocsvm.alphas", vec![svm.alphas.len()], svm.alphas.clone());
    f.push("ocsvm.rho", vec![], vec![svm.rho]);
    Ok(f)
}

pub fn detector_from_file(f: &ModelFile) -> Result<(SafeOccDetector, DetectorInfo)> {
    f.expect_kind("detector")?;
    let config: DetectorConfig = f.meta("config")?;
    let info: DetectorInfo = f.meta("info")?;
    let layout: DetectorLayout = f.meta("layout")?;
    let twod_pca = match layout.twod_pca_filters {
        Some(n) => Some(TwoDPcaModel {
            filters: (0..n)
                .map(|j| {
                    Ok(TwoDPcaFilter {
                        w: f.mat(&format!("twod_pca.{j}.w"))?,
                        q: f.mat(&format!("twod_pca.{j}.q"))?,
                        mean_map: f.mat(&format!("twod_pca.{j}.mean"))?,
                    })
                })
                .collect::<Result<_>>()?,
        }),
        None => None,
    };
    let refiner = RefinerModel {
        kind: layout.refiner,
        min: f.vector("refiner.min")?,
        max: f.vector("refiner.max")?,
        mean: f.vector("refiner.mean")?,
        std: f.vector("refiner.std")?,
    };
    let pca = if layout.pca {
        Some(PcaModel {
            mean: f.vector("pca.mean")?,
            projection: f.mat("pca.projection")?,
            eigenvalues: f.vector("pca.eigenvalues")?,
        })
    } else {
        None
    };
    let sv = f.mat("ocsvm.support_vectors")?;
    if sv.rows() != layout.n_support {
        return Err(format_err("support vector count disagrees with layout"));
    }
    let ocsvm = OcSvmModel {
        support_vectors: (0..sv.rows()).map(|i| sv.row(i).to_vec()).collect(),
        alphas: f.vector("ocsvm.alphas")?,
        rho: f.scalar("ocsvm.rho")?,
        gamma: layout.gamma,
        nu: layout.nu,
        n_train: layout.n_train,
    };
    let det = SafeOccDetector { config, twod_pca, refiner, pca, ocsvm };
    det.validate()?;
    Ok((det, info))
}

pub fn save_detector(path: &Path, det: &SafeOccDetector, info: &DetectorInfo) -> Result<()> {
    detector_to_file(det, info)?.save(path)
}

pub fn load_detector(path: &Path) -> Result<(SafeOccDetector, DetectorInfo)> {
    detector_from_file(&ModelFile::load(path)?)
}

// ---- datasets ----

pub const DATASET_META: &str = "dataset.json";
pub const DATASET_IMAGES: &str = "images.bin";
pub const DATASET_LABELS: &str = "labels.bin";

/// Contents of `dataset.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env: String,
    pub seed: u64,
    pub size: usize,
    pub channels: usize,
    pub label_dim: usize,
    pub count: usize,
    pub episode_starts: Vec<usize>,
    pub split: Split,
    /// Disturbance kinds appended by augmentation, in order.
    pub augmented: Vec<String>,
}

/// Images are stored as `f32` and labels as `f64`, both little-endian.
pub fn save_dataset(dir: &Path, data: &Dataset, meta: &DatasetMeta) -> Result<()> {
    meta.split.validate(data.len())?;
    if meta.count != data.len() || data.labels.len() != data.len() {
        return Err(Error::Dimension(format!("metadata counts {} frames, dataset has {}", meta.count, data.len())));
    }
    fs::create_dir_all(dir)?;
    let mut images = Vec::with_capacity(data.len() * meta.size * meta.size * meta.channels * 4);
    for img in &data.images {
        if img.shape() != (meta.size, meta.size, meta.channels) {
            return Err(Error::Dimension(format!("image shape {:?} disagrees with metadata", img.shape())));
        }
        for v in img.data() {
            images.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let mut labels = Vec::with_capacity(data.len() * meta.label_dim * 8);
    for l in &data.labels {
        if l.len() != meta.label_dim {
            return Err(Error::Dimension(format!("label of length {} disagrees with metadata", l.len())));
        }
        for v in l {
            labels.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(&dir.join(DATASET_IMAGES), &images)?;
    write_atomic(&dir.join(DATASET_LABELS), &labels)?;
    let mut json = serde_json::to_vec_pretty(meta)?;
    json.push(b'\n');
    write_atomic(&dir.join(DATASET_META), &json)
}

pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetMeta)> {
    let meta: DatasetMeta = serde_json::from_slice(&fs::read(dir.join(DATASET_META))?)?;
    let images = fs::read(dir.join(DATASET_IMAGES))?;
    let labels = fs::read(dir.join(DATASET_LABELS))?;
    let (data, meta) = decode_dataset(meta, &images, &labels)?;
    Ok((data, meta))
}

/// Checks the binary blobs against the metadata and assembles the dataset.
pub fn decode_dataset(meta: DatasetMeta, images: &[u8], labels: &[u8]) -> Result<(Dataset, DatasetMeta)> {
    let px = meta
        .size
        .checked_mul(meta.size)
        .and_then(|v| v.checked_mul(meta.channels))
        .filter(|v| *v > 0)
        .ok_or_else(|| format_err("bad image shape"))?;
    // Per-frame sizes are checked on their own: with zero frames the
    // totals below are zero whatever the shape.
    let img_bytes = px.checked_mul(4).ok_or_else(|| format_err("bad image shape"))?;
    let lab_bytes = meta.label_dim.checked_mul(8).ok_or_else(|| format_err("bad label width"))?;
    let want_img = meta.count.checked_mul(img_bytes);
    let want_lab = meta.count.checked_mul(lab_bytes);
    if want_img != Some(images.len()) || want_lab != Some(labels.len()) {
        return Err(format_err("dataset blobs do not match the declared counts"));
    }
    meta.split.validate(meta.count)?;
    if meta.episode_starts.iter().any(|s| *s > meta.count) || meta.episode_starts.windows(2).any(|w| w[0] > w[1]) {
        return Err(format_err("episode starts are not sorted offsets into the dataset"));
    }
    let imgs = images
        .chunks_exact(img_bytes)
        .map(|chunk| {
            let v: Vec<f64> = chunk.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
            Tensor3::new(meta.size, meta.size, meta.channels, v)
        })
        .collect::<Result<Vec<_>>>()?;
    let labs: Vec<Vec<f64>> = if meta.label_dim == 0 {
        vec![vec![]; meta.count]
    } else {
        labels
            .chunks_exact(lab_bytes)
            .map(|chunk| chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
            .collect()
    };
    let data = Dataset { images: imgs, labels: labs, episode_starts: meta.episode_starts.clone() };
    Ok((data, meta))
}

/// Hash over the metadata, image and label files of a dataset directory.
pub fn dataset_hash(dir: &Path) -> Result<String> {
    let parts: Vec<Vec<u8>> =
        [DATASET_META, DATASET_IMAGES, DATASET_LABELS].iter().map(|f| fs::read(dir.join(f))).collect::<std::io::Result<_>>()?;
    let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
    Ok(sha256_hex(&refs))
}

pub fn dataset_files(dir: &Path) -> [PathBuf; 3] {
    [dir.join(DATASET_META), dir.join(DATASET_IMAGES), dir.join(DATASET_LABELS)]
}
