//! In-memory steps behind the commands, shared with the acceptance tests.

use safeocc::augment::{augment_dataset, disturb_images, DisturbanceKind};
use safeocc::cnn::{lr_sweep, train, Architecture, CnnModel, EpochRecord, TrainConfig, TrainOutcome};
use safeocc::dataset::{Dataset, Split};
use safeocc::detector::{calibrate_gamma, fit_detector, DetectorConfig, GammaTrial, SafeOccDetector};
use safeocc::envs::{generate_dataset, EnvKind, GenerateSpec};
use safeocc::io::DatasetMeta;
use safeocc::numeric::{derive_seed, Rng, Tensor3};
use safeocc::occ::Verdict;
use safeocc::{Error, Result};

/// Independent random streams drawn from one run seed.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const LR_SWEEP: u64 = 4;
    pub const TEST_SETS: u64 = 5;
}

pub const DEFAULT_LR_GRID: [f64; 4] = [1e-2, 3e-3, 1e-3, 3e-4];
pub const DEFAULT_GAMMA_MULTIPLIERS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
pub const DEFAULT_MIN_NORMAL_PCT: f64 = 95.0;

pub fn default_episodes(env: EnvKind) -> usize {
    match env {
        EnvKind::Pendulum => 60,
        EnvKind::Cartpole => 120,
    }
}

pub fn default_size(env: EnvKind) -> usize {
    match env {
        EnvKind::Pendulum => 64,
        EnvKind::Cartpole => 128,
    }
}

/// Rolls the simulator and draws the 70:20:10 split.
pub fn generate(env: EnvKind, episodes: usize, size: usize, seed: u64) -> Result<(Dataset, DatasetMeta)> {
    let mut data = generate_dataset(&GenerateSpec::new(env, episodes, size, seed))?;
    to_storage_precision(&mut data);
    let split = Split::random_70_20_10(data.len(), &mut Rng::new(derive_seed(seed, stream::SPLIT)));
    let meta = DatasetMeta {
        env: env.name().to_string(),
        seed,
        size,
        channels: 1,
        label_dim: data.labels[0].len(),
        count: data.len(),
        episode_starts: data.episode_starts.clone(),
        split,
        augmented: vec![],
    };
    Ok((data, meta))
}

/// Rounds pixels to the `f32` values a saved dataset holds, so in-memory
/// runs see exactly the frames the commands read back from disk.
pub fn to_storage_precision(data: &mut Dataset) {
    for img in &mut data.images {
        img.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

/// Number of simulator frames before any augmentation copies.
pub fn base_count(meta: &DatasetMeta) -> usize {
    meta.count / (1 + meta.augmented.len())
}

/// Appends one disturbed copy of every simulator frame per kind. Copies
/// join their source frame's split part.
pub fn augment(data: &Dataset, meta: &DatasetMeta, kinds: &[DisturbanceKind], seed: u64) -> Result<(Dataset, DatasetMeta)> {
    if kinds.is_empty() {
        return Err(Error::InvalidArgument("no disturbance kinds given".into()));
    }
    let n = base_count(meta);
    let base = Dataset {
        images: data.images[..n].to_vec(),
        labels: data.labels[..n].to_vec(),
        episode_starts: data.episode_starts.iter().copied().filter(|s| *s < n).collect(),
    };
    let base_split = Split {
        train: meta.split.train.iter().copied().filter(|i| *i < n).collect(),
        validation: meta.split.validation.iter().copied().filter(|i| *i < n).collect(),
        test: meta.split.test.iter().copied().filter(|i| *i < n).collect(),
    };
    let mut all_kinds: Vec<DisturbanceKind> =
        meta.augmented.iter().map(|k| k.parse()).collect::<Result<_>>()?;
    all_kinds.extend_from_slice(kinds);
    // Rebuilding from the base frames keeps every copy a function of the
    // augmentation seed and its position in the kind list.
    let mut out = augment_dataset(&base, &all_kinds, seed)?;
    to_storage_precision(&mut out);
    let out_meta = DatasetMeta {
        count: out.len(),
        episode_starts: out.episode_starts.clone(),
        split: base_split.with_copies(n, all_kinds.len()),
        augmented: all_kinds.iter().map(|k| k.name().to_string()).collect(),
        ..meta.clone()
    };
    Ok((out, out_meta))
}

pub fn select<'a>(data: &'a Dataset, indices: &[usize]) -> Vec<&'a Tensor3> {
    indices.iter().map(|&i| &data.images[i]).collect()
}

pub fn architecture(name: &str, meta: &DatasetMeta) -> Result<Architecture> {
    let arch = Architecture::by_name(name).ok_or_else(|| Error::InvalidArgument(format!("unknown architecture {name:?}")))?;
    if arch.input_size != meta.size || arch.input_channels != meta.channels || arch.outputs != meta.label_dim {
        return Err(Error::Dimension(format!(
            "architecture {name} takes {0}x{0}x{1} images with {2} outputs; dataset has {3}x{3}x{4} with {5}",
            arch.input_size, arch.input_channels, arch.outputs, meta.size, meta.channels, meta.label_dim
        )));
    }
    Ok(arch)
}

pub struct TrainedSensor {
    pub outcome: TrainOutcome,
    pub learning_rate: f64,
    pub sweep: Option<Vec<(f64, f64)>>,
}

/// Trains on the training part with early stopping on the validation part.
/// With `sweep`, the learning rate is the grid entry with the lowest
/// one-epoch training loss.
pub fn train_sensor(
    data: &Dataset,
    meta: &DatasetMeta,
    arch: &Architecture,
    cfg: &TrainConfig,
    seed: u64,
    sweep: Option<&[f64]>,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedSensor> {
    let model = CnnModel::init(arch, &mut Rng::new(derive_seed(seed, stream::INIT)))?;
    let (learning_rate, sweep_out) = match sweep {
        Some(grid) => {
            let (lr, all) = lr_sweep(
                &model,
                &data.images,
                &data.labels,
                &meta.split.train,
                grid,
                cfg,
                derive_seed(seed, stream::LR_SWEEP),
            )?;
            (lr, Some(all))
        }
        None => (cfg.learning_rate, None),
    };
    let cfg = TrainConfig { learning_rate, ..*cfg };
    let mut rng = Rng::new(derive_seed(seed, stream::SHUFFLE));
    let outcome =
        train(model, &data.images, &data.labels, &meta.split.train, &meta.split.validation, &cfg, &mut rng, on_epoch)?;
    Ok(TrainedSensor { outcome, learning_rate, sweep: sweep_out })
}

pub struct GammaCalibration {
    pub multipliers: Vec<f64>,
    pub min_normal_pct: f64,
}

impl Default for GammaCalibration {
    fn default() -> Self {
        Self { multipliers: DEFAULT_GAMMA_MULTIPLIERS.to_vec(), min_normal_pct: DEFAULT_MIN_NORMAL_PCT }
    }
}

/// Fits on the training part. Calibration, when requested, scores only the
/// validation part, which holds normal images.
pub fn fit(
    model: &CnnModel,
    data: &Dataset,
    meta: &DatasetMeta,
    config: &DetectorConfig,
    calibration: Option<&GammaCalibration>,
) -> Result<(SafeOccDetector, Option<Vec<GammaTrial>>)> {
    let train_imgs = select(data, &meta.split.train);
    match calibration {
        Some(c) => {
            let holdout = select(data, &meta.split.validation);
            let (det, trials) = calibrate_gamma(model, &train_imgs, &holdout, config, &c.multipliers, c.min_normal_pct)?;
            Ok((det, Some(trials)))
        }
        None => Ok((fit_detector(model, &train_imgs, config)?, None)),
    }
}

#[derive(Debug, Clone)]
pub struct TestSet {
    pub name: String,
    /// Verdict a perfect detector returns on every image of the set.
    pub label: Verdict,
    pub images: Vec<Tensor3>,
    pub labels: Vec<Vec<f64>>,
}

pub const ORIGINAL: &str = "original";

/// The test part's simulator frames, plus one disturbed copy per requested
/// kind. Kinds the sensor was trained on count as normal.
pub fn test_sets(data: &Dataset, meta: &DatasetMeta, names: &[String], seed: u64) -> Result<Vec<TestSet>> {
    let n = base_count(meta);
    let idx: Vec<usize> = meta.split.test.iter().copied().filter(|i| *i < n).collect();
    if idx.is_empty() {
        return Err(Error::InsufficientData("test part is empty".into()));
    }
    let images: Vec<Tensor3> = idx.iter().map(|&i| data.images[i].clone()).collect();
    let labels: Vec<Vec<f64>> = idx.iter().map(|&i| data.labels[i].clone()).collect();
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        if name == ORIGINAL {
            out.push(TestSet { name: name.clone(), label: Verdict::Normal, images: images.clone(), labels: labels.clone() });
            continue;
        }
        let kind: DisturbanceKind = name.parse()?;
        let k = DisturbanceKind::ALL.iter().position(|x| *x == kind).expect("kind listed") as u64;
        let disturbed = disturb_images(&images, kind, derive_seed(derive_seed(seed, stream::TEST_SETS), k))?;
        let label = if meta.augmented.iter().any(|a| a == name) { Verdict::Normal } else { Verdict::Novel };
        out.push(TestSet { name: name.clone(), label, images: disturbed, labels: labels.clone() });
    }
    Ok(out)
}

pub fn all_test_set_names() -> Vec<String> {
    std::iter::once(ORIGINAL).chain(DisturbanceKind::ALL.iter().map(|k| k.name())).map(String::from).collect()
}

/// Mean Euclidean distance between predictions and labels.
pub fn mean_l2(model: &CnnModel, images: &[Tensor3], labels: &[Vec<f64>]) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::InsufficientData("no images to score".into()));
    }
    let mut total = 0.0;
    for (img, y) in images.iter().zip(labels) {
        let p = model.predict(img)?;
        total += p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    }
    Ok(total / images.len() as f64)
}
