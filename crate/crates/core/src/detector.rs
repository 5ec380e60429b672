//! Novelty detectors built on a trained sensor's feature maps: a tap point,
//! a per-filter scalarizer, a refiner, optional PCA and a one-class SVM.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cnn::{BlockTaps, CnnModel};
use crate::error::{arg_err, dim_err, Error, Result};
use crate::numeric::Tensor3;
use crate::occ::{fit_ocsvm, OcSvmModel, Verdict};
use crate::reduction::{
    fit_pca, fit_refiner, scalarize, PcaDims, PcaModel, RefinerKind, RefinerModel, ScalarizerKind, TwoDPcaAccumulator,
    TwoDPcaModel,
};

/// Which signal of a convolutional block to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    /// Convolution output before the activation.
    Psi,
    Activation,
    Pooled,
}

impl Signal {
    pub fn symbol(self) -> &'static str {
        match self {
            Self::Psi => "Psi",
            Self::Activation => "A",
            Self::Pooled => "P",
        }
    }
}

/// A block (1-based) and signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TapPoint {
    pub block: usize,
    pub signal: Signal,
}

impl TapPoint {
    pub fn new(block: usize, signal: Signal) -> Self {
        Self { block, signal }
    }

    pub fn select<'a>(&self, taps: &'a [BlockTaps]) -> Result<&'a Tensor3> {
        let t = self
            .block
            .checked_sub(1)
            .and_then(|i| taps.get(i))
            .ok_or_else(|| arg_err!("tap block {} outside 1..={}", self.block, taps.len()))?;
        Ok(match self.signal {
            Signal::Psi => &t.psi,
            Signal::Activation => &t.activation,
            Signal::Pooled => &t.pooled,
        })
    }
}

impl fmt::Display for TapPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.signal.symbol(), self.block)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaSetting {
    Off,
    Dims(usize),
    Variance(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub name: String,
    pub tap: TapPoint,
    pub scalarizer: ScalarizerKind,
    pub refiner: RefinerKind,
    pub pca: PcaSetting,
    pub nu: f64,
    /// Kernel width; `None` uses one over the final feature dimension.
    pub gamma: Option<f64>,
    /// Threshold shift: novel iff `ĥ < ρ − ε`.
    pub epsilon: f64,
}

impl DetectorConfig {
    pub const DEFAULT_NU: f64 = 0.0001;

    pub fn new(name: &str, tap: TapPoint, scalarizer: ScalarizerKind, refiner: RefinerKind) -> Self {
        Self {
            name: name.to_string(),
            tap,
            scalarizer,
            refiner,
            pca: PcaSetting::Off,
            nu: Self::DEFAULT_NU,
            gamma: None,
            epsilon: 0.0,
        }
    }

    /// Max of each first-block pooled map, standardized.
    pub fn config1() -> Self {
        Self::new("config1", TapPoint::new(1, Signal::Pooled), ScalarizerKind::Max, RefinerKind::Standard)
    }

    /// Rank-one 2D²PCA of each final-block pooled map, standardized.
    pub fn config2(depth: usize) -> Self {
        Self::new("config2", TapPoint::new(depth, Signal::Pooled), ScalarizerKind::TwodPca, RefinerKind::Standard)
    }

    pub fn cartpole(depth: usize) -> Self {
        Self { name: "cartpole".into(), ..Self::config2(depth) }
    }

    pub fn preset(name: &str, depth: usize) -> Result<Self> {
        match name {
            "config1" => Ok(Self::config1()),
            "config2" => Ok(Self::config2(depth)),
            "cartpole" => Ok(Self::cartpole(depth)),
            _ => Err(arg_err!("unknown detector preset {name:?}")),
        }
    }

    pub fn validate_for(&self, model: &CnnModel) -> Result<()> {
        if self.tap.block == 0 || self.tap.block > model.depth() {
            return Err(arg_err!("tap {} is outside the sensor's {} blocks", self.tap, model.depth()));
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(arg_err!("nu must lie in (0, 1], got {}", self.nu));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(arg_err!("gamma must be positive, got {g}"));
            }
        }
        if !self.epsilon.is_finite() {
            return Err(arg_err!("epsilon must be finite"));
        }
        Ok(())
    }
}

/// The 36 combinations of signal, first or last block, scalarizer and refiner.
pub fn grid_configs(depth: usize) -> Vec<DetectorConfig> {
    let mut out = Vec::with_capacity(36);
    for signal in [Signal::Psi, Signal::Activation, Signal::Pooled] {
        for block in [1, depth] {
            for scalarizer in [ScalarizerKind::Max, ScalarizerKind::TwodPca] {
                for refiner in [RefinerKind::None, RefinerKind::Scale, RefinerKind::Standard] {
                    let tap = TapPoint::new(block, signal);
                    let name = format!("{tap}-{}-{}", scalarizer.name(), refiner.name());
                    out.push(DetectorConfig::new(&name, tap, scalarizer, refiner));
                }
            }
        }
    }
    out
}

pub fn extract_features(model: &CnnModel, image: &Tensor3, tap: TapPoint) -> Result<Tensor3> {
    let taps = model.forward_blocks(image, tap.block)?;
    tap.select(&taps).cloned()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoveltySignal {
    pub verdict: Verdict,
    /// `(ρ − ε) − ĥ`; positive exactly when novel.
    pub score: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeOccDetector {
    pub config: DetectorConfig,
    pub twod_pca: Option<TwoDPcaModel>,
    pub refiner: RefinerModel,
    pub pca: Option<PcaModel>,
    pub ocsvm: OcSvmModel,
}

/// Stages ahead of the one-class SVM, plus the training features they produce.
struct FeatureStages {
    twod_pca: Option<TwoDPcaModel>,
    refiner: RefinerModel,
    pca: Option<PcaModel>,
    features: Vec<Vec<f64>>,
}

fn fit_feature_stages(model: &CnnModel, images: &[&Tensor3], config: &DetectorConfig) -> Result<FeatureStages> {
    config.validate_for(model)?;
    if images.len() < 2 {
        return Err(Error::InsufficientData(format!("detector needs at least 2 training images, got {}", images.len())));
    }
    let tap = config.tap;
    let twod_pca = if config.scalarizer == ScalarizerKind::TwodPca {
        let mut acc = TwoDPcaAccumulator::new();
        for img in images {
            acc.push(&extract_features(model, img, tap)?)?;
        }
        Some(acc.finish(1, 1)?)
    } else {
        None
    };
    let raw: Vec<Vec<f64>> = images
        .iter()
        .map(|img| scalarize(&extract_features(model, img, tap)?, config.scalarizer, twod_pca.as_ref()))
        .collect::<Result<_>>()?;
    let refiner = fit_refiner(&raw, config.refiner)?;
    let refined: Vec<Vec<f64>> = raw.iter().map(|v| refiner.refine(v)).collect::<Result<_>>()?;
    let pca = match config.pca {
        PcaSetting::Off => None,
        PcaSetting::Dims(d) => Some(fit_pca(&refined, PcaDims::Count(d))?),
        PcaSetting::Variance(t) => Some(fit_pca(&refined, PcaDims::VarianceThreshold(t))?),
    };
    let features: Vec<Vec<f64>> = match &pca {
        Some(p) => refined.iter().map(|v| p.apply(v)).collect::<Result<_>>()?,
        None => refined,
    };
    Ok(FeatureStages { twod_pca, refiner, pca, features })
}

impl FeatureStages {
    fn default_gamma(&self) -> f64 {
        1.0 / self.features[0].len().max(1) as f64
    }

    fn finish(&self, config: &DetectorConfig, gamma: f64) -> Result<SafeOccDetector> {
        let ocsvm = fit_ocsvm(&self.features, config.nu, gamma)?;
        Ok(SafeOccDetector {
            config: DetectorConfig { gamma: Some(gamma), ..config.clone() },
            twod_pca: self.twod_pca.clone(),
            refiner: self.refiner.clone(),
            pca: self.pca.clone(),
            ocsvm,
        })
    }
}

/// Fits every stage in order on the sensor's training images.
pub fn fit_detector(model: &CnnModel, images: &[&Tensor3], config: &DetectorConfig) -> Result<SafeOccDetector> {
    let stages = fit_feature_stages(model, images, config)?;
    let gamma = config.gamma.unwrap_or_else(|| stages.default_gamma());
    stages.finish(config, gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaTrial {
    pub multiplier: f64,
    pub gamma: f64,
    /// Percent of held-out normal images classified normal.
    pub holdout_normal_pct: f64,
}

/// Widens the kernel's sensitivity using normal images only: tries
/// `gamma = multiplier / dim` for each multiplier in ascending order and keeps
/// the largest one whose held-out normal accuracy is at least `min_normal_pct`.
/// Falls back to the smallest multiplier when none qualifies.
pub fn calibrate_gamma(
    model: &CnnModel,
    train: &[&Tensor3],
    holdout: &[&Tensor3],
    config: &DetectorConfig,
    multipliers: &[f64],
    min_normal_pct: f64,
) -> Result<(SafeOccDetector, Vec<GammaTrial>)> {
    if holdout.is_empty() {
        return Err(Error::InsufficientData("gamma calibration needs held-out normal images".into()));
    }
    let mut mults = multipliers.to_vec();
    if mults.is_empty() || mults.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(arg_err!("gamma multipliers must be positive and nonempty"));
    }
    mults.sort_by(f64::total_cmp);
    let stages = fit_feature_stages(model, train, config)?;
    // Held-out features do not depend on gamma; compute them once.
    let probe = stages.finish(config, stages.default_gamma())?;
    let holdout_features: Vec<Vec<f64>> = holdout
        .iter()
        .map(|img| probe.features_from_taps(&model.forward_blocks(img, config.tap.block)?))
        .collect::<Result<_>>()?;
    let mut trials = Vec::with_capacity(mults.len());
    let mut chosen: Option<SafeOccDetector> = None;
    for &m in &mults {
        let gamma = m * stages.default_gamma();
        let det = stages.finish(config, gamma)?;
        let mut normal = 0usize;
        for v in &holdout_features {
            if det.ocsvm.classify(v, config.epsilon)?.0 == Verdict::Normal {
                normal += 1;
            }
        }
        let pct = 100.0 * normal as f64 / holdout_features.len() as f64;
        trials.push(GammaTrial { multiplier: m, gamma, holdout_normal_pct: pct });
        if pct >= min_normal_pct || chosen.is_none() {
            chosen = Some(det);
        }
    }
    Ok((chosen.expect("at least one multiplier"), trials))
}

impl SafeOccDetector {
    /// Final feature vector handed to the one-class SVM.
    pub fn features_from_taps(&self, taps: &[BlockTaps]) -> Result<Vec<f64>> {
        let p = self.config.tap.select(taps)?;
        let v = scalarize(p, self.config.scalarizer, self.twod_pca.as_ref())?;
        let v = self.refiner.refine(&v)?;
        match &self.pca {
            Some(pca) => pca.apply(&v),
            None => Ok(v),
        }
    }

    pub fn signal_from_taps(&self, taps: &[BlockTaps]) -> Result<NoveltySignal> {
        let v = self.features_from_taps(taps)?;
        let h = self.ocsvm.decision(&v)?;
        let (verdict, score) = self.ocsvm.classify(&v, self.config.epsilon)?;
        Ok(NoveltySignal { verdict, score, h })
    }

    pub fn novelty_signal(&self, model: &CnnModel, image: &Tensor3) -> Result<NoveltySignal> {
        let taps = model.forward_blocks(image, self.config.tap.block)?;
        self.signal_from_taps(&taps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.config.scalarizer == ScalarizerKind::TwodPca && self.twod_pca.is_none() {
            return Err(arg_err!("detector {} lacks its 2D²PCA model", self.config.name));
        }
        if let Some(t) = &self.twod_pca {
            t.validate()?;
        }
        self.ocsvm.validate()?;
        let d = self.pca.as_ref().map_or(self.refiner.dim(), |p| p.output_dim());
        if d != self.ocsvm.dim() {
            return Err(dim_err!("stage dimensions disagree: {d} vs {}", self.ocsvm.dim()));
        }
        Ok(())
    }
}

/// Members vote by union: any novel member makes the image novel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelDetector {
    pub detectors: Vec<SafeOccDetector>,
}

impl ParallelDetector {
    pub fn new(detectors: Vec<SafeOccDetector>) -> Result<Self> {
        if detectors.is_empty() {
            return Err(arg_err!("parallel detector needs at least one member"));
        }
        Ok(Self { detectors })
    }

    fn depth(&self) -> usize {
        self.detectors.iter().map(|d| d.config.tap.block).max().unwrap_or(0)
    }

    /// Union verdict with every member's signal in member order.
    pub fn verdict(&self, model: &CnnModel, image: &Tensor3) -> Result<(Verdict, Vec<NoveltySignal>)> {
        let taps = model.forward_blocks(image, self.depth())?;
        let signals: Vec<NoveltySignal> = self.detectors.iter().map(|d| d.signal_from_taps(&taps)).collect::<Result<_>>()?;
        Ok((union(signals.iter().map(|s| s.verdict)), signals))
    }
}

pub fn union(verdicts: impl IntoIterator<Item = Verdict>) -> Verdict {
    if verdicts.into_iter().any(|v| v == Verdict::Novel) {
        Verdict::Novel
    } else {
        Verdict::Normal
    }
}

pub fn parallel_verdict(pd: &ParallelDetector, model: &CnnModel, image: &Tensor3) -> Result<(Verdict, Vec<NoveltySignal>)> {
    pd.verdict(model, image)
}

/// Per-member verdicts for a list of images, `[image][member]`, computing
/// each forward pass once.
pub fn member_verdicts(detectors: &[SafeOccDetector], model: &CnnModel, images: &[&Tensor3]) -> Result<Vec<Vec<Verdict>>> {
    let depth = detectors.iter().map(|d| d.config.tap.block).max().unwrap_or(0);
    images
        .iter()
        .map(|img| {
            let taps = model.forward_blocks(img, depth)?;
            detectors.iter().map(|d| Ok(d.signal_from_taps(&taps)?.verdict)).collect()
        })
        .collect()
}

/// Ground truth for an evaluation set relative to the sensor's training data.
pub type SetLabel = Verdict;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub sensor: String,
    pub config: String,
    pub test_set: String,
    pub label: SetLabel,
    pub accuracy_pct: f64,
    pub n_images: usize,
}

pub const ACCURACY_HEADER: &str = "sensor,config,test_set,label,accuracy_pct,n_images";

/// Percentage of verdicts equal to `label`.
pub fn accuracy(verdicts: &[Verdict], label: SetLabel) -> Result<f64> {
    if verdicts.is_empty() {
        return Err(Error::InsufficientData("accuracy of an empty set".into()));
    }
    Ok(100.0 * verdicts.iter().filter(|v| **v == label).count() as f64 / verdicts.len() as f64)
}

pub fn evaluate_accuracy(
    sensor: &str,
    config: &str,
    test_set: &str,
    label: SetLabel,
    verdicts: &[Verdict],
) -> Result<AccuracyRow> {
    Ok(AccuracyRow {
        sensor: sensor.into(),
        config: config.into(),
        test_set: test_set.into(),
        label,
        accuracy_pct: accuracy(verdicts, label)?,
        n_images: verdicts.len(),
    })
}

pub fn write_accuracy_csv(mut w: impl Write, rows: &[AccuracyRow]) -> Result<()> {
    writeln!(w, "{ACCURACY_HEADER}")?;
    for r in rows {
        let label = match r.label {
            Verdict::Normal => "normal",
            Verdict::Novel => "novel",
        };
        writeln!(w, "{},{},{},{},{:.2},{}", r.sensor, r.config, r.test_set, label, r.accuracy_pct, r.n_images)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::{activate, convolve, pool, Activation, Architecture, PoolKind};
    use crate::numeric::Rng;

    fn small_model() -> CnnModel {
        let arch = Architecture {
            input_size: 16,
            input_channels: 1,
            blocks: (0..2).map(|i| crate::cnn::ConvBlockSpec::relu_max(3 + i)).collect(),
            hidden: vec![4],
            outputs: 2,
        };
        CnnModel::init(&arch, &mut Rng::new(1)).unwrap()
    }

    fn images(seed: u64, n: usize) -> Vec<Tensor3> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| Tensor3::new(16, 16, 1, (0..256).map(|_| 0.4 + 0.2 * rng.uniform()).collect()).unwrap()).collect()
    }

    #[test]
    fn taps_match_direct_computation() {
        let m = small_model();
        let img = &images(2, 1)[0];
        let psi = extract_features(&m, img, TapPoint::new(1, Signal::Psi)).unwrap();
        assert_eq!(psi, convolve(img, &m.blocks[0].op).unwrap());
        let p = extract_features(&m, img, TapPoint::new(1, Signal::Pooled)).unwrap();
        assert_eq!(p, pool(&activate(&psi, Activation::Relu), PoolKind::Max, 2).unwrap());
        assert_eq!(extract_features(&m, img, TapPoint::new(2, Signal::Pooled)).unwrap().shape(), (4, 4, 4));
        assert!(extract_features(&m, img, TapPoint::new(3, Signal::Pooled)).is_err());
        assert!(extract_features(&m, img, TapPoint::new(0, Signal::Pooled)).is_err());
    }

    #[test]
    fn constant_training_set_is_all_normal() {
        let m = small_model();
        let img = Tensor3::filled(16, 16, 1, 0.5);
        let train = vec![&img; 5];
        for cfg in [DetectorConfig::config1(), DetectorConfig::config2(2)] {
            let det = fit_detector(&m, &train, &cfg).unwrap();
            det.validate().unwrap();
            assert_eq!(det.novelty_signal(&m, &img).unwrap().verdict, Verdict::Normal);
        }
    }

    #[test]
    fn signal_equals_stage_composition() {
        let m = small_model();
        let imgs = images(3, 30);
        let refs: Vec<&Tensor3> = imgs.iter().collect();
        let mut cfg = DetectorConfig::config2(2);
        cfg.pca = PcaSetting::Dims(3);
        cfg.nu = 0.2;
        let det = fit_detector(&m, &refs, &cfg).unwrap();
        let probe = &images(4, 1)[0];
        let p = extract_features(&m, probe, cfg.tap).unwrap();
        let v = scalarize(&p, ScalarizerKind::TwodPca, det.twod_pca.as_ref()).unwrap();
        let v = det.refiner.refine(&v).unwrap();
        let v = det.pca.as_ref().unwrap().apply(&v).unwrap();
        let h = det.ocsvm.decision(&v).unwrap();
        let s = det.novelty_signal(&m, probe).unwrap();
        assert_eq!(s.h, h);
        assert_eq!(s.score, det.ocsvm.rho - h);
        assert_eq!(s.verdict == Verdict::Novel, s.score > 0.0);
    }

    #[test]
    fn fitting_is_deterministic() {
        let m = small_model();
        let imgs = images(5, 12);
        let refs: Vec<&Tensor3> = imgs.iter().collect();
        let a = fit_detector(&m, &refs, &DetectorConfig::config1()).unwrap();
        let b = fit_detector(&m, &refs, &DetectorConfig::config1()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn calibrated_gamma_respects_the_holdout_budget() {
        let m = small_model();
        let train = images(6, 40);
        let holdout = images(7, 20);
        let tr: Vec<&Tensor3> = train.iter().collect();
        let ho: Vec<&Tensor3> = holdout.iter().collect();
        let cfg = DetectorConfig::config1();
        let (det, trials) = calibrate_gamma(&m, &tr, &ho, &cfg, &[4.0, 1.0, 2.0], 90.0).unwrap();
        let mults: Vec<f64> = trials.iter().map(|t| t.multiplier).collect();
        assert_eq!(mults, vec![1.0, 2.0, 4.0]);
        let gamma = det.config.gamma.unwrap();
        let chosen = trials.iter().find(|t| t.gamma == gamma).unwrap();
        let qualifying: Vec<&GammaTrial> = trials.iter().filter(|t| t.holdout_normal_pct >= 90.0).collect();
        match qualifying.last() {
            Some(best) => assert_eq!(chosen.multiplier, best.multiplier),
            None => assert_eq!(chosen.multiplier, 1.0),
        }
        // Same detector as a direct fit at the chosen width.
        let direct = fit_detector(&m, &tr, &DetectorConfig { gamma: Some(gamma), ..cfg.clone() }).unwrap();
        assert_eq!(direct, det);
        // Reported accuracy matches the detector's verdicts.
        let v: Vec<Verdict> = ho.iter().map(|i| det.novelty_signal(&m, i).unwrap().verdict).collect();
        assert_eq!(accuracy(&v, Verdict::Normal).unwrap(), chosen.holdout_normal_pct);
        assert!(calibrate_gamma(&m, &tr, &[], &cfg, &[1.0], 90.0).is_err());
        assert!(calibrate_gamma(&m, &tr, &ho, &cfg, &[], 90.0).is_err());
    }

    #[test]
    fn union_semantics_and_monotonicity() {
        use Verdict::*;
        assert_eq!(union([Normal, Normal]), Normal);
        assert_eq!(union([Normal, Novel]), Novel);
        let m = small_model();
        let imgs = images(6, 20);
        let refs: Vec<&Tensor3> = imgs.iter().collect();
        let mut c1 = DetectorConfig::config1();
        c1.nu = 0.3;
        let mut c2 = DetectorConfig::config2(2);
        c2.nu = 0.3;
        let d1 = fit_detector(&m, &refs, &c1).unwrap();
        let d2 = fit_detector(&m, &refs, &c2).unwrap();
        let probes = images(7, 15);
        let probe_refs: Vec<&Tensor3> = probes.iter().collect();
        let v = member_verdicts(&[d1.clone(), d2.clone()], &m, &probe_refs).unwrap();
        let pd = ParallelDetector::new(vec![d1, d2]).unwrap();
        let both: Vec<Verdict> = probes.iter().map(|p| pd.verdict(&m, p).unwrap().0).collect();
        for (row, u) in v.iter().zip(&both) {
            assert_eq!(union(row.iter().copied()), *u);
        }
        for member in 0..2 {
            let single: Vec<Verdict> = v.iter().map(|r| r[member]).collect();
            assert!(accuracy(&both, Novel).unwrap() >= accuracy(&single, Novel).unwrap());
            assert!(accuracy(&both, Normal).unwrap() <= accuracy(&single, Normal).unwrap());
        }
        assert!(ParallelDetector::new(vec![]).is_err());
    }

    #[test]
    fn raising_epsilon_never_lowers_normal_accuracy() {
        let m = small_model();
        let imgs = images(8, 20);
        let refs: Vec<&Tensor3> = imgs.iter().collect();
        let mut cfg = DetectorConfig::config1();
        cfg.nu = 0.3;
        let mut det = fit_detector(&m, &refs, &cfg).unwrap();
        let probes = images(9, 20);
        let mut last = -1.0;
        for eps in [-0.1, 0.0, 0.05, 0.2] {
            det.config.epsilon = eps;
            let v: Vec<Verdict> = probes.iter().map(|p| det.novelty_signal(&m, p).unwrap().verdict).collect();
            let acc = accuracy(&v, Verdict::Normal).unwrap();
            assert!(acc >= last);
            last = acc;
        }
    }

    #[test]
    fn grid_has_thirty_six_distinct_rows() {
        let g = grid_configs(4);
        assert_eq!(g.len(), 36);
        let names: std::collections::BTreeSet<_> = g.iter().map(|c| c.name.clone()).collect();
        assert_eq!(names.len(), 36);
        assert!(names.contains("P4-twod_pca-standard"));
        assert!(names.contains("Psi1-max-none"));
    }

    #[test]
    fn csv_header_and_rows() {
        let row = evaluate_accuracy("A", "config1", "fog", Verdict::Novel, &[Verdict::Novel, Verdict::Normal]).unwrap();
        let mut buf = Vec::new();
        write_accuracy_csv(&mut buf, &[row]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "sensor,config,test_set,label,accuracy_pct,n_images\nA,config1,fog,novel,50.00,2\n");
        assert!(accuracy(&[], Verdict::Normal).is_err());
    }

    #[test]
    fn presets_and_validation() {
        let m = small_model();
        assert!(DetectorConfig::preset("config2", 2).unwrap().validate_for(&m).is_ok());
        assert!(DetectorConfig::config2(5).validate_for(&m).is_err());
        assert!(DetectorConfig::preset("other", 2).is_err());
        let json = serde_json::to_string(&DetectorConfig::config1()).unwrap();
        let back: DetectorConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, DetectorConfig::config1());
    }
}
