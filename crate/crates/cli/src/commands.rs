use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use safeocc::augment::DisturbanceKind;
use safeocc::cnn::{CnnModel, TrainConfig};
use safeocc::control::{run_closed_loop, write_loop_csv, ClosedLoop, Feedback, PidGains, Recourse, Scenario};
use safeocc::dataset::Dataset;
use safeocc::detector::{
    evaluate_accuracy, fit_detector, grid_configs, member_verdicts, union, write_accuracy_csv, AccuracyRow,
    DetectorConfig, SafeOccDetector,
};
use safeocc::envs::EnvKind;
use safeocc::io::{
    dataset_hash, file_sha256, load_dataset, load_detector, load_sensor, save_dataset, save_detector, save_sensor,
    write_atomic, DatasetMeta, DetectorInfo, SensorInfo,
};
use safeocc::occ::Verdict;

use crate::error::{CliError, CliResult};
use crate::manifest::{
    artifact_key, DatasetEntry, DetectorEntry, EnvEntry, Manifest, OutputEntry, SensorEntry, SimulationEntry,
    MANIFEST_NAME,
};
use crate::pipeline::{self, GammaCalibration};
use crate::{AugmentArgs, CheckArgs, Cli, Command, EvalArgs, FitDetectorArgs, GenDataArgs, GridArgs, SimulateArgs, TrainSensorArgs};

pub const SEED_ENV: &str = "SAFEOCC_SEED";
pub const DEFAULT_SEED: u64 = 1;
pub const SENSOR_ERROR_CSV: &str = "sensor_error.csv";
pub const DETECTOR_ACCURACY_CSV: &str = "detector_accuracy.csv";
pub const SENSOR_ERROR_HEADER: &str = "sensor,test_set,mean_l2,n_images";
pub const HISTORY_HEADER: &str = "epoch,train_sse,val_sse";
pub const UNION_NAME: &str = "union";

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(cli, a),
        Command::Augment(a) => augment(cli, a),
        Command::TrainSensor(a) => train_sensor(cli, a),
        Command::FitDetector(a) => fit_detector_cmd(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Grid(a) => grid(cli, a),
        Command::Simulate(a) => simulate(cli, a),
        Command::Check(a) => check(a),
    }
}

/// `--seed`, then `SAFEOCC_SEED`, then the manifest, then the default.
pub fn resolve_seed(flag: Option<u64>, manifest: Option<&Manifest>) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Ok(v) = std::env::var(SEED_ENV) {
        return v.trim().parse().map_err(|_| CliError::validation(format!("{SEED_ENV}={v:?} is not an unsigned integer")));
    }
    Ok(manifest.map_or(DEFAULT_SEED, |m| m.seed))
}

fn manifest_path(cli: &Cli, out: &Path) -> PathBuf {
    cli.manifest.clone().unwrap_or_else(|| out.parent().unwrap_or(Path::new("")).join(MANIFEST_NAME))
}

/// Existing manifest (if any) and the seed this command runs with.
fn open(cli: &Cli, out: &Path, seed: Option<u64>) -> CliResult<(PathBuf, Manifest, u64)> {
    let path = manifest_path(cli, out);
    let existing = Manifest::load(&path)?;
    let seed = resolve_seed(seed, existing.as_ref())?;
    let m = existing.unwrap_or_else(|| Manifest::new(seed));
    Ok((path, m, seed))
}

fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(path))
    }
}

fn create_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn report(value: serde_json::Value) {
    println!("{value}");
}

fn parse_kinds(names: &[String]) -> CliResult<Vec<DisturbanceKind>> {
    Ok(names.iter().map(|n| n.trim().parse()).collect::<safeocc::Result<_>>()?)
}

fn load_data(dir: &Path) -> CliResult<(Dataset, DatasetMeta, String)> {
    require(dir)?;
    let (data, meta) = load_dataset(dir)?;
    let hash = dataset_hash(dir)?;
    Ok((data, meta, hash))
}

fn store_dataset(manifest: &mut Manifest, mpath: &Path, dir: &Path, meta: &DatasetMeta) -> CliResult<String> {
    let hash = dataset_hash(dir)?;
    let s = &meta.split;
    manifest.datasets.insert(
        artifact_key(mpath, dir),
        DatasetEntry {
            hash: hash.clone(),
            env: meta.env.clone(),
            count: meta.count,
            split_sizes: [s.train.len(), s.validation.len(), s.test.len()],
            augmented: meta.augmented.clone(),
        },
    );
    Ok(hash)
}

fn gen_data(cli: &Cli, a: &GenDataArgs) -> CliResult<()> {
    let env: EnvKind = a.env.parse()?;
    let (mpath, mut manifest, seed) = open(cli, &a.out, a.seed)?;
    let episodes = a.episodes.unwrap_or_else(|| pipeline::default_episodes(env));
    let size = a.size.unwrap_or_else(|| pipeline::default_size(env));
    let (data, meta) = pipeline::generate(env, episodes, size, seed)?;
    save_dataset(&a.out, &data, &meta)?;
    manifest.envs.insert(env.name().to_string(), EnvEntry { env: env.name().to_string(), size, episodes });
    let hash = store_dataset(&mut manifest, &mpath, &a.out, &meta)?;
    manifest.save(&mpath)?;
    report(json!({ "dataset": a.out, "frames": meta.count, "hash": hash }));
    Ok(())
}

fn augment(cli: &Cli, a: &AugmentArgs) -> CliResult<()> {
    let kinds = parse_kinds(&a.kinds)?;
    let out = a.out.clone().unwrap_or_else(|| a.data.clone());
    let (data, meta, _) = load_data(&a.data)?;
    let (mpath, mut manifest, seed) = open(cli, &out, a.seed)?;
    let (aug, aug_meta) = pipeline::augment(&data, &meta, &kinds, seed)?;
    save_dataset(&out, &aug, &aug_meta)?;
    let hash = store_dataset(&mut manifest, &mpath, &out, &aug_meta)?;
    manifest.save(&mpath)?;
    report(json!({ "dataset": out, "frames": aug_meta.count, "augmented": aug_meta.augmented, "hash": hash }));
    Ok(())
}

/// History CSV path for a sensor model file.
pub fn history_path(model: &Path) -> PathBuf {
    model.with_extension("history.csv")
}

fn train_sensor(cli: &Cli, a: &TrainSensorArgs) -> CliResult<()> {
    let (data, meta, data_hash) = load_data(&a.data)?;
    let (mpath, mut manifest, seed) = open(cli, &a.out, a.seed)?;
    let mut arch_name = a.arch.clone().unwrap_or_else(|| meta.env.clone());
    if a.paper_scale && !arch_name.ends_with("-paper") {
        arch_name.push_str("-paper");
    }
    let arch = pipeline::architecture(&arch_name, &meta)?;
    if !(a.lr > 0.0 && a.lr.is_finite()) {
        return Err(CliError::validation(format!("learning rate must be positive, got {}", a.lr)));
    }
    if a.batch_size == 0 || a.epochs == 0 {
        return Err(CliError::validation("epochs and batch size must be positive"));
    }
    let cfg = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        patience: a.patience,
        ..TrainConfig::default()
    };
    let grid = a.lr_grid.clone().unwrap_or_else(|| pipeline::DEFAULT_LR_GRID.to_vec());
    let sweep = a.lr_sweep.then_some(grid.as_slice());
    let quiet = a.quiet;
    let trained = pipeline::train_sensor(&data, &meta, &arch, &cfg, seed, sweep, |r| {
        if !quiet {
            eprintln!("epoch {} train_sse {:.6} val_sse {:.6}", r.epoch, r.train_sse, r.val_sse);
        }
    })?;
    let outcome = &trained.outcome;
    let info = SensorInfo {
        seed,
        dataset_hash: data_hash.clone(),
        learning_rate: trained.learning_rate,
        epochs_run: outcome.history.len(),
        best_epoch: outcome.best_epoch,
    };
    create_parent(&a.out)?;
    save_sensor(&a.out, &outcome.model, &info)?;
    let hist_path = history_path(&a.out);
    let mut csv = format!("{HISTORY_HEADER}\n");
    for r in &outcome.history {
        writeln!(csv, "{},{},{}", r.epoch, r.train_sse, r.val_sse).expect("string write");
    }
    write_atomic(&hist_path, csv.as_bytes())?;

    let hash = file_sha256(&a.out)?;
    manifest.sensors.insert(
        artifact_key(&mpath, &a.out),
        SensorEntry {
            hash: hash.clone(),
            dataset: data_hash,
            arch: arch_name,
            trained_on: meta.augmented.clone(),
            learning_rate: trained.learning_rate,
            best_epoch: outcome.best_epoch,
            history: artifact_key(&mpath, &hist_path),
        },
    );
    manifest.save(&mpath)?;
    report(json!({
        "sensor": a.out,
        "learning_rate": trained.learning_rate,
        "lr_sweep": trained.sweep,
        "best_epoch": outcome.best_epoch,
        "epochs_run": outcome.history.len(),
        "hash": hash,
    }));
    Ok(())
}

/// Loads a sensor and its file hash.
fn open_sensor(path: &Path) -> CliResult<(CnnModel, SensorInfo, String)> {
    require(path)?;
    let (model, info) = load_sensor(path)?;
    let hash = file_sha256(path)?;
    Ok((model, info, hash))
}

/// Loads a detector and refuses it unless it was fitted on this sensor file
/// and on the sensor's training data.
fn open_detector(path: &Path, sensor: &SensorInfo, sensor_hash: &str) -> CliResult<SafeOccDetector> {
    require(path)?;
    let (det, info) = load_detector(path)?;
    if info.sensor_hash != sensor_hash {
        return Err(CliError::validation(format!("{} was fitted on a different sensor", path.display())));
    }
    if info.dataset_hash != sensor.dataset_hash {
        return Err(CliError::validation(format!(
            "{} and the sensor were trained on different datasets",
            path.display()
        )));
    }
    Ok(det)
}

fn fit_detector_cmd(cli: &Cli, a: &FitDetectorArgs) -> CliResult<()> {
    let (model, sensor_info, sensor_hash) = open_sensor(&a.sensor)?;
    let (data, meta, data_hash) = load_data(&a.data)?;
    if data_hash != sensor_info.dataset_hash {
        return Err(CliError::validation(format!(
            "{} is not the dataset {} was trained on",
            a.data.display(),
            a.sensor.display()
        )));
    }
    let mut config = match (&a.config, &a.preset) {
        (Some(p), _) => {
            require(p)?;
            serde_json::from_slice::<DetectorConfig>(&std::fs::read(p)?)?
        }
        (None, Some(name)) => DetectorConfig::preset(name, model.depth())?,
        (None, None) => return Err(CliError::validation("either --config or --preset is required")),
    };
    if let Some(g) = a.gamma {
        config.gamma = Some(g);
    }
    if let Some(nu) = a.nu {
        config.nu = nu;
    }
    let calibration = a.calibrate_gamma.then(|| GammaCalibration {
        multipliers: a.gamma_multipliers.clone().unwrap_or_else(|| pipeline::DEFAULT_GAMMA_MULTIPLIERS.to_vec()),
        min_normal_pct: a.min_normal_pct,
    });
    let (mpath, mut manifest, _) = open(cli, &a.out, None)?;
    let (det, trials) = pipeline::fit(&model, &data, &meta, &config, calibration.as_ref())?;
    let info = DetectorInfo { sensor_hash: sensor_hash.clone(), dataset_hash: data_hash.clone() };
    create_parent(&a.out)?;
    save_detector(&a.out, &det, &info)?;
    let hash = file_sha256(&a.out)?;
    manifest.detectors.insert(
        artifact_key(&mpath, &a.out),
        DetectorEntry {
            hash: hash.clone(),
            sensor: sensor_hash,
            dataset: data_hash,
            config: det.config.clone(),
            gamma_trials: trials.clone(),
        },
    );
    manifest.save(&mpath)?;
    report(json!({
        "detector": a.out,
        "config": det.config.name,
        "gamma": det.ocsvm.gamma,
        "support_vectors": det.ocsvm.alphas.len(),
        "gamma_trials": trials,
        "hash": hash,
    }));
    Ok(())
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    create_parent(path)?;
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn accuracy_csv(rows: &[AccuracyRow]) -> CliResult<String> {
    let mut buf = Vec::new();
    write_accuracy_csv(&mut buf, rows)?;
    Ok(String::from_utf8(buf).expect("ascii csv"))
}

/// Accuracy rows for every detector on every set, plus union rows when
/// there are at least two detectors.
pub fn accuracy_rows(
    sensor_name: &str,
    model: &CnnModel,
    detectors: &[SafeOccDetector],
    sets: &[pipeline::TestSet],
) -> CliResult<Vec<AccuracyRow>> {
    let mut rows = Vec::new();
    for set in sets {
        let imgs: Vec<_> = set.images.iter().collect();
        let per_image = member_verdicts(detectors, model, &imgs)?;
        for (j, det) in detectors.iter().enumerate() {
            let v: Vec<Verdict> = per_image.iter().map(|r| r[j]).collect();
            rows.push(evaluate_accuracy(sensor_name, &det.config.name, &set.name, set.label, &v)?);
        }
        if detectors.len() > 1 {
            let v: Vec<Verdict> = per_image.iter().map(|r| union(r.iter().copied())).collect();
            rows.push(evaluate_accuracy(sensor_name, UNION_NAME, &set.name, set.label, &v)?);
        }
    }
    Ok(rows)
}

fn eval(cli: &Cli, a: &EvalArgs) -> CliResult<()> {
    let (model, sensor_info, sensor_hash) = open_sensor(&a.sensor)?;
    let detectors =
        a.detectors.iter().map(|p| open_detector(p, &sensor_info, &sensor_hash)).collect::<CliResult<Vec<_>>>()?;
    let (data, meta, data_hash) = load_data(&a.data)?;
    let names = a.test_sets.clone().unwrap_or_else(pipeline::all_test_set_names);
    let error_path = a.out.join(SENSOR_ERROR_CSV);
    let (mpath, mut manifest, seed) = open(cli, &a.out, a.seed)?;
    let sets = pipeline::test_sets(&data, &meta, &names, seed)?;
    let sensor_name = file_stem(&a.sensor);

    let mut errors = format!("{SENSOR_ERROR_HEADER}\n");
    let mut summary = serde_json::Map::new();
    for set in &sets {
        let e = pipeline::mean_l2(&model, &set.images, &set.labels)?;
        writeln!(errors, "{sensor_name},{},{e},{}", set.name, set.images.len()).expect("string write");
        summary.insert(set.name.clone(), json!(e));
    }
    write_text(&error_path, &errors)?;
    let mut outputs = vec![artifact_key(&mpath, &error_path)];
    if !detectors.is_empty() {
        let rows = accuracy_rows(&sensor_name, &model, &detectors, &sets)?;
        let acc_path = a.out.join(DETECTOR_ACCURACY_CSV);
        write_text(&acc_path, &accuracy_csv(&rows)?)?;
        outputs.push(artifact_key(&mpath, &acc_path));
    }
    let mut inputs = vec![artifact_key(&mpath, &a.sensor), artifact_key(&mpath, &a.data)];
    inputs.extend(a.detectors.iter().map(|p| artifact_key(&mpath, p)));
    manifest.evaluations.insert(artifact_key(&mpath, &a.out), OutputEntry { inputs, outputs });
    manifest.save(&mpath)?;
    report(json!({ "eval": a.out, "dataset": data_hash, "mean_l2": summary }));
    Ok(())
}

fn grid(cli: &Cli, a: &GridArgs) -> CliResult<()> {
    let (model, sensor_info, _) = open_sensor(&a.sensor)?;
    let (data, meta, data_hash) = load_data(&a.data)?;
    if data_hash != sensor_info.dataset_hash {
        return Err(CliError::validation(format!(
            "{} is not the dataset {} was trained on",
            a.data.display(),
            a.sensor.display()
        )));
    }
    let (mpath, mut manifest, seed) = open(cli, &a.out, a.seed)?;
    let names = a.test_sets.clone().unwrap_or_else(pipeline::all_test_set_names);
    let sets = pipeline::test_sets(&data, &meta, &names, seed)?;
    let train = pipeline::select(&data, &meta.split.train);
    let detectors = grid_configs(model.depth())
        .iter()
        .map(|c| fit_detector(&model, &train, c))
        .collect::<safeocc::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let sensor_name = file_stem(&a.sensor);
    for set in &sets {
        let imgs: Vec<_> = set.images.iter().collect();
        let per_image = member_verdicts(&detectors, &model, &imgs)?;
        for (j, det) in detectors.iter().enumerate() {
            let v: Vec<Verdict> = per_image.iter().map(|r| r[j]).collect();
            rows.push(evaluate_accuracy(&sensor_name, &det.config.name, &set.name, set.label, &v)?);
        }
    }
    // Group by configuration so each block reads like one table row.
    let order: Vec<&str> = detectors.iter().map(|d| d.config.name.as_str()).collect();
    rows.sort_by_key(|r| order.iter().position(|n| *n == r.config));
    write_text(&a.out, &accuracy_csv(&rows)?)?;
    let inputs = vec![artifact_key(&mpath, &a.sensor), artifact_key(&mpath, &a.data)];
    let key = artifact_key(&mpath, &a.out);
    manifest.grids.insert(key.clone(), OutputEntry { inputs, outputs: vec![key] });
    manifest.save(&mpath)?;
    report(json!({ "grid": a.out, "configs": detectors.len(), "rows": rows.len() }));
    Ok(())
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> CliResult<()> {
    let env: EnvKind = a.env.parse()?;
    if env != EnvKind::Cartpole {
        return Err(CliError::validation("closed-loop runs are available for the cart-pole only"));
    }
    let (model, sensor_info, sensor_hash) = open_sensor(&a.sensor)?;
    let detector = a.detector.as_deref().map(|p| open_detector(p, &sensor_info, &sensor_hash)).transpose()?;
    let recourse: Recourse = a.recourse.parse()?;
    let (mpath, mut manifest, seed) = open(cli, &a.out, a.seed)?;
    let mut scenario = match a.scenario.as_str() {
        "clean" => Scenario::clean(a.horizon, seed),
        kind => Scenario::disturbed(kind.parse()?, a.onset, a.horizon, seed),
    };
    if a.true_state {
        scenario.feedback = Feedback::TrueState;
    }
    let gains = manifest.controller.unwrap_or_else(PidGains::cartpole_default);
    let lp = ClosedLoop {
        sensor: &model,
        detector: detector.as_ref(),
        gains,
        safety: (!a.no_safety).then_some((a.m, recourse)),
        render: env.default_render(model.architecture().input_size),
    };
    let outcome = run_closed_loop(&lp, &scenario)?;
    let mut buf = Vec::new();
    write_loop_csv(&mut buf, &outcome.records)?;
    create_parent(&a.out)?;
    write_atomic(&a.out, &buf)?;
    manifest.controller = Some(gains);
    manifest.simulations.insert(
        artifact_key(&mpath, &a.out),
        SimulationEntry {
            sensor: artifact_key(&mpath, &a.sensor),
            detector: a.detector.as_deref().map(|p| artifact_key(&mpath, p)),
            scenario,
            steps: outcome.records.len(),
            terminated: outcome.terminated,
            alarm_step: outcome.alarm_step,
        },
    );
    manifest.save(&mpath)?;
    report(json!({
        "simulation": a.out,
        "steps": outcome.records.len(),
        "terminated": outcome.terminated,
        "alarm_step": outcome.alarm_step,
        "max_abs_angle_deg": outcome.max_abs_angle(),
    }));
    Ok(())
}

fn check(a: &CheckArgs) -> CliResult<()> {
    let m = Manifest::load(&a.path)?.ok_or_else(|| CliError::missing(&a.path))?;
    m.validate(a.path.parent().unwrap_or(Path::new("")))?;
    report(json!({ "manifest": a.path, "files": m.referenced_files(Path::new("")).len() }));
    Ok(())
}
