//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed. Built without the libtest harness so the
//! lines show up under a plain `cargo test`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use safeocc::augment::DisturbanceKind;
use safeocc::cnn::{
    convolve, sse_loss, Activation, Architecture, CnnModel, ConvBlockSpec, ConvOperator, PoolKind, TrainConfig,
};
use safeocc::control::{run_closed_loop, ClosedLoop, LoopOutcome, PidGains, Recourse, Scenario};
use safeocc::dataset::Dataset;
use safeocc::detector::{accuracy, member_verdicts, union, DetectorConfig, SafeOccDetector};
use safeocc::envs::EnvKind;
use safeocc::io::{file_sha256, DatasetMeta};
use safeocc::numeric::{eigh_symmetric, matmul, Mat, Rng, Tensor3};
use safeocc::occ::{fit_ocsvm, OcSvmModel, Verdict};
use safeocc::reduction::{fit_2d2pca, fit_pca, PcaDims};
use safeocc_cli::pipeline::{self, GammaCalibration, TestSet};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<Duration, String> {
    let t = start.elapsed();
    ensure!(t <= limit, "{what} took {:.1}s, limit {}s", t.as_secs_f64(), limit.as_secs());
    Ok(t)
}

fn random_tensor(rng: &mut Rng, h: usize, w: usize, c: usize) -> Tensor3 {
    Tensor3::new(h, w, c, (0..h * w * c).map(|_| rng.normal()).collect()).unwrap()
}

fn random_mat(rng: &mut Rng, r: usize, c: usize) -> Mat {
    Mat::new(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
}

/// Zero-padded "same" convolution written as six nested loops over filter,
/// row, column, channel and kernel offsets.
fn naive_convolve(x: &Tensor3, op: &ConvOperator) -> Tensor3 {
    let (h, w, p) = x.shape();
    let k = op.kernel_size;
    let half = (k / 2) as isize;
    let mut out = Tensor3::zeros(h, w, op.filters);
    for j in 0..op.filters {
        for r in 0..h {
            for c in 0..w {
                let mut s = op.bias[j];
                for i in 0..p {
                    for u in 0..k {
                        for v in 0..k {
                            let (sr, sc) = (r as isize + u as isize - half, c as isize + v as isize - half);
                            if sr >= 0 && sc >= 0 && (sr as usize) < h && (sc as usize) < w {
                                let weight = op.kernel[((j * p + i) * k + u) * k + v];
                                s += weight * x.get(sr as usize, sc as usize, i);
                            }
                        }
                    }
                }
                out.set(r, c, j, s);
            }
        }
    }
    out
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = Rng::new(101);
    let mut worst: f64 = 0.0;
    for t in 0..50 {
        let size = 4 + t % 13;
        let channels = 1 + t % 4;
        let filters = 1 + (t * 7) % 6;
        let k = [1, 3, 5][t % 3];
        let x = random_tensor(&mut rng, size, size, channels);
        let mut op = ConvOperator::zeros(k, channels, filters).unwrap();
        op.kernel.iter_mut().for_each(|v| *v = rng.normal());
        op.bias.iter_mut().for_each(|v| *v = rng.normal());
        worst = worst.max(convolve(&x, &op).unwrap().max_abs_diff(&naive_convolve(&x, &op)));
    }
    ensure!(worst < 1e-12, "max abs diff {worst:e}");
    let t = within(start, Duration::from_secs(10), "convolution oracle")?;
    Ok(format!("50 pairs, max abs diff {worst:.1e}, {:.2}s", t.as_secs_f64()))
}

/// Parameter count, worst relative error above the absolute floor, and
/// worst absolute difference.
fn gradient_check(arch: &Architecture, rng: &mut Rng) -> Result<(usize, f64, f64), String> {
    let mut m = CnnModel::init(arch, rng).unwrap();
    for p in m.params_mut() {
        p.iter_mut().for_each(|v| *v += 0.1 * rng.normal());
    }
    let img = Tensor3::new(8, 8, 1, (0..64).map(|_| rng.uniform()).collect()).unwrap();
    let y: Vec<f64> = (0..arch.outputs).map(|_| rng.normal()).collect();
    let (_, grads) = m.backward(&img, &y).unwrap();
    let loss = |m: &CnnModel| sse_loss(&m.predict(&img).unwrap(), &y).unwrap();
    let h = 1e-5;
    let (mut count, mut worst, mut worst_abs) = (0, 0.0f64, 0.0f64);
    let sizes: Vec<usize> = m.params().iter().map(|p| p.len()).collect();
    for (t, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let mut plus = m.clone();
            plus.params_mut()[t][i] += h;
            let mut minus = m.clone();
            minus.params_mut()[t][i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let an = grads.tensors[t][i];
            let abs = (fd - an).abs();
            worst_abs = worst_abs.max(abs);
            if abs >= 1e-8 {
                let rel = abs / fd.abs().max(an.abs());
                ensure!(rel < 1e-4, "tensor {t} index {i}: backprop {an} vs central difference {fd}");
                worst = worst.max(rel);
            }
            count += 1;
        }
    }
    Ok((count, worst, worst_abs))
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let mut rng = Rng::new(202);
    let smooth = ConvBlockSpec { activation: Activation::Tanh, pool: PoolKind::Average, ..ConvBlockSpec::relu_max(3) };
    let archs = [
        Architecture {
            input_size: 8,
            input_channels: 1,
            blocks: vec![smooth, ConvBlockSpec { filters: 4, ..smooth }],
            hidden: vec![5],
            outputs: 2,
        },
        Architecture {
            input_size: 8,
            input_channels: 1,
            blocks: vec![ConvBlockSpec::relu_max(3), ConvBlockSpec::relu_max(4)],
            hidden: vec![],
            outputs: 2,
        },
    ];
    let mut total = 0;
    let (mut worst, mut worst_abs) = (0.0f64, 0.0f64);
    for arch in &archs {
        let (n, w, a) = gradient_check(arch, &mut rng)?;
        total += n;
        worst = worst.max(w);
        worst_abs = worst_abs.max(a);
    }
    let t = within(start, Duration::from_secs(60), "gradient check")?;
    Ok(format!("{total} parameters over two 2-block nets, worst relative error {worst:.1e}, worst absolute {worst_abs:.1e}, {:.2}s", t.as_secs_f64()))
}

fn inf_norm(m: &Mat) -> f64 {
    (0..m.rows()).map(|r| m.row(r).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn criterion_3() -> Check {
    let start = Instant::now();
    let mut rng = Rng::new(303);
    let mut worst_eig: f64 = 0.0;
    for t in 0..100 {
        let n = 1 + (t * 37) % 64;
        let b = random_mat(&mut rng, n, n);
        let m = Mat::new(n, n, (0..n * n).map(|i| 0.5 * (b.get(i / n, i % n) + b.get(i % n, i / n))).collect()).unwrap();
        let (vals, vecs) = eigh_symmetric(&m).map_err(|e| e.to_string())?;
        let recon = matmul(&matmul(&vecs, &Mat::diag(&vals)).unwrap(), &vecs.transpose()).unwrap();
        worst_eig = worst_eig.max(inf_norm(&recon.sub(&m).unwrap()));
    }
    ensure!(worst_eig < 1e-8, "eigen reconstruction error {worst_eig:e}");

    let mut worst_pca: f64 = 0.0;
    for n in [2, 5, 12] {
        let pts: Vec<Vec<f64>> = (0..40).map(|_| (0..n).map(|_| 3.0 * rng.normal()).collect()).collect();
        let model = fit_pca(&pts, PcaDims::Count(n)).map_err(|e| e.to_string())?;
        let z: Vec<Vec<f64>> = pts.iter().map(|p| model.apply(p).unwrap()).collect();
        for i in 0..pts.len() {
            for j in 0..i {
                let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                worst_pca = worst_pca.max((d(&pts[i], &pts[j]) - d(&z[i], &z[j])).abs());
            }
        }
    }
    ensure!(worst_pca < 1e-8, "PCA distance change {worst_pca:e}");

    let mut worst_2d: f64 = 0.0;
    for n in [3, 6, 8] {
        let maps: Vec<Vec<Mat>> = vec![(0..15).map(|_| random_mat(&mut rng, n, n)).collect(); 1];
        let model = fit_2d2pca(&maps, n, n).map_err(|e| e.to_string())?;
        let f = &model.filters[0];
        for _ in 0..5 {
            let p = random_mat(&mut rng, n, n);
            let z = model.apply(0, &p).unwrap();
            let back = matmul(&matmul(&f.q, &z).unwrap(), &f.w.transpose()).unwrap();
            worst_2d = worst_2d.max(back.max_abs_diff(&p));
        }
    }
    ensure!(worst_2d < 1e-8, "2D2PCA reconstruction error {worst_2d:e}");
    let t = within(start, Duration::from_secs(30), "eigen/PCA suite")?;
    Ok(format!(
        "eigen {worst_eig:.1e} on 100 matrices, PCA distances {worst_pca:.1e}, 2D2PCA {worst_2d:.1e}, {:.2}s",
        t.as_secs_f64()
    ))
}

fn feasible(m: &OcSvmModel) -> Result<(), String> {
    let total: f64 = m.alphas.iter().sum();
    ensure!((total - 1.0).abs() <= 1e-8, "alphas sum to {total}");
    let c = 1.0 / (m.nu * m.n_train as f64);
    ensure!(m.alphas.iter().all(|a| *a >= 0.0 && *a <= c + 1e-12), "alpha outside [0, {c}]");
    Ok(())
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).exp()
}

/// Euclidean projection onto `{0 <= x <= c, sum x = 1}` by bisection on the shift.
fn project_capped_simplex(y: &[f64], c: f64) -> Vec<f64> {
    let mut lo = y.iter().cloned().fold(f64::INFINITY, f64::min) - c;
    let mut hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s: f64 = y.iter().map(|v| (v - mid).clamp(0.0, c)).sum();
        if s > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    y.iter().map(|v| (v - t).clamp(0.0, c)).collect()
}

fn blob(rng: &mut Rng, n: usize, center: (f64, f64)) -> Vec<Vec<f64>> {
    (0..n).map(|_| vec![center.0 + rng.normal(), center.1 + rng.normal()]).collect()
}

fn criterion_4() -> Check {
    let start = Instant::now();
    let mut rng = Rng::new(404);
    let mut fitted = 0;
    let mut worst_gap: f64 = 0.0;
    for (t, (nu, gamma)) in [(0.1, 0.5), (0.3, 2.0), (0.05, 1.0), (0.5, 0.2), (0.0001, 0.5)].into_iter().enumerate() {
        let pts = blob(&mut rng, 30, (t as f64, -(t as f64)));
        let model = fit_ocsvm(&pts, nu, gamma).map_err(|e| e.to_string())?;
        feasible(&model)?;
        fitted += 1;
        let mut alpha = vec![0.0; pts.len()];
        for (sv, a) in model.support_vectors.iter().zip(&model.alphas) {
            alpha[pts.iter().position(|p| p == sv).expect("support vector is a sample")] += a;
        }
        let k: Vec<Vec<f64>> = pts.iter().map(|a| pts.iter().map(|b| rbf(a, b, gamma)).collect()).collect();
        let objective =
            |x: &[f64]| 0.5 * (0..x.len()).map(|i| (0..x.len()).map(|j| x[i] * x[j] * k[i][j]).sum::<f64>()).sum::<f64>();
        let c = 1.0 / (nu * pts.len() as f64);
        let step = 1.0 / k.iter().map(|r| r.iter().sum::<f64>()).fold(0.0, f64::max);
        let mut x = project_capped_simplex(&vec![1.0 / 30.0; 30], c);
        for _ in 0..20000 {
            let g: Vec<f64> = k.iter().map(|r| r.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
            let y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            x = project_capped_simplex(&y, c);
        }
        let gap = (objective(&alpha) - objective(&x)).abs();
        ensure!(gap < 1e-4, "nu {nu} gamma {gamma}: SMO {} vs oracle {}", objective(&alpha), objective(&x));
        worst_gap = worst_gap.max(gap);
    }
    let mut fractions = Vec::new();
    for nu in [0.05, 0.1, 0.2] {
        let mut pts = blob(&mut rng, 100, (-2.0, 0.0));
        pts.extend(blob(&mut rng, 100, (2.0, 1.0)));
        let model = fit_ocsvm(&pts, nu, 0.5).map_err(|e| e.to_string())?;
        feasible(&model)?;
        fitted += 1;
        let novel = pts.iter().filter(|p| model.classify(p, 0.0).unwrap().0 == Verdict::Novel).count();
        let frac = novel as f64 / pts.len() as f64;
        ensure!(frac <= nu + 0.05, "nu {nu}: training novel fraction {frac}");
        fractions.push(format!("{frac:.3}@{nu}"));
    }
    let t = within(start, Duration::from_secs(60), "OC-SVM suite")?;
    Ok(format!(
        "{fitted} models feasible, worst dual gap {worst_gap:.1e}, novel fractions {}, {:.2}s",
        fractions.join(" "),
        t.as_secs_f64()
    ))
}

const PENDULUM_SEEDS: [u64; 3] = [1, 2, 3];
const DETECTOR_SEED: u64 = 1;
const PENDULUM_EPOCHS: usize = 30;
const CARTPOLE_SEED: u64 = 1;
const CARTPOLE_EPOCHS: usize = 15;

struct PendulumRun {
    seed: u64,
    data: Dataset,
    meta: DatasetMeta,
    model: CnnModel,
    train_time: Duration,
    sets: Vec<TestSet>,
}

fn pendulum_run(seed: u64) -> PendulumRun {
    let (data, meta) = pipeline::generate(EnvKind::Pendulum, 60, 64, seed).unwrap();
    let arch = pipeline::architecture("pendulum", &meta).unwrap();
    let cfg = TrainConfig { max_epochs: PENDULUM_EPOCHS, ..TrainConfig::default() };
    let start = Instant::now();
    let trained = pipeline::train_sensor(&data, &meta, &arch, &cfg, seed, None, |_| {}).unwrap();
    let train_time = start.elapsed();
    let sets = pipeline::test_sets(&data, &meta, &pipeline::all_test_set_names(), seed).unwrap();
    PendulumRun { seed, data, meta, model: trained.outcome.model, train_time, sets }
}

fn pendulum_runs() -> &'static [PendulumRun] {
    static RUNS: OnceLock<Vec<PendulumRun>> = OnceLock::new();
    RUNS.get_or_init(|| PENDULUM_SEEDS.iter().map(|&s| pendulum_run(s)).collect())
}

fn criterion_5() -> Check {
    let novel = ["blockages", "fog", "shift", "spatter"];
    let mut parts = Vec::new();
    for run in pendulum_runs() {
        ensure!(run.data.len() == 2400, "seed {}: {} frames", run.seed, run.data.len());
        ensure!(run.train_time <= Duration::from_secs(600), "seed {}: training took {:?}", run.seed, run.train_time);
        let err = |name: &str| {
            let s = run.sets.iter().find(|s| s.name == name).unwrap();
            pipeline::mean_l2(&run.model, &s.images, &s.labels).unwrap()
        };
        let clean = err("original");
        ensure!(clean < 0.15, "seed {}: clean mean L2 {clean:.4}", run.seed);
        let mut min_ratio = f64::INFINITY;
        for kind in novel {
            let e = err(kind);
            ensure!(e >= 2.0 * clean, "seed {}: {kind} error {e:.4} < 2 x clean {clean:.4}", run.seed);
            min_ratio = min_ratio.min(e / clean);
        }
        parts.push(format!(
            "seed {} clean {clean:.4} min ratio {min_ratio:.1} ({:.0}s)",
            run.seed,
            run.train_time.as_secs_f64()
        ));
    }
    Ok(parts.join("; "))
}

struct Detectors {
    config1: SafeOccDetector,
    config2: SafeOccDetector,
    fit_time: Duration,
    /// `[set][member]` accuracy, members ordered config1, config2, union.
    accuracy: Vec<(String, Verdict, [f64; 3])>,
}

fn detectors() -> &'static Detectors {
    static DET: OnceLock<Detectors> = OnceLock::new();
    DET.get_or_init(|| {
        let run = pendulum_runs().iter().find(|r| r.seed == DETECTOR_SEED).unwrap();
        let start = Instant::now();
        let cal = GammaCalibration::default();
        let fit = |c: DetectorConfig| pipeline::fit(&run.model, &run.data, &run.meta, &c, Some(&cal)).unwrap().0;
        let config1 = fit(DetectorConfig::config1());
        let config2 = fit(DetectorConfig::config2(run.model.depth()));
        let pair = [config1.clone(), config2.clone()];
        let mut acc = Vec::new();
        for set in &run.sets {
            let imgs: Vec<&Tensor3> = set.images.iter().collect();
            let v = member_verdicts(&pair, &run.model, &imgs).unwrap();
            let col = |j: usize| v.iter().map(|r| r[j]).collect::<Vec<_>>();
            let u: Vec<Verdict> = v.iter().map(|r| union(r.iter().copied())).collect();
            let a = [accuracy(&col(0), set.label).unwrap(), accuracy(&col(1), set.label).unwrap(), accuracy(&u, set.label).unwrap()];
            acc.push((set.name.clone(), set.label, a));
        }
        Detectors { config1, config2, fit_time: start.elapsed(), accuracy: acc }
    })
}

fn acc_of(d: &Detectors, set: &str) -> [f64; 3] {
    d.accuracy.iter().find(|(n, _, _)| n == set).map(|(_, _, a)| *a).expect("test set evaluated")
}

fn criterion_6() -> Check {
    let d = detectors();
    ensure!(d.fit_time <= Duration::from_secs(900), "fitting and scoring took {:?}", d.fit_time);
    let normal = acc_of(d, "original");
    ensure!(normal[0] >= 90.0, "config1 normal accuracy {:.2}", normal[0]);
    for kind in ["fog", "noise", "spatter"] {
        let a = acc_of(d, kind);
        ensure!(a[0] >= 90.0, "config1 {kind} accuracy {:.2}", a[0]);
    }
    let blockages = acc_of(d, "blockages");
    let blur = acc_of(d, "blur");
    ensure!(blockages[1] >= 90.0, "config2 blockage accuracy {:.2}", blockages[1]);
    ensure!(blur[0] > blur[1], "blur: config1 {:.2} not above config2 {:.2}", blur[0], blur[1]);
    ensure!(blockages[1] > blockages[0], "blockages: config2 {:.2} not above config1 {:.2}", blockages[1], blockages[0]);
    Ok(format!(
        "seed {DETECTOR_SEED}, gamma {:.4}/{:.4}: C1 normal {:.2} fog {:.2} noise {:.2} spatter {:.2}; blockages C1 {:.2} C2 {:.2}; blur C1 {:.2} C2 {:.2}; {:.0}s",
        d.config1.ocsvm.gamma,
        d.config2.ocsvm.gamma,
        normal[0],
        acc_of(d, "fog")[0],
        acc_of(d, "noise")[0],
        acc_of(d, "spatter")[0],
        blockages[0],
        blockages[1],
        blur[0],
        blur[1],
        d.fit_time.as_secs_f64()
    ))
}

fn criterion_7() -> Check {
    let d = detectors();
    let mut parts = Vec::new();
    for (name, label, a) in &d.accuracy {
        match label {
            Verdict::Novel => {
                ensure!(a[2] >= a[0].max(a[1]), "{name}: union {:.2} below member max {:.2}", a[2], a[0].max(a[1]));
                parts.push(format!("{name} {:.2}", a[2]));
            }
            Verdict::Normal => {
                ensure!(a[2] >= 85.0, "{name}: union normal accuracy {:.2}", a[2]);
                parts.push(format!("{name} normal {:.2}", a[2]));
            }
        }
    }
    Ok(format!("union: {}", parts.join(", ")))
}

struct CartpoleRun {
    model: CnnModel,
    detector: SafeOccDetector,
    setup_time: Duration,
}

fn cartpole() -> &'static CartpoleRun {
    static RUN: OnceLock<CartpoleRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let (data, meta) = pipeline::generate(EnvKind::Cartpole, 120, 128, CARTPOLE_SEED).unwrap();
        let (data, meta) = pipeline::augment(&data, &meta, &[DisturbanceKind::Fog], CARTPOLE_SEED).unwrap();
        let arch = pipeline::architecture("cartpole", &meta).unwrap();
        let cfg = TrainConfig { max_epochs: CARTPOLE_EPOCHS, ..TrainConfig::default() };
        let model = pipeline::train_sensor(&data, &meta, &arch, &cfg, CARTPOLE_SEED, None, |_| {}).unwrap().outcome.model;
        let config = DetectorConfig::cartpole(model.depth());
        let detector = pipeline::fit(&model, &data, &meta, &config, Some(&GammaCalibration::default())).unwrap().0;
        CartpoleRun { model, detector, setup_time: start.elapsed() }
    })
}

const SIM_SEEDS: [u64; 3] = [0, 1, 2];
const ONSET: usize = 150;
const HORIZON: usize = 400;

fn simulate(run: &CartpoleRun, scenario: &Scenario, safety: bool) -> LoopOutcome {
    let lp = ClosedLoop {
        sensor: &run.model,
        detector: safety.then_some(&run.detector),
        gains: PidGains::cartpole_default(),
        safety: safety.then_some((3, Recourse::FreezeLastControl)),
        render: EnvKind::Cartpole.default_render(128),
    };
    run_closed_loop(&lp, scenario).unwrap()
}

fn criterion_8() -> Check {
    let start = Instant::now();
    let run = cartpole();
    let mut notes = vec![format!("setup {:.0}s", run.setup_time.as_secs_f64())];
    for seed in SIM_SEEDS {
        let out = simulate(run, &Scenario::clean(HORIZON, seed), false);
        let steps = out.records.len();
        let max = out.max_abs_angle();
        ensure!(steps >= 300 && max < 30.0, "clean seed {seed}: {steps} steps, max |theta| {max:.1} deg");
        notes.push(format!("clean s{seed} {steps} steps {max:.1}deg"));
    }
    for seed in SIM_SEEDS {
        let out = simulate(run, &Scenario::disturbed(DisturbanceKind::Spatter, ONSET, HORIZON, seed), false);
        ensure!(out.terminated, "spatter seed {seed}: survived {} steps without the safety system", out.records.len());
        notes.push(format!("spatter s{seed} fell at {}", out.records.len()));
    }
    let mut latched = 0;
    for seed in SIM_SEEDS {
        let out = simulate(run, &Scenario::disturbed(DisturbanceKind::Spatter, ONSET, HORIZON, seed), true);
        let hit = out.alarm_step.is_some_and(|t| (ONSET..ONSET + 10).contains(&t));
        latched += usize::from(hit);
        notes.push(format!("alarm s{seed} {:?}", out.alarm_step));
    }
    ensure!(latched >= 2, "alarm latched within 10 steps of onset in {latched} of 3 seeds ({})", notes.join(", "));
    // Reported only: a persistent random blockage often misses the pole.
    for seed in SIM_SEEDS {
        let free = simulate(run, &Scenario::disturbed(DisturbanceKind::Blockages, ONSET, HORIZON, seed), false);
        let safe = simulate(run, &Scenario::disturbed(DisturbanceKind::Blockages, ONSET, HORIZON, seed), true);
        notes.push(format!("blockages s{seed} steps {} alarm {:?}", free.records.len(), safe.alarm_step));
    }
    let t = within(start, Duration::from_secs(1200), "closed-loop criterion")?;
    Ok(format!("{}; {:.0}s", notes.join(", "), t.as_secs_f64()))
}

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_safeocc"))
        .current_dir(dir)
        .env_remove("SAFEOCC_SEED")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    Ok(())
}

fn criterion_9() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = tmp.path();
    for run in ["first", "second"] {
        let data = format!("{run}/data");
        cli(d, &["gen-data", "--env", "pendulum", "--episodes", "60", "--seed", "1", "--out", &data])?;
        cli(d, &["train-sensor", "--data", &data, "--epochs", "2", "--seed", "1", "--quiet", "--out", &format!("{run}/sensor.sfoc")])?;
        cli(d, &[
            "fit-detector", "--sensor", &format!("{run}/sensor.sfoc"), "--data", &data, "--preset", "config2",
            "--calibrate-gamma", "--out", &format!("{run}/config2.sfoc"),
        ])?;
    }
    let files = ["data/dataset.json", "data/images.bin", "data/labels.bin", "sensor.sfoc", "sensor.history.csv", "config2.sfoc"];
    for f in files {
        let a = file_sha256(&d.join("first").join(f)).map_err(|e| e.to_string())?;
        let b = file_sha256(&d.join("second").join(f)).map_err(|e| e.to_string())?;
        ensure!(a == b, "{f} differs between runs");
    }
    Ok(format!("{} files byte-identical across two gen-data/train-sensor/fit-detector runs", files.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("convolution oracle", criterion_1),
        ("gradient check", criterion_2),
        ("eigen/PCA suite", criterion_3),
        ("OC-SVM suite", criterion_4),
        ("sensor accuracy", criterion_5),
        ("detector accuracy", criterion_6),
        ("union property", criterion_7),
        ("closed loop", criterion_8),
        ("determinism", criterion_9),
    ];
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match result {
            Ok(detail) => println!("criterion {n} ({name}): PASS: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
