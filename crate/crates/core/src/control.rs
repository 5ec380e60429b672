//! PID feedback with a filtered derivative, the binary push mapping, a
//! latching safety monitor and the closed-loop cart-pole runner.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::augment::{apply_realized, realize, Disturbance, DisturbanceKind, DisturbanceSpec};
use crate::cnn::CnnModel;
use crate::detector::SafeOccDetector;
use crate::envs::{cartpole_label, cartpole_start, cartpole_step, render_cartpole, CartPoleState, RenderSpec, CARTPOLE_DT};
use crate::error::{arg_err, dim_err, Error, Result};
use crate::numeric::{derive_seed, Rng};
use crate::occ::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Derivative filter time constant in seconds; 0 disables filtering.
    pub tau_f: f64,
    /// Bound on `|∫e dt|`.
    pub integral_limit: f64,
}

impl PidGains {
    /// Tuned on true-state feedback for the cart-pole with the error in degrees.
    pub fn cartpole_default() -> Self {
        Self { kp: 1.0, ki: 0.1, kd: 0.3, tau_f: 0.04, integral_limit: 20.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.kp, self.ki, self.kd, self.tau_f, self.integral_limit];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(arg_err!("PID gains must be finite"));
        }
        if self.tau_f < 0.0 || self.integral_limit < 0.0 {
            return Err(arg_err!("tau_f and integral_limit must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PidController {
    pub gains: PidGains,
    pub dt: f64,
    integral: f64,
    derivative: f64,
    previous: Option<f64>,
}

impl PidController {
    pub fn new(gains: PidGains, dt: f64) -> Result<Self> {
        gains.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(arg_err!("dt must be positive, got {dt}"));
        }
        Ok(Self { gains, dt, integral: 0.0, derivative: 0.0, previous: None })
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.derivative = 0.0;
        self.previous = None;
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    /// `u = kp·e + ki·∫e + kd·ḋ` where `ḋ` low-passes the backward difference
    /// of `e`. The first call has no difference and contributes no derivative.
    pub fn step(&mut self, e: f64) -> f64 {
        let g = &self.gains;
        let lim = g.integral_limit;
        self.integral = (self.integral + e * self.dt).clamp(-lim, lim);
        if let Some(prev) = self.previous {
            let raw = (e - prev) / self.dt;
            let beta = self.dt / (g.tau_f + self.dt);
            self.derivative += beta * (raw - self.derivative);
        }
        self.previous = Some(e);
        g.kp * e + g.ki * self.integral + g.kd * self.derivative
    }
}

/// Rounds `sigmoid(u)`: 1 iff `u ≥ 0`.
pub fn binary_action(u: f64) -> u8 {
    u8::from(u >= 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recourse {
    /// Keep applying the last action issued before the alarm.
    FreezeLastControl,
    /// Apply action 0.
    ZeroControl,
}

impl std::str::FromStr for Recourse {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "freeze_last_control" | "freeze" => Ok(Self::FreezeLastControl),
            "zero_control" | "zero" => Ok(Self::ZeroControl),
            _ => Err(arg_err!("unknown recourse {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Directive {
    PassThrough,
    Recourse(Recourse),
}

/// Raises an alarm after `m` consecutive novel verdicts and keeps it raised.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetySystem {
    m: usize,
    recourse: Recourse,
    run: usize,
    alarm: bool,
}

impl SafetySystem {
    pub fn new(m: usize, recourse: Recourse) -> Result<Self> {
        if m == 0 {
            return Err(arg_err!("debounce count must be at least 1"));
        }
        Ok(Self { m, recourse, run: 0, alarm: false })
    }

    pub fn alarmed(&self) -> bool {
        self.alarm
    }

    pub fn update(&mut self, verdict: Verdict) -> Directive {
        if !self.alarm {
            self.run = if verdict == Verdict::Novel { self.run + 1 } else { 0 };
            self.alarm = self.run >= self.m;
        }
        if self.alarm {
            Directive::Recourse(self.recourse)
        } else {
            Directive::PassThrough
        }
    }
}

/// Where the controller's measurement comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    Sensor,
    /// The true angle; used for gain tuning.
    TrueState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub disturbance: Option<DisturbanceKind>,
    /// First step whose frame is disturbed.
    pub onset: usize,
    pub horizon: usize,
    pub seed: u64,
    pub setpoint_deg: f64,
    pub feedback: Feedback,
}

impl Scenario {
    pub fn clean(horizon: usize, seed: u64) -> Self {
        Self { disturbance: None, onset: 0, horizon, seed, setpoint_deg: 0.0, feedback: Feedback::Sensor }
    }

    pub fn disturbed(kind: DisturbanceKind, onset: usize, horizon: usize, seed: u64) -> Self {
        Self { disturbance: Some(kind), onset, ..Self::clean(horizon, seed) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub t: usize,
    /// Cart position; kept for diagnostics and not written to CSV.
    pub x: f64,
    /// True pole angle in degrees.
    pub y_true: f64,
    pub y_hat: f64,
    pub y_err: f64,
    pub z: u8,
    /// Detector decision value; NaN without a detector.
    pub h_hat: f64,
    /// `(ρ − ε) − ĥ`; NaN without a detector.
    pub score: f64,
    pub verdict: Option<Verdict>,
    pub alarm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub records: Vec<LoopRecord>,
    /// The pole fell before the horizon.
    pub terminated: bool,
    pub alarm_step: Option<usize>,
    pub final_state: CartPoleState,
}

impl LoopOutcome {
    /// Largest `|θ|` in degrees over the recorded steps.
    pub fn max_abs_angle(&self) -> f64 {
        self.records.iter().map(|r| r.y_true.abs()).fold(0.0, f64::max)
    }
}

pub struct ClosedLoop<'a> {
    pub sensor: &'a CnnModel,
    pub detector: Option<&'a SafeOccDetector>,
    pub gains: PidGains,
    /// Debounce count and recourse; ignored without a detector.
    pub safety: Option<(usize, Recourse)>,
    pub render: RenderSpec,
}

/// Steps the cart-pole with the loop render → disturb → sense → score →
/// supervise → PID → act until the horizon or until the pole falls. The
/// disturbance is drawn once from the scenario seed and stays on every frame
/// from the onset on, like dirt on a lens.
pub fn run_closed_loop(lp: &ClosedLoop<'_>, scenario: &Scenario) -> Result<LoopOutcome> {
    lp.render.validate()?;
    let arch = lp.sensor.architecture();
    if arch.input_size != lp.render.size || arch.input_channels != 1 {
        return Err(dim_err!("sensor expects {0}x{0}x{1} frames, renderer gives {2}x{2}x1", arch.input_size, arch.input_channels, lp.render.size));
    }
    if lp.sensor.outputs() != 1 {
        return Err(dim_err!("cart-pole sensor must have one output, has {}", lp.sensor.outputs()));
    }
    let mut pid = PidController::new(lp.gains, CARTPOLE_DT)?;
    let mut safety = match (lp.detector, lp.safety) {
        (Some(_), Some((m, r))) => Some(SafetySystem::new(m, r)?),
        _ => None,
    };
    let mut rng = Rng::new(derive_seed(scenario.seed, 0));
    let mut state: CartPoleState = cartpole_start(&mut rng, 0.0);
    let disturbance: Option<Disturbance> = scenario
        .disturbance
        .map(|k| realize(&DisturbanceSpec::new(k, derive_seed(scenario.seed, 1)), lp.render.size, lp.render.size));
    let mut records = Vec::with_capacity(scenario.horizon);
    let mut last_z = 0u8;
    let mut alarm_step = None;
    let mut terminated = false;
    for t in 0..scenario.horizon {
        let mut frame = render_cartpole(&state, &lp.render);
        if let (Some(d), true) = (&disturbance, t >= scenario.onset) {
            frame = apply_realized(&frame, d)?;
        }
        let y_true = cartpole_label(&state)[0];
        let (y_hat, signal) = match lp.detector {
            Some(det) => {
                let fwd = lp.sensor.forward(&frame)?;
                (fwd.output[0], Some(det.signal_from_taps(&fwd.taps)?))
            }
            None => (lp.sensor.predict(&frame)?[0], None),
        };
        let measured = match scenario.feedback {
            Feedback::Sensor => y_hat,
            Feedback::TrueState => y_true,
        };
        let y_err = measured - scenario.setpoint_deg;
        let u = pid.step(y_err);
        let directive = match (&mut safety, signal) {
            (Some(ss), Some(s)) => ss.update(s.verdict),
            _ => Directive::PassThrough,
        };
        let alarm = directive != Directive::PassThrough;
        if alarm && alarm_step.is_none() {
            alarm_step = Some(t);
        }
        let z = match directive {
            Directive::PassThrough => binary_action(u),
            Directive::Recourse(Recourse::FreezeLastControl) => last_z,
            Directive::Recourse(Recourse::ZeroControl) => 0,
        };
        records.push(LoopRecord {
            t,
            x: state.x,
            y_true,
            y_hat,
            y_err,
            z,
            h_hat: signal.map_or(f64::NAN, |s| s.h),
            score: signal.map_or(f64::NAN, |s| s.score),
            verdict: signal.map(|s| s.verdict),
            alarm,
        });
        last_z = z;
        state = cartpole_step(state, z, CARTPOLE_DT)?;
        if state.fallen() {
            terminated = true;
            break;
        }
    }
    Ok(LoopOutcome { records, terminated, alarm_step, final_state: state })
}

pub const LOOP_HEADER: &str = "t,y_true,y_hat,y_err,z,h_hat,score,verdict,alarm";

fn verdict_name(v: Option<Verdict>) -> &'static str {
    match v {
        Some(Verdict::Normal) => "normal",
        Some(Verdict::Novel) => "novel",
        None => "",
    }
}

/// One CSV row per step; values use the shortest round-trip decimal form.
pub fn write_loop_csv(mut w: impl Write, records: &[LoopRecord]) -> Result<()> {
    writeln!(w, "{LOOP_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.t,
            r.y_true,
            r.y_hat,
            r.y_err,
            r.z,
            r.h_hat,
            r.score,
            verdict_name(r.verdict),
            u8::from(r.alarm)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::{Architecture, ConvBlockSpec};

    fn gains(kp: f64, ki: f64, kd: f64) -> PidGains {
        PidGains { kp, ki, kd, tau_f: 0.0, integral_limit: 1e9 }
    }

    #[test]
    fn zero_error_gives_zero_output() {
        let mut c = PidController::new(PidGains::cartpole_default(), 0.02).unwrap();
        for _ in 0..10 {
            assert_eq!(c.step(0.0), 0.0);
        }
    }

    #[test]
    fn proportional_only() {
        let mut c = PidController::new(gains(1.5, 0.0, 0.0), 0.02).unwrap();
        assert_eq!(c.step(2.0), 3.0);
    }

    #[test]
    fn constant_error_matches_closed_form_ramp() {
        let (kp, ki, dt, e) = (0.7, 0.3, 0.05, 2.0);
        let mut c = PidController::new(gains(kp, ki, 0.4), dt).unwrap();
        for k in 1..=100 {
            let u = c.step(e);
            let t = k as f64 * dt;
            assert!((u - (kp * e + ki * e * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn integral_is_clamped() {
        let mut c = PidController::new(PidGains { integral_limit: 0.5, ..gains(0.0, 1.0, 0.0) }, 0.1).unwrap();
        for _ in 0..100 {
            c.step(10.0);
        }
        assert_eq!(c.integral(), 0.5);
        for _ in 0..100 {
            c.step(-10.0);
        }
        assert_eq!(c.integral(), -0.5);
    }

    #[test]
    fn derivative_filter_is_first_order_lag() {
        // Unit ramp in e: the raw difference is 1/dt·Δ = 1 every step, and the
        // filtered value approaches it as 1 − (1 − β)^(k−1).
        let (dt, tau) = (0.1, 0.3);
        let beta = dt / (tau + dt);
        let mut c = PidController::new(PidGains { tau_f: tau, ..gains(0.0, 0.0, 1.0) }, dt).unwrap();
        assert_eq!(c.step(0.0), 0.0);
        for k in 1..30 {
            let u = c.step(k as f64 * dt);
            let expected = 1.0 - (1.0 - beta).powi(k);
            assert!((u - expected).abs() < 1e-12, "step {k}: {u} vs {expected}");
        }
        // No filtering: the derivative is exactly the backward difference.
        let mut raw = PidController::new(gains(0.0, 0.0, 2.0), dt).unwrap();
        raw.step(1.0);
        assert!((raw.step(1.5) - 2.0 * 5.0).abs() < 1e-12);
    }

    #[test]
    fn reset_restores_fresh_state() {
        let mut c = PidController::new(PidGains::cartpole_default(), 0.02).unwrap();
        let first: Vec<f64> = [1.0, 2.0, -1.0].iter().map(|e| c.step(*e)).collect();
        c.reset();
        let again: Vec<f64> = [1.0, 2.0, -1.0].iter().map(|e| c.step(*e)).collect();
        assert_eq!(first, again);
    }

    #[test]
    fn invalid_controller_settings() {
        assert!(PidController::new(PidGains::cartpole_default(), 0.0).is_err());
        assert!(PidController::new(PidGains { tau_f: -1.0, ..PidGains::cartpole_default() }, 0.02).is_err());
        assert!(PidController::new(PidGains { kp: f64::NAN, ..PidGains::cartpole_default() }, 0.02).is_err());
    }

    #[test]
    fn binary_action_examples() {
        assert_eq!(binary_action(0.0), 1);
        assert_eq!(binary_action(-3.0), 0);
        assert_eq!(binary_action(1e-300), 1);
        assert_eq!(binary_action(-1e-300), 0);
    }

    #[test]
    fn safety_counts_consecutive_novel_verdicts() {
        use Verdict::*;
        let mut ss = SafetySystem::new(3, Recourse::FreezeLastControl).unwrap();
        let seq = [Normal, Normal, Novel, Novel, Novel];
        let alarms: Vec<bool> = seq.iter().map(|v| ss.update(*v) != Directive::PassThrough).collect();
        assert_eq!(alarms, vec![false, false, false, false, true]);

        let mut ss = SafetySystem::new(3, Recourse::ZeroControl).unwrap();
        for v in [Novel, Novel, Normal, Novel, Novel] {
            assert_eq!(ss.update(v), Directive::PassThrough);
        }
        assert_eq!(ss.update(Novel), Directive::Recourse(Recourse::ZeroControl));
        // Latched.
        for _ in 0..5 {
            assert_eq!(ss.update(Normal), Directive::Recourse(Recourse::ZeroControl));
        }
        assert!(ss.alarmed());
        assert!(SafetySystem::new(0, Recourse::ZeroControl).is_err());
    }

    #[test]
    fn recourse_parsing() {
        assert_eq!("freeze_last_control".parse::<Recourse>().unwrap(), Recourse::FreezeLastControl);
        assert_eq!("zero".parse::<Recourse>().unwrap(), Recourse::ZeroControl);
        assert!("stop".parse::<Recourse>().is_err());
    }

    fn tiny_sensor() -> CnnModel {
        let arch = Architecture {
            input_size: 64,
            input_channels: 1,
            blocks: vec![ConvBlockSpec::relu_max(2), ConvBlockSpec::relu_max(2)],
            hidden: vec![],
            outputs: 1,
        };
        CnnModel::init(&arch, &mut Rng::new(2)).unwrap()
    }

    #[test]
    fn true_state_feedback_balances_with_default_gains() {
        let sensor = tiny_sensor();
        let lp = ClosedLoop {
            sensor: &sensor,
            detector: None,
            gains: PidGains::cartpole_default(),
            safety: None,
            render: RenderSpec::cartpole(64),
        };
        for seed in 0..3 {
            let sc = Scenario { feedback: Feedback::TrueState, ..Scenario::clean(300, seed) };
            let out = run_closed_loop(&lp, &sc).unwrap();
            assert!(!out.terminated);
            assert_eq!(out.records.len(), 300);
            assert!(out.max_abs_angle() < 15.0, "seed {seed}: {}", out.max_abs_angle());
        }
    }

    #[test]
    fn loop_is_deterministic_and_records_are_ordered() {
        let sensor = tiny_sensor();
        let lp = ClosedLoop {
            sensor: &sensor,
            detector: None,
            gains: PidGains::cartpole_default(),
            safety: None,
            render: RenderSpec::cartpole(64),
        };
        let sc = Scenario::disturbed(DisturbanceKind::Spatter, 5, 40, 7);
        let run = || {
            let mut buf = Vec::new();
            write_loop_csv(&mut buf, &run_closed_loop(&lp, &sc).unwrap().records).unwrap();
            buf
        };
        let a = run();
        assert_eq!(a, run());
        let text = String::from_utf8(a).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(LOOP_HEADER));
        let ts: Vec<usize> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
        assert!(ts.windows(2).all(|w| w[1] == w[0] + 1));
        assert_eq!(ts[0], 0);
    }

    #[test]
    fn mismatched_sensor_rejected() {
        let sensor = tiny_sensor();
        let lp = ClosedLoop {
            sensor: &sensor,
            detector: None,
            gains: PidGains::cartpole_default(),
            safety: None,
            render: RenderSpec::cartpole(128),
        };
        assert!(run_closed_loop(&lp, &Scenario::clean(10, 1)).is_err());
    }
}
