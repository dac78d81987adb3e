use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcl_desync_core::averaging::{
    build_gamma, converge, fixed_point, gamma_eigvec, gamma_power_limit, limit_matrix, ExtendedTimingVector,
};
use tcl_desync_core::population::{run, InitialStatus, ScenarioConfig, SimulationTrace};
use tcl_desync_core::protocol::BroadcastEvent;
use tcl_desync_core::thermostat::{natural_cycle, Cycle, TclParameters, ThermalSpec};
use tcl_desync_core::Error as CoreError;

use crate::config::{self, LoadError};
use crate::output::{resolve_output_dir, Artifacts, RunManifest};

/// Failure of a command, mapped to the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Io(..) => CliError::Io(e.to_string()),
            LoadError::Config(c) => CliError::Invalid(c.to_string()),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

fn io_err(dir: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("writing {}: {e}", dir.display()))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(format!("rendering CSV: {e}"))
}

/// What a command produced. `passed` is false when a checked tolerance was
/// violated (exit code 1).
#[derive(Debug)]
pub struct Report {
    pub manifest: RunManifest,
    pub summary: Vec<String>,
    pub passed: bool,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct OutputOptions {
    pub output_dir: Option<PathBuf>,
    /// Default root used when neither the flag nor the config names a directory.
    pub env_dir: Option<PathBuf>,
}

/// Comfort tolerance checked after every simulation, °C.
pub const COMFORT_TOLERANCE: f64 = 1e-6;

pub fn simulate(config_path: &Path, seed: Option<u64>, out: &OutputOptions) -> Result<Report, CliError> {
    let started = Instant::now();
    let file = config::load(config_path)?;
    let mut scenario = file.scenario;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let name = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let dir = resolve_output_dir(out.output_dir.as_deref(), file.output_dir.as_deref(), out.env_dir.as_deref(), &name);

    let trace = run(&scenario)?;
    let period = post_step_period(&scenario)?;
    let mut artifacts = Artifacts::new();
    write_trace(&mut artifacts, &trace, period).map_err(csv_err)?;

    let comfort_ok = trace.comfort.max_hull_excursion <= COMFORT_TOLERANCE;
    let mut summary = vec![
        format!("devices          {}", scenario.n_devices),
        format!("horizon          {} h", scenario.horizon),
        format!("switch events    {}", trace.ledger.len()),
        format!("natural period   {period:.5} h (final setpoint)"),
    ];
    let first_step = scenario.broadcasts.first().map(|b| b.time);
    if let Some(ts) = first_step {
        if ts > 0.0 {
            if let Ok(a) = trace.amplitude(0.0, ts) {
                summary.push(format!("pre-step power   mean {:.1} kW, peak-to-peak {:.1} kW", a.mean, a.peak_to_peak));
            }
        }
        if let Ok((t, p)) = trace.peak(ts, ts + period) {
            summary.push(format!("first peak       {p:.1} kW at {t:.3} h"));
        }
        if let Ok(a) = trace.amplitude(ts, scenario.horizon) {
            summary.push(format!("post-step power  mean {:.1} kW, peak-to-peak {:.1} kW", a.mean, a.peak_to_peak));
        }
    }
    if let Some(r) = trace.order.last() {
        summary.push(format!("order parameter  {r:.4} at {} h", scenario.horizon));
    }
    summary.push(format!(
        "comfort          max excursion {:.3e} °C ({})",
        trace.comfort.max_hull_excursion,
        if comfort_ok { "ok" } else { "VIOLATED" }
    ));

    let manifest = RunManifest {
        command: "simulate".into(),
        config_path: Some(config_path.display().to_string()),
        output_dir: dir.display().to_string(),
        seed: Some(scenario.seed),
        artifacts: vec![],
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    let manifest = artifacts.commit(&dir, manifest).map_err(io_err(&dir))?;
    Ok(Report {
        manifest,
        summary,
        passed: comfort_ok,
    })
}

/// Natural period of the base device at its setpoint after all broadcasts.
pub fn post_step_period(scenario: &ScenarioConfig) -> Result<f64, CliError> {
    let base = TclParameters::new(scenario.base)?;
    let shift: f64 = scenario.broadcasts.iter().map(|b| b.delta_setpoint).sum();
    Ok(natural_cycle(&base.with_setpoint(base.setpoint() + shift)?)?.period)
}

fn write_trace(a: &mut Artifacts, trace: &SimulationTrace, period: f64) -> csv::Result<()> {
    a.csv("power.csv", &["time_h", "power_kw"], |w| {
        for (t, p) in trace.times.iter().zip(&trace.power) {
            w.serialize((t, p))?;
        }
        Ok(())
    })?;
    a.csv("temps.csv", &["time_h", "device_id", "theta_c"], |w| {
        let m = trace.temp_devices.len();
        for (k, t) in trace.times.iter().enumerate() {
            for (j, id) in trace.temp_devices.iter().enumerate() {
                w.serialize((t, id, trace.temps[k * m + j]))?;
            }
        }
        Ok(())
    })?;
    a.csv("events.csv", &["time_h", "direction", "delta_kw"], |w| {
        for e in trace.ledger.events() {
            w.serialize((e.time, e.direction.as_str(), e.delta_kw))?;
        }
        Ok(())
    })?;
    a.csv(
        "metrics.csv",
        &["window_start_h", "window_end_h", "order_parameter", "peak_to_peak_kw", "std_kw", "mean_kw"],
        |w| {
            let end = *trace.times.last().unwrap_or(&0.0);
            let mut k = 0usize;
            loop {
                let (lo, hi) = (k as f64 * period, (k + 1) as f64 * period);
                if hi > end + 1e-12 {
                    break;
                }
                if let Ok(amp) = trace.amplitude(lo, hi) {
                    let r = trace.order_at(hi).unwrap_or(f64::NAN);
                    w.serialize((lo, hi, r, amp.peak_to_peak, amp.std, amp.mean))?;
                }
                k += 1;
            }
            Ok(())
        },
    )?;
    if !trace.timing_history.is_empty() {
        a.csv("timing.csv", &["time_h", "device_id", "t_enforced_h"], |w| {
            for snap in &trace.timing_history {
                for (i, t) in snap.t_enforced.iter().enumerate() {
                    w.serialize((snap.time, i, t))?;
                }
            }
            Ok(())
        })?;
    }
    Ok(())
}

/// Tolerances of the convergence analysis.
pub const FIXED_POINT_TOLERANCE: f64 = 1e-9;
pub const ROW_SUM_TOLERANCE: f64 = 1e-15;
pub const EIGVEC_TOLERANCE: f64 = 1e-14;
pub const LIMIT_TOLERANCE: f64 = 1e-9;
/// Allowed gap between the measured contraction and `cos(π/N)`.
pub const RATE_TOLERANCE: f64 = 1e-3;
/// Matrix checks are skipped above this size (dense `O(N³ log k)` work).
pub const MAX_MATRIX_DEVICES: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

/// Checks on `Γ` for `n` devices, plus the fixed-point distance reached from
/// `x0` after iteration.
pub fn gamma_checks(n: usize) -> Result<Vec<Check>, CliError> {
    let gamma = build_gamma(n)?;
    let g = gamma_eigvec(n)?;
    let gg = gamma.apply(&g);
    let eig = gg.iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let limit = gamma_power_limit(n, 1 << 40)?.max_abs_diff(&limit_matrix(n)?);
    Ok(vec![
        Check {
            name: "row_sum_residual",
            value: gamma.matrix().row_sum_residual(),
            tolerance: ROW_SUM_TOLERANCE,
        },
        Check {
            name: "eigvec_residual",
            value: eig,
            tolerance: EIGVEC_TOLERANCE,
        },
        Check {
            name: "power_limit_residual",
            value: limit,
            tolerance: LIMIT_TOLERANCE,
        },
    ])
}

pub fn analyze_convergence(
    n: usize,
    period: f64,
    seed: u64,
    max_iters: usize,
    out: &OutputOptions,
) -> Result<Report, CliError> {
    let started = Instant::now();
    if n < 2 {
        return Err(CliError::Invalid(format!("--n must be at least 2, got {n}")));
    }
    if !(period > 0.0 && period.is_finite()) {
        return Err(CliError::Invalid(format!("--period must be positive, got {period}")));
    }
    let dir = resolve_output_dir(out.output_dir.as_deref(), None, out.env_dir.as_deref(), "convergence");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let interior: Vec<f64> = (1..n).map(|_| rng.random::<f64>() * period).collect();
    let x0 = ExtendedTimingVector::anchored(&interior, period);
    let conv = converge(&x0, max_iters)?;
    let target = fixed_point(n, period)?.extended();

    let mut checks = vec![Check {
        name: "fixed_point_distance",
        value: conv.limit.sup_distance(&target) / period,
        tolerance: FIXED_POINT_TOLERANCE,
    }];
    if n <= MAX_MATRIX_DEVICES {
        checks.extend(gamma_checks(n)?);
    }
    let rate = late_rate(&conv.distances, period);
    let slowest = (std::f64::consts::PI / n as f64).cos();
    if let Some(r) = rate {
        checks.push(Check {
            name: "contraction_rate_error",
            value: (r - slowest).abs(),
            tolerance: RATE_TOLERANCE,
        });
    }

    let mut artifacts = Artifacts::new();
    artifacts
        .csv("convergence.csv", &["iteration", "sup_distance"], |w| {
            for (k, d) in conv.distances.iter().enumerate() {
                w.serialize((k, d))?;
            }
            Ok(())
        })
        .map_err(csv_err)?;
    artifacts
        .csv("gamma_checks.csv", &["check", "value", "tolerance", "pass"], |w| {
            for c in &checks {
                w.serialize((c.name, c.value, c.tolerance, c.passed()))?;
            }
            Ok(())
        })
        .map_err(csv_err)?;

    let passed = checks.iter().all(Check::passed);
    let mut summary = vec![
        format!("devices          {n}"),
        format!("period           {period}"),
        format!("iterations       {} (converged: {})", conv.iterations, conv.converged),
    ];
    if let Some(r) = rate {
        summary.push(format!("contraction      {r:.6} per step (cos(π/N) = {slowest:.6})"));
    }
    let finals: Vec<String> = conv.limit.x[..n].iter().map(|v| format!("{v:.9}")).take(16).collect();
    summary.push(format!("final timings    [{}{}]", finals.join(", "), if n > 16 { ", …" } else { "" }));
    for c in &checks {
        summary.push(format!(
            "{:<16} {:.3e} (tolerance {:.0e}) {}",
            c.name,
            c.value,
            c.tolerance,
            if c.passed() { "ok" } else { "FAILED" }
        ));
    }

    let manifest = RunManifest {
        command: "analyze-convergence".into(),
        config_path: None,
        output_dir: dir.display().to_string(),
        seed: Some(seed),
        artifacts: vec![],
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    let manifest = artifacts.commit(&dir, manifest).map_err(io_err(&dir))?;
    Ok(Report {
        manifest,
        summary,
        passed,
    })
}

/// Per-step contraction once the slowest modes dominate: the geometric mean
/// ratio of distances between `1e−4·T` and `1e−10·T`. The slowest modes come
/// in a `±cos(π/N)` pair, so single-step ratios oscillate.
pub fn late_rate(distances: &[f64], period: f64) -> Option<f64> {
    let k1 = distances.iter().position(|&d| d < 1e-4 * period)?;
    let k2 = distances.iter().position(|&d| d < 1e-10 * period)?;
    if k2 < k1 + 4 || distances[k2] <= 0.0 {
        return None;
    }
    Some((distances[k2] / distances[k1]).powf(1.0 / (k2 - k1) as f64))
}

#[derive(Debug, Clone)]
pub struct SingleTclArgs {
    pub spec: ThermalSpec,
    pub horizon: f64,
    pub step: f64,
    pub delta: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for SingleTclArgs {
    fn default() -> Self {
        Self {
            spec: ThermalSpec::REFERENCE,
            horizon: 40.0,
            step: 1e-3,
            delta: None,
            seed: 1,
        }
    }
}

pub fn format_cycle(c: &Cycle) -> Vec<String> {
    vec![
        format!("on time   {:.7} h", c.on_time),
        format!("off time  {:.7} h", c.off_time),
        format!("period    {:.7} h", c.period),
        format!("duty      {:.7}", c.duty),
    ]
}

pub fn single_tcl(args: &SingleTclArgs, out: &OutputOptions) -> Result<Report, CliError> {
    let started = Instant::now();
    let params = TclParameters::new(args.spec)?;
    let cycle = natural_cycle(&params)?;
    let dir = resolve_output_dir(out.output_dir.as_deref(), None, out.env_dir.as_deref(), "single_tcl");

    let scenario = ScenarioConfig {
        n_devices: 1,
        base: args.spec,
        heterogeneity: vec![],
        initial_status: InitialStatus::AllOn,
        broadcasts: args
            .delta
            .map(|(time, delta)| BroadcastEvent {
                time,
                delta_setpoint: delta,
            })
            .into_iter()
            .collect(),
        horizon: args.horizon,
        reporting_step: args.step,
        protocol_enabled: false,
        protocol: Default::default(),
        seed: args.seed,
        temperature_sample: 1,
        event_tolerance: 1e-9,
        order_interval: args.horizon,
    };
    scenario.validate()?;
    let trace = run(&scenario)?;

    let mut artifacts = Artifacts::new();
    artifacts
        .csv("single_tcl.csv", &["time_h", "theta_c", "status", "power_kw"], |w| {
            for (k, t) in trace.times.iter().enumerate() {
                let p = trace.power[k];
                w.serialize((t, trace.temps[k], u8::from(p > 0.0), p))?;
            }
            Ok(())
        })
        .map_err(csv_err)?;
    artifacts
        .csv("cycle.csv", &["quantity", "value"], |w| {
            w.serialize(("on_time_h", cycle.on_time))?;
            w.serialize(("off_time_h", cycle.off_time))?;
            w.serialize(("period_h", cycle.period))?;
            w.serialize(("duty", cycle.duty))
        })
        .map_err(csv_err)?;
    artifacts
        .csv("events.csv", &["time_h", "direction", "delta_kw"], |w| {
            for e in trace.ledger.events() {
                w.serialize((e.time, e.direction.as_str(), e.delta_kw))?;
            }
            Ok(())
        })
        .map_err(csv_err)?;

    let mut summary = format_cycle(&cycle);
    if let Some((time, delta)) = args.delta {
        let after = natural_cycle(&params.with_setpoint(params.setpoint() + delta)?)?;
        summary.push(format!("after setpoint step of {delta} °C at {time} h:"));
        summary.extend(format_cycle(&after).into_iter().map(|l| format!("  {l}")));
    }
    let manifest = RunManifest {
        command: "single-tcl".into(),
        config_path: None,
        output_dir: dir.display().to_string(),
        seed: Some(args.seed),
        artifacts: vec![],
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    let manifest = artifacts.commit(&dir, manifest).map_err(io_err(&dir))?;
    Ok(Report {
        manifest,
        summary,
        passed: true,
    })
}
