//! Scenario files.
//!
//! ```toml
//! seed = 1
//! horizon_h = 30.0
//! reporting_step_h = 0.001
//!
//! [population]
//! n_devices = 10000
//! initial_status = "duty"        # duty | all-off | all-on
//! temperature_sample = 25
//!
//! [population.base]              # any subset; the rest is the reference device
//! r = 2.0
//! c = 5.0
//! p = 14.0
//! eta = 2.5
//! setpoint = 20.0
//! deadband = 1.0
//! ambient = 28.0
//! mode = "cooling"               # cooling | heating
//!
//! [[population.heterogeneity]]
//! field = "c"                    # r | c | p | eta | setpoint | deadband | ambient
//! distribution = "normal"        # normal (mean, sd) | uniform (lo, hi)
//! mean = 5.0
//! sd = 0.5
//! min = 0.5                      # optional truncation, exclusive
//!
//! [protocol]
//! enabled = true
//! decay_rate = 1.0
//! observation = "all"            # all | same-direction | enforced-only
//! boundary = "anchor"            # anchor | wrap
//! period_mode = "a-priori"       # a-priori | measured
//!
//! [[broadcasts]]
//! time_h = 10.0
//! delta_c = 0.5
//!
//! [output]
//! dir = "out/fig2"
//! order_interval_h = 0.05
//! event_tolerance_h = 1e-9
//! ```

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use tcl_desync_core::population::{Distribution, Heterogeneity, InitialStatus, ParamField, ScenarioConfig};
use tcl_desync_core::protocol::{
    BroadcastEvent, ObservationPolicy, PeriodBoundary, PeriodMode, ProtocolSettings,
};
use tcl_desync_core::thermostat::{Mode, TclParameters, ThermalSpec};
use toml::Spanned;

/// A configuration problem, located in the source file when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    /// 1-based line and column.
    pub location: Option<(usize, usize)>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.location {
            Some((line, col)) => write!(f, "{}:{}:{}: {}", self.path, line, col, self.message),
            None => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    seed: Option<u64>,
    horizon_h: Spanned<f64>,
    reporting_step_h: Option<Spanned<f64>>,
    population: Spanned<RawPopulation>,
    #[serde(default)]
    protocol: Option<Spanned<RawProtocol>>,
    #[serde(default)]
    broadcasts: Vec<Spanned<RawBroadcast>>,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPopulation {
    n_devices: Spanned<usize>,
    #[serde(default)]
    initial_status: RawInitialStatus,
    temperature_sample: Option<usize>,
    base: Option<Spanned<RawBase>>,
    #[serde(default)]
    heterogeneity: Vec<Spanned<RawHeterogeneity>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RawInitialStatus {
    #[default]
    Duty,
    AllOff,
    AllOn,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBase {
    r: Option<f64>,
    c: Option<f64>,
    p: Option<f64>,
    eta: Option<f64>,
    setpoint: Option<f64>,
    deadband: Option<f64>,
    ambient: Option<f64>,
    mode: Option<RawMode>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RawMode {
    Cooling,
    Heating,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RawField {
    R,
    C,
    P,
    Eta,
    Setpoint,
    Deadband,
    Ambient,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RawDistribution {
    Normal,
    Uniform,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHeterogeneity {
    field: RawField,
    distribution: RawDistribution,
    mean: Option<f64>,
    sd: Option<f64>,
    lo: Option<f64>,
    hi: Option<f64>,
    min: Option<f64>,
    max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProtocol {
    #[serde(default)]
    enabled: bool,
    decay_rate: Option<f64>,
    #[serde(default)]
    observation: RawObservation,
    #[serde(default)]
    boundary: RawBoundary,
    #[serde(default)]
    period_mode: RawPeriodMode,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RawObservation {
    #[default]
    All,
    SameDirection,
    EnforcedOnly,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RawBoundary {
    #[default]
    Anchor,
    Wrap,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RawPeriodMode {
    #[default]
    APriori,
    Measured,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBroadcast {
    time_h: f64,
    delta_c: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    order_interval_h: Option<f64>,
    event_tolerance_h: Option<f64>,
}

/// A parsed scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationFile {
    pub scenario: ScenarioConfig,
    pub output_dir: Option<PathBuf>,
}

struct Locator<'a> {
    path: &'a str,
    src: &'a str,
}

impl Locator<'_> {
    fn position(&self, offset: usize) -> (usize, usize) {
        let before = &self.src[..offset.min(self.src.len())];
        let line = before.matches('\n').count() + 1;
        let col = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
        (line, col)
    }

    fn at(&self, span: Option<Range<usize>>, message: impl Into<String>) -> ConfigError {
        ConfigError {
            path: self.path.to_string(),
            location: span.map(|s| self.position(s.start)),
            message: message.into(),
        }
    }
}

/// Read and validate a scenario file.
pub fn load(path: &Path) -> Result<SimulationFile, LoadError> {
    let src = std::fs::read_to_string(path).map_err(|e| LoadError::Io(path.to_path_buf(), e))?;
    parse(&src, &path.display().to_string()).map_err(LoadError::Config)
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("{0}")]
    Config(ConfigError),
}

/// Parse scenario text; `path` is used only in diagnostics.
pub fn parse(src: &str, path: &str) -> Result<SimulationFile, ConfigError> {
    let loc = Locator { path, src };
    let raw: RawFile = toml::from_str(src).map_err(|e| loc.at(e.span(), e.message().trim_end()))?;

    let pop_span = raw.population.span();
    let pop = raw.population.into_inner();

    let mut spec = ThermalSpec::REFERENCE;
    let mut base_span = None;
    if let Some(base) = pop.base {
        base_span = Some(base.span());
        let b = base.into_inner();
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut spec.r, b.r);
        set(&mut spec.c, b.c);
        set(&mut spec.p, b.p);
        set(&mut spec.eta, b.eta);
        set(&mut spec.setpoint, b.setpoint);
        set(&mut spec.deadband, b.deadband);
        set(&mut spec.ambient, b.ambient);
        if let Some(m) = b.mode {
            spec.mode = match m {
                RawMode::Cooling => Mode::Cooling,
                RawMode::Heating => Mode::Heating,
            };
        }
    }
    let base = TclParameters::new(spec)
        .map_err(|e| loc.at(base_span.clone().or(Some(pop_span.clone())), e.to_string()))?;

    if *pop.n_devices.get_ref() == 0 {
        return Err(loc.at(Some(pop.n_devices.span()), "n_devices must be at least 1"));
    }

    let mut heterogeneity = Vec::new();
    for h in pop.heterogeneity {
        let span = h.span();
        let h = h.into_inner();
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| loc.at(Some(span.clone()), format!("missing `{name}` for this distribution")))
        };
        let distribution = match h.distribution {
            RawDistribution::Normal => {
                let (mean, sd) = (need(h.mean, "mean")?, need(h.sd, "sd")?);
                if !(sd >= 0.0) || !mean.is_finite() || !sd.is_finite() {
                    return Err(loc.at(Some(span), "normal distribution needs finite mean and sd ≥ 0"));
                }
                Distribution::Normal { mean, sd }
            }
            RawDistribution::Uniform => {
                let (lo, hi) = (need(h.lo, "lo")?, need(h.hi, "hi")?);
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(loc.at(Some(span), "uniform distribution needs finite lo < hi"));
                }
                Distribution::Uniform { lo, hi }
            }
        };
        let field = match h.field {
            RawField::R => ParamField::R,
            RawField::C => ParamField::C,
            RawField::P => ParamField::P,
            RawField::Eta => ParamField::Eta,
            RawField::Setpoint => ParamField::Setpoint,
            RawField::Deadband => ParamField::Deadband,
            RawField::Ambient => ParamField::Ambient,
        };
        // capacitance keeps a physical floor unless one is given
        let min = h.min.or(matches!(field, ParamField::C).then_some(0.5));
        heterogeneity.push(Heterogeneity {
            field,
            distribution,
            min,
            max: h.max,
        });
    }

    let horizon = *raw.horizon_h.get_ref();
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(loc.at(Some(raw.horizon_h.span()), "horizon_h must be positive"));
    }
    let reporting_step = match &raw.reporting_step_h {
        Some(s) => {
            let v = *s.get_ref();
            if !(v > 0.0 && v <= horizon) {
                return Err(loc.at(Some(s.span()), "reporting_step_h must be in (0, horizon_h]"));
            }
            v
        }
        None => 1e-3,
    };

    let mut broadcasts = Vec::new();
    let mut setpoint = base.setpoint();
    let mut last = f64::NEG_INFINITY;
    for b in raw.broadcasts {
        let span = b.span();
        let b = b.into_inner();
        if !(b.time_h >= 0.0 && b.time_h <= horizon) {
            return Err(loc.at(Some(span), format!("broadcast time {} outside [0, horizon_h]", b.time_h)));
        }
        if b.time_h <= last {
            return Err(loc.at(Some(span), "broadcast times must be strictly increasing"));
        }
        if !b.delta_c.is_finite() {
            return Err(loc.at(Some(span), "delta_c must be finite"));
        }
        last = b.time_h;
        setpoint += b.delta_c;
        if let Err(e) = base.with_setpoint(setpoint) {
            return Err(loc.at(Some(span), format!("setpoint {setpoint} after this broadcast: {e}")));
        }
        broadcasts.push(BroadcastEvent {
            time: b.time_h,
            delta_setpoint: b.delta_c,
        });
    }

    let (protocol_enabled, protocol) = match raw.protocol {
        None => (false, ProtocolSettings::default()),
        Some(p) => {
            let span = p.span();
            let p = p.into_inner();
            let decay_rate = p.decay_rate.unwrap_or(1.0);
            if !(decay_rate >= 0.0 && decay_rate.is_finite()) {
                return Err(loc.at(Some(span), "decay_rate must be a non-negative number"));
            }
            let settings = ProtocolSettings {
                decay_rate,
                observation: match p.observation {
                    RawObservation::All => ObservationPolicy::AllTransitions,
                    RawObservation::SameDirection => ObservationPolicy::SameDirection,
                    RawObservation::EnforcedOnly => ObservationPolicy::EnforcedOnly,
                },
                boundary: match p.boundary {
                    RawBoundary::Anchor => PeriodBoundary::Anchor,
                    RawBoundary::Wrap => PeriodBoundary::Wrap,
                },
                period_mode: match p.period_mode {
                    RawPeriodMode::APriori => PeriodMode::APriori,
                    RawPeriodMode::Measured => PeriodMode::Measured,
                },
            };
            (p.enabled, settings)
        }
    };

    let scenario = ScenarioConfig {
        n_devices: pop.n_devices.into_inner(),
        base: *base.spec(),
        heterogeneity,
        initial_status: match pop.initial_status {
            RawInitialStatus::Duty => InitialStatus::SteadyStateDuty,
            RawInitialStatus::AllOff => InitialStatus::AllOff,
            RawInitialStatus::AllOn => InitialStatus::AllOn,
        },
        broadcasts,
        horizon,
        reporting_step,
        protocol_enabled,
        protocol,
        seed: raw.seed.unwrap_or(1),
        temperature_sample: pop.temperature_sample.unwrap_or(25),
        event_tolerance: raw.output.event_tolerance_h.unwrap_or(1e-9),
        order_interval: raw.output.order_interval_h.unwrap_or(0.05),
    };
    scenario.validate().map_err(|e| loc.at(None, e.to_string()))?;
    Ok(SimulationFile {
        scenario,
        output_dir: raw.output.dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "horizon_h = 20.0\n[population]\nn_devices = 3\n";

    #[test]
    fn minimal_file_uses_reference_device() {
        let f = parse(MINIMAL, "x.toml").unwrap();
        assert_eq!(f.scenario.base, ThermalSpec::REFERENCE);
        assert_eq!(f.scenario.n_devices, 3);
        assert!(!f.scenario.protocol_enabled);
        assert_eq!(f.scenario.reporting_step, 1e-3);
        assert_eq!(f.scenario.seed, 1);
        assert!(f.output_dir.is_none());
    }

    #[test]
    fn full_file_round_trips_settings() {
        let src = r#"
seed = 9
horizon_h = 30.0
reporting_step_h = 0.002

[population]
n_devices = 100
initial_status = "all-off"
temperature_sample = 4

[population.base]
c = 6.0
mode = "cooling"

[[population.heterogeneity]]
field = "c"
distribution = "normal"
mean = 6.0
sd = 0.5

[protocol]
enabled = true
decay_rate = 0.5
observation = "enforced-only"
boundary = "wrap"
period_mode = "measured"

[[broadcasts]]
time_h = 10.0
delta_c = 0.5

[output]
dir = "out/x"
"#;
        let f = parse(src, "x.toml").unwrap();
        let s = &f.scenario;
        assert_eq!(s.seed, 9);
        assert_eq!(s.base.c, 6.0);
        assert_eq!(s.initial_status, InitialStatus::AllOff);
        assert_eq!(s.heterogeneity[0].min, Some(0.5));
        assert!(s.protocol_enabled);
        assert_eq!(s.protocol.observation, ObservationPolicy::EnforcedOnly);
        assert_eq!(s.protocol.boundary, PeriodBoundary::Wrap);
        assert_eq!(s.protocol.period_mode, PeriodMode::Measured);
        assert_eq!(s.broadcasts, vec![BroadcastEvent { time: 10.0, delta_setpoint: 0.5 }]);
        assert_eq!(f.output_dir, Some(PathBuf::from("out/x")));
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let e = parse("horizon_h = 20.0\n[population]\nn_devices = = 3\n", "bad.toml").unwrap_err();
        assert_eq!(e.location.map(|l| l.0), Some(3));
        assert!(e.to_string().starts_with("bad.toml:3:"), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let e = parse("horizon_h = 20.0\n[population]\nn_devices = 3\nbogus = 1\n", "x").unwrap_err();
        assert_eq!(e.location.map(|l| l.0), Some(4));
    }

    #[test]
    fn non_cycling_base_points_at_the_table() {
        let src = "horizon_h = 20.0\n[population]\nn_devices = 3\n[population.base]\nambient = 15.0\n";
        let e = parse(src, "x").unwrap_err();
        assert!(e.message.contains("cycle"), "{}", e.message);
        assert!(matches!(e.location, Some((4..=5, _))), "{:?}", e.location);
    }

    #[test]
    fn bad_broadcast_points_at_its_entry() {
        let src = "horizon_h = 20.0\n[population]\nn_devices = 3\n\n[[broadcasts]]\ntime_h = 30.0\ndelta_c = 0.5\n";
        let e = parse(src, "x").unwrap_err();
        assert!(matches!(e.location, Some((5..=6, _))), "{:?}", e.location);
    }

    #[test]
    fn missing_distribution_parameter_is_reported() {
        let src = "horizon_h = 20.0\n[population]\nn_devices = 3\n[[population.heterogeneity]]\nfield = \"c\"\ndistribution = \"normal\"\nmean = 5.0\n";
        let e = parse(src, "x").unwrap_err();
        assert!(e.message.contains("sd"));
        assert!(e.location.is_some());
    }
}
