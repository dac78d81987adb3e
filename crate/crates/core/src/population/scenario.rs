use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};

use crate::error::{Error, Result};
use crate::protocol::{BroadcastEvent, ProtocolSettings, ProtocolState};
use crate::thermostat::{
    hysteresis_switch, natural_cycle, Status, TclParameters, ThermalSpec, ThermostatState,
};

/// Parameter field that can be drawn per device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamField {
    R,
    C,
    P,
    Eta,
    Setpoint,
    Deadband,
    Ambient,
}

impl ParamField {
    pub fn set(self, spec: &mut ThermalSpec, value: f64) {
        match self {
            ParamField::R => spec.r = value,
            ParamField::C => spec.c = value,
            ParamField::P => spec.p = value,
            ParamField::Eta => spec.eta = value,
            ParamField::Setpoint => spec.setpoint = value,
            ParamField::Deadband => spec.deadband = value,
            ParamField::Ambient => spec.ambient = value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

/// One heterogeneous parameter. Draws outside `[min, max]` are redrawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heterogeneity {
    pub field: ParamField,
    pub distribution: Distribution,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Heterogeneity {
    /// Capacitance drawn from `N(mean, sd)` and kept above 0.5 kWh/°C.
    pub fn capacitance(mean: f64, sd: f64) -> Self {
        Self {
            field: ParamField::C,
            distribution: Distribution::Normal { mean, sd },
            min: Some(0.5),
            max: None,
        }
    }

    fn accepts(&self, v: f64) -> bool {
        self.min.is_none_or(|m| v > m) && self.max.is_none_or(|m| v < m)
    }
}

/// How initial on/off statuses are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialStatus {
    /// On with probability equal to the device's natural duty cycle.
    #[default]
    SteadyStateDuty,
    AllOff,
    AllOn,
}

/// Redraws allowed per device before sampling gives up.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_devices: usize,
    pub base: ThermalSpec,
    pub heterogeneity: Vec<Heterogeneity>,
    pub initial_status: InitialStatus,
    pub broadcasts: Vec<BroadcastEvent>,
    /// Hours.
    pub horizon: f64,
    /// Power sampling grid, hours.
    pub reporting_step: f64,
    pub protocol_enabled: bool,
    pub protocol: ProtocolSettings,
    pub seed: u64,
    /// Number of devices whose temperature is recorded.
    pub temperature_sample: usize,
    /// Event refinement tolerance, hours.
    pub event_tolerance: f64,
    /// Spacing of order-parameter samples, hours (rounded to the grid).
    pub order_interval: f64,
}

impl ScenarioConfig {
    /// Homogeneous population of reference devices with a +0.5 °C step at
    /// 10 h and no protocol.
    pub fn reference(n_devices: usize, horizon: f64) -> Self {
        Self {
            n_devices,
            base: ThermalSpec::REFERENCE,
            heterogeneity: Vec::new(),
            initial_status: InitialStatus::SteadyStateDuty,
            broadcasts: alloc::vec![BroadcastEvent {
                time: 10.0,
                delta_setpoint: 0.5,
            }],
            horizon,
            reporting_step: 1e-3,
            protocol_enabled: false,
            protocol: ProtocolSettings::default(),
            seed: 1,
            temperature_sample: 25,
            event_tolerance: 1e-9,
            order_interval: 0.05,
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        self.heterogeneity.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.n_devices == 0 {
            return cfg("n_devices must be at least 1".into());
        }
        if self.n_devices > u32::MAX as usize {
            return cfg(format!("n_devices {} too large", self.n_devices));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return cfg(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.reporting_step > 0.0 && self.reporting_step <= self.horizon) {
            return cfg(format!(
                "reporting_step must be in (0, horizon], got {}",
                self.reporting_step
            ));
        }
        if !(self.event_tolerance > 0.0 && self.event_tolerance < self.reporting_step) {
            return cfg(format!(
                "event_tolerance must be in (0, reporting_step), got {}",
                self.event_tolerance
            ));
        }
        if !(self.order_interval > 0.0) {
            return cfg(format!("order_interval must be positive, got {}", self.order_interval));
        }
        if !(self.protocol.decay_rate >= 0.0 && self.protocol.decay_rate.is_finite()) {
            return cfg(format!(
                "decay_rate must be non-negative, got {}",
                self.protocol.decay_rate
            ));
        }
        let base = TclParameters::new(self.base)?;
        for h in &self.heterogeneity {
            match h.distribution {
                Distribution::Normal { mean, sd } if !(sd >= 0.0) || !mean.is_finite() => {
                    return cfg(format!("bad normal distribution for {:?}", h.field));
                }
                Distribution::Uniform { lo, hi } if !(lo < hi) => {
                    return cfg(format!("bad uniform range for {:?}", h.field));
                }
                _ => {}
            }
        }
        let mut last = f64::NEG_INFINITY;
        let mut setpoint = base.setpoint();
        for b in &self.broadcasts {
            if !(b.time >= 0.0 && b.time <= self.horizon) || !b.delta_setpoint.is_finite() {
                return cfg(format!("broadcast at {} outside [0, horizon]", b.time));
            }
            if b.time <= last {
                return cfg("broadcast times must be strictly increasing".into());
            }
            last = b.time;
            setpoint += b.delta_setpoint;
            if self.is_homogeneous() {
                base.with_setpoint(setpoint).map_err(|e| {
                    Error::Config(format!("setpoint {setpoint} after broadcast at {}: {e}", b.time))
                })?;
            }
        }
        Ok(())
    }
}

/// Deterministic stream for population draws.
pub(crate) fn population_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for one device's protocol draws.
pub(crate) fn device_rng(seed: u64, device: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + device as u64);
    rng
}

fn draw_value<R: Rng>(h: &Heterogeneity, rng: &mut R) -> Result<f64> {
    let v = match h.distribution {
        Distribution::Normal { mean, sd } => Normal::new(mean, sd)
            .map_err(|e| Error::Config(format!("{:?}: {e}", h.field)))?
            .sample(rng),
        Distribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
    };
    Ok(v)
}

fn draw_params<R: Rng>(config: &ScenarioConfig, rng: &mut R) -> Result<TclParameters> {
    for _ in 0..MAX_REDRAWS {
        let mut spec = config.base;
        let mut ok = true;
        for h in &config.heterogeneity {
            let v = draw_value(h, rng)?;
            if !h.accepts(v) {
                ok = false;
                break;
            }
            h.field.set(&mut spec, v);
        }
        if !ok {
            continue;
        }
        let Ok(params) = TclParameters::new(spec) else {
            continue;
        };
        let mut valid = true;
        let mut sp = params.setpoint();
        for b in &config.broadcasts {
            sp += b.delta_setpoint;
            valid &= params.with_setpoint(sp).is_ok();
        }
        if valid {
            return Ok(params);
        }
    }
    Err(Error::Config(format!(
        "no valid parameter set after {MAX_REDRAWS} draws"
    )))
}

/// Draw every device's parameters, initial temperature (uniform on its band)
/// and initial status. Deterministic in `config.seed`.
pub fn sample_population(
    config: &ScenarioConfig,
) -> Result<Vec<(TclParameters, ThermostatState, ProtocolState)>> {
    config.validate()?;
    let mut rng = population_rng(config.seed);
    let mut out = Vec::with_capacity(config.n_devices);
    for _ in 0..config.n_devices {
        let params = draw_params(config, &mut rng)?;
        let (lo, hi) = params.nominal_band();
        let cycle = natural_cycle(&params)?;
        let theta = lo + (hi - lo) * rng.random::<f64>();
        let status = match config.initial_status {
            InitialStatus::SteadyStateDuty => {
                if rng.random::<f64>() < cycle.duty {
                    Status::On
                } else {
                    Status::Off
                }
            }
            InitialStatus::AllOff => Status::Off,
            InitialStatus::AllOn => Status::On,
        };
        let thermo = hysteresis_switch(ThermostatState::new(theta, status, (lo, hi))?, params.mode());
        let proto = ProtocolState::idle(config.protocol.decay_rate, cycle.period);
        out.push((params, thermo, proto));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn homogeneous_population_uses_base() {
        let config = ScenarioConfig::reference(10_000, 20.0);
        let pop = sample_population(&config).unwrap();
        assert_eq!(pop.len(), 10_000);
        let base = TclParameters::reference();
        let mut on = 0usize;
        for (p, s, _) in &pop {
            assert_eq!(*p, base);
            assert!(s.theta >= 19.5 && s.theta <= 20.5);
            on += s.status.is_on() as usize;
        }
        // on-fraction matches the duty cycle, binomial sd ≈ 0.0045
        let frac = on as f64 / 10_000.0;
        assert!((frac - 0.28549).abs() < 0.02, "{frac}");
    }

    #[test]
    fn heterogeneous_capacitance_moments() {
        let mut config = ScenarioConfig::reference(10_000, 20.0);
        config.heterogeneity.push(Heterogeneity::capacitance(5.0, 0.5));
        let pop = sample_population(&config).unwrap();
        let cs: Vec<f64> = pop.iter().map(|(p, _, _)| p.c()).collect();
        let mean = cs.iter().sum::<f64>() / cs.len() as f64;
        let var = cs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (cs.len() - 1) as f64;
        assert!((mean - 5.0).abs() < 0.02, "mean {mean}");
        assert!((libm::sqrt(var) - 0.5).abs() < 0.02, "sd {}", libm::sqrt(var));
        assert!(cs.iter().all(|c| *c > 0.5));
    }

    #[test]
    fn sampling_is_deterministic() {
        let mut config = ScenarioConfig::reference(500, 20.0);
        config.heterogeneity.push(Heterogeneity::capacitance(5.0, 0.5));
        assert_eq!(sample_population(&config).unwrap(), sample_population(&config).unwrap());
        let mut other = config.clone();
        other.seed = 2;
        assert_ne!(sample_population(&config).unwrap(), sample_population(&other).unwrap());
    }

    #[test]
    fn impossible_distribution_is_a_config_error() {
        let mut config = ScenarioConfig::reference(3, 20.0);
        // ambient always below the band: never cycles
        config.heterogeneity.push(Heterogeneity {
            field: ParamField::Ambient,
            distribution: Distribution::Uniform { lo: 0.0, hi: 10.0 },
            min: None,
            max: None,
        });
        assert!(matches!(sample_population(&config), Err(Error::Config(_))));
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let ok = ScenarioConfig::reference(1, 20.0);
        assert!(ok.validate().is_ok());
        let mut c = ok.clone();
        c.n_devices = 0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.horizon = 0.0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.reporting_step = -1.0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.broadcasts.push(BroadcastEvent { time: 5.0, delta_setpoint: 0.1 });
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.broadcasts[0].delta_setpoint = 10.0;
        assert!(c.validate().is_err());
    }
}
