//! Single-device thermal dynamics.
//!
//! A device is a first-order RC thermal model driven by an on/off actuator:
//!
//! ```text
//! dθ/dt = (θ∞ − θ ∓ s·R·P) / (R·C)
//! ```
//!
//! with `−` for cooling and `+` for heating. With `s` held constant the flow is
//! an exponential approach to `θ_eq = θ∞ ∓ s·R·P`, which is what
//! [`propagate_exact`] evaluates. Switching is hysteretic on the band
//! `[band_lo, band_hi]`.

use alloc::format;

use crate::error::{invalid, Error, Result};

/// Whether the actuator removes heat (cooling) or adds it (heating).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mode {
    #[default]
    Cooling,
    Heating,
}

/// Actuator status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Status {
    #[default]
    Off,
    On,
}

impl Status {
    pub fn is_on(self) -> bool {
        matches!(self, Status::On)
    }

    pub fn toggled(self) -> Status {
        match self {
            Status::Off => Status::On,
            Status::On => Status::Off,
        }
    }

    /// `s ∈ {0, 1}` as a float.
    pub fn as_f64(self) -> f64 {
        if self.is_on() {
            1.0
        } else {
            0.0
        }
    }
}

/// Unvalidated physical constants of one device.
///
/// Units: `r` °C/kW, `c` kWh/°C, `p` kW (thermal), `eta` dimensionless,
/// temperatures °C.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalSpec {
    pub r: f64,
    pub c: f64,
    pub p: f64,
    pub eta: f64,
    pub setpoint: f64,
    pub deadband: f64,
    pub ambient: f64,
    pub mode: Mode,
}

impl ThermalSpec {
    /// Parameters of the reference air-conditioning unit used throughout the
    /// bundled scenarios.
    pub const REFERENCE: ThermalSpec = ThermalSpec {
        r: 2.0,
        c: 5.0,
        p: 14.0,
        eta: 2.5,
        setpoint: 20.0,
        deadband: 1.0,
        ambient: 28.0,
        mode: Mode::Cooling,
    };
}

/// Validated device parameters. Construction rejects any set that cannot
/// sustain an on/off limit cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TclParameters {
    spec: ThermalSpec,
}

impl TclParameters {
    pub fn new(spec: ThermalSpec) -> Result<Self> {
        let ThermalSpec {
            r,
            c,
            p,
            eta,
            setpoint,
            deadband,
            ambient,
            mode,
        } = spec;
        let fields = [r, c, p, eta, setpoint, deadband, ambient];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        for (name, v) in [("R", r), ("C", c), ("P", p), ("eta", eta), ("deadband", deadband)] {
            if v <= 0.0 {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let lo = setpoint - deadband / 2.0;
        let hi = setpoint + deadband / 2.0;
        let reach = r * p;
        let ok = match mode {
            Mode::Cooling => ambient - reach < lo && hi < ambient,
            Mode::Heating => ambient < lo && hi < ambient + reach,
        };
        if !ok {
            return Err(Error::NonCycling(format!(
                "{mode:?} with band [{lo}, {hi}] needs the band strictly inside \
                 the reachable range between ambient {ambient} and ambient {} R·P = {}",
                if mode == Mode::Cooling { "−" } else { "+" },
                match mode {
                    Mode::Cooling => ambient - reach,
                    Mode::Heating => ambient + reach,
                }
            )));
        }
        Ok(Self { spec })
    }

    /// Reference unit (R=2, C=5, P=14, η=2.5, θ_sp=20, Δ=1, θ∞=28, cooling).
    pub fn reference() -> Self {
        Self {
            spec: ThermalSpec::REFERENCE,
        }
    }

    pub fn spec(&self) -> &ThermalSpec {
        &self.spec
    }

    pub fn r(&self) -> f64 {
        self.spec.r
    }
    pub fn c(&self) -> f64 {
        self.spec.c
    }
    pub fn p(&self) -> f64 {
        self.spec.p
    }
    pub fn eta(&self) -> f64 {
        self.spec.eta
    }
    pub fn setpoint(&self) -> f64 {
        self.spec.setpoint
    }
    pub fn deadband(&self) -> f64 {
        self.spec.deadband
    }
    pub fn ambient(&self) -> f64 {
        self.spec.ambient
    }
    pub fn mode(&self) -> Mode {
        self.spec.mode
    }

    /// Thermal time constant `R·C` in hours.
    pub fn time_constant(&self) -> f64 {
        self.spec.r * self.spec.c
    }

    /// Equilibrium temperature the flow approaches with the given status.
    pub fn equilibrium(&self, status: Status) -> f64 {
        let push = status.as_f64() * self.spec.r * self.spec.p;
        match self.spec.mode {
            Mode::Cooling => self.spec.ambient - push,
            Mode::Heating => self.spec.ambient + push,
        }
    }

    /// Same device with a different setpoint, revalidated.
    pub fn with_setpoint(&self, setpoint: f64) -> Result<Self> {
        Self::new(ThermalSpec {
            setpoint,
            ..self.spec
        })
    }

    /// Nominal band at zero narrowing.
    pub fn nominal_band(&self) -> (f64, f64) {
        let half = self.spec.deadband / 2.0;
        (self.spec.setpoint - half, self.spec.setpoint + half)
    }
}

/// Temperature and actuator status of one device together with the band it
/// currently switches on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermostatState {
    pub theta: f64,
    pub status: Status,
    pub band_lo: f64,
    pub band_hi: f64,
}

impl ThermostatState {
    pub fn new(theta: f64, status: Status, band: (f64, f64)) -> Result<Self> {
        if !(band.0 < band.1) {
            return Err(invalid(format!("band [{}, {}] is empty", band.0, band.1)));
        }
        Ok(Self {
            theta,
            status,
            band_lo: band.0,
            band_hi: band.1,
        })
    }
}

/// Switching thresholds for a setpoint, deadband and narrowing `alpha`.
pub fn band_from_setpoint(setpoint: f64, deadband: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(0.0..deadband / 2.0).contains(&alpha) {
        return Err(invalid(format!(
            "narrowing {alpha} outside [0, {})",
            deadband / 2.0
        )));
    }
    let half = deadband / 2.0;
    Ok((setpoint - half + alpha, setpoint + half - alpha))
}

/// Temperature after `dt` hours of constant-status flow from `theta`.
#[inline]
pub fn flow(theta: f64, equilibrium: f64, time_constant: f64, dt: f64) -> f64 {
    equilibrium + (theta - equilibrium) * libm::exp(-dt / time_constant)
}

/// Exact solution of the thermal ODE over `dt` hours with the status held.
/// No threshold check is made.
pub fn propagate_exact(
    state: ThermostatState,
    params: &TclParameters,
    dt: f64,
) -> Result<ThermostatState> {
    if !(dt >= 0.0) {
        return Err(invalid(format!("negative time step {dt}")));
    }
    if dt == 0.0 {
        return Ok(state);
    }
    let eq = params.equilibrium(state.status);
    Ok(ThermostatState {
        theta: flow(state.theta, eq, params.time_constant(), dt),
        ..state
    })
}

/// True when the hysteresis rule demands a status change at this temperature.
#[inline]
pub fn must_switch(mode: Mode, status: Status, theta: f64, band_lo: f64, band_hi: f64) -> bool {
    match (mode, status) {
        (Mode::Cooling, Status::On) | (Mode::Heating, Status::Off) => theta <= band_lo,
        (Mode::Cooling, Status::Off) | (Mode::Heating, Status::On) => theta >= band_hi,
    }
}

/// Apply the hysteresis rule once.
pub fn hysteresis_switch(state: ThermostatState, mode: Mode) -> ThermostatState {
    if must_switch(mode, state.status, state.theta, state.band_lo, state.band_hi) {
        ThermostatState {
            status: state.status.toggled(),
            ..state
        }
    } else {
        state
    }
}

/// Hours needed to drift from `from` to `to` with the given status, or
/// `None` if the flow never reaches `to`.
pub fn travel_time(params: &TclParameters, status: Status, from: f64, to: f64) -> Option<f64> {
    let eq = params.equilibrium(status);
    let ratio = (from - eq) / (to - eq);
    if !(ratio >= 1.0) || !ratio.is_finite() {
        return None;
    }
    Some(params.time_constant() * libm::log(ratio))
}

/// Closed-form limit cycle of a device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cycle {
    pub on_time: f64,
    pub off_time: f64,
    pub period: f64,
    pub duty: f64,
}

/// Cycle between arbitrary thresholds `lo < hi`.
pub fn cycle_for_band(params: &TclParameters, lo: f64, hi: f64) -> Result<Cycle> {
    let (on_from, on_to, off_from, off_to) = match params.mode() {
        Mode::Cooling => (hi, lo, lo, hi),
        Mode::Heating => (lo, hi, hi, lo),
    };
    let on_time = travel_time(params, Status::On, on_from, on_to);
    let off_time = travel_time(params, Status::Off, off_from, off_to);
    match (on_time, off_time) {
        (Some(on_time), Some(off_time)) if lo < hi => {
            let period = on_time + off_time;
            Ok(Cycle {
                on_time,
                off_time,
                period,
                duty: on_time / period,
            })
        }
        _ => Err(Error::NonCycling(format!(
            "no limit cycle between {lo} and {hi}"
        ))),
    }
}

/// On-time, off-time, period and duty cycle of the nominal band.
pub fn natural_cycle(params: &TclParameters) -> Result<Cycle> {
    let (lo, hi) = params.nominal_band();
    cycle_for_band(params, lo, hi)
}

/// Electrical draw `P·s/η` in kW.
pub fn electrical_power(params: &TclParameters, status: Status) -> f64 {
    params.p() * status.as_f64() / params.eta()
}
