use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::protocol::{
    close_period, enforced_switch, observe_neighbors, on_broadcast, Direction, LedgerEvent,
    Observation, ObservationQuery, PeriodMode, PowerEventLedger, ProtocolSettings, ProtocolState,
    SwitchKind,
};
use crate::thermostat::{natural_cycle, Mode, Status, TclParameters, ThermostatState};

use super::metrics::{oscillation_amplitude, peak_in_window, Amplitude};
use super::scenario::{device_rng, sample_population, ScenarioConfig};

/// Enforced phases of every device right after a population-wide period
/// boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingSnapshot {
    pub time: f64,
    pub period: f64,
    pub t_enforced: Vec<f64>,
    pub anchors: usize,
}

/// Worst temperature excursions seen over the run, °C.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ComfortReport {
    /// Distance outside the union of every band a device was assigned.
    pub max_hull_excursion: f64,
    /// Distance outside the current nominal band, counted only once the
    /// device has been inside it since the last setpoint change.
    pub max_band_excursion: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    /// Reporting grid, hours.
    pub times: Vec<f64>,
    /// Aggregate electrical power at each grid time, kW.
    pub power: Vec<f64>,
    /// Devices whose temperatures are recorded.
    pub temp_devices: Vec<u32>,
    /// Row-major `times.len() × temp_devices.len()` temperatures.
    pub temps: Vec<f64>,
    pub ledger: PowerEventLedger,
    pub timing_history: Vec<TimingSnapshot>,
    pub order_times: Vec<f64>,
    pub order: Vec<f64>,
    pub switch_counts: Vec<u64>,
    pub comfort: ComfortReport,
    /// Sum of `P/η` over the population, kW.
    pub capacity: f64,
}

impl SimulationTrace {
    pub fn temperature(&self, grid_index: usize, sample: usize) -> f64 {
        self.temps[grid_index * self.temp_devices.len() + sample]
    }

    pub fn amplitude(&self, start: f64, end: f64) -> Result<Amplitude> {
        oscillation_amplitude(&self.times, &self.power, start, end)
    }

    /// Largest power sample in `[start, end]` as `(time, kW)`.
    pub fn peak(&self, start: f64, end: f64) -> Result<(f64, f64)> {
        peak_in_window(&self.times, &self.power, start, end)
    }

    /// Order parameter at the sample closest to `t`.
    pub fn order_at(&self, t: f64) -> Option<f64> {
        let i = self.order_times.partition_point(|&x| x < t);
        let pick = match (i.checked_sub(1), self.order_times.get(i)) {
            (Some(a), Some(&b)) if (t - self.order_times[a]) < (b - t) => a,
            (Some(a), None) => a,
            (_, Some(_)) => i,
            (None, None) => return None,
        };
        Some(self.order[pick])
    }

    pub fn total_switches(&self) -> u64 {
        self.switch_counts.iter().sum()
    }
}

struct Ctx {
    h: f64,
    tol: f64,
    protocol: bool,
    settings: ProtocolSettings,
    min_period: f64,
}

struct Device {
    key: u32,
    params: TclParameters,
    mode: Mode,
    tau: f64,
    eq_off: f64,
    eq_on: f64,
    grid_decay: f64,
    kw: f64,
    nominal: (f64, f64),
    natural_period: f64,

    t: f64,
    theta: f64,
    status: Status,
    last_switch: f64,

    proto: ProtocolState,
    alpha0: f64,
    alpha_origin: f64,
    own_direction: Direction,
    rng: ChaCha8Rng,

    /// Latest natural switch-on and switch-off times, cleared by a fired
    /// enforced switch.
    last_natural: [Option<f64>; 2],
    measured: Option<f64>,
    last_on: Option<f64>,

    hull: (f64, f64),
    reentered: bool,
    hull_exc: f64,
    band_exc: f64,

    switches: u64,
    pending: Vec<LedgerEvent>,
}

impl Device {
    fn new(key: u32, params: TclParameters, state: ThermostatState, proto: ProtocolState, seed: u64, h: f64) -> Result<Self> {
        let tau = params.time_constant();
        let nominal = params.nominal_band();
        let mut d = Self {
            key,
            params,
            mode: params.mode(),
            tau,
            eq_off: params.equilibrium(Status::Off),
            eq_on: params.equilibrium(Status::On),
            grid_decay: libm::exp(-h / tau),
            kw: params.p() / params.eta(),
            nominal,
            natural_period: natural_cycle(&params)?.period,
            t: 0.0,
            theta: state.theta,
            status: state.status,
            last_switch: f64::NEG_INFINITY,
            proto,
            alpha0: 0.0,
            alpha_origin: 0.0,
            own_direction: Direction::of_toggle(state.status.toggled()),
            rng: device_rng(seed, key),
            last_natural: [None; 2],
            measured: None,
            last_on: None,
            hull: nominal,
            reentered: true,
            hull_exc: 0.0,
            band_exc: 0.0,
            switches: 0,
            pending: Vec::new(),
        };
        d.track_comfort();
        Ok(d)
    }

    fn power(&self) -> f64 {
        if self.status.is_on() {
            self.kw
        } else {
            0.0
        }
    }

    fn alpha_at(&self, t: f64) -> f64 {
        if self.alpha0 == 0.0 {
            0.0
        } else {
            self.alpha0 * libm::exp(-self.proto.decay_rate * (t - self.alpha_origin))
        }
    }

    fn band_at(&self, t: f64) -> (f64, f64) {
        let a = self.alpha_at(t);
        (self.nominal.0 + a, self.nominal.1 - a)
    }

    fn theta_at(&self, t: f64, h: f64) -> f64 {
        let dt = t - self.t;
        let eq = if self.status.is_on() { self.eq_on } else { self.eq_off };
        let f = if (dt - h).abs() <= 1e-12 * h {
            self.grid_decay
        } else {
            libm::exp(-dt / self.tau)
        };
        eq + (self.theta - eq) * f
    }

    /// Signed distance to the threshold that ends the current status;
    /// non-positive means a switch is due.
    fn gap(&self, t: f64, theta: f64) -> f64 {
        let a = self.alpha_at(t);
        match (self.mode, self.status) {
            (Mode::Cooling, Status::On) | (Mode::Heating, Status::Off) => theta - (self.nominal.0 + a),
            _ => (self.nominal.1 - a) - theta,
        }
    }

    /// Earliest time in `(self.t, stop]` at which the threshold is crossed.
    fn find_crossing(&self, stop: f64, theta_stop: f64, ctx: &Ctx) -> Option<f64> {
        if self.gap(stop, theta_stop) > 0.0 {
            return None;
        }
        let (mut a, mut b) = (self.t, stop);
        while b - a > ctx.tol {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if self.gap(m, self.theta_at(m, ctx.h)) <= 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        let ga = self.gap(a, self.theta_at(a, ctx.h));
        let gb = self.gap(b, self.theta_at(b, ctx.h));
        let mut tc = if ga > 0.0 && gb < 0.0 {
            (a + (b - a) * ga / (ga - gb)).clamp(a, b)
        } else {
            b
        };
        if tc < self.last_switch + ctx.tol {
            tc = (self.last_switch + ctx.tol).min(b);
        }
        Some(tc)
    }

    fn move_to(&mut self, t: f64, theta: f64) {
        self.t = t;
        self.theta = theta;
        self.track_comfort();
    }

    fn track_comfort(&mut self) {
        let th = self.theta;
        let out = |(lo, hi): (f64, f64)| (lo - th).max(th - hi).max(0.0);
        self.hull_exc = self.hull_exc.max(out(self.hull));
        if self.reentered {
            self.band_exc = self.band_exc.max(out(self.nominal));
        } else if th >= self.nominal.0 && th <= self.nominal.1 {
            self.reentered = true;
        }
    }

    fn emit(&mut self, to: Status, kind: SwitchKind) {
        let delta = if to.is_on() { self.kw } else { -self.kw };
        self.pending.push(LedgerEvent {
            time: self.t,
            delta_kw: delta,
            direction: Direction::of_toggle(to),
            device: self.key,
            kind,
        });
        self.switches += 1;
        self.last_switch = self.t;
        if to.is_on() {
            self.last_on = Some(self.t);
        }
        self.status = to;
    }

    fn natural_switch(&mut self) {
        let to = self.status.toggled();
        let slot = &mut self.last_natural[to.is_on() as usize];
        if let Some(tp) = *slot {
            self.measured = Some(self.t - tp);
        }
        *slot = Some(self.t);
        self.emit(to, SwitchKind::Natural);
    }

    fn enforce(&mut self) {
        let (lo, hi) = self.band_at(self.t);
        let state = ThermostatState {
            theta: self.theta,
            status: self.status,
            band_lo: lo,
            band_hi: hi,
        };
        let to = self.status.toggled();
        self.own_direction = Direction::of_toggle(to);
        let (_, fired) = enforced_switch(state, self.mode);
        if fired {
            self.last_natural = [None; 2];
            self.emit(to, SwitchKind::Enforced);
        }
        self.proto.enforced_done = true;
    }

    fn measured_period(&self, ctx: &Ctx) -> Option<f64> {
        Some(self.measured?.max(ctx.min_period))
    }

    /// Advance to `to`. Returns `true` when stopped early at the end of a
    /// protocol period, which must be closed before advancing again.
    fn advance(&mut self, to: f64, ctx: &Ctx) -> bool {
        enum Stop {
            Reached,
            Enforced,
            Boundary,
        }
        loop {
            let mut stop = to;
            let mut kind = Stop::Reached;
            if ctx.protocol && self.proto.active {
                if !self.proto.enforced_done {
                    let te = self.proto.enforced_at();
                    if te <= stop {
                        stop = te;
                        kind = Stop::Enforced;
                    }
                } else {
                    let tb = self.proto.period_end();
                    if tb <= stop {
                        stop = tb;
                        kind = Stop::Boundary;
                    }
                }
            }
            if stop > self.t {
                let th = self.theta_at(stop, ctx.h);
                if let Some(tc) = self.find_crossing(stop, th, ctx) {
                    let th = self.theta_at(tc, ctx.h);
                    self.move_to(tc, th);
                    self.natural_switch();
                    continue;
                }
                self.move_to(stop, th);
            }
            match kind {
                Stop::Reached => return false,
                Stop::Boundary => return true,
                Stop::Enforced => self.enforce(),
            }
        }
    }

    fn query(&self, ctx: &Ctx) -> ObservationQuery {
        ObservationQuery {
            own: self.key,
            own_time: self.proto.enforced_at(),
            own_direction: self.own_direction,
            period_start: self.proto.period_start,
            period: self.proto.period,
            policy: ctx.settings.observation,
            boundary: ctx.settings.boundary,
        }
    }

    fn close(&mut self, observation: Observation, ctx: &Ctx) {
        let next = match ctx.settings.period_mode {
            PeriodMode::APriori => self.proto.period,
            PeriodMode::Measured => self.measured_period(ctx).unwrap_or(self.proto.period),
        };
        self.proto = close_period(&self.proto, observation, next);
    }

    fn broadcast(&mut self, delta: f64, ctx: &Ctx) -> Result<()> {
        let t = self.t;
        if ctx.protocol {
            let mut proto = self.proto;
            if ctx.settings.period_mode == PeriodMode::Measured {
                proto.period = self.measured_period(ctx).unwrap_or(self.natural_period);
            }
            let (proto, params) = on_broadcast(&proto, &self.params, delta, t, ctx.settings.period_mode, &mut self.rng)?;
            self.proto = proto;
            self.alpha0 = proto.alpha;
            self.alpha_origin = t;
            self.set_params(params)?;
        } else {
            let params = self.params.with_setpoint(self.params.setpoint() + delta)?;
            self.set_params(params)?;
        }
        self.reentered = false;
        self.track_comfort();
        if self.gap(t, self.theta) <= 0.0 {
            self.natural_switch();
        }
        Ok(())
    }

    fn set_params(&mut self, params: TclParameters) -> Result<()> {
        self.params = params;
        self.eq_on = params.equilibrium(Status::On);
        self.eq_off = params.equilibrium(Status::Off);
        self.nominal = params.nominal_band();
        self.hull = (self.hull.0.min(self.nominal.0), self.hull.1.max(self.nominal.1));
        self.natural_period = natural_cycle(&params)?.period;
        Ok(())
    }

    /// Fraction of the natural cycle elapsed since the last switch-on.
    fn phase(&self) -> f64 {
        match self.last_on {
            Some(t_on) => {
                let x = (self.t - t_on) / self.natural_period;
                x - libm::floor(x)
            }
            None => {
                // no switch-on yet: place the device on the cycle by temperature
                let (lo, hi) = self.nominal;
                let u = ((self.theta - lo) / (hi - lo)).clamp(0.0, 1.0);
                let duty = self.on_fraction();
                let progress = match self.mode {
                    Mode::Cooling => 1.0 - u,
                    Mode::Heating => u,
                };
                if self.status.is_on() {
                    duty * progress
                } else {
                    duty + (1.0 - duty) * (1.0 - progress)
                }
            }
        }
    }

    fn on_fraction(&self) -> f64 {
        natural_cycle(&self.params).map(|c| c.duty).unwrap_or(0.5)
    }
}

fn step_devices(devices: &mut [Device], to: f64, ctx: &Ctx) -> Vec<bool> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        devices.par_iter_mut().map(|d| d.advance(to, ctx)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        devices.iter_mut().map(|d| d.advance(to, ctx)).collect()
    }
}

struct Engine {
    devices: Vec<Device>,
    ledger: PowerEventLedger,
    timing_history: Vec<TimingSnapshot>,
    ctx: Ctx,
    batch: Vec<LedgerEvent>,
}

impl Engine {
    fn flush(&mut self, i: usize) {
        for e in self.devices[i].pending.drain(..) {
            self.ledger.insert(e);
        }
    }

    /// Advance every device to `to`, closing protocol periods in time order.
    fn segment(&mut self, to: f64) {
        let stopped = step_devices(&mut self.devices, to, &self.ctx);
        for d in &mut self.devices {
            self.batch.append(&mut d.pending);
        }
        self.ledger.extend(&mut self.batch);

        let mut paused: Vec<usize> = stopped
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect();
        let mut behind: Vec<usize> = Vec::new();
        loop {
            if paused.is_empty() {
                let mut again = Vec::new();
                for &i in &behind {
                    if self.devices[i].advance(to, &self.ctx) {
                        again.push(i);
                    }
                    self.flush(i);
                }
                behind.retain(|i| !again.contains(i));
                if again.is_empty() {
                    break;
                }
                paused = again;
                continue;
            }
            let tb = paused
                .iter()
                .map(|&i| self.devices[i].proto.period_end())
                .fold(f64::INFINITY, f64::min);
            let mut newly = Vec::new();
            for &i in &behind {
                if self.devices[i].advance(tb, &self.ctx) {
                    newly.push(i);
                }
                self.flush(i);
            }
            if !newly.is_empty() {
                behind.retain(|i| !newly.contains(i));
                paused.extend(newly);
                continue;
            }
            let mut group: Vec<usize> = Vec::new();
            paused.retain(|&i| {
                if self.devices[i].proto.period_end() == tb {
                    group.push(i);
                    false
                } else {
                    true
                }
            });
            group.sort_unstable();
            let observations: Vec<Observation> = group
                .iter()
                .map(|&i| observe_neighbors(&self.ledger, &self.devices[i].query(&self.ctx)))
                .collect();
            for (&i, obs) in group.iter().zip(observations) {
                self.devices[i].close(obs, &self.ctx);
            }
            if group.len() == self.devices.len() {
                let first = &self.devices[0].proto;
                self.timing_history.push(TimingSnapshot {
                    time: tb,
                    period: first.period,
                    t_enforced: self.devices.iter().map(|d| d.proto.t_enforced).collect(),
                    anchors: self.devices.iter().filter(|d| d.proto.is_anchor).count(),
                });
            }
            behind.extend(group);
        }
    }
}

/// Simulate a population. Deterministic in `config.seed`, and identical
/// with or without the `parallel` feature.
pub fn run(config: &ScenarioConfig) -> Result<SimulationTrace> {
    let population = sample_population(config)?;
    let h = config.reporting_step;
    let ctx = Ctx {
        h,
        tol: config.event_tolerance,
        protocol: config.protocol_enabled,
        settings: config.protocol,
        min_period: 10.0 * h,
    };
    let mut devices = Vec::with_capacity(population.len());
    for (i, (params, state, proto)) in population.into_iter().enumerate() {
        devices.push(Device::new(i as u32, params, state, proto, config.seed, h)?);
    }
    let n = devices.len();
    let capacity = devices.iter().map(|d| d.kw).sum();
    let sample_count = config.temperature_sample.min(n);
    let temp_devices: Vec<u32> = (0..sample_count).map(|j| (j * n / sample_count) as u32).collect();

    let steps = libm::round(config.horizon / h) as usize;
    let order_every = (libm::round(config.order_interval / h) as usize).max(1);
    let mut trace = SimulationTrace {
        times: Vec::with_capacity(steps + 1),
        power: Vec::with_capacity(steps + 1),
        temp_devices,
        temps: Vec::with_capacity((steps + 1) * sample_count),
        ledger: PowerEventLedger::new(),
        timing_history: Vec::new(),
        order_times: Vec::new(),
        order: Vec::new(),
        switch_counts: Vec::new(),
        comfort: ComfortReport::default(),
        capacity,
    };
    let mut engine = Engine {
        devices,
        ledger: PowerEventLedger::new(),
        timing_history: Vec::new(),
        ctx,
        batch: Vec::new(),
    };

    let mut broadcasts = config.broadcasts.iter().peekable();
    let mut phases = Vec::with_capacity(n);
    for k in 0..=steps {
        let t_end = k as f64 * h;
        while let Some(b) = broadcasts.next_if(|b| b.time <= t_end) {
            engine.segment(b.time);
            for d in &mut engine.devices {
                d.broadcast(b.delta_setpoint, &engine.ctx)?;
                engine.batch.append(&mut d.pending);
            }
            engine.ledger.extend(&mut engine.batch);
        }
        engine.segment(t_end);

        trace.times.push(t_end);
        trace.power.push(engine.devices.iter().map(Device::power).sum());
        for &j in &trace.temp_devices {
            trace.temps.push(engine.devices[j as usize].theta);
        }
        if k % order_every == 0 {
            phases.clear();
            phases.extend(engine.devices.iter().map(Device::phase));
            trace.order_times.push(t_end);
            trace.order.push(super::metrics::order_parameter(&phases));
        }
    }

    trace.switch_counts = engine.devices.iter().map(|d| d.switches).collect();
    trace.comfort = engine.devices.iter().fold(ComfortReport::default(), |acc, d| ComfortReport {
        max_hull_excursion: acc.max_hull_excursion.max(d.hull_exc),
        max_band_excursion: acc.max_band_excursion.max(d.band_exc),
    });
    trace.ledger = engine.ledger;
    trace.timing_history = engine.timing_history;
    Ok(trace)
}
