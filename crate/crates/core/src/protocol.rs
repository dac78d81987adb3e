//! Per-device desynchronization protocol.
//!
//! Stage 1: on every setpoint broadcast a device narrows its band by a random
//! `α ∈ [0, Δ/2)` which then decays as `α(t) = α₀·e^(−a·t)`.
//!
//! Stage 2: once per period the device forces a status toggle at its own
//! phase `t_enforced`, watches the aggregate power-change timestamps for the
//! nearest foreign transition before and after that phase, and moves
//! `t_enforced` to their midpoint for the next period. A device that sees no
//! foreign transition ahead of its own phase pins itself to phase 0.
//!
//! Everything a device consumes here is its own state, its own temperature,
//! broadcast setpoint steps and the power ledger timestamps.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::thermostat::{
    band_from_setpoint, must_switch, natural_cycle, Mode, Status, TclParameters, ThermostatState,
};

/// Index of a device inside a simulation. A device only ever uses its own.
pub type DeviceKey = u32;

/// Sign of an aggregate power change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn of_toggle(to: Status) -> Direction {
        if to.is_on() {
            Direction::Up
        } else {
            Direction::Down
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

/// What caused a switch. Simulation bookkeeping; only the
/// [`ObservationPolicy::EnforcedOnly`] policy reads it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SwitchKind {
    /// Hysteresis threshold crossing.
    Natural,
    /// Stage-2 forced toggle.
    Enforced,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerEvent {
    pub time: f64,
    pub delta_kw: f64,
    pub direction: Direction,
    pub device: DeviceKey,
    pub kind: SwitchKind,
}

impl LedgerEvent {
    fn order_key(&self) -> (f64, DeviceKey) {
        (self.time, self.device)
    }
}

/// Append-mostly, time-ordered list of aggregate power changes.
///
/// Entries are kept sorted by `(time, device)`; the device index is the
/// deterministic tie-break for simultaneous switches.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PowerEventLedger {
    events: Vec<LedgerEvent>,
}

fn before(a: &LedgerEvent, b: &LedgerEvent) -> bool {
    let (ta, da) = a.order_key();
    let (tb, db) = b.order_key();
    ta < tb || (ta == tb && da < db)
}

impl PowerEventLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Insert keeping the order. Cheap when `event` belongs near the tail.
    pub fn insert(&mut self, event: LedgerEvent) {
        let mut at = self.events.len();
        while at > 0 && before(&event, &self.events[at - 1]) {
            at -= 1;
        }
        self.events.insert(at, event);
    }

    /// Merge a batch of events, all at or after the current tail time.
    pub fn extend(&mut self, batch: &mut Vec<LedgerEvent>) {
        batch.sort_by(|a, b| {
            a.time
                .total_cmp(&b.time)
                .then_with(|| a.device.cmp(&b.device))
        });
        if let (Some(last), Some(first)) = (self.events.last(), batch.first()) {
            if before(first, last) {
                for e in batch.drain(..) {
                    self.insert(e);
                }
                return;
            }
        }
        self.events.append(batch);
    }

    /// Events with `start <= time < end`.
    pub fn window(&self, start: f64, end: f64) -> &[LedgerEvent] {
        let lo = self.events.partition_point(|e| e.time < start);
        let hi = self.events.partition_point(|e| e.time < end);
        &self.events[lo..hi.max(lo)]
    }
}

/// A utility-to-devices setpoint step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BroadcastEvent {
    pub time: f64,
    pub delta_setpoint: f64,
}

/// Which ledger entries a device treats as neighbour transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObservationPolicy {
    /// Every power change by another device.
    #[default]
    AllTransitions,
    /// Only changes in the same direction as the device's own enforced toggle.
    SameDirection,
    /// Only other devices' enforced toggles.
    EnforcedOnly,
}

/// How a device treats the period boundary when no foreign transition
/// precedes its own phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PeriodBoundary {
    /// Report first-in-cycle; the device then anchors itself at phase 0.
    #[default]
    Anchor,
    /// Use the last transition of the window shifted back by one period.
    Wrap,
}

/// Where a device's period `T` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PeriodMode {
    /// Closed-form natural period of the device at its current setpoint.
    #[default]
    APriori,
    /// Time between the device's two latest same-direction natural switches
    /// with no enforced switch in between.
    Measured,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolSettings {
    /// Decay constant `a` of the band narrowing, 1/h.
    pub decay_rate: f64,
    pub observation: ObservationPolicy,
    pub boundary: PeriodBoundary,
    pub period_mode: PeriodMode,
}

impl Default for ProtocolSettings {
    fn default() -> Self {
        Self {
            decay_rate: 1.0,
            observation: ObservationPolicy::AllTransitions,
            boundary: PeriodBoundary::Anchor,
            period_mode: PeriodMode::APriori,
        }
    }
}

/// Protocol variables of one device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolState {
    /// Current band narrowing, °C.
    pub alpha: f64,
    /// Decay constant `a`, 1/h.
    pub decay_rate: f64,
    /// Enforced switch phase within the period, `[0, period)`.
    pub t_enforced: f64,
    /// Period estimate `T`, hours.
    pub period: f64,
    /// Absolute time at which the current period started.
    pub period_start: f64,
    pub t_prev: Option<f64>,
    pub t_next: Option<f64>,
    pub is_anchor: bool,
    /// Enforced switch already handled (fired or skipped) this period.
    pub enforced_done: bool,
    /// Stage 2 runs only after the first broadcast.
    pub active: bool,
}

impl ProtocolState {
    pub fn idle(decay_rate: f64, period: f64) -> Self {
        Self {
            alpha: 0.0,
            decay_rate,
            t_enforced: 0.0,
            period,
            period_start: 0.0,
            t_prev: None,
            t_next: None,
            is_anchor: false,
            enforced_done: false,
            active: false,
        }
    }

    /// Elapsed time in the current period at absolute time `t`.
    pub fn phase_clock(&self, t: f64) -> f64 {
        t - self.period_start
    }

    pub fn enforced_at(&self) -> f64 {
        self.period_start + self.t_enforced
    }

    pub fn period_end(&self) -> f64 {
        self.period_start + self.period
    }
}

/// Handle a setpoint broadcast with explicit draws `alpha ∈ [0, Δ/2)` and
/// `t0 ∈ [0, period)`.
///
/// In [`PeriodMode::APriori`] the period is recomputed for the new setpoint;
/// otherwise the running estimate is kept.
pub fn apply_broadcast(
    state: &ProtocolState,
    params: &TclParameters,
    delta: f64,
    now: f64,
    period_mode: PeriodMode,
    alpha: f64,
    t0: f64,
) -> Result<(ProtocolState, TclParameters)> {
    if !delta.is_finite() {
        return Err(invalid(format!("setpoint step {delta} is not finite")));
    }
    let params = params.with_setpoint(params.setpoint() + delta)?;
    band_from_setpoint(params.setpoint(), params.deadband(), alpha)?;
    let period = match period_mode {
        PeriodMode::APriori => natural_cycle(&params)?.period,
        PeriodMode::Measured => state.period,
    };
    if !(0.0..period).contains(&t0) {
        return Err(invalid(format!("enforced phase {t0} outside [0, {period})")));
    }
    Ok((
        ProtocolState {
            alpha,
            decay_rate: state.decay_rate,
            t_enforced: t0,
            period,
            period_start: now,
            t_prev: None,
            t_next: None,
            is_anchor: false,
            enforced_done: false,
            active: true,
        },
        params,
    ))
}

/// Handle a setpoint broadcast, drawing `α` and `t₀` uniformly from `rng`.
pub fn on_broadcast<R: Rng + ?Sized>(
    state: &ProtocolState,
    params: &TclParameters,
    delta: f64,
    now: f64,
    period_mode: PeriodMode,
    rng: &mut R,
) -> Result<(ProtocolState, TclParameters)> {
    let alpha = rng.random::<f64>() * params.deadband() / 2.0;
    let period = match period_mode {
        PeriodMode::APriori => natural_cycle(&params.with_setpoint(params.setpoint() + delta)?)?.period,
        PeriodMode::Measured => state.period,
    };
    let t0 = rng.random::<f64>() * period;
    apply_broadcast(state, params, delta, now, period_mode, alpha, t0)
}

/// Relax the narrowing over `dt` hours.
pub fn decay_alpha(state: &ProtocolState, dt: f64) -> Result<ProtocolState> {
    if !(dt >= 0.0) {
        return Err(invalid(format!("negative time step {dt}")));
    }
    Ok(ProtocolState {
        alpha: state.alpha * libm::exp(-state.decay_rate * dt),
        ..*state
    })
}

/// Band a device switches on, given its narrowing.
pub fn effective_band(params: &TclParameters, alpha: f64) -> Result<(f64, f64)> {
    band_from_setpoint(params.setpoint(), params.deadband(), alpha)
}

/// What a device is looking for in the ledger at the end of a period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationQuery {
    pub own: DeviceKey,
    /// Absolute time of the device's enforced switch (fired or not).
    pub own_time: f64,
    /// Direction of the device's own enforced toggle.
    pub own_direction: Direction,
    pub period_start: f64,
    pub period: f64,
    pub policy: ObservationPolicy,
    pub boundary: PeriodBoundary,
}

/// Neighbour transitions as phases relative to the period start.
///
/// `prev` may be negative (wrapped from the end of the window) and `next`
/// may exceed the period (wrapped from the start).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    Neighbors { prev: f64, next: f64 },
    /// No foreign transition ahead of the device's own phase.
    FirstInCycle { next: f64 },
    /// No qualifying foreign transition at all.
    Empty,
}

fn qualifies(e: &LedgerEvent, q: &ObservationQuery) -> bool {
    if e.device == q.own {
        return false;
    }
    match q.policy {
        ObservationPolicy::AllTransitions => true,
        ObservationPolicy::SameDirection => e.direction == q.own_direction,
        ObservationPolicy::EnforcedOnly => e.kind == SwitchKind::Enforced,
    }
}

/// Find the foreign transitions bracketing the device's own switch in the
/// period `[period_start, period_start + period)`.
///
/// Simultaneous events are split by ledger order: a foreign entry stored
/// ahead of the device's own enforced switch counts as preceding it.
pub fn observe_neighbors(ledger: &PowerEventLedger, q: &ObservationQuery) -> Observation {
    let window = ledger.window(q.period_start, q.period_start + q.period);
    let mut split = window.partition_point(|e| e.time < q.own_time);
    if let Some(offset) = window[split..]
        .iter()
        .take_while(|e| e.time == q.own_time)
        .position(|e| e.device == q.own)
    {
        split += offset;
    }
    let (head, tail) = window.split_at(split);
    let phase = |e: &LedgerEvent| e.time - q.period_start;

    let next = tail
        .iter()
        .find(|e| qualifies(e, q))
        .map(phase)
        .or_else(|| head.iter().find(|e| qualifies(e, q)).map(|e| phase(e) + q.period));
    let Some(next) = next else {
        return Observation::Empty;
    };

    match head.iter().rev().find(|e| qualifies(e, q)).map(phase) {
        Some(prev) => Observation::Neighbors { prev, next },
        None => match q.boundary {
            PeriodBoundary::Anchor => Observation::FirstInCycle { next },
            PeriodBoundary::Wrap => {
                let prev = tail
                    .iter()
                    .rev()
                    .find(|e| qualifies(e, q))
                    .map(|e| phase(e) - q.period)
                    .expect("a qualifying event exists");
                Observation::Neighbors { prev, next }
            }
        },
    }
}

/// Midpoint of the neighbour transitions, reduced into `[0, period)`.
pub fn update_timing(t_prev: f64, t_next: f64, period: f64) -> f64 {
    let mid = 0.5 * (t_prev + t_next);
    let r = mid % period;
    let r = if r < 0.0 { r + period } else { r };
    if r >= period {
        0.0
    } else {
        r
    }
}

pub fn declare_anchor(state: &ProtocolState) -> ProtocolState {
    ProtocolState {
        is_anchor: true,
        t_enforced: 0.0,
        ..*state
    }
}

/// Close the current period: fold the observation into the next enforced
/// phase and start a new period of length `next_period`.
pub fn close_period(state: &ProtocolState, observation: Observation, next_period: f64) -> ProtocolState {
    let mut next = *state;
    match observation {
        Observation::Neighbors { prev, next: after } => {
            next.t_prev = Some(prev);
            next.t_next = Some(after);
            if !state.is_anchor {
                next.t_enforced = update_timing(prev, after, state.period);
            }
        }
        Observation::FirstInCycle { next: after } => {
            next.t_prev = None;
            next.t_next = Some(after);
            next = declare_anchor(&next);
        }
        Observation::Empty => {
            next.t_prev = None;
            next.t_next = None;
        }
    }
    next.period_start = state.period_end();
    next.period = next_period;
    if next.t_enforced >= next_period {
        next.t_enforced %= next_period;
    }
    next.enforced_done = false;
    next
}

/// Try the stage-2 toggle. Returns the new thermostat state and whether the
/// toggle happened; it is skipped when the hysteresis rule would immediately
/// undo it, which is exactly when it would push the temperature out of band.
pub fn enforced_switch(state: ThermostatState, mode: Mode) -> (ThermostatState, bool) {
    let to = state.status.toggled();
    if must_switch(mode, to, state.theta, state.band_lo, state.band_hi) {
        (state, false)
    } else {
        (ThermostatState { status: to, ..state }, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn ev(time: f64, device: DeviceKey) -> LedgerEvent {
        LedgerEvent {
            time,
            delta_kw: 5.6,
            direction: Direction::Up,
            device,
            kind: SwitchKind::Natural,
        }
    }

    fn ledger(events: &[(f64, DeviceKey)]) -> PowerEventLedger {
        let mut l = PowerEventLedger::new();
        for &(t, d) in events {
            l.insert(ev(t, d));
        }
        l
    }

    fn query(own: DeviceKey, own_time: f64, boundary: PeriodBoundary) -> ObservationQuery {
        ObservationQuery {
            own,
            own_time,
            own_direction: Direction::Up,
            period_start: 0.0,
            period: 1.0,
            policy: ObservationPolicy::AllTransitions,
            boundary,
        }
    }

    #[test]
    fn broadcast_with_fixed_draws() {
        let idle = ProtocolState::idle(1.0, 1.75);
        let (s, p) = apply_broadcast(
            &idle,
            &TclParameters::reference(),
            0.5,
            10.0,
            PeriodMode::Measured,
            0.25,
            0.9,
        )
        .unwrap();
        assert_eq!(effective_band(&p, s.alpha).unwrap(), (20.25, 20.75));
        assert_eq!(s.t_enforced, 0.9);
        assert_eq!(s.period_start, 10.0);
        assert!(s.active && !s.is_anchor);

        let (s, p) = apply_broadcast(
            &idle,
            &TclParameters::reference(),
            0.0,
            10.0,
            PeriodMode::APriori,
            0.0,
            0.0,
        )
        .unwrap();
        assert_eq!(effective_band(&p, s.alpha).unwrap(), (19.5, 20.5));
        assert!((s.period - natural_cycle(&p).unwrap().period).abs() < 1e-15);
    }

    #[test]
    fn near_maximal_narrowing_leaves_a_sliver() {
        let idle = ProtocolState::idle(1.0, 1.75);
        let alpha = 0.5 - 1e-9;
        let (s, p) = apply_broadcast(&idle, &TclParameters::reference(), 0.5, 0.0, PeriodMode::APriori, alpha, 0.1)
            .unwrap();
        let (lo, hi) = effective_band(&p, s.alpha).unwrap();
        assert!(hi > lo && hi - lo < 1e-8);
        assert!(apply_broadcast(&idle, &TclParameters::reference(), 0.5, 0.0, PeriodMode::APriori, 0.5, 0.1).is_err());
    }

    #[test]
    fn rng_broadcast_is_reproducible_and_in_range() {
        let idle = ProtocolState::idle(1.0, 1.75);
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let (sa, _) =
                on_broadcast(&idle, &TclParameters::reference(), 0.5, 3.0, PeriodMode::APriori, &mut a).unwrap();
            let (sb, _) =
                on_broadcast(&idle, &TclParameters::reference(), 0.5, 3.0, PeriodMode::APriori, &mut b).unwrap();
            assert_eq!(sa, sb);
            assert!((0.0..0.5).contains(&sa.alpha));
            assert!((0.0..sa.period).contains(&sa.t_enforced));
        }
    }

    #[test]
    fn decay_examples() {
        let mut s = ProtocolState::idle(0.0, 1.0);
        s.alpha = 0.3;
        assert_eq!(decay_alpha(&s, 123.0).unwrap().alpha, 0.3);

        let mut s = ProtocolState::idle(1.0, 1.0);
        s.alpha = 0.5;
        assert!((decay_alpha(&s, core::f64::consts::LN_2).unwrap().alpha - 0.25).abs() < 1e-15);

        s.alpha = 0.4;
        // 0.4·e^(−9.21) = 4.0014e-5
        let d = decay_alpha(&s, 9.21).unwrap();
        assert!(d.alpha < 4.01e-5);
        let (lo, hi) = effective_band(&TclParameters::reference(), d.alpha).unwrap();
        assert!((lo - 19.5).abs() < 1e-4 && (hi - 20.5).abs() < 1e-4);
        assert!(decay_alpha(&s, -1.0).is_err());
    }

    #[test]
    fn neighbors_direct() {
        let l = ledger(&[(0.2, 1), (0.5, 0), (0.8, 2)]);
        let obs = observe_neighbors(&l, &query(0, 0.5, PeriodBoundary::Anchor));
        assert_eq!(obs, Observation::Neighbors { prev: 0.2, next: 0.8 });
    }

    #[test]
    fn neighbors_wrap_matches_unrolled_brute_force() {
        let l = ledger(&[(0.2, 1), (0.5, 2)]);
        let obs = observe_neighbors(&l, &query(0, 0.1, PeriodBoundary::Wrap));
        // Unroll the periodic event pattern over three periods and take the
        // closest events on either side of the own switch.
        let unrolled: Vec<f64> = [-1.0, 0.0, 1.0]
            .iter()
            .flat_map(|k| [0.2 + k, 0.5 + k])
            .collect();
        let prev = unrolled.iter().copied().filter(|t| *t < 0.1).fold(f64::MIN, f64::max);
        let next = unrolled.iter().copied().filter(|t| *t > 0.1).fold(f64::MAX, f64::min);
        assert_eq!(obs, Observation::Neighbors { prev, next });
        assert!((prev - (0.5 - 1.0)).abs() < 1e-15);
        assert_eq!(next, 0.2);
    }

    #[test]
    fn neighbors_first_in_cycle_and_empty() {
        let l = ledger(&[(0.2, 1), (0.5, 2)]);
        assert_eq!(
            observe_neighbors(&l, &query(0, 0.05, PeriodBoundary::Anchor)),
            Observation::FirstInCycle { next: 0.2 }
        );
        let own_only = ledger(&[(0.3, 0)]);
        assert_eq!(
            observe_neighbors(&own_only, &query(0, 0.3, PeriodBoundary::Anchor)),
            Observation::Empty
        );
        assert_eq!(
            observe_neighbors(&PowerEventLedger::new(), &query(0, 0.3, PeriodBoundary::Wrap)),
            Observation::Empty
        );
    }

    #[test]
    fn next_wraps_to_following_period() {
        let l = ledger(&[(0.1, 1), (0.4, 2), (0.9, 0)]);
        assert_eq!(
            observe_neighbors(&l, &query(0, 0.9, PeriodBoundary::Anchor)),
            Observation::Neighbors { prev: 0.4, next: 1.1 }
        );
    }

    #[test]
    fn window_excludes_other_periods() {
        let l = ledger(&[(-0.3, 1), (0.5, 2), (1.2, 3)]);
        assert_eq!(
            observe_neighbors(&l, &query(0, 0.7, PeriodBoundary::Anchor)),
            Observation::Neighbors { prev: 0.5, next: 1.5 }
        );
    }

    #[test]
    fn policies_filter() {
        let mut l = PowerEventLedger::new();
        l.insert(LedgerEvent { time: 0.1, delta_kw: -5.6, direction: Direction::Down, device: 1, kind: SwitchKind::Natural });
        l.insert(LedgerEvent { time: 0.2, delta_kw: 5.6, direction: Direction::Up, device: 2, kind: SwitchKind::Enforced });
        l.insert(LedgerEvent { time: 0.6, delta_kw: 5.6, direction: Direction::Up, device: 3, kind: SwitchKind::Natural });
        l.insert(LedgerEvent { time: 0.7, delta_kw: -5.6, direction: Direction::Down, device: 4, kind: SwitchKind::Enforced });
        let mut q = query(0, 0.5, PeriodBoundary::Anchor);
        assert_eq!(observe_neighbors(&l, &q), Observation::Neighbors { prev: 0.2, next: 0.6 });
        q.policy = ObservationPolicy::SameDirection;
        q.own_direction = Direction::Down;
        assert_eq!(observe_neighbors(&l, &q), Observation::Neighbors { prev: 0.1, next: 0.7 });
        q.policy = ObservationPolicy::EnforcedOnly;
        assert_eq!(observe_neighbors(&l, &q), Observation::Neighbors { prev: 0.2, next: 0.7 });
    }

    #[test]
    fn simultaneous_switches_split_by_ledger_order() {
        // devices 0 and 1 both switch at 0.1; device 0 is stored first
        let l = ledger(&[(0.1, 1), (0.1, 0), (0.6, 2)]);
        assert_eq!(
            observe_neighbors(&l, &query(0, 0.1, PeriodBoundary::Anchor)),
            Observation::FirstInCycle { next: 0.1 }
        );
        assert!(matches!(
            observe_neighbors(&l, &query(1, 0.1, PeriodBoundary::Anchor)),
            Observation::Neighbors { .. }
        ));
    }

    #[test]
    fn timing_examples() {
        assert!((update_timing(0.2, 0.6, 1.0) - 0.4).abs() < 1e-15);
        assert_eq!(update_timing(0.3, 0.3, 1.0), 0.3);
        let t = 1.7;
        assert!((update_timing(-0.05 * t, 0.2 * t, t) - 0.075 * t).abs() < 1e-15);
        assert!((update_timing(0.9, 1.3, 1.0) - 0.1).abs() < 1e-15);
        assert!((update_timing(-0.4, 0.2, 1.0) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn anchor_is_sticky() {
        let mut s = ProtocolState::idle(1.0, 1.0);
        s.t_enforced = 0.37;
        let a = declare_anchor(&s);
        assert!(a.is_anchor && a.t_enforced == 0.0);
        let after = close_period(&a, Observation::Neighbors { prev: 0.2, next: 0.6 }, 1.0);
        assert_eq!(after.t_enforced, 0.0);
        assert!(after.is_anchor);
        assert_eq!(after.period_start, 1.0);
    }

    #[test]
    fn close_period_uses_midpoint() {
        let mut s = ProtocolState::idle(1.0, 2.0);
        s.t_enforced = 0.5;
        let n = close_period(&s, Observation::Neighbors { prev: 0.2, next: 1.0 }, 2.0);
        assert!((n.t_enforced - 0.6).abs() < 1e-15);
        let e = close_period(&s, Observation::Empty, 2.0);
        assert_eq!(e.t_enforced, 0.5);
        let f = close_period(&s, Observation::FirstInCycle { next: 0.7 }, 2.0);
        assert!(f.is_anchor && f.t_enforced == 0.0);
    }

    #[test]
    fn enforced_switch_cases() {
        let band = (19.5, 20.5);
        let mid_off = ThermostatState::new(20.0, Status::Off, band).unwrap();
        let (s, fired) = enforced_switch(mid_off, Mode::Cooling);
        assert!(fired && s.status == Status::On);

        let top_on = ThermostatState::new(20.5, Status::On, band).unwrap();
        let (s, fired) = enforced_switch(top_on, Mode::Cooling);
        assert!(!fired && s.status == Status::On);

        let bottom_off = ThermostatState::new(19.5, Status::Off, band).unwrap();
        assert!(!enforced_switch(bottom_off, Mode::Cooling).1);
        // heating mirrors
        assert!(!enforced_switch(ThermostatState::new(20.5, Status::Off, band).unwrap(), Mode::Heating).1);
        assert!(!enforced_switch(ThermostatState::new(19.5, Status::On, band).unwrap(), Mode::Heating).1);
    }

    #[test]
    fn ledger_keeps_order() {
        let mut l = ledger(&[(0.5, 3), (0.1, 2), (0.5, 1), (0.3, 0)]);
        let mut batch = vec![ev(0.7, 2), ev(0.6, 9), ev(0.6, 4)];
        l.extend(&mut batch);
        l.insert(ev(0.55, 5));
        let keys: Vec<(f64, DeviceKey)> = l.events().iter().map(|e| (e.time, e.device)).collect();
        assert_eq!(
            keys,
            vec![(0.1, 2), (0.3, 0), (0.5, 1), (0.5, 3), (0.55, 5), (0.6, 4), (0.6, 9), (0.7, 2)]
        );
        assert_eq!(l.window(0.3, 0.6).len(), 4);
    }

    proptest! {
        #[test]
        fn midpoint_lies_between(prev in -1.0..1.0f64, gap in 0.0..1.0f64) {
            let next = prev + gap;
            let t = update_timing(prev, next, 1.0);
            // compare on the unwrapped line
            let unwrapped = if t > next { t - 1.0 } else if t < prev { t + 1.0 } else { t };
            prop_assert!(unwrapped >= prev - 1e-12 && unwrapped <= next + 1e-12);
            prop_assert!((0.0..1.0).contains(&t));
        }

        #[test]
        fn alpha_decay_is_exponential(alpha in 0.0..0.5f64, a in 0.0..3.0f64, t1 in 0.0..5.0f64, t2 in 0.0..5.0f64) {
            let mut s = ProtocolState::idle(a, 1.0);
            s.alpha = alpha;
            let one = decay_alpha(&s, t1).unwrap();
            let two = decay_alpha(&one, t2).unwrap();
            prop_assert!(two.alpha <= one.alpha);
            prop_assert!((two.alpha - alpha * libm::exp(-a * (t1 + t2))).abs() < 1e-15);
        }
    }
}
