use proptest::prelude::*;
use tcl_desync_core::population::{run, sample_population, Heterogeneity, InitialStatus, ScenarioConfig};
use tcl_desync_core::protocol::{BroadcastEvent, Direction, ObservationPolicy, PeriodMode, SwitchKind};
use tcl_desync_core::thermostat::{natural_cycle, TclParameters};

fn small(n: usize, horizon: f64, seed: u64, protocol: bool) -> ScenarioConfig {
    let mut c = ScenarioConfig::reference(n, horizon);
    c.broadcasts = vec![BroadcastEvent { time: 2.0, delta_setpoint: 0.5 }];
    c.seed = seed;
    c.protocol_enabled = protocol;
    c
}

/// Net on-count reconstructed from the ledger at each grid time.
fn on_counts_from_ledger(config: &ScenarioConfig, trace: &tcl_desync_core::population::SimulationTrace) -> Vec<i64> {
    let pop = sample_population(config).unwrap();
    let mut on: i64 = pop.iter().filter(|(_, s, _)| s.status.is_on()).count() as i64;
    let events = trace.ledger.events();
    let mut j = 0;
    let mut out = Vec::with_capacity(trace.times.len());
    for &t in &trace.times {
        while j < events.len() && events[j].time <= t {
            on += match events[j].direction {
                Direction::Up => 1,
                Direction::Down => -1,
            };
            j += 1;
        }
        out.push(on);
    }
    out
}

#[test]
fn single_device_follows_closed_form_cycle() {
    let mut c = ScenarioConfig::reference(1, 10.0);
    c.broadcasts.clear();
    let trace = run(&c).unwrap();
    let cycle = natural_cycle(&TclParameters::reference()).unwrap();
    let events = trace.ledger.events();
    assert!(events.len() > 8);
    // skip the partial first cycle
    for pair in events[1..].windows(2) {
        let d = pair[1].time - pair[0].time;
        let expect = match pair[0].direction {
            Direction::Up => cycle.on_time,
            Direction::Down => cycle.off_time,
        };
        assert!((d - expect).abs() < 1e-8, "{d} vs {expect}");
    }
    assert!(trace.power.iter().all(|&p| p == 0.0 || p == 5.6));
}

#[test]
fn homogeneous_mean_matches_duty() {
    let mut c = ScenarioConfig::reference(2000, 16.0);
    c.broadcasts.clear();
    let trace = run(&c).unwrap();
    let cycle = natural_cycle(&TclParameters::reference()).unwrap();
    // whole periods after the first: every device is periodic, so the
    // window average is the duty up to grid quantization
    let start = 2.0 * cycle.period;
    let end = start + 5.0 * cycle.period;
    let mean = trace.amplitude(start, end).unwrap().mean;
    let ratio = mean / trace.capacity;
    assert!((ratio / cycle.duty - 1.0).abs() < 0.005, "{ratio} vs {}", cycle.duty);
}

#[test]
fn all_off_start_synchronizes_power() {
    let mut c = ScenarioConfig::reference(100, 5.0);
    c.broadcasts.clear();
    c.initial_status = InitialStatus::AllOff;
    let trace = run(&c).unwrap();
    assert_eq!(trace.power[0], 0.0);
}

#[test]
fn enforced_timings_spread_evenly() {
    let mut c = ScenarioConfig::reference(8, 300.0);
    c.protocol_enabled = true;
    c.protocol.observation = ObservationPolicy::EnforcedOnly;
    let trace = run(&c).unwrap();
    let last = trace.timing_history.last().unwrap();
    let mut t = last.t_enforced.clone();
    t.sort_by(f64::total_cmp);
    assert_eq!(last.anchors, 1);
    for (j, x) in t.iter().enumerate() {
        let target = j as f64 * last.period / 8.0;
        assert!((x - target).abs() < 1e-4 * last.period, "{j}: {x} vs {target}");
    }
}

#[test]
fn heterogeneous_run_is_comfortable_and_complete() {
    let mut c = small(300, 8.0, 5, true);
    c.heterogeneity.push(Heterogeneity::capacitance(5.0, 0.5));
    c.protocol.period_mode = PeriodMode::Measured;
    let trace = run(&c).unwrap();
    assert!(trace.comfort.max_hull_excursion < 1e-6);
    assert_eq!(trace.ledger.len() as u64, trace.total_switches());
    assert!(trace.ledger.events().iter().any(|e| e.kind == SwitchKind::Enforced));
}

#[test]
fn temperature_sample_is_spread_over_indices() {
    let trace = run(&small(100, 2.5, 1, false)).unwrap();
    assert_eq!(trace.temp_devices.len(), 25);
    assert_eq!(trace.temp_devices[1], 4);
    assert_eq!(trace.temps.len(), trace.times.len() * 25);
    let t0 = trace.temperature(0, 0);
    assert!((19.5..=20.5).contains(&t0));
}

#[test]
fn protocol_step_spreads_first_peak() {
    let off = run(&small(2000, 5.0, 3, false)).unwrap();
    let on = run(&small(2000, 5.0, 3, true)).unwrap();
    let (_, p_off) = off.peak(2.0, 3.9).unwrap();
    let (_, p_on) = on.peak(2.0, 3.9).unwrap();
    assert!(p_on < p_off, "{p_on} vs {p_off}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn runs_are_deterministic(seed in 0u64..1000, protocol in any::<bool>()) {
        let c = small(40, 4.0, seed, protocol);
        prop_assert_eq!(run(&c).unwrap(), run(&c).unwrap());
    }

    #[test]
    fn ledger_accounts_for_every_switch(seed in 0u64..1000, protocol in any::<bool>()) {
        let c = small(40, 5.0, seed, protocol);
        let trace = run(&c).unwrap();
        prop_assert_eq!(trace.ledger.len() as u64, trace.total_switches());
        // per device, switches alternate direction
        let mut last: Vec<Option<Direction>> = vec![None; 40];
        for e in trace.ledger.events() {
            let d = &mut last[e.device as usize];
            prop_assert!(*d != Some(e.direction));
            *d = Some(e.direction);
        }
        // events are time ordered
        prop_assert!(trace.ledger.events().windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn power_matches_ledger_on_count(seed in 0u64..1000, protocol in any::<bool>()) {
        let c = small(40, 5.0, seed, protocol);
        let trace = run(&c).unwrap();
        let counts = on_counts_from_ledger(&c, &trace);
        for (p, n) in trace.power.iter().zip(counts) {
            prop_assert!((p - n as f64 * 5.6).abs() < 1e-9);
        }
    }

    #[test]
    fn temperatures_stay_in_band_hull(seed in 0u64..1000, protocol in any::<bool>(), delta in -0.8f64..0.8) {
        let mut c = small(30, 6.0, seed, protocol);
        c.broadcasts[0].delta_setpoint = delta;
        let trace = run(&c).unwrap();
        prop_assert!(trace.comfort.max_hull_excursion < 1e-6);
        prop_assert!(trace.comfort.max_band_excursion < 1e-6);
        let lo = 19.5 + delta.min(0.0);
        let hi = 20.5 + delta.max(0.0);
        prop_assert!(trace.temps.iter().all(|&t| t > lo - 1e-6 && t < hi + 1e-6));
    }
}
