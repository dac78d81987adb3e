#![cfg(feature = "parallel")]

use tcl_desync_core::population::{run, Heterogeneity, ScenarioConfig};

fn run_on(threads: usize, config: &ScenarioConfig) -> tcl_desync_core::population::SimulationTrace {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| run(config).unwrap())
}

#[test]
fn worker_count_does_not_change_results() {
    let mut config = ScenarioConfig::reference(500, 14.0);
    config.protocol_enabled = true;
    config.heterogeneity.push(Heterogeneity::capacitance(5.0, 0.5));
    let one = run_on(1, &config);
    assert_eq!(one, run_on(4, &config));
    assert_eq!(one, run_on(7, &config));
}
