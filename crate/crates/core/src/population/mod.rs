//! Population engine: scenario sampling, event-refined simulation of many
//! devices sharing one power-event ledger, and synchronization metrics.

mod engine;
pub mod metrics;
mod scenario;

pub use engine::{run, ComfortReport, SimulationTrace, TimingSnapshot};
pub use metrics::{order_parameter, oscillation_amplitude, peak_in_window, settling_time, Amplitude};
pub use scenario::{
    sample_population, Distribution, Heterogeneity, InitialStatus, ParamField, ScenarioConfig, MAX_REDRAWS,
};
