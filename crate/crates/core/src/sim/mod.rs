//! Synthetic truck simulator, scenarios, controllers and training-trip synthesis.

pub mod controller;
pub mod scenario;
pub mod trace;
pub mod trips;
pub mod vehicle;

pub use controller::{run_cruise, run_npc, SimConfig};
pub use scenario::{generate_scenarios, Scenario, ScenarioConfig};
pub use trace::{SimTrace, TraceRow};
pub use vehicle::{engine_speed, fuel_rate, step, BsfcMap, SimState, VehicleParams};
