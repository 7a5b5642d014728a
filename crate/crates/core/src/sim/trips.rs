//! Synthetic training corpus: cruise-controlled drives on long random routes
//! with randomized target speed, mass and a slowly drifting speed set-point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::controller::{drive, records, CruiseController, Driver, SimConfig};
use super::scenario::{hex_digest, wave_profile};
use super::trace::TraceRow;
use super::vehicle::{BsfcMap, SimState, VehicleParams};
use crate::data::TripLog;
use crate::error::{NpcError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripConfig {
    pub trips: usize,
    pub route_length: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Relative mass jitter, uniform in `[-x, x]`.
    pub mass_jitter: f64,
    /// Stationary std-dev of the set-point noise, m/s.
    pub noise_std: f64,
    /// Correlation time of the set-point noise, s.
    pub noise_tau: f64,
    pub max_slope: f64,
}

impl Default for TripConfig {
    fn default() -> Self {
        TripConfig {
            trips: 8,
            route_length: 40_000.0,
            v_min: 17.0,
            v_max: 24.0,
            mass_jitter: 0.2,
            noise_std: 0.6,
            noise_tau: 30.0,
            max_slope: 0.05,
        }
    }
}

impl TripConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trips == 0
            || !(self.route_length > 0.0)
            || !(self.v_min > 0.0 && self.v_max >= self.v_min)
            || !(0.0..1.0).contains(&self.mass_jitter)
            || self.noise_std < 0.0
            || !(self.noise_tau > 0.0)
            || !(self.max_slope > 0.0)
        {
            return Err(NpcError::Config("trip synthesis parameters out of range".into()));
        }
        Ok(())
    }

    pub fn total_length(&self) -> f64 {
        self.trips as f64 * self.route_length
    }
}

/// PI cruise whose set-point follows an Ornstein-Uhlenbeck process around
/// the trip's target speed.
struct NoisyCruise<'a> {
    pi: CruiseController,
    vehicle: &'a VehicleParams,
    noise: f64,
    std: f64,
    tau: f64,
    rng: ChaCha8Rng,
}

impl Driver for NoisyCruise<'_> {
    fn command(&mut self, state: &SimState, dt: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        self.noise += -self.noise / self.tau * dt + self.std * (2.0 * dt / self.tau).sqrt() * z;
        let target = self.pi.v_target + self.noise;
        self.pi.command_towards(target, state.v, dt, self.vehicle)
    }

    fn on_row(&mut self, _row: &TraceRow) -> Result<()> {
        Ok(())
    }
}

pub fn synth_trips(
    cfg: &TripConfig,
    base: &VehicleParams,
    map: &BsfcMap,
    sim: &SimConfig,
    delta_s: f64,
    seed: u64,
) -> Result<Vec<TripLog>> {
    cfg.validate()?;
    sim.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let n_points = (cfg.route_length / delta_s).round() as usize + 1;
    (0..cfg.trips)
        .map(|_| {
            let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
            let components = rng.gen_range(2..=4);
            let route = wave_profile(n_points, delta_s, components, cfg.max_slope, &mut rng)?;
            let v_target = rng.gen_range(cfg.v_min..=cfg.v_max);
            let vehicle = VehicleParams {
                mass: base.mass * (1.0 + rng.gen_range(-cfg.mass_jitter..=cfg.mass_jitter)),
                ..base.clone()
            };
            let pi = CruiseController::new(sim.kp, sim.ki, v_target)
                .bumpless(vehicle.steady_torque(v_target, route.slope[1]));
            let mut driver = NoisyCruise {
                pi,
                vehicle: &vehicle,
                noise: 0.0,
                std: cfg.noise_std,
                tau: cfg.noise_tau,
                rng: ChaCha8Rng::seed_from_u64(rng.gen()),
            };
            let log = drive(&route, v_target, &mut driver, &vehicle, map, sim.dt)?;
            TripLog::new(delta_s, records(&log))
        })
        .collect()
}

/// Hex SHA-256 over the trips' CSV text, in order.
pub fn corpus_hash(trips: &[TripLog]) -> String {
    let mut h = Sha256::new();
    for t in trips {
        h.update(t.to_csv_string().as_bytes());
    }
    hex_digest(h)
}
