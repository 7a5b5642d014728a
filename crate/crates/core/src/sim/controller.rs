//! Closed-loop driving: the PI cruise baseline, the receding-horizon NPC
//! driver and the grid-exact simulation loop shared by both.

use serde::{Deserialize, Serialize};

use super::scenario::{lead_in_route, Scenario};
use super::trace::{Decision, SimTrace, TraceRow};
use super::vehicle::{step, BsfcMap, EnergyLedger, SimState, VehicleParams};
use crate::data::{RouteProfile, TripRecord};
use crate::error::{NpcError, Result};
use crate::future_sampler::{sample_futures, FutureConfig};
use crate::optimizer::{optimize, CostWeights, Predictor};
use crate::past_sampler::{refresh_due, select_primitives, PrimitiveSet, SamplerConfig, TripBuffer};

const S_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    /// Cruise-controlled approach driven before every scenario, in meters.
    pub lead_in: f64,
    pub lead_in_seed: u64,
    pub kp: f64,
    pub ki: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.1,
            lead_in: 15_000.0,
            lead_in_seed: 7,
            kp: 3000.0,
            ki: 50.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.lead_in >= 0.0 && self.kp >= 0.0 && self.ki > 0.0) {
            return Err(NpcError::Config("sim: dt and ki must be positive, lead_in and kp non-negative".into()));
        }
        Ok(())
    }
}

/// Speed-tracking PI controller (N·m per m/s) with conditional-integration
/// anti-windup.
#[derive(Clone, Debug, PartialEq)]
pub struct CruiseController {
    pub kp: f64,
    pub ki: f64,
    pub v_target: f64,
    integral: f64,
}

impl CruiseController {
    pub fn new(kp: f64, ki: f64, v_target: f64) -> Self {
        CruiseController {
            kp,
            ki,
            v_target,
            integral: 0.0,
        }
    }

    /// Starts from `torque` with zero error, so there is no initial kick.
    pub fn bumpless(mut self, torque: f64) -> Self {
        self.integral = torque / self.ki;
        self
    }

    pub fn command(&mut self, v: f64, dt: f64, p: &VehicleParams) -> f64 {
        self.command_towards(self.v_target, v, dt, p)
    }

    pub fn command_towards(&mut self, target: f64, v: f64, dt: f64, p: &VehicleParams) -> f64 {
        let e = target - v;
        let trial = self.kp * e + self.ki * (self.integral + e * dt);
        let saturated_high = trial > p.torque_max && e > 0.0;
        let saturated_low = trial < 0.0 && e < 0.0;
        if !(saturated_high || saturated_low) {
            self.integral += e * dt;
        }
        p.clamp_torque(self.kp * e + self.ki * self.integral)
    }
}

/// Supplies torque commands to [`drive`].
pub trait Driver {
    /// Torque for the next integration step.
    fn command(&mut self, state: &SimState, dt: f64) -> f64;

    /// Called at every grid point after its row is logged.
    fn on_row(&mut self, row: &TraceRow) -> Result<()>;
}

pub struct Cruise<'a> {
    pub pi: CruiseController,
    pub vehicle: &'a VehicleParams,
}

impl Driver for Cruise<'_> {
    fn command(&mut self, state: &SimState, dt: f64) -> f64 {
        self.pi.command(state.v, dt, self.vehicle)
    }

    fn on_row(&mut self, _row: &TraceRow) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct DriveLog {
    /// One row per grid point after the start, `s` in route coordinates.
    pub rows: Vec<TraceRow>,
    /// Cumulative energy and fuel integral at each row.
    pub energy_at: Vec<EnergyLedger>,
    pub integral_at: Vec<f64>,
}

/// Drives `route` from its first grid point at speed `v0` to its last,
/// landing an integration step exactly on every grid point.
pub fn drive(
    route: &RouteProfile,
    v0: f64,
    driver: &mut impl Driver,
    p: &VehicleParams,
    map: &BsfcMap,
    dt: f64,
) -> Result<DriveLog> {
    let mut st = SimState {
        s: route.start_s,
        v: v0,
        ..SimState::default()
    };
    let mut log = DriveLog::default();
    let mut energy = EnergyLedger::default();
    let mut integral = 0.0;
    let t_limit = 600.0 + 20.0 * route.length() / v0.max(1.0);
    for k in 1..route.len() {
        let target = route.s_at(k);
        let theta = route.slope[k];
        let (t0, fuel0, v_prev) = (st.t, st.fuel, st.v);
        let (mut torque_time, mut speed_time) = (0.0, 0.0);
        while st.s < target - S_TOL {
            let cmd = driver.command(&st, dt);
            let out = step(&st, cmd, theta, p, map, dt, Some(target));
            torque_time += out.state.torque * out.dt;
            speed_time += out.engine_speed * out.dt;
            integral += out.fuel_rate * out.dt;
            energy.add(&out.energy);
            st = out.state;
            if st.t > t_limit {
                return Err(NpcError::Numerical(format!(
                    "vehicle stalled near s = {:.0} m (v = {:.2} m/s)",
                    st.s, st.v
                )));
            }
        }
        st.s = target;
        let span = st.t - t0;
        let row = TraceRow {
            s: target,
            t: st.t,
            v: st.v,
            a: (st.v * st.v - v_prev * v_prev) / (2.0 * route.delta_s),
            theta,
            torque: torque_time / span,
            engine_speed: speed_time / span,
            fuel: st.fuel - fuel0,
            fuel_cum: st.fuel,
        };
        driver.on_row(&row)?;
        log.rows.push(row);
        log.energy_at.push(energy);
        log.integral_at.push(integral);
    }
    Ok(log)
}

fn ledger_diff(a: &EnergyLedger, b: &EnergyLedger) -> EnergyLedger {
    EnergyLedger {
        traction: a.traction - b.traction,
        resistive: a.resistive - b.resistive,
        grade: a.grade - b.grade,
        kinetic: a.kinetic - b.kinetic,
    }
}

/// Lead-in followed by the scenario, as one route.
pub fn full_route(scenario: &Scenario, cfg: &SimConfig) -> Result<(RouteProfile, usize)> {
    let d = scenario.profile.delta_s;
    let lead_points = (cfg.lead_in / d).round() as usize;
    if lead_points == 0 {
        return Ok((scenario.profile.clone(), 0));
    }
    let lead = lead_in_route(cfg.lead_in, d, cfg.lead_in_seed)?;
    Ok((lead.concat(&scenario.profile)?, lead_points))
}

/// Cuts the measured scenario part out of a full drive and rebases `s`, `t`
/// and cumulative fuel to its start.
#[allow(clippy::too_many_arguments)]
fn measured_trace(
    method: &str,
    scenario: &Scenario,
    route: &RouteProfile,
    lead_points: usize,
    log: &DriveLog,
    v0: f64,
    v_target: f64,
    p: &VehicleParams,
) -> SimTrace {
    let d = route.delta_s;
    let measured_points = (scenario.measured_length / d).round() as usize;
    // rows[i] sits at grid index i + 1
    let (first, last) = (lead_points, lead_points + measured_points - 1);
    let origin = if lead_points == 0 {
        None
    } else {
        Some(lead_points - 1)
    };
    let s0 = route.s_at(lead_points);
    let (t0, f0, e0, i0, start_v) = match origin {
        Some(o) => {
            let r = &log.rows[o];
            (r.t, r.fuel_cum, log.energy_at[o], log.integral_at[o], r.v)
        }
        None => (0.0, 0.0, EnergyLedger::default(), 0.0, v0),
    };
    let rows = log.rows[first..=last]
        .iter()
        .map(|r| TraceRow {
            s: r.s - s0,
            t: r.t - t0,
            fuel_cum: r.fuel_cum - f0,
            ..*r
        })
        .collect();
    SimTrace {
        method: method.to_string(),
        scenario: scenario.label.clone(),
        v_target,
        start_v,
        rows,
        decisions: Vec::new(),
        energy: ledger_diff(&log.energy_at[last], &e0),
        fuel_integral: log.integral_at[last] - i0,
        altitude_gain: route.altitude[last + 1] - route.altitude[lead_points],
        mass: p.mass,
    }
}

fn check_route(scenario: &Scenario, delta_s: f64) -> Result<()> {
    if scenario.profile.length() + S_TOL < scenario.measured_length {
        return Err(NpcError::Data(format!(
            "scenario {} is shorter than its measured length",
            scenario.label
        )));
    }
    if (scenario.profile.delta_s - delta_s).abs() > S_TOL {
        return Err(NpcError::Config("scenario grid does not match delta_s".into()));
    }
    Ok(())
}

fn until_measured_end(route: &RouteProfile, lead_points: usize, scenario: &Scenario) -> Result<RouteProfile> {
    let n = lead_points + (scenario.measured_length / route.delta_s).round() as usize + 1;
    RouteProfile::from_altitudes(route.start_s, route.delta_s, route.altitude[..n].to_vec())
}

/// Constant-speed PI cruise over the lead-in and the scenario.
pub fn run_cruise(
    scenario: &Scenario,
    v_target: f64,
    p: &VehicleParams,
    map: &BsfcMap,
    cfg: &SimConfig,
) -> Result<SimTrace> {
    cfg.validate()?;
    p.validate()?;
    check_route(scenario, scenario.profile.delta_s)?;
    let (route, lead_points) = full_route(scenario, cfg)?;
    let drive_route = until_measured_end(&route, lead_points, scenario)?;
    let pi = CruiseController::new(cfg.kp, cfg.ki, v_target)
        .bumpless(p.steady_torque(v_target, route.slope[1]));
    let mut driver = Cruise { pi, vehicle: p };
    let log = drive(&drive_route, v_target, &mut driver, p, map, cfg.dt)?;
    Ok(measured_trace("cruise", scenario, &route, lead_points, &log, v_target, v_target, p))
}

/// Receding-horizon NPC: cruise until the first primitive set exists (and
/// throughout the lead-in), then replan at every grid point and hold the
/// first torque of the chosen plan until the next one. Below the sampler's
/// minimum speed the cruise controller takes over.
pub struct NpcDriver<'a, P: Predictor> {
    model: &'a P,
    /// Planning route; extends past the driven part so the horizon is covered.
    route: &'a RouteProfile,
    sampler: SamplerConfig,
    future: FutureConfig,
    weights: CostWeights,
    vehicle: &'a VehicleParams,
    cruise: CruiseController,
    buffer: TripBuffer,
    primitives: Option<PrimitiveSet>,
    hold: Option<f64>,
    active: (f64, f64),
    pub decisions: Vec<Decision>,
}

impl<'a, P: Predictor> NpcDriver<'a, P> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &'a P,
        sampler: SamplerConfig,
        future: FutureConfig,
        weights: CostWeights,
        vehicle: &'a VehicleParams,
        cruise: CruiseController,
        route: &'a RouteProfile,
        active: (f64, f64),
    ) -> Self {
        NpcDriver {
            model,
            route,
            sampler,
            future,
            weights,
            vehicle,
            cruise,
            buffer: TripBuffer::with_origin(route.delta_s, route.start_s),
            primitives: None,
            hold: None,
            active,
            decisions: Vec::new(),
        }
    }
}

impl<P: Predictor> Driver for NpcDriver<'_, P> {
    fn command(&mut self, state: &SimState, dt: f64) -> f64 {
        match self.hold {
            Some(t) if state.v >= self.future.min_speed => self.vehicle.clamp_torque(t),
            Some(t) => {
                self.cruise = self.cruise.clone().bumpless(t);
                self.hold = None;
                self.cruise.command(state.v, dt, self.vehicle)
            }
            None => self.cruise.command(state.v, dt, self.vehicle),
        }
    }

    fn on_row(&mut self, row: &TraceRow) -> Result<()> {
        self.buffer.append(row.record())?;
        let (from, to) = self.active;
        if row.s < from - S_TOL || row.s > to - S_TOL {
            self.hold = None;
            return Ok(());
        }
        let stale = self
            .primitives
            .as_ref()
            .is_none_or(|set| refresh_due(set, row.s, &self.sampler));
        if stale {
            match select_primitives(&self.buffer, &self.sampler) {
                Ok(set) => self.primitives = Some(set),
                Err(NpcError::ColdStart) => {}
                Err(e) => return Err(e),
            }
        }
        let Some(set) = &self.primitives else {
            self.hold = None;
            return Ok(());
        };
        let futures = sample_futures(self.route, row.s, row.v, &self.future)?;
        let plan = optimize(set, &futures.chunks, self.model, &self.weights)?;
        let torque = self.vehicle.clamp_torque(plan.torque[0]);
        self.decisions.push(Decision {
            s: row.s,
            candidates: futures.len(),
            index: plan.index,
            cost: plan.cost,
            torque,
        });
        self.hold = Some(torque);
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_npc(
    scenario: &Scenario,
    model: &impl Predictor,
    sampler: &SamplerConfig,
    future: &FutureConfig,
    weights: &CostWeights,
    p: &VehicleParams,
    map: &BsfcMap,
    cfg: &SimConfig,
    method: &str,
) -> Result<SimTrace> {
    cfg.validate()?;
    p.validate()?;
    weights.validate()?;
    let d = scenario.profile.delta_s;
    sampler.validate(d)?;
    future.validate()?;
    check_route(scenario, d)?;
    let (route, lead_points) = full_route(scenario, cfg)?;
    let drive_route = until_measured_end(&route, lead_points, scenario)?;
    let v_target = weights.v_target;
    let future = FutureConfig {
        target_speed: v_target,
        ..future.clone()
    };
    let pi = CruiseController::new(cfg.kp, cfg.ki, v_target)
        .bumpless(p.steady_torque(v_target, route.slope[1]));
    let start = route.s_at(lead_points);
    let end = start + scenario.measured_length;
    let mut driver = NpcDriver::new(model, sampler.clone(), future, weights.clone(), p, pi, &route, (start, end));
    let log = drive(&drive_route, v_target, &mut driver, p, map, cfg.dt)?;
    let mut trace = measured_trace(method, scenario, &route, lead_points, &log, v_target, v_target, p);
    trace.decisions = driver.decisions.iter().map(|d| Decision { s: d.s - start, ..d.clone() }).collect();
    Ok(trace)
}

/// Trip record conversion for drives outside the scenario harness.
pub fn records(log: &DriveLog) -> Vec<TripRecord> {
    log.rows.iter().map(TraceRow::record).collect()
}
