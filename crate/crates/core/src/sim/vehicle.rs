//! Longitudinal truck dynamics, engine coupling and the BSFC fuel model.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NpcError, Result};

pub const GRAVITY: f64 = 9.81;
/// Diesel, g/L.
pub const FUEL_DENSITY: f64 = 835.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub mass: f64,
    pub drag_area: f64,
    pub rolling: f64,
    pub air_density: f64,
    pub wheel_radius: f64,
    pub drive_ratio: f64,
    pub efficiency: f64,
    pub torque_max: f64,
    pub engine_speed_min: f64,
    pub engine_speed_max: f64,
    /// L/s
    pub idle_fuel_rate: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            mass: 28_200.0,
            drag_area: 6.0,
            rolling: 0.006,
            air_density: 1.225,
            wheel_radius: 0.5,
            drive_ratio: 3.5,
            efficiency: 0.95,
            torque_max: 2500.0,
            engine_speed_min: 600.0,
            engine_speed_max: 2100.0,
            idle_fuel_rate: 1.1e-4,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mass,
            self.drag_area,
            self.rolling,
            self.air_density,
            self.wheel_radius,
            self.drive_ratio,
            self.efficiency,
            self.torque_max,
            self.engine_speed_min,
            self.idle_fuel_rate,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || self.engine_speed_max <= self.engine_speed_min
            || self.efficiency > 1.0
        {
            return Err(NpcError::Config("vehicle parameters must be positive and consistent".into()));
        }
        Ok(())
    }

    pub fn clamp_torque(&self, t: f64) -> f64 {
        t.clamp(0.0, self.torque_max)
    }

    /// Tractive force at the wheel for engine torque `t`.
    pub fn wheel_force(&self, t: f64) -> f64 {
        t * self.drive_ratio * self.efficiency / self.wheel_radius
    }

    /// Engine torque holding speed `v` on slope `theta`, clamped to limits.
    pub fn steady_torque(&self, v: f64, theta: f64) -> f64 {
        let r = resistive_force(v, theta, self) + grade_force(theta, self);
        self.clamp_torque(r * self.wheel_radius / (self.drive_ratio * self.efficiency))
    }
}

pub fn engine_speed(v: f64, p: &VehicleParams) -> f64 {
    let omega = v.max(0.0) * p.drive_ratio / p.wheel_radius;
    (omega * 60.0 / (2.0 * PI)).clamp(p.engine_speed_min, p.engine_speed_max)
}

/// Aerodynamic drag plus rolling resistance.
pub fn resistive_force(v: f64, theta: f64, p: &VehicleParams) -> f64 {
    0.5 * p.air_density * p.drag_area * v * v + p.mass * GRAVITY * p.rolling * theta.cos()
}

pub fn grade_force(theta: f64, p: &VehicleParams) -> f64 {
    p.mass * GRAVITY * theta.sin()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BsfcGrid {
    /// rpm, increasing
    pub speeds: Vec<f64>,
    /// N·m, increasing
    pub torques: Vec<f64>,
    /// g/kWh, `values[i][j]` at `(speeds[i], torques[j])`
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BsfcMap {
    Bowl {
        b0: f64,
        b1: f64,
        b2: f64,
        s_opt: f64,
        t_opt: f64,
    },
    Grid(BsfcGrid),
}

impl Default for BsfcMap {
    fn default() -> Self {
        BsfcMap::Bowl {
            b0: 190.0,
            b1: 60.0,
            b2: 45.0,
            s_opt: 1200.0,
            t_opt: 1500.0,
        }
    }
}

fn bracket(xs: &[f64], x: f64) -> (usize, f64) {
    let n = xs.len();
    if n == 1 || x <= xs[0] {
        return (0, 0.0);
    }
    if x >= xs[n - 1] {
        return (n - 2, 1.0);
    }
    let i = xs.partition_point(|&b| b <= x) - 1;
    (i, (x - xs[i]) / (xs[i + 1] - xs[i]))
}

impl BsfcMap {
    /// g/kWh at engine speed `s` (rpm) and torque `t` (N·m). Grid lookups
    /// clamp to the table edges.
    pub fn value(&self, s: f64, t: f64) -> f64 {
        match self {
            BsfcMap::Bowl {
                b0,
                b1,
                b2,
                s_opt,
                t_opt,
            } => {
                let ds = (s - s_opt) / s_opt;
                let dt = (t - t_opt) / t_opt;
                b0 + b1 * ds * ds + b2 * dt * dt
            }
            BsfcMap::Grid(g) => {
                if g.torques.len() == 1 && g.speeds.len() == 1 {
                    return g.values[0][0];
                }
                let (i, fx) = bracket(&g.speeds, s);
                let (j, fy) = bracket(&g.torques, t);
                let i1 = (i + 1).min(g.speeds.len() - 1);
                let j1 = (j + 1).min(g.torques.len() - 1);
                let v = &g.values;
                (1.0 - fx) * ((1.0 - fy) * v[i][j] + fy * v[i][j1])
                    + fx * ((1.0 - fy) * v[i1][j] + fy * v[i1][j1])
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BsfcMap::Bowl { b0, b1, b2, s_opt, t_opt } => {
                if !(*b0 > 0.0 && *b1 >= 0.0 && *b2 >= 0.0 && *s_opt > 0.0 && *t_opt > 0.0) {
                    return Err(NpcError::Config("BSFC bowl coefficients out of range".into()));
                }
            }
            BsfcMap::Grid(g) => {
                let inc = |xs: &[f64]| !xs.is_empty() && xs.windows(2).all(|w| w[1] > w[0]);
                if !inc(&g.speeds)
                    || !inc(&g.torques)
                    || g.values.len() != g.speeds.len()
                    || g.values.iter().any(|r| r.len() != g.torques.len())
                {
                    return Err(NpcError::Data("BSFC grid axes must increase and match the body".into()));
                }
                if g.values.iter().flatten().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(NpcError::Data("BSFC grid values must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Header row: empty corner cell then torque breakpoints; each body row
    /// starts with its engine-speed breakpoint.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut rows = rdr.records();
        let header = rows
            .next()
            .ok_or_else(|| NpcError::Data("empty BSFC csv".into()))??;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| NpcError::Data(format!("BSFC csv: cannot parse {s:?}")))
        };
        let torques = header.iter().skip(1).map(parse).collect::<Result<Vec<_>>>()?;
        let mut speeds = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            let row = row?;
            let mut cells = row.iter();
            speeds.push(parse(cells.next().unwrap_or(""))?);
            values.push(cells.map(parse).collect::<Result<Vec<_>>>()?);
        }
        let map = BsfcMap::Grid(BsfcGrid {
            speeds,
            torques,
            values,
        });
        map.validate()?;
        Ok(map)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| NpcError::io(path, e))?;
        BsfcMap::from_csv_reader(f)
    }
}

/// Fuel volume rate in L/s; never below the idle rate, idle when `t ≤ 0`.
pub fn fuel_rate(t: f64, s: f64, map: &BsfcMap, p: &VehicleParams) -> f64 {
    if t <= 0.0 {
        return p.idle_fuel_rate;
    }
    let power_w = t * s * 2.0 * PI / 60.0;
    let grams_per_s = map.value(s, t) * power_w / 3.6e6;
    (grams_per_s / FUEL_DENSITY).max(p.idle_fuel_rate)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub s: f64,
    pub v: f64,
    pub t: f64,
    pub fuel: f64,
    pub torque: f64,
}

/// Work terms of one step, in joules.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub traction: f64,
    pub resistive: f64,
    pub grade: f64,
    pub kinetic: f64,
}

impl EnergyLedger {
    pub fn add(&mut self, o: &EnergyLedger) {
        self.traction += o.traction;
        self.resistive += o.resistive;
        self.grade += o.grade;
        self.kinetic += o.kinetic;
    }

    /// `ΔKE + grade work − (traction − resistive)`, relative to the gross work.
    pub fn imbalance(&self) -> f64 {
        let gross = self.traction.abs() + self.resistive.abs() + self.grade.abs();
        (self.kinetic + self.grade - (self.traction - self.resistive)).abs() / gross.max(1e-12)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: SimState,
    pub engine_speed: f64,
    pub fuel_rate: f64,
    pub dt: f64,
    pub energy: EnergyLedger,
}

/// One semi-implicit Euler step; forces and fuel rate use the pre-step state.
///
/// With `stop_at` set and reachable within `dt`, the step is shortened to
/// land exactly on it.
pub fn step(
    state: &SimState,
    torque_cmd: f64,
    theta: f64,
    p: &VehicleParams,
    map: &BsfcMap,
    dt: f64,
    stop_at: Option<f64>,
) -> StepOutcome {
    let torque = p.clamp_torque(torque_cmd);
    let engine = engine_speed(state.v, p);
    let rate = fuel_rate(torque, engine, map, p);
    let f_trac = p.wheel_force(torque);
    let f_res = resistive_force(state.v, theta, p);
    let f_grade = grade_force(theta, p);
    let a = (f_trac - f_res - f_grade) / p.mass;

    let mut h = dt;
    let mut v_new = (state.v + a * h).max(0.0);
    let mut s_new = state.s + v_new * h;
    if let Some(target) = stop_at {
        let gap = target - state.s;
        if s_new >= target && gap > 0.0 {
            // s + (v + a h) h = target
            let disc = state.v * state.v + 4.0 * a * gap;
            h = if a.abs() < 1e-12 {
                gap / state.v
            } else {
                2.0 * gap / (state.v + disc.max(0.0).sqrt())
            };
            h = h.min(dt);
            v_new = (state.v + a * h).max(0.0);
            s_new = target;
        }
    }
    let ds = s_new - state.s;
    let energy = EnergyLedger {
        traction: f_trac * ds,
        resistive: f_res * ds,
        grade: f_grade * ds,
        kinetic: 0.5 * p.mass * (v_new * v_new - state.v * state.v),
    };
    StepOutcome {
        state: SimState {
            s: s_new,
            v: v_new,
            t: state.t + h,
            fuel: state.fuel + rate * h,
            torque,
        },
        engine_speed: engine,
        fuel_rate: rate,
        dt: h,
        energy,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn engine_speed_hand_check() {
        let p = VehicleParams {
            drive_ratio: 3.0,
            wheel_radius: 0.5,
            ..VehicleParams::default()
        };
        assert!((engine_speed(20.0, &p) - 1145.9156).abs() < 1e-3);
        assert_eq!(engine_speed(0.0, &p), 600.0);
        assert_eq!(engine_speed(100.0, &p), 2100.0);
    }

    #[test]
    fn fuel_rate_examples() {
        let p = VehicleParams::default();
        let map = BsfcMap::default();
        assert_eq!(fuel_rate(0.0, 1200.0, &map, &p), 1.1e-4);
        let at_opt = fuel_rate(1500.0, 1200.0, &map, &p);
        // 190 g/kWh · 188.496 kW / 3600 s = 9.948 g/s
        assert!((at_opt - 9.948 / 835.0).abs() < 1e-6, "{at_opt}");
        assert_eq!(map.value(1200.0, 1500.0), 190.0);
        for s in [800.0, 1000.0, 1400.0, 1800.0] {
            for t in [500.0, 1000.0, 2000.0, 2500.0] {
                assert!(map.value(s, t) > 190.0);
            }
        }
    }

    #[test]
    fn force_balance_signs() {
        let p = VehicleParams::default();
        let map = BsfcMap::default();
        let s0 = SimState { v: 20.0, ..SimState::default() };
        let flat = step(&s0, 0.0, 0.0, &p, &map, 0.1, None);
        assert!(flat.state.v < 20.0);
        assert!((grade_force(-0.03, &p) + 8298.0).abs() < 2.0);
        assert!((resistive_force(20.0, 0.0, &p) - (1470.0 + 1659.9)).abs() < 1.0);
        let down = step(&s0, 0.0, -0.03, &p, &map, 0.1, None);
        assert!(down.state.v > 20.0);
    }

    #[test]
    fn step_lands_on_target() {
        let p = VehicleParams::default();
        let map = BsfcMap::default();
        let s0 = SimState { s: 99.0, v: 20.0, ..SimState::default() };
        let out = step(&s0, 2500.0, 0.01, &p, &map, 0.1, Some(100.0));
        assert_eq!(out.state.s, 100.0);
        assert!(out.dt < 0.1 && out.dt > 0.04);
        let v_check = 20.0 + (out.state.v - 20.0);
        assert!((99.0 + v_check * out.dt - 100.0).abs() < 1e-9);
    }

    #[test]
    fn grid_map_bilinear() {
        let csv = ",0,1000,2000\n600,300,250,260\n1800,280,200,220\n";
        let map = BsfcMap::from_csv_reader(csv.as_bytes()).unwrap();
        assert_eq!(map.value(600.0, 0.0), 300.0);
        assert_eq!(map.value(1200.0, 1000.0), 225.0);
        assert_eq!(map.value(1200.0, 500.0), 0.25 * (300.0 + 250.0 + 280.0 + 200.0));
        assert_eq!(map.value(5000.0, 5000.0), 220.0);
        assert!(BsfcMap::from_csv_reader(",0,1\n600,1\n".as_bytes()).is_err());
    }
}
