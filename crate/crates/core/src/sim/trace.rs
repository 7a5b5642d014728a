//! Per-Δs simulation traces and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vehicle::EnergyLedger;
use crate::data::{read_numeric_csv, TripLog, TripRecord};
use crate::error::{NpcError, Result};

pub const TRACE_CSV_HEADER: &str = "s_m,t_s,v_mps,a_mps2,theta_rad,T_nm,S_rpm,f_l,f_cum_l";

/// One grid row: `v`, `t` at the endpoint, `a` from the v² difference over
/// the interval, `T` and `S` time-averaged over it, `f` the interval fuel
/// and `f_cum` the fuel since the start of the trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub s: f64,
    pub t: f64,
    pub v: f64,
    pub a: f64,
    pub theta: f64,
    pub torque: f64,
    pub engine_speed: f64,
    pub fuel: f64,
    pub fuel_cum: f64,
}

impl TraceRow {
    pub fn record(&self) -> TripRecord {
        TripRecord {
            s: self.s,
            v: self.v,
            a: self.a,
            theta: self.theta,
            torque: self.torque,
            engine_speed: self.engine_speed,
            fuel: self.fuel,
        }
    }
}

/// Planner decision at one replan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub s: f64,
    pub candidates: usize,
    pub index: usize,
    pub cost: f64,
    /// First torque of the chosen plan, as commanded until the next replan.
    pub torque: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub method: String,
    pub scenario: String,
    pub v_target: f64,
    /// State at the trace origin (`s = 0`).
    pub start_v: f64,
    pub rows: Vec<TraceRow>,
    pub decisions: Vec<Decision>,
    pub energy: EnergyLedger,
    /// Σ fuel_rate·dt over the traced steps.
    pub fuel_integral: f64,
    /// Altitude gain over the traced distance.
    pub altitude_gain: f64,
    pub mass: f64,
}

impl SimTrace {
    pub fn distance(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.s)
    }

    pub fn duration(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.t)
    }

    pub fn total_fuel(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.fuel_cum)
    }

    /// L/100 km over the traced distance.
    pub fn fuel_per_100km(&self) -> f64 {
        100_000.0 * self.total_fuel() / self.distance()
    }

    pub fn mean_speed(&self) -> f64 {
        self.distance() / self.duration()
    }

    pub fn speed_difference(&self) -> f64 {
        (self.mean_speed() - self.v_target).abs()
    }

    pub fn trip_log(&self, delta_s: f64) -> Result<TripLog> {
        TripLog::new(delta_s, self.rows.iter().map(TraceRow::record).collect())
    }

    pub fn to_csv_string(&self) -> String {
        rows_csv_string(&self.rows)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| NpcError::io(path, e))
    }
}

pub fn rows_csv_string(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.s, r.t, r.v, r.a, r.theta, r.torque, r.engine_speed, r.fuel, r.fuel_cum
        );
    }
    out
}

pub fn read_trace_csv<R: std::io::Read>(reader: R) -> Result<Vec<TraceRow>> {
    let rows = read_numeric_csv(reader, TRACE_CSV_HEADER)?;
    let out: Vec<TraceRow> = rows
        .into_iter()
        .map(|v| TraceRow {
            s: v[0],
            t: v[1],
            v: v[2],
            a: v[3],
            theta: v[4],
            torque: v[5],
            engine_speed: v[6],
            fuel: v[7],
            fuel_cum: v[8],
        })
        .collect();
    for (i, w) in out.windows(2).enumerate() {
        if !(w[1].s > w[0].s) {
            return Err(NpcError::NonMonotone { index: i + 1, s: w[1].s });
        }
    }
    Ok(out)
}
