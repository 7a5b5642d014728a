//! Trace scoring: per-run fuel and speed difference, the fit at the query
//! speed, closed-loop cost and saving against the baseline method.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{fuel_saving, quadratic_fit, sim_cost, Quadratic};
use crate::error::{NpcError, Result};
use crate::sim::trace::{read_trace_csv, SimTrace, TraceRow};

/// A trace with its identifying labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTrace {
    pub method: String,
    pub scenario: String,
    pub v_target: f64,
    pub rows: Vec<TraceRow>,
}

impl From<&SimTrace> for LabeledTrace {
    fn from(t: &SimTrace) -> Self {
        LabeledTrace {
            method: t.method.clone(),
            scenario: t.scenario.clone(),
            v_target: t.v_target,
            rows: t.rows.clone(),
        }
    }
}

/// `{method}__{scenario}__{v_target}.csv`, the speed in shortest round-trip form.
pub fn trace_file_name(method: &str, scenario: &str, v_target: f64) -> String {
    format!("{method}__{scenario}__{v_target}.csv")
}

pub fn parse_trace_file_name(name: &str) -> Option<(String, String, f64)> {
    let stem = name.strip_suffix(".csv")?;
    let mut parts = stem.split("__");
    let (m, s, v) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() || m.is_empty() || s.is_empty() {
        return None;
    }
    Some((m.to_string(), s.to_string(), v.parse().ok()?))
}

/// Reads every `*.csv` trace in `dir` whose name follows [`trace_file_name`],
/// sorted by file name.
pub fn read_trace_dir(dir: &Path) -> Result<Vec<LabeledTrace>> {
    let entries = std::fs::read_dir(dir).map_err(|e| NpcError::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| NpcError::io(dir, e))?;
        if let Some(name) = entry.file_name().to_str() {
            if parse_trace_file_name(name).is_some() {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let (method, scenario, v_target) = parse_trace_file_name(&name).expect("filtered above");
            let path = dir.join(&name);
            let file = std::fs::File::open(&path).map_err(|e| NpcError::io(&path, e))?;
            let rows = read_trace_csv(file)?;
            Ok(LabeledTrace {
                method,
                scenario,
                v_target,
                rows,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub scenario: String,
    pub v_target: f64,
    pub distance_m: f64,
    pub duration_s: f64,
    pub fuel_l: f64,
    pub fuel_l_100km: f64,
    pub mean_speed: f64,
    pub speed_difference: f64,
}

/// Altitude, speed and torque along one run, for plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSeries {
    pub method: String,
    pub scenario: String,
    pub v_target: f64,
    pub s: Vec<f64>,
    /// Relative to the trace start, rebuilt from θ.
    pub altitude: Vec<f64>,
    pub v: Vec<f64>,
    pub torque: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuelFit {
    pub method: String,
    pub scenario: String,
    pub speeds: Vec<f64>,
    pub fuels: Vec<f64>,
    pub fuel: Quadratic,
    pub speed_difference: Quadratic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub method: String,
    pub scenario: String,
    /// L/100 km at the query speed.
    pub fuel: f64,
    pub speed_difference: f64,
    pub cost: f64,
    /// Against the baseline method on the same scenario.
    pub saving_pct: Option<f64>,
    /// Read off a quadratic fit rather than a run at the query speed.
    pub fitted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub scenarios: usize,
    pub mean_fuel: f64,
    pub mean_speed_difference: f64,
    pub mean_cost: f64,
    pub mean_saving_pct: Option<f64>,
    /// Scenarios where the cost is at most the baseline's.
    pub cost_wins: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub v_query: f64,
    pub baseline: String,
    pub w1: f64,
    pub w2: f64,
    pub runs: Vec<RunSummary>,
    pub results: Vec<EvalResult>,
    pub fits: Vec<FuelFit>,
    pub summary: Vec<MethodSummary>,
    pub series: Vec<RunSeries>,
}

pub fn summarize_run(t: &LabeledTrace) -> Result<RunSummary> {
    let last = t
        .rows
        .last()
        .ok_or_else(|| NpcError::Data(format!("empty trace {} / {}", t.method, t.scenario)))?;
    if !(last.s > 0.0 && last.t > 0.0) {
        return Err(NpcError::Data(format!("trace {} / {} has no extent", t.method, t.scenario)));
    }
    let mean_speed = last.s / last.t;
    Ok(RunSummary {
        method: t.method.clone(),
        scenario: t.scenario.clone(),
        v_target: t.v_target,
        distance_m: last.s,
        duration_s: last.t,
        fuel_l: last.fuel_cum,
        fuel_l_100km: 100_000.0 * last.fuel_cum / last.s,
        mean_speed,
        speed_difference: (mean_speed - t.v_target).abs(),
    })
}

pub fn run_series(t: &LabeledTrace) -> RunSeries {
    let mut z = 0.0;
    let mut prev_s = 0.0;
    let mut altitude = Vec::with_capacity(t.rows.len());
    for r in &t.rows {
        z += (r.s - prev_s) * r.theta.tan();
        prev_s = r.s;
        altitude.push(z);
    }
    RunSeries {
        method: t.method.clone(),
        scenario: t.scenario.clone(),
        v_target: t.v_target,
        s: t.rows.iter().map(|r| r.s).collect(),
        altitude,
        v: t.rows.iter().map(|r| r.v).collect(),
        torque: t.rows.iter().map(|r| r.torque).collect(),
    }
}

/// Scores all traces. Per (method, scenario): a single run at `v_query` is
/// used directly; three or more target speeds spanning `v_query` are fitted.
pub fn evaluate(traces: &[LabeledTrace], v_query: f64, w1: f64, w2: f64, baseline: &str) -> Result<Evaluation> {
    let mut runs: Vec<RunSummary> = traces.iter().map(summarize_run).collect::<Result<_>>()?;
    runs.sort_by(|a, b| {
        (&a.method, &a.scenario)
            .cmp(&(&b.method, &b.scenario))
            .then(a.v_target.total_cmp(&b.v_target))
    });
    let mut groups: BTreeMap<(String, String), Vec<&RunSummary>> = BTreeMap::new();
    for r in &runs {
        groups.entry((r.method.clone(), r.scenario.clone())).or_default().push(r);
    }

    let mut results = Vec::new();
    let mut fits = Vec::new();
    for ((method, scenario), group) in &groups {
        for w in group.windows(2) {
            if w[0].v_target == w[1].v_target {
                return Err(NpcError::Data(format!(
                    "duplicate run {method} / {scenario} at {} m/s",
                    w[0].v_target
                )));
            }
        }
        let (fuel, dv, fitted) = if group.len() >= 3 {
            let f: Vec<_> = group.iter().map(|r| (r.v_target, r.fuel_l_100km)).collect();
            let d: Vec<_> = group.iter().map(|r| (r.v_target, r.speed_difference)).collect();
            let fuel_fit = quadratic_fit(&f, v_query)?;
            let dv_fit = quadratic_fit(&d, v_query)?;
            fits.push(FuelFit {
                method: method.clone(),
                scenario: scenario.clone(),
                speeds: f.iter().map(|p| p.0).collect(),
                fuels: f.iter().map(|p| p.1).collect(),
                fuel: fuel_fit,
                speed_difference: dv_fit,
            });
            (fuel_fit.eval(v_query), dv_fit.eval(v_query).max(0.0), true)
        } else if let Some(r) = group.iter().find(|r| (r.v_target - v_query).abs() < 1e-9) {
            (r.fuel_l_100km, r.speed_difference, false)
        } else {
            return Err(NpcError::Data(format!(
                "{method} / {scenario}: need a run at {v_query} m/s or at least 3 target speeds"
            )));
        };
        results.push(EvalResult {
            method: method.clone(),
            scenario: scenario.clone(),
            fuel,
            speed_difference: dv,
            cost: sim_cost(fuel, dv, w1, w2),
            saving_pct: None,
            fitted,
        });
    }

    let base: BTreeMap<String, (f64, f64)> = results
        .iter()
        .filter(|r| r.method == baseline)
        .map(|r| (r.scenario.clone(), (r.fuel, r.cost)))
        .collect();
    for r in &mut results {
        if let Some(&(f, _)) = base.get(&r.scenario) {
            r.saving_pct = Some(fuel_saving(f, r.fuel)?);
        }
    }

    let mut summary = Vec::new();
    let mut by_method: BTreeMap<&str, Vec<&EvalResult>> = BTreeMap::new();
    for r in &results {
        by_method.entry(&r.method).or_default().push(r);
    }
    for (method, rs) in by_method {
        let n = rs.len() as f64;
        let savings: Vec<f64> = rs.iter().filter_map(|r| r.saving_pct).collect();
        let compared: Vec<&&EvalResult> = rs.iter().filter(|r| base.contains_key(&r.scenario)).collect();
        summary.push(MethodSummary {
            method: method.to_string(),
            scenarios: rs.len(),
            mean_fuel: rs.iter().map(|r| r.fuel).sum::<f64>() / n,
            mean_speed_difference: rs.iter().map(|r| r.speed_difference).sum::<f64>() / n,
            mean_cost: rs.iter().map(|r| r.cost).sum::<f64>() / n,
            mean_saving_pct: (!savings.is_empty())
                .then(|| savings.iter().sum::<f64>() / savings.len() as f64),
            cost_wins: (!compared.is_empty()).then(|| {
                compared
                    .iter()
                    .filter(|r| r.cost <= base[&r.scenario].1)
                    .count()
            }),
        });
    }

    let mut series: Vec<RunSeries> = traces.iter().map(run_series).collect();
    series.sort_by(|a, b| {
        (&a.method, &a.scenario)
            .cmp(&(&b.method, &b.scenario))
            .then(a.v_target.total_cmp(&b.v_target))
    });

    Ok(Evaluation {
        v_query,
        baseline: baseline.to_string(),
        w1,
        w2,
        runs,
        results,
        fits,
        summary,
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(method: &str, scenario: &str, v_target: f64, v: f64, fuel_per_km: f64) -> LabeledTrace {
        let rows = (1..=20)
            .map(|k| {
                let s = 50.0 * k as f64;
                TraceRow {
                    s,
                    t: s / v,
                    v,
                    a: 0.0,
                    theta: 0.01,
                    torque: 500.0,
                    engine_speed: 1300.0,
                    fuel: fuel_per_km / 20.0,
                    fuel_cum: fuel_per_km * s / 1000.0,
                }
            })
            .collect();
        LabeledTrace {
            method: method.into(),
            scenario: scenario.into(),
            v_target,
            rows,
        }
    }

    #[test]
    fn file_names_round_trip() {
        let v = 70.0 / 3.6;
        let name = trace_file_name("npc", "hill-30m", v);
        assert_eq!(parse_trace_file_name(&name), Some(("npc".into(), "hill-30m".into(), v)));
        assert_eq!(parse_trace_file_name("npc__x.csv"), None);
        assert_eq!(parse_trace_file_name("a__b__c.csv"), None);
    }

    #[test]
    fn single_speed_costs_and_savings() {
        let traces = vec![
            trace("cruise", "flat", 21.5, 21.5, 0.25),
            trace("npc", "flat", 21.5, 21.0, 0.24),
        ];
        let ev = evaluate(&traces, 21.5, 1.0, 0.1, "cruise").unwrap();
        let npc = ev.results.iter().find(|r| r.method == "npc").unwrap();
        assert!((npc.fuel - 24.0).abs() < 1e-9);
        assert!((npc.speed_difference - 0.5).abs() < 1e-9);
        assert!((npc.cost - 24.05).abs() < 1e-9);
        assert!((npc.saving_pct.unwrap() - 4.0).abs() < 1e-9);
        assert!(!npc.fitted);
        let s = ev.summary.iter().find(|s| s.method == "npc").unwrap();
        assert_eq!(s.cost_wins, Some(1));
        let z = &ev.series[0].altitude;
        assert!((z[19] - 1000.0 * 0.01f64.tan()).abs() < 1e-9);
    }

    #[test]
    fn six_speeds_are_fitted() {
        let f = |v: f64| 0.0002 * v * v - 0.005 * v + 0.28;
        let traces: Vec<_> = super::super::config::DEFAULT_TARGET_SPEEDS
            .iter()
            .map(|&v| trace("cruise", "flat", v, v, f(v)))
            .collect();
        let ev = evaluate(&traces, 21.5, 1.0, 0.1, "cruise").unwrap();
        assert_eq!(ev.fits.len(), 1);
        let r = &ev.results[0];
        assert!(r.fitted);
        assert!((r.fuel - 100.0 * f(21.5)).abs() < 1e-6);
        assert!(r.speed_difference.abs() < 1e-9);
        assert_eq!(r.saving_pct, Some(0.0));
        assert!(evaluate(&traces[..2], 21.5, 1.0, 0.1, "cruise").is_err());
    }
}
