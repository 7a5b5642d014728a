//! Browser bindings: scenario profiles, future speed candidates and cruise
//! runs, each returned as a JSON string.

use serde_json::json;
use wasm_bindgen::prelude::*;

use npc_core::future_sampler::{sample_futures, FutureConfig};
use npc_core::sim::{generate_scenarios, run_cruise, BsfcMap, Scenario, ScenarioConfig, SimConfig, VehicleParams};

fn scenario(index: usize) -> Result<Scenario, String> {
    let mut all = generate_scenarios(&ScenarioConfig::default()).map_err(|e| e.to_string())?;
    if index >= all.len() {
        return Err(format!("scenario index {index} out of range 0..{}", all.len()));
    }
    Ok(all.swap_remove(index))
}

pub fn labels_json() -> Result<String, String> {
    let all = generate_scenarios(&ScenarioConfig::default()).map_err(|e| e.to_string())?;
    let labels: Vec<&str> = all.iter().map(|s| s.label.as_str()).collect();
    Ok(json!(labels).to_string())
}

pub fn profile_json(index: usize) -> Result<String, String> {
    let sc = scenario(index)?;
    let p = &sc.profile;
    let s: Vec<f64> = (0..p.len()).map(|k| p.s_at(k)).collect();
    Ok(json!({
        "label": sc.label,
        "measured_length": sc.measured_length,
        "s": s,
        "z": p.altitude,
        "theta": p.slope,
    })
    .to_string())
}

pub fn futures_json(
    index: usize,
    s_now: f64,
    v_now: f64,
    epsilon: f64,
    half_width: f64,
    samples: usize,
) -> Result<String, String> {
    let sc = scenario(index)?;
    let cfg = FutureConfig {
        epsilon,
        half_width,
        samples_per_anchor: samples,
        ..FutureConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let d = sc.profile.delta_s;
    let s_now = (s_now / d).round() * d;
    let set = sample_futures(&sc.profile, s_now, v_now, &cfg).map_err(|e| e.to_string())?;
    let keys: Vec<_> = set
        .key_points
        .iter()
        .map(|k| json!({ "s": s_now + k.s, "lo": k.lo, "hi": k.hi, "bounded": k.bounded }))
        .collect();
    let s: Vec<f64> = (1..=cfg.horizon).map(|u| s_now + u as f64 * d).collect();
    let lines: Vec<Vec<f64>> = set.chunks.iter().map(|c| c.column(0)).collect();
    Ok(json!({ "s_now": s_now, "v_now": v_now, "key_points": keys, "s": s, "lines": lines }).to_string())
}

pub fn cruise_json(index: usize, v_target: f64) -> Result<String, String> {
    let sc = scenario(index)?;
    let tr = run_cruise(&sc, v_target, &VehicleParams::default(), &BsfcMap::default(), &SimConfig::default())
        .map_err(|e| e.to_string())?;
    Ok(json!({
        "s": tr.rows.iter().map(|r| r.s).collect::<Vec<_>>(),
        "v": tr.rows.iter().map(|r| r.v).collect::<Vec<_>>(),
        "torque": tr.rows.iter().map(|r| r.torque).collect::<Vec<_>>(),
        "fuel_l_100km": tr.fuel_per_100km(),
        "speed_difference": tr.speed_difference(),
    })
    .to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn scenario_labels() -> Result<String, JsError> {
    js(labels_json())
}

#[wasm_bindgen]
pub fn scenario_profile(index: usize) -> Result<String, JsError> {
    js(profile_json(index))
}

#[wasm_bindgen]
pub fn sample_future(
    index: usize,
    s_now: f64,
    v_now: f64,
    epsilon: f64,
    half_width: f64,
    samples: usize,
) -> Result<String, JsError> {
    js(futures_json(index, s_now, v_now, epsilon, half_width, samples))
}

#[wasm_bindgen]
pub fn simulate_cruise(index: usize, v_target: f64) -> Result<String, JsError> {
    js(cruise_json(index, v_target))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_payloads() {
        let labels: Vec<String> = serde_json::from_str(&labels_json().unwrap()).unwrap();
        assert_eq!(labels.len(), 15);
        let hill = labels.iter().position(|l| l == "hill-40m").unwrap();
        let f: serde_json::Value = serde_json::from_str(&futures_json(hill, 3500.0, 21.5, 0.01, 1.5, 4).unwrap()).unwrap();
        let lines = f["lines"].as_array().unwrap();
        assert!(lines.len() > 1);
        assert_eq!(lines[0].as_array().unwrap().len(), 60);
        let c: serde_json::Value = serde_json::from_str(&cruise_json(0, 21.5).unwrap()).unwrap();
        assert!(c["speed_difference"].as_f64().unwrap() < 0.1);
        assert!(profile_json(99).is_err());
        assert!(futures_json(0, 0.0, 21.5, -1.0, 1.5, 4).is_err());
    }
}
