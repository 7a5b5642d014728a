//! Sampling-based fuel-saving optimizer: score every candidate future with
//! the predictor's torque, engine speed and fuel, and keep the cheapest.

use serde::{Deserialize, Serialize};

use crate::data::{feature, DataChunk, FeatureStats};
use crate::error::{NpcError, Result};
use crate::nvformer::dataset::normalized_inputs;
use crate::nvformer::NvFormerModel;
use crate::past_sampler::PrimitiveSet;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub w1: f64,
    pub w2: f64,
    pub v_target: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            w1: 1.0,
            w2: 0.1,
            v_target: 21.5,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.w1 >= 0.0 && self.w2 >= 0.0 && self.v_target.is_finite()) {
            return Err(NpcError::Config("cost weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Predicts normalized (T, S, f) for each normalized known future (v, a, θ).
pub trait Predictor {
    fn stats(&self) -> &FeatureStats;

    fn predict(&self, samples: &[Matrix], history: &Matrix, futures: &[Matrix]) -> Result<Vec<Matrix>>;
}

impl Predictor for NvFormerModel {
    fn stats(&self) -> &FeatureStats {
        NvFormerModel::stats(self)
    }

    fn predict(&self, samples: &[Matrix], history: &Matrix, futures: &[Matrix]) -> Result<Vec<Matrix>> {
        self.forward_many(samples, history, futures)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlPlan {
    pub torque: Vec<f64>,
    pub engine_speed: Vec<f64>,
    pub cost: f64,
    pub index: usize,
    pub costs: Vec<f64>,
    /// Chosen candidate with its predicted columns filled in.
    pub chunk: DataChunk,
}

/// `C = w1·Σf + w2·|mean(v) − v_target|`; infinite when any value is non-finite.
pub fn chunk_cost(chunk: &DataChunk, w: &CostWeights) -> f64 {
    let fuel = chunk.column(feature::FUEL);
    let v = chunk.column(feature::V);
    if fuel.iter().chain(&v).any(|x| !x.is_finite()) || v.is_empty() {
        return f64::INFINITY;
    }
    let mean_v = v.iter().sum::<f64>() / v.len() as f64;
    let c = w.w1 * fuel.iter().sum::<f64>() + w.w2 * (mean_v - w.v_target).abs();
    if c.is_finite() {
        c
    } else {
        f64::INFINITY
    }
}

/// First index of the minimum; `None` when every cost is infinite or NaN.
pub fn argmin(costs: &[f64]) -> Option<usize> {
    let mut best = f64::INFINITY;
    let mut index = None;
    for (i, &c) in costs.iter().enumerate() {
        if c < best {
            best = c;
            index = Some(i);
        }
    }
    index
}

/// Scores each candidate and returns the plan of the cheapest one
/// (lowest index on ties).
pub fn optimize(
    primitives: &PrimitiveSet,
    candidates: &[DataChunk],
    model: &impl Predictor,
    w: &CostWeights,
) -> Result<ControlPlan> {
    if candidates.is_empty() {
        return Err(NpcError::Data("empty candidate set".into()));
    }
    let stats = model.stats();
    stats.validate()?;
    if stats.min.len() != feature::COUNT {
        return Err(NpcError::Shape(format!(
            "model statistics cover {} features, expected {}",
            stats.min.len(),
            feature::COUNT
        )));
    }
    let (samples, history) = normalized_inputs(primitives, stats);
    let futures: Vec<Matrix> = candidates
        .iter()
        .map(|c| stats.normalize_columns(&c.values, 0).slice_cols(0, feature::TORQUE))
        .collect();
    let predictions = model.predict(&samples, &history, &futures)?;
    if predictions.len() != candidates.len() {
        return Err(NpcError::Shape(format!(
            "{} predictions for {} candidates",
            predictions.len(),
            candidates.len()
        )));
    }
    let mut completed = Vec::with_capacity(candidates.len());
    for (cand, pred) in candidates.iter().zip(&predictions) {
        let want = (cand.len(), feature::COUNT - feature::TORQUE);
        if pred.shape() != want {
            return Err(NpcError::Shape(format!("prediction {:?}, expected {want:?}", pred.shape())));
        }
        let physical = stats.denormalize_columns(pred, feature::TORQUE);
        let mut values = cand.values.clone();
        for r in 0..values.rows() {
            values.row_mut(r)[feature::TORQUE..].copy_from_slice(physical.row(r));
        }
        completed.push(DataChunk::new(cand.start_s, cand.delta_s, values)?);
    }
    let costs: Vec<f64> = completed.iter().map(|c| chunk_cost(c, w)).collect();
    let index = argmin(&costs)
        .ok_or_else(|| NpcError::Numerical("every candidate has a non-finite prediction".into()))?;
    let chunk = completed.swap_remove(index);
    Ok(ControlPlan {
        torque: chunk.column(feature::TORQUE),
        engine_speed: chunk.column(feature::ENGINE_SPEED),
        cost: costs[index],
        index,
        costs,
        chunk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(v: &[f64], f: &[f64]) -> DataChunk {
        let rows: Vec<Vec<f64>> = v
            .iter()
            .zip(f)
            .map(|(&v, &f)| vec![v, 0.0, 0.0, 100.0, 1200.0, f])
            .collect();
        DataChunk::new(0.0, 50.0, Matrix::from_rows(&rows)).unwrap()
    }

    #[test]
    fn cost_examples() {
        let w = CostWeights::default();
        assert_eq!(chunk_cost(&chunk(&[21.5; 4], &[2.5; 4]), &w), 10.0);
        assert!((chunk_cost(&chunk(&[20.0; 4], &[2.5; 4]), &w) - 10.15).abs() < 1e-12);
        let w0 = CostWeights { w2: 0.0, ..w.clone() };
        assert_eq!(chunk_cost(&chunk(&[3.0, 40.0], &[4.0, 6.0]), &w0), 10.0);
        assert_eq!(chunk_cost(&chunk(&[20.0, 21.0], &[f64::NAN, 1.0]), &w), f64::INFINITY);
    }

    #[test]
    fn argmin_ties_and_disqualification() {
        assert_eq!(argmin(&[5.2, 4.8, 6.1]), Some(1));
        assert_eq!(argmin(&[3.0]), Some(0));
        assert_eq!(argmin(&[2.0, 2.0]), Some(0));
        assert_eq!(argmin(&[f64::NAN, f64::INFINITY, 7.0]), Some(2));
        assert_eq!(argmin(&[f64::INFINITY]), None);
    }
}
