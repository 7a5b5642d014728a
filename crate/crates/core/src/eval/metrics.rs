//! Prediction errors, the fuel fit at a query speed and the closed-loop cost.

use serde::{Deserialize, Serialize};

use crate::data::feature;
use crate::error::{NpcError, Result};
use crate::nvformer::{NvFormerModel, TrainingExample};
use crate::tensor::Matrix;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureErrors {
    pub mae: Vec<f64>,
    pub mse: Vec<f64>,
}

/// Per-column MAE and MSE between two equally shaped series.
pub fn mae_mse(pred: &Matrix, truth: &Matrix) -> Result<FeatureErrors> {
    if pred.shape() != truth.shape() || pred.rows() == 0 {
        return Err(NpcError::Shape(format!(
            "prediction {:?} vs truth {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    let n = pred.rows() as f64;
    let mut out = FeatureErrors {
        mae: vec![0.0; pred.cols()],
        mse: vec![0.0; pred.cols()],
    };
    for r in 0..pred.rows() {
        for (c, (p, t)) in pred.row(r).iter().zip(truth.row(r)).enumerate() {
            let e = p - t;
            out.mae[c] += e.abs() / n;
            out.mse[c] += e * e / n;
        }
    }
    Ok(out)
}

/// Test-set errors in physical units: torque in percent of `torque_max`,
/// engine speed in rpm, fuel in L per grid interval.
pub fn model_errors(
    model: &NvFormerModel,
    examples: &[TrainingExample],
    torque_max: f64,
) -> Result<FeatureErrors> {
    if examples.is_empty() {
        return Err(NpcError::Data("no examples to score".into()));
    }
    let stats = model.stats();
    let to_physical = |m: &Matrix| {
        let mut p = stats.denormalize_columns(m, feature::TORQUE);
        for r in 0..p.rows() {
            p.row_mut(r)[0] *= 100.0 / torque_max;
        }
        p
    };
    let mut preds = Vec::with_capacity(examples.len());
    let mut truths = Vec::with_capacity(examples.len());
    for ex in examples {
        let y = model.forward(&ex.samples, &ex.history, &ex.future_known)?;
        preds.push(to_physical(&y));
        truths.push(to_physical(&ex.target));
    }
    let pred = Matrix::concat_rows(&preds.iter().collect::<Vec<_>>());
    let truth = Matrix::concat_rows(&truths.iter().collect::<Vec<_>>());
    mae_mse(&pred, &truth)
}

/// Least-squares quadratic through `(speed, value)` points, evaluated at
/// `v_query`, which must lie within the sampled speed range.
pub fn interpolate_fuel_at(points: &[(f64, f64)], v_query: f64) -> Result<f64> {
    Ok(quadratic_fit(points, v_query)?.eval(v_query))
}

/// `c0 + c1·(v − center) + c2·(v − center)²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub center: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Quadratic {
    pub fn eval(&self, v: f64) -> f64 {
        let x = v - self.center;
        self.c0 + x * (self.c1 + x * self.c2)
    }
}

pub fn quadratic_fit(points: &[(f64, f64)], center: f64) -> Result<Quadratic> {
    if points.len() < 3 {
        return Err(NpcError::Data(format!(
            "quadratic fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(v, f)| !v.is_finite() || !f.is_finite()) {
        return Err(NpcError::Data("non-finite fit point".into()));
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if !(lo <= center && center <= hi) {
        return Err(NpcError::OutOfRange { from: lo, to: center });
    }
    // normal equations in x = v - center
    let mut a = [[0.0; 4]; 3];
    for &(v, f) in points {
        let x = v - center;
        let pw = [1.0, x, x * x];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += pw[i] * pw[j];
            }
            a[i][3] += pw[i] * f;
        }
    }
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        a.swap(col, pivot);
        if a[col][col].abs() < 1e-12 {
            return Err(NpcError::Data("fit points need at least 3 distinct speeds".into()));
        }
        for r in 0..3 {
            if r != col {
                let k = a[r][col] / a[col][col];
                for c in col..4 {
                    a[r][c] -= k * a[col][c];
                }
            }
        }
    }
    Ok(Quadratic {
        center,
        c0: a[0][3] / a[0][0],
        c1: a[1][3] / a[1][1],
        c2: a[2][3] / a[2][2],
    })
}

/// `w1·F + w2·Δv`, F in L/100 km and Δv in m/s.
pub fn sim_cost(fuel: f64, speed_difference: f64, w1: f64, w2: f64) -> f64 {
    w1 * fuel + w2 * speed_difference
}

/// Percent of baseline fuel saved by the method.
pub fn fuel_saving(baseline: f64, method: f64) -> Result<f64> {
    if !(baseline > 0.0) || !method.is_finite() {
        return Err(NpcError::Data(format!("fuel saving undefined for baseline {baseline}")));
    }
    Ok(100.0 * (baseline - method) / baseline)
}
