//! Turns recorded trips into normalized training examples.

use super::train::TrainingExample;
use crate::data::{feature, make_chunk, FeatureStats, TripLog};
use crate::error::{NpcError, Result};
use crate::past_sampler::{select_primitives, PrimitiveSet, SamplerConfig, TripBuffer};
use crate::tensor::Matrix;

/// Normalized inputs for one primitive set.
pub fn normalized_inputs(set: &PrimitiveSet, stats: &FeatureStats) -> (Vec<Matrix>, Matrix) {
    let samples = set
        .samples
        .iter()
        .map(|c| stats.normalize_columns(&c.values, 0))
        .collect();
    (samples, stats.normalize_columns(&set.history.values, 0))
}

/// Walks each trip as if driving it, and at every `stride`-th grid point
/// with a primitive set available and `horizon` points still ahead emits an
/// example: fresh primitives, the latest history, the known future features
/// (v, a, θ) and the targets (T, S, f) of the next `horizon` points.
pub fn build_examples(
    trips: &[TripLog],
    stats: &FeatureStats,
    sampler: &SamplerConfig,
    horizon: usize,
    stride: usize,
) -> Result<Vec<TrainingExample>> {
    if stride == 0 || horizon == 0 {
        return Err(NpcError::Config("dataset stride and horizon must be positive".into()));
    }
    // v, a and θ are known ahead; torque onward is predicted
    let known = feature::TORQUE;
    let mut out = Vec::new();
    for trip in trips {
        let Some(first) = trip.first_s() else { continue };
        sampler.validate(trip.delta_s)?;
        let mut buffer = TripBuffer::with_origin(trip.delta_s, first - trip.delta_s);
        let records = trip.records();
        for (i, r) in records.iter().enumerate() {
            buffer.append(*r)?;
            if i % stride != 0 || i + horizon >= records.len() {
                continue;
            }
            let set = match select_primitives(&buffer, sampler) {
                Ok(set) => set,
                Err(NpcError::ColdStart) => continue,
                Err(e) => return Err(e),
            };
            let (samples, history) = normalized_inputs(&set, stats);
            let future = stats.normalize_columns(&make_chunk(trip, r.s, horizon)?.values, 0);
            out.push(TrainingExample {
                samples,
                history,
                future_known: future.slice_cols(0, known),
                target: future.slice_cols(known, feature::COUNT - known),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TripRecord;

    fn trip(n: usize) -> TripLog {
        let records = (1..=n)
            .map(|k| TripRecord {
                s: k as f64 * 50.0,
                v: 20.0 + (k as f64 * 0.01).sin(),
                a: 0.0,
                theta: 0.01 * (k as f64 * 0.02).sin(),
                torque: 800.0,
                engine_speed: 1300.0,
                fuel: 0.02,
            })
            .collect();
        TripLog::new(50.0, records).unwrap()
    }

    #[test]
    fn examples_have_model_shapes() {
        let sampler = SamplerConfig {
            primitive_length: 8,
            window_step: 100.0,
            count: 3,
            ..SamplerConfig::default()
        };
        let trips = vec![trip(120)];
        let stats = FeatureStats::fit_trips(&trips).unwrap();
        let ex = build_examples(&trips, &stats, &sampler, 6, 5).unwrap();
        // first admissible position is index 15 (s = 800 = 2 * 8 * 50); last leaves 6 points
        assert_eq!(ex.len(), (15..114).step_by(5).count());
        let e = &ex[0];
        assert_eq!(e.samples.len(), 3);
        assert_eq!(e.samples[0].shape(), (8, 6));
        assert_eq!(e.history.shape(), (8, 6));
        assert_eq!(e.future_known.shape(), (6, 3));
        assert_eq!(e.target.shape(), (6, 3));
        assert!(e.target.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
