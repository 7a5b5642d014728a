//! Online past-data sampler: the growing trip buffer, candidate windows for
//! sample primitives, and slope-stratified primitive selection.

use serde::{Deserialize, Serialize};

use crate::data::{feature, make_chunk, DataChunk, TripLog, TripRecord};
use crate::error::{NpcError, Result};

const S_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Primitive length `l_h` in grid points.
    pub primitive_length: usize,
    /// Sliding-window step in meters.
    pub window_step: f64,
    /// Oldest admissible sample start, in meters behind the current position.
    pub max_distance: f64,
    /// Distance between primitive refreshes, in meters.
    pub refresh_interval: f64,
    /// Number of sample primitives `p`.
    pub count: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            primitive_length: 40,
            window_step: 1000.0,
            max_distance: 100_000.0,
            refresh_interval: 100_000.0,
            count: 10,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, delta_s: f64) -> Result<()> {
        let span = self.primitive_length as f64 * delta_s;
        let steps = self.window_step / delta_s;
        if self.primitive_length == 0 || span > self.max_distance {
            return Err(NpcError::Config(format!(
                "sampler: primitive span {span} m must be positive and within max_distance"
            )));
        }
        if self.window_step < delta_s || (steps - steps.round()).abs() > 1e-9 {
            return Err(NpcError::Config(
                "sampler.window_step must be a positive multiple of delta_s".into(),
            ));
        }
        if self.count == 0 {
            return Err(NpcError::Config("sampler.count must be at least 1".into()));
        }
        Ok(())
    }

    fn span(&self, delta_s: f64) -> f64 {
        self.primitive_length as f64 * delta_s
    }
}

/// Append-only record of the current trip on the `Δs` grid.
#[derive(Clone, Debug)]
pub struct TripBuffer {
    log: TripLog,
    origin: f64,
}

impl TripBuffer {
    pub fn new(delta_s: f64) -> Self {
        TripBuffer::with_origin(delta_s, 0.0)
    }

    /// The first record must land at `origin + Δs`.
    pub fn with_origin(delta_s: f64, origin: f64) -> Self {
        TripBuffer {
            log: TripLog::empty(delta_s),
            origin,
        }
    }

    pub fn s_now(&self) -> f64 {
        self.log.last_s().unwrap_or(self.origin)
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn delta_s(&self) -> f64 {
        self.log.delta_s
    }

    pub fn log(&self) -> &TripLog {
        &self.log
    }

    pub fn len(&self) -> usize {
        self.log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }

    pub fn append(&mut self, record: TripRecord) -> Result<()> {
        let expected = self.s_now() + self.delta_s();
        if (record.s - expected).abs() > S_TOL {
            return Err(NpcError::Contiguity {
                expected,
                got: record.s,
            });
        }
        if !record.features().iter().all(|x| x.is_finite()) {
            return Err(NpcError::Data(format!("non-finite record at s = {}", record.s)));
        }
        // snap onto the grid so later index arithmetic stays exact
        self.log.push_unchecked(TripRecord {
            s: expected,
            ..record
        });
        Ok(())
    }
}

/// Start positions `s_t` of admissible sample windows, oldest first.
///
/// The newest window ends `l_h·Δs` before `s_now` so it never overlaps the
/// latest history; the oldest starts no earlier than `s_now - max_distance`.
pub fn candidate_windows(buffer: &TripBuffer, cfg: &SamplerConfig) -> Vec<f64> {
    let delta_s = buffer.delta_s();
    let span = cfg.span(delta_s);
    let s_now = buffer.s_now();
    let newest = s_now - 2.0 * span;
    let lower = buffer.origin().max(s_now - cfg.max_distance);
    if newest < lower - S_TOL {
        return Vec::new();
    }
    let count = ((newest - lower) / cfg.window_step + S_TOL).floor() as usize + 1;
    (0..count)
        .rev()
        .map(|k| newest - k as f64 * cfg.window_step)
        .collect()
}

/// Latest `l_h` records, ending at `s_now`.
pub fn history_chunk(buffer: &TripBuffer, cfg: &SamplerConfig) -> Result<DataChunk> {
    let span = cfg.span(buffer.delta_s());
    make_chunk(buffer.log(), buffer.s_now() - span, cfg.primitive_length)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrimitiveSet {
    pub samples: Vec<DataChunk>,
    pub history: DataChunk,
    pub generated_at: f64,
}

/// Picks `p` sample primitives and the latest history chunk.
///
/// With more than `p` candidates, windows are ranked by mean slope, split
/// into `p` equal-rank strata and the median-rank window of each stratum is
/// taken. With fewer, all are taken and the newest is repeated.
pub fn select_primitives(buffer: &TripBuffer, cfg: &SamplerConfig) -> Result<PrimitiveSet> {
    let starts = candidate_windows(buffer, cfg);
    if starts.is_empty() {
        return Err(NpcError::ColdStart);
    }
    let windows = starts
        .iter()
        .map(|&s| make_chunk(buffer.log(), s, cfg.primitive_length))
        .collect::<Result<Vec<_>>>()?;
    let p = cfg.count;
    let samples = if windows.len() <= p {
        let newest = windows[windows.len() - 1].clone();
        let mut out = windows;
        out.resize(p, newest);
        out
    } else {
        let mut ranked: Vec<(f64, usize)> = windows
            .iter()
            .enumerate()
            .map(|(i, w)| (w.column_mean(feature::THETA), i))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let n = ranked.len();
        (0..p)
            .map(|k| {
                let lo = k * n / p;
                let hi = (k + 1) * n / p;
                let median = lo + (hi - lo - 1) / 2;
                windows[ranked[median].1].clone()
            })
            .collect()
    };
    Ok(PrimitiveSet {
        samples,
        history: history_chunk(buffer, cfg)?,
        generated_at: buffer.s_now(),
    })
}

pub fn refresh_due(set: &PrimitiveSet, s_now: f64, cfg: &SamplerConfig) -> bool {
    s_now - set.generated_at >= cfg.refresh_interval - S_TOL
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(s: f64, theta: f64) -> TripRecord {
        TripRecord {
            s,
            v: 20.0,
            a: 0.0,
            theta,
            torque: 500.0,
            engine_speed: 1300.0,
            fuel: 0.02,
        }
    }

    fn buffer_of(n: usize, theta: impl Fn(f64) -> f64) -> TripBuffer {
        let mut b = TripBuffer::new(50.0);
        for k in 1..=n {
            let s = k as f64 * 50.0;
            b.append(record(s, theta(s))).unwrap();
        }
        b
    }

    #[test]
    fn append_bootstrap_and_gap() {
        let mut b = TripBuffer::new(50.0);
        b.append(record(50.0, 0.0)).unwrap();
        assert_eq!(b.s_now(), 50.0);
        assert!(matches!(
            b.append(record(150.0, 0.0)),
            Err(NpcError::Contiguity { .. })
        ));
        assert!(b.append(record(50.0, 0.0)).is_err());
    }

    #[test]
    fn replayed_appends_form_a_chunk() {
        let b = buffer_of(40, |_| 0.01);
        let c = make_chunk(b.log(), 0.0, 40).unwrap();
        assert_eq!(c.len(), 40);
        assert_eq!(c.endpoint(39), b.s_now());
    }

    #[test]
    fn ten_km_buffer_windows() {
        // records at 50..=10000: sample windows must end at or before 8 km
        let b = buffer_of(200, |_| 0.0);
        let starts = candidate_windows(&b, &SamplerConfig::default());
        assert_eq!(starts, vec![0.0, 1000.0, 2000.0, 3000.0, 4000.0, 5000.0, 6000.0]);
    }

    #[test]
    fn minimal_history_has_one_window() {
        let cfg = SamplerConfig::default();
        assert!(candidate_windows(&buffer_of(79, |_| 0.0), &cfg).is_empty());
        assert_eq!(candidate_windows(&buffer_of(80, |_| 0.0), &cfg), vec![0.0]);
        assert!(matches!(
            select_primitives(&buffer_of(60, |_| 0.0), &cfg),
            Err(NpcError::ColdStart)
        ));
    }

    #[test]
    fn long_trip_is_capped_at_max_distance() {
        let b = buffer_of(3000, |_| 0.0);
        let starts = candidate_windows(&b, &SamplerConfig::default());
        assert_eq!(starts[0], b.s_now() - 100_000.0);
        assert_eq!(starts.len(), 97);
    }

    #[test]
    fn exact_fit_and_padding() {
        let cfg = SamplerConfig::default();
        // 10 candidates: newest start 9 km => s_now = 13 km
        let b = buffer_of(260, |s| s * 1e-6);
        assert_eq!(candidate_windows(&b, &cfg).len(), 10);
        let set = select_primitives(&b, &cfg).unwrap();
        let starts: Vec<f64> = set.samples.iter().map(|c| c.start_s).collect();
        assert_eq!(starts, (0..10).map(|k| k as f64 * 1000.0).collect::<Vec<_>>());

        let b = buffer_of(120, |_| 0.0);
        let set = select_primitives(&b, &cfg).unwrap();
        let starts: Vec<f64> = set.samples.iter().map(|c| c.start_s).collect();
        assert_eq!(starts[..3], [0.0, 1000.0, 2000.0]);
        assert!(starts[3..].iter().all(|&s| s == 2000.0));
        assert_eq!(set.history.end_s(), b.s_now());
        assert_eq!(set.samples.len(), 10);
    }

    #[test]
    fn stratified_selection_spreads_slopes() {
        let cfg = SamplerConfig {
            max_distance: 200_000.0,
            ..SamplerConfig::default()
        };
        // 100 candidates, slope ramps linearly 0 -> 0.05 over the trip
        let n = ((99 * 1000 + 4000) / 50) as usize;
        let total = n as f64 * 50.0;
        let b = buffer_of(n, |s| 0.05 * s / total);
        assert_eq!(candidate_windows(&b, &cfg).len(), 100);
        let set = select_primitives(&b, &cfg).unwrap();
        let mut slopes: Vec<f64> = set
            .samples
            .iter()
            .map(|c| c.column_mean(feature::THETA))
            .collect();
        slopes.sort_by(f64::total_cmp);
        // oracle: median of each 10-wide rank block of the sorted candidate slopes
        let mut all: Vec<f64> = candidate_windows(&b, &cfg)
            .iter()
            .map(|&s| make_chunk(b.log(), s, 40).unwrap().column_mean(feature::THETA))
            .collect();
        all.sort_by(f64::total_cmp);
        for (k, got) in slopes.iter().enumerate() {
            assert!((got - all[10 * k + 4]).abs() < 1e-12);
        }
        let gaps: Vec<f64> = slopes.windows(2).map(|w| w[1] - w[0]).collect();
        let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!(gaps.iter().all(|g| (g - mean_gap).abs() < 0.1 * mean_gap));
    }

    #[test]
    fn refresh_threshold() {
        let cfg = SamplerConfig::default();
        let b = buffer_of(80, |_| 0.0);
        let mut set = select_primitives(&b, &cfg).unwrap();
        set.generated_at = 0.0;
        assert!(refresh_due(&set, 100_000.0, &cfg));
        assert!(!refresh_due(&set, 99_950.0, &cfg));
        assert!(!refresh_due(&set, 0.0, &cfg));
    }

    #[test]
    fn selection_is_deterministic() {
        let cfg = SamplerConfig::default();
        let b = buffer_of(900, |s| 0.03 * (s / 2500.0).sin());
        assert_eq!(select_primitives(&b, &cfg).unwrap(), select_primitives(&b, &cfg).unwrap());
    }

    proptest! {
        #[test]
        fn candidate_count_matches_enumeration(n in 1usize..2500, step_k in 1usize..40, max_k in 2usize..400) {
            let cfg = SamplerConfig {
                window_step: step_k as f64 * 50.0,
                max_distance: (40 + max_k) as f64 * 50.0,
                ..SamplerConfig::default()
            };
            let b = buffer_of(n, |_| 0.0);
            let starts = candidate_windows(&b, &cfg);
            // brute force: every grid start on the step lattice anchored at the newest admissible end
            let s_now = b.s_now();
            let span = 2000.0;
            let mut brute = Vec::new();
            let mut k = 0usize;
            loop {
                let s = s_now - 2.0 * span - k as f64 * cfg.window_step;
                if s < 0.0 || s < s_now - cfg.max_distance { break; }
                brute.push(s);
                k += 1;
            }
            brute.reverse();
            prop_assert_eq!(&starts, &brute);
            let usable = s_now.min(cfg.max_distance) - span;
            if usable >= span {
                let formula = ((usable - span) / cfg.window_step).floor() as usize + 1;
                prop_assert_eq!(starts.len(), formula);
            } else {
                prop_assert!(starts.is_empty());
            }
            for s in &starts {
                prop_assert!(s + span <= s_now - span + 1e-9);
            }
        }
    }
}
