//! Future-data sampler: anchor points on the upcoming altitude curve, speed
//! bounds from a reference speed line, enumeration of candidate speed series,
//! piecewise-linear interpolation onto the grid and assembly of the known
//! part `(v, a, θ)` of each candidate future chunk.

use serde::{Deserialize, Serialize};

use crate::data::{feature, DataChunk, RouteProfile};
use crate::error::{NpcError, Result};
use crate::tensor::Matrix;

pub const GRAVITY: f64 = 9.81;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FutureConfig {
    /// Horizon `l_f` in grid points.
    pub horizon: usize,
    /// Anchor slope threshold `ε` (rise over run).
    pub epsilon: f64,
    /// Half-width `v_d` of the anchor speed bounds, m/s.
    pub half_width: f64,
    /// Evenly spaced speeds per bounded anchor (`x`).
    pub samples_per_anchor: usize,
    /// User target speed `v_t`, m/s.
    pub target_speed: f64,
    pub min_speed: f64,
    pub max_speed: f64,
}

impl Default for FutureConfig {
    fn default() -> Self {
        FutureConfig {
            horizon: 60,
            epsilon: 1e-3,
            half_width: 1.5,
            samples_per_anchor: 12,
            target_speed: 21.5,
            min_speed: 5.0,
            max_speed: 25.0,
        }
    }
}

impl FutureConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(NpcError::Config(format!("future: {msg}")));
        if self.horizon < 2 {
            return bad("horizon must be at least 2 points");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.half_width > 0.0) {
            return bad("half_width must be positive");
        }
        if self.samples_per_anchor == 0 {
            return bad("samples_per_anchor must be at least 1");
        }
        if !(self.min_speed > 0.0 && self.max_speed > self.min_speed) {
            return bad("need 0 < min_speed < max_speed");
        }
        if !(self.target_speed > 0.0) {
            return bad("target_speed must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Extremum {
    Max,
    Min,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    /// Distance ahead of the current position, m.
    pub s: f64,
    /// Grid offset ahead of the current position.
    pub offset: usize,
    pub extremum: Extremum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeyKind {
    Start,
    Anchor,
    End,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyPoint {
    pub s: f64,
    pub kind: KeyKind,
    pub lo: f64,
    pub hi: f64,
    /// Sampled across `[lo, hi]`; only the first two anchors are.
    pub bounded: bool,
}

impl KeyPoint {
    fn fixed(s: f64, kind: KeyKind, v: f64) -> Self {
        KeyPoint {
            s,
            kind,
            lo: v,
            hi: v,
            bounded: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedSeries {
    /// One speed per key point.
    pub speeds: Vec<f64>,
    /// Sample index at the first and second bounded anchor.
    pub index: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct FutureChunkSet {
    pub key_points: Vec<KeyPoint>,
    pub series: Vec<SpeedSeries>,
    /// `(v, a, θ, 0, 0, 0)` rows, one chunk per series.
    pub chunks: Vec<DataChunk>,
}

impl FutureChunkSet {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

fn grid_index(profile: &RouteProfile, s_now: f64, horizon: usize) -> Result<usize> {
    let k0 = profile.index_of(s_now).ok_or(NpcError::OutOfRange {
        from: s_now,
        to: s_now + horizon as f64 * profile.delta_s,
    })?;
    if k0 + horizon >= profile.len() {
        return Err(NpcError::OutOfRange {
            from: s_now,
            to: s_now + horizon as f64 * profile.delta_s,
        });
    }
    Ok(k0)
}

/// Grid points ahead where the altitude has a strict local extremum and the
/// centred slope `|δz/δs|` is below `ε`. Plateaus produce no anchor.
pub fn detect_anchors(profile: &RouteProfile, s_now: f64, cfg: &FutureConfig) -> Result<Vec<Anchor>> {
    let k0 = grid_index(profile, s_now, cfg.horizon)?;
    let z = &profile.altitude;
    let mut anchors = Vec::new();
    for u in 1..cfg.horizon {
        let k = k0 + u;
        let back = z[k] - z[k - 1];
        let fwd = z[k + 1] - z[k];
        let extremum = if back > 0.0 && fwd < 0.0 {
            Extremum::Max
        } else if back < 0.0 && fwd > 0.0 {
            Extremum::Min
        } else {
            continue;
        };
        let centred = (z[k + 1] - z[k - 1]).abs() / (2.0 * profile.delta_s);
        if centred < cfg.epsilon {
            anchors.push(Anchor {
                s: u as f64 * profile.delta_s,
                offset: u,
                extremum,
            });
        }
    }
    Ok(anchors)
}

/// Speed the truck would reach at each anchor by trading kinetic against
/// potential energy from the current state, clamped to `[min_speed, max_speed]`.
pub fn reference_speed_line(
    v_now: f64,
    profile: &RouteProfile,
    s_now: f64,
    anchors: &[Anchor],
    cfg: &FutureConfig,
) -> Vec<f64> {
    let z_now = profile.altitude_at(s_now);
    anchors
        .iter()
        .map(|a| {
            let dz = profile.altitude_at(s_now + a.s) - z_now;
            let v2 = (v_now * v_now - 2.0 * GRAVITY * dz).max(cfg.min_speed * cfg.min_speed);
            v2.sqrt().clamp(cfg.min_speed, cfg.max_speed)
        })
        .collect()
}

/// Start at `v_now`, the first two anchors bounded by `v_ref ± v_d`, all
/// later anchors and the horizon end fixed at the target speed.
pub fn build_key_points(
    v_now: f64,
    anchors: &[Anchor],
    reference: &[f64],
    cfg: &FutureConfig,
    delta_s: f64,
) -> Vec<KeyPoint> {
    let floor = |v: f64| v.max(cfg.min_speed);
    let mut keys = Vec::with_capacity(anchors.len() + 2);
    keys.push(KeyPoint::fixed(0.0, KeyKind::Start, floor(v_now)));
    for (i, (a, &v_ref)) in anchors.iter().zip(reference).enumerate() {
        if i < 2 {
            keys.push(KeyPoint {
                s: a.s,
                kind: KeyKind::Anchor,
                lo: floor(v_ref - cfg.half_width),
                hi: floor(v_ref + cfg.half_width),
                bounded: true,
            });
        } else {
            keys.push(KeyPoint::fixed(a.s, KeyKind::Anchor, floor(cfg.target_speed)));
        }
    }
    keys.push(KeyPoint::fixed(
        cfg.horizon as f64 * delta_s,
        KeyKind::End,
        floor(cfg.target_speed),
    ));
    keys
}

/// `x` evenly spaced values over `[lo, hi]` including both ends; the midpoint for `x = 1`.
pub fn even_division(lo: f64, hi: f64, x: usize) -> Vec<f64> {
    if x == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..x)
        .map(|k| lo + (hi - lo) * k as f64 / (x - 1) as f64)
        .collect()
}

/// Cartesian product over the bounded key points: `x²`, `x` or one series.
pub fn enumerate_series(keys: &[KeyPoint], cfg: &FutureConfig) -> Vec<SpeedSeries> {
    let bounded: Vec<usize> = keys
        .iter()
        .enumerate()
        .filter(|(_, k)| k.bounded)
        .map(|(i, _)| i)
        .collect();
    let x = cfg.samples_per_anchor;
    let base: Vec<f64> = keys.iter().map(|k| k.lo).collect();
    let grids: Vec<Vec<f64>> = bounded
        .iter()
        .map(|&i| even_division(keys[i].lo, keys[i].hi, x))
        .collect();
    match bounded.len() {
        0 => vec![SpeedSeries {
            speeds: base,
            index: (0, 0),
        }],
        1 => grids[0]
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let mut speeds = base.clone();
                speeds[bounded[0]] = v;
                SpeedSeries {
                    speeds,
                    index: (i, 0),
                }
            })
            .collect(),
        _ => {
            let mut out = Vec::with_capacity(x * x);
            for (i, &v1) in grids[0].iter().enumerate() {
                for (j, &v2) in grids[1].iter().enumerate() {
                    let mut speeds = base.clone();
                    speeds[bounded[0]] = v1;
                    speeds[bounded[1]] = v2;
                    out.push(SpeedSeries {
                        speeds,
                        index: (i, j),
                    });
                }
            }
            out
        }
    }
}

/// Linear interpolation between key points `(s_a, v_a)` and `(s_b, v_b)`.
#[inline]
pub fn interpolate_speed(s_a: f64, v_a: f64, s_b: f64, v_b: f64, s_u: f64) -> f64 {
    ((s_b - s_u) * v_a + (s_u - s_a) * v_b) / (s_b - s_a)
}

/// Speeds at the `l_f` endpoints `u·Δs`, `u = 1..=l_f`.
pub fn interpolate_series(
    series: &SpeedSeries,
    keys: &[KeyPoint],
    horizon: usize,
    delta_s: f64,
) -> Result<Vec<f64>> {
    if series.speeds.len() != keys.len() || keys.len() < 2 {
        return Err(NpcError::Shape("speed series does not match key points".into()));
    }
    for w in 0..keys.len() - 1 {
        if keys[w + 1].s < keys[w].s {
            return Err(NpcError::Data("key points must be sorted by distance".into()));
        }
        if keys[w + 1].s == keys[w].s && series.speeds[w + 1] != series.speeds[w] {
            return Err(NpcError::DegenerateSegment { s: keys[w].s });
        }
    }
    let end = keys[keys.len() - 1].s;
    let mut seg = 0;
    let mut out = Vec::with_capacity(horizon);
    for u in 1..=horizon {
        let s_u = u as f64 * delta_s;
        if s_u > end + 1e-9 || s_u < keys[0].s {
            return Err(NpcError::OutOfRange {
                from: keys[0].s,
                to: s_u,
            });
        }
        while seg + 2 < keys.len() && keys[seg + 1].s < s_u {
            seg += 1;
        }
        let (a, b) = (&keys[seg], &keys[seg + 1]);
        let v = if s_u == b.s || a.s == b.s {
            series.speeds[seg + 1]
        } else if s_u == a.s {
            series.speeds[seg]
        } else {
            interpolate_speed(a.s, series.speeds[seg], b.s, series.speeds[seg + 1], s_u)
        };
        out.push(v);
    }
    Ok(out)
}

/// Builds one future chunk per speed line: `a_u = (v_u² − v_{u−1}²)/(2Δs)`
/// with `v_0 = v_now`, slope from the route, `T, S, f` zero.
pub fn assemble_future_chunks(
    speeds: &[Vec<f64>],
    v_now: f64,
    profile: &RouteProfile,
    s_now: f64,
) -> Result<Vec<DataChunk>> {
    let delta_s = profile.delta_s;
    speeds
        .iter()
        .map(|line| {
            let mut values = Matrix::zeros(line.len(), feature::COUNT);
            let mut prev = v_now;
            for (u, &v) in line.iter().enumerate() {
                let s = s_now + (u + 1) as f64 * delta_s;
                let k = profile.index_of(s).ok_or(NpcError::OutOfRange { from: s_now, to: s })?;
                values.set(u, feature::V, v);
                values.set(u, feature::A, (v * v - prev * prev) / (2.0 * delta_s));
                values.set(u, feature::THETA, profile.slope[k]);
                prev = v;
            }
            DataChunk::new(s_now, delta_s, values)
        })
        .collect()
}

/// Full future sampling pipeline at `s_now`.
pub fn sample_futures(
    profile: &RouteProfile,
    s_now: f64,
    v_now: f64,
    cfg: &FutureConfig,
) -> Result<FutureChunkSet> {
    let anchors = detect_anchors(profile, s_now, cfg)?;
    let reference = reference_speed_line(v_now, profile, s_now, &anchors, cfg);
    let key_points = build_key_points(v_now, &anchors, &reference, cfg, profile.delta_s);
    let series = enumerate_series(&key_points, cfg);
    let lines = series
        .iter()
        .map(|s| interpolate_series(s, &key_points, cfg.horizon, profile.delta_s))
        .collect::<Result<Vec<_>>>()?;
    let chunks = assemble_future_chunks(&lines, v_now, profile, s_now)?;
    Ok(FutureChunkSet {
        key_points,
        series,
        chunks,
    })
}
