//! Distance-gridded feature representation: route profiles, trip logs,
//! data chunks, min-max feature statistics and CSV ingestion.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NpcError, Result};
use crate::tensor::Matrix;

/// Feature column order inside every chunk.
pub mod feature {
    pub const V: usize = 0;
    pub const A: usize = 1;
    pub const THETA: usize = 2;
    pub const TORQUE: usize = 3;
    pub const ENGINE_SPEED: usize = 4;
    pub const FUEL: usize = 5;

    pub const COUNT: usize = 6;
    pub const NAMES: [&str; COUNT] = ["v", "a", "theta", "T", "S", "f"];
}

/// Grid tolerance when matching distances, in meters.
const S_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Distance step in meters.
    pub delta_s: f64,
    pub feature_count: usize,
    pub known_future: usize,
    pub predicted: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            delta_s: 50.0,
            feature_count: feature::COUNT,
            known_future: 3,
            predicted: 3,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_s > 0.0 && self.delta_s.is_finite()) {
            return Err(NpcError::Config(format!(
                "grid.delta_s must be positive, got {}",
                self.delta_s
            )));
        }
        if self.feature_count != feature::COUNT
            || self.known_future + self.predicted != self.feature_count
            || self.known_future != 3
        {
            return Err(NpcError::Config(
                "feature layout is fixed to (v, a, theta | T, S, f)".into(),
            ));
        }
        Ok(())
    }
}

/// `l` grid rows of the six features with endpoints `start_s + k·Δs`, `k = 1..=l`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataChunk {
    pub start_s: f64,
    pub delta_s: f64,
    pub values: Matrix,
}

impl DataChunk {
    pub fn new(start_s: f64, delta_s: f64, values: Matrix) -> Result<Self> {
        if values.cols() != feature::COUNT {
            return Err(NpcError::Shape(format!(
                "chunk needs {} columns, got {}",
                feature::COUNT,
                values.cols()
            )));
        }
        Ok(DataChunk {
            start_s,
            delta_s,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    /// Distance of row `k` (0-based).
    pub fn endpoint(&self, k: usize) -> f64 {
        self.start_s + (k + 1) as f64 * self.delta_s
    }

    pub fn end_s(&self) -> f64 {
        self.start_s + self.len() as f64 * self.delta_s
    }

    pub fn column(&self, feature: usize) -> Vec<f64> {
        self.values.col(feature)
    }

    pub fn column_mean(&self, feature: usize) -> f64 {
        let n = self.len().max(1) as f64;
        (0..self.len()).map(|r| self.values.get(r, feature)).sum::<f64>() / n
    }
}

/// Altitude and slope on a uniform distance grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteProfile {
    pub start_s: f64,
    pub delta_s: f64,
    pub altitude: Vec<f64>,
    pub slope: Vec<f64>,
}

impl RouteProfile {
    /// Slopes by backward difference; the first point copies its successor.
    pub fn from_altitudes(start_s: f64, delta_s: f64, altitude: Vec<f64>) -> Result<Self> {
        if altitude.len() < 2 {
            return Err(NpcError::Data("route needs at least two grid points".into()));
        }
        if !(delta_s > 0.0) {
            return Err(NpcError::Config(format!("delta_s must be positive, got {delta_s}")));
        }
        let mut slope = Vec::with_capacity(altitude.len());
        slope.push(0.0);
        for k in 1..altitude.len() {
            slope.push(((altitude[k] - altitude[k - 1]) / delta_s).atan());
        }
        slope[0] = slope[1];
        Ok(RouteProfile {
            start_s,
            delta_s,
            altitude,
            slope,
        })
    }

    pub fn len(&self) -> usize {
        self.altitude.len()
    }

    pub fn is_empty(&self) -> bool {
        self.altitude.is_empty()
    }

    pub fn s_at(&self, k: usize) -> f64 {
        self.start_s + k as f64 * self.delta_s
    }

    pub fn end_s(&self) -> f64 {
        self.s_at(self.len() - 1)
    }

    pub fn length(&self) -> f64 {
        self.end_s() - self.start_s
    }

    /// Index of the grid point at `s`, if `s` lies on the grid.
    pub fn index_of(&self, s: f64) -> Option<usize> {
        let k = ((s - self.start_s) / self.delta_s).round();
        if k < 0.0 || k as usize >= self.len() {
            return None;
        }
        let k = k as usize;
        ((self.s_at(k) - s).abs() < S_TOL).then_some(k)
    }

    /// Piecewise-linear altitude, clamped to the ends.
    pub fn altitude_at(&self, s: f64) -> f64 {
        let x = (s - self.start_s) / self.delta_s;
        if x <= 0.0 {
            return self.altitude[0];
        }
        let last = self.len() - 1;
        if x >= last as f64 {
            return self.altitude[last];
        }
        let k = x.floor() as usize;
        let frac = x - k as f64;
        self.altitude[k] + frac * (self.altitude[k + 1] - self.altitude[k])
    }

    /// Slope of the grid cell containing `s`: cell `(s_{k-1}, s_k]` carries `θ_k`.
    pub fn slope_at(&self, s: f64) -> f64 {
        let x = (s - self.start_s) / self.delta_s;
        if x <= 0.0 {
            return self.slope[0];
        }
        let k = (x - 1e-9).ceil() as usize;
        self.slope[k.min(self.len() - 1)]
    }

    /// Appends `next`, shifting its altitude so the join is continuous.
    /// `next` must share the grid step; its first point coincides with our last.
    pub fn concat(&self, next: &RouteProfile) -> Result<RouteProfile> {
        if (self.delta_s - next.delta_s).abs() > S_TOL {
            return Err(NpcError::Data("cannot join profiles with different grid steps".into()));
        }
        let offset = self.altitude[self.len() - 1] - next.altitude[0];
        let mut altitude = self.altitude.clone();
        altitude.extend(next.altitude.iter().skip(1).map(|z| z + offset));
        RouteProfile::from_altitudes(self.start_s, self.delta_s, altitude)
    }

    pub fn max_abs_slope(&self) -> f64 {
        self.slope.iter().fold(0.0, |m, t| m.max(t.abs()))
    }
}

/// Linearly interpolates raw `(s, z)` points onto the `Δs` grid.
pub fn resample_route(raw: &[(f64, f64)], cfg: &GridConfig) -> Result<RouteProfile> {
    if raw.len() < 2 {
        return Err(NpcError::Data("route needs at least two raw points".into()));
    }
    for (i, w) in raw.windows(2).enumerate() {
        if !(w[1].0 > w[0].0) {
            return Err(NpcError::NonMonotone {
                index: i + 1,
                s: w[1].0,
            });
        }
    }
    let s0 = raw[0].0;
    let span = raw[raw.len() - 1].0 - s0;
    let n = (span / cfg.delta_s + S_TOL).floor() as usize + 1;
    let mut altitude = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let s = s0 + k as f64 * cfg.delta_s;
        while seg + 2 < raw.len() && raw[seg + 1].0 < s {
            seg += 1;
        }
        let (sa, za) = raw[seg];
        let (sb, zb) = raw[seg + 1];
        let t = ((s - sa) / (sb - sa)).clamp(0.0, 1.0);
        altitude.push(za + t * (zb - za));
    }
    RouteProfile::from_altitudes(s0, cfg.delta_s, altitude)
}

/// One grid record of a trip. `v`, `a`, `theta` describe the endpoint;
/// `torque` and `engine_speed` are interval averages and `fuel` the interval total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub s: f64,
    pub v: f64,
    pub a: f64,
    pub theta: f64,
    pub torque: f64,
    pub engine_speed: f64,
    pub fuel: f64,
}

impl TripRecord {
    pub fn features(&self) -> [f64; feature::COUNT] {
        [
            self.v,
            self.a,
            self.theta,
            self.torque,
            self.engine_speed,
            self.fuel,
        ]
    }

    fn is_finite(&self) -> bool {
        self.s.is_finite() && self.features().iter().all(|x| x.is_finite())
    }
}

pub const TRIP_CSV_HEADER: &str = "s_m,v_mps,a_mps2,theta_rad,T_nm,S_rpm,f_l";
pub const ROUTE_CSV_HEADER: &str = "s_m,z_m";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripLog {
    pub delta_s: f64,
    records: Vec<TripRecord>,
}

impl TripLog {
    pub fn new(delta_s: f64, records: Vec<TripRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if !r.is_finite() {
                return Err(NpcError::Data(format!("non-finite trip record at index {i}")));
            }
        }
        for w in records.windows(2) {
            if (w[1].s - w[0].s - delta_s).abs() > S_TOL {
                return Err(NpcError::Contiguity {
                    expected: w[0].s + delta_s,
                    got: w[1].s,
                });
            }
        }
        Ok(TripLog { delta_s, records })
    }

    pub fn empty(delta_s: f64) -> Self {
        TripLog {
            delta_s,
            records: Vec::new(),
        }
    }

    pub fn records(&self) -> &[TripRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first_s(&self) -> Option<f64> {
        self.records.first().map(|r| r.s)
    }

    pub fn last_s(&self) -> Option<f64> {
        self.records.last().map(|r| r.s)
    }

    pub(crate) fn push_unchecked(&mut self, record: TripRecord) {
        self.records.push(record);
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 80);
        out.push_str(TRIP_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.s, r.v, r.a, r.theta, r.torque, r.engine_speed, r.fuel
            );
        }
        out
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R, delta_s: f64) -> Result<Self> {
        let rows = read_numeric_csv(reader, TRIP_CSV_HEADER)?;
        let records = rows
            .into_iter()
            .map(|r| TripRecord {
                s: r[0],
                v: r[1],
                a: r[2],
                theta: r[3],
                torque: r[4],
                engine_speed: r[5],
                fuel: r[6],
            })
            .collect();
        TripLog::new(delta_s, records)
    }

    pub fn read_csv(path: &Path, delta_s: f64) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| NpcError::io(path, e))?;
        TripLog::from_csv_reader(file, delta_s)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| NpcError::io(path, e))
    }
}

/// The `l` records with endpoints `s_t + Δs ..= s_t + l·Δs`.
pub fn make_chunk(trip: &TripLog, s_t: f64, l: usize) -> Result<DataChunk> {
    let want_from = s_t + trip.delta_s;
    let want_to = s_t + l as f64 * trip.delta_s;
    let missing = || NpcError::OutOfRange {
        from: want_from,
        to: want_to,
    };
    let first = trip.first_s().ok_or_else(missing)?;
    let k = (want_from - first) / trip.delta_s;
    if l == 0 || k < -S_TOL || (k - k.round()).abs() > 1e-6 {
        return Err(missing());
    }
    let k = k.round() as usize;
    if k + l > trip.len() {
        return Err(missing());
    }
    let mut values = Matrix::zeros(l, feature::COUNT);
    for (row, rec) in trip.records[k..k + l].iter().enumerate() {
        values.row_mut(row).copy_from_slice(&rec.features());
    }
    DataChunk::new(s_t, trip.delta_s, values)
}

/// Per-feature min and max over a training corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureStats {
    pub fn identity() -> Self {
        FeatureStats {
            min: vec![0.0; feature::COUNT],
            max: vec![1.0; feature::COUNT],
        }
    }

    fn fit_rows<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Result<Self> {
        let mut min = vec![f64::INFINITY; feature::COUNT];
        let mut max = vec![f64::NEG_INFINITY; feature::COUNT];
        let mut any = false;
        for row in rows {
            any = true;
            for j in 0..feature::COUNT {
                min[j] = min[j].min(row[j]);
                max[j] = max[j].max(row[j]);
            }
        }
        if !any {
            return Err(NpcError::Data("cannot fit feature stats on an empty corpus".into()));
        }
        for j in 0..feature::COUNT {
            if !(max[j] > min[j]) {
                max[j] = min[j] + 1.0;
            }
        }
        Ok(FeatureStats { min, max })
    }

    pub fn fit_trips(trips: &[TripLog]) -> Result<Self> {
        let rows: Vec<[f64; feature::COUNT]> = trips
            .iter()
            .flat_map(|t| t.records.iter().map(TripRecord::features))
            .collect();
        FeatureStats::fit_rows(rows.iter().map(|r| r.as_slice()))
    }

    #[inline]
    pub fn range(&self, feature: usize) -> f64 {
        self.max[feature] - self.min[feature]
    }

    #[inline]
    pub fn normalize_value(&self, feature: usize, x: f64) -> f64 {
        (x - self.min[feature]) / self.range(feature)
    }

    #[inline]
    pub fn denormalize_value(&self, feature: usize, x: f64) -> f64 {
        x * self.range(feature) + self.min[feature]
    }

    /// Normalizes a matrix whose column `c` holds feature `first_feature + c`.
    pub fn normalize_columns(&self, m: &Matrix, first_feature: usize) -> Matrix {
        let mut out = m.clone();
        for r in 0..m.rows() {
            for (c, x) in out.row_mut(r).iter_mut().enumerate() {
                *x = self.normalize_value(first_feature + c, *x);
            }
        }
        out
    }

    pub fn denormalize_columns(&self, m: &Matrix, first_feature: usize) -> Matrix {
        let mut out = m.clone();
        for r in 0..m.rows() {
            for (c, x) in out.row_mut(r).iter_mut().enumerate() {
                *x = self.denormalize_value(first_feature + c, *x);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.len() != feature::COUNT || self.max.len() != feature::COUNT {
            return Err(NpcError::Shape(format!(
                "feature stats must cover {} features",
                feature::COUNT
            )));
        }
        if self.min.iter().zip(&self.max).any(|(a, b)| !(b > a)) {
            return Err(NpcError::Data("feature stats need max > min".into()));
        }
        Ok(())
    }
}

pub fn fit_stats(corpus: &[DataChunk]) -> Result<FeatureStats> {
    FeatureStats::fit_rows(
        corpus
            .iter()
            .flat_map(|c| (0..c.len()).map(move |r| c.values.row(r))),
    )
}

/// Min-max scaling; values outside the fitted range are not clamped.
pub fn normalize(chunk: &DataChunk, stats: &FeatureStats) -> DataChunk {
    DataChunk {
        start_s: chunk.start_s,
        delta_s: chunk.delta_s,
        values: stats.normalize_columns(&chunk.values, 0),
    }
}

pub fn denormalize(chunk: &DataChunk, stats: &FeatureStats) -> DataChunk {
    DataChunk {
        start_s: chunk.start_s,
        delta_s: chunk.delta_s,
        values: stats.denormalize_columns(&chunk.values, 0),
    }
}

/// Parses a numeric CSV with the exact `header`.
pub(crate) fn read_numeric_csv<R: std::io::Read>(reader: R, header: &str) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let expected: Vec<&str> = header.split(',').collect();
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if got != expected {
        return Err(NpcError::Data(format!(
            "unexpected CSV header {:?}, expected `{header}`",
            got.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| NpcError::Data(format!("row {}: `{f}` is not a number", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != expected.len() {
            return Err(NpcError::Data(format!("row {} has {} fields", i + 1, row.len())));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_route_csv<R: std::io::Read>(reader: R) -> Result<Vec<(f64, f64)>> {
    Ok(read_numeric_csv(reader, ROUTE_CSV_HEADER)?
        .into_iter()
        .map(|r| (r[0], r[1]))
        .collect())
}

pub fn route_csv_string(profile: &RouteProfile) -> String {
    let mut out = String::from(ROUTE_CSV_HEADER);
    out.push('\n');
    for (k, z) in profile.altitude.iter().enumerate() {
        let _ = writeln!(out, "{},{}", profile.s_at(k), z);
    }
    out
}
