//! CSV, JSON and SVG report files. Output bytes depend only on the input.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::evaluate::{Evaluation, FuelFit, RunSeries};
use crate::error::{NpcError, Result};

pub const RESULTS_CSV_HEADER: &str = "method,scenario,fuel_l_100km,speed_diff_mps,cost,saving_pct,fitted";
pub const RUNS_CSV_HEADER: &str =
    "method,scenario,v_target_mps,distance_m,duration_s,fuel_l,fuel_l_100km,mean_speed_mps,speed_diff_mps";
pub const SUMMARY_CSV_HEADER: &str =
    "method,scenarios,mean_fuel_l_100km,mean_speed_diff_mps,mean_cost,mean_saving_pct,cost_wins";

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

pub fn results_csv(ev: &Evaluation) -> String {
    let mut out = format!("{RESULTS_CSV_HEADER}\n");
    for r in &ev.results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method,
            r.scenario,
            r.fuel,
            r.speed_difference,
            r.cost,
            opt(r.saving_pct),
            r.fitted
        );
    }
    out
}

pub fn runs_csv(ev: &Evaluation) -> String {
    let mut out = format!("{RUNS_CSV_HEADER}\n");
    for r in &ev.runs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.method,
            r.scenario,
            r.v_target,
            r.distance_m,
            r.duration_s,
            r.fuel_l,
            r.fuel_l_100km,
            r.mean_speed,
            r.speed_difference
        );
    }
    out
}

pub fn summary_csv(ev: &Evaluation) -> String {
    let mut out = format!("{SUMMARY_CSV_HEADER}\n");
    for s in &ev.summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.method,
            s.scenarios,
            s.mean_fuel,
            s.mean_speed_difference,
            s.mean_cost,
            opt(s.mean_saving_pct),
            s.cost_wins.map_or(String::new(), |w| w.to_string())
        );
    }
    out
}

struct Frame {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Frame {
    fn new(x: f64, y: f64, w: f64, h: f64, xs: (f64, f64), ys: (f64, f64)) -> Self {
        let pad = |(lo, hi): (f64, f64)| {
            if hi - lo < 1e-9 {
                (lo - 0.5, hi + 0.5)
            } else {
                let m = 0.05 * (hi - lo);
                (lo - m, hi + m)
            }
        };
        Frame {
            x,
            y,
            w,
            h,
            x_range: xs,
            y_range: pad(ys),
        }
    }

    fn px(&self, v: f64) -> f64 {
        let (lo, hi) = self.x_range;
        let span = if hi > lo { hi - lo } else { 1.0 };
        self.x + (v - lo) / span * self.w
    }

    fn py(&self, v: f64) -> f64 {
        let (lo, hi) = self.y_range;
        self.y + self.h - (v - lo) / (hi - lo) * self.h
    }

    fn axes(&self, out: &mut String, x_label: &str, y_label: &str) {
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
            self.x, self.y, self.w, self.h
        );
        for (v, anchor_y) in [(self.y_range.0, self.y + self.h), (self.y_range.1, self.y + 10.0)] {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{:.2}</text>"#,
                self.x - 4.0,
                anchor_y,
                v
            );
        }
        for (v, anchor) in [(self.x_range.0, "start"), (self.x_range.1, "end")] {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="{anchor}">{:.2}</text>"#,
                self.px(v),
                self.y + self.h + 12.0,
                v
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            self.x + self.w / 2.0,
            self.y + self.h + 26.0,
            escape(x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            self.x + 4.0,
            self.y - 4.0,
            escape(y_label)
        );
    }

    fn polyline(&self, out: &mut String, xs: &[f64], ys: &[f64], color: &str, class: &str) {
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="{class}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn svg_open(w: f64, h: f64, title: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<text x="10" y="18" font-size="13">{}</text>"#, escape(title));
    out
}

/// Fuel against target speed for one scenario: the simulated points and the
/// fitted curve of every method.
pub fn fuel_fit_svg(scenario: &str, fits: &[&FuelFit], v_query: f64) -> String {
    let (w, h) = (640.0, 420.0);
    let mut out = svg_open(w, h, &format!("fuel vs target speed, {scenario}"));
    let xs = range(fits.iter().flat_map(|f| f.speeds.iter().copied()));
    let samples = |f: &FuelFit| -> Vec<(f64, f64)> {
        (0..=64)
            .map(|i| {
                let v = xs.0 + (xs.1 - xs.0) * i as f64 / 64.0;
                (v, f.fuel.eval(v))
            })
            .collect()
    };
    let ys = range(
        fits.iter()
            .flat_map(|f| f.fuels.iter().copied().chain(samples(f).into_iter().map(|p| p.1))),
    );
    let frame = Frame::new(70.0, 40.0, 420.0, 320.0, xs, ys);
    frame.axes(&mut out, "target speed (m/s)", "fuel (L/100 km)");
    let _ = writeln!(
        out,
        r##"<line class="query" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
        frame.y,
        frame.y + frame.h,
        x = frame.px(v_query)
    );
    for (i, f) in fits.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let curve = samples(f);
        let (cx, cy): (Vec<f64>, Vec<f64>) = curve.into_iter().unzip();
        frame.polyline(&mut out, &cx, &cy, color, "fit");
        for (&v, &fuel) in f.speeds.iter().zip(&f.fuels) {
            let _ = writeln!(
                out,
                r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#,
                frame.px(v),
                frame.py(fuel)
            );
        }
        let ly = 50.0 + 18.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="505" y="{:.2}" width="12" height="12" fill="{color}"/><text x="522" y="{:.2}" font-size="11">{}</text>"#,
            ly,
            ly + 10.0,
            escape(&f.method)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Altitude, speed and torque panels against distance for one run.
pub fn run_svg(run: &RunSeries) -> String {
    let (w, h) = (760.0, 560.0);
    let title = format!("{} on {} at {:.2} m/s", run.method, run.scenario, run.v_target);
    let mut out = svg_open(w, h, &title);
    let xs = range(run.s.iter().copied());
    let panels: [(&str, &[f64], &str); 3] = [
        ("altitude (m)", &run.altitude, "#555"),
        ("speed (m/s)", &run.v, COLORS[0]),
        ("torque (N·m)", &run.torque, COLORS[1]),
    ];
    for (i, (label, ys, color)) in panels.iter().enumerate() {
        let top = 40.0 + 170.0 * i as f64;
        let frame = Frame::new(70.0, top, 660.0, 120.0, xs, range(ys.iter().copied()));
        let x_label = if i == 2 { "distance (m)" } else { "" };
        frame.axes(&mut out, x_label, label);
        if i == 1 {
            frame.polyline(&mut out, &[xs.0, xs.1], &[run.v_target, run.v_target], "#999", "target");
        }
        frame.polyline(&mut out, &run.s, ys, color, "series");
    }
    out.push_str("</svg>\n");
    out
}

fn write(dir: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| NpcError::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes the tables, the evaluation JSON and all plots into `dir`.
pub fn write_report(ev: &Evaluation, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| NpcError::io(dir, e))?;
    let mut written = Vec::new();
    write(dir, "results.csv", &results_csv(ev), &mut written)?;
    write(dir, "runs.csv", &runs_csv(ev), &mut written)?;
    write(dir, "summary.csv", &summary_csv(ev), &mut written)?;
    write(dir, "results.json", &format!("{}\n", serde_json::to_string_pretty(ev)?), &mut written)?;
    let mut by_scenario: BTreeMap<&str, Vec<&FuelFit>> = BTreeMap::new();
    for f in &ev.fits {
        by_scenario.entry(&f.scenario).or_default().push(f);
    }
    for (scenario, fits) in by_scenario {
        write(dir, &format!("fuel_fit__{scenario}.svg"), &fuel_fit_svg(scenario, &fits, ev.v_query), &mut written)?;
    }
    for run in &ev.series {
        let name = format!("run__{}__{}__{}.svg", run.method, run.scenario, run.v_target);
        write(dir, &name, &run_svg(run), &mut written)?;
    }
    Ok(written)
}
