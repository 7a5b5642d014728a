//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use npc_core::data::{feature, DataChunk, FeatureStats, RouteProfile};
use npc_core::eval::evaluate::{evaluate, LabeledTrace};
use npc_core::eval::metrics::{fuel_saving, interpolate_fuel_at, sim_cost};
use npc_core::eval::{pipeline, write_report, Method, RunConfig};
use npc_core::future_sampler::{
    detect_anchors, interpolate_series, interpolate_speed, FutureConfig, KeyKind, KeyPoint, SpeedSeries,
};
use npc_core::nvformer::train::{evaluate_loss, random_example, sample_coordinates};
use npc_core::nvformer::{grad_check, load, save, train, NvFormerConfig, NvFormerModel, TrainConfig};
use npc_core::optimizer::{optimize, CostWeights, Predictor};
use npc_core::past_sampler::{select_primitives, SamplerConfig, TripBuffer};
use npc_core::sim::controller::{drive, Driver};
use npc_core::sim::scenario::scenario_hash;
use npc_core::sim::trace::TraceRow;
use npc_core::sim::trips::{corpus_hash, synth_trips, TripConfig};
use npc_core::sim::{engine_speed, generate_scenarios, run_cruise, BsfcMap, ScenarioConfig, SimConfig, SimState, VehicleParams};
use npc_core::{Matrix, Result};

type Outcome = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_interpolation() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let s_a = rng.gen_range(0.0..2500.0);
        let s_b = s_a + rng.gen_range(50.0..500.0);
        let (v_a, v_b) = (rng.gen_range(5.0..25.0), rng.gen_range(5.0..25.0));
        let s_u = rng.gen_range(s_a..=s_b);
        let hand = v_a + (v_b - v_a) * (s_u - s_a) / (s_b - s_a);
        worst = worst.max((interpolate_speed(s_a, v_a, s_b, v_b, s_u) - hand).abs());
    }
    // whole lines over random key points
    for _ in 0..100 {
        let horizon = 60;
        let mut cuts: Vec<f64> = (0..rng.gen_range(0..4)).map(|_| rng.gen_range(1..horizon) as f64 * 50.0).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut keys = vec![0.0];
        keys.extend(cuts);
        keys.push(horizon as f64 * 50.0);
        let speeds: Vec<f64> = keys.iter().map(|_| rng.gen_range(5.0..25.0)).collect();
        let kps: Vec<KeyPoint> = keys
            .iter()
            .zip(&speeds)
            .map(|(&s, &v)| KeyPoint { s, kind: KeyKind::Anchor, lo: v, hi: v, bounded: false })
            .collect();
        let series = SpeedSeries { speeds: speeds.clone(), index: (0, 0) };
        let line = interpolate_series(&series, &kps, horizon, 50.0).map_err(|e| e.to_string())?;
        for (u, v) in line.iter().enumerate() {
            let s_u = (u + 1) as f64 * 50.0;
            let k = keys.iter().rposition(|&s| s < s_u).unwrap();
            let hand = speeds[k] + (speeds[k + 1] - speeds[k]) * (s_u - keys[k]) / (keys[k + 1] - keys[k]);
            worst = worst.max((v - hand).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(worst <= 1e-12 && secs < 1.0, format!("max |diff| {worst:.1e}, {secs:.3} s"))
}

fn c2_anchors() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = FutureConfig { epsilon: 1e-3, ..FutureConfig::default() };
    let (mut mismatches, mut found) = (0, 0);
    for _ in 0..100 {
        let n = 200;
        let waves: Vec<(f64, f64, f64)> = (0..rng.gen_range(1..4))
            .map(|_| (rng.gen_range(2.0..40.0), rng.gen_range(800.0..6000.0), rng.gen_range(0.0..6.3)))
            .collect();
        let z: Vec<f64> = (0..n)
            .map(|k| waves.iter().map(|(a, l, ph)| a * (2.0 * std::f64::consts::PI * k as f64 * 50.0 / l + ph).sin()).sum())
            .collect();
        let profile = RouteProfile::from_altitudes(0.0, 50.0, z.clone()).map_err(|e| e.to_string())?;
        let k0 = rng.gen_range(0..n - cfg.horizon - 1);
        let got: Vec<usize> = detect_anchors(&profile, k0 as f64 * 50.0, &cfg)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|a| a.offset)
            .collect();
        let oracle: Vec<usize> = (1..cfg.horizon)
            .filter(|&u| {
                let (a, b, c) = (z[k0 + u - 1], z[k0 + u], z[k0 + u + 1]);
                let extremum = (b > a && b > c) || (b < a && b < c);
                extremum && ((c - a) / 100.0).abs() < cfg.epsilon
            })
            .collect();
        found += got.len();
        if got != oracle {
            mismatches += 1;
        }
    }
    check(mismatches == 0 && found > 0, format!("{mismatches} mismatches over 100 profiles, {found} anchors"))
}

/// Deterministic pseudo-random predictions keyed on the candidate contents.
struct HashMock {
    stats: FeatureStats,
}

impl Predictor for HashMock {
    fn stats(&self) -> &FeatureStats {
        &self.stats
    }

    fn predict(&self, _samples: &[Matrix], _history: &Matrix, futures: &[Matrix]) -> Result<Vec<Matrix>> {
        Ok(futures
            .iter()
            .map(|f| {
                let key: f64 = f.as_slice().iter().sum();
                let mut m = Matrix::zeros(f.rows(), 3);
                for r in 0..f.rows() {
                    for c in 0..3 {
                        let x = ((key * 12.9898 + r as f64 * 78.233 + c as f64 * 37.719).sin() * 43758.5453).fract();
                        m.set(r, c, x.abs());
                    }
                }
                m
            })
            .collect())
    }
}

fn c3_optimizer() -> Outcome {
    let trips = synth_trips(
        &TripConfig { trips: 1, route_length: 20_000.0, ..TripConfig::default() },
        &VehicleParams::default(),
        &BsfcMap::default(),
        &SimConfig::default(),
        50.0,
        3,
    )
    .map_err(|e| e.to_string())?;
    let stats = FeatureStats::fit_trips(&trips).map_err(|e| e.to_string())?;
    let mut buffer = TripBuffer::with_origin(50.0, 0.0);
    for r in trips[0].records() {
        buffer.append(*r).map_err(|e| e.to_string())?;
    }
    let set = select_primitives(&buffer, &SamplerConfig::default()).map_err(|e| e.to_string())?;
    let mock = HashMock { stats: stats.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut wrong = 0;
    for _ in 0..50 {
        let n = rng.gen_range(1..40);
        let candidates: Vec<DataChunk> = (0..n)
            .map(|_| {
                let mut m = Matrix::zeros(60, feature::COUNT);
                for r in 0..60 {
                    m.set(r, feature::V, rng.gen_range(15.0..25.0));
                    m.set(r, feature::A, rng.gen_range(-0.2..0.2));
                    m.set(r, feature::THETA, rng.gen_range(-0.04..0.04));
                }
                DataChunk::new(buffer.s_now(), 50.0, m).unwrap()
            })
            .collect();
        let w = CostWeights { w1: 1.0, w2: rng.gen_range(0.0..1.0), v_target: rng.gen_range(18.0..24.0) };
        let plan = optimize(&set, &candidates, &mock, &w).map_err(|e| e.to_string())?;
        // independent recomputation of every cost
        let mut best = (0, f64::INFINITY);
        for (i, c) in candidates.iter().enumerate() {
            let known = stats.normalize_columns(&c.values, 0).slice_cols(0, 3);
            let pred = &mock.predict(&[], &Matrix::zeros(1, 1), &[known]).unwrap()[0];
            let (lo, hi) = (stats.min[feature::FUEL], stats.max[feature::FUEL]);
            let fuel: f64 = (0..60).map(|r| lo + pred.get(r, 2) * (hi - lo)).sum();
            let mean_v = c.values.col(feature::V).iter().sum::<f64>() / 60.0;
            let cost = w.w1 * fuel + w.w2 * (mean_v - w.v_target).abs();
            if cost < best.1 {
                best = (i, cost);
            }
        }
        if plan.index != best.0 {
            wrong += 1;
        }
    }
    check(wrong == 0, format!("{wrong} of 50 cases disagree with exhaustive argmin"))
}

fn c4_published_arithmetic() -> Outcome {
    let round2 = |x: f64| (x * 100.0).round() / 100.0;
    let costs = [(25.70, 0.83, 25.78), (26.67, 0.99, 26.77), (25.08, 0.69, 25.15)];
    let cost_err = costs
        .iter()
        .map(|&(f, dv, want)| (round2(sim_cost(f, dv, 1.0, 0.1)) - want).abs())
        .fold(0.0, f64::max);
    let s1 = fuel_saving(25.70, 25.08).map_err(|e| e.to_string())?;
    let s2 = fuel_saving(27.50, 26.55).map_err(|e| e.to_string())?;
    let save_err = (s1 - 2.41).abs().max((s2 - 3.45).abs());
    check(
        cost_err <= 0.01 && save_err <= 0.01,
        format!("costs within {cost_err:.3}, savings {s1:.3}% / {s2:.3}%"),
    )
}

fn c5_gradcheck() -> Outcome {
    let t = Instant::now();
    let cfg = NvFormerConfig::toy();
    let model = NvFormerModel::new(cfg.clone(), FeatureStats::identity(), 11).map_err(|e| e.to_string())?;
    let ex = random_example(&cfg, 5);
    let coords = sample_coordinates(model.params().values(), 200, 7);
    let r = grad_check(&model, &ex, &coords, 1e-4).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    check(
        r.checked >= 200 && r.max_relative_error < 1e-3 && secs < 60.0,
        format!("{} coords, max rel err {:.2e}, {secs:.1} s", r.checked, r.max_relative_error),
    )
}

fn c6_shape_causality() -> Outcome {
    let cfg = NvFormerConfig { dropout: 0.0, ..NvFormerConfig::default() };
    let model = NvFormerModel::new(cfg.clone(), FeatureStats::identity(), 6).map_err(|e| e.to_string())?;
    let ex = random_example(&cfg, 6);
    let y = model.forward(&ex.samples, &ex.history, &ex.future_known).map_err(|e| e.to_string())?;
    let mut leaks = 0;
    for t in [0, 17, 41, 58] {
        let mut f = ex.future_known.clone();
        for r in t + 1..60 {
            for c in 0..3 {
                f.set(r, c, f.get(r, c) + 0.5);
            }
        }
        let y2 = model.forward(&ex.samples, &ex.history, &f).map_err(|e| e.to_string())?;
        leaks += (0..=t).filter(|&r| y.row(r) != y2.row(r)).count();
    }
    check(
        y.shape() == (60, 3) && ex.samples.len() == 10 && ex.samples[0].shape() == (40, 6) && leaks == 0,
        format!("output {:?}, {leaks} rows changed before the perturbation", y.shape()),
    )
}

fn c7_overfit() -> Outcome {
    let cfg = NvFormerConfig::toy();
    let model = NvFormerModel::new(cfg.clone(), FeatureStats::identity(), 4).map_err(|e| e.to_string())?;
    let examples: Vec<_> = (0..32).map(|i| random_example(&cfg, 100 + i)).collect();
    let tc = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 32,
        warmup_epochs: 10,
        max_epochs: 2000,
        max_steps: Some(2000),
        seed: 4,
        ..TrainConfig::default()
    };
    let out = train(model, &examples, &[], &tc).map_err(|e| e.to_string())?;
    let mse = evaluate_loss(&out.model, &examples);
    check(mse < 1e-3 && out.steps <= 2000, format!("training MSE {mse:.2e} after {} steps", out.steps))
}

fn c8_roundtrips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let stats = FeatureStats {
        min: vec![10.0, -1.0, -0.06, 0.0, 600.0, 0.0],
        max: vec![30.0, 1.0, 0.06, 2500.0, 2100.0, 0.08],
    };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = Matrix::from_vec(40, 6, (0..240).map(|i| {
            let c = i % 6;
            rng.gen_range(stats.min[c]..stats.max[c])
        }).collect());
        let back = stats.denormalize_columns(&stats.normalize_columns(&m, 0), 0);
        worst = worst.max(back.max_abs_diff(&m));
    }
    let cfg = NvFormerConfig { dropout: 0.0, ..NvFormerConfig::toy() };
    let model = NvFormerModel::new(cfg.clone(), stats, 8).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("m.nvf");
    save(&model, &path).map_err(|e| e.to_string())?;
    let loaded = load(&path).map_err(|e| e.to_string())?;
    let ex = random_example(&cfg, 9);
    let a = model.forward(&ex.samples, &ex.history, &ex.future_known).map_err(|e| e.to_string())?;
    let b = loaded.forward(&ex.samples, &ex.history, &ex.future_known).map_err(|e| e.to_string())?;
    let identical = a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits());
    check(worst <= 1e-9 && identical, format!("normalization max err {worst:.1e}, reload bit-identical {identical}"))
}

struct Coast;

impl Driver for Coast {
    fn command(&mut self, _: &SimState, _: f64) -> f64 {
        0.0
    }

    fn on_row(&mut self, _: &TraceRow) -> Result<()> {
        Ok(())
    }
}

fn c9_physics() -> Outcome {
    let p = VehicleParams::default();
    let flat = RouteProfile::from_altitudes(0.0, 50.0, vec![0.0; 21]).unwrap();
    let log = drive(&flat, 20.0, &mut Coast, &p, &BsfcMap::default(), 0.1).map_err(|e| e.to_string())?;
    let decel = log.rows.windows(2).all(|w| w[1].v < w[0].v) && log.rows[0].v < 20.0;
    let scenarios = generate_scenarios(&ScenarioConfig::default()).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for sc in &scenarios {
        let tr = run_cruise(sc, 21.5, &p, &BsfcMap::default(), &SimConfig::default()).map_err(|e| e.to_string())?;
        worst = worst.max(tr.energy.imbalance());
    }
    let rpm = engine_speed(20.0, &VehicleParams { drive_ratio: 3.0, wheel_radius: 0.5, ..p });
    check(
        decel && worst <= 0.005 && (rpm - 1145.9).abs() < 0.1,
        format!("coasting decelerates {decel}, worst energy imbalance {:.4}%, {rpm:.2} rpm", worst * 100.0),
    )
}

fn c10_fuel_fit() -> Outcome {
    let f = |v: f64| 0.02 * v * v - 0.5 * v + 28.0;
    let pts: Vec<_> = npc_core::eval::config::DEFAULT_TARGET_SPEEDS.iter().map(|&v| (v, f(v))).collect();
    let got = interpolate_fuel_at(&pts, 21.5).map_err(|e| e.to_string())?;
    let rel = (got - f(21.5)).abs() / f(21.5);
    check(rel < 1e-6, format!("fit {got:.9} vs {:.9}, rel err {rel:.1e}", f(21.5)))
}

fn desk_config() -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json");
    RunConfig::load(&path).expect("desk config")
}

fn c11_closed_loop() -> Outcome {
    let t = Instant::now();
    let cfg = desk_config();
    let trips = pipeline::corpus(&cfg).map_err(|e| e.to_string())?;
    let t_train = Instant::now();
    let (model, summary) = pipeline::train_model(&cfg, &trips, true).map_err(|e| e.to_string())?;
    let train_min = t_train.elapsed().as_secs_f64() / 60.0;
    let scenarios = pipeline::scenarios(&cfg).map_err(|e| e.to_string())?;
    let mut traces = pipeline::simulate(&cfg, &scenarios, Method::Cruise, None).map_err(|e| e.to_string())?;
    traces.extend(pipeline::simulate(&cfg, &scenarios, Method::Npc, Some(&model)).map_err(|e| e.to_string())?);
    let labeled: Vec<LabeledTrace> = traces.iter().map(LabeledTrace::from).collect();
    let ev = evaluate(&labeled, 21.5, cfg.weights.w1, cfg.weights.w2, "cruise").map_err(|e| e.to_string())?;
    let npc = ev.summary.iter().find(|s| s.method == "npc").ok_or("no npc summary")?;
    let cruise = ev.summary.iter().find(|s| s.method == "cruise").ok_or("no cruise summary")?;
    let wins = npc.cost_wins.unwrap_or(0);
    let saving = npc.mean_saving_pct.unwrap_or(f64::NEG_INFINITY);
    let total_min = t.elapsed().as_secs_f64() / 60.0;
    for r in ev.results.iter().filter(|r| r.method == "npc") {
        let base = ev.results.iter().find(|b| b.method == "cruise" && b.scenario == r.scenario).unwrap();
        println!(
            "    {:<14} cruise C {:>6.2} (dv {:.2})  npc C {:>6.2} (dv {:.2})  saving {:>6.2}%",
            r.scenario,
            base.cost,
            base.speed_difference,
            r.cost,
            r.speed_difference,
            r.saving_pct.unwrap_or(f64::NAN)
        );
    }
    check(
        summary.corpus_km >= 300.0 && wins >= 10 && saving >= 0.0 && train_min <= 30.0 && total_min <= 45.0,
        format!(
            "{:.0} km corpus, cost wins {wins}/15, mean saving {saving:.2}%, mean dv npc {:.2} vs cruise {:.2} m/s, \
             training {train_min:.1} min, total {total_min:.1} min",
            summary.corpus_km, npc.mean_speed_difference, cruise.mean_speed_difference
        ),
    )
}

/// Small end-to-end run: hashes of corpus, scenarios, traces and report bytes.
fn pipeline_fingerprint(dir: &std::path::Path) -> std::result::Result<Vec<String>, String> {
    let mut cfg = RunConfig::from_json(
        r#"{
          "target_speeds": [20.0, 21.5, 23.0],
          "scenarios": { "count": 3 },
          "trips": { "trips": 2, "route_length": 15000 },
          "future": { "epsilon": 0.01, "samples_per_anchor": 3 },
          "model": { "d_model": 16, "heads": 2, "n_s": 1, "n_i": 1, "dropout": 0.0 },
          "train": { "learning_rate": 0.001, "batch_size": 32, "warmup_epochs": 1, "max_epochs": 2 }
        }"#,
    )
    .map_err(|e| e.to_string())?;
    cfg.apply_seed(12);
    let e = |e: npc_core::NpcError| e.to_string();
    let trips = pipeline::corpus(&cfg).map_err(e)?;
    let scenarios = pipeline::scenarios(&cfg).map_err(e)?;
    let (model, _) = pipeline::train_model(&cfg, &trips, true).map_err(e)?;
    let mut traces = pipeline::simulate(&cfg, &scenarios, Method::Cruise, None).map_err(e)?;
    traces.extend(pipeline::simulate(&cfg, &scenarios, Method::Npc, Some(&model)).map_err(e)?);
    let labeled: Vec<LabeledTrace> = traces.iter().map(LabeledTrace::from).collect();
    let ev = evaluate(&labeled, 21.5, 1.0, 0.1, "cruise").map_err(e)?;
    let files = write_report(&ev, dir).map_err(e)?;
    let mut out = vec![corpus_hash(&trips), scenario_hash(&scenarios)];
    out.extend(traces.iter().map(|t| t.to_csv_string()));
    for f in files {
        out.push(String::from_utf8_lossy(&std::fs::read(f).map_err(|e| e.to_string())?).to_string());
    }
    Ok(out)
}

fn c12_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let x = pipeline_fingerprint(a.path())?;
    let y = pipeline_fingerprint(b.path())?;
    let desk = desk_config();
    let h1 = corpus_hash(&pipeline::corpus(&desk).map_err(|e| e.to_string())?);
    let h2 = corpus_hash(&pipeline::corpus(&desk).map_err(|e| e.to_string())?);
    let differing = x.iter().zip(&y).filter(|(p, q)| p != q).count();
    check(
        x.len() == y.len() && differing == 0 && h1 == h2,
        format!("{} artifacts compared, {differing} differ; corpus hash {}", x.len(), &h1[..16]),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("speed interpolation matches hand formula", c1_interpolation),
        ("anchor detection matches brute force", c2_anchors),
        ("optimizer picks exhaustive argmin", c3_optimizer),
        ("published cost and saving arithmetic", c4_published_arithmetic),
        ("toy gradient check", c5_gradcheck),
        ("output shape and decoder causality", c6_shape_causality),
        ("toy overfit", c7_overfit),
        ("normalization and artifact round trips", c8_roundtrips),
        ("simulator physics", c9_physics),
        ("fuel fit at 21.5 m/s", c10_fuel_fit),
        ("closed-loop NPC vs cruise", c11_closed_loop),
        ("determinism", c12_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("{}", i + 1);
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let result = f();
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("PASS {id:>2} {name}: {d} [{secs:.1} s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {d} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
