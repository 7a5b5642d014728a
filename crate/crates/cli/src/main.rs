use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use npc_core::data::{route_csv_string, TripLog};
use npc_core::eval::evaluate::{read_trace_dir, trace_file_name, LabeledTrace};
use npc_core::eval::pipeline::{self, Method};
use npc_core::eval::{evaluate, write_report, Evaluation, RunConfig};
use npc_core::nvformer::train::{random_example, sample_coordinates};
use npc_core::nvformer::{grad_check, load, save, NvFormerConfig, NvFormerModel};
use npc_core::sim::scenario::scenario_hash;
use npc_core::sim::trips::corpus_hash;
use npc_core::NpcError;

#[derive(Parser)]
#[command(name = "npc", version, about = "Neural predictive cruise control workbench")]
struct Cli {
    /// Run configuration (JSON); defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the evaluation road profiles as route CSVs.
    GenScenarios,
    /// Simulate the synthetic training corpus.
    GenData,
    /// Train NVFormer on the corpus in <out>/trips.
    Train {
        /// Train without the Sample Former (for npc-noformer).
        #[arg(long)]
        no_former: bool,
        /// Trip CSV directory; defaults to <out>/trips.
        #[arg(long)]
        trips: Option<PathBuf>,
    },
    /// Compare analytic and central-difference gradients.
    Gradcheck {
        /// Use the small check configuration instead of the configured model.
        #[arg(long)]
        toy: bool,
        #[arg(long, default_value_t = 200)]
        coords: usize,
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
    /// Drive every scenario at every target speed and write traces.
    Simulate {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        /// Model artifact; defaults to <out>/model.nvf (model-noformer.nvf for npc-noformer).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Restrict to these scenario labels.
        #[arg(long)]
        scenario: Vec<String>,
    },
    /// Score the traces in <out>/traces.
    Evaluate {
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Write tables and plots from an evaluation JSON.
    Report {
        /// Defaults to <out>/evaluation.json.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: NpcError| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // NpcError messages already carry their source
            let mut msg = String::new();
            let mut code = 3;
            for c in e.chain() {
                if !msg.is_empty() {
                    msg.push_str(": ");
                }
                msg.push_str(&c.to_string());
                if let Some(n) = c.downcast_ref::<NpcError>() {
                    code = n.exit_code();
                    break;
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(code as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    Ok(cfg)
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| NpcError::io(dir, e))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(NpcError::from)?;
    std::fs::write(path, format!("{text}\n")).map_err(|e| NpcError::io(path, e))?;
    Ok(())
}

fn sorted_csvs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| NpcError::io(dir, e))? {
        let path = entry.map_err(|e| NpcError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let out = cli.out.as_path();
    mkdir(out)?;
    match &cli.command {
        Command::GenScenarios => gen_scenarios(&cfg, out),
        Command::GenData => gen_data(&cfg, out),
        Command::Train { no_former, trips } => {
            let dir = trips.clone().unwrap_or_else(|| out.join("trips"));
            train(&cfg, out, &dir, !no_former)
        }
        Command::Gradcheck {
            toy,
            coords,
            step,
            tolerance,
        } => gradcheck(&cfg, *toy, *coords, *step, *tolerance),
        Command::Simulate {
            method,
            model,
            scenario,
        } => simulate(&cfg, out, *method, model.as_deref(), scenario),
        Command::Evaluate { traces } => {
            let dir = traces.clone().unwrap_or_else(|| out.join("traces"));
            evaluate_traces(&cfg, out, &dir)
        }
        Command::Report { input } => {
            let path = input.clone().unwrap_or_else(|| out.join("evaluation.json"));
            report(out, &path)
        }
    }
}

#[derive(Serialize)]
struct ScenarioEntry {
    label: String,
    seed: u64,
    length_m: f64,
    measured_length_m: f64,
    max_abs_slope: f64,
}

fn gen_scenarios(cfg: &RunConfig, out: &Path) -> Result<()> {
    let scenarios = pipeline::scenarios(cfg)?;
    let dir = out.join("scenarios");
    mkdir(&dir)?;
    for sc in &scenarios {
        let path = dir.join(format!("{}.csv", sc.label));
        std::fs::write(&path, route_csv_string(&sc.profile)).map_err(|e| NpcError::io(&path, e))?;
    }
    let entries: Vec<ScenarioEntry> = scenarios
        .iter()
        .map(|sc| ScenarioEntry {
            label: sc.label.clone(),
            seed: sc.seed,
            length_m: sc.profile.length(),
            measured_length_m: sc.measured_length,
            max_abs_slope: sc.profile.max_abs_slope(),
        })
        .collect();
    let hash = scenario_hash(&scenarios);
    write_json(
        &out.join("scenarios.json"),
        &serde_json::json!({ "hash": hash, "scenarios": entries }),
    )?;
    println!("{} scenarios, hash {hash}", scenarios.len());
    Ok(())
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let trips = pipeline::corpus(cfg)?;
    let dir = out.join("trips");
    mkdir(&dir)?;
    for (i, t) in trips.iter().enumerate() {
        t.write_csv(&dir.join(format!("trip_{i:03}.csv")))?;
    }
    let km: f64 = trips.iter().map(|t| t.records().len() as f64 * t.delta_s / 1000.0).sum();
    let hash = corpus_hash(&trips);
    write_json(
        &out.join("corpus.json"),
        &serde_json::json!({ "hash": hash, "trips": trips.len(), "km": km }),
    )?;
    println!("{} trips, {km:.1} km, hash {hash}", trips.len());
    Ok(())
}

fn model_file(sample_former: bool) -> &'static str {
    if sample_former {
        "model.nvf"
    } else {
        "model-noformer.nvf"
    }
}

fn train(cfg: &RunConfig, out: &Path, trips_dir: &Path, sample_former: bool) -> Result<()> {
    let trips = sorted_csvs(trips_dir)?
        .iter()
        .map(|p| TripLog::read_csv(p, cfg.delta_s))
        .collect::<npc_core::Result<Vec<_>>>()?;
    if trips.is_empty() {
        return Err(NpcError::Data(format!("no trip CSVs in {}", trips_dir.display())).into());
    }
    let (model, summary) = pipeline::train_model(cfg, &trips, sample_former)?;
    let path = out.join(model_file(sample_former));
    save(&model, &path)?;
    let log = if sample_former { "train.json" } else { "train-noformer.json" };
    write_json(&out.join(log), &summary)?;
    println!(
        "{} examples, {} steps, best val loss {:.3e} at epoch {}; saved {}",
        summary.examples,
        summary.steps,
        summary.best_val_loss,
        summary.best_epoch,
        path.display()
    );
    Ok(())
}

fn gradcheck(cfg: &RunConfig, toy: bool, coords: usize, step: f64, tolerance: f64) -> Result<()> {
    let model_cfg = if toy {
        NvFormerConfig::toy()
    } else {
        NvFormerConfig {
            dropout: 0.0,
            ..cfg.model.clone()
        }
    };
    let stats = npc_core::data::FeatureStats::identity();
    let model = NvFormerModel::new(model_cfg.clone(), stats, cfg.init_seed())?;
    let example = random_example(&model_cfg, cfg.seed);
    let picked = sample_coordinates(model.params().values(), coords, cfg.seed);
    let report = grad_check(&model, &example, &picked, step)?;
    println!("{}", serde_json::to_string(&report).map_err(NpcError::from)?);
    if report.max_relative_error.is_nan() || report.max_relative_error >= tolerance {
        return Err(NpcError::Numerical(format!(
            "max relative error {:.3e} exceeds {tolerance:.1e}",
            report.max_relative_error
        ))
        .into());
    }
    Ok(())
}

fn simulate(cfg: &RunConfig, out: &Path, method: Method, model: Option<&Path>, only: &[String]) -> Result<()> {
    let mut scenarios = pipeline::scenarios(cfg)?;
    if !only.is_empty() {
        for label in only {
            if !scenarios.iter().any(|s| &s.label == label) {
                return Err(NpcError::Config(format!("unknown scenario {label:?}")).into());
            }
        }
        scenarios.retain(|s| only.contains(&s.label));
    }
    let model = match method {
        Method::Cruise => None,
        m => {
            let path = model
                .map(Path::to_path_buf)
                .unwrap_or_else(|| out.join(model_file(m == Method::Npc)));
            Some(load(&path).with_context(|| format!("loading model {}", path.display()))?)
        }
    };
    let traces = pipeline::simulate(cfg, &scenarios, method, model.as_ref())?;
    let dir = out.join("traces");
    mkdir(&dir)?;
    for t in &traces {
        t.write_csv(&dir.join(trace_file_name(&t.method, &t.scenario, t.v_target)))?;
        println!(
            "{:<14} {:>6.2} m/s  {:>6.2} L/100km  dv {:.3}",
            t.scenario,
            t.v_target,
            t.fuel_per_100km(),
            t.speed_difference()
        );
    }
    Ok(())
}

fn evaluate_traces(cfg: &RunConfig, out: &Path, dir: &Path) -> Result<()> {
    let traces: Vec<LabeledTrace> = read_trace_dir(dir)?;
    if traces.is_empty() {
        return Err(NpcError::Data(format!("no traces in {}", dir.display())).into());
    }
    let ev = evaluate(&traces, cfg.v_query, cfg.weights.w1, cfg.weights.w2, &cfg.baseline)?;
    write_json(&out.join("evaluation.json"), &ev)?;
    for s in &ev.summary {
        println!(
            "{:<13} F {:.3} L/100km  dv {:.3}  C {:.3}  saving {}  wins {}",
            s.method,
            s.mean_fuel,
            s.mean_speed_difference,
            s.mean_cost,
            s.mean_saving_pct.map_or("-".into(), |v| format!("{v:.2}%")),
            s.cost_wins.map_or("-".into(), |w| format!("{w}/{}", s.scenarios)),
        );
    }
    Ok(())
}

fn report(out: &Path, input: &Path) -> Result<()> {
    let bytes = std::fs::read(input).map_err(|e| NpcError::io(input, e))?;
    let ev: Evaluation = serde_json::from_slice(&bytes)
        .map_err(|e| NpcError::Data(format!("{}: {e}", input.display())))?;
    let files = write_report(&ev, &out.join("report"))?;
    println!("wrote {} files to {}", files.len(), out.join("report").display());
    Ok(())
}
