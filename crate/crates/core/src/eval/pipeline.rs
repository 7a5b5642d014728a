//! End-to-end stages shared by the CLI and the acceptance suite.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::metrics::{model_errors, FeatureErrors};
use crate::data::{FeatureStats, TripLog};
use crate::error::{NpcError, Result};
use crate::nvformer::train::{split_dataset, EpochRecord};
use crate::nvformer::{build_examples, train, NvFormerConfig, NvFormerModel};
use crate::sim::trips::synth_trips;
use crate::sim::{generate_scenarios, run_cruise, run_npc, Scenario, SimTrace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Cruise,
    Npc,
    NpcNoformer,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Cruise => "cruise",
            Method::Npc => "npc",
            Method::NpcNoformer => "npc-noformer",
        }
    }
}

impl FromStr for Method {
    type Err = NpcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cruise" => Ok(Method::Cruise),
            "npc" => Ok(Method::Npc),
            "npc-noformer" => Ok(Method::NpcNoformer),
            other => Err(NpcError::Config(format!("unknown method {other:?}"))),
        }
    }
}

pub fn scenarios(cfg: &RunConfig) -> Result<Vec<Scenario>> {
    generate_scenarios(&cfg.scenarios)
}

pub fn corpus(cfg: &RunConfig) -> Result<Vec<TripLog>> {
    synth_trips(&cfg.trips, &cfg.vehicle, &cfg.bsfc, &cfg.sim, cfg.delta_s, cfg.corpus_seed())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub corpus_km: f64,
    pub examples: usize,
    pub train_examples: usize,
    pub val_examples: usize,
    pub test_examples: usize,
    pub parameters: usize,
    pub steps: usize,
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Torque in % of the torque limit, engine speed in rpm, fuel in L per Δs.
    pub test_errors: Option<FeatureErrors>,
}

/// Fits normalization on the corpus, builds examples, trains, and scores
/// the held-out split. `sample_former = false` trains the ablation model.
pub fn train_model(cfg: &RunConfig, trips: &[TripLog], sample_former: bool) -> Result<(NvFormerModel, TrainSummary)> {
    let stats = FeatureStats::fit_trips(trips)?;
    let examples = build_examples(trips, &stats, &cfg.sampler, cfg.future.horizon, cfg.dataset_stride)?;
    let (tr, va, te) = split_dataset(&examples);
    let model_cfg = NvFormerConfig {
        sample_former_enabled: sample_former,
        ..cfg.model.clone()
    };
    let model = NvFormerModel::new(model_cfg, stats, cfg.init_seed())?;
    let parameters = model.params().scalar_count();
    let out = train(model, &tr, &va, &cfg.train)?;
    if out.diverged {
        return Err(NpcError::Numerical(format!(
            "training diverged after {} steps (best validation loss {})",
            out.steps, out.best_val_loss
        )));
    }
    let test_errors = if te.is_empty() {
        None
    } else {
        Some(model_errors(&out.model, &te, cfg.vehicle.torque_max)?)
    };
    let corpus_km = trips
        .iter()
        .map(|t| t.records().len() as f64 * t.delta_s / 1000.0)
        .sum();
    let summary = TrainSummary {
        corpus_km,
        examples: examples.len(),
        train_examples: tr.len(),
        val_examples: va.len(),
        test_examples: te.len(),
        parameters,
        steps: out.steps,
        initial_val_loss: out.initial_val_loss,
        best_val_loss: out.best_val_loss,
        best_epoch: out.best_epoch,
        history: out.history,
        test_errors,
    };
    Ok((out.model, summary))
}

fn run_one(
    cfg: &RunConfig,
    scenario: &Scenario,
    v_target: f64,
    method: Method,
    model: Option<&NvFormerModel>,
) -> Result<SimTrace> {
    match (method, model) {
        (Method::Cruise, _) => run_cruise(scenario, v_target, &cfg.vehicle, &cfg.bsfc, &cfg.sim),
        (_, None) => Err(NpcError::Config(format!("method {} needs a trained model", method.name()))),
        (_, Some(m)) => run_npc(
            scenario,
            m,
            &cfg.sampler,
            &cfg.future,
            &cfg.weights_at(v_target),
            &cfg.vehicle,
            &cfg.bsfc,
            &cfg.sim,
            method.name(),
        ),
    }
}

/// Every scenario at every target speed, spread over worker threads.
/// Traces come back in (scenario, target speed) order regardless of scheduling.
pub fn simulate(
    cfg: &RunConfig,
    scenarios: &[Scenario],
    method: Method,
    model: Option<&NvFormerModel>,
) -> Result<Vec<SimTrace>> {
    if let Some(m) = model {
        let former = m.config().sample_former_enabled;
        if method == Method::NpcNoformer && former {
            return Err(NpcError::Config("npc-noformer needs a model trained without the Sample Former".into()));
        }
        if method == Method::Npc && !former {
            return Err(NpcError::Config("npc needs a model trained with the Sample Former".into()));
        }
    }
    let jobs: Vec<(&Scenario, f64)> = scenarios
        .iter()
        .flat_map(|sc| cfg.target_speeds.iter().map(move |&v| (sc, v)))
        .collect();
    let workers = cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .min(jobs.len())
        .max(1);
    let mut slots: Vec<Option<Result<SimTrace>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let jobs = &jobs;
                scope.spawn(move || {
                    (w..jobs.len())
                        .step_by(workers)
                        .map(|i| (i, run_one(cfg, jobs[i].0, jobs[i].1, method, model)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("simulation worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every job ran")).collect()
}
