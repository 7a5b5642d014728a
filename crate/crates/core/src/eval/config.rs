//! One JSON document configuring a whole run. Every section is optional and
//! falls back to its documented defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NpcError, Result};
use crate::future_sampler::FutureConfig;
use crate::nvformer::{NvFormerConfig, TrainConfig};
use crate::optimizer::CostWeights;
use crate::past_sampler::SamplerConfig;
use crate::sim::trips::TripConfig;
use crate::sim::{BsfcMap, ScenarioConfig, SimConfig, VehicleParams};

/// 70, 73, 76, 79, 82 and 85 km/h.
pub const DEFAULT_TARGET_SPEEDS: [f64; 6] = [
    70.0 / 3.6,
    73.0 / 3.6,
    76.0 / 3.6,
    79.0 / 3.6,
    82.0 / 3.6,
    85.0 / 3.6,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Scenario, corpus, lead-in, initialization and shuffling
    /// seeds are derived from it; seed fields inside sections are ignored.
    pub seed: u64,
    /// Grid spacing Δs in meters.
    pub delta_s: f64,
    /// Target speeds simulated per scenario, m/s.
    pub target_speeds: Vec<f64>,
    /// Speed at which fuel and Δv are compared, m/s.
    pub v_query: f64,
    /// Method the fuel saving is measured against.
    pub baseline: String,
    /// Grid points between consecutive training examples.
    pub dataset_stride: usize,
    /// Simulation threads; `None` uses the available parallelism.
    pub workers: Option<usize>,
    pub sampler: SamplerConfig,
    pub future: FutureConfig,
    pub model: NvFormerConfig,
    pub train: TrainConfig,
    pub vehicle: VehicleParams,
    pub bsfc: BsfcMap,
    /// Gridded BSFC CSV; replaces `bsfc` when set. Relative to the config file.
    pub bsfc_csv: Option<PathBuf>,
    pub weights: CostWeights,
    pub scenarios: ScenarioConfig,
    pub trips: TripConfig,
    pub sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 2024,
            delta_s: 50.0,
            target_speeds: DEFAULT_TARGET_SPEEDS.to_vec(),
            v_query: 21.5,
            baseline: "cruise".into(),
            dataset_stride: 5,
            workers: None,
            sampler: SamplerConfig::default(),
            future: FutureConfig::default(),
            model: NvFormerConfig::default(),
            train: TrainConfig::default(),
            vehicle: VehicleParams::default(),
            bsfc: BsfcMap::default(),
            bsfc_csv: None,
            weights: CostWeights::default(),
            scenarios: ScenarioConfig::default(),
            trips: TripConfig::default(),
            sim: SimConfig::default(),
        }
    }
}

/// Stream seed: the first 8 bytes of SHA-256 over the master seed and name.
pub fn derive_seed(master: u64, stream: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(stream.as_bytes());
    let d = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    u64::from_le_bytes(b)
}

impl RunConfig {
    /// Parses, resolves the optional BSFC grid relative to `path`, and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NpcError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(rel) = &cfg.bsfc_csv {
            let full = path.parent().unwrap_or(Path::new(".")).join(rel);
            cfg.bsfc = BsfcMap::read_csv(&full)?;
            cfg.bsfc_csv = Some(full);
        }
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| NpcError::Config(e.to_string()))?;
        cfg.apply_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets the master seed and every derived section seed.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.scenarios.seed = derive_seed(seed, "scenarios");
        self.sim.lead_in_seed = derive_seed(seed, "lead-in");
        self.train.seed = derive_seed(seed, "train");
    }

    pub fn corpus_seed(&self) -> u64 {
        derive_seed(self.seed, "corpus")
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, "init")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NpcError::Config(msg));
        if !(self.delta_s > 0.0) {
            return bad("delta_s must be positive".into());
        }
        if self.target_speeds.is_empty() || self.target_speeds.iter().any(|v| !(*v > 0.0)) {
            return bad("target_speeds must be a non-empty list of positive speeds".into());
        }
        if self.dataset_stride == 0 || self.workers == Some(0) {
            return bad("dataset_stride and workers must be positive".into());
        }
        if (self.scenarios.delta_s - self.delta_s).abs() > 1e-9 {
            return bad("scenarios.delta_s must equal delta_s".into());
        }
        self.sampler.validate(self.delta_s)?;
        self.future.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.vehicle.validate()?;
        self.bsfc.validate()?;
        self.weights.validate()?;
        self.trips.validate()?;
        self.sim.validate()?;
        if self.model.l_h != self.sampler.primitive_length {
            return bad("model.l_h must equal sampler.primitive_length".into());
        }
        if self.model.l_f != self.future.horizon {
            return bad("model.l_f must equal future.horizon".into());
        }
        if self.model.p != self.sampler.count {
            return bad("model.p must equal sampler.count".into());
        }
        if self.scenarios.lookahead < self.future.horizon as f64 * self.delta_s {
            return bad("scenarios.lookahead must cover the planning horizon".into());
        }
        Ok(())
    }

    /// Cost weights for a run at `v_target`.
    pub fn weights_at(&self, v_target: f64) -> CostWeights {
        CostWeights {
            v_target,
            ..self.weights.clone()
        }
    }
}
