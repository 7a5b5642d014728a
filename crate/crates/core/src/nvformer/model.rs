//! NVFormer: dual-encoder Transformer predicting torque, engine speed and
//! fuel along a candidate future speed profile.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{DecoderLayer, Dropout, EncoderLayer, Linear, ParamStore};
use super::tape::{Mask, Tape, Var};
use crate::data::FeatureStats;
use crate::error::{NpcError, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NvFormerConfig {
    pub d_model: usize,
    pub heads: usize,
    /// Sample Former layers.
    pub n_s: usize,
    /// Inference Former and decoder layers.
    pub n_i: usize,
    pub l_h: usize,
    pub l_f: usize,
    pub m: usize,
    pub m_f: usize,
    pub m_r: usize,
    pub p: usize,
    /// Defaults to `4 * d_model`.
    pub ff_width: Option<usize>,
    pub dropout: f64,
    pub sample_former_enabled: bool,
}

impl Default for NvFormerConfig {
    fn default() -> Self {
        NvFormerConfig {
            d_model: 64,
            heads: 8,
            n_s: 2,
            n_i: 2,
            l_h: 40,
            l_f: 60,
            m: 6,
            m_f: 3,
            m_r: 3,
            p: 10,
            ff_width: None,
            dropout: 0.1,
            sample_former_enabled: true,
        }
    }
}

impl NvFormerConfig {
    /// Small configuration for gradient checks and overfit tests.
    pub fn toy() -> Self {
        NvFormerConfig {
            d_model: 16,
            heads: 2,
            n_s: 1,
            n_i: 1,
            l_h: 8,
            l_f: 6,
            p: 3,
            dropout: 0.0,
            ..NvFormerConfig::default()
        }
    }

    pub fn ff(&self) -> usize {
        self.ff_width.unwrap_or(4 * self.d_model)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(NpcError::Config(format!("nvformer: {msg}")));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.m != self.m_f + self.m_r || self.m_f == 0 || self.m_r == 0 {
            return bad("m must equal m_f + m_r with both positive");
        }
        if self.l_h == 0 || self.l_f == 0 || self.p == 0 || self.n_i == 0 || self.ff() == 0 {
            return bad("l_h, l_f, p, n_i and ff_width must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

/// `PE(pos, 2i) = sin(pos / 10000^(2i/d))`, `PE(pos, 2i+1) = cos(...)`.
pub fn positional_encoding(length: usize, d_model: usize) -> Matrix {
    let mut pe = Matrix::zeros(length, d_model);
    for pos in 0..length {
        for j in 0..d_model {
            let i2 = (j - j % 2) as f64;
            let angle = pos as f64 / 10000f64.powf(i2 / d_model as f64);
            pe.set(pos, j, if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

/// `out[t, j] = Σ_k w_k · primitives[k][t, j] + b`.
pub fn reduce_samples(primitives: &[Matrix], w: &[f64], b: f64) -> Result<Matrix> {
    if primitives.is_empty() || primitives.len() != w.len() {
        return Err(NpcError::Shape(format!(
            "{} primitives for {} reduction weights",
            primitives.len(),
            w.len()
        )));
    }
    let (rows, cols) = primitives[0].shape();
    let mut out = Matrix::filled(rows, cols, b);
    for (p, &wk) in primitives.iter().zip(w) {
        if p.shape() != (rows, cols) {
            return Err(NpcError::Shape("primitives differ in shape".into()));
        }
        for (o, v) in out.as_mut_slice().iter_mut().zip(p.as_slice()) {
            *o += wk * v;
        }
    }
    Ok(out)
}

pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(NpcError::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    Ok(pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    reduce_w: usize,
    reduce_b: usize,
    embed_sample: Linear,
    embed_history: Linear,
    embed_future: Linear,
    sample_former: Vec<EncoderLayer>,
    inference_former: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    head: Linear,
}

impl Layout {
    fn build(cfg: &NvFormerConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let (d, h, ff) = (cfg.d_model, cfg.heads, cfg.ff());
        let reduce_w = store.add("reduce.w", Matrix::filled(1, cfg.p, 1.0 / cfg.p as f64));
        let reduce_b = store.add("reduce.b", Matrix::zeros(1, 1));
        let embed_sample = Linear::new(store, "embed.sample", cfg.m, d, rng);
        let embed_history = Linear::new(store, "embed.history", cfg.m, d, rng);
        let embed_future = Linear::new(store, "embed.future", cfg.m_f, d, rng);
        let sample_former = (0..cfg.n_s)
            .map(|i| EncoderLayer::new(store, &format!("sample.{i}"), d, h, ff, rng))
            .collect();
        let inference_former = (0..cfg.n_i)
            .map(|i| EncoderLayer::new(store, &format!("inference.{i}"), d, h, ff, rng))
            .collect();
        let decoder = (0..cfg.n_i)
            .map(|i| DecoderLayer::new(store, &format!("decoder.{i}"), d, h, ff, rng))
            .collect();
        let head = Linear::new(store, "head", d, cfg.m_r, rng);
        Layout {
            reduce_w,
            reduce_b,
            embed_sample,
            embed_history,
            embed_future,
            sample_former,
            inference_former,
            decoder,
            head,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NvFormerModel {
    config: NvFormerConfig,
    stats: FeatureStats,
    params: ParamStore,
    layout: Layout,
    pe_history: Matrix,
    pe_future: Matrix,
    causal: Mask,
}

impl NvFormerModel {
    /// Freshly initialized model; the seed fixes every initial weight.
    pub fn new(config: NvFormerConfig, stats: FeatureStats, seed: u64) -> Result<Self> {
        config.validate()?;
        stats.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layout = Layout::build(&config, &mut params, &mut rng);
        Ok(NvFormerModel {
            pe_history: positional_encoding(config.l_h, config.d_model),
            pe_future: positional_encoding(config.l_f, config.d_model),
            causal: Mask::causal(config.l_f),
            config,
            stats,
            params,
            layout,
        })
    }

    /// Rebuilds a model from stored tensors; names and shapes must match the layout.
    pub fn from_params(
        config: NvFormerConfig,
        stats: FeatureStats,
        tensors: Vec<(String, Matrix)>,
    ) -> Result<Self> {
        let mut model = NvFormerModel::new(config, stats, 0)?;
        if tensors.len() != model.params.len() {
            return Err(NpcError::Artifact(format!(
                "expected {} tensors, found {}",
                model.params.len(),
                tensors.len()
            )));
        }
        for (i, (name, value)) in tensors.into_iter().enumerate() {
            let expected = &model.params.names()[i];
            let slot = &model.params.values()[i];
            if &name != expected || value.shape() != slot.shape() {
                return Err(NpcError::Artifact(format!(
                    "tensor {i}: expected {expected} {:?}, found {name} {:?}",
                    slot.shape(),
                    value.shape()
                )));
            }
            if !value.is_finite() {
                return Err(NpcError::Artifact(format!("tensor {name} is not finite")));
            }
            model.params.values_mut()[i] = value;
        }
        Ok(model)
    }

    pub fn config(&self) -> &NvFormerConfig {
        &self.config
    }

    pub fn stats(&self) -> &FeatureStats {
        &self.stats
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Sets the p-axis reduction weights and bias.
    pub fn set_reduction(&mut self, w: &[f64], b: f64) -> Result<()> {
        if w.len() != self.config.p {
            return Err(NpcError::Shape(format!("{} weights for p = {}", w.len(), self.config.p)));
        }
        let (wi, bi) = (self.layout.reduce_w, self.layout.reduce_b);
        self.params.values_mut()[wi] = Matrix::from_vec(1, w.len(), w.to_vec());
        self.params.values_mut()[bi] = Matrix::filled(1, 1, b);
        Ok(())
    }

    pub fn reduce(&self, samples: &[Matrix]) -> Result<Matrix> {
        let w = &self.params.values()[self.layout.reduce_w];
        let b = self.params.values()[self.layout.reduce_b].get(0, 0);
        reduce_samples(samples, w.as_slice(), b)
    }

    pub fn check_inputs(&self, samples: &[Matrix], history: &Matrix) -> Result<()> {
        let c = &self.config;
        if samples.len() != c.p {
            return Err(NpcError::Shape(format!("{} sample primitives, expected p = {}", samples.len(), c.p)));
        }
        for (name, m, want) in samples
            .iter()
            .map(|s| ("sample primitive", s, (c.l_h, c.m)))
            .chain(std::iter::once(("history", history, (c.l_h, c.m))))
        {
            if m.shape() != want {
                return Err(NpcError::Shape(format!("{name} {:?}, expected {want:?}", m.shape())));
            }
            if !m.is_finite() {
                return Err(NpcError::Data(format!("{name} contains non-finite values")));
            }
        }
        Ok(())
    }

    pub fn check_future(&self, future_known: &Matrix) -> Result<()> {
        let want = (self.config.l_f, self.config.m_f);
        if future_known.shape() != want {
            return Err(NpcError::Shape(format!(
                "future_known {:?}, expected {want:?}",
                future_known.shape()
            )));
        }
        if !future_known.is_finite() {
            return Err(NpcError::Data("future_known contains non-finite values".into()));
        }
        Ok(())
    }

    fn embed(&self, t: &mut Tape, fc: &Linear, x: Matrix, pe: &Matrix) -> Var {
        let x = t.constant(x);
        let e = fc.forward(t, x);
        let pe = t.constant(pe.clone());
        t.add(e, pe)
    }

    /// Encoder memory: `concat(A, B)` along the sequence, or `B` alone with
    /// the Sample Former disabled.
    pub fn encode(&self, t: &mut Tape, samples: &[Matrix], history: &Matrix, drop: &mut Dropout) -> Var {
        let l = &self.layout;
        let mut b = self.embed(t, &l.embed_history, history.clone(), &self.pe_history);
        for layer in &l.inference_former {
            b = layer.forward(t, b, drop);
        }
        if !self.config.sample_former_enabled {
            return b;
        }
        let w = t.param(l.reduce_w);
        let bias = t.param(l.reduce_b);
        let reduced = t.mix(samples.to_vec(), w, bias);
        let pe = t.constant(self.pe_history.clone());
        let a = l.embed_sample.forward(t, reduced);
        let mut a = t.add(a, pe);
        for layer in &l.sample_former {
            a = layer.forward(t, a, drop);
        }
        t.concat_rows(&[a, b])
    }

    pub fn decode(&self, t: &mut Tape, memory: Var, future_known: &Matrix, drop: &mut Dropout) -> Var {
        let l = &self.layout;
        let mut x = self.embed(t, &l.embed_future, future_known.clone(), &self.pe_future);
        for layer in &l.decoder {
            x = layer.forward(t, x, memory, &self.causal, drop);
        }
        l.head.forward(t, x)
    }

    /// Deterministic forward pass (dropout off) on normalized inputs.
    pub fn forward(&self, samples: &[Matrix], history: &Matrix, future_known: &Matrix) -> Result<Matrix> {
        Ok(self
            .forward_many(samples, history, std::slice::from_ref(future_known))?
            .remove(0))
    }

    /// Encodes once and decodes every candidate future against the same memory.
    pub fn forward_many(
        &self,
        samples: &[Matrix],
        history: &Matrix,
        futures: &[Matrix],
    ) -> Result<Vec<Matrix>> {
        self.check_inputs(samples, history)?;
        let memory = {
            let mut t = Tape::new(self.params.values());
            let m = self.encode(&mut t, samples, history, &mut Dropout::off());
            t.value(m).clone()
        };
        futures
            .iter()
            .map(|f| {
                self.check_future(f)?;
                let mut t = Tape::new(self.params.values());
                let mem = t.constant(memory.clone());
                let out = self.decode(&mut t, mem, f, &mut Dropout::off());
                let out = t.value(out).clone();
                if !out.is_finite() {
                    return Err(NpcError::Numerical("non-finite model output".into()));
                }
                Ok(out)
            })
            .collect()
    }
}
