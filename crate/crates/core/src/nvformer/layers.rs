//! Parameter store and the Transformer building blocks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Mask, Tape, Var};
use crate::tensor::Matrix;

/// Named, ordered parameter tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }
}

pub fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
}

/// Inverted dropout driven by an explicit RNG; `off()` is the identity.
pub struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub fn off() -> Self {
        Dropout {
            rate: 0.0,
            rng: None,
        }
    }

    pub fn new(rate: f64, rng: &'r mut ChaCha8Rng) -> Self {
        Dropout {
            rate,
            rng: Some(rng),
        }
    }

    pub fn apply(&mut self, t: &mut Tape, x: Var) -> Var {
        let Some(rng) = self.rng.as_deref_mut() else {
            return x;
        };
        if self.rate <= 0.0 {
            return x;
        }
        let (rows, cols) = t.value(x).shape();
        let keep = 1.0 / (1.0 - self.rate);
        let mask = (0..rows * cols)
            .map(|_| if rng.gen::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        t.mul_const(x, Matrix::from_vec(rows, cols, mask))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Linear {
            w: store.add(format!("{name}.w"), glorot(input, output, rng)),
            b: store.add(format!("{name}.b"), Matrix::zeros(1, output)),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let w = t.param(self.w);
        let b = t.param(self.b);
        let xw = t.matmul(x, w);
        t.add_row(xw, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm {
    pub gamma: usize,
    pub beta: usize,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Norm {
            gamma: store.add(format!("{name}.gamma"), Matrix::filled(1, width, 1.0)),
            beta: store.add(format!("{name}.beta"), Matrix::zeros(1, width)),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let g = t.param(self.gamma);
        let b = t.param(self.beta);
        t.layer_norm(x, g, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub d_model: usize,
}

impl Attention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Attention {
            q: Linear::new(store, &format!("{name}.q"), d_model, d_model, rng),
            k: Linear::new(store, &format!("{name}.k"), d_model, d_model, rng),
            v: Linear::new(store, &format!("{name}.v"), d_model, d_model, rng),
            o: Linear::new(store, &format!("{name}.o"), d_model, d_model, rng),
            heads,
            d_model,
        }
    }

    pub fn forward(
        &self,
        t: &mut Tape,
        query: Var,
        memory: Var,
        mask: Option<&Mask>,
        drop: &mut Dropout,
    ) -> Var {
        let q = self.q.forward(t, query);
        let k = self.k.forward(t, memory);
        let v = self.v.forward(t, memory);
        let dh = self.d_model / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = t.slice_cols(q, h * dh, dh);
            let kh = t.slice_cols(k, h * dh, dh);
            let vh = t.slice_cols(v, h * dh, dh);
            let scores = t.matmul_t(qh, kh);
            let scores = t.scale(scores, scale);
            let weights = t.softmax(scores, mask);
            let weights = drop.apply(t, weights);
            outs.push(t.matmul(weights, vh));
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            t.concat_cols(&outs)
        };
        self.o.forward(t, joined)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), d_model, width, rng),
            down: Linear::new(store, &format!("{name}.down"), width, d_model, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var, drop: &mut Dropout) -> Var {
        let h = self.up.forward(t, x);
        let h = t.gelu(h);
        let h = drop.apply(t, h);
        self.down.forward(t, h)
    }
}

/// Post-norm self-attention encoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub attn: Attention,
    pub norm1: Norm,
    pub ff: FeedForward,
    pub norm2: Norm,
}

impl EncoderLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        ff_width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        EncoderLayer {
            attn: Attention::new(store, &format!("{name}.attn"), d_model, heads, rng),
            norm1: Norm::new(store, &format!("{name}.norm1"), d_model),
            ff: FeedForward::new(store, &format!("{name}.ff"), d_model, ff_width, rng),
            norm2: Norm::new(store, &format!("{name}.norm2"), d_model),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var, drop: &mut Dropout) -> Var {
        let a = self.attn.forward(t, x, x, None, drop);
        let a = drop.apply(t, a);
        let x = t.add(x, a);
        let x = self.norm1.forward(t, x);
        let f = self.ff.forward(t, x, drop);
        let f = drop.apply(t, f);
        let x = t.add(x, f);
        self.norm2.forward(t, x)
    }
}

/// Causal self-attention, cross-attention over the encoder memory, feedforward.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayer {
    pub self_attn: Attention,
    pub norm1: Norm,
    pub cross: Attention,
    pub norm2: Norm,
    pub ff: FeedForward,
    pub norm3: Norm,
}

impl DecoderLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        ff_width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        DecoderLayer {
            self_attn: Attention::new(store, &format!("{name}.self"), d_model, heads, rng),
            norm1: Norm::new(store, &format!("{name}.norm1"), d_model),
            cross: Attention::new(store, &format!("{name}.cross"), d_model, heads, rng),
            norm2: Norm::new(store, &format!("{name}.norm2"), d_model),
            ff: FeedForward::new(store, &format!("{name}.ff"), d_model, ff_width, rng),
            norm3: Norm::new(store, &format!("{name}.norm3"), d_model),
        }
    }

    pub fn forward(
        &self,
        t: &mut Tape,
        x: Var,
        memory: Var,
        causal: &Mask,
        drop: &mut Dropout,
    ) -> Var {
        let a = self.self_attn.forward(t, x, x, Some(causal), drop);
        let a = drop.apply(t, a);
        let x = t.add(x, a);
        let x = self.norm1.forward(t, x);
        let c = self.cross.forward(t, x, memory, None, drop);
        let c = drop.apply(t, c);
        let x = t.add(x, c);
        let x = self.norm2.forward(t, x);
        let f = self.ff.forward(t, x, drop);
        let f = drop.apply(t, f);
        let x = t.add(x, f);
        self.norm3.forward(t, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn singleton_key_attends_fully() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let attn = Attention::new(&mut store, "a", 8, 2, &mut rng);
        let memory = glorot(1, 8, &mut rng);
        let run = |query: Matrix| {
            let mut t = Tape::new(store.values());
            let q = t.constant(query);
            let m = t.constant(memory.clone());
            let out = attn.forward(&mut t, q, m, None, &mut Dropout::off());
            t.value(out).clone()
        };
        let a = run(glorot(3, 8, &mut rng));
        let b = run(glorot(3, 8, &mut rng).map(|v| v * 40.0));
        // out = (memory·Wv + bv)·Wo + bo for every query row
        let mut t = Tape::new(store.values());
        let m = t.constant(memory.clone());
        let v = attn.v.forward(&mut t, m);
        let expected = attn.o.forward(&mut t, v);
        let expected = t.value(expected).clone();
        for r in 0..3 {
            for c in 0..8 {
                assert!((a.get(r, c) - expected.get(0, c)).abs() < 1e-12);
                assert!((b.get(r, c) - expected.get(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_off_is_identity_and_rate_scales() {
        let params: Vec<Matrix> = vec![];
        let mut t = Tape::new(&params);
        let x = t.constant(Matrix::filled(10, 10, 1.0));
        assert_eq!(Dropout::off().apply(&mut t, x), x);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = Dropout::new(0.5, &mut rng).apply(&mut t, x);
        let y = t.value(y);
        assert!(y.as_slice().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(y.as_slice().contains(&0.0));
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = glorot(16, 8, &mut rng);
        let bound = (6.0f64 / 24.0).sqrt();
        assert!(w.as_slice().iter().all(|v| v.abs() <= bound));
    }
}
