use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::EncoderConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
}

/// Task heads on top of the shared encoder.
///
/// `score_w · H[0] + score_b` is a paragraph's relevance score; each paragraph
/// position `i` gets start/end logits `H[i] · span_w + span_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultitaskHeads {
    pub score_w: Array1<f64>,
    pub score_b: Array1<f64>,
    pub span_w: Array2<f64>,
    pub span_b: Array1<f64>,
}

/// Every learnable tensor of the model: embeddings, encoder layers and heads.
///
/// The same type doubles as a gradient container and as optimizer moment state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub config: EncoderConfig,
    pub token_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub emb_ln_g: Array1<f64>,
    pub emb_ln_b: Array1<f64>,
    pub layers: Vec<LayerParams>,
    pub heads: MultitaskHeads,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal(&mut self, shape: (usize, usize), std: f64) -> Array2<f64> {
        let dist = Normal::new(0.0, std).expect("finite std");
        Array2::from_shape_simple_fn(shape, || dist.sample(&mut self.rng))
    }

    fn linear(&mut self, fan_in: usize, fan_out: usize) -> Array2<f64> {
        self.normal((fan_in, fan_out), 1.0 / (fan_in as f64).sqrt())
    }
}

impl ModelParameters {
    /// Random initialization: unit-variance embeddings (a layer norm follows),
    /// `N(0, 1/fan_in)` linear weights, zero biases, unit gains.
    pub fn init(config: EncoderConfig, seed: u64) -> Self {
        let d = config.d_model;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let token_emb = init.normal((config.vocab_size, d), 1.0);
        let pos_emb = init.normal((config.max_seq_len, d), 0.5);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                wq: init.linear(d, d),
                bq: Array1::zeros(d),
                wk: init.linear(d, d),
                bk: Array1::zeros(d),
                wv: init.linear(d, d),
                bv: Array1::zeros(d),
                wo: init.linear(d, d),
                bo: Array1::zeros(d),
                ln1_g: Array1::ones(d),
                ln1_b: Array1::zeros(d),
                w1: init.linear(d, config.d_ff),
                b1: Array1::zeros(config.d_ff),
                w2: init.linear(config.d_ff, d),
                b2: Array1::zeros(d),
                ln2_g: Array1::ones(d),
                ln2_b: Array1::zeros(d),
            })
            .collect();
        let heads = MultitaskHeads {
            score_w: init.linear(d, 1).column(0).to_owned(),
            score_b: Array1::zeros(1),
            span_w: init.linear(d, 2),
            span_b: Array1::zeros(2),
        };
        Self {
            config,
            token_emb,
            pos_emb,
            emb_ln_g: Array1::ones(d),
            emb_ln_b: Array1::zeros(d),
            layers,
            heads,
        }
    }

    /// All-zero tensors with the shapes of `config`.
    pub fn zeros(config: EncoderConfig) -> Self {
        Self::init(config, 0).zeros_like()
    }

    pub fn zeros_like(&self) -> Self {
        let mut p = self.clone();
        p.map_inplace(|_| 0.0);
        p
    }

    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("token_emb".to_string(), self.token_emb.view().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view().into_dyn()),
            ("emb_ln.g".to_string(), self.emb_ln_g.view().into_dyn()),
            ("emb_ln.b".to_string(), self.emb_ln_b.view().into_dyn()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let n = |s: &str| format!("layer{i}.{s}");
            out.extend([
                (n("wq"), l.wq.view().into_dyn()),
                (n("bq"), l.bq.view().into_dyn()),
                (n("wk"), l.wk.view().into_dyn()),
                (n("bk"), l.bk.view().into_dyn()),
                (n("wv"), l.wv.view().into_dyn()),
                (n("bv"), l.bv.view().into_dyn()),
                (n("wo"), l.wo.view().into_dyn()),
                (n("bo"), l.bo.view().into_dyn()),
                (n("ln1.g"), l.ln1_g.view().into_dyn()),
                (n("ln1.b"), l.ln1_b.view().into_dyn()),
                (n("w1"), l.w1.view().into_dyn()),
                (n("b1"), l.b1.view().into_dyn()),
                (n("w2"), l.w2.view().into_dyn()),
                (n("b2"), l.b2.view().into_dyn()),
                (n("ln2.g"), l.ln2_g.view().into_dyn()),
                (n("ln2.b"), l.ln2_b.view().into_dyn()),
            ]);
        }
        out.extend([
            ("head.score_w".to_string(), self.heads.score_w.view().into_dyn()),
            ("head.score_b".to_string(), self.heads.score_b.view().into_dyn()),
            ("head.span_w".to_string(), self.heads.span_w.view().into_dyn()),
            ("head.span_b".to_string(), self.heads.span_b.view().into_dyn()),
        ]);
        out
    }

    /// Mutable views in the same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![
            ("token_emb".to_string(), self.token_emb.view_mut().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view_mut().into_dyn()),
            ("emb_ln.g".to_string(), self.emb_ln_g.view_mut().into_dyn()),
            ("emb_ln.b".to_string(), self.emb_ln_b.view_mut().into_dyn()),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let n = |s: &str| format!("layer{i}.{s}");
            out.extend([
                (n("wq"), l.wq.view_mut().into_dyn()),
                (n("bq"), l.bq.view_mut().into_dyn()),
                (n("wk"), l.wk.view_mut().into_dyn()),
                (n("bk"), l.bk.view_mut().into_dyn()),
                (n("wv"), l.wv.view_mut().into_dyn()),
                (n("bv"), l.bv.view_mut().into_dyn()),
                (n("wo"), l.wo.view_mut().into_dyn()),
                (n("bo"), l.bo.view_mut().into_dyn()),
                (n("ln1.g"), l.ln1_g.view_mut().into_dyn()),
                (n("ln1.b"), l.ln1_b.view_mut().into_dyn()),
                (n("w1"), l.w1.view_mut().into_dyn()),
                (n("b1"), l.b1.view_mut().into_dyn()),
                (n("w2"), l.w2.view_mut().into_dyn()),
                (n("b2"), l.b2.view_mut().into_dyn()),
                (n("ln2.g"), l.ln2_g.view_mut().into_dyn()),
                (n("ln2.b"), l.ln2_b.view_mut().into_dyn()),
            ]);
        }
        out.extend([
            ("head.score_w".to_string(), self.heads.score_w.view_mut().into_dyn()),
            ("head.score_b".to_string(), self.heads.score_b.view_mut().into_dyn()),
            ("head.span_w".to_string(), self.heads.span_w.view_mut().into_dyn()),
            ("head.span_b".to_string(), self.heads.span_b.view_mut().into_dyn()),
        ]);
        out
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(&f);
        }
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParameters, scale: f64) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(scale, &b);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Flat copy of every scalar, in [`Self::tensors`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors()
            .into_iter()
            .flat_map(|(_, t)| t.iter().copied().collect::<Vec<_>>())
            .collect()
    }

    /// Mutable reference to scalar `index` of the flat ordering.
    pub fn scalar_mut(&mut self, mut index: usize) -> &mut f64 {
        for (_, t) in self.tensors_mut() {
            if index < t.len() {
                return t.into_slice().expect("standard layout").get_mut(index).unwrap();
            }
            index -= t.len();
        }
        panic!("scalar index out of range");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 10,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 12,
            max_seq_len: 16,
            dropout_rate: 0.0,
        }
    }

    #[test]
    fn shapes_and_count() {
        let p = ModelParameters::init(tiny(), 1);
        let per_layer = 4 * (64 + 8) + 2 * 8 + (8 * 12 + 12) + (12 * 8 + 8) + 2 * 8;
        let expected = 80 + 128 + 16 + 2 * per_layer + 8 + 1 + 16 + 2;
        assert_eq!(p.n_scalars(), expected);
        assert_eq!(p.tensors().len(), 4 + 2 * 16 + 4);
        assert!(p.all_finite());
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(ModelParameters::init(tiny(), 5), ModelParameters::init(tiny(), 5));
        assert_ne!(ModelParameters::init(tiny(), 5), ModelParameters::init(tiny(), 6));
    }

    #[test]
    fn flat_indexing() {
        let mut p = ModelParameters::zeros(tiny());
        let n = p.n_scalars();
        *p.scalar_mut(n - 1) = 3.0;
        assert_eq!(p.heads.span_b[1], 3.0);
        *p.scalar_mut(0) = 2.0;
        assert_eq!(p.token_emb[[0, 0]], 2.0);
        assert_eq!(p.to_flat()[n - 1], 3.0);
    }
}
