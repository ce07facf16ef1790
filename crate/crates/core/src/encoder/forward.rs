//! Encoder forward pass, its cached activations, and the matching backward pass.

use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};

use super::{DropoutKey, EncoderConfig, LayerParams, ModelError, ModelParameters, PackedInput};

const LN_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    Eval,
    Train(DropoutKey),
}

#[derive(Debug, Clone)]
struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    attn_drop: Option<Array2<f64>>,
    ln1: LnCache,
    h1: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    ff_drop: Option<Array2<f64>>,
    ln2: LnCache,
}

/// Activations kept from [`encode`] for [`encode_backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    token_ids: Vec<u32>,
    emb_ln: LnCache,
    emb_drop: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn seq_len(&self) -> usize {
        self.token_ids.len()
    }

    /// Attention distribution of `head` in `layer` (rows are query positions).
    pub fn attention(&self, layer: usize, head: usize) -> &Array2<f64> {
        &self.layers[layer].probs[head]
    }

    /// Normalized (pre-gain) output of the second layer norm of `layer`.
    pub fn layer_norm_xhat(&self, layer: usize) -> &Array2<f64> {
        &self.layers[layer].ln2.xhat
    }
}

#[derive(Debug, Clone)]
pub struct Encoding {
    /// One `d_model` row per input position; row 0 is the CLS representation.
    pub hidden: Array2<f64>,
    pub cache: ForwardCache,
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.outer_iter_mut().zip(inv_std.iter_mut()) {
        let mu = row.sum() / d;
        row.mapv_inplace(|v| v - mu);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        let s = *inv;
        row.mapv_inplace(|v| v * s);
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: &Array1<f64>,
    dg: &mut Array1<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let dxhat = dy * g;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_dh = dh.sum() / d;
        let mean_dhx = dh.dot(&xh) / d;
        let inv = cache.inv_std[i];
        Zip::from(dx.row_mut(i))
            .and(&dh)
            .and(&xh)
            .for_each(|o, &a, &x| *o = inv * (a - mean_dh - x * mean_dhx));
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(w) + b
}

fn dropout_mask(mode: EncodeMode, rate: f64, site: u64, shape: (usize, usize)) -> Option<Array2<f64>> {
    match mode {
        EncodeMode::Train(key) if rate > 0.0 => Some(
            Array2::from_shape_vec(shape, key.mask(site, shape.0 * shape.1, rate))
                .expect("mask shape"),
        ),
        _ => None,
    }
}

fn check_finite(x: &Array2<f64>, stage: impl FnOnce() -> String) -> Result<(), ModelError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite { stage: stage() })
    }
}

fn validate_input(config: &EncoderConfig, input: &PackedInput) -> Result<(), ModelError> {
    let len = input.token_ids.len();
    if len == 0 || len > config.max_seq_len {
        return Err(ModelError::ShapeMismatch(format!(
            "sequence length {len} not in 1..={}",
            config.max_seq_len
        )));
    }
    if input.attention_mask.len() != len || input.paragraph_mask.len() != len {
        return Err(ModelError::ShapeMismatch("mask lengths differ from token_ids".into()));
    }
    if !input.attention_mask[0] {
        return Err(ModelError::ShapeMismatch("position 0 must be attended".into()));
    }
    if let Some(&id) = input.token_ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(ModelError::TokenOutOfRange {
            id,
            vocab_size: config.vocab_size,
        });
    }
    Ok(())
}

fn attention_layer(
    layer: &LayerParams,
    config: &EncoderConfig,
    x: &Array2<f64>,
    key_mask: &[bool],
) -> (Array2<f64>, Array2<f64>, Array2<f64>, Vec<Array2<f64>>, Array2<f64>) {
    let q = affine(x, &layer.wq, &layer.bq);
    let k = affine(x, &layer.wk, &layer.bk);
    let v = affine(x, &layer.wv, &layer.bv);
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = Array2::zeros(x.raw_dim());
    let mut probs = Vec::with_capacity(config.n_heads);
    for h in 0..config.n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut p = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        for mut row in p.outer_iter_mut() {
            for (j, val) in row.iter_mut().enumerate() {
                if !key_mask[j] {
                    *val = f64::NEG_INFINITY;
                }
            }
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        ctx.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    (q, k, v, probs, ctx)
}

/// Run the encoder over one packed sequence.
pub fn encode(
    params: &ModelParameters,
    input: &PackedInput,
    mode: EncodeMode,
) -> Result<Encoding, ModelError> {
    let config = &params.config;
    validate_input(config, input)?;
    let len = input.token_ids.len();
    let d = config.d_model;
    let rate = config.dropout_rate;

    let mut x0 = Array2::zeros((len, d));
    for (i, &id) in input.token_ids.iter().enumerate() {
        let mut row = x0.row_mut(i);
        row.assign(&params.token_emb.row(id as usize));
        row += &params.pos_emb.row(i);
    }
    let (mut h, emb_ln) = layer_norm(&x0, &params.emb_ln_g, &params.emb_ln_b);
    let emb_drop = dropout_mask(mode, rate, 0, (len, d));
    if let Some(m) = &emb_drop {
        h *= m;
    }

    let mut layers = Vec::with_capacity(config.n_layers);
    for (li, layer) in params.layers.iter().enumerate() {
        let (q, k, v, probs, ctx) = attention_layer(layer, config, &h, &input.attention_mask);
        let mut a = affine(&ctx, &layer.wo, &layer.bo);
        let attn_drop = dropout_mask(mode, rate, 1 + 2 * li as u64, (len, d));
        if let Some(m) = &attn_drop {
            a *= m;
        }
        let (h1, ln1) = layer_norm(&(&h + &a), &layer.ln1_g, &layer.ln1_b);

        let ff_pre = affine(&h1, &layer.w1, &layer.b1);
        let ff_act = ff_pre.mapv(gelu);
        let mut f2 = affine(&ff_act, &layer.w2, &layer.b2);
        let ff_drop = dropout_mask(mode, rate, 2 + 2 * li as u64, (len, d));
        if let Some(m) = &ff_drop {
            f2 *= m;
        }
        let (out, ln2) = layer_norm(&(&h1 + &f2), &layer.ln2_g, &layer.ln2_b);
        check_finite(&out, || format!("encoder layer {li}"))?;

        layers.push(LayerCache {
            input: std::mem::replace(&mut h, out),
            q,
            k,
            v,
            probs,
            ctx,
            attn_drop,
            ln1,
            h1,
            ff_pre,
            ff_act,
            ff_drop,
            ln2,
        });
    }
    check_finite(&h, || "embedding".to_string())?;

    Ok(Encoding {
        hidden: h,
        cache: ForwardCache {
            token_ids: input.token_ids.clone(),
            emb_ln,
            emb_drop,
            layers,
        },
    })
}

/// Encode several inputs by padding them to a common length.
///
/// Hidden states are truncated back to each input's own length, so results are
/// comparable with [`encode`] on the unpadded input.
pub fn encode_batch(
    params: &ModelParameters,
    inputs: &[PackedInput],
    mode: EncodeMode,
) -> Result<Vec<Array2<f64>>, ModelError> {
    let max_len = inputs.iter().map(PackedInput::len).max().unwrap_or(0);
    inputs
        .iter()
        .map(|input| {
            let enc = encode(params, &input.padded(max_len), mode)?;
            Ok(enc.hidden.slice(s![..input.len(), ..]).to_owned())
        })
        .collect()
}

/// Gradient of a scalar loss w.r.t. every parameter, given ∂loss/∂H.
pub fn encode_backward(
    params: &ModelParameters,
    cache: &ForwardCache,
    d_hidden: &Array2<f64>,
) -> Result<ModelParameters, ModelError> {
    let mut grads = params.zeros_like();
    backward_into(params, cache, d_hidden, &mut grads)?;
    Ok(grads)
}

/// Accumulate encoder gradients into `grads`.
pub(crate) fn backward_into(
    params: &ModelParameters,
    cache: &ForwardCache,
    d_hidden: &Array2<f64>,
    grads: &mut ModelParameters,
) -> Result<(), ModelError> {
    let config = &params.config;
    let len = cache.seq_len();
    if d_hidden.dim() != (len, config.d_model) || cache.layers.len() != params.layers.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "upstream gradient {:?} vs encoding ({len}, {})",
            d_hidden.dim(),
            config.d_model
        )));
    }
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let mut dx = d_hidden.clone();
    for (li, (layer, lc)) in params.layers.iter().zip(&cache.layers).enumerate().rev() {
        let g = &mut grads.layers[li];

        // Feed-forward sub-block.
        let dr2 = layer_norm_backward(&dx, &lc.ln2, &layer.ln2_g, &mut g.ln2_g, &mut g.ln2_b);
        let mut df2 = dr2.clone();
        if let Some(m) = &lc.ff_drop {
            df2 *= m;
        }
        g.w2 += &lc.ff_act.t().dot(&df2);
        g.b2 += &df2.sum_axis(Axis(0));
        let mut dpre = df2.dot(&layer.w2.t());
        Zip::from(&mut dpre)
            .and(&lc.ff_pre)
            .for_each(|d, &x| *d *= gelu_grad(x));
        g.w1 += &lc.h1.t().dot(&dpre);
        g.b1 += &dpre.sum_axis(Axis(0));
        let dh1 = dr2 + dpre.dot(&layer.w1.t());

        // Attention sub-block.
        let dr1 = layer_norm_backward(&dh1, &lc.ln1, &layer.ln1_g, &mut g.ln1_g, &mut g.ln1_b);
        let mut da = dr1.clone();
        if let Some(m) = &lc.attn_drop {
            da *= m;
        }
        g.wo += &lc.ctx.t().dot(&da);
        g.bo += &da.sum_axis(Axis(0));
        let dctx = da.dot(&layer.wo.t());

        let mut dq = Array2::zeros((len, config.d_model));
        let mut dk = Array2::zeros((len, config.d_model));
        let mut dv = Array2::zeros((len, config.d_model));
        for (h, p) in lc.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dctx_h = dctx.slice(cols);
            let dp = dctx_h.dot(&lc.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));
            let mut ds = dp;
            for (mut ds_row, p_row) in ds.outer_iter_mut().zip(p.outer_iter()) {
                let inner = ds_row.dot(&p_row);
                Zip::from(&mut ds_row)
                    .and(&p_row)
                    .for_each(|d, &pv| *d = pv * (*d - inner) * scale);
            }
            dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
        }
        let x = &lc.input;
        g.wq += &x.t().dot(&dq);
        g.bq += &dq.sum_axis(Axis(0));
        g.wk += &x.t().dot(&dk);
        g.bk += &dk.sum_axis(Axis(0));
        g.wv += &x.t().dot(&dv);
        g.bv += &dv.sum_axis(Axis(0));
        dx = dr1 + dq.dot(&layer.wq.t()) + dk.dot(&layer.wk.t()) + dv.dot(&layer.wv.t());
    }

    if let Some(m) = &cache.emb_drop {
        dx *= m;
    }
    let dx0 = layer_norm_backward(
        &dx,
        &cache.emb_ln,
        &params.emb_ln_g,
        &mut grads.emb_ln_g,
        &mut grads.emb_ln_b,
    );
    for (i, &id) in cache.token_ids.iter().enumerate() {
        let row: ArrayView1<f64> = dx0.row(i);
        let mut te = grads.token_emb.row_mut(id as usize);
        te += &row;
        let mut pe = grads.pos_emb.row_mut(i);
        pe += &row;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::pack;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(seed: u64) -> ModelParameters {
        let config = EncoderConfig {
            vocab_size: 12,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            max_seq_len: 16,
            dropout_rate: 0.2,
        };
        ModelParameters::init(config, seed)
    }

    fn input(params: &ModelParameters) -> PackedInput {
        pack(&[4, 5, 6], &[7, 8, 9, 10, 11], &params.config).unwrap()
    }

    /// Loss = Σ W ⊙ H with a fixed random weight matrix W.
    fn probe(rows: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, d), || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn eval_is_deterministic() {
        let p = tiny(1);
        let x = input(&p);
        let a = encode(&p, &x, EncodeMode::Eval).unwrap().hidden;
        let b = encode(&p, &x, EncodeMode::Eval).unwrap().hidden;
        assert_eq!(a, b);
        assert_eq!(a.dim(), (x.len(), 8));
    }

    #[test]
    fn attention_rows_sum_to_one_and_skip_padding() {
        let p = tiny(2);
        let x = input(&p).padded(14);
        let enc = encode(&p, &x, EncodeMode::Eval).unwrap();
        for h in 0..2 {
            let a = enc.cache.attention(0, h);
            for row in a.outer_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                for (j, &w) in row.iter().enumerate() {
                    if !x.attention_mask[j] {
                        assert_eq!(w, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn layer_norm_statistics() {
        let p = tiny(3);
        let enc = encode(&p, &input(&p), EncodeMode::Eval).unwrap();
        for row in enc.cache.layer_norm_xhat(0).outer_iter() {
            let mu = row.mean().unwrap();
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / row.len() as f64;
            assert!(mu.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn padding_contents_do_not_matter() {
        let p = tiny(4);
        let base = input(&p);
        let n = base.len();
        let mut a = base.padded(n + 3);
        a.token_ids[n] = 3;
        a.token_ids[n + 2] = 9;
        let mut b = a.clone();
        b.token_ids.swap(n, n + 2);
        let ha = encode(&p, &a, EncodeMode::Eval).unwrap().hidden;
        let hb = encode(&p, &b, EncodeMode::Eval).unwrap().hidden;
        let hu = encode(&p, &base, EncodeMode::Eval).unwrap().hidden;
        for i in 0..n {
            for j in 0..8 {
                assert!((ha[[i, j]] - hb[[i, j]]).abs() < 1e-6);
                assert!((ha[[i, j]] - hu[[i, j]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn batch_matches_single() {
        let p = tiny(5);
        let inputs = vec![
            pack(&[4], &[5, 6, 7, 8, 9, 10], &p.config).unwrap(),
            pack(&[4, 5], &[6], &p.config).unwrap(),
        ];
        let batch = encode_batch(&p, &inputs, EncodeMode::Eval).unwrap();
        for (x, hb) in inputs.iter().zip(&batch) {
            let h = encode(&p, x, EncodeMode::Eval).unwrap().hidden;
            assert!((&h - hb).iter().all(|v| v.abs() < 1e-6));
        }
    }

    #[test]
    fn zero_attention_output_reduces_to_feed_forward_path() {
        let mut p = tiny(6);
        p.layers[0].wo.fill(0.0);
        p.layers[0].bo.fill(0.0);
        let x = input(&p);
        let h = encode(&p, &x, EncodeMode::Eval).unwrap().hidden;

        // Reference: embeddings → LN → LN1 → FF residual → LN2, row by row.
        let ln = |v: Vec<f64>, g: &Array1<f64>, b: &Array1<f64>| -> Vec<f64> {
            let n = v.len() as f64;
            let mu = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
            v.iter()
                .enumerate()
                .map(|(i, x)| (x - mu) / (var + 1e-12).sqrt() * g[i] + b[i])
                .collect()
        };
        let l = &p.layers[0];
        for (pos, &id) in x.token_ids.iter().enumerate() {
            let e: Vec<f64> = (0..8)
                .map(|j| p.token_emb[[id as usize, j]] + p.pos_emb[[pos, j]])
                .collect();
            let h0 = ln(e, &p.emb_ln_g, &p.emb_ln_b);
            let h1 = ln(h0, &l.ln1_g, &l.ln1_b);
            let hidden: Vec<f64> = (0..16)
                .map(|k| {
                    let z: f64 = (0..8).map(|j| h1[j] * l.w1[[j, k]]).sum::<f64>() + l.b1[k];
                    0.5 * z * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (z + 0.044715 * z.powi(3))).tanh())
                })
                .collect();
            let r: Vec<f64> = (0..8)
                .map(|j| h1[j] + (0..16).map(|k| hidden[k] * l.w2[[k, j]]).sum::<f64>() + l.b2[j])
                .collect();
            let out = ln(r, &l.ln2_g, &l.ln2_b);
            for j in 0..8 {
                assert!((out[j] - h[[pos, j]]).abs() < 1e-9, "pos {pos} col {j}");
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = tiny(7);
        let x = input(&p);
        let enc = encode(&p, &x, EncodeMode::Eval).unwrap();
        let g = encode_backward(&p, &enc.cache, &Array2::zeros(enc.hidden.raw_dim())).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = tiny(7);
        let enc = encode(&p, &input(&p), EncodeMode::Eval).unwrap();
        assert!(matches!(
            encode_backward(&p, &enc.cache, &Array2::zeros((3, 8))),
            Err(ModelError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn out_of_range_token() {
        let p = tiny(7);
        let mut x = input(&p);
        x.token_ids[2] = 99;
        assert!(matches!(
            encode(&p, &x, EncodeMode::Eval),
            Err(ModelError::TokenOutOfRange { id: 99, .. })
        ));
    }

    #[test]
    fn padding_embedding_gets_no_gradient() {
        let p = tiny(8);
        let base = input(&p);
        let n = base.len();
        let mut x = base.padded(n + 2);
        // Token 1 is used only at padding positions.
        x.token_ids[n] = 1;
        x.token_ids[n + 1] = 1;
        let enc = encode(&p, &x, EncodeMode::Eval).unwrap();
        let mut up = probe(n + 2, 8, 1);
        up.slice_mut(s![n.., ..]).fill(0.0);
        let g = encode_backward(&p, &enc.cache, &up).unwrap();
        assert!(g.token_emb.row(1).iter().all(|&v| v == 0.0));
        assert!(g.pos_emb.row(n).iter().all(|&v| v == 0.0));
    }

    fn finite_difference_check(mode: EncodeMode, seed: u64) {
        let p = tiny(seed);
        let x = input(&p).padded(11);
        let w = probe(x.len(), 8, seed + 100);
        let loss = |p: &ModelParameters| -> f64 {
            (encode(p, &x, mode).unwrap().hidden * &w).sum()
        };
        let enc = encode(&p, &x, mode).unwrap();
        let analytic = encode_backward(&p, &enc.cache, &w).unwrap().to_flat();
        let eps = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..p.n_scalars() {
            let mut plus = p.clone();
            *plus.scalar_mut(i) += eps;
            let mut minus = p.clone();
            *minus.scalar_mut(i) -= eps;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences_eval() {
        for seed in [11, 12, 13] {
            finite_difference_check(EncodeMode::Eval, seed);
        }
    }

    #[test]
    fn gradients_match_finite_differences_with_dropout() {
        finite_difference_check(EncodeMode::Train(DropoutKey::new(9, 1, 2)), 21);
    }
}
