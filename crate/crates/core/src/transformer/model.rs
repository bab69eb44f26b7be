use libm::erf;
use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{EncoderConfig, LayerParams, TransformerParams, LAYER_NORM_EPS};
use crate::corpus::SentimentLabel;
use crate::error::{Error, Result};
use crate::tokenizer::Encoding;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Seed for one example's dropout masks.
pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Dropout {
    rng: ChaCha8Rng,
    p: f64,
}

impl Dropout {
    fn mask(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        let keep = 1.0 / (1.0 - self.p);
        Array2::from_shape_simple_fn((rows, cols), || {
            if self.rng.random::<f64>() < self.p {
                0.0
            } else {
                keep
            }
        })
    }
}

struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(
    x: &Array2<f64>,
    gain: &Array1<f64>,
    bias: &Array1<f64>,
) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let k = *s;
        row.mapv_inplace(|v| v * k);
    }
    let y = &xhat * gain + bias;
    (y, LayerNormCache { xhat, inv_std })
}

/// Returns the gradient with respect to the layer-norm input and accumulates
/// the gain and bias gradients.
fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LayerNormCache,
    gain: &Array1<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * gain;
    for ((mut row, xhat), &s) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(&cache.inv_std)
    {
        let mean_d = row.sum() / d;
        let mean_dx = row.dot(&xhat) / d;
        Zip::from(&mut row)
            .and(&xhat)
            .for_each(|g, &xh| *g = s * (*g - mean_d - xh * mean_dx));
    }
    dx
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
}

fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let e = logits.mapv(|v| (v - max).exp());
    let z = e.sum();
    e / z
}

fn add_row(m: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    m + b
}

struct LayerCache {
    x_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    attn_mask: Option<Array2<f64>>,
    ln1: LayerNormCache,
    y1: Array2<f64>,
    h: Array2<f64>,
    g: Array2<f64>,
    ffn_mask: Option<Array2<f64>>,
    ln2: LayerNormCache,
}

/// Activations of one example, kept for the backward pass and for inspection.
///
/// Only unmasked positions are materialized: keys at masked positions would
/// receive `-inf` scores, so their rows never reach the `[CLS]` output.
pub struct ForwardCache {
    ids: Vec<u32>,
    positions: Vec<usize>,
    layers: Vec<LayerCache>,
    pooled: Array1<f64>,
    head_mask: Option<Array1<f64>>,
    head_in: Array1<f64>,
    logits: Array1<f64>,
}

impl ForwardCache {
    pub fn logits(&self) -> &Array1<f64> {
        &self.logits
    }

    /// Original positions of the tokens that were attended to.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// Attention weights of one head, `n × n` over unmasked positions.
    pub fn attention(&self, layer: usize, head: usize) -> &Array2<f64> {
        &self.layers[layer].probs[head]
    }

    /// Normalized (pre gain/bias) output of a layer norm; `which` is 0 for the
    /// attention sublayer and 1 for the feed-forward sublayer.
    pub fn layer_norm_normalized(&self, layer: usize, which: usize) -> &Array2<f64> {
        match which {
            0 => &self.layers[layer].ln1.xhat,
            _ => &self.layers[layer].ln2.xhat,
        }
    }

    /// Final hidden state at the first position, before head dropout.
    pub fn pooled(&self) -> &Array1<f64> {
        &self.pooled
    }
}

fn check_encoding(cfg: &EncoderConfig, e: &Encoding) -> Result<()> {
    if e.ids.len() != cfg.max_len || e.attention_mask.len() != cfg.max_len {
        return Err(Error::InvalidInput(format!(
            "encoding has length {} but the model expects {}",
            e.ids.len(),
            cfg.max_len
        )));
    }
    if e.attention_mask[0] == 0 {
        return Err(Error::InvalidInput(
            "the first position must not be masked".into(),
        ));
    }
    if let Some((pos, id)) = e
        .ids
        .iter()
        .zip(&e.attention_mask)
        .enumerate()
        .find(|(_, (&id, &m))| m != 0 && id as usize >= cfg.vocab_size)
        .map(|(p, (&id, _))| (p, id))
    {
        return Err(Error::InvalidInput(format!(
            "token id {id} at position {pos} is outside the vocabulary of {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

fn layer_forward(
    l: &LayerParams,
    cfg: &EncoderConfig,
    x: Array2<f64>,
    dropout: &mut Option<Dropout>,
) -> (Array2<f64>, LayerCache) {
    let n = x.nrows();
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let q = add_row(&x.dot(&l.wq), &l.bq);
    let k = add_row(&x.dot(&l.wk), &l.bk);
    let v = add_row(&x.dot(&l.wv), &l.bv);
    let mut ctx = Array2::zeros((n, cfg.d_model));
    let mut probs = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut p = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut p);
        ctx.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    let mut o = add_row(&ctx.dot(&l.wo), &l.bo);
    let attn_mask = dropout.as_mut().map(|d| d.mask(n, cfg.d_model));
    if let Some(m) = &attn_mask {
        o *= m;
    }
    let (y1, ln1) = layer_norm(&(&x + &o), &l.ln1_gain, &l.ln1_bias);

    let h = add_row(&y1.dot(&l.w1), &l.b1);
    let g = h.mapv(gelu);
    let mut f = add_row(&g.dot(&l.w2), &l.b2);
    let ffn_mask = dropout.as_mut().map(|d| d.mask(n, cfg.d_model));
    if let Some(m) = &ffn_mask {
        f *= m;
    }
    let (y2, ln2) = layer_norm(&(&y1 + &f), &l.ln2_gain, &l.ln2_bias);
    let cache = LayerCache {
        x_in: x,
        q,
        k,
        v,
        probs,
        ctx,
        attn_mask,
        ln1,
        y1,
        h,
        g,
        ffn_mask,
        ln2,
    };
    (y2, cache)
}

/// Forward pass for one example. Dropout is active when `dropout_seed` is set
/// and the configured rate is positive.
pub fn forward_example(
    params: &TransformerParams,
    cfg: &EncoderConfig,
    enc: &Encoding,
    dropout_seed: Option<u64>,
) -> Result<ForwardCache> {
    check_encoding(cfg, enc)?;
    let mut dropout = dropout_seed.filter(|_| cfg.dropout > 0.0).map(|s| Dropout {
        rng: ChaCha8Rng::seed_from_u64(s),
        p: cfg.dropout,
    });
    let positions: Vec<usize> = (0..enc.ids.len())
        .filter(|&i| enc.attention_mask[i] != 0)
        .collect();
    let ids: Vec<u32> = positions.iter().map(|&i| enc.ids[i]).collect();
    let mut x = Array2::zeros((positions.len(), cfg.d_model));
    for (r, (&pos, &id)) in positions.iter().zip(&ids).enumerate() {
        let mut row = x.row_mut(r);
        row.assign(&params.token_embedding.row(id as usize));
        row += &params.position_embedding.row(pos);
    }
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for l in &params.layers {
        let (y, cache) = layer_forward(l, cfg, x, &mut dropout);
        x = y;
        layers.push(cache);
    }
    let pooled = x.row(0).to_owned();
    let head_mask = dropout
        .as_mut()
        .map(|d| d.mask(1, cfg.d_model).row(0).to_owned());
    let head_in = match &head_mask {
        Some(m) => &pooled * m,
        None => pooled.clone(),
    };
    let logits = head_in.dot(&params.head_weight) + &params.head_bias;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("non-finite logits".into()));
    }
    Ok(ForwardCache {
        ids,
        positions,
        layers,
        pooled,
        head_mask,
        head_in,
        logits,
    })
}

/// Batched forward pass. With `train_mode` set, example `i` draws its dropout
/// masks from a generator seeded by `(seed, i)`.
pub fn forward(
    params: &TransformerParams,
    cfg: &EncoderConfig,
    batch: &[Encoding],
    train_mode: bool,
    seed: u64,
) -> Result<(Array2<f64>, Vec<ForwardCache>)> {
    let caches = batch
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            forward_example(
                params,
                cfg,
                e,
                train_mode.then(|| mix_seed(seed, i as u64, 0)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut logits = Array2::zeros((batch.len(), cfg.num_classes));
    for (mut row, c) in logits.rows_mut().into_iter().zip(&caches) {
        row.assign(&c.logits);
    }
    Ok((logits, caches))
}

/// Cross-entropy of one example, `ln Σ exp(z) - z_label`.
pub(crate) fn cross_entropy(logits: &Array1<f64>, label: SentimentLabel) -> f64 {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[label.id()]
}

pub(crate) fn probabilities(logits: &Array1<f64>) -> Array1<f64> {
    softmax(logits.view())
}

/// Gradients of one example. The token-embedding gradient is kept as rows.
pub(crate) struct ExampleGrads {
    pub dense: TransformerParams,
    pub token_rows: Vec<(u32, Array1<f64>)>,
}

fn zeros_without_tokens(cfg: &EncoderConfig) -> TransformerParams {
    let reduced = EncoderConfig {
        vocab_size: 0,
        ..cfg.clone()
    };
    TransformerParams::zeros(&reduced)
}

/// Backpropagates `dlogits` through the cached forward pass.
pub(crate) fn backward(
    params: &TransformerParams,
    cfg: &EncoderConfig,
    cache: &ForwardCache,
    dlogits: &Array1<f64>,
) -> ExampleGrads {
    let mut g = zeros_without_tokens(cfg);
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    // head
    g.head_weight += &cache
        .head_in
        .view()
        .insert_axis(Axis(1))
        .dot(&dlogits.view().insert_axis(Axis(0)));
    g.head_bias += dlogits;
    let mut dpooled = params.head_weight.dot(dlogits);
    if let Some(m) = &cache.head_mask {
        dpooled *= m;
    }
    let n = cache.ids.len();
    let mut dx = Array2::zeros((n, cfg.d_model));
    dx.row_mut(0).assign(&dpooled);

    for (li, (l, c)) in params.layers.iter().zip(&cache.layers).enumerate().rev() {
        let gl = &mut g.layers[li];

        // feed-forward sublayer
        let dr2 = layer_norm_backward(&dx, &c.ln2, &l.ln2_gain, &mut gl.ln2_gain, &mut gl.ln2_bias);
        let mut dy1 = dr2.clone();
        let mut df = dr2;
        if let Some(m) = &c.ffn_mask {
            df *= m;
        }
        gl.w2 += &c.g.t().dot(&df);
        gl.b2 += &df.sum_axis(Axis(0));
        let mut dhid = df.dot(&l.w2.t());
        Zip::from(&mut dhid)
            .and(&c.h)
            .for_each(|d, &h| *d *= gelu_grad(h));
        gl.w1 += &c.y1.t().dot(&dhid);
        gl.b1 += &dhid.sum_axis(Axis(0));
        dy1 += &dhid.dot(&l.w1.t());

        // attention sublayer
        let dr1 = layer_norm_backward(
            &dy1,
            &c.ln1,
            &l.ln1_gain,
            &mut gl.ln1_gain,
            &mut gl.ln1_bias,
        );
        let mut dx_in = dr1.clone();
        let mut dout = dr1;
        if let Some(m) = &c.attn_mask {
            dout *= m;
        }
        gl.wo += &c.ctx.t().dot(&dout);
        gl.bo += &dout.sum_axis(Axis(0));
        let dctx = dout.dot(&l.wo.t());
        let mut dq = Array2::zeros((n, cfg.d_model));
        let mut dk = Array2::zeros((n, cfg.d_model));
        let mut dv = Array2::zeros((n, cfg.d_model));
        for h in 0..cfg.num_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let p = &c.probs[h];
            let dctx_h = dctx.slice(cols);
            let dp = dctx_h.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));
            let row_dot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
            let ds = p * &(&dp - &row_dot) * scale;
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        for (w, d, dw, db) in [
            (&l.wq, &dq, &mut gl.wq, &mut gl.bq),
            (&l.wk, &dk, &mut gl.wk, &mut gl.bk),
            (&l.wv, &dv, &mut gl.wv, &mut gl.bv),
        ] {
            *dw += &c.x_in.t().dot(d);
            *db += &d.sum_axis(Axis(0));
            dx_in += &d.dot(&w.t());
        }
        dx = dx_in;
    }

    let mut token_rows = Vec::with_capacity(n);
    for (r, (&pos, &id)) in cache.positions.iter().zip(&cache.ids).enumerate() {
        let row = dx.row(r);
        let mut prow = g.position_embedding.row_mut(pos);
        prow += &row;
        token_rows.push((id, row.to_owned()));
    }
    ExampleGrads {
        dense: g,
        token_rows,
    }
}

/// One example's loss and gradients (unscaled).
pub(crate) fn example_loss_and_grads(
    params: &TransformerParams,
    cfg: &EncoderConfig,
    enc: &Encoding,
    label: SentimentLabel,
    dropout_seed: Option<u64>,
) -> Result<(f64, ExampleGrads)> {
    let cache = forward_example(params, cfg, enc, dropout_seed)?;
    let loss = cross_entropy(&cache.logits, label);
    let mut dlogits = probabilities(&cache.logits);
    dlogits[label.id()] -= 1.0;
    Ok((loss, backward(params, cfg, &cache, &dlogits)))
}

/// Mean loss and gradients over `items`, computed in parallel and reduced in
/// input order so results do not depend on thread scheduling.
pub(crate) fn batch_loss_and_grads(
    params: &TransformerParams,
    cfg: &EncoderConfig,
    items: &[(&Encoding, SentimentLabel, Option<u64>)],
    grads: &mut TransformerParams,
) -> Result<f64> {
    let per_example = items
        .par_iter()
        .map(|&(e, y, seed)| example_loss_and_grads(params, cfg, e, y, seed))
        .collect::<Result<Vec<_>>>()?;
    for s in grads.slices_mut() {
        s.fill(0.0);
    }
    let mut loss = 0.0;
    for (l, eg) in &per_example {
        loss += l;
        for (a, b) in grads
            .slices_mut()
            .into_iter()
            .zip(eg.dense.slices())
            .skip(1)
        {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (id, row) in &eg.token_rows {
            let mut dst = grads.token_embedding.row_mut(*id as usize);
            dst += row;
        }
    }
    let inv = 1.0 / items.len() as f64;
    grads.scale(inv);
    let loss = loss * inv;
    if !loss.is_finite() {
        return Err(Error::Divergence("non-finite loss".into()));
    }
    Ok(loss)
}

/// Mean cross-entropy over the batch and its exact gradient. Dropout is off
/// unless `dropout_seed` is given, in which case example `i` uses masks seeded
/// by `(dropout_seed, i)`.
pub fn loss_and_grads(
    params: &TransformerParams,
    cfg: &EncoderConfig,
    batch: &[Encoding],
    labels: &[SentimentLabel],
    dropout_seed: Option<u64>,
) -> Result<(f64, TransformerParams)> {
    if batch.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} encodings but {} labels",
            batch.len(),
            labels.len()
        )));
    }
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let items: Vec<_> = batch
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (e, &y))| (e, y, dropout_seed.map(|s| mix_seed(s, i as u64, 0))))
        .collect();
    let mut grads = TransformerParams::zeros(cfg);
    let loss = batch_loss_and_grads(params, cfg, &items, &mut grads)?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::init_params;
    use crate::SentimentLabel::*;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            num_layers: 2,
            num_heads: 2,
            d_model: 8,
            d_ff: 16,
            dropout: 0.0,
            max_len: 16,
            vocab_size: 30,
            num_classes: 3,
        }
    }

    fn enc(ids: &[u32], max_len: usize) -> Encoding {
        let mut full = ids.to_vec();
        full.resize(max_len, 0);
        let mut mask = vec![1u8; ids.len()];
        mask.resize(max_len, 0);
        Encoding {
            ids: full,
            attention_mask: mask,
            num_real: ids.len(),
        }
    }

    fn sample_batch(max_len: usize) -> (Vec<Encoding>, Vec<SentimentLabel>) {
        (
            vec![
                enc(&[2, 5, 9, 17, 3], max_len),
                enc(&[2, 29, 3], max_len),
                enc(&[2, 7, 7, 8, 11, 4, 21, 3], max_len),
            ],
            vec![Positive, Negative, Neutral],
        )
    }

    /// Perturbs the params to move away from the symmetric init: larger
    /// weights, non-trivial layer-norm gains and biases.
    fn perturbed(cfg: &EncoderConfig, seed: u64) -> TransformerParams {
        let mut p = init_params(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for s in p.slices_mut() {
            for v in s.iter_mut() {
                *v = *v * 10.0 + rng.random_range(-0.2..0.2);
            }
        }
        p
    }

    fn loss_of(
        p: &TransformerParams,
        cfg: &EncoderConfig,
        b: &[Encoding],
        y: &[SentimentLabel],
        seed: Option<u64>,
    ) -> f64 {
        loss_and_grads(p, cfg, b, y, seed).unwrap().0
    }

    fn gradient_check(cfg: &EncoderConfig, dropout_seed: Option<u64>) {
        let (batch, labels) = sample_batch(cfg.max_len);
        let params = perturbed(cfg, 11);
        let (_, grads) = loss_and_grads(&params, cfg, &batch, &labels, dropout_seed).unwrap();
        let meta = params.tensor_meta();
        let h = 1e-5;
        let mut worst = (0.0, String::new());
        for (t, m) in meta.iter().enumerate() {
            let analytic = grads.slices()[t].to_vec();
            let mut numeric = vec![0.0; analytic.len()];
            for (j, num) in numeric.iter_mut().enumerate() {
                let mut plus = params.clone();
                plus.slices_mut()[t][j] += h;
                let mut minus = params.clone();
                minus.slices_mut()[t][j] -= h;
                *num = (loss_of(&plus, cfg, &batch, &labels, dropout_seed)
                    - loss_of(&minus, cfg, &batch, &labels, dropout_seed))
                    / (2.0 * h);
            }
            let diff: f64 = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
            // The key bias has an identically zero gradient (softmax is
            // shift-invariant), so relative error needs an absolute floor.
            let rel = diff / na.max(nn).max(1e-8);
            if !m.name.ends_with("attention.key.bias") {
                assert!(na > 1e-6, "vanishing gradient for {}", m.name);
            }
            if rel > worst.0 {
                worst = (rel, m.name.clone());
            }
        }
        assert!(
            worst.0 < 1e-4,
            "worst relative error {} in {}",
            worst.0,
            worst.1
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        gradient_check(&tiny_cfg(), None);
    }

    #[test]
    fn gradients_match_with_fixed_dropout_masks() {
        let cfg = EncoderConfig {
            dropout: 0.2,
            ..tiny_cfg()
        };
        gradient_check(&cfg, Some(99));
    }

    #[test]
    fn zero_head_gives_ln3() {
        let cfg = tiny_cfg();
        let mut p = init_params(&cfg, 1).unwrap();
        p.head_weight.fill(0.0);
        let (batch, labels) = sample_batch(cfg.max_len);
        let (loss, _) = loss_and_grads(&p, &cfg, &batch, &labels, None).unwrap();
        assert!((loss - 3f64.ln()).abs() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn duplicated_batch_keeps_mean_loss() {
        let cfg = tiny_cfg();
        let p = perturbed(&cfg, 2);
        let (batch, labels) = sample_batch(cfg.max_len);
        let single = loss_of(&p, &cfg, &batch, &labels, None);
        let b2: Vec<_> = batch.iter().chain(&batch).cloned().collect();
        let l2: Vec<_> = labels.iter().chain(&labels).copied().collect();
        assert!((loss_of(&p, &cfg, &b2, &l2, None) - single).abs() < 1e-12);
    }

    #[test]
    fn attention_rows_and_layer_norm_statistics() {
        let cfg = tiny_cfg();
        let p = perturbed(&cfg, 3);
        let (batch, _) = sample_batch(cfg.max_len);
        for e in &batch {
            let c = forward_example(&p, &cfg, e, None).unwrap();
            for l in 0..cfg.num_layers {
                for h in 0..cfg.num_heads {
                    let a = c.attention(l, h);
                    assert_eq!(a.nrows(), e.num_real);
                    for row in a.rows() {
                        assert!((row.sum() - 1.0).abs() < 1e-6);
                    }
                }
                for which in 0..2 {
                    for row in c.layer_norm_normalized(l, which).rows() {
                        let mean = row.mean().unwrap();
                        let var = row.mapv(|v| (v - mean).powi(2)).mean().unwrap();
                        assert!(mean.abs() < 1e-6);
                        assert!((var - 1.0).abs() < 1e-4);
                    }
                }
            }
        }
    }

    #[test]
    fn identical_inputs_identical_logits() {
        let cfg = tiny_cfg();
        let p = perturbed(&cfg, 4);
        let e = enc(&[2, 6, 6, 3], cfg.max_len);
        let (logits, _) = forward(&p, &cfg, &[e.clone(), e], false, 0).unwrap();
        assert_eq!(logits.row(0), logits.row(1));
    }

    #[test]
    fn masked_ids_do_not_matter() {
        let cfg = tiny_cfg();
        let p = perturbed(&cfg, 5);
        let a = enc(&[2, 6, 9, 3], cfg.max_len);
        let mut b = a.clone();
        for (i, id) in b.ids.iter_mut().enumerate().skip(4) {
            *id = (i % 30) as u32;
        }
        let la = forward_example(&p, &cfg, &a, None).unwrap();
        let lb = forward_example(&p, &cfg, &b, None).unwrap();
        assert_eq!(la.logits(), lb.logits());
    }

    #[test]
    fn pad_extension_is_invisible() {
        let long = EncoderConfig {
            max_len: 24,
            ..tiny_cfg()
        };
        let p_long = perturbed(&long, 6);
        let short = tiny_cfg();
        let mut p_short = p_long.clone();
        p_short.position_embedding = p_long.position_embedding.slice(s![..16, ..]).to_owned();
        let ids = [2, 4, 13, 27, 3];
        let a = forward_example(&p_short, &short, &enc(&ids, 16), None).unwrap();
        let b = forward_example(&p_long, &long, &enc(&ids, 24), None).unwrap();
        assert_eq!(a.logits(), b.logits());
    }

    #[test]
    fn permutation_invariant_without_positions() {
        let cfg = tiny_cfg();
        let mut p = perturbed(&cfg, 7);
        p.position_embedding.fill(0.0);
        let a = forward_example(&p, &cfg, &enc(&[2, 5, 9, 17, 21, 3], 16), None).unwrap();
        let b = forward_example(&p, &cfg, &enc(&[2, 21, 17, 5, 9, 3], 16), None).unwrap();
        for (x, y) in a.logits().iter().zip(b.logits()) {
            assert!((x - y).abs() < 1e-12);
        }
        let p = perturbed(&cfg, 7);
        let a = forward_example(&p, &cfg, &enc(&[2, 5, 9, 17, 21, 3], 16), None).unwrap();
        let b = forward_example(&p, &cfg, &enc(&[2, 21, 17, 5, 9, 3], 16), None).unwrap();
        assert_ne!(a.logits(), b.logits());
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let cfg = EncoderConfig {
            dropout: 0.5,
            ..tiny_cfg()
        };
        let p = perturbed(&cfg, 8);
        let (batch, _) = sample_batch(cfg.max_len);
        let (eval1, _) = forward(&p, &cfg, &batch, false, 1).unwrap();
        let (eval2, _) = forward(&p, &cfg, &batch, false, 2).unwrap();
        assert_eq!(eval1, eval2);
        let (t1, _) = forward(&p, &cfg, &batch, true, 1).unwrap();
        let (t1b, _) = forward(&p, &cfg, &batch, true, 1).unwrap();
        let (t2, _) = forward(&p, &cfg, &batch, true, 2).unwrap();
        assert_eq!(t1, t1b);
        assert_ne!(t1, t2);
        assert_ne!(t1, eval1);
    }

    #[test]
    fn rejects_malformed_encodings() {
        let cfg = tiny_cfg();
        let p = init_params(&cfg, 1).unwrap();
        assert!(forward_example(&p, &cfg, &enc(&[2, 3], 8), None).is_err());
        assert!(forward_example(&p, &cfg, &enc(&[2, 30, 3], 16), None).is_err());
        let mut e = enc(&[2, 3], 16);
        e.attention_mask[0] = 0;
        assert!(forward_example(&p, &cfg, &e, None).is_err());
        assert!(loss_and_grads(&p, &cfg, &[enc(&[2], 16)], &[], None).is_err());
    }

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((gelu(-1.0) + 0.158_655_253_931_457_05).abs() < 1e-15);
        for x in [-3.0, -0.5, 0.3, 2.0] {
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
