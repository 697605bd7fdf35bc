//! BERT-style transformer encoder with a pooled 3-way classification head,
//! forward and backward.
//!
//! Sequences are processed one at a time over their unpadded length, so a
//! row's scores never depend on what else is in the batch.

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Ix1, Ix2, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ops::{self, LayerNormCache};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub max_position_embeddings: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab_size: usize,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
    #[serde(default = "default_num_labels")]
    pub num_labels: usize,
}

fn default_type_vocab() -> usize {
    2
}
fn default_ln_eps() -> f64 {
    1e-12
}
fn default_num_labels() -> usize {
    crate::label::NUM_LABELS
}

impl EncoderConfig {
    /// Two layers, 32 hidden units, 512 hash buckets.
    pub fn toy() -> Self {
        EncoderConfig {
            vocab_size: 512,
            hidden_size: 32,
            num_hidden_layers: 2,
            num_attention_heads: 4,
            intermediate_size: 64,
            max_position_embeddings: 256,
            type_vocab_size: 2,
            layer_norm_eps: 1e-12,
            num_labels: crate::label::NUM_LABELS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("hidden_size", self.hidden_size),
            ("num_attention_heads", self.num_attention_heads),
            ("intermediate_size", self.intermediate_size),
            ("max_position_embeddings", self.max_position_embeddings),
            ("type_vocab_size", self.type_vocab_size),
            ("num_labels", self.num_labels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !self.hidden_size.is_multiple_of(self.num_attention_heads) {
            return Err(Error::InvalidConfig(format!(
                "hidden_size {} not divisible by {} heads",
                self.hidden_size, self.num_attention_heads
            )));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.hidden_size / self.num_attention_heads
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<ArrayD<f32>>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    fn new() -> Self {
        ParamSet { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    fn push(&mut self, name: String, value: ArrayD<f32>) -> usize {
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
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

    pub fn values(&self) -> &[ArrayD<f32>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [ArrayD<f32>] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f32>> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn zeros_like(&self) -> Vec<ArrayD<f32>> {
        self.values.iter().map(|v| ArrayD::zeros(v.raw_dim())).collect()
    }

    fn m(&self, id: usize) -> ArrayView2<'_, f32> {
        self.values[id].view().into_dimensionality::<Ix2>().unwrap()
    }

    fn v(&self, id: usize) -> ArrayView1<'_, f32> {
        self.values[id].view().into_dimensionality::<Ix1>().unwrap()
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, value) in self.names.iter().zip(&self.values) {
            hasher.update(name.as_bytes());
            for d in value.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for x in value.iter() {
                hasher.update(x.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

fn gm(grads: &mut [ArrayD<f32>], id: usize) -> ArrayViewMut2<'_, f32> {
    grads[id].view_mut().into_dimensionality::<Ix2>().unwrap()
}

fn gv(grads: &mut [ArrayD<f32>], id: usize) -> ArrayViewMut1<'_, f32> {
    grads[id].view_mut().into_dimensionality::<Ix1>().unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Norm {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct LayerIds {
    query: Dense,
    key: Dense,
    value: Dense,
    attn_out: Dense,
    attn_norm: Norm,
    intermediate: Dense,
    output: Dense,
    out_norm: Norm,
}

#[derive(Debug, Clone, PartialEq)]
struct Ids {
    word: usize,
    position: usize,
    token_type: usize,
    emb_norm: Norm,
    layers: Vec<LayerIds>,
    pooler: Dense,
    classifier: Dense,
}

pub const CLASSIFIER_WEIGHT: &str = "classifier.weight";
pub const CLASSIFIER_BIAS: &str = "classifier.bias";

const INIT_STD: f32 = 0.02;

/// Parameter names and shapes in canonical (HF `BertForSequenceClassification`) form.
pub fn parameter_layout(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let h = cfg.hidden_size;
    let mut out = vec![
        ("bert.embeddings.word_embeddings.weight".to_string(), vec![cfg.vocab_size, h]),
        ("bert.embeddings.position_embeddings.weight".to_string(), vec![cfg.max_position_embeddings, h]),
        ("bert.embeddings.token_type_embeddings.weight".to_string(), vec![cfg.type_vocab_size, h]),
        ("bert.embeddings.LayerNorm.weight".to_string(), vec![h]),
        ("bert.embeddings.LayerNorm.bias".to_string(), vec![h]),
    ];
    for l in 0..cfg.num_hidden_layers {
        let p = format!("bert.encoder.layer.{l}");
        let dense = |out: &mut Vec<(String, Vec<usize>)>, name: String, o: usize, i: usize| {
            out.push((format!("{name}.weight"), vec![o, i]));
            out.push((format!("{name}.bias"), vec![o]));
        };
        dense(&mut out, format!("{p}.attention.self.query"), h, h);
        dense(&mut out, format!("{p}.attention.self.key"), h, h);
        dense(&mut out, format!("{p}.attention.self.value"), h, h);
        dense(&mut out, format!("{p}.attention.output.dense"), h, h);
        out.push((format!("{p}.attention.output.LayerNorm.weight"), vec![h]));
        out.push((format!("{p}.attention.output.LayerNorm.bias"), vec![h]));
        dense(&mut out, format!("{p}.intermediate.dense"), cfg.intermediate_size, h);
        dense(&mut out, format!("{p}.output.dense"), h, cfg.intermediate_size);
        out.push((format!("{p}.output.LayerNorm.weight"), vec![h]));
        out.push((format!("{p}.output.LayerNorm.bias"), vec![h]));
    }
    out.push(("bert.pooler.dense.weight".to_string(), vec![h, h]));
    out.push(("bert.pooler.dense.bias".to_string(), vec![h]));
    out.push((CLASSIFIER_WEIGHT.to_string(), vec![cfg.num_labels, h]));
    out.push((CLASSIFIER_BIAS.to_string(), vec![cfg.num_labels]));
    out
}

/// BERT-style initialization: N(0, 0.02) matrices, zero biases, unit norms.
pub fn init_tensor(name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f32> {
    if name.ends_with(".bias") {
        ArrayD::zeros(IxDyn(shape))
    } else if name.contains("LayerNorm") {
        ArrayD::ones(IxDyn(shape))
    } else {
        let normal = Normal::new(0.0f32, INIT_STD).unwrap();
        ArrayD::from_shape_simple_fn(IxDyn(shape), || normal.sample(rng))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    cfg: EncoderConfig,
    params: ParamSet,
    ids: Ids,
}

struct LayerCache {
    input: Array2<f32>,
    q: Array2<f32>,
    k: Array2<f32>,
    v: Array2<f32>,
    probs: Vec<Array2<f32>>,
    context: Array2<f32>,
    attn_norm: LayerNormCache,
    attn_out: Array2<f32>,
    pre_act: Array2<f32>,
    act: Array2<f32>,
    out_norm: LayerNormCache,
}

pub struct ForwardCache {
    ids: Vec<u32>,
    emb_norm: LayerNormCache,
    layers: Vec<LayerCache>,
    cls: Array1<f32>,
    pooled: Array1<f32>,
}

impl Encoder {
    /// Randomly initialized encoder.
    pub fn random(cfg: EncoderConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_tensors(cfg, |name, shape| Ok(init_tensor(name, shape, &mut rng)))
    }

    /// Build from a tensor source queried once per parameter in layout order.
    pub fn from_tensors<F>(cfg: EncoderConfig, mut source: F) -> Result<Self>
    where
        F: FnMut(&str, &[usize]) -> Result<ArrayD<f32>>,
    {
        cfg.validate()?;
        let mut params = ParamSet::new();
        for (name, shape) in parameter_layout(&cfg) {
            let value = source(&name, &shape)?;
            if value.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: expected {shape:?}, got {:?}",
                    value.shape()
                )));
            }
            params.push(name, value);
        }
        let ids = Self::resolve_ids(&cfg, &params);
        Ok(Encoder { cfg, params, ids })
    }

    fn resolve_ids(cfg: &EncoderConfig, params: &ParamSet) -> Ids {
        let id = |name: String| params.index[&name];
        let dense = |name: String| Dense { w: id(format!("{name}.weight")), b: id(format!("{name}.bias")) };
        let norm = |name: String| Norm { gamma: id(format!("{name}.weight")), beta: id(format!("{name}.bias")) };
        Ids {
            word: id("bert.embeddings.word_embeddings.weight".into()),
            position: id("bert.embeddings.position_embeddings.weight".into()),
            token_type: id("bert.embeddings.token_type_embeddings.weight".into()),
            emb_norm: norm("bert.embeddings.LayerNorm".into()),
            layers: (0..cfg.num_hidden_layers)
                .map(|l| {
                    let p = format!("bert.encoder.layer.{l}");
                    LayerIds {
                        query: dense(format!("{p}.attention.self.query")),
                        key: dense(format!("{p}.attention.self.key")),
                        value: dense(format!("{p}.attention.self.value")),
                        attn_out: dense(format!("{p}.attention.output.dense")),
                        attn_norm: norm(format!("{p}.attention.output.LayerNorm")),
                        intermediate: dense(format!("{p}.intermediate.dense")),
                        output: dense(format!("{p}.output.dense")),
                        out_norm: norm(format!("{p}.output.LayerNorm")),
                    }
                })
                .collect(),
            pooler: dense("bert.pooler.dense".into()),
            classifier: dense("classifier".into()),
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn eps(&self) -> f32 {
        self.cfg.layer_norm_eps as f32
    }

    /// Class logits for one unpadded token sequence.
    pub fn logits(&self, ids: &[u32]) -> Result<Vec<f32>> {
        self.forward(ids).map(|(logits, _)| logits)
    }

    pub fn forward(&self, ids: &[u32]) -> Result<(Vec<f32>, ForwardCache)> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        if n > self.cfg.max_position_embeddings {
            return Err(Error::ShapeMismatch(format!(
                "sequence of {n} tokens exceeds {} positions",
                self.cfg.max_position_embeddings
            )));
        }
        let p = &self.params;
        let word = p.m(self.ids.word);
        let position = p.m(self.ids.position);
        let token_type = p.m(self.ids.token_type);
        let h = self.cfg.hidden_size;

        let mut emb = Array2::<f32>::zeros((n, h));
        for (t, &tok) in ids.iter().enumerate() {
            let tok = tok as usize;
            if tok >= self.cfg.vocab_size {
                return Err(Error::ShapeMismatch(format!(
                    "token id {tok} outside vocabulary of {}",
                    self.cfg.vocab_size
                )));
            }
            let mut row = emb.row_mut(t);
            row += &word.row(tok);
            row += &position.row(t);
            row += &token_type.row(0);
        }
        let (mut hidden, emb_norm) =
            ops::layer_norm(&emb, p.v(self.ids.emb_norm.gamma), p.v(self.ids.emb_norm.beta), self.eps());

        let mut layers = Vec::with_capacity(self.ids.layers.len());
        for layer in &self.ids.layers {
            let (out, cache) = self.layer_forward(layer, hidden);
            layers.push(cache);
            hidden = out;
        }

        let cls = hidden.row(0).to_owned();
        let pooled = (p.m(self.ids.pooler.w).dot(&cls) + p.v(self.ids.pooler.b)).mapv(f32::tanh);
        let logits = p.m(self.ids.classifier.w).dot(&pooled) + p.v(self.ids.classifier.b);
        Ok((logits.to_vec(), ForwardCache { ids: ids.to_vec(), emb_norm, layers, cls, pooled }))
    }

    fn layer_forward(&self, ids: &LayerIds, x: Array2<f32>) -> (Array2<f32>, LayerCache) {
        let p = &self.params;
        let heads = self.cfg.num_attention_heads;
        let d = self.cfg.head_dim();
        let scale = 1.0 / (d as f32).sqrt();

        let q = ops::linear(&x, p.m(ids.query.w), p.v(ids.query.b));
        let k = ops::linear(&x, p.m(ids.key.w), p.v(ids.key.b));
        let v = ops::linear(&x, p.m(ids.value.w), p.v(ids.value.b));
        let mut context = Array2::<f32>::zeros(x.raw_dim());
        let mut probs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let cols = s![.., hd * d..(hd + 1) * d];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            ops::softmax_rows(&mut scores);
            context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let attn_proj = ops::linear(&context, p.m(ids.attn_out.w), p.v(ids.attn_out.b));
        let (attn_out, attn_norm) = ops::layer_norm(
            &(attn_proj + &x),
            p.v(ids.attn_norm.gamma),
            p.v(ids.attn_norm.beta),
            self.eps(),
        );
        let pre_act = ops::linear(&attn_out, p.m(ids.intermediate.w), p.v(ids.intermediate.b));
        let act = pre_act.mapv(ops::gelu);
        let ffn = ops::linear(&act, p.m(ids.output.w), p.v(ids.output.b));
        let (out, out_norm) = ops::layer_norm(
            &(ffn + &attn_out),
            p.v(ids.out_norm.gamma),
            p.v(ids.out_norm.beta),
            self.eps(),
        );
        (
            out,
            LayerCache { input: x, q, k, v, probs, context, attn_norm, attn_out, pre_act, act, out_norm },
        )
    }

    /// Accumulate parameter gradients for one sequence given dLoss/dLogits.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f32], grads: &mut [ArrayD<f32>]) {
        let p = &self.params;
        let n = cache.ids.len();
        let h = self.cfg.hidden_size;
        let dlogits = Array1::from(dlogits.to_vec());

        // classifier
        let cw = self.ids.classifier;
        gm(grads, cw.w).scaled_add(1.0, &outer(&dlogits, &cache.pooled));
        gv(grads, cw.b).scaled_add(1.0, &dlogits);
        let dpooled = p.m(cw.w).t().dot(&dlogits);

        // pooler
        let pw = self.ids.pooler;
        let dz = &dpooled * &cache.pooled.mapv(|t| 1.0 - t * t);
        gm(grads, pw.w).scaled_add(1.0, &outer(&dz, &cache.cls));
        gv(grads, pw.b).scaled_add(1.0, &dz);
        let dcls = p.m(pw.w).t().dot(&dz);

        let mut dh = Array2::<f32>::zeros((n, h));
        dh.row_mut(0).assign(&dcls);

        for (ids, lc) in self.ids.layers.iter().zip(&cache.layers).rev() {
            dh = self.layer_backward(ids, lc, dh, grads);
        }

        let demb = norm_backward(p, grads, self.ids.emb_norm, &cache.emb_norm, &dh);
        {
            let mut gw = gm(grads, self.ids.word);
            for (t, &tok) in cache.ids.iter().enumerate() {
                let mut row = gw.row_mut(tok as usize);
                row += &demb.row(t);
            }
        }
        {
            let mut gp = gm(grads, self.ids.position);
            gp.slice_mut(s![..n, ..]).scaled_add(1.0, &demb);
        }
        {
            let mut gt = gm(grads, self.ids.token_type);
            let mut row = gt.row_mut(0);
            row += &demb.sum_axis(Axis(0));
        }
    }

    fn layer_backward(
        &self,
        ids: &LayerIds,
        lc: &LayerCache,
        dout: Array2<f32>,
        grads: &mut [ArrayD<f32>],
    ) -> Array2<f32> {
        let p = &self.params;
        let heads = self.cfg.num_attention_heads;
        let d = self.cfg.head_dim();
        let scale = 1.0 / (d as f32).sqrt();

        let dsum2 = norm_backward(p, grads, ids.out_norm, &lc.out_norm, &dout);
        let dact = dense_backward(p, grads, ids.output, &lc.act, &dsum2);
        let dpre = dact * &lc.pre_act.mapv(ops::gelu_grad);
        let mut dattn_out = dense_backward(p, grads, ids.intermediate, &lc.attn_out, &dpre);
        dattn_out += &dsum2;

        let dsum1 = norm_backward(p, grads, ids.attn_norm, &lc.attn_norm, &dattn_out);
        let dcontext = dense_backward(p, grads, ids.attn_out, &lc.context, &dsum1);
        let mut dx = dsum1;

        let mut dq = Array2::<f32>::zeros(lc.q.raw_dim());
        let mut dk = Array2::<f32>::zeros(lc.k.raw_dim());
        let mut dv = Array2::<f32>::zeros(lc.v.raw_dim());
        for hd in 0..heads {
            let cols = s![.., hd * d..(hd + 1) * d];
            let probs = &lc.probs[hd];
            let dctx = dcontext.slice(cols);
            dv.slice_mut(cols).assign(&probs.t().dot(&dctx));
            let dprobs = dctx.dot(&lc.v.slice(cols).t());
            let dscores = ops::softmax_rows_backward(probs, &dprobs) * scale;
            dq.slice_mut(cols).assign(&dscores.dot(&lc.k.slice(cols)));
            dk.slice_mut(cols).assign(&dscores.t().dot(&lc.q.slice(cols)));
        }
        dx += &dense_backward(p, grads, ids.query, &lc.input, &dq);
        dx += &dense_backward(p, grads, ids.key, &lc.input, &dk);
        dx += &dense_backward(p, grads, ids.value, &lc.input, &dv);
        dx
    }

    /// Replace the classification head with a freshly initialized one.
    pub fn reinitialize_head(&mut self, num_labels: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = self.cfg.hidden_size;
        self.cfg.num_labels = num_labels;
        self.params.values[self.ids.classifier.w] = init_tensor(CLASSIFIER_WEIGHT, &[num_labels, h], &mut rng);
        self.params.values[self.ids.classifier.b] = init_tensor(CLASSIFIER_BIAS, &[num_labels], &mut rng);
    }
}

fn outer(a: &Array1<f32>, b: &Array1<f32>) -> Array2<f32> {
    a.view().insert_axis(Axis(1)).dot(&b.view().insert_axis(Axis(0)))
}

fn dense_backward(
    p: &ParamSet,
    grads: &mut [ArrayD<f32>],
    dense: Dense,
    x: &Array2<f32>,
    dy: &Array2<f32>,
) -> Array2<f32> {
    let (gw, gb) = pair_mut(grads, dense.w, dense.b);
    ops::linear_backward(
        x,
        p.m(dense.w),
        dy,
        gw.view_mut().into_dimensionality::<Ix2>().unwrap(),
        gb.view_mut().into_dimensionality::<Ix1>().unwrap(),
    )
}

fn norm_backward(
    p: &ParamSet,
    grads: &mut [ArrayD<f32>],
    norm: Norm,
    cache: &LayerNormCache,
    dy: &Array2<f32>,
) -> Array2<f32> {
    let (gg, gb) = pair_mut(grads, norm.gamma, norm.beta);
    ops::layer_norm_backward(
        cache,
        p.v(norm.gamma),
        dy,
        gg.view_mut().into_dimensionality::<Ix1>().unwrap(),
        gb.view_mut().into_dimensionality::<Ix1>().unwrap(),
    )
}

fn pair_mut(grads: &mut [ArrayD<f32>], a: usize, b: usize) -> (&mut ArrayD<f32>, &mut ArrayD<f32>) {
    assert!(a < b);
    let (lo, hi) = grads.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}
