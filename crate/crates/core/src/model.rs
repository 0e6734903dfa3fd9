//! Parameter layouts and the two architectures: a fast embedding MLP and a
//! pre-norm decoder transformer. Both tie the output classifier to the token
//! embeddings of the answer classes.

use std::rc::Rc;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::TokenBatch;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    WeightMatrix,
    Bias,
    Embedding,
    NormGain,
}

impl ParamKind {
    /// Row-structured parameters normalize per row; the rest per scalar.
    pub fn has_filters(self) -> bool {
        matches!(self, ParamKind::WeightMatrix | ParamKind::Embedding)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Absolute offsets `[start₀, start₁, …, end]` of the rows of a matrix.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub filter_boundaries: Vec<usize>,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub entries: Vec<ParamSpec>,
}

impl Layout {
    fn push(&mut self, name: impl Into<String>, kind: ParamKind, shape: Vec<usize>) {
        let offset = self.total();
        let len: usize = shape.iter().product();
        let filter_boundaries = if kind.has_filters() {
            let cols = shape[1];
            (0..=shape[0]).map(|r| offset + r * cols).collect()
        } else {
            Vec::new()
        };
        debug_assert!(len > 0);
        self.entries.push(ParamSpec {
            name: name.into(),
            kind,
            shape,
            offset,
            filter_boundaries,
        });
    }

    pub fn total(&self) -> usize {
        self.entries.last().map(|e| e.offset + e.len()).unwrap_or(0)
    }

    pub fn get(&self, name: &str) -> Option<&ParamSpec> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Parameters that are neither token nor position embeddings.
    pub fn non_embedding_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind != ParamKind::Embedding)
            .map(ParamSpec::len)
            .sum()
    }

    /// Checks contiguity and filter bookkeeping.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for e in &self.entries {
            if e.offset != next {
                return Err(Error::Shape(format!(
                    "layout entry {} at offset {} (expected {next})",
                    e.name, e.offset
                )));
            }
            if e.kind.has_filters() {
                let expect: Vec<usize> = (0..=e.shape[0]).map(|r| e.offset + r * e.shape[1]).collect();
                if e.shape.len() != 2 || e.filter_boundaries != expect {
                    return Err(Error::Shape(format!("bad filter boundaries for {}", e.name)));
                }
            }
            next += e.len();
        }
        Ok(())
    }

    /// One flag per coordinate: true where weight decay applies.
    pub fn decay_mask(&self, decay_embeddings: bool) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.total());
        for e in &self.entries {
            let on = decay_embeddings || e.kind != ParamKind::Embedding;
            mask.extend(std::iter::repeat(on).take(e.len()));
        }
        mask
    }
}

/// Flat parameter state plus the layout that gives it structure.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Arc<Layout>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Arc<Layout>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::Shape(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.total()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|e| &self.values[e.range()])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Transformer,
    Mlp,
}

fn default_hidden() -> usize {
    256
}

fn default_context() -> usize {
    TokenBatch::CONTEXT
}

fn default_true() -> bool {
    true
}

fn default_one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Transformer blocks (ignored by the MLP).
    pub depth: usize,
    /// Embedding width.
    pub width: usize,
    pub heads: usize,
    /// Hidden width of the MLP.
    #[serde(default = "default_hidden")]
    pub mlp_hidden: usize,
    /// Filled from the dataset when zero.
    #[serde(default)]
    pub vocab_size: usize,
    /// Number of answer classes `q`; filled from the dataset when zero.
    #[serde(default)]
    pub n_classes: usize,
    #[serde(default = "default_context")]
    pub context_len: usize,
    #[serde(default = "default_true")]
    pub tied_embeddings: bool,
    /// Multiplier on the embedding initialization range.
    #[serde(default = "default_one")]
    pub embed_init_scale: f64,
}

impl ModelConfig {
    /// Two blocks, width 128, four heads.
    pub fn reference_transformer(vocab_size: usize, n_classes: usize) -> Self {
        Self {
            arch: Arch::Transformer,
            depth: 2,
            width: 128,
            heads: 4,
            mlp_hidden: default_hidden(),
            vocab_size,
            n_classes,
            context_len: TokenBatch::CONTEXT,
            tied_embeddings: true,
            embed_init_scale: 1.0,
        }
    }

    pub fn mlp(width: usize, hidden: usize, vocab_size: usize, n_classes: usize) -> Self {
        Self {
            arch: Arch::Mlp,
            depth: 1,
            width,
            heads: 1,
            mlp_hidden: hidden,
            vocab_size,
            n_classes,
            context_len: TokenBatch::CONTEXT,
            tied_embeddings: true,
            embed_init_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::config("model.width", "must be positive"));
        }
        if self.vocab_size < 2 {
            return Err(Error::config("model.vocab_size", "must be at least 2"));
        }
        if self.n_classes < 2 || self.n_classes > self.vocab_size {
            return Err(Error::config(
                "model.n_classes",
                format!("must lie in [2, vocab_size], got {}", self.n_classes),
            ));
        }
        if !self.tied_embeddings {
            return Err(Error::config(
                "model.tied_embeddings",
                "only tied embeddings are supported",
            ));
        }
        if self.context_len != TokenBatch::CONTEXT {
            return Err(Error::config("model.context_len", "must be 4"));
        }
        if !(self.embed_init_scale > 0.0) {
            return Err(Error::config("model.embed_init_scale", "must be positive"));
        }
        match self.arch {
            Arch::Transformer => {
                if self.depth == 0 {
                    return Err(Error::config("model.depth", "must be positive"));
                }
                if self.heads == 0 || self.width % self.heads != 0 {
                    return Err(Error::config(
                        "model.heads",
                        format!("width {} not divisible by heads {}", self.width, self.heads),
                    ));
                }
            }
            Arch::Mlp => {
                if self.mlp_hidden == 0 {
                    return Err(Error::config("model.mlp_hidden", "must be positive"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub accuracy: f64,
    pub logits: Option<Tensor>,
}

const LN_EPS: f64 = 1e-5;
const MASKED: f64 = -1e9;

/// A model is a config plus its derived layout; parameters live outside.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    layout: Arc<Layout>,
}

struct Built {
    logits: Var,
    leaves: Vec<Var>,
    /// Separate output-embedding leaf when the tie is cut for inspection.
    untied_output: Option<Var>,
    activations: Vec<(String, Var)>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut layout = Layout::default();
        let d = config.width;
        let v = config.vocab_size;
        match config.arch {
            Arch::Mlp => {
                let h = config.mlp_hidden;
                layout.push("embed", ParamKind::Embedding, vec![v, d]);
                layout.push("hidden.weight", ParamKind::WeightMatrix, vec![h, 2 * d]);
                layout.push("hidden.bias", ParamKind::Bias, vec![h]);
                layout.push("out.weight", ParamKind::WeightMatrix, vec![d, h]);
                layout.push("out.bias", ParamKind::Bias, vec![d]);
            }
            Arch::Transformer => {
                layout.push("embed", ParamKind::Embedding, vec![v, d]);
                layout.push("pos", ParamKind::Embedding, vec![config.context_len, d]);
                for b in 0..config.depth {
                    layout.push(format!("block{b}.ln1.gain"), ParamKind::NormGain, vec![d]);
                    layout.push(format!("block{b}.ln1.bias"), ParamKind::Bias, vec![d]);
                    for m in ["q", "k", "v", "o"] {
                        layout.push(format!("block{b}.attn.{m}.weight"), ParamKind::WeightMatrix, vec![d, d]);
                        layout.push(format!("block{b}.attn.{m}.bias"), ParamKind::Bias, vec![d]);
                    }
                    layout.push(format!("block{b}.ln2.gain"), ParamKind::NormGain, vec![d]);
                    layout.push(format!("block{b}.ln2.bias"), ParamKind::Bias, vec![d]);
                    layout.push(format!("block{b}.ff1.weight"), ParamKind::WeightMatrix, vec![4 * d, d]);
                    layout.push(format!("block{b}.ff1.bias"), ParamKind::Bias, vec![4 * d]);
                    layout.push(format!("block{b}.ff2.weight"), ParamKind::WeightMatrix, vec![d, 4 * d]);
                    layout.push(format!("block{b}.ff2.bias"), ParamKind::Bias, vec![d]);
                }
                layout.push("lnf.gain", ParamKind::NormGain, vec![d]);
                layout.push("lnf.bias", ParamKind::Bias, vec![d]);
            }
        }
        Ok(Self {
            config,
            layout: Arc::new(layout),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.layout.total()
    }

    /// Uniform fan-in initialization; biases zero, norm gains one.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(self.layout.total());
        for e in &self.layout.entries {
            match e.kind {
                ParamKind::Bias => values.extend(std::iter::repeat(0.0).take(e.len())),
                ParamKind::NormGain => values.extend(std::iter::repeat(1.0).take(e.len())),
                ParamKind::WeightMatrix => {
                    let bound = 1.0 / (e.shape[1] as f64).sqrt();
                    values.extend((0..e.len()).map(|_| rng.gen_range(-bound..bound)));
                }
                ParamKind::Embedding => {
                    let bound = self.config.embed_init_scale * (3.0 / e.shape[1] as f64).sqrt();
                    values.extend((0..e.len()).map(|_| rng.gen_range(-bound..bound)));
                }
            }
        }
        ParamVector {
            values,
            layout: self.layout.clone(),
        }
    }

    fn check_batch(&self, params: &[f64], batch: &TokenBatch) -> Result<()> {
        if params.len() != self.layout.total() {
            return Err(Error::Shape(format!(
                "{} parameters for a layout of {}",
                params.len(),
                self.layout.total()
            )));
        }
        if batch.tokens.len() != batch.labels.len() * TokenBatch::CONTEXT {
            return Err(Error::Shape("token matrix is not n x 4".into()));
        }
        if let Some(&id) = batch.tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::TokenOutOfVocab {
                id,
                vocab: self.config.vocab_size,
            });
        }
        if let Some(&label) = batch.labels.iter().find(|&&l| l >= self.config.n_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.config.n_classes,
            });
        }
        Ok(())
    }

    fn build(&self, g: &mut Graph, params: &[f64], tokens: &[usize], untie: bool) -> Built {
        let leaves: Vec<Var> = self
            .layout
            .entries
            .iter()
            .map(|e| g.leaf(Tensor::new(e.shape.clone(), params[e.range()].to_vec())))
            .collect();
        let by_name = |name: &str| -> Var {
            let i = self
                .layout
                .entries
                .iter()
                .position(|e| e.name == name)
                .expect("layout entry");
            leaves[i]
        };
        let n = tokens.len() / TokenBatch::CONTEXT;
        let d = self.config.width;
        let q = self.config.n_classes;
        let embed = by_name("embed");
        let mut activations = Vec::new();

        let out_embed = if untie {
            let e = &self.layout.entries[0];
            Some(g.leaf(Tensor::new(e.shape.clone(), params[e.range()].to_vec())))
        } else {
            None
        };
        let class_src = out_embed.unwrap_or(embed);
        let class_idx: Rc<[usize]> = (0..q).collect::<Vec<_>>().into();
        let classes = g.gather_rows(class_src, class_idx);

        let readout = match self.config.arch {
            Arch::Mlp => {
                let idx: Vec<usize> = tokens
                    .chunks(TokenBatch::CONTEXT)
                    .flat_map(|r| [r[0], r[2]])
                    .collect();
                let x = g.gather_rows(embed, idx.into());
                let x = g.reshape(x, &[n, 2 * d]);
                activations.push(("embed".to_string(), x));
                let h = g.matmul(x, by_name("hidden.weight"), false, true);
                let h = g.add_row(h, by_name("hidden.bias"));
                let h = g.relu(h);
                activations.push(("hidden".to_string(), h));
                let o = g.matmul(h, by_name("out.weight"), false, true);
                let o = g.add_row(o, by_name("out.bias"));
                activations.push(("output".to_string(), o));
                o
            }
            Arch::Transformer => {
                let t = TokenBatch::CONTEXT;
                let heads = self.config.heads;
                let dh = d / heads;
                let tok = g.gather_rows(embed, tokens.to_vec().into());
                let pos_idx: Vec<usize> = (0..n).flat_map(|_| 0..t).collect();
                let pos = g.gather_rows(by_name("pos"), pos_idx.into());
                let mut x = g.add(tok, pos);
                let last: Rc<[usize]> = (0..n).map(|i| i * t + t - 1).collect::<Vec<_>>().into();
                let x_last = g.gather_rows(x, last.clone());
                activations.push(("embed".to_string(), x_last));

                let mut mask = Vec::with_capacity(n * heads * t * t);
                for _ in 0..n * heads {
                    for i in 0..t {
                        for j in 0..t {
                            mask.push(if j <= i { 0.0 } else { MASKED });
                        }
                    }
                }
                let mask = g.constant(Tensor::new(vec![n * heads, t, t], mask));
                let split_heads = |g: &mut Graph, y: Var| {
                    let y = g.reshape(y, &[n, t, heads, dh]);
                    let y = g.permute(y, &[0, 2, 1, 3]);
                    g.reshape(y, &[n * heads, t, dh])
                };
                let linear = |g: &mut Graph, y: Var, w: &str| {
                    let out = g.matmul(y, by_name(&format!("{w}.weight")), false, true);
                    g.add_row(out, by_name(&format!("{w}.bias")))
                };
                for b in 0..self.config.depth {
                    let p = format!("block{b}");
                    let h = g.layer_norm(
                        x,
                        by_name(&format!("{p}.ln1.gain")),
                        by_name(&format!("{p}.ln1.bias")),
                        LN_EPS,
                    );
                    let qv = linear(g, h, &format!("{p}.attn.q"));
                    let kv = linear(g, h, &format!("{p}.attn.k"));
                    let vv = linear(g, h, &format!("{p}.attn.v"));
                    let qh = split_heads(g, qv);
                    let kh = split_heads(g, kv);
                    let vh = split_heads(g, vv);
                    let scores = g.matmul(qh, kh, false, true);
                    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
                    let scores = g.add(scores, mask);
                    let att = g.softmax_last(scores);
                    let ctx = g.matmul(att, vh, false, false);
                    let ctx = g.reshape(ctx, &[n, heads, t, dh]);
                    let ctx = g.permute(ctx, &[0, 2, 1, 3]);
                    let ctx = g.reshape(ctx, &[n * t, d]);
                    let o = linear(g, ctx, &format!("{p}.attn.o"));
                    x = g.add(x, o);
                    let h2 = g.layer_norm(
                        x,
                        by_name(&format!("{p}.ln2.gain")),
                        by_name(&format!("{p}.ln2.bias")),
                        LN_EPS,
                    );
                    let f = linear(g, h2, &format!("{p}.ff1"));
                    let f = g.gelu(f);
                    let f = linear(g, f, &format!("{p}.ff2"));
                    x = g.add(x, f);
                    let x_last = g.gather_rows(x, last.clone());
                    activations.push((p, x_last));
                }
                let xf = g.layer_norm(x, by_name("lnf.gain"), by_name("lnf.bias"), LN_EPS);
                let xf = g.gather_rows(xf, last);
                activations.push(("final".to_string(), xf));
                xf
            }
        };
        let logits = g.matmul(readout, classes, false, true);
        activations.push(("logits".to_string(), logits));
        Built {
            logits,
            leaves,
            untied_output: out_embed,
            activations,
        }
    }

    /// Mean cross-entropy over the answer classes and argmax accuracy.
    pub fn forward_loss(&self, params: &[f64], batch: &TokenBatch) -> Result<LossReport> {
        self.check_batch(params, batch)?;
        if batch.is_empty() {
            return Err(Error::Insufficient("empty batch".into()));
        }
        let mut g = Graph::new();
        let built = self.build(&mut g, params, &batch.tokens, false);
        let logits = g.value(built.logits).clone();
        let (loss, accuracy) = cross_entropy(&logits, &batch.labels);
        Ok(LossReport {
            loss,
            accuracy,
            logits: Some(logits),
        })
    }

    /// Loss report together with the exact gradient of the mean loss.
    pub fn loss_and_grad(&self, params: &[f64], batch: &TokenBatch) -> Result<(LossReport, Vec<f64>)> {
        self.check_batch(params, batch)?;
        if batch.is_empty() {
            return Err(Error::Insufficient("empty batch".into()));
        }
        let mut g = Graph::new();
        let built = self.build(&mut g, params, &batch.tokens, false);
        let loss = cross_entropy_node(&mut g, built.logits, &batch.labels);
        let grads = g.grad(loss, &built.leaves);
        let logits = g.value(built.logits);
        let accuracy = accuracy(logits, &batch.labels);
        let report = LossReport {
            loss: g.value(loss).data()[0],
            accuracy,
            logits: None,
        };
        Ok((report, flatten(&g, &grads, self.layout.total())))
    }

    pub fn backward(&self, params: &[f64], batch: &TokenBatch) -> Result<Vec<f64>> {
        self.loss_and_grad(params, batch).map(|(_, g)| g)
    }

    /// Hessian-vector product by differentiating `∇L · v` once more.
    pub fn hvp(&self, params: &[f64], batch: &TokenBatch, v: &[f64]) -> Result<Vec<f64>> {
        self.check_batch(params, batch)?;
        if v.len() != params.len() {
            return Err(Error::Shape(format!(
                "hvp vector of length {} for {} parameters",
                v.len(),
                params.len()
            )));
        }
        if batch.is_empty() {
            return Err(Error::Insufficient("empty batch".into()));
        }
        let mut g = Graph::new();
        let built = self.build(&mut g, params, &batch.tokens, false);
        let loss = cross_entropy_node(&mut g, built.logits, &batch.labels);
        let grads = g.grad(loss, &built.leaves);
        let mut total: Option<Var> = None;
        for (e, &gr) in self.layout.entries.iter().zip(&grads) {
            let vc = g.constant(Tensor::new(e.shape.clone(), v[e.range()].to_vec()));
            let prod = g.mul(gr, vc);
            let s = g.sum_all(prod);
            total = Some(match total {
                None => s,
                Some(t) => g.add(t, s),
            });
        }
        let total = total.expect("non-empty layout");
        let hv = g.grad(total, &built.leaves);
        Ok(flatten(&g, &hv, self.layout.total()))
    }

    /// Named intermediate activations, one row per sample.
    ///
    /// Transformer activations are taken at the final position.
    pub fn activations(&self, params: &[f64], batch: &TokenBatch) -> Result<Vec<(String, Tensor)>> {
        self.check_batch(params, batch)?;
        let mut g = Graph::new();
        let built = self.build(&mut g, params, &batch.tokens, false);
        Ok(built
            .activations
            .into_iter()
            .map(|(name, v)| {
                let t = g.value(v);
                let rows = t.shape()[0];
                let t = t.clone().reshaped(vec![rows, t.len() / rows.max(1)]);
                (name, t)
            })
            .collect())
    }

    pub fn layer_names(&self) -> Vec<String> {
        match self.config.arch {
            Arch::Mlp => vec!["embed", "hidden", "output", "logits"]
                .into_iter()
                .map(String::from)
                .collect(),
            Arch::Transformer => {
                let mut v = vec!["embed".to_string()];
                v.extend((0..self.config.depth).map(|b| format!("block{b}")));
                v.push("final".into());
                v.push("logits".into());
                v
            }
        }
    }

    /// Embedding gradient split into the input-lookup pathway and the tied
    /// output-classifier pathway.
    pub fn embedding_pathway_grads(&self, params: &[f64], batch: &TokenBatch) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_batch(params, batch)?;
        let mut g = Graph::new();
        let built = self.build(&mut g, params, &batch.tokens, true);
        let loss = cross_entropy_node(&mut g, built.logits, &batch.labels);
        let out = built.untied_output.expect("untied build");
        let grads = g.grad(loss, &[built.leaves[0], out]);
        Ok((g.value(grads[0]).data().to_vec(), g.value(grads[1]).data().to_vec()))
    }
}

fn flatten(g: &Graph, vars: &[Var], total: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(total);
    for &v in vars {
        out.extend_from_slice(g.value(v).data());
    }
    debug_assert_eq!(out.len(), total);
    out
}

fn cross_entropy_node(g: &mut Graph, logits: Var, labels: &[usize]) -> Var {
    let shape = g.shape(logits).to_vec();
    let (n, q) = (shape[0], shape[1]);
    let mut onehot = vec![0.0; n * q];
    for (i, &y) in labels.iter().enumerate() {
        onehot[i * q + y] = 1.0;
    }
    let onehot = g.constant(Tensor::new(vec![n, q], onehot));
    let lse = g.logsumexp_last(logits);
    let picked = g.mul(logits, onehot);
    let picked = g.sum_last(picked);
    let nll = g.sub(lse, picked);
    let total = g.sum_all(nll);
    g.scale(total, 1.0 / n as f64)
}

fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits
        .row_argmax()
        .iter()
        .zip(labels)
        .filter(|(a, b)| a == b)
        .count();
    hits as f64 / labels.len() as f64
}

/// Mean cross-entropy (nats) and accuracy of an `n × q` logit matrix.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> (f64, f64) {
    let q = logits.last_dim();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits.data()[i * q..(i + 1) * q];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln() + m;
        total += lse - row[y];
    }
    let n = labels.len().max(1) as f64;
    (total / n, accuracy(logits, labels))
}
