//! The dual-head predictor: a masked Transformer encoder over the dynamic
//! window, flag-weighted pooling fused with the static one-hots, a hidden
//! layer, then a sigmoid occurrence head and a linear (time, distance) gap
//! head.

use std::path::Path;

use grad::{Adam, AdamConfig, DenseArray, ParamId, ParamStore, Tape, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VfgError};
use crate::nn::{adopt_params, glorot, Linear};
use crate::normalize::{fit_global, Extrema};
use crate::schema::{SampleWindow, WindowSchema};

const CHECKPOINT_KIND: &str = "predictor";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub feed_forward: usize,
    /// Width of the hidden layer after fusion with the static features.
    pub hidden: usize,
    pub dropout: f64,
    /// Weight of the regression loss.
    pub lambda: f64,
    /// Classification threshold (closed: `p ≥ τ` is positive).
    pub threshold: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            layers: 2,
            feed_forward: 128,
            hidden: 64,
            dropout: 0.1,
            lambda: 1.0,
            threshold: 0.5,
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VfgError::config(format!("predictor.{m}")));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if self.feed_forward == 0 || self.hidden == 0 || self.batch_size == 0 {
            return bad("feed_forward, hidden and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0, 1)", self.threshold));
        }
        if !(self.lambda >= 0.0 && self.learning_rate > 0.0) {
            return bad("lambda must be >= 0 and learning_rate positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorOutput {
    pub p_secondary: f64,
    pub time_gap_h: f64,
    pub dist_gap_mi: f64,
}

/// Per-target standardization of the gap labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl TargetScale {
    pub const IDENTITY: TargetScale = TargetScale { mean: [0.0; 2], std: [1.0; 2] };

    /// Mean and standard deviation over the samples that carry gap labels;
    /// identity when there are none, unit std when a target is constant.
    pub fn fit(samples: &[SampleWindow]) -> Self {
        let gaps: Vec<[f64; 2]> = samples.iter().filter_map(gap_targets).collect();
        if gaps.is_empty() {
            return Self::IDENTITY;
        }
        let n = gaps.len() as f64;
        let mut out = Self::IDENTITY;
        for k in 0..2 {
            let mean = gaps.iter().map(|g| g[k]).sum::<f64>() / n;
            let var = gaps.iter().map(|g| (g[k] - mean).powi(2)).sum::<f64>() / n;
            out.mean[k] = mean;
            out.std[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        out
    }
}

fn gap_targets(s: &SampleWindow) -> Option<[f64; 2]> {
    match (s.is_secondary, s.time_gap_h, s.dist_gap_mi) {
        (true, Some(t), Some(d)) => Some([t, d]),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    wq: Linear,
    wk: ParamId,
    wv: Linear,
    wo: Linear,
    ln1: (ParamId, ParamId),
    ff1: Linear,
    ff2: Linear,
    ln2: (ParamId, ParamId),
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    config: PredictorConfig,
    schema: WindowSchema,
    input_norm: Vec<Extrema>,
    target_scale: TargetScale,
}

#[derive(Debug, Clone)]
pub struct PredictorModel {
    pub config: PredictorConfig,
    pub schema: WindowSchema,
    /// Global per-variable extrema fitted on the training set.
    pub input_norm: Vec<Extrema>,
    pub target_scale: TargetScale,
    pub store: ParamStore,
    embed: Linear,
    layers: Vec<EncoderLayer>,
    hidden: Linear,
    cls_head: Linear,
    reg_head: Linear,
}

/// Inputs for one batch, already normalized and masked.
struct BatchInputs {
    /// `(B·T) × V`.
    x: DenseArray,
    /// Flags per sample.
    flags: Vec<Vec<f64>>,
    /// `B × C`.
    one_hot: DenseArray,
    batch: usize,
}

/// Training-time options for one forward pass.
struct Dropout<'a, R: Rng> {
    rate: f64,
    rng: &'a mut R,
}

fn sinusoidal_encoding(t_max: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; t_max * d];
    for pos in 0..t_max {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            out[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

impl PredictorModel {
    /// A model with random encoder weights and zero-initialized output heads.
    pub fn new(config: PredictorConfig, schema: WindowSchema, input_norm: Vec<Extrema>, seed: u64) -> Result<Self> {
        config.validate()?;
        if input_norm.len() != schema.n_vars() {
            return Err(VfgError::data("input normalization does not match the schema's variables"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let embed = Linear::new(&mut store, "embed", schema.n_vars(), d, &mut rng);
        let ln = |store: &mut ParamStore, name: &str| {
            (
                store.add(format!("{name}.gain"), DenseArray::ones(&[1, d])),
                store.add(format!("{name}.bias"), DenseArray::zeros(&[1, d])),
            )
        };
        let layers = (0..config.layers)
            .map(|l| {
                let p = format!("enc{l}");
                EncoderLayer {
                    wq: Linear::new(&mut store, &format!("{p}.q"), d, d, &mut rng),
                    // Keys carry no bias: softmax is invariant to it.
                    wk: store.add(format!("{p}.k.w"), glorot(&mut rng, d, d)),
                    wv: Linear::new(&mut store, &format!("{p}.v"), d, d, &mut rng),
                    wo: Linear::new(&mut store, &format!("{p}.o"), d, d, &mut rng),
                    ln1: ln(&mut store, &format!("{p}.ln1")),
                    ff1: Linear::new(&mut store, &format!("{p}.ff1"), d, config.feed_forward, &mut rng),
                    ff2: Linear::new(&mut store, &format!("{p}.ff2"), config.feed_forward, d, &mut rng),
                    ln2: ln(&mut store, &format!("{p}.ln2")),
                }
            })
            .collect();
        let hidden = Linear::new(&mut store, "fuse", d + schema.one_hot_width(), config.hidden, &mut rng);
        let cls_head = Linear::zeroed(&mut store, "head.cls", config.hidden, 1);
        let reg_head = Linear::zeroed(&mut store, "head.reg", config.hidden, 2);
        Ok(Self {
            config,
            schema,
            input_norm,
            target_scale: TargetScale::IDENTITY,
            store,
            embed,
            layers,
            hidden,
            cls_head,
            reg_head,
        })
    }

    /// Every parameter, for optimizers and gradient checks.
    pub fn params(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    /// Re-draws the output heads at random (gradient checks need every
    /// path live).
    pub fn randomize_heads(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for head in [self.cls_head, self.reg_head] {
            self.store.set(head.w, glorot(&mut rng, head.fan_in, head.fan_out)).expect("same shape");
        }
    }

    fn inputs(&self, samples: &[&SampleWindow]) -> Result<BatchInputs> {
        let (v, t) = (self.schema.n_vars(), self.schema.t_max);
        let mut x = Vec::with_capacity(samples.len() * t * v);
        let mut flags = Vec::with_capacity(samples.len());
        let mut one_hot = Vec::with_capacity(samples.len() * self.schema.one_hot_width());
        for s in samples {
            if s.length == 0 || s.flags.iter().sum::<f64>() == 0.0 {
                return Err(VfgError::data(format!("sample {} has no active steps", s.id)));
            }
            if s.dynamic.len() != t || s.n_vars() != v || s.flags.len() != t {
                return Err(VfgError::data(format!("sample {} does not match the predictor schema", s.id)));
            }
            for (row, &f) in s.dynamic.iter().zip(&s.flags) {
                // Padded steps enter as exact zeros whatever they hold.
                x.extend(row.iter().zip(&self.input_norm).map(|(&val, e)| if f == 0.0 { 0.0 } else { e.scale(val) }));
            }
            flags.push(s.flags.clone());
            one_hot.extend(s.one_hot(&self.schema));
        }
        let b = samples.len();
        Ok(BatchInputs {
            x: DenseArray::new(vec![b * t, v], x)?,
            flags,
            one_hot: DenseArray::new(vec![b, self.schema.one_hot_width()], one_hot)?,
            batch: b,
        })
    }

    fn dropout<R: Rng>(tape: &mut Tape, x: Var, drop: &mut Option<Dropout<'_, R>>) -> grad::Result<Var> {
        let Some(d) = drop.as_mut().filter(|d| d.rate > 0.0) else { return Ok(x) };
        let keep = 1.0 / (1.0 - d.rate);
        let shape = tape.value(x).shape().to_vec();
        let n = tape.value(x).len();
        let mask: Vec<f64> = (0..n).map(|_| if d.rng.random::<f64>() < d.rate { 0.0 } else { keep }).collect();
        tape.mask_mul(x, &DenseArray::new(shape, mask)?)
    }

    fn attention(&self, tape: &mut Tape, h: Var, layer: &EncoderLayer, inp: &BatchInputs) -> grad::Result<Var> {
        let (t, d, heads) = (self.schema.t_max, self.config.d_model, self.config.heads);
        let dk = d / heads;
        let q = layer.wq.forward(tape, h)?;
        let k = tape.matmul(h, tape.param(layer.wk))?;
        let v = layer.wv.forward(tape, h)?;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut rows = Vec::with_capacity(inp.batch);
        for (b, flags) in inp.flags.iter().enumerate() {
            let key_mask: Vec<f64> = (0..t).flat_map(|_| flags.iter().copied()).collect();
            let key_mask = DenseArray::new(vec![t, t], key_mask)?;
            let (qb, kb, vb) = (tape.slice(q, 0, b * t, t)?, tape.slice(k, 0, b * t, t)?, tape.slice(v, 0, b * t, t)?);
            let mut outs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = tape.slice(qb, 1, hd * dk, dk)?;
                let kh = tape.slice(kb, 1, hd * dk, dk)?;
                let vh = tape.slice(vb, 1, hd * dk, dk)?;
                let kt = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kt)?;
                let scores = tape.scale(scores, scale)?;
                let weights = tape.masked_softmax(scores, &key_mask)?;
                outs.push(tape.matmul(weights, vh)?);
            }
            rows.push(if heads == 1 { outs[0] } else { tape.concat(&outs, 1)? });
        }
        let joined = if rows.len() == 1 { rows[0] } else { tape.concat(&rows, 0)? };
        layer.wo.forward(tape, joined)
    }

    /// Records the forward pass; returns (probabilities `B × 1`,
    /// standardized gaps `B × 2`).
    fn forward_tape<R: Rng>(
        &self,
        tape: &mut Tape,
        inp: &BatchInputs,
        mut drop: Option<Dropout<'_, R>>,
    ) -> grad::Result<(Var, Var)> {
        let (t, d) = (self.schema.t_max, self.config.d_model);
        let x = tape.input(inp.x.clone());
        let emb = self.embed.forward(tape, x)?;
        let pe = sinusoidal_encoding(t, d);
        let pe: Vec<f64> = (0..inp.batch).flat_map(|_| pe.iter().copied()).collect();
        let pe = tape.input(DenseArray::new(vec![inp.batch * t, d], pe)?);
        let mut h = tape.add(emb, pe)?;
        for layer in &self.layers {
            let a = self.attention(tape, h, layer, inp)?;
            let a = Self::dropout(tape, a, &mut drop)?;
            let r = tape.add(h, a)?;
            h = tape.layer_norm(r, tape.param(layer.ln1.0), tape.param(layer.ln1.1))?;
            let f = layer.ff1.forward(tape, h)?;
            let f = tape.relu(f)?;
            let f = layer.ff2.forward(tape, f)?;
            let f = Self::dropout(tape, f, &mut drop)?;
            let r = tape.add(h, f)?;
            h = tape.layer_norm(r, tape.param(layer.ln2.0), tape.param(layer.ln2.1))?;
        }
        let mut pool = vec![0.0; inp.batch * inp.batch * t];
        for (b, flags) in inp.flags.iter().enumerate() {
            let total: f64 = flags.iter().sum();
            for (j, &f) in flags.iter().enumerate() {
                pool[b * inp.batch * t + b * t + j] = f / total;
            }
        }
        let pool = tape.input(DenseArray::new(vec![inp.batch, inp.batch * t], pool)?);
        let pooled = tape.matmul(pool, h)?;
        let statics = tape.input(inp.one_hot.clone());
        let fused = tape.concat(&[pooled, statics], 1)?;
        let hid = self.hidden.forward(tape, fused)?;
        let hid = tape.relu(hid)?;
        let hid = Self::dropout(tape, hid, &mut drop)?;
        let logit = self.cls_head.forward(tape, hid)?;
        let p = tape.sigmoid(logit)?;
        let gaps = self.reg_head.forward(tape, hid)?;
        Ok((p, gaps))
    }

    /// Total loss `BCE + λ · MSE`, the regression term averaged over the
    /// batch's samples that carry gap labels and omitted when there are none.
    fn loss_tape<R: Rng>(
        &self,
        tape: &mut Tape,
        samples: &[&SampleWindow],
        drop: Option<Dropout<'_, R>>,
    ) -> Result<(Var, Var, Option<Var>)> {
        let inp = self.inputs(samples)?;
        let (p, gaps) = self.forward_tape(tape, &inp, drop)?;
        let labels: Vec<f64> = samples.iter().map(|s| f64::from(u8::from(s.is_secondary))).collect();
        let bce = tape.bce(p, &DenseArray::new(vec![samples.len(), 1], labels)?)?;
        let (mut mask, mut target) = (Vec::new(), Vec::new());
        for s in samples {
            match gap_targets(s) {
                Some(g) => {
                    mask.extend([1.0, 1.0]);
                    for k in 0..2 {
                        target.push((g[k] - self.target_scale.mean[k]) / self.target_scale.std[k]);
                    }
                }
                None => {
                    mask.extend([0.0, 0.0]);
                    target.extend([0.0, 0.0]);
                }
            }
        }
        let labelled = mask.iter().filter(|&&m| m > 0.0).count() / 2;
        if labelled == 0 || self.config.lambda == 0.0 {
            return Ok((bce, bce, None));
        }
        let n = samples.len();
        let masked = tape.mask_mul(gaps, &DenseArray::new(vec![n, 2], mask)?)?;
        let mse = tape.squared_error(masked, &DenseArray::new(vec![n, 2], target)?)?;
        let mse = tape.scale(mse, n as f64 / labelled as f64)?;
        let weighted = tape.scale(mse, self.config.lambda)?;
        let total = tape.add(bce, weighted)?;
        Ok((total, bce, Some(mse)))
    }

    /// The deterministic (dropout-free) total loss on a tape bound to this
    /// model's parameters.
    pub fn total_loss(&self, tape: &mut Tape, samples: &[&SampleWindow]) -> Result<Var> {
        Ok(self.loss_tape::<ChaCha8Rng>(tape, samples, None)?.0)
    }

    /// Inference on a batch of samples (raw units).
    pub fn forward_batch(&self, samples: &[&SampleWindow]) -> Result<Vec<PredictorOutput>> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let inp = self.inputs(samples)?;
        let mut tape = Tape::with_params(&self.store);
        let (p, gaps) = self.forward_tape::<ChaCha8Rng>(&mut tape, &inp, None)?;
        let (p, gaps) = (tape.value(p), tape.value(gaps));
        let ts = &self.target_scale;
        Ok((0..samples.len())
            .map(|b| PredictorOutput {
                p_secondary: p.get2(b, 0),
                time_gap_h: gaps.get2(b, 0) * ts.std[0] + ts.mean[0],
                dist_gap_mi: gaps.get2(b, 1) * ts.std[1] + ts.mean[1],
            })
            .collect())
    }

    pub fn forward(&self, sample: &SampleWindow) -> Result<PredictorOutput> {
        Ok(self.forward_batch(&[sample])?[0])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = CheckpointMeta {
            kind: CHECKPOINT_KIND.into(),
            config: self.config.clone(),
            schema: self.schema.clone(),
            input_norm: self.input_norm.clone(),
            target_scale: self.target_scale,
        };
        self.store.save(path, &serde_json::to_string(&meta)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (store, meta) = ParamStore::load(path)?;
        let meta: CheckpointMeta = serde_json::from_str(&meta)?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(VfgError::data(format!("checkpoint holds a {} model, expected {CHECKPOINT_KIND}", meta.kind)));
        }
        let mut model = Self::new(meta.config, meta.schema, meta.input_norm, 0)?;
        model.target_scale = meta.target_scale;
        adopt_params(&mut model.store, &store)?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub bce: f64,
    /// Mean regression loss over batches that had labelled positives.
    pub regression: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PredictorModel,
    pub history: Vec<PredictorEpoch>,
    pub warnings: Vec<String>,
}

/// Fits input normalization and target standardization on `train`, then
/// minimizes the total loss with Adam over shuffled mini-batches.
pub fn train(train: &[SampleWindow], schema: &WindowSchema, config: &PredictorConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(VfgError::data("predictor training set is empty"));
    }
    let mut warnings = Vec::new();
    if !train.iter().any(|s| gap_targets(s).is_some()) {
        warnings.push("training set has no labelled secondary samples; regression term skipped".to_owned());
    }
    let mut model = PredictorModel::new(config.clone(), schema.clone(), fit_global(train)?, config.seed)?;
    model.target_scale = TargetScale::fit(train);
    let mut opt = Adam::for_all(&model.store, AdamConfig { lr: config.learning_rate, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7072_6564);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut bce, mut reg, mut reg_n, mut batches) = (0.0, 0.0, 0.0, 0usize, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let samples: Vec<&SampleWindow> = chunk.iter().map(|&i| &train[i]).collect();
            let mut tape = Tape::with_params(&model.store);
            let drop = Dropout { rate: config.dropout, rng: &mut rng };
            let (total, b, r) = model.loss_tape(&mut tape, &samples, Some(drop)).map_err(|e| match e {
                VfgError::Grad(grad::GradError::NonFinite { op }) => {
                    VfgError::NonFiniteLoss { epoch, detail: format!("non-finite value in {op}") }
                }
                other => other,
            })?;
            let grads = tape.backward(total)?;
            opt.step(&mut model.store, &grads)?;
            loss += tape.value(total).item();
            bce += tape.value(b).item();
            if let Some(r) = r {
                reg += tape.value(r).item();
                reg_n += 1;
            }
            batches += 1;
        }
        let n = batches as f64;
        history.push(PredictorEpoch {
            epoch,
            loss: loss / n,
            bce: bce / n,
            regression: (reg_n > 0).then(|| reg / reg_n as f64),
        });
    }
    Ok(TrainOutcome { model, history, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub p: f64,
    pub label: bool,
    pub time_gap_h: f64,
    pub dist_gap_mi: f64,
}

/// Classifies each sample as secondary iff `p ≥ threshold`.
pub fn predict(samples: &[SampleWindow], model: &PredictorModel, threshold: f64) -> Result<Vec<Prediction>> {
    const CHUNK: usize = 64;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(CHUNK) {
        let refs: Vec<&SampleWindow> = chunk.iter().collect();
        for (s, o) in chunk.iter().zip(model.forward_batch(&refs)?) {
            out.push(Prediction {
                sample_id: s.id.clone(),
                p: o.p_secondary,
                label: o.p_secondary >= threshold,
                time_gap_h: o.time_gap_h,
                dist_gap_mi: o.dist_gap_mi,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::CategoryGroup;

    fn schema() -> WindowSchema {
        WindowSchema {
            groups: vec![CategoryGroup { name: "g".into(), levels: vec!["a".into(), "b".into()] }],
            variables: vec!["x".into(), "y".into()],
            t_max: 4,
        }
    }

    fn tiny() -> PredictorConfig {
        PredictorConfig {
            d_model: 4,
            heads: 2,
            layers: 1,
            feed_forward: 6,
            hidden: 5,
            dropout: 0.0,
            ..Default::default()
        }
    }

    fn sample(id: &str, len: usize, pos: bool) -> SampleWindow {
        let rows = (0..len).map(|j| vec![j as f64, 2.0 * j as f64 + 1.0]).collect();
        SampleWindow::from_active(id, id, vec![usize::from(pos)], rows, 4)
            .unwrap()
            .with_labels(pos, pos.then_some((0.5, 1.5)))
    }

    fn model() -> PredictorModel {
        let norm = vec![Extrema { min: 0.0, max: 4.0 }, Extrema { min: 0.0, max: 8.0 }];
        PredictorModel::new(tiny(), schema(), norm, 1).unwrap()
    }

    #[test]
    fn untrained_model_outputs_half_and_zero_gaps() {
        let out = model().forward(&sample("a", 3, true)).unwrap();
        assert_eq!(out.p_secondary, 0.5);
        assert_eq!((out.time_gap_h, out.dist_gap_mi), (0.0, 0.0));
    }

    #[test]
    fn padded_values_do_not_matter() {
        let mut m = model();
        m.randomize_heads(4);
        let s = sample("a", 2, true);
        let mut poked = s.clone();
        for row in &mut poked.dynamic[2..] {
            for v in row {
                *v += 100.0;
            }
        }
        let (a, b) = (m.forward(&s).unwrap(), m.forward(&poked).unwrap());
        assert!((a.p_secondary - b.p_secondary).abs() < 1e-12);
        assert!((a.time_gap_h - b.time_gap_h).abs() < 1e-12);
    }

    #[test]
    fn closed_threshold() {
        let preds = predict(&[sample("a", 3, false)], &model(), 0.5).unwrap();
        assert!(preds[0].label);
    }

    #[test]
    fn all_negative_batch_has_no_regression_term() {
        let m = model();
        let a = sample("a", 3, false);
        let b = sample("b", 2, false);
        let mut tape = Tape::with_params(&m.store);
        let (_, _, reg) = m.loss_tape::<ChaCha8Rng>(&mut tape, &[&a, &b], None).unwrap();
        assert!(reg.is_none());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = model();
        m.randomize_heads(2);
        m.target_scale = TargetScale { mean: [1.0, 2.0], std: [0.5, 3.0] };
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path().join("p.ckpt")).unwrap();
        let back = PredictorModel::load(dir.path().join("p.ckpt")).unwrap();
        let s = sample("a", 4, true);
        assert_eq!(back.forward(&s).unwrap(), m.forward(&s).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(PredictorConfig { d_model: 6, heads: 4, ..Default::default() }.validate().is_err());
        assert!(PredictorConfig { dropout: 1.0, ..Default::default() }.validate().is_err());
        assert!(PredictorConfig { threshold: 1.0, ..Default::default() }.validate().is_err());
        assert!(PredictorConfig::default().validate().is_ok());
    }
}
