//! The adversarial generator for fused static + variable-length dynamic
//! samples: a static generator emitting categories and per-variable
//! (min, max) pseudo-statics, an LSTM dynamic generator emitting `S`
//! variables per pass plus a continuation flag per step, and two
//! discriminators combined through a weight `α`.

use std::path::{Path, PathBuf};

use grad::{Adam, AdamConfig, DenseArray, GradError, ParamId, ParamStore, Tape, Var, LOG_CLAMP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VfgError};
use crate::nn::{adopt_params, constant, normal_matrix, scale_rows, Activation, Linear, LstmCell, Mlp};
use crate::normalize::Extrema;
use crate::schema::{SampleWindow, WindowSchema};

const CHECKPOINT_KIND: &str = "vargan";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorLoss {
    /// Descend `α·E[log(1 − D1(G_a(z)))] + E[log(1 − D2(G(z)))]`.
    Minimax,
    /// Descend `−α·E[log D1(G_a(z))] − E[log D2(G(z))]`.
    NonSaturating,
}

/// Network sizes and discriminator inputs; fixed once a model exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanArchitecture {
    pub noise_dim: usize,
    /// Noise fed to the LSTM at every pass.
    pub pass_noise_dim: usize,
    pub static_hidden: Vec<usize>,
    pub lstm_hidden: usize,
    pub disc_hidden: Vec<usize>,
    /// Dynamic variables emitted per LSTM pass.
    pub s: usize,
    pub pseudo_in_d1: bool,
    pub pseudo_in_d2: bool,
}

impl Default for GanArchitecture {
    fn default() -> Self {
        Self {
            noise_dim: 32,
            pass_noise_dim: 8,
            static_hidden: vec![64, 64],
            lstm_hidden: 64,
            disc_hidden: vec![128, 128],
            s: 3,
            pseudo_in_d1: true,
            pseudo_in_d2: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanTrainConfig {
    pub architecture: GanArchitecture,
    /// Weight of the auxiliary (static) discriminator loss.
    pub alpha: f64,
    pub batch_size: usize,
    pub d_steps: usize,
    pub g_steps: usize,
    pub epochs: usize,
    /// Iterations per epoch; defaults to `max(1, n / batch_size)`.
    pub iterations_per_epoch: Option<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub generator_loss: GeneratorLoss,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (requires `checkpoint_dir`).
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            architecture: GanArchitecture::default(),
            alpha: 1.0,
            batch_size: 64,
            d_steps: 1,
            g_steps: 1,
            epochs: 200,
            iterations_per_epoch: None,
            learning_rate: 1e-3,
            beta1: 0.5,
            generator_loss: GeneratorLoss::Minimax,
            seed: 0,
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.architecture;
        let bad = |m: &str| Err(VfgError::config(format!("gan.{m}")));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be >= 0");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2");
        }
        if self.d_steps == 0 || self.g_steps == 0 {
            return bad("d_steps and g_steps must be >= 1");
        }
        if a.s == 0 || a.noise_dim == 0 || a.lstm_hidden == 0 {
            return bad("architecture sizes must be positive");
        }
        if a.static_hidden.contains(&0) || a.disc_hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if !(self.learning_rate > 0.0 && (0.0..1.0).contains(&self.beta1)) {
            return bad("learning_rate must be positive and beta1 in [0, 1)");
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be positive");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, beta1: self.beta1, ..AdamConfig::default() }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    architecture: GanArchitecture,
    schema: WindowSchema,
    pseudo_range: Vec<Extrema>,
}

/// Noise for a batch: the static-generator input and one matrix per
/// (step, pass).
#[derive(Debug, Clone, PartialEq)]
pub struct GanNoise {
    pub z: DenseArray,
    pub passes: Vec<DenseArray>,
}

/// Discriminator-ready tensors for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GanBatch {
    /// Concatenated category one-hots (or probabilities).
    pub cats: DenseArray,
    /// Scaled pseudo-statics: all minima then all maxima.
    pub pseudo: DenseArray,
    /// Flag-masked dynamic values, step-major.
    pub dynamic: DenseArray,
    pub flags: DenseArray,
}

/// Generator outputs recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct FakeVars {
    pub cats: Var,
    pub pseudo: Var,
    pub dynamic: Var,
    pub flags: Var,
    /// Dynamic values before flag gating.
    pub ungated: Var,
    /// Continuation probabilities per step (`B × T`); step 0 is unused.
    pub continuation: Var,
}

/// The three terms of the joint objective.
#[derive(Debug, Clone, Copy)]
pub struct JointLoss {
    pub l1: Var,
    pub l2: Var,
    pub combined: Var,
}

/// `L1 = E[log D1(real)] + E[log(1 − D1(fake))]`, likewise `L2` for D2,
/// and `α·L1 + L2`. Probabilities are clamped to `[1e-7, 1 − 1e-7]`.
pub fn joint_loss(
    tape: &mut Tape,
    d1_real: Var,
    d1_fake: Var,
    d2_real: Var,
    d2_fake: Var,
    alpha: f64,
) -> grad::Result<JointLoss> {
    let term = |tape: &mut Tape, real: Var, fake: Var| -> grad::Result<Var> {
        let lr = tape.ln_clamped(real, LOG_CLAMP, 1.0 - LOG_CLAMP)?;
        let lr = tape.mean(lr)?;
        let inv = tape.one_minus(fake)?;
        let lf = tape.ln_clamped(inv, LOG_CLAMP, 1.0 - LOG_CLAMP)?;
        let lf = tape.mean(lf)?;
        tape.add(lr, lf)
    };
    let l1 = term(tape, d1_real, d1_fake)?;
    let l2 = term(tape, d2_real, d2_fake)?;
    let weighted = tape.scale(l1, alpha)?;
    let combined = tape.add(weighted, l2)?;
    Ok(JointLoss { l1, l2, combined })
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub l1: f64,
    pub l2: f64,
    pub combined: f64,
    pub generator_loss: f64,
    /// Real-vs-fake accuracy at threshold 0.5, before the epoch's updates.
    pub d1_accuracy: f64,
    pub d2_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct GanModel {
    pub architecture: GanArchitecture,
    pub schema: WindowSchema,
    /// Per-variable range over all training pseudo-statics; the static
    /// generator emits (min, max) within it.
    pub pseudo_range: Vec<Extrema>,
    pub store: ParamStore,
    static_gen: Mlp,
    lstm: LstmCell,
    value_head: Linear,
    flag_head: Linear,
    d1: Mlp,
    d2: Mlp,
}

impl GanModel {
    pub fn new(
        architecture: GanArchitecture,
        schema: WindowSchema,
        pseudo_range: Vec<Extrema>,
        seed: u64,
    ) -> Result<Self> {
        if pseudo_range.len() != schema.n_vars() {
            return Err(VfgError::data("pseudo-static range does not match the schema's variables"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let a = &architecture;
        let (c, v, t) = (schema.one_hot_width(), schema.n_vars(), schema.t_max);
        let passes = v.div_ceil(a.s);
        let static_gen =
            Mlp::new(&mut store, "gen.static", a.noise_dim, &a.static_hidden, c + 2 * v, Activation::Relu, &mut rng);
        let lstm_in = c + 2 * v + a.s + passes + 1 + a.pass_noise_dim;
        let lstm = LstmCell::new(&mut store, "gen.lstm", lstm_in, a.lstm_hidden, &mut rng);
        let value_head = Linear::new(&mut store, "gen.value", a.lstm_hidden, a.s, &mut rng);
        let flag_head = Linear::new(&mut store, "gen.flag", a.lstm_hidden, 1, &mut rng);
        let d1_in = c + if a.pseudo_in_d1 { 2 * v } else { 0 };
        let d2_in = c + if a.pseudo_in_d2 { 2 * v } else { 0 } + t * v + t;
        let d1 = Mlp::new(&mut store, "disc.aux", d1_in, &a.disc_hidden, 1, Activation::LeakyRelu, &mut rng);
        let d2 = Mlp::new(&mut store, "disc.primary", d2_in, &a.disc_hidden, 1, Activation::LeakyRelu, &mut rng);
        Ok(Self { architecture, schema, pseudo_range, store, static_gen, lstm, value_head, flag_head, d1, d2 })
    }

    pub fn passes(&self) -> usize {
        self.schema.n_vars().div_ceil(self.architecture.s)
    }

    /// Variables emitted by each pass, in order.
    pub fn pass_groups(&self) -> Vec<Vec<usize>> {
        let v = self.schema.n_vars();
        (0..self.passes())
            .map(|p| (p * self.architecture.s..((p + 1) * self.architecture.s).min(v)).collect())
            .collect()
    }

    pub fn generator_params(&self) -> Vec<ParamId> {
        let mut ids = self.static_gen.params();
        ids.extend(self.lstm.params());
        ids.extend([self.value_head.w, self.value_head.b, self.flag_head.w, self.flag_head.b]);
        ids
    }

    pub fn d1_params(&self) -> Vec<ParamId> {
        self.d1.params()
    }

    pub fn d2_params(&self) -> Vec<ParamId> {
        self.d2.params()
    }

    pub fn sample_noise(&self, rng: &mut impl Rng, batch: usize) -> GanNoise {
        let a = &self.architecture;
        let n = self.schema.t_max * self.passes();
        GanNoise {
            z: normal_matrix(rng, batch, a.noise_dim),
            passes: (0..n).map(|_| normal_matrix(rng, batch, a.pass_noise_dim.max(1))).collect(),
        }
    }

    fn pass_noise(&self, tape: &mut Tape, noise: &GanNoise, k: usize) -> Option<Var> {
        (self.architecture.pass_noise_dim > 0).then(|| tape.input(noise.passes[k].clone()))
    }

    /// Static generator: category probabilities and scaled pseudo-statics.
    pub fn static_forward(&self, tape: &mut Tape, z: Var) -> grad::Result<(Var, Var)> {
        let (c, v) = (self.schema.one_hot_width(), self.schema.n_vars());
        let out = self.static_gen.forward(tape, z)?;
        let mut cats = Vec::new();
        let mut offset = 0;
        for g in self.schema.group_sizes() {
            let logits = tape.slice(out, 1, offset, g)?;
            cats.push(tape.softmax(logits)?);
            offset += g;
        }
        let cats = tape.concat(&cats, 1)?;
        let a = tape.slice(out, 1, c, v)?;
        let b = tape.slice(out, 1, c + v, v)?;
        let lo = tape.sigmoid(a)?;
        let gap = tape.softplus(b)?;
        let hi = tape.add(lo, gap)?;
        let pseudo = tape.concat(&[lo, hi], 1)?;
        Ok((cats, pseudo))
    }

    /// Full generator. `hard_cats` replaces the category probabilities that
    /// condition the dynamic generator (used when sampling).
    pub fn generator_forward(
        &self,
        tape: &mut Tape,
        noise: &GanNoise,
        hard_cats: Option<&DenseArray>,
    ) -> grad::Result<FakeVars> {
        let batch = noise.z.shape()[0];
        let (v, t, s) = (self.schema.n_vars(), self.schema.t_max, self.architecture.s);
        let passes = self.passes();
        let z = tape.input(noise.z.clone());
        let (cats, pseudo) = self.static_forward(tape, z)?;
        let cond_cats = match hard_cats {
            Some(h) => tape.input(h.clone()),
            None => cats,
        };
        let static_vec = tape.concat(&[cond_cats, pseudo], 1)?;
        let hd = self.architecture.lstm_hidden;
        let mut h = constant(tape, batch, hd, 0.0);
        let mut c = constant(tape, batch, hd, 0.0);
        let mut prev = constant(tape, batch, s, 0.0);
        let mut gate = constant(tape, batch, 1, 1.0);
        let mut steps = Vec::with_capacity(t);
        let mut ungated = Vec::with_capacity(t);
        let mut flags = Vec::with_capacity(t);
        let mut conts = Vec::with_capacity(t);
        for j in 0..t {
            let time = constant(tape, batch, 1, j as f64 / t as f64);
            let mut outs = Vec::with_capacity(passes);
            for p in 0..passes {
                let mut pass = DenseArray::zeros(&[batch, passes]);
                for b in 0..batch {
                    pass.set_flat(b * passes + p, 1.0);
                }
                let pass = tape.input(pass);
                let mut parts = vec![static_vec, prev, pass, time];
                parts.extend(self.pass_noise(tape, noise, j * passes + p));
                let x = tape.concat(&parts, 1)?;
                (h, c) = self.lstm.step(tape, x, h, c)?;
                let y = self.value_head.forward(tape, h)?;
                prev = tape.sigmoid(y)?;
                outs.push(prev);
            }
            let all = tape.concat(&outs, 1)?;
            let values = tape.slice(all, 1, 0, v)?;
            let logit = self.flag_head.forward(tape, h)?;
            let cont = tape.sigmoid(logit)?;
            if j > 0 {
                gate = tape.mul(gate, cont)?;
            }
            steps.push(scale_rows(tape, values, gate, v)?);
            ungated.push(values);
            flags.push(gate);
            conts.push(cont);
        }
        Ok(FakeVars {
            cats,
            pseudo,
            dynamic: tape.concat(&steps, 1)?,
            flags: tape.concat(&flags, 1)?,
            ungated: tape.concat(&ungated, 1)?,
            continuation: tape.concat(&conts, 1)?,
        })
    }

    /// Auxiliary discriminator score in (0, 1).
    pub fn d1_forward(&self, tape: &mut Tape, cats: Var, pseudo: Var) -> grad::Result<Var> {
        let x = if self.architecture.pseudo_in_d1 { tape.concat(&[cats, pseudo], 1)? } else { cats };
        let y = self.d1.forward(tape, x)?;
        tape.sigmoid(y)
    }

    /// Primary discriminator score in (0, 1).
    pub fn d2_forward(&self, tape: &mut Tape, cats: Var, pseudo: Var, dynamic: Var, flags: Var) -> grad::Result<Var> {
        let x = if self.architecture.pseudo_in_d2 {
            tape.concat(&[cats, pseudo, dynamic, flags], 1)?
        } else {
            tape.concat(&[cats, dynamic, flags], 1)?
        };
        let y = self.d2.forward(tape, x)?;
        tape.sigmoid(y)
    }

    /// The joint objective on a real batch and generator noise, recorded on
    /// a tape bound to this model's parameters.
    pub fn joint_objective(
        &self,
        tape: &mut Tape,
        real: &GanBatch,
        noise: &GanNoise,
        alpha: f64,
    ) -> grad::Result<(JointLoss, FakeVars, [Var; 4])> {
        let fake = self.generator_forward(tape, noise, None)?;
        let rc = tape.input(real.cats.clone());
        let rp = tape.input(real.pseudo.clone());
        let rd = tape.input(real.dynamic.clone());
        let rf = tape.input(real.flags.clone());
        let d1r = self.d1_forward(tape, rc, rp)?;
        let d1f = self.d1_forward(tape, fake.cats, fake.pseudo)?;
        let d2r = self.d2_forward(tape, rc, rp, rd, rf)?;
        let d2f = self.d2_forward(tape, fake.cats, fake.pseudo, fake.dynamic, fake.flags)?;
        let loss = joint_loss(tape, d1r, d1f, d2r, d2f, alpha)?;
        Ok((loss, fake, [d1r, d1f, d2r, d2f]))
    }

    fn scale_pseudo(&self, pairs: &[(f64, f64)]) -> (Vec<f64>, Vec<f64>) {
        pairs.iter().zip(&self.pseudo_range).map(|(&(lo, hi), r)| (r.scale(lo), r.scale(hi))).unzip()
    }

    /// Tensors for real samples (per-variable normalized with pseudo-statics).
    pub fn real_batch(&self, samples: &[&SampleWindow]) -> Result<GanBatch> {
        let (c, v, t) = (self.schema.one_hot_width(), self.schema.n_vars(), self.schema.t_max);
        let n = samples.len();
        let (mut cats, mut pseudo, mut dynamic, mut flags) = (
            Vec::with_capacity(n * c),
            Vec::with_capacity(n * 2 * v),
            Vec::with_capacity(n * t * v),
            Vec::with_capacity(n * t),
        );
        for s in samples {
            let pairs = s.pseudo_static.as_ref().ok_or_else(|| {
                VfgError::data(format!("sample {} lacks pseudo-static data; normalize per variable first", s.id))
            })?;
            cats.extend(s.one_hot(&self.schema));
            let (lo, hi) = self.scale_pseudo(pairs);
            pseudo.extend(lo);
            pseudo.extend(hi);
            // Gate by the flags so padded steps reach D2 only as zeros.
            dynamic.extend(s.dynamic.iter().zip(&s.flags).flat_map(|(row, &f)| row.iter().map(move |&x| x * f)));
            flags.extend(&s.flags);
        }
        let arr = |cols, data| DenseArray::new(vec![n, cols], data).map_err(VfgError::from);
        Ok(GanBatch {
            cats: arr(c, cats)?,
            pseudo: arr(2 * v, pseudo)?,
            dynamic: arr(t * v, dynamic)?,
            flags: arr(t, flags)?,
        })
    }

    fn sample_categories(&self, probs: &DenseArray, rng: &mut impl Rng) -> (Vec<Vec<usize>>, DenseArray) {
        let (n, width) = probs.dims2().expect("rank 2");
        let mut hard = DenseArray::zeros(&[n, width]);
        let mut cats = Vec::with_capacity(n);
        for b in 0..n {
            let row = probs.row(b);
            let mut offset = 0;
            let mut chosen = Vec::new();
            for g in self.schema.group_sizes() {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = g - 1;
                for (k, &p) in row[offset..offset + g].iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = k;
                        break;
                    }
                }
                hard.set_flat(b * width + offset + pick, 1.0);
                chosen.push(pick);
                offset += g;
            }
            cats.push(chosen);
        }
        (cats, hard)
    }

    /// Turns noise into finished samples: hard categories drawn from the
    /// static generator's probabilities with `rng`, length fixed at the
    /// first step whose continuation probability is below 0.5, values
    /// denormalized through the emitted pseudo-statics.
    pub fn generate_from_noise(
        &self,
        noise: &GanNoise,
        rng: &mut impl Rng,
        id_prefix: &str,
        first_index: usize,
    ) -> Result<Vec<SampleWindow>> {
        let (v, t) = (self.schema.n_vars(), self.schema.t_max);
        let mut tape = Tape::with_params(&self.store);
        let z = tape.input(noise.z.clone());
        let (probs, _) = self.static_forward(&mut tape, z)?;
        let (cats, hard) = self.sample_categories(tape.value(probs), rng);
        let mut tape = Tape::with_params(&self.store);
        let fake = self.generator_forward(&mut tape, noise, Some(&hard))?;
        let (pseudo, values, cont) = (tape.value(fake.pseudo), tape.value(fake.ungated), tape.value(fake.continuation));
        let mut out = Vec::with_capacity(cats.len());
        for (b, cats) in cats.into_iter().enumerate() {
            let length = (1..t).find(|&j| cont.get2(b, j) < 0.5).unwrap_or(t);
            let pairs: Vec<(f64, f64)> = (0..v)
                .map(|k| {
                    let r = &self.pseudo_range[k];
                    (r.unscale(pseudo.get2(b, k)), r.unscale(pseudo.get2(b, v + k)))
                })
                .collect();
            let rows = (0..length)
                .map(|j| {
                    (0..v)
                        .map(|k| {
                            let (lo, hi) = pairs[k];
                            lo + values.get2(b, j * v + k) * (hi - lo)
                        })
                        .collect()
                })
                .collect();
            let id = format!("{id_prefix}{:06}", first_index + b);
            let mut s = SampleWindow::from_active(id.clone(), id, cats, rows, t)?.with_labels(true, None);
            s.pseudo_static = Some(pairs);
            s.generated = true;
            out.push(s);
        }
        Ok(out)
    }

    /// One sample from explicit single-row noise.
    pub fn generate_sample(&self, noise: &GanNoise, rng: &mut impl Rng) -> Result<SampleWindow> {
        if noise.z.shape()[0] != 1 {
            return Err(VfgError::data("generate_sample expects noise for exactly one sample"));
        }
        Ok(self.generate_from_noise(noise, rng, "gen-", 0)?.remove(0))
    }

    /// `count` samples drawn with a seeded source, in chunks.
    pub fn generate(&self, count: usize, seed: u64) -> Result<Vec<SampleWindow>> {
        const CHUNK: usize = 256;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let n = CHUNK.min(count - out.len());
            let noise = self.sample_noise(&mut rng, n);
            let first = out.len();
            out.extend(self.generate_from_noise(&noise, &mut rng, "gen-", first)?);
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = CheckpointMeta {
            kind: CHECKPOINT_KIND.into(),
            architecture: self.architecture.clone(),
            schema: self.schema.clone(),
            pseudo_range: self.pseudo_range.clone(),
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
        let mut model = Self::new(meta.architecture, meta.schema, meta.pseudo_range, 0)?;
        adopt_params(&mut model.store, &store)?;
        Ok(model)
    }
}

/// Per-variable range over the (min, max) pseudo-statics of `samples`.
pub fn pseudo_range(samples: &[SampleWindow]) -> Result<Vec<Extrema>> {
    let first = samples
        .first()
        .and_then(|s| s.pseudo_static.as_ref())
        .ok_or_else(|| VfgError::data("GAN training needs per-variable normalized samples"))?;
    let mut range: Vec<Extrema> = first.iter().map(|&(lo, hi)| Extrema { min: lo, max: hi }).collect();
    for s in samples {
        let pairs = s
            .pseudo_static
            .as_ref()
            .ok_or_else(|| VfgError::data(format!("sample {} lacks pseudo-static data", s.id)))?;
        for (r, &(lo, hi)) in range.iter_mut().zip(pairs) {
            *r = r.merge(&Extrema { min: lo, max: hi });
        }
    }
    Ok(range)
}

fn accuracy(real: &DenseArray, fake: &DenseArray) -> f64 {
    let hits = real.data().iter().filter(|&&p| p >= 0.5).count() + fake.data().iter().filter(|&&p| p < 0.5).count();
    hits as f64 / (real.len() + fake.len()) as f64
}

fn non_finite(epoch: usize, e: VfgError) -> VfgError {
    match e {
        VfgError::Grad(GradError::NonFinite { op }) => {
            VfgError::NonFiniteLoss { epoch, detail: format!("non-finite value in {op}") }
        }
        other => other,
    }
}

/// Evaluates generator outputs as plain arrays (no gradient needed).
fn fake_batch(model: &GanModel, noise: &GanNoise) -> grad::Result<GanBatch> {
    let mut tape = Tape::with_params(&model.store);
    let f = model.generator_forward(&mut tape, noise, None)?;
    Ok(GanBatch {
        cats: tape.value(f.cats).clone(),
        pseudo: tape.value(f.pseudo).clone(),
        dynamic: tape.value(f.dynamic).clone(),
        flags: tape.value(f.flags).clone(),
    })
}

struct DiscStep {
    l1: f64,
    l2: f64,
    combined: f64,
    acc1: f64,
    acc2: f64,
}

fn discriminator_step(
    model: &mut GanModel,
    opt: &mut Adam,
    real: &GanBatch,
    fake: &GanBatch,
    alpha: f64,
) -> grad::Result<DiscStep> {
    let mut tape = Tape::with_params(&model.store);
    let ins = |tape: &mut Tape, b: &GanBatch| {
        [
            tape.input(b.cats.clone()),
            tape.input(b.pseudo.clone()),
            tape.input(b.dynamic.clone()),
            tape.input(b.flags.clone()),
        ]
    };
    let [rc, rp, rd, rf] = ins(&mut tape, real);
    let [fc, fp, fd, ff] = ins(&mut tape, fake);
    let d1r = model.d1_forward(&mut tape, rc, rp)?;
    let d1f = model.d1_forward(&mut tape, fc, fp)?;
    let d2r = model.d2_forward(&mut tape, rc, rp, rd, rf)?;
    let d2f = model.d2_forward(&mut tape, fc, fp, fd, ff)?;
    let loss = joint_loss(&mut tape, d1r, d1f, d2r, d2f, alpha)?;
    let ascend = tape.scale(loss.combined, -1.0)?;
    let grads = tape.backward(ascend)?;
    opt.step(&mut model.store, &grads)?;
    Ok(DiscStep {
        l1: tape.value(loss.l1).item(),
        l2: tape.value(loss.l2).item(),
        combined: tape.value(loss.combined).item(),
        acc1: accuracy(tape.value(d1r), tape.value(d1f)),
        acc2: accuracy(tape.value(d2r), tape.value(d2f)),
    })
}

fn generator_step(
    model: &mut GanModel,
    opt: &mut Adam,
    noise: &GanNoise,
    alpha: f64,
    kind: GeneratorLoss,
) -> grad::Result<f64> {
    let mut tape = Tape::with_params(&model.store);
    let fake = model.generator_forward(&mut tape, noise, None)?;
    let d1 = model.d1_forward(&mut tape, fake.cats, fake.pseudo)?;
    let d2 = model.d2_forward(&mut tape, fake.cats, fake.pseudo, fake.dynamic, fake.flags)?;
    let term = |tape: &mut Tape, d: Var| -> grad::Result<Var> {
        let x = match kind {
            GeneratorLoss::Minimax => tape.one_minus(d)?,
            GeneratorLoss::NonSaturating => d,
        };
        let l = tape.ln_clamped(x, LOG_CLAMP, 1.0 - LOG_CLAMP)?;
        tape.mean(l)
    };
    let t1 = term(&mut tape, d1)?;
    let t2 = term(&mut tape, d2)?;
    let t1 = tape.scale(t1, alpha)?;
    let sum = tape.add(t1, t2)?;
    let loss = match kind {
        GeneratorLoss::Minimax => sum,
        GeneratorLoss::NonSaturating => tape.scale(sum, -1.0)?,
    };
    let grads = tape.backward(loss)?;
    opt.step(&mut model.store, &grads)?;
    Ok(tape.value(loss).item())
}

/// Adversarial training: per iteration, `d_steps` discriminator ascents on
/// the joint objective followed by `g_steps` generator descents.
pub fn train(
    real: &[SampleWindow],
    schema: &WindowSchema,
    cfg: &GanTrainConfig,
) -> Result<(GanModel, Vec<EpochStats>)> {
    cfg.validate()?;
    if real.len() < 2 {
        return Err(VfgError::data(format!("GAN training needs at least 2 samples, got {}", real.len())));
    }
    for s in real {
        s.validate(schema)?;
    }
    let range = pseudo_range(real)?;
    let mut model = GanModel::new(cfg.architecture.clone(), schema.clone(), range, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_6a4e);
    let mut opt_d = Adam::new(&model.store, [model.d1_params(), model.d2_params()].concat(), cfg.adam());
    let mut opt_g = Adam::new(&model.store, model.generator_params(), cfg.adam());
    let iterations = cfg.iterations_per_epoch.unwrap_or((real.len() / cfg.batch_size).max(1));
    let batch = cfg.batch_size;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let snapshot = model.store.clone();
        let mut acc = [0.0; 6];
        let mut d_count = 0usize;
        let result: Result<()> = (|| {
            for _ in 0..iterations {
                for _ in 0..cfg.d_steps {
                    let picks: Vec<&SampleWindow> =
                        (0..batch).map(|_| &real[rng.random_range(0..real.len())]).collect();
                    let real_batch = model.real_batch(&picks)?;
                    let noise = model.sample_noise(&mut rng, batch);
                    let fake = fake_batch(&model, &noise)?;
                    let d = discriminator_step(&mut model, &mut opt_d, &real_batch, &fake, cfg.alpha)?;
                    for (a, x) in acc.iter_mut().zip([d.l1, d.l2, d.combined, d.acc1, d.acc2]) {
                        *a += x;
                    }
                    d_count += 1;
                }
                for _ in 0..cfg.g_steps {
                    let noise = model.sample_noise(&mut rng, batch);
                    acc[5] += generator_step(&mut model, &mut opt_g, &noise, cfg.alpha, cfg.generator_loss)?
                        / cfg.g_steps as f64;
                }
            }
            Ok(())
        })();
        if let Err(e) = result {
            if let Some(dir) = &cfg.checkpoint_dir {
                model.store = snapshot;
                model.save(dir.join("pre-failure.ckpt"))?;
            }
            return Err(non_finite(epoch, e));
        }
        let d = d_count as f64;
        history.push(EpochStats {
            epoch,
            l1: acc[0] / d,
            l2: acc[1] / d,
            combined: acc[2] / d,
            generator_loss: acc[5] / iterations as f64,
            d1_accuracy: acc[3] / d,
            d2_accuracy: acc[4] / d,
        });
        if let (Some(every), Some(dir)) = (cfg.checkpoint_every, &cfg.checkpoint_dir) {
            if epoch % every == 0 {
                model.save(dir.join(format!("epoch-{epoch:05}.ckpt")))?;
            }
        }
    }
    Ok((model, history))
}
