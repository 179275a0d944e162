//! Randomized finite-difference checks of every differentiable building
//! block: each tape primitive, one LSTM cell, the GAN joint objective
//! through all four networks, and the predictor's total loss.
//!
//! Each `*_case` draws its sizes, values and parameters from `seed` and
//! returns the gradient-check report; [`suite`] runs many seeds of all of
//! them.

use grad::{gradient_check, gradient_check_with, DenseArray, GradCheckReport, ParamStore, Stencil, Tape, Var, FD_STEP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::nn::LstmCell;
use crate::normalize::{normalize_per_variable, Extrema};
use crate::predictor::{PredictorConfig, PredictorModel};
use crate::schema::{CategoryGroup, SampleWindow, WindowSchema};
use crate::vargan::{pseudo_range, GanArchitecture, GanModel};

/// Step for the composite checks (LSTM cell, joint objective, predictor
/// loss), which use the five-point stencil. Their losses sum many terms, so
/// every evaluation carries rounding noise of a few ulps of `|L|`; divided by
/// the primitive step of 1e-5 that swamps entries whose true gradient is
/// ~1e-9. The wider step cuts the noise a hundredfold and the `O(h⁴)`
/// stencil keeps truncation error negligible.
pub const COMPOSITE_STEP: f64 = 1e-3;

/// Minimum distance from every ReLU / leaky-ReLU input and log clamp to its
/// break point at a composite evaluation point, so the stencil (±2 steps,
/// amplified through the network) never straddles a kink.
pub const KINK_MARGIN: f64 = 5e-2;

/// Redraws with `draw` until the evaluation point built by `margin` is at
/// least [`KINK_MARGIN`] away from every kink, keeping the best of
/// `MAX_DRAWS` attempts otherwise.
fn kink_free<T>(mut draw: impl FnMut() -> Result<T>, margin: impl Fn(&T) -> Result<f64>) -> Result<T> {
    const MAX_DRAWS: usize = 500;
    let mut best: Option<(f64, T)> = None;
    for _ in 0..MAX_DRAWS {
        let candidate = draw()?;
        let m = margin(&candidate)?;
        if m >= KINK_MARGIN {
            return Ok(candidate);
        }
        if best.as_ref().is_none_or(|(b, _)| m > *b) {
            best = Some((m, candidate));
        }
    }
    Ok(best.expect("at least one draw").1)
}

fn composite_check<F>(store: &ParamStore, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> grad::Result<Var>,
{
    let ids: Vec<_> = store.ids().collect();
    Ok(gradient_check_with(store, &ids, COMPOSITE_STEP, Stencil::FivePoint, f)?)
}

/// Every tape operation with a backward rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Matmul,
    Add,
    AddRow,
    Sub,
    Mul,
    MaskMul,
    Scale,
    AddScalar,
    OneMinus,
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu,
    Softplus,
    LnClamped,
    Softmax,
    MaskedSoftmax,
    Concat,
    Slice,
    Transpose,
    Sum,
    Mean,
    Bce,
    SquaredError,
    LayerNorm,
}

impl Primitive {
    pub const ALL: [Primitive; 25] = [
        Primitive::Matmul,
        Primitive::Add,
        Primitive::AddRow,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::MaskMul,
        Primitive::Scale,
        Primitive::AddScalar,
        Primitive::OneMinus,
        Primitive::Sigmoid,
        Primitive::Tanh,
        Primitive::Relu,
        Primitive::LeakyRelu,
        Primitive::Softplus,
        Primitive::LnClamped,
        Primitive::Softmax,
        Primitive::MaskedSoftmax,
        Primitive::Concat,
        Primitive::Slice,
        Primitive::Transpose,
        Primitive::Sum,
        Primitive::Mean,
        Primitive::Bce,
        Primitive::SquaredError,
        Primitive::LayerNorm,
    ];
}

fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> DenseArray {
    let n = shape.iter().product();
    DenseArray::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("positive dims")
}

/// Magnitudes in [0.05, 1) with random sign, so kinks at zero are never
/// crossed by a finite-difference step.
fn away_from_zero(rng: &mut impl Rng, shape: &[usize]) -> DenseArray {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    DenseArray::new(shape.to_vec(), data).expect("positive dims")
}

fn binary_mask(rng: &mut impl Rng, rows: usize, cols: usize, keep_first: bool) -> DenseArray {
    let data =
        (0..rows * cols).map(|j| f64::from(u8::from((keep_first && j % cols == 0) || rng.random_bool(0.6)))).collect();
    DenseArray::new(vec![rows, cols], data).expect("positive dims")
}

/// Contracts `out` with a fixed random weight so every output entry gets a
/// distinct gradient.
fn project(t: &mut Tape, out: Var, weight: &DenseArray) -> grad::Result<Var> {
    let w = t.input(weight.clone());
    let prod = t.mul(out, w)?;
    t.sum(prod)
}

/// Checks one primitive on freshly drawn operands.
pub fn primitive_case(op: Primitive, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = (rng.random_range(1..5usize), rng.random_range(1..5usize));
    let mut store = ParamStore::new();
    let mat = |rng: &mut ChaCha8Rng, store: &mut ParamStore, name: &str, shape: &[usize]| {
        store.add(name, uniform(rng, shape, -2.0, 2.0))
    };
    type Build = Box<dyn Fn(&mut Tape) -> grad::Result<Var>>;
    let build: Build = match op {
        Primitive::Matmul => {
            let k = rng.random_range(1..5usize);
            let a = mat(&mut rng, &mut store, "a", &[r, k]);
            let b = mat(&mut rng, &mut store, "b", &[k, c]);
            let w = uniform(&mut rng, &[r, c], 0.5, 1.5);
            Box::new(move |t| {
                let y = t.matmul(t.param(a), t.param(b))?;
                project(t, y, &w)
            })
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul => {
            let a = mat(&mut rng, &mut store, "a", &[r, c]);
            let b = mat(&mut rng, &mut store, "b", &[r, c]);
            let w = uniform(&mut rng, &[r, c], 0.5, 1.5);
            Box::new(move |t| {
                let (av, bv) = (t.param(a), t.param(b));
                let y = match op {
                    Primitive::Add => t.add(av, bv)?,
                    Primitive::Sub => t.sub(av, bv)?,
                    _ => t.mul(av, bv)?,
                };
                project(t, y, &w)
            })
        }
        Primitive::AddRow => {
            let a = mat(&mut rng, &mut store, "a", &[r, c]);
            let b = mat(&mut rng, &mut store, "b", &[1, c]);
            let w = uniform(&mut rng, &[r, c], 0.5, 1.5);
            Box::new(move |t| {
                let y = t.add_row(t.param(a), t.param(b))?;
                project(t, y, &w)
            })
        }
        Primitive::MaskMul | Primitive::MaskedSoftmax => {
            let a = mat(&mut rng, &mut store, "a", &[r, c]);
            let mask = binary_mask(&mut rng, r, c, op == Primitive::MaskedSoftmax);
            let w = uniform(&mut rng, &[r, c], 0.5, 1.5);
            Box::new(move |t| {
                let y = if op == Primitive::MaskMul {
                    t.mask_mul(t.param(a), &mask)?
                } else {
                    t.masked_softmax(t.param(a), &mask)?
                };
                project(t, y, &w)
            })
        }
        Primitive::Concat | Primitive::Slice => {
            let axis = rng.random_range(0..2usize);
            let extra = rng.random_range(1..4usize);
            let (sb, total) = if axis == 0 { ([extra, c], r + extra) } else { ([r, extra], c + extra) };
            let a = mat(&mut rng, &mut store, "a", &[r, c]);
            let b = mat(&mut rng, &mut store, "b", &sb);
            let (start, len) = if op == Primitive::Slice {
                let start = rng.random_range(0..total);
                (start, rng.random_range(1..=total - start))
            } else {
                (0, total)
            };
            let shape = if axis == 0 { [len, c] } else { [r, len] };
            let w = uniform(&mut rng, &shape, 0.5, 1.5);
            Box::new(move |t| {
                let joined = t.concat(&[t.param(a), t.param(b)], axis)?;
                let y = if op == Primitive::Slice { t.slice(joined, axis, start, len)? } else { joined };
                project(t, y, &w)
            })
        }
        Primitive::Bce => {
            let p = store.add("p", uniform(&mut rng, &[r, c], 0.05, 0.95));
            let target = binary_mask(&mut rng, r, c, false);
            Box::new(move |t| t.bce(t.param(p), &target))
        }
        Primitive::SquaredError => {
            let x = mat(&mut rng, &mut store, "x", &[r, c]);
            let target = uniform(&mut rng, &[r, c], -2.0, 2.0);
            Box::new(move |t| t.squared_error(t.param(x), &target))
        }
        Primitive::LayerNorm => {
            let m = rng.random_range(3..6usize);
            let x = mat(&mut rng, &mut store, "x", &[r, m]);
            let g = store.add("g", uniform(&mut rng, &[1, m], 0.5, 1.5));
            let b = mat(&mut rng, &mut store, "b", &[1, m]);
            let w = uniform(&mut rng, &[r, m], 0.5, 1.5);
            Box::new(move |t| {
                let y = t.layer_norm(t.param(x), t.param(g), t.param(b))?;
                project(t, y, &w)
            })
        }
        unary => {
            let values = match unary {
                Primitive::Relu | Primitive::LeakyRelu => away_from_zero(&mut rng, &[r, c]),
                Primitive::LnClamped => uniform(&mut rng, &[r, c], 0.05, 0.95),
                _ => uniform(&mut rng, &[r, c], -2.0, 2.0),
            };
            let x = store.add("x", values);
            let w_shape = if unary == Primitive::Transpose { [c, r] } else { [r, c] };
            let w = uniform(&mut rng, &w_shape, 0.5, 1.5);
            Box::new(move |t| {
                let xv = t.param(x);
                let y = match unary {
                    Primitive::Scale => t.scale(xv, -1.7)?,
                    Primitive::AddScalar => t.add_scalar(xv, 0.3)?,
                    Primitive::OneMinus => t.one_minus(xv)?,
                    Primitive::Sigmoid => t.sigmoid(xv)?,
                    Primitive::Tanh => t.tanh(xv)?,
                    Primitive::Relu => t.relu(xv)?,
                    Primitive::LeakyRelu => t.leaky_relu(xv, 0.2)?,
                    Primitive::Softplus => t.softplus(xv)?,
                    Primitive::LnClamped => t.ln_clamped(xv, 1e-7, 1.0 - 1e-7)?,
                    Primitive::Softmax => t.softmax(xv)?,
                    Primitive::Transpose => t.transpose(xv)?,
                    Primitive::Sum => return t.sum(xv),
                    Primitive::Mean => return t.mean(xv),
                    other => unreachable!("{other:?} handled above"),
                };
                project(t, y, &w)
            })
        }
    };
    Ok(gradient_check(&store, FD_STEP, |t, _| build(t))?)
}

/// One LSTM step from random (x, h, c) with the cell weights, all treated
/// as parameters; the loss projects both outputs.
pub fn lstm_cell_case(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch, input, hidden) =
        (rng.random_range(1..4usize), rng.random_range(1..5usize), rng.random_range(1..5usize));
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "lstm", input, hidden, &mut rng);
    // Perturb the bias off its initial constant so every gate is generic.
    store.set(cell.b, uniform(&mut rng, &[1, 4 * hidden], -1.0, 1.0))?;
    let x = store.add("x", uniform(&mut rng, &[batch, input], -2.0, 2.0));
    let h = store.add("h", uniform(&mut rng, &[batch, hidden], -1.0, 1.0));
    let c = store.add("c", uniform(&mut rng, &[batch, hidden], -1.0, 1.0));
    let (wh, wc) = (uniform(&mut rng, &[batch, hidden], 0.5, 1.5), uniform(&mut rng, &[batch, hidden], 0.5, 1.5));
    composite_check(&store, |t, _| {
        let (h1, c1) = cell.step(t, t.param(x), t.param(h), t.param(c))?;
        let a = project(t, h1, &wh)?;
        let b = project(t, c1, &wc)?;
        t.add(a, b)
    })
}

fn checking_schema(rng: &mut impl Rng) -> WindowSchema {
    let vars = rng.random_range(2..5usize);
    WindowSchema {
        groups: vec![
            CategoryGroup { name: "g0".into(), levels: vec!["a".into(), "b".into()] },
            CategoryGroup { name: "g1".into(), levels: vec!["a".into(), "b".into(), "c".into()] },
        ],
        variables: (0..vars).map(|v| format!("v{v}")).collect(),
        t_max: rng.random_range(2..5usize),
    }
}

fn random_samples(
    rng: &mut impl Rng,
    schema: &WindowSchema,
    n: usize,
    secondary_share: f64,
) -> Result<Vec<SampleWindow>> {
    (0..n)
        .map(|i| {
            let length = rng.random_range(1..=schema.t_max);
            let rows =
                (0..length).map(|_| (0..schema.n_vars()).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
            let cats = schema.group_sizes().iter().map(|&g| rng.random_range(0..g)).collect();
            let pos = rng.random_bool(secondary_share);
            let gaps = pos.then(|| (rng.random_range(0.1..2.0), rng.random_range(0.1..3.0)));
            Ok(SampleWindow::from_active(format!("s{i}"), format!("c{i}"), cats, rows, schema.t_max)?
                .with_labels(pos, gaps))
        })
        .collect()
}

fn tiny_gan(rng: &mut impl Rng) -> GanArchitecture {
    GanArchitecture {
        noise_dim: rng.random_range(2..4),
        pass_noise_dim: rng.random_range(1..3),
        static_hidden: vec![rng.random_range(2..5)],
        lstm_hidden: rng.random_range(2..4),
        disc_hidden: vec![rng.random_range(2..5)],
        s: rng.random_range(1..4),
        pseudo_in_d1: true,
        pseudo_in_d2: rng.random_bool(0.5),
    }
}

/// A tiny GAN with its real batch and noise, ready for the joint objective.
pub struct JointFixture {
    pub model: GanModel,
    pub real: crate::vargan::GanBatch,
    pub noise: crate::vargan::GanNoise,
    pub alpha: f64,
}

pub fn joint_fixture(seed: u64) -> Result<JointFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = checking_schema(&mut rng);
    let batch = rng.random_range(2..4usize);
    let samples: Vec<SampleWindow> = random_samples(&mut rng, &schema, batch, 1.0)?
        .iter()
        .map(|s| normalize_per_variable(s).map(|(n, _)| n))
        .collect::<Result<_>>()?;
    let arch = tiny_gan(&mut rng);
    let range = pseudo_range(&samples)?;
    let refs: Vec<&SampleWindow> = samples.iter().collect();
    kink_free(
        || {
            let model = GanModel::new(arch.clone(), schema.clone(), range.clone(), rng.random())?;
            let real = model.real_batch(&refs)?;
            let noise = model.sample_noise(&mut rng, batch);
            Ok(JointFixture { model, real, noise, alpha: rng.random_range(0.1..2.0) })
        },
        |f| {
            let mut t = Tape::with_params(&f.model.store);
            f.model.joint_objective(&mut t, &f.real, &f.noise, f.alpha)?;
            Ok(t.kink_margin())
        },
    )
}

/// The joint objective `α·L1 + L2` with gradients flowing into the static
/// generator, the LSTM generator and both discriminators.
pub fn joint_loss_case(seed: u64) -> Result<GradCheckReport> {
    let f = joint_fixture(seed)?;
    composite_check(&f.model.store, |t, _| Ok(f.model.joint_objective(t, &f.real, &f.noise, f.alpha)?.0.combined))
}

/// The predictor's BCE + λ·MSE loss on a random mixed batch; the output
/// heads are randomized so nothing sits at its zero initialization.
pub fn predictor_loss_case(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = checking_schema(&mut rng);
    let heads = rng.random_range(1..3usize);
    let config = PredictorConfig {
        d_model: heads * rng.random_range(2..4usize) * 2,
        heads,
        layers: rng.random_range(1..3),
        feed_forward: rng.random_range(2..6),
        hidden: rng.random_range(2..5),
        dropout: 0.0,
        lambda: rng.random_range(0.5..2.0),
        ..PredictorConfig::default()
    };
    let n = rng.random_range(2..5);
    let mut samples = random_samples(&mut rng, &schema, n, 0.5)?;
    // At least one labelled positive so the regression term is present.
    samples[0] = samples[0].clone().with_labels(true, Some((0.7, 1.3)));
    let norm = vec![Extrema { min: 0.0, max: 10.0 }; schema.n_vars()];
    let refs: Vec<&SampleWindow> = samples.iter().collect();
    let model = kink_free(
        || {
            let mut model = PredictorModel::new(config.clone(), schema.clone(), norm.clone(), rng.random())?;
            model.randomize_heads(rng.random());
            Ok(model)
        },
        // Data errors surface here; inside the check only tape errors remain.
        |model| {
            let mut t = Tape::with_params(&model.store);
            model.total_loss(&mut t, &refs)?;
            Ok(t.kink_margin())
        },
    )?;
    composite_check(&model.store, |t, _| match model.total_loss(t, &refs) {
        Ok(v) => Ok(v),
        Err(crate::VfgError::Grad(g)) => Err(g),
        Err(other) => unreachable!("inputs were validated above: {other}"),
    })
}

/// Worst case over `cases` seeds for one check.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub cases: usize,
    pub max_rel_error: f64,
    pub worst_seed: u64,
    pub failures: Vec<String>,
}

impl SuiteEntry {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.failures.is_empty() && self.max_rel_error < tolerance
    }
}

fn run_cases(name: String, cases: usize, base: u64, f: impl Fn(u64) -> Result<GradCheckReport>) -> SuiteEntry {
    let mut entry = SuiteEntry { name, cases, max_rel_error: 0.0, worst_seed: base, failures: Vec::new() };
    for i in 0..cases as u64 {
        let seed = base.wrapping_add(i);
        match f(seed) {
            Ok(r) => {
                if let Some(msg) = r.failure {
                    entry.failures.push(format!("seed {seed}: {msg}"));
                }
                if r.max_rel_error > entry.max_rel_error || r.max_rel_error.is_nan() {
                    entry.max_rel_error = r.max_rel_error;
                    entry.worst_seed = seed;
                }
            }
            Err(e) => entry.failures.push(format!("seed {seed}: {e}")),
        }
    }
    entry
}

/// Every primitive, the LSTM cell, the joint objective and the predictor
/// loss, `cases` seeds each starting at `base`.
pub fn suite(cases: usize, base: u64) -> Vec<SuiteEntry> {
    let mut out: Vec<SuiteEntry> = Primitive::ALL
        .iter()
        .map(|&op| {
            let name = serde_json::to_value(op).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
            run_cases(name, cases, base, |s| primitive_case(op, s))
        })
        .collect();
    out.push(run_cases("lstm_cell".into(), cases, base, lstm_cell_case));
    out.push(run_cases("joint_loss".into(), cases, base, joint_loss_case));
    out.push(run_cases("predictor_loss".into(), cases, base, predictor_loss_case));
    out
}
