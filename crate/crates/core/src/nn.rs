//! Network building blocks over the autodiff tape.

use grad::{DenseArray, ParamId, ParamStore, Tape, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VfgError};

/// Uniform Glorot initialization for a `fan_in × fan_out` weight.
pub fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> DenseArray {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
    DenseArray::new(vec![fan_in, fan_out], data).expect("positive dims")
}

/// A `rows × cols` matrix of standard-normal draws.
pub fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DenseArray {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DenseArray::new(vec![rows, cols], data).expect("positive dims")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> grad::Result<Var> {
        Ok(match self {
            Activation::Relu => tape.relu(x)?,
            Activation::LeakyRelu => tape.leaky_relu(x, 0.2)?,
            Activation::Tanh => tape.tanh(x)?,
        })
    }
}

/// Affine layer `x · W + b` over row-batched inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{name}.w"), glorot(rng, fan_in, fan_out));
        let b = store.add(format!("{name}.b"), DenseArray::zeros(&[1, fan_out]));
        Self { w, b, fan_in, fan_out }
    }

    /// A layer with all-zero weights and bias.
    pub fn zeroed(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), DenseArray::zeros(&[fan_in, fan_out]));
        let b = store.add(format!("{name}.b"), DenseArray::zeros(&[1, fan_out]));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> grad::Result<Var> {
        let xw = tape.matmul(x, tape.param(self.w))?;
        tape.add_row(xw, tape.param(self.b))
    }
}

/// Feed-forward stack: hidden layers with an activation, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers, activation }
    }

    pub fn forward(&self, tape: &mut Tape, mut x: Var) -> grad::Result<Var> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, x)?;
            if i < last {
                x = self.activation.apply(tape, x)?;
            }
        }
        Ok(x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }
}

/// LSTM cell with fused gate weights in (input, forget, cell, output) order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmCell {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{name}.w"), glorot(rng, input, 4 * hidden));
        let u = store.add(format!("{name}.u"), glorot(rng, hidden, 4 * hidden));
        // Forget-gate bias starts at 1 so early training keeps memory.
        let bias = (0..4 * hidden).map(|i| if (hidden..2 * hidden).contains(&i) { 1.0 } else { 0.0 }).collect();
        let b = store.add(format!("{name}.b"), DenseArray::new(vec![1, 4 * hidden], bias).expect("positive dims"));
        Self { w, u, b, input, hidden }
    }

    /// One step: returns the new (h, c).
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> grad::Result<(Var, Var)> {
        let hd = self.hidden;
        let xw = tape.matmul(x, tape.param(self.w))?;
        let hu = tape.matmul(h, tape.param(self.u))?;
        let pre = tape.add(xw, hu)?;
        let pre = tape.add_row(pre, tape.param(self.b))?;
        let i = tape.slice(pre, 1, 0, hd)?;
        let f = tape.slice(pre, 1, hd, hd)?;
        let g = tape.slice(pre, 1, 2 * hd, hd)?;
        let o = tape.slice(pre, 1, 3 * hd, hd)?;
        let (i, f, g, o) = (tape.sigmoid(i)?, tape.sigmoid(f)?, tape.tanh(g)?, tape.sigmoid(o)?);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_new = tape.add(fc, ig)?;
        let tc = tape.tanh(c_new)?;
        let h_new = tape.mul(o, tc)?;
        Ok((h_new, c_new))
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w, self.u, self.b]
    }
}

/// Replaces the values of `fresh` (a freshly constructed model's store) with
/// those of `loaded`, requiring identical names and shapes in order.
pub fn adopt_params(fresh: &mut ParamStore, loaded: &ParamStore) -> Result<()> {
    if fresh.len() != loaded.len() {
        return Err(VfgError::data(format!(
            "checkpoint holds {} parameters, model expects {}",
            loaded.len(),
            fresh.len()
        )));
    }
    let pairs: Vec<_> = fresh.ids().zip(loaded.ids()).collect();
    for (f, l) in pairs {
        if fresh.name(f) != loaded.name(l) || fresh.get(f).shape() != loaded.get(l).shape() {
            return Err(VfgError::data(format!(
                "checkpoint parameter {} {:?} does not match model parameter {} {:?}",
                loaded.name(l),
                loaded.get(l).shape(),
                fresh.name(f),
                fresh.get(f).shape()
            )));
        }
        fresh.set(f, loaded.get(l).clone())?;
    }
    Ok(())
}

/// A `rows × cols` constant with `value` everywhere.
pub fn constant(tape: &mut Tape, rows: usize, cols: usize, value: f64) -> Var {
    tape.input(DenseArray::full(&[rows, cols], value))
}

/// Multiplies each row of `x` (`n × m`) by the matching entry of the column
/// `col` (`n × 1`).
pub fn scale_rows(tape: &mut Tape, x: Var, col: Var, m: usize) -> grad::Result<Var> {
    let ones = tape.input(DenseArray::ones(&[1, m]));
    let wide = tape.matmul(col, ones)?;
    tape.mul(x, wide)
}

#[cfg(test)]
mod tests {
    use super::*;
    use grad::gradient_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lstm_cell_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "lstm", 3, 4, &mut rng);
        let x = normal_matrix(&mut rng, 2, 3);
        let h0 = normal_matrix(&mut rng, 2, 4);
        let c0 = normal_matrix(&mut rng, 2, 4);
        let w = normal_matrix(&mut rng, 2, 4);
        let report = gradient_check(&store, grad::FD_STEP, |tape, _| {
            let (x, h, c) = (tape.input(x.clone()), tape.input(h0.clone()), tape.input(c0.clone()));
            let (h1, c1) = cell.step(tape, x, h, c)?;
            let s = tape.add(h1, c1)?;
            let wv = tape.input(w.clone());
            let p = tape.mul(s, wv)?;
            tape.sum(p)
        })
        .unwrap();
        assert!(report.passed(1e-4), "{report:?}");
    }

    #[test]
    fn mlp_shapes_and_zeroed_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", 3, &[5, 4], 2, Activation::Relu, &mut rng);
        let z = Linear::zeroed(&mut store, "z", 2, 1);
        let mut tape = Tape::with_params(&store);
        let x = tape.input(DenseArray::ones(&[7, 3]));
        let y = mlp.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).shape(), &[7, 2]);
        let o = z.forward(&mut tape, y).unwrap();
        assert!(tape.value(o).data().iter().all(|&v| v == 0.0));
        assert_eq!(mlp.params().len(), 6);
    }

    #[test]
    fn adopt_rejects_mismatched_store() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = ParamStore::new();
        Linear::new(&mut a, "l", 2, 2, &mut rng);
        let mut b = ParamStore::new();
        Linear::new(&mut b, "l", 2, 3, &mut rng);
        assert!(adopt_params(&mut a, &b).is_err());
        let mut c = ParamStore::new();
        Linear::new(&mut c, "l", 2, 2, &mut rng);
        adopt_params(&mut a, &c).unwrap();
        assert_eq!(a.get(a.id_of("l.w").unwrap()), c.get(c.id_of("l.w").unwrap()));
    }
}
