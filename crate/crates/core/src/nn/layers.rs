use rand::Rng;

use super::params::{Init, ParamId, ParamStore};
use super::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, t: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => t.relu(x),
            Activation::Tanh => t.tanh(x),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let w = store.add(
            format!("{name}.w"),
            &[output, input],
            Init::Glorot {
                fan_in: input,
                fan_out: output,
            },
            rng,
        );
        let b = store.add(format!("{name}.b"), &[output], Init::Zeros, rng);
        Linear { w, b, input, output }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let w = t.param(self.w);
        let b = t.param(self.b);
        t.linear(x, w, Some(b))
    }
}

/// Single linear layer followed by an activation.
#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub linear: Linear,
    pub activation: Activation,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        Embedding {
            linear: Linear::new(store, name, input, output, rng),
            activation,
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let y = self.linear.forward(t, x);
        self.activation.apply(t, y)
    }
}

/// Two-layer perceptron with a ReLU hidden layer.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Mlp {
            hidden: Linear::new(store, &format!("{name}.0"), input, hidden, rng),
            out: Linear::new(store, &format!("{name}.1"), hidden, output, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let h = self.hidden.forward(t, x);
        let h = t.relu(h);
        self.out.forward(t, h)
    }
}

/// Initial bias of the GRU update gate.
pub const UPDATE_GATE_BIAS: f64 = 1.0;

/// Gated recurrent unit:
///
/// ```text
/// r = σ(W_ir x + b_ir + W_hr h + b_hr)
/// u = σ(W_iu x + b_iu + W_hu h + b_hu)
/// n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − u) ⊙ n + u ⊙ h
/// ```
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    pub input_proj: Linear,
    pub hidden_proj: Linear,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let input_proj = Linear::new(store, &format!("{name}.input"), input, 3 * hidden, rng);
        // update gate starts at σ(1) ≈ 0.73 so the initial state is carried
        // through several steps instead of halving at each one
        store.get_mut(input_proj.b)[hidden..2 * hidden].fill(UPDATE_GATE_BIAS);
        GruCell {
            input_proj,
            hidden_proj: Linear::new(store, &format!("{name}.hidden"), hidden, 3 * hidden, rng),
            hidden,
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var, h: Var) -> Var {
        let d = self.hidden;
        let gx = self.input_proj.forward(t, x);
        let gh = self.hidden_proj.forward(t, h);
        let xr = t.slice_cols(gx, 0, d);
        let xu = t.slice_cols(gx, d, d);
        let xn = t.slice_cols(gx, 2 * d, d);
        let hr = t.slice_cols(gh, 0, d);
        let hu = t.slice_cols(gh, d, d);
        let hn = t.slice_cols(gh, 2 * d, d);
        let r = t.add(xr, hr);
        let r = t.sigmoid(r);
        let u = t.add(xu, hu);
        let u = t.sigmoid(u);
        let rh = t.mul(r, hn);
        let n = t.add(xn, rh);
        let n = t.tanh(n);
        // h' = n + u ⊙ (h − n)
        let diff = t.sub(h, n);
        let gated = t.mul(u, diff);
        t.add(n, gated)
    }
}
