//! Layer helpers that record onto a tape with parameters from [`NetParams`].

use std::collections::BTreeMap;

use crate::autodiff::{Grads, Real, Tape, Tensor, Var};

use super::{NetParams, ParamGrads, LRELU_SLOPE};

pub(crate) struct Builder<'a, R> {
    pub tape: Tape<R>,
    params: &'a NetParams,
    /// Parameter index → leaf, created on first use.
    leaves: BTreeMap<usize, Var>,
}

impl<'a, R: Real> Builder<'a, R> {
    pub fn new(params: &'a NetParams) -> Self {
        Self {
            tape: Tape::new(),
            params,
            leaves: BTreeMap::new(),
        }
    }

    pub fn param(&mut self, name: &str) -> Var {
        let i = self
            .params
            .position(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        if let Some(&v) = self.leaves.get(&i) {
            return v;
        }
        let t = self.params.tensor(i);
        let v = self.tape.leaf(Tensor::from_f64(t.shape.clone(), &t.data));
        self.leaves.insert(i, v);
        v
    }

    pub fn input(&mut self, shape: Vec<usize>, data: &[f64]) -> Var {
        self.tape.leaf(Tensor::from_f64(shape, data))
    }

    /// `x [1, in] · W [in, out] + b`.
    pub fn linear(&mut self, x: Var, prefix: &str) -> Var {
        let w = self.param(&format!("{prefix}.w"));
        let b = self.param(&format!("{prefix}.b"));
        let y = self.tape.matmul(x, w);
        self.tape.add_row_bias(y, b)
    }

    pub fn lrelu(&mut self, x: Var) -> Var {
        self.tape.leaky_relu(x, LRELU_SLOPE)
    }

    /// Modulated convolution of `x [Cin, H, W]` with padding `k / 2`.
    ///
    /// The style `s = A(w)` scales the weights along their input axis; with
    /// `demod` each output filter is then renormalized to unit norm.
    pub fn modulated_conv(&mut self, x: Var, w_code: Var, prefix: &str, demod: bool) -> Var {
        let s = self.linear(w_code, &format!("{prefix}.affine"));
        let weight = self.param(&format!("{prefix}.w"));
        let k = self.tape.shape(weight)[2];
        let wm = self.tape.modulate(weight, s, demod);
        self.tape.conv2d(x, wm, 1, k / 2)
    }

    /// Parameter gradients in [`NetParams`] order.
    pub fn param_grads(&self, grads: &Grads<R>, part: impl Fn(R) -> f64) -> ParamGrads {
        let mut out = ParamGrads::zeros(self.params);
        for (&i, &v) in &self.leaves {
            if let Some(g) = grads.get(v) {
                out.grads[i] = Some(g.iter().map(|x| part(*x)).collect());
            }
        }
        out
    }
}
