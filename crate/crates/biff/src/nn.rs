//! Small building blocks over the tape: linear layers, MLPs, layer-norm
//! parameter pairs and seeded initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{ParamId, ParamSet, Tape, Tensor, TensorError, TensorId};

pub const LN_EPS: f64 = 1e-5;

/// Xavier-uniform matrix parameter without bias.
pub fn mat(ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, din: usize, dout: usize) -> ParamId {
    let limit = (6.0 / (din + dout) as f64).sqrt();
    let data: Vec<f64> = (0..din * dout).map(|_| rng.gen_range(-limit..limit)).collect();
    ps.add(name, Tensor::new(data, &[din, dout]).expect("init shape"))
}

/// A linear layer with bias.
#[derive(Debug, Clone, Copy)]
pub struct Lin {
    pub w: ParamId,
    pub b: ParamId,
}

impl Lin {
    pub fn new(ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, din: usize, dout: usize) -> Lin {
        let w = mat(ps, rng, &format!("{name}.w"), din, dout);
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[dout]));
        Lin { w, b }
    }

    pub fn apply(&self, tape: &mut Tape, ps: &ParamSet, x: TensorId) -> Result<TensorId, TensorError> {
        let w = tape.param(ps, self.w);
        let b = tape.param(ps, self.b);
        tape.linear(x, w, Some(b))
    }
}

/// Stacked linear layers with ReLU between them; `relu_last` also applies a
/// ReLU after the final layer (PointNet-style feature stacks do, regression
/// heads do not).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Lin>,
    pub relu_last: bool,
}

impl Mlp {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        dims: &[usize],
        relu_last: bool,
    ) -> Mlp {
        assert!(dims.len() >= 2, "mlp needs at least one layer");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Lin::new(ps, rng, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Mlp { layers, relu_last }
    }

    pub fn apply(&self, tape: &mut Tape, ps: &ParamSet, x: TensorId) -> Result<TensorId, TensorError> {
        let mut h = x;
        let n = self.layers.len();
        for (i, lin) in self.layers.iter().enumerate() {
            h = lin.apply(tape, ps, h)?;
            if i + 1 < n || self.relu_last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

/// gamma/beta pair for layer normalization.
#[derive(Debug, Clone, Copy)]
pub struct LnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LnParams {
    pub fn new(ps: &mut ParamSet, name: &str, d: usize) -> LnParams {
        let gamma = ps.add(format!("{name}.g"), Tensor::new(vec![1.0; d], &[d]).expect("ln init"));
        let beta = ps.add(format!("{name}.b"), Tensor::zeros(&[d]));
        LnParams { gamma, beta }
    }

    pub fn apply(&self, tape: &mut Tape, ps: &ParamSet, x: TensorId) -> Result<TensorId, TensorError> {
        let g = tape.param(ps, self.gamma);
        let b = tape.param(ps, self.beta);
        tape.layer_norm(x, g, b, LN_EPS)
    }
}

/// Residual connection followed by layer norm: `LN(x + sub)`.
pub fn residual_ln(
    tape: &mut Tape,
    ps: &ParamSet,
    x: TensorId,
    sub: TensorId,
    ln: &LnParams,
) -> Result<TensorId, TensorError> {
    let sum = tape.add(x, sub)?;
    ln.apply(tape, ps, sum)
}
