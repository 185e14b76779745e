//! Small parameterized building blocks shared by the encoders and the decoder.

use rand::Rng;

use crate::tensor::{Graph, ParamId, ParamStore, Tensor, TensorError, Var};

/// How a parameter is initialized when it is first created.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    /// `uniform(-s, s)` with `s = 1/sqrt(fan_in)`.
    Uniform {
        fan_in: usize,
    },
    Const(f64),
    /// LSTM bias `[1, 4h]` in gate order input, forget, candidate, output:
    /// forget block set to 1, the rest uniform.
    LstmBias {
        fan_in: usize,
        hidden: usize,
    },
}

/// Either creates parameters (fresh model) or looks them up by name (loaded model).
pub(crate) enum ParamSource<'a, R: Rng> {
    Create { store: &'a mut ParamStore, rng: &'a mut R },
    Bind { store: &'a ParamStore },
}

impl<R: Rng> ParamSource<'_, R> {
    pub(crate) fn param(&mut self, name: &str, shape: [usize; 2], init: Init) -> Result<ParamId, TensorError> {
        match self {
            ParamSource::Create { store, rng } => {
                let t = match init {
                    Init::Uniform { fan_in } => Tensor::uniform(&shape, 1.0 / (fan_in as f64).sqrt(), *rng),
                    Init::Const(c) => Tensor::full(&shape, c),
                    Init::LstmBias { fan_in, hidden } => {
                        let u = Tensor::uniform(&shape, 1.0 / (fan_in as f64).sqrt(), *rng);
                        let mut d = u.to_vec();
                        d[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
                        u.with_data(d)?
                    }
                };
                store.add(name, t)
            }
            ParamSource::Bind { store } => {
                let id = store
                    .id(name)
                    .ok_or_else(|| TensorError::Invalid { op: "bind", reason: format!("missing parameter {name}") })?;
                if store.get(id).shape() != shape {
                    return Err(TensorError::ShapeMismatch {
                        op: "bind",
                        shapes: vec![store.get(id).shape().to_vec(), shape.to_vec()],
                    });
                }
                Ok(id)
            }
        }
    }
}

/// `x W (+ b)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub(crate) fn build<R: Rng>(
        src: &mut ParamSource<'_, R>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
    ) -> Result<Self, TensorError> {
        let weight = src.param(&format!("{name}.w"), [input, output], Init::Uniform { fan_in: input })?;
        let bias = if bias {
            Some(src.param(&format!("{name}.b"), [1, output], Init::Uniform { fan_in: input })?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Two linear layers with a GELU between them.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub(crate) fn build<R: Rng>(
        src: &mut ParamSource<'_, R>,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
    ) -> Result<Self, TensorError> {
        Ok(Self {
            first: Linear::build(src, &format!("{name}.0"), input, hidden, true)?,
            second: Linear::build(src, &format!("{name}.1"), hidden, output, true)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let h = self.first.forward(g, store, x)?;
        let h = g.gelu(h);
        self.second.forward(g, store, h)
    }
}
