use rand::Rng;

use crate::layers::{Init, ParamSource};
use crate::tensor::{Graph, ParamId, ParamStore, TensorError, Var};

/// One unidirectional LSTM layer. Gate blocks in `[i, f, g, o]` order along
/// the columns of `wx`, `wh` and `b`.
#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmLayer {
    pub(crate) fn build<R: Rng>(
        src: &mut ParamSource<'_, R>,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self, TensorError> {
        Ok(Self {
            wx: src.param(&format!("{name}.wx"), [input, 4 * hidden], Init::Uniform { fan_in: input })?,
            wh: src.param(&format!("{name}.wh"), [hidden, 4 * hidden], Init::Uniform { fan_in: hidden })?,
            b: src.param(&format!("{name}.b"), [1, 4 * hidden], Init::LstmBias { fan_in: input, hidden })?,
            input,
            hidden,
        })
    }

    /// One step. With no previous state the recurrent product is skipped,
    /// which equals multiplying by the zero initial state.
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        prev: Option<(Var, Var)>,
    ) -> Result<(Var, Var), TensorError> {
        let h = self.hidden;
        let wx = g.param(store, self.wx);
        let b = g.param(store, self.b);
        let mut z = g.matmul(x, wx)?;
        if let Some((h_prev, _)) = prev {
            let wh = g.param(store, self.wh);
            let r = g.matmul(h_prev, wh)?;
            z = g.add(z, r)?;
        }
        let z = g.add(z, b)?;
        let zi = g.slice(z, 1, 0, h)?;
        let zf = g.slice(z, 1, h, h)?;
        let zg = g.slice(z, 1, 2 * h, h)?;
        let zo = g.slice(z, 1, 3 * h, h)?;
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let cand = g.tanh(zg);
        let o = g.sigmoid(zo);
        let ig = g.multiply(i, cand)?;
        let c = match prev {
            Some((_, c_prev)) => {
                let fc = g.multiply(f, c_prev)?;
                g.add(fc, ig)?
            }
            None => ig,
        };
        let tc = g.tanh(c);
        let h_new = g.multiply(o, tc)?;
        Ok((h_new, c))
    }

    /// Runs the layer over `xs` (each `[B, input]`) from a zero state.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, xs: &[Var]) -> Result<Vec<Var>, TensorError> {
        let mut state = None;
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.step(g, store, x, state)?;
            out.push(s.0);
            state = Some(s);
        }
        Ok(out)
    }
}

/// Stacked layers; layer `l+1` consumes the outputs of layer `l`.
pub fn lstm_stack(
    g: &mut Graph,
    store: &ParamStore,
    layers: &[LstmLayer],
    xs: &[Var],
) -> Result<Vec<Var>, TensorError> {
    if xs.is_empty() {
        return Err(TensorError::Invalid { op: "lstm", reason: "empty sequence".into() });
    }
    let mut seq = xs.to_vec();
    for layer in layers {
        seq = layer.forward(g, store, &seq)?;
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check_params, GradCheckOptions, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(store: &mut ParamStore, input: usize, hidden: usize) -> LstmLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        LstmLayer::build(&mut ParamSource::Create { store, rng: &mut rng }, "l", input, hidden).unwrap()
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut store = ParamStore::new();
        let l = layer(&mut store, 3, 2);
        assert_eq!(&store.get(l.b).data()[2..4], &[1.0, 1.0]);
    }

    #[test]
    fn single_step_matches_closed_form() {
        // Hidden size 1, input size 1: every gate is a scalar function of x.
        let mut store = ParamStore::new();
        let l = layer(&mut store, 1, 1);
        let (wx, b) = (store.get(l.wx).to_vec(), store.get(l.b).to_vec());
        let x = 0.7;
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sig(wx[0] * x + b[0]);
        let cand = (wx[2] * x + b[2]).tanh();
        let o = sig(wx[3] * x + b[3]);
        let expected = o * (i * cand).tanh();
        let mut g = Graph::new();
        let xv = g.constant(Tensor::scalar(x).reshape(&[1, 1]).unwrap());
        let (h, _) = l.step(&mut g, &store, xv, None).unwrap();
        assert!((g.value(h).item() - expected).abs() < 1e-14);
    }

    #[test]
    fn cell_gradient_matches_finite_differences() {
        let mut store = ParamStore::new();
        let l = layer(&mut store, 3, 2);
        let xs: Vec<Tensor> =
            (0..3).map(|t| Tensor::uniform(&[2, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(10 + t))).collect();
        let report = grad_check_params(
            &store,
            |g, s| {
                let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
                let hs = l.forward(g, s, &vars)?;
                let all = g.concat(&hs, 0)?;
                let sq = g.multiply(all, all)?;
                Ok::<_, TensorError>(g.mean(sq))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}
