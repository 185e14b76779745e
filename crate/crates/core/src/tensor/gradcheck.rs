use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Tensor, TensorError, Var};

/// Settings for central finite-difference gradient checks.
#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Pass iff the maximum relative error is at most this.
    pub tolerance: f64,
    /// Relative error is `|a - n| / max(|a|, |n|, floor)`; the floor keeps
    /// near-zero gradient entries from dividing by rounding noise.
    pub floor: f64,
    /// Check at most this many randomly chosen coordinates per tensor.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-6, tolerance: 1e-5, floor: 1e-3, max_coords: None, seed: 0 }
    }
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self { tolerance, ..Self::default() }
    }

    pub fn sampled(max_coords: usize, seed: u64) -> Self {
        Self { max_coords: Some(max_coords), seed, ..Self::default() }
    }
}

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Number of coordinates compared.
    pub checked: usize,
    /// `(tensor, coordinate, analytic, numeric)` at the worst relative error.
    pub worst: Option<(String, usize, f64, f64)>,
    pub tolerance: f64,
    pub passed: bool,
}

struct Tracker {
    opts: GradCheckOptions,
    max_rel: f64,
    max_abs: f64,
    checked: usize,
    worst: Option<(String, usize, f64, f64)>,
}

impl Tracker {
    fn new(opts: &GradCheckOptions) -> Self {
        Self { opts: opts.clone(), max_rel: 0.0, max_abs: 0.0, checked: 0, worst: None }
    }

    fn record(&mut self, name: &str, index: usize, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(self.opts.floor);
        self.checked += 1;
        self.max_abs = self.max_abs.max(abs);
        if rel > self.max_rel || self.worst.is_none() || rel.is_nan() {
            self.max_rel = if rel.is_nan() { f64::INFINITY } else { rel };
            self.worst = Some((name.to_string(), index, analytic, numeric));
        }
    }

    fn coords(&self, numel: usize, salt: u64) -> Vec<usize> {
        match self.opts.max_coords {
            Some(k) if k < numel => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut idx = sample(&mut rng, numel, k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..numel).collect(),
        }
    }

    fn finish(self) -> GradCheckReport {
        GradCheckReport {
            passed: self.max_rel <= self.opts.tolerance,
            max_rel_error: self.max_rel,
            max_abs_error: self.max_abs,
            checked: self.checked,
            worst: self.worst,
            tolerance: self.opts.tolerance,
        }
    }
}

fn perturbed(t: &Tensor, index: usize, delta: f64) -> Tensor {
    let mut data = t.to_vec();
    data[index] += delta;
    t.with_data(data).expect("same shape")
}

/// Checks the gradient of a scalar function of one tensor.
pub fn grad_check<F>(f: F, point: &Tensor, tolerance: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, TensorError>,
{
    grad_check_inputs(|g, xs| f(g, xs[0]), std::slice::from_ref(point), &GradCheckOptions::with_tolerance(tolerance))
}

/// Checks the gradient of a scalar function of several tensors.
pub fn grad_check_inputs<F, E>(f: F, points: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let eval = |pts: &[Tensor]| -> Result<f64, E> {
        let mut g = Graph::new();
        let vars: Vec<Var> = pts.iter().map(|p| g.input(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = points.iter().map(|p| g.input(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let mut tracker = Tracker::new(opts);
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for i in tracker.coords(points[ti].numel(), ti as u64) {
            let mut pts = points.to_vec();
            pts[ti] = perturbed(&points[ti], i, opts.step);
            let plus = eval(&pts)?;
            pts[ti] = perturbed(&points[ti], i, -opts.step);
            let minus = eval(&pts)?;
            let numeric = (plus - minus) / (2.0 * opts.step);
            tracker.record(&format!("input{ti}"), i, analytic.data()[i], numeric);
        }
    }
    Ok(tracker.finish())
}

/// Checks gradients of a scalar loss with respect to every trainable entry of `store`.
pub fn grad_check_params<F, E>(store: &ParamStore, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let analytic: std::collections::HashMap<_, _> = g.backward(out)?.params().into_iter().collect();
    let mut tracker = Tracker::new(opts);
    let mut work = store.clone();
    for id in store.ids().filter(|&id| store.is_trainable(id)) {
        let original = store.get(id).clone();
        let grad = analytic.get(&id).cloned().unwrap_or_else(|| Tensor::zeros(original.shape()));
        for i in tracker.coords(original.numel(), id.index() as u64) {
            work.set(id, perturbed(&original, i, opts.step))?;
            let mut gp = Graph::new();
            let vp = f(&mut gp, &work)?;
            let plus = gp.value(vp).item();
            work.set(id, perturbed(&original, i, -opts.step))?;
            let mut gm = Graph::new();
            let vm = f(&mut gm, &work)?;
            let minus = gm.value(vm).item();
            let numeric = (plus - minus) / (2.0 * opts.step);
            tracker.record(store.name(id), i, grad.data()[i], numeric);
        }
        work.set(id, original)?;
    }
    Ok(tracker.finish())
}
