//! Central finite-difference gradient checks.
//!
//! The error for one tensor is `max_k |analytic_k − numeric_k| / max(max_k |analytic_k|, max_k |numeric_k|)`,
//! i.e. the worst entry relative to the tensor's largest gradient magnitude. Entries whose
//! gradients are all below `1e-10` in both estimates count as exact.

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub step: f64,
    /// Check at most this many evenly strided entries per tensor (`0` = all).
    pub max_per_tensor: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            step: 1e-5,
            max_per_tensor: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    /// `(tensor label, relative error)` for every checked tensor.
    pub per_tensor: Vec<(String, f64)>,
}

impl CheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_tensor.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

fn indices(n: usize, max: usize) -> Vec<usize> {
    if max == 0 || n <= max {
        return (0..n).collect();
    }
    let stride = n as f64 / max as f64;
    (0..max).map(|i| (i as f64 * stride) as usize).collect()
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale < 1e-10 {
        return 0.0;
    }
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Checks gradients of a scalar function with respect to its input tensors.
pub fn check_inputs<F>(inputs: &[Tensor], opts: CheckOptions, f: F) -> Result<CheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut scratch = ParamStore::new();
    let eval = |xs: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok((g, vars, loss))
    };
    let (g, vars, loss) = eval(inputs)?;
    let grads = g.backward(loss, &mut scratch)?;
    let mut per_tensor = Vec::new();
    for (ti, x) in inputs.iter().enumerate() {
        let idx = indices(x.len(), opts.max_per_tensor);
        let full = grads
            .get(vars[ti])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.shape()));
        let analytic: Vec<f64> = idx.iter().map(|&k| full.data()[k]).collect();
        let mut numeric = Vec::with_capacity(idx.len());
        let mut work = inputs.to_vec();
        for &k in &idx {
            let orig = work[ti].data()[k];
            work[ti].data_mut()[k] = orig + opts.step;
            let (g1, _, l1) = eval(&work)?;
            work[ti].data_mut()[k] = orig - opts.step;
            let (g2, _, l2) = eval(&work)?;
            work[ti].data_mut()[k] = orig;
            numeric.push((g1.value(l1).item() - g2.value(l2).item()) / (2.0 * opts.step));
        }
        per_tensor.push((format!("input{ti}"), rel_err(&analytic, &numeric)));
    }
    Ok(CheckReport { per_tensor })
}

/// Checks gradients of a scalar function with respect to every trainable parameter in `store`
/// whose name starts with `prefix`.
pub fn check_params<F>(store: &mut ParamStore, prefix: &str, opts: CheckOptions, f: F) -> Result<CheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    g.backward(loss, store)?;
    let names: Vec<String> = store
        .iter()
        .filter(|p| !p.frozen && p.name.starts_with(prefix))
        .map(|p| p.name.clone())
        .collect();
    let mut per_tensor = Vec::new();
    for name in names {
        let id = store.id(&name).expect("name taken from store");
        let n = store.get(id).value.len();
        let idx = indices(n, opts.max_per_tensor);
        let analytic: Vec<f64> = idx.iter().map(|&k| store.get(id).grad.data()[k]).collect();
        let mut numeric = Vec::with_capacity(idx.len());
        for &k in &idx {
            let orig = store.get(id).value.data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + opts.step;
            let mut g1 = Graph::new();
            let l1 = f(&mut g1, store)?;
            let up = g1.value(l1).item();
            store.get_mut(id).value.data_mut()[k] = orig - opts.step;
            let mut g2 = Graph::new();
            let l2 = f(&mut g2, store)?;
            let down = g2.value(l2).item();
            store.get_mut(id).value.data_mut()[k] = orig;
            numeric.push((up - down) / (2.0 * opts.step));
        }
        per_tensor.push((name, rel_err(&analytic, &numeric)));
    }
    store.zero_grad();
    Ok(CheckReport { per_tensor })
}

/// Runs the finite-difference check over every differentiable graph operation on small random
/// inputs. Returns `(op name, relative error)` pairs.
pub fn op_suite(seed: u64) -> Result<Vec<(String, f64)>> {
    use super::{NormStats, PoolKind};
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rand_t = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    // fixed weights for turning any output into a scalar with non-uniform gradients
    fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
        let n = g.value(y).len();
        let w: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 0.37 + seed as f64).sin()).collect();
        let w = g.constant(Tensor::new(g.shape(y), w)?);
        let p = g.mul(y, w)?;
        Ok(g.sum(p))
    }
    type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;
    let cases: Vec<(&str, Vec<Tensor>, OpFn)> = vec![
        ("matmul", vec![rand_t(&[3, 4]), rand_t(&[4, 5])], Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("bmm", vec![rand_t(&[2, 3, 4]), rand_t(&[2, 4, 2])], Box::new(|g, v| g.bmm(v[0], v[1]))),
        ("permute", vec![rand_t(&[2, 3, 4])], Box::new(|g, v| g.permute(v[0], &[2, 0, 1]))),
        ("reshape", vec![rand_t(&[2, 6])], Box::new(|g, v| g.reshape(v[0], &[3, 4]))),
        ("add", vec![rand_t(&[3, 3]), rand_t(&[3, 3])], Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", vec![rand_t(&[3, 3]), rand_t(&[3, 3])], Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", vec![rand_t(&[3, 3]), rand_t(&[3, 3])], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("scale", vec![rand_t(&[5])], Box::new(|g, v| Ok(g.scale(v[0], -2.5)))),
        ("add_scalar", vec![rand_t(&[5])], Box::new(|g, v| Ok(g.add_scalar(v[0], 0.7)))),
        ("add_trailing", vec![rand_t(&[2, 3, 4]), rand_t(&[3, 4])], Box::new(|g, v| g.add_trailing(v[0], v[1]))),
        ("mul_trailing", vec![rand_t(&[2, 3, 4]), rand_t(&[4])], Box::new(|g, v| g.mul_trailing(v[0], v[1]))),
        ("linear", vec![rand_t(&[2, 3, 4]), rand_t(&[4, 5]), rand_t(&[5])], Box::new(|g, v| g.linear(v[0], v[1], Some(v[2])))),
        ("conv1d", vec![rand_t(&[2, 3, 9]), rand_t(&[4, 3, 5]), rand_t(&[4])], Box::new(|g, v| g.conv1d(v[0], v[1], v[2], 2))),
        ("conv1d_nopad", vec![rand_t(&[3, 7]), rand_t(&[2, 3, 3]), rand_t(&[2])], Box::new(|g, v| g.conv1d(v[0], v[1], v[2], 0))),
        ("max_pool", vec![rand_t(&[2, 3, 8])], Box::new(|g, v| g.pool1d(v[0], PoolKind::Max, 2))),
        ("avg_pool", vec![rand_t(&[2, 3, 8])], Box::new(|g, v| g.pool1d(v[0], PoolKind::Avg, 4))),
        ("relu", vec![rand_t(&[10])], Box::new(|g, v| Ok(g.relu(v[0])))),
        ("gelu", vec![rand_t(&[10])], Box::new(|g, v| Ok(g.gelu(v[0])))),
        ("tanh", vec![rand_t(&[10])], Box::new(|g, v| Ok(g.tanh(v[0])))),
        ("sigmoid", vec![rand_t(&[10])], Box::new(|g, v| Ok(g.sigmoid(v[0])))),
        ("square", vec![rand_t(&[10])], Box::new(|g, v| Ok(g.square(v[0])))),
        ("complex_abs", vec![rand_t(&[6]), rand_t(&[6])], Box::new(|g, v| g.complex_abs(v[0], v[1], 1e-12))),
        ("atan2", vec![rand_t(&[6]), rand_t(&[6])], Box::new(|g, v| g.atan2(v[0], v[1]))),
        ("softmax_last", vec![rand_t(&[3, 5])], Box::new(|g, v| g.softmax(v[0], 1))),
        ("softmax_first", vec![rand_t(&[3, 5])], Box::new(|g, v| g.softmax(v[0], 0))),
        ("layer_norm", vec![rand_t(&[3, 6]), rand_t(&[6]), rand_t(&[6])], Box::new(|g, v| g.layer_norm(v[0], v[1], v[2]))),
        (
            "batch_norm_train",
            vec![rand_t(&[3, 2, 5]), rand_t(&[2]), rand_t(&[2])],
            Box::new(|g, v| Ok(g.batch_norm(v[0], v[1], v[2], NormStats::Batch)?.0)),
        ),
        (
            "batch_norm_eval",
            vec![rand_t(&[3, 2, 5]), rand_t(&[2]), rand_t(&[2])],
            Box::new(|g, v| {
                let (mean, var) = ([0.1, -0.2], [0.5, 2.0]);
                Ok(g.batch_norm(v[0], v[1], v[2], NormStats::Running { mean: &mean, var: &var })?.0)
            }),
        ),
        ("dropout", vec![rand_t(&[20])], Box::new(|g, v| Ok(g.dropout(v[0], 0.3, true, 11)))),
        ("mean_axis", vec![rand_t(&[2, 3, 4])], Box::new(|g, v| g.mean_axis(v[0], 1))),
        ("std_norm", vec![rand_t(&[3, 7])], Box::new(|g, v| g.std_norm(v[0]))),
        ("cosine_matrix", vec![rand_t(&[3, 6]), rand_t(&[2, 6])], Box::new(|g, v| g.cosine_matrix(v[0], v[1], 1e-8))),
        ("cosine_matrix_batched", vec![rand_t(&[2, 3, 6]), rand_t(&[2, 2, 6])], Box::new(|g, v| g.cosine_matrix(v[0], v[1], 1e-8))),
        ("mse", vec![rand_t(&[4, 3]), rand_t(&[4, 3])], Box::new(|g, v| g.mse(v[0], v[1]))),
        ("mean", vec![rand_t(&[4, 3])], Box::new(|g, v| Ok(g.mean(v[0])))),
    ];
    let mut out = Vec::with_capacity(cases.len());
    for (i, (name, inputs, op)) in cases.into_iter().enumerate() {
        let report = check_inputs(&inputs, CheckOptions::default(), |g, v| {
            let y = op(g, v)?;
            if g.value(y).len() == 1 {
                Ok(y)
            } else {
                project(g, y, i as u64)
            }
        })?;
        out.push((name.to_string(), report.max_rel_err()));
    }
    Ok(out)
}
