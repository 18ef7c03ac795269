use super::{Graph, ParamStore, Rng, Tensor, Var};
use crate::error::{Error, Result};

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn eval_scalar(f: &impl Fn(&mut Graph, Var) -> Result<Var>, x: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let out = f(&mut g, v)?;
    let val = g.value(out);
    if !val.is_scalar() {
        return Err(Error::NonScalarLoss(val.shape().to_vec()));
    }
    let y = val.item();
    if y.is_nan() {
        return Err(Error::NonFinite("finite-diff-check: f(x) is NaN".into()));
    }
    Ok(y)
}

/// Compares the reverse-mode gradient of the scalar function `f` at `x`
/// with central differences of step `h`. Returns
/// `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
pub fn finite_diff_check(
    f: impl Fn(&mut Graph, Var) -> Result<Var>,
    x: &Tensor,
    h: f64,
) -> Result<f64> {
    if h <= 0.0 {
        return Err(Error::invalid("finite-diff-check", "step must be positive"));
    }
    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let out = f(&mut g, v)?;
    if g.value(out).item().is_nan() {
        return Err(Error::NonFinite("finite-diff-check: f(x) is NaN".into()));
    }
    let grads = g.backward(out)?;
    let analytic = grads.var(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig;
        worst = worst.max(rel_err(analytic.data()[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

/// Same check over every scalar of every parameter in `store`, where `f`
/// builds the loss from the store on a fresh graph.
pub fn finite_diff_check_params(
    f: impl Fn(&mut Graph, &ParamStore) -> Result<Var>,
    store: &ParamStore,
    h: f64,
) -> Result<f64> {
    if h <= 0.0 {
        return Err(Error::invalid("finite-diff-check", "step must be positive"));
    }
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        let y = g.value(out).item();
        if y.is_nan() {
            return Err(Error::NonFinite("finite-diff-check: loss is NaN".into()));
        }
        Ok(y)
    };
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let grads = g.backward(out)?;

    let mut probe = store.clone();
    let mut worst = 0.0f64;
    let names: Vec<String> = store.names().cloned().collect();
    for name in &names {
        let analytic = grads
            .param(name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(name).unwrap().shape()));
        for i in 0..analytic.numel() {
            let orig = store.get(name).unwrap().data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            worst = worst.max(rel_err(analytic.data()[i], (up - down) / (2.0 * h)));
        }
    }
    Ok(worst)
}

/// Named finite-difference results for every differentiable op, each
/// reduced to a scalar through a random weighting of its output.
pub fn op_suite(rng: &mut Rng, h: f64) -> Result<Vec<(&'static str, f64)>> {
    type OpFn = Box<dyn Fn(&mut Graph, Var) -> Result<Var>>;
    let mut u = |shape: &[usize], lo: f64, hi: f64| Tensor::uniform(shape, lo, hi, rng);
    let a34 = u(&[3, 4], -1.0, 1.0);
    let b43 = u(&[4, 3], -1.0, 1.0);
    let c34 = u(&[3, 4], -1.0, 1.0);
    let row4 = u(&[4], -1.0, 1.0);
    let col3 = u(&[3, 1], -1.0, 1.0);
    let pos34 = u(&[3, 4], 0.5, 2.0);
    let table = u(&[5, 3], -1.0, 1.0);
    let mask = Tensor::matrix(3, 4, vec![1., 1., 0., 1., 1., 0., 0., 1., 1., 1., 1., 1.])?;

    // Weighting tensors for every output shape used below.
    let mut weights = std::collections::HashMap::<Vec<usize>, Tensor>::new();
    for shape in [vec![3, 4], vec![3, 3], vec![4, 4], vec![6, 4], vec![3, 8], vec![3, 2], vec![3, 1], vec![4, 3], vec![3, 6], vec![4, 1]] {
        let w = u(&shape, -1.0, 1.0);
        weights.insert(shape, w);
    }
    let weighted = move |g: &mut Graph, y: Var| -> Result<Var> {
        let shape = g.value(y).shape().to_vec();
        if g.value(y).is_scalar() {
            return Ok(y);
        }
        let w = weights
            .get(&shape)
            .cloned()
            .ok_or_else(|| Error::invalid("op-suite", format!("no weights for {shape:?}")))?;
        let w = g.constant(w);
        let z = g.mul(y, w)?;
        g.sum(z)
    };
    let weighted = std::rc::Rc::new(weighted);

    let cases: Vec<(&'static str, Tensor, OpFn)> = vec![
        ("matmul/lhs", a34.clone(), { let b = b43.clone(); Box::new(move |g, x| { let b = g.constant(b.clone()); g.matmul(x, b) }) }),
        ("matmul/rhs", b43.clone(), { let a = a34.clone(); Box::new(move |g, x| { let a = g.constant(a.clone()); g.matmul(a, x) }) }),
        ("add", a34.clone(), { let c = c34.clone(); Box::new(move |g, x| { let c = g.constant(c.clone()); g.add(x, c) }) }),
        ("sub/lhs", a34.clone(), { let c = c34.clone(); Box::new(move |g, x| { let c = g.constant(c.clone()); g.sub(x, c) }) }),
        ("sub/rhs", a34.clone(), { let c = c34.clone(); Box::new(move |g, x| { let c = g.constant(c.clone()); g.sub(c, x) }) }),
        ("mul", a34.clone(), { let c = c34.clone(); Box::new(move |g, x| { let c = g.constant(c.clone()); g.mul(x, c) }) }),
        ("mul/self", a34.clone(), Box::new(|g, x| g.mul(x, x))),
        ("add_row/matrix", a34.clone(), { let r = row4.clone(); Box::new(move |g, x| { let r = g.constant(r.clone()); g.add_row(x, r) }) }),
        ("add_row/row", row4.clone(), { let a = a34.clone(); Box::new(move |g, x| { let a = g.constant(a.clone()); g.add_row(a, x) }) }),
        ("mul_col/matrix", a34.clone(), { let c = col3.clone(); Box::new(move |g, x| { let c = g.constant(c.clone()); g.mul_col(x, c) }) }),
        ("mul_col/col", col3.clone(), { let a = a34.clone(); Box::new(move |g, x| { let a = g.constant(a.clone()); g.mul_col(a, x) }) }),
        ("affine", a34.clone(), Box::new(|g, x| g.affine(x, -1.7, 0.3))),
        ("concat/axis0", a34.clone(), { let c = c34.clone(); Box::new(move |g, x| { let c = g.constant(c.clone()); g.concat(&[x, c], 0) }) }),
        ("concat/axis1", a34.clone(), { let c = c34.clone(); Box::new(move |g, x| { let c = g.constant(c.clone()); g.concat(&[c, x], 1) }) }),
        ("slice/axis1", a34.clone(), Box::new(|g, x| g.slice(x, 1, 1, 2))),
        ("slice/axis0", a34.clone(), Box::new(|g, x| { let s = g.slice(x, 0, 1, 2)?; g.concat(&[s, s], 1).and_then(|y| g.slice(y, 1, 0, 4)).and_then(|y| g.concat(&[y, y], 0)).and_then(|y| g.slice(y, 0, 0, 3)) })),
        ("sigmoid", a34.clone(), Box::new(|g, x| g.sigmoid(x))),
        ("tanh", a34.clone(), Box::new(|g, x| g.tanh(x))),
        ("exp", a34.clone(), Box::new(|g, x| g.exp(x))),
        ("log", pos34.clone(), Box::new(|g, x| g.log(x))),
        ("softmax", a34.clone(), Box::new(|g, x| g.softmax(x))),
        ("softmax/masked", a34.clone(), { let m = mask.clone(); Box::new(move |g, x| g.softmax_masked(x, Some(&m))) }),
        ("embedding", table.clone(), Box::new(|g, x| g.embedding(x, &[4, 0, 4, 2]))),
        ("sum", a34.clone(), Box::new(|g, x| g.sum(x))),
        ("mean", a34.clone(), Box::new(|g, x| g.mean(x))),
        ("sum_cols", a34.clone(), Box::new(|g, x| g.sum_cols(x))),
        ("gather_cols", a34.clone(), Box::new(|g, x| g.gather_cols(x, &[3, 0, 3]))),
        ("scatter_add_cols", a34.clone(), Box::new(|g, x| g.scatter_add_cols(x, &[0, 5, 5, 1, 2, 2, 2, 7, 6, 0, 3, 4], 8))),
        ("pad_cols", a34.clone(), Box::new(|g, x| g.pad_cols(x, 6))),
        ("select_rows", a34.clone(), Box::new(|g, x| g.select_rows(x, &[2, 0, 2, 1]))),
    ];

    let mut out = Vec::with_capacity(cases.len());
    for (name, x, op) in cases {
        let w = weighted.clone();
        let err = finite_diff_check(move |g, x| { let y = op(g, x)?; w(g, y) }, &x, h)?;
        out.push((name, err));
    }
    Ok(out)
}
