//! Central-difference verification of reverse-mode gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::layers::{
    conv1d_forward, embedding_lookup, gru_forward, layer_norm, linear_forward, mse_loss, self_attention_forward,
    GruParams, GruWeights,
};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so components whose true
/// gradient is zero are judged by absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    scaled_relative_error(analytic, numeric, 1.0)
}

/// As [`relative_error`] with the floor raised in proportion to the
/// magnitude of the function value `f`. Central differences of `f` carry
/// roundoff near `ulp(f) / eps`, so gradients far below `|f|` cannot be
/// resolved to a relative tolerance and are judged by absolute error.
pub fn scaled_relative_error(analytic: f64, numeric: f64, f: f64) -> f64 {
    let floor = RELATIVE_FLOOR * f.abs().max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn scalar(g: &Graph, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(Error::ShapeError(format!(
            "gradient check needs a scalar output, got {:?}",
            t.shape()
        )));
    }
    Ok(t.item())
}

/// Worst relative error between the reverse-mode gradient of `f` at `x`
/// and central differences with step `eps`. `f` is evaluated on fresh
/// evaluation-mode graphs.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::eval();
    let xv = g.leaf(x.clone(), true);
    let y = f(&mut g, xv)?;
    let f0 = scalar(&g, y)?;
    let grads = g.backward(y)?;
    let zeros = vec![0.0; x.len()];
    let analytic = grads.get(xv).unwrap_or(&zeros).to_vec();

    let eval_at = |t: Tensor| -> Result<f64> {
        let mut g = Graph::eval();
        let v = g.leaf(t, true);
        let y = f(&mut g, v)?;
        scalar(&g, y)
    };
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval_at(plus)? - eval_at(minus)?) / (2.0 * eps);
        worst = worst.max(scaled_relative_error(analytic[i], numeric, f0));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Components skipped because the stencil crossed a kink.
    pub kinks: usize,
}

/// One-sided slopes that disagree by more than this fraction of their
/// size mean the stencil crossed a point where `f` is not differentiable
/// (a ReLU switching sign). A smooth `f` differs only by `eps * f''`.
pub const KINK_RATIO: f64 = 0.1;

/// True when the forward and backward slopes around `f0` disagree.
pub fn straddles_kink(fp: f64, f0: f64, fm: f64, eps: f64) -> bool {
    let (dp, dm) = ((fp - f0) / eps, (f0 - fm) / eps);
    let floor = RELATIVE_FLOOR * f0.abs().max(1.0);
    (dp - dm).abs() > KINK_RATIO * dp.abs().max(dm.abs()).max(floor)
}

/// Gradient check over every value of every parameter in `store`.
/// `f` builds the scalar loss on the given graph.
pub fn grad_check_params<F>(store: &ParamStore, f: F, eps: f64) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::eval();
    let y = f(&mut g, store)?;
    let f0 = scalar(&g, y)?;
    let grads = g.backward(y)?;
    let bound: Vec<(usize, Var)> = g.bound_params().collect();

    let mut work = store.clone();
    let mut out = Vec::with_capacity(store.len());
    for id in 0..store.len() {
        let n = store.tensor(id).len();
        let analytic: Vec<f64> = bound
            .iter()
            .find(|(pid, _)| *pid == id)
            .and_then(|(_, v)| grads.get(*v))
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; n]);
        let mut worst = 0.0f64;
        let mut kinks = 0;
        for i in 0..n {
            let orig = work.tensor(id).data()[i];
            work.tensor_mut(id).data_mut()[i] = orig + eps;
            let mut gp = Graph::eval();
            let yp = f(&mut gp, &work)?;
            let fp = scalar(&gp, yp)?;
            work.tensor_mut(id).data_mut()[i] = orig - eps;
            let mut gm = Graph::eval();
            let ym = f(&mut gm, &work)?;
            let fm = scalar(&gm, ym)?;
            work.tensor_mut(id).data_mut()[i] = orig;
            if straddles_kink(fp, f0, fm, eps) {
                kinks += 1;
                continue;
            }
            worst = worst.max(scaled_relative_error(analytic[i], (fp - fm) / (2.0 * eps), f0));
        }
        out.push(ParamCheck {
            name: store.name(id).to_string(),
            max_rel_error: worst,
            checked: n - kinks,
            kinks,
        });
    }
    Ok(out)
}

/// One named layer check over all of its inputs and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub layer: &'static str,
    pub max_rel_error: f64,
    pub checked: usize,
    pub kinks: usize,
}

type LayerFn = fn(&mut Graph, &ParamStore) -> Result<Var>;

fn p(g: &mut Graph, s: &ParamStore, name: &str) -> Var {
    g.param(s, s.id(name).expect("registered"))
}

/// Output contracted against the fixed `probe` tensor so that symmetric
/// outputs (softmax rows, normalized rows) still carry gradient.
fn contract(g: &mut Graph, s: &ParamStore, y: Var) -> Result<Var> {
    let r = p(g, s, "probe");
    let m = g.mul(y, r)?;
    Ok(g.sum(m))
}

fn linear_case(g: &mut Graph, s: &ParamStore) -> Result<Var> {
    let (x, w, b) = (p(g, s, "x"), p(g, s, "w"), p(g, s, "b"));
    let y = linear_forward(g, x, w, b)?;
    contract(g, s, y)
}

fn embedding_case(g: &mut Graph, s: &ParamStore) -> Result<Var> {
    let t = p(g, s, "table");
    let y = embedding_lookup(g, t, &[2, 0, 2, 1])?;
    contract(g, s, y)
}

fn conv_case(g: &mut Graph, s: &ParamStore) -> Result<Var> {
    let (x, k, b) = (p(g, s, "x"), p(g, s, "kernel"), p(g, s, "b"));
    let y = conv1d_forward(g, x, k, b)?;
    contract(g, s, y)
}

fn attention_case(g: &mut Graph, s: &ParamStore) -> Result<Var> {
    let x = p(g, s, "x");
    let (wq, wk, wv, wo) = (p(g, s, "wq"), p(g, s, "wk"), p(g, s, "wv"), p(g, s, "wo"));
    let y = self_attention_forward(g, x, 2, wq, wk, wv, wo)?;
    contract(g, s, y)
}

fn gru_case(g: &mut Graph, s: &ParamStore) -> Result<Var> {
    let x = p(g, s, "x");
    let h0 = p(g, s, "h0");
    let dir = |g: &mut Graph, d: &str| GruWeights {
        w_x: p(g, s, &format!("{d}.w_x")),
        w_h: p(g, s, &format!("{d}.w_h")),
        b_x: p(g, s, &format!("{d}.b_x")),
        b_h: p(g, s, &format!("{d}.b_h")),
    };
    let params = GruParams {
        forward: dir(g, "fwd"),
        backward: Some(dir(g, "bwd")),
    };
    let out = gru_forward(g, x, h0, &params)?;
    contract(g, s, out.outputs)
}

fn layer_norm_case(g: &mut Graph, s: &ParamStore) -> Result<Var> {
    let (x, gamma, beta) = (p(g, s, "x"), p(g, s, "gamma"), p(g, s, "beta"));
    let y = layer_norm(g, x, gamma, beta)?;
    contract(g, s, y)
}

fn mse_case(g: &mut Graph, s: &ParamStore) -> Result<Var> {
    let (a, b) = (p(g, s, "a"), p(g, s, "b"));
    mse_loss(g, a, b)
}

fn activation_case(g: &mut Graph, s: &ParamStore) -> Result<Var> {
    let x = p(g, s, "x");
    let a = g.sigmoid(x);
    let b = g.tanh(a);
    let c = g.relu(x);
    let y = g.add(b, c)?;
    let y = g.softmax_rows(y);
    contract(g, s, y)
}

fn store(seed: u64, shapes: &[(&str, &[usize])]) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for (name, shape) in shapes {
        s.normal(name, shape, 0.7, &mut rng)?;
    }
    Ok(s)
}

/// Finite-difference checks of every layer in the catalog, each on a
/// small random instance. Inputs are checked alongside the weights.
pub fn check_layers(seed: u64, eps: f64) -> Result<Vec<LayerCheck>> {
    let cases: Vec<(&'static str, LayerFn, Vec<(&str, &[usize])>)> = vec![
        (
            "linear",
            linear_case,
            vec![("x", &[3, 4]), ("w", &[4, 2]), ("b", &[2]), ("probe", &[3, 2])],
        ),
        (
            "embedding",
            embedding_case,
            vec![("table", &[3, 2]), ("probe", &[4, 2])],
        ),
        (
            "conv1d",
            conv_case,
            vec![("x", &[5, 2]), ("kernel", &[3, 2, 3]), ("b", &[3]), ("probe", &[5, 3])],
        ),
        (
            "self_attention",
            attention_case,
            vec![
                ("x", &[4, 4]),
                ("wq", &[4, 4]),
                ("wk", &[4, 4]),
                ("wv", &[4, 4]),
                ("wo", &[4, 4]),
                ("probe", &[4, 4]),
            ],
        ),
        (
            "gru",
            gru_case,
            vec![
                ("x", &[3, 2]),
                ("h0", &[2]),
                ("fwd.w_x", &[2, 6]),
                ("fwd.w_h", &[2, 6]),
                ("fwd.b_x", &[6]),
                ("fwd.b_h", &[6]),
                ("bwd.w_x", &[2, 6]),
                ("bwd.w_h", &[2, 6]),
                ("bwd.b_x", &[6]),
                ("bwd.b_h", &[6]),
                ("probe", &[3, 4]),
            ],
        ),
        (
            "layer_norm",
            layer_norm_case,
            vec![("x", &[3, 5]), ("gamma", &[5]), ("beta", &[5]), ("probe", &[3, 5])],
        ),
        ("mse", mse_case, vec![("a", &[3, 2]), ("b", &[3, 2])]),
        ("activations", activation_case, vec![("x", &[3, 4]), ("probe", &[3, 4])]),
    ];
    let mut out = Vec::with_capacity(cases.len());
    for (k, (layer, f, shapes)) in cases.into_iter().enumerate() {
        let s = store(seed.wrapping_add(k as u64), &shapes)?;
        let report = grad_check_params(&s, f, eps)?;
        out.push(LayerCheck {
            layer,
            max_rel_error: report.iter().map(|r| r.max_rel_error).fold(0.0, f64::max),
            checked: report.iter().map(|r| r.checked).sum(),
            kinks: report.iter().map(|r| r.kinks).sum(),
        });
    }
    Ok(out)
}
