//! Layer catalog built from graph primitives.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `x W + b` for `x: [.., in]`, `W: [in, out]`, `b: [out]`.
pub fn linear_forward(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let (xin, win) = (g.value(x).cols(), g.value(w).rows());
    if xin != win {
        return Err(Error::ShapeError(format!(
            "linear: input width {xin} vs weight rows {win}"
        )));
    }
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// Row lookup into `table: [rows, dim]`.
pub fn embedding_lookup(g: &mut Graph, table: Var, idx: &[usize]) -> Result<Var> {
    g.gather_rows(table, idx)
}

/// Same-length 1-D convolution over time with zero padding.
/// `x: [T, Cin]`, `kernel: [k, Cin, Cout]`, `b: [Cout]`.
pub fn conv1d_forward(g: &mut Graph, x: Var, kernel: Var, b: Var) -> Result<Var> {
    let kshape = g.value(kernel).shape().to_vec();
    if kshape.len() != 3 {
        return Err(Error::ShapeError(format!(
            "conv1d kernel must be [k, Cin, Cout], got {kshape:?}"
        )));
    }
    let (k, cin) = (kshape[0], kshape[1]);
    if k % 2 == 0 {
        return Err(Error::ConfigError(format!("conv1d kernel size {k} must be odd")));
    }
    if g.value(x).cols() != cin {
        return Err(Error::ShapeError(format!(
            "conv1d input has {} channels, kernel expects {cin}",
            g.value(x).cols()
        )));
    }
    let cols = g.im2col(x, k)?;
    let y = g.matmul(cols, kernel)?;
    g.add_row(y, b)
}

/// Multi-head scaled dot-product self-attention.
pub fn self_attention_forward(g: &mut Graph, x: Var, heads: usize, wq: Var, wk: Var, wv: Var, wo: Var) -> Result<Var> {
    let d = g.value(x).cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::ConfigError(format!(
            "model width {d} not divisible by {heads} heads"
        )));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let scores = g.matmul_t(qh, kh, false, true)?;
        let scores = g.scale(scores, scale);
        let attn = g.softmax_rows(scores);
        outs.push(g.matmul(attn, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    g.matmul(cat, wo)
}

/// Weights of one GRU direction; gate order r, z, n.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights {
    /// `[din, 3H]`
    pub w_x: Var,
    /// `[H, 3H]`
    pub w_h: Var,
    /// `[3H]`
    pub b_x: Var,
    /// `[3H]`
    pub b_h: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub forward: GruWeights,
    pub backward: Option<GruWeights>,
}

pub struct GruOutput {
    /// `[T, H]` or `[T, 2H]`.
    pub outputs: Var,
    /// Final forward state `[1, H]`.
    pub final_forward: Var,
    /// Final backward state (the state after reading frame 0).
    pub final_backward: Option<Var>,
}

fn gru_direction(g: &mut Graph, x: Var, h0: Var, w: &GruWeights, reverse: bool) -> Result<(Vec<Var>, Var)> {
    let t_len = g.value(x).rows();
    let gx = linear_forward(g, x, w.w_x, w.b_x)?;
    let mut h = h0;
    let mut states = vec![h0; t_len];
    let order: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    for t in order {
        let gx_t = g.slice_rows(gx, t, 1)?;
        let gh = linear_forward(g, h, w.w_h, w.b_h)?;
        h = g.gru_cell(gx_t, gh, h)?;
        states[t] = h;
    }
    Ok((states, h))
}

/// GRU over `x: [T, din]` from initial state `h0: [H]`.
pub fn gru_forward(g: &mut Graph, x: Var, h0: Var, params: &GruParams) -> Result<GruOutput> {
    if g.value(x).rows() == 0 {
        return Err(Error::EmptyInput("gru input sequence"));
    }
    let hd = g.value(h0).len();
    let check = |g: &Graph, w: &GruWeights| -> Result<()> {
        let (wx, wh) = (g.value(w.w_x), g.value(w.w_h));
        if wx.rows() != g.value(x).cols() || wx.cols() != 3 * hd || wh.rows() != hd || wh.cols() != 3 * hd {
            return Err(Error::ShapeError(format!(
                "gru weights {:?}/{:?} for input width {} and hidden {hd}",
                wx.shape(),
                wh.shape(),
                g.value(x).cols()
            )));
        }
        Ok(())
    };
    check(g, &params.forward)?;
    if let Some(b) = &params.backward {
        check(g, b)?;
    }
    let h0 = g.reshape(h0, vec![1, hd])?;

    let (fwd_states, final_forward) = gru_direction(g, x, h0, &params.forward, false)?;
    let fwd = g.concat_rows(&fwd_states)?;
    match &params.backward {
        None => Ok(GruOutput {
            outputs: fwd,
            final_forward,
            final_backward: None,
        }),
        Some(bw) => {
            let (bwd_states, final_backward) = gru_direction(g, x, h0, bw, true)?;
            let bwd = g.concat_rows(&bwd_states)?;
            Ok(GruOutput {
                outputs: g.concat_cols(&[fwd, bwd])?,
                final_forward,
                final_backward: Some(final_backward),
            })
        }
    }
}

pub fn layer_norm(g: &mut Graph, x: Var, gamma: Var, beta: Var) -> Result<Var> {
    g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
}

pub fn mse_loss(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    g.mse(a, b)
}

/// Sinusoidal position table `[len, dim]`: even columns sin, odd cos.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(vec![len, dim], data).expect("consistent shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_identity_and_arithmetic() {
        let mut g = Graph::eval();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let w = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let b = g.constant(Tensor::vector(vec![3.0, 3.0]));
        let y = linear_forward(&mut g, x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, 5.0]);
        let z = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = linear_forward(&mut g, x, w, z).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);
        let bad = g.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(linear_forward(&mut g, x, bad, b), Err(Error::ShapeError(_))));
    }

    #[test]
    fn embedding_rows_and_scatter() {
        let mut g = Graph::eval();
        let table = g.leaf(
            Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap(),
            true,
        );
        let e = embedding_lookup(&mut g, table, &[0, 0, 2]).unwrap();
        assert_eq!(g.value(e).data(), &[1.0, 2.0, 1.0, 2.0, 5.0, 6.0]);
        let s = g.sum(e);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(table).unwrap(), &[2.0, 2.0, 0.0, 0.0, 1.0, 1.0]);
        assert!(matches!(
            embedding_lookup(&mut g, table, &[3]),
            Err(Error::IndexError { index: 3, len: 3 })
        ));
    }

    #[test]
    fn conv_identity_kernels() {
        let mut g = Graph::eval();
        let xt = Tensor::from_rows(&[vec![1.0, -1.0], vec![2.0, 0.5], vec![3.0, 4.0]]).unwrap();
        let x = g.constant(xt.clone());
        let b = g.constant(Tensor::zeros(&[2]));
        let k1 = g.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let y = conv1d_forward(&mut g, x, k1, b).unwrap();
        assert_eq!(g.value(y).data(), xt.data());
        let mut delta = vec![0.0; 3 * 2 * 2];
        delta[4] = 1.0; // centre tap, channel 0 -> 0
        delta[7] = 1.0; // centre tap, channel 1 -> 1
        let k3 = g.constant(Tensor::new(vec![3, 2, 2], delta).unwrap());
        let y = conv1d_forward(&mut g, x, k3, b).unwrap();
        assert_eq!(g.value(y).data(), xt.data());
        let k2 = g.constant(Tensor::zeros(&[2, 2, 2]));
        assert!(matches!(conv1d_forward(&mut g, x, k2, b), Err(Error::ConfigError(_))));
    }

    #[test]
    fn attention_symmetries() {
        let mut g = Graph::eval();
        let row = vec![0.3, -0.2, 0.5, 0.1];
        let x = g.constant(Tensor::from_rows(&[row.clone(), row.clone(), row]).unwrap());
        let w = |g: &mut Graph, s: f64| {
            let data = (0..16).map(|i| s * ((i * 7 % 5) as f64 - 2.0) / 3.0).collect();
            g.constant(Tensor::new(vec![4, 4], data).unwrap())
        };
        let (wq, wk, wv, wo) = (w(&mut g, 1.0), w(&mut g, 0.5), w(&mut g, -1.0), w(&mut g, 0.7));
        let y = self_attention_forward(&mut g, x, 2, wq, wk, wv, wo).unwrap();
        let yv = g.value(y);
        assert_eq!(yv.row(0), yv.row(1));
        assert_eq!(yv.row(1), yv.row(2));
        assert!(matches!(
            self_attention_forward(&mut g, x, 3, wq, wk, wv, wo),
            Err(Error::ConfigError(_))
        ));

        // zero query/key projections: uniform attention over value rows
        let xt = Tensor::from_rows(&[vec![1.0, 0.0, 2.0, 0.0], vec![0.0, 3.0, 0.0, 1.0]]).unwrap();
        let x = g.constant(xt.clone());
        let zero = g.constant(Tensor::zeros(&[4, 4]));
        let eye = g.constant(
            Tensor::new(
                vec![4, 4],
                (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect(),
            )
            .unwrap(),
        );
        let y = self_attention_forward(&mut g, x, 2, zero, zero, eye, eye).unwrap();
        for r in 0..2 {
            for c in 0..4 {
                let mean = 0.5 * (xt.row(0)[c] + xt.row(1)[c]);
                assert!((g.value(y).row(r)[c] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut g = Graph::eval();
        let s = g.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 50.0]]).unwrap());
        let a = g.softmax_rows(s);
        for r in 0..2 {
            let sum: f64 = g.value(a).row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    fn gru_weights(g: &mut Graph, din: usize, h: usize, fill: impl Fn(usize) -> f64) -> GruWeights {
        let mk = |g: &mut Graph, shape: &[usize], off: usize| {
            let n: usize = shape.iter().product();
            g.constant(Tensor::new(shape.to_vec(), (0..n).map(|i| fill(i + off)).collect()).unwrap())
        };
        GruWeights {
            w_x: mk(g, &[din, 3 * h], 0),
            w_h: mk(g, &[h, 3 * h], 1000),
            b_x: mk(g, &[3 * h], 2000),
            b_h: mk(g, &[3 * h], 3000),
        }
    }

    #[test]
    fn gru_zero_weights_stay_at_zero() {
        let mut g = Graph::eval();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.2, 0.2]]).unwrap());
        let h0 = g.constant(Tensor::zeros(&[3]));
        let fw = gru_weights(&mut g, 2, 3, |_| 0.0);
        let bw = gru_weights(&mut g, 2, 3, |_| 0.0);
        let out = gru_forward(
            &mut g,
            x,
            h0,
            &GruParams {
                forward: fw,
                backward: Some(bw),
            },
        )
        .unwrap();
        assert_eq!(g.value(out.outputs).shape(), &[3, 6]);
        assert!(g.value(out.outputs).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gru_single_step_matches_hand_cell() {
        let (din, h) = (2, 3);
        let fill = |i: usize| ((i * 37 % 11) as f64 - 5.0) / 7.0;
        let mut g = Graph::eval();
        let xv = vec![0.4, -0.9];
        let h0v = vec![0.1, -0.2, 0.3];
        let x = g.constant(Tensor::from_rows(std::slice::from_ref(&xv)).unwrap());
        let h0 = g.constant(Tensor::vector(h0v.clone()));
        let w = gru_weights(&mut g, din, h, fill);
        let out = gru_forward(
            &mut g,
            x,
            h0,
            &GruParams {
                forward: w,
                backward: None,
            },
        )
        .unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let wx = |i: usize, j: usize| fill(i * 3 * h + j);
        let wh = |i: usize, j: usize| fill(1000 + i * 3 * h + j);
        let bx = |j: usize| fill(2000 + j);
        let bh = |j: usize| fill(3000 + j);
        let proj_x = |j: usize| bx(j) + (0..din).map(|i| xv[i] * wx(i, j)).sum::<f64>();
        let proj_h = |j: usize| bh(j) + (0..h).map(|i| h0v[i] * wh(i, j)).sum::<f64>();
        for j in 0..h {
            let r = sig(proj_x(j) + proj_h(j));
            let z = sig(proj_x(h + j) + proj_h(h + j));
            let n = (proj_x(2 * h + j) + r * proj_h(2 * h + j)).tanh();
            let expect = (1.0 - z) * n + z * h0v[j];
            assert!((g.value(out.outputs).data()[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_basics() {
        let mut g = Graph::eval();
        let x = g.constant(Tensor::from_rows(&[vec![2.0; 4], vec![1.0, 2.0, 3.0, 10.0]]).unwrap());
        let gamma = g.constant(Tensor::filled(&[4], 1.0));
        let beta = g.constant(Tensor::zeros(&[4]));
        let y = layer_norm(&mut g, x, gamma, beta).unwrap();
        assert!(g.value(y).row(0).iter().all(|v| *v == 0.0));
        let beta2 = g.constant(Tensor::vector(vec![0.5; 4]));
        let y = layer_norm(&mut g, x, gamma, beta2).unwrap();
        let mean: f64 = g.value(y).row(1).iter().sum::<f64>() / 4.0;
        assert!((mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mse_values() {
        let mut g = Graph::eval();
        let a = g.leaf(Tensor::vector(vec![0.0, 0.0]), true);
        let b = g.constant(Tensor::vector(vec![3.0, 4.0]));
        let l = mse_loss(&mut g, a, b).unwrap();
        assert_eq!(g.value(l).item(), 12.5);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[-3.0, -4.0]);
        let l0 = mse_loss(&mut g, a, a).unwrap();
        assert_eq!(g.value(l0).item(), 0.0);
        let c = g.constant(Tensor::vector(vec![1.0; 3]));
        assert!(matches!(mse_loss(&mut g, a, c), Err(Error::ShapeError(_))));
    }

    #[test]
    fn positions_start_with_sin_cos_pattern() {
        let pe = sinusoidal_positions(3, 6);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_ne!(pe.row(1), pe.row(2));
    }

    #[test]
    fn dropout_modes() {
        let x = Tensor::filled(&[50, 20], 1.0);
        let mut eval = Graph::eval();
        let v = eval.constant(x.clone());
        let y = eval.dropout(v, 0.5);
        assert_eq!(eval.value(y), &x);

        let run = |seed| {
            let mut g = Graph::new(true, seed);
            let v = g.constant(x.clone());
            let y = g.dropout(v, 0.5);
            g.value(y).clone()
        };
        let (a, b) = (run(3), run(3));
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| *v == 0.0 || *v == 2.0));
        let mean = a.data().iter().sum::<f64>() / a.len() as f64;
        assert!((mean - 1.0).abs() < 0.1, "{mean}");
    }
}
