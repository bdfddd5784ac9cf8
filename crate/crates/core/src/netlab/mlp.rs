//! Dense feed-forward network with a flat parameter vector and manual
//! backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::{dot, softplus_and_sigmoid};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Softplus,
    Relu,
}

impl Activation {
    /// Applies the activation in place to a layer's pre-activations, storing
    /// its derivative in `slope`. Written branch-free so it vectorizes.
    #[inline(always)]
    fn apply(self, values: &mut [f64], slope: &mut [f64]) {
        match self {
            Activation::Softplus => {
                for (v, s) in values.iter_mut().zip(slope.iter_mut()) {
                    (*v, *s) = softplus_and_sigmoid(*v);
                }
            }
            Activation::Relu => {
                for (v, s) in values.iter_mut().zip(slope.iter_mut()) {
                    let positive = *v > 0.0;
                    *s = if positive { 1.0 } else { 0.0 };
                    *v = if positive { *v } else { 0.0 };
                }
            }
        }
    }
}

/// Layer `l` maps `sizes[l]` inputs to `sizes[l + 1]` outputs. Its weights are
/// stored row-major as `inputs x outputs`, followed by the output biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Per-sample buffers reused across forward/backward passes.
#[derive(Debug, Clone)]
pub struct Workspace {
    /// `acts[0]` is the input, `acts[l]` the output of layer `l - 1`
    /// (after the activation for hidden layers, raw for the last).
    acts: Vec<Vec<f64>>,
    /// Activation derivatives of the hidden layers.
    slope: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

fn layer_offsets(sizes: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(sizes.len());
    let mut acc = 0;
    offsets.push(0);
    for w in sizes.windows(2) {
        acc += w[0] * w[1] + w[1];
        offsets.push(acc);
    }
    offsets
}

#[inline(always)]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Buffers for [`Mlp::forward_batch`] / [`Mlp::backward_batch`], grown on demand.
#[derive(Debug, Clone, Default)]
pub struct BatchWorkspace {
    acts: Vec<Vec<f64>>,
    slope: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl BatchWorkspace {
    fn reserve(&mut self, sizes: &[usize], rows: usize) {
        let grow = |v: &mut Vec<f64>, n: usize| {
            if v.len() < n {
                v.resize(n, 0.0);
            }
        };
        self.acts.resize_with(sizes.len(), Vec::new);
        self.slope.resize_with(sizes.len().saturating_sub(2), Vec::new);
        for (a, &s) in self.acts.iter_mut().zip(sizes) {
            grow(a, rows * s);
        }
        for (sl, &s) in self.slope.iter_mut().zip(&sizes[1..]) {
            grow(sl, rows * s);
        }
        let widest = sizes.iter().copied().max().unwrap_or(0);
        grow(&mut self.delta, rows * widest);
        grow(&mut self.delta_prev, rows * widest);
    }
}

const ROW_BLOCK: usize = 4;
const COL_BLOCK: usize = 8;

/// `c[r, :] += sum_i a[r, i] * w[i, :]` with `c: rows x n`, `a: rows x k`,
/// `w: k x n`, all row-major. Each output element accumulates over `i` in
/// increasing order.
#[inline(always)]
fn gemm_rows(c: &mut [f64], a: &[f64], w: &[f64], rows: usize, k: usize, n: usize) {
    let full_cols = n - n % COL_BLOCK;
    let mut r0 = 0;
    while r0 + ROW_BLOCK <= rows {
        let mut o0 = 0;
        while o0 < full_cols {
            let mut acc = [[0.0f64; COL_BLOCK]; ROW_BLOCK];
            for (r, acc_r) in acc.iter_mut().enumerate() {
                acc_r.copy_from_slice(&c[(r0 + r) * n + o0..(r0 + r) * n + o0 + COL_BLOCK]);
            }
            for i in 0..k {
                let wv: &[f64; COL_BLOCK] = w[i * n + o0..i * n + o0 + COL_BLOCK].try_into().expect("block");
                for (r, acc_r) in acc.iter_mut().enumerate() {
                    let av = a[(r0 + r) * k + i];
                    for j in 0..COL_BLOCK {
                        acc_r[j] += av * wv[j];
                    }
                }
            }
            for (r, acc_r) in acc.iter().enumerate() {
                c[(r0 + r) * n + o0..(r0 + r) * n + o0 + COL_BLOCK].copy_from_slice(acc_r);
            }
            o0 += COL_BLOCK;
        }
        r0 += ROW_BLOCK;
    }
    // Leftover rows (all columns) and leftover columns of the blocked rows.
    for r in 0..rows {
        let cols = if r < r0 { full_cols..n } else { 0..n };
        if cols.is_empty() {
            continue;
        }
        let crow = &mut c[r * n..(r + 1) * n];
        for i in 0..k {
            let av = a[r * k + i];
            let wrow = &w[i * n..(i + 1) * n];
            for j in cols.clone() {
                crow[j] += av * wrow[j];
            }
        }
    }
}

/// `c[i, :] += sum_r a[r, i] * d[r, :]` with `c: k x n`, `a: rows x k`,
/// `d: rows x n`. Each element accumulates over `r` in increasing order.
#[inline(always)]
fn gemm_transposed(c: &mut [f64], a: &[f64], d: &[f64], rows: usize, k: usize, n: usize) {
    let full_cols = n - n % COL_BLOCK;
    let mut i0 = 0;
    while i0 + ROW_BLOCK <= k {
        let mut o0 = 0;
        while o0 < full_cols {
            let mut acc = [[0.0f64; COL_BLOCK]; ROW_BLOCK];
            for (q, acc_q) in acc.iter_mut().enumerate() {
                acc_q.copy_from_slice(&c[(i0 + q) * n + o0..(i0 + q) * n + o0 + COL_BLOCK]);
            }
            for r in 0..rows {
                let dv: &[f64; COL_BLOCK] = d[r * n + o0..r * n + o0 + COL_BLOCK].try_into().expect("block");
                for (q, acc_q) in acc.iter_mut().enumerate() {
                    let av = a[r * k + i0 + q];
                    for j in 0..COL_BLOCK {
                        acc_q[j] += av * dv[j];
                    }
                }
            }
            for (q, acc_q) in acc.iter().enumerate() {
                c[(i0 + q) * n + o0..(i0 + q) * n + o0 + COL_BLOCK].copy_from_slice(acc_q);
            }
            o0 += COL_BLOCK;
        }
        i0 += ROW_BLOCK;
    }
    for i in 0..k {
        let cols = if i < i0 { full_cols..n } else { 0..n };
        if cols.is_empty() {
            continue;
        }
        let crow = &mut c[i * n..(i + 1) * n];
        for r in 0..rows {
            let av = a[r * k + i];
            let drow = &d[r * n..(r + 1) * n];
            for j in cols.clone() {
                crow[j] += av * drow[j];
            }
        }
    }
}

impl Mlp {
    /// Glorot-uniform weights and zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: Vec<usize>, activation: Activation, rng: &mut R) -> Self {
        let offsets = layer_offsets(&sizes);
        let mut params = vec![0.0; *offsets.last().unwrap_or(&0)];
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let start = offsets[l];
            for p in &mut params[start..start + fan_in * fan_out] {
                *p = rng.gen_range(-limit..limit);
            }
        }
        Self {
            sizes,
            activation,
            params,
            offsets,
        }
    }

    /// Wraps an existing parameter vector; `None` if its length does not match `sizes`.
    pub fn from_params(sizes: Vec<usize>, activation: Activation, params: Vec<f64>) -> Option<Self> {
        let offsets = layer_offsets(&sizes);
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) || params.len() != *offsets.last()? {
            return None;
        }
        Some(Self {
            sizes,
            activation,
            params,
            offsets,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().unwrap_or(&0)
    }

    pub fn workspace(&self) -> Workspace {
        let widest = self.sizes.iter().copied().max().unwrap_or(0);
        Workspace {
            acts: self.sizes.iter().map(|&s| vec![0.0; s]).collect(),
            slope: self.sizes[1..self.sizes.len() - 1]
                .iter()
                .map(|&s| vec![0.0; s])
                .collect(),
            delta: vec![0.0; widest],
            delta_prev: vec![0.0; widest],
        }
    }

    /// Runs the network on one input row; returns the raw outputs.
    pub fn forward<'w>(&self, x: &[f64], ws: &'w mut Workspace) -> &'w [f64] {
        debug_assert_eq!(x.len(), self.sizes[0]);
        self.forward_simd(x, ws);
        &ws.acts[self.sizes.len() - 1]
    }

    /// Accumulates into `grad` the parameter gradient of a loss whose
    /// gradient with respect to the raw outputs is `d_out`, using the
    /// activations left in `ws` by the preceding [`Mlp::forward`].
    pub fn backward(&self, ws: &mut Workspace, d_out: &[f64], grad: &mut [f64]) {
        self.backward_simd(ws, d_out, grad);
    }

    /// Runs the network on `rows` input rows stored row-major in `x`;
    /// returns the raw outputs, row-major.
    pub fn forward_batch<'w>(&self, x: &[f64], rows: usize, ws: &'w mut BatchWorkspace) -> &'w [f64] {
        assert_eq!(x.len(), rows * self.sizes[0], "input is not rows x inputs");
        ws.reserve(&self.sizes, rows);
        self.forward_batch_simd(x, rows, ws);
        let out = self.n_outputs();
        &ws.acts[self.sizes.len() - 1][..rows * out]
    }

    /// Batch counterpart of [`Mlp::backward`]; `d_out` is `rows x outputs`.
    /// Per-row contributions are accumulated in row order, so the result
    /// equals calling [`Mlp::backward`] row by row.
    pub fn backward_batch(&self, ws: &mut BatchWorkspace, d_out: &[f64], rows: usize, grad: &mut [f64]) {
        assert_eq!(d_out.len(), rows * self.n_outputs(), "gradient is not rows x outputs");
        self.backward_batch_simd(ws, d_out, rows, grad);
    }

    simd_variants!(Mlp; forward_simd => forward_body(x: &[f64], ws: &mut Workspace));
    simd_variants!(Mlp; backward_simd => backward_body(ws: &mut Workspace, d_out: &[f64], grad: &mut [f64]));
    simd_variants!(Mlp; forward_batch_simd => forward_batch_body(x: &[f64], rows: usize, ws: &mut BatchWorkspace));
    simd_variants!(
        Mlp; backward_batch_simd => backward_batch_body(ws: &mut BatchWorkspace, d_out: &[f64], rows: usize, grad: &mut [f64])
    );

    #[inline(always)]
    fn forward_body(&self, x: &[f64], ws: &mut Workspace) {
        ws.acts[0].copy_from_slice(x);
        let n_layers = self.sizes.len() - 1;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[self.offsets[l]..self.offsets[l] + n_in * n_out];
            let b = &self.params[self.offsets[l] + n_in * n_out..self.offsets[l + 1]];
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            out.copy_from_slice(b);
            for (i, &a) in input.iter().enumerate() {
                if a != 0.0 {
                    axpy(out, a, &w[i * n_out..(i + 1) * n_out]);
                }
            }
            if l + 1 < n_layers {
                self.activation.apply(out, &mut ws.slope[l]);
            }
        }
    }

    #[inline(always)]
    fn backward_body(&self, ws: &mut Workspace, d_out: &[f64], grad: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        let Workspace {
            acts,
            slope,
            delta,
            delta_prev,
        } = ws;
        delta[..d_out.len()].copy_from_slice(d_out);
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w_off = self.offsets[l];
            let b_off = w_off + n_in * n_out;
            let d = &delta[..n_out];
            let input = &acts[l];
            {
                let gw = &mut grad[w_off..b_off];
                for (i, &a) in input.iter().enumerate() {
                    if a != 0.0 {
                        axpy(&mut gw[i * n_out..(i + 1) * n_out], a, d);
                    }
                }
            }
            for (g, dv) in grad[b_off..b_off + n_out].iter_mut().zip(d) {
                *g += dv;
            }
            if l > 0 {
                let w = &self.params[w_off..b_off];
                for i in 0..n_in {
                    delta_prev[i] = dot(&w[i * n_out..(i + 1) * n_out], d) * slope[l - 1][i];
                }
                std::mem::swap(delta, delta_prev);
            }
        }
    }

    #[inline(always)]
    fn forward_batch_body(&self, x: &[f64], rows: usize, ws: &mut BatchWorkspace) {
        ws.acts[0][..x.len()].copy_from_slice(x);
        let n_layers = self.sizes.len() - 1;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[self.offsets[l]..self.offsets[l] + n_in * n_out];
            let b = &self.params[self.offsets[l] + n_in * n_out..self.offsets[l + 1]];
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            let input = &head[l][..rows * n_in];
            let out = &mut tail[0][..rows * n_out];
            for row in out.chunks_exact_mut(n_out) {
                row.copy_from_slice(b);
            }
            gemm_rows(out, input, w, rows, n_in, n_out);
            if l + 1 < n_layers {
                self.activation.apply(out, &mut ws.slope[l][..rows * n_out]);
            }
        }
    }

    #[inline(always)]
    fn backward_batch_body(&self, ws: &mut BatchWorkspace, d_out: &[f64], rows: usize, grad: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        let BatchWorkspace {
            acts,
            slope,
            delta,
            delta_prev,
        } = ws;
        delta[..d_out.len()].copy_from_slice(d_out);
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w_off = self.offsets[l];
            let b_off = w_off + n_in * n_out;
            let d = &delta[..rows * n_out];
            gemm_transposed(&mut grad[w_off..b_off], &acts[l][..rows * n_in], d, rows, n_in, n_out);
            let gb = &mut grad[b_off..b_off + n_out];
            for drow in d.chunks_exact(n_out) {
                for (g, dv) in gb.iter_mut().zip(drow) {
                    *g += dv;
                }
            }
            if l > 0 {
                let w = &self.params[w_off..b_off];
                let sl = &slope[l - 1];
                for r in 0..rows {
                    let drow = &d[r * n_out..(r + 1) * n_out];
                    for i in 0..n_in {
                        delta_prev[r * n_in + i] = dot(&w[i * n_out..(i + 1) * n_out], drow) * sl[r * n_in + i];
                    }
                }
                std::mem::swap(delta, delta_prev);
            }
        }
    }

}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::seeded_rng;

    fn quadratic_loss(out: &[f64], target: &[f64], grad: &mut [f64]) -> f64 {
        let mut l = 0.0;
        for ((g, o), t) in grad.iter_mut().zip(out).zip(target) {
            *g = o - t;
            l += 0.5 * (o - t) * (o - t);
        }
        l
    }

    #[test]
    fn backward_matches_finite_differences() {
        for act in [Activation::Softplus, Activation::Relu] {
            let mut rng = seeded_rng(3);
            let mut net = Mlp::new(vec![3, 5, 4, 2], act, &mut rng);
            for p in net.params_mut() {
                *p += rng.gen_range(-0.1..0.1);
            }
            let x = [0.3, -1.1, 0.8];
            let t = [0.5, -0.2];
            let mut ws = net.workspace();
            let mut g_out = [0.0; 2];
            let out = net.forward(&x, &mut ws).to_vec();
            quadratic_loss(&out, &t, &mut g_out);
            let mut grad = vec![0.0; net.n_params()];
            net.backward(&mut ws, &g_out, &mut grad);

            let h = 1e-5;
            for k in 0..net.n_params() {
                let orig = net.params[k];
                net.params[k] = orig + h;
                let up = quadratic_loss(&net.forward(&x, &mut ws).to_vec(), &t, &mut g_out);
                net.params[k] = orig - h;
                let down = quadratic_loss(&net.forward(&x, &mut ws).to_vec(), &t, &mut g_out);
                net.params[k] = orig;
                let fd = (up - down) / (2.0 * h);
                let err = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-6);
                assert!(err < 1e-4, "{act:?} param {k}: fd {fd} vs {}", grad[k]);
            }
        }
    }

    #[test]
    fn fast_softplus_matches_std() {
        for i in 0..=4000 {
            let z = -40.0 + 0.02 * i as f64;
            let (mut v, mut s) = ([z], [0.0]);
            Activation::Softplus.apply(&mut v, &mut s);
            assert_eq!((v[0], s[0]), softplus_and_sigmoid(z));
            let exact = z.max(0.0) + (-z.abs()).exp().ln_1p();
            assert!((v[0] - exact).abs() <= 1e-15 * exact, "softplus({z}): {} vs {exact}", v[0]);
            assert!((s[0] - crate::numeric::sigmoid(z)).abs() <= 4e-16, "slope({z})");
        }
    }

    #[test]
    fn batch_passes_match_row_by_row() {
        for (sizes, rows) in [(vec![5, 64, 32, 2], 13), (vec![3, 9, 13], 8), (vec![1, 4], 1)] {
            let mut rng = seeded_rng(21);
            let net = Mlp::new(sizes.clone(), Activation::Softplus, &mut rng);
            let (n_in, n_out) = (sizes[0], *sizes.last().unwrap());
            let x: Vec<f64> = (0..rows * n_in).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let d: Vec<f64> = (0..rows * n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();

            let mut ws = net.workspace();
            let mut grad_rows = vec![0.0; net.n_params()];
            let mut out_rows = Vec::new();
            for r in 0..rows {
                out_rows.extend_from_slice(net.forward(&x[r * n_in..(r + 1) * n_in], &mut ws));
                net.backward(&mut ws, &d[r * n_out..(r + 1) * n_out], &mut grad_rows);
            }
            let mut bws = BatchWorkspace::default();
            let out = net.forward_batch(&x, rows, &mut bws).to_vec();
            let mut grad = vec![0.0; net.n_params()];
            net.backward_batch(&mut bws, &d, rows, &mut grad);
            assert_eq!(out, out_rows);
            assert_eq!(grad, grad_rows);
        }
    }

    #[test]
    fn glorot_init_is_bounded_and_biases_zero() {
        let net = Mlp::new(vec![10, 64, 32, 2], Activation::Softplus, &mut seeded_rng(1));
        let limit = (6.0f64 / 74.0).sqrt();
        assert!(net.params[..640].iter().all(|w| w.abs() <= limit));
        assert!(net.params[640..704].iter().all(|&b| b == 0.0));
        assert_eq!(net.n_params(), 10 * 64 + 64 + 64 * 32 + 32 + 32 * 2 + 2);
    }

    #[test]
    fn from_params_checks_length() {
        assert!(Mlp::from_params(vec![2, 3, 1], Activation::Relu, vec![0.0; 13]).is_some());
        assert!(Mlp::from_params(vec![2, 3, 1], Activation::Relu, vec![0.0; 12]).is_none());
    }
}
