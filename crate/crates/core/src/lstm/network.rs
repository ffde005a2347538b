//! Parameter layout, forward pass and exact backpropagation through time.
//!
//! Each layer follows the standard cell
//!
//! ```text
//! i = s(W_ii x + b_ii + W_hi h + b_hi)     f = s(W_if x + b_if + W_hf h + b_hf)
//! g = tanh(W_ig x + b_ig + W_hg h + b_hg)  o = s(W_io x + b_io + W_ho h + b_ho)
//! c' = f * c + i * g                       h' = o * tanh(c')
//! ```
//!
//! with zero initial states. The top layer's last hidden state goes through
//! SiLU and then an affine head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) const GATES: [char; 4] = ['i', 'f', 'g', 'o'];

/// Dimensions that fix the parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmShape {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
}

/// Offsets of one layer's blocks inside the flat parameter vector. Gate rows
/// are stacked in `i, f, g, o` order, so `w_ih` is `[W_ii; W_if; W_ig; W_io]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub n_in: usize,
    pub w_ih: usize,
    pub w_hh: usize,
    pub b_ih: usize,
    pub b_hh: usize,
}

impl LstmShape {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.n_layers == 0 {
            return Err(Error::InvalidParameter(format!("degenerate LSTM shape {self:?}")));
        }
        Ok(())
    }

    fn layer_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    fn layer_len(&self, layer: usize) -> usize {
        let h = self.hidden_dim;
        4 * h * self.layer_in(layer) + 4 * h * h + 8 * h
    }

    pub(crate) fn layer(&self, layer: usize) -> LayerOffsets {
        let h = self.hidden_dim;
        let start: usize = (0..layer).map(|l| self.layer_len(l)).sum();
        let n_in = self.layer_in(layer);
        let w_ih = start;
        let w_hh = w_ih + 4 * h * n_in;
        let b_ih = w_hh + 4 * h * h;
        let b_hh = b_ih + 4 * h;
        LayerOffsets {
            n_in,
            w_ih,
            w_hh,
            b_ih,
            b_hh,
        }
    }

    /// Offset of the head weights; the head bias is the last parameter.
    pub fn head_offset(&self) -> usize {
        (0..self.n_layers).map(|l| self.layer_len(l)).sum()
    }

    pub fn n_params(&self) -> usize {
        self.head_offset() + self.hidden_dim + 1
    }

    /// Named blocks as `(name, offset, rows, cols)`, covering every parameter
    /// exactly once and in storage order.
    pub fn blocks(&self) -> Vec<(String, usize, usize, usize)> {
        let h = self.hidden_dim;
        let mut out = Vec::new();
        for l in 0..self.n_layers {
            let o = self.layer(l);
            for (k, g) in GATES.iter().enumerate() {
                out.push((format!("layer{l}.W_i{g}"), o.w_ih + k * h * o.n_in, h, o.n_in));
            }
            for (k, g) in GATES.iter().enumerate() {
                out.push((format!("layer{l}.W_h{g}"), o.w_hh + k * h * h, h, h));
            }
            for (k, g) in GATES.iter().enumerate() {
                out.push((format!("layer{l}.b_i{g}"), o.b_ih + k * h, h, 1));
            }
            for (k, g) in GATES.iter().enumerate() {
                out.push((format!("layer{l}.b_h{g}"), o.b_hh + k * h, h, 1));
            }
        }
        out.push(("head.weight".into(), self.head_offset(), 1, h));
        out.push(("head.bias".into(), self.head_offset() + h, 1, 1));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub shape: LstmShape,
    pub values: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(shape: LstmShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.n_params()],
        }
    }

    /// Weights uniform on `±1/sqrt(hidden_dim)`, biases zero.
    pub fn init<R: Rng>(shape: LstmShape, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        let bound = 1.0 / (shape.hidden_dim as f64).sqrt();
        for (name, off, rows, cols) in shape.blocks() {
            if name.contains(".W_") || name == "head.weight" {
                for v in &mut p.values[off..off + rows * cols] {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.values.len() != self.shape.n_params() {
            return Err(Error::InvalidParameter(format!(
                "expected {} parameters for {:?}, got {}",
                self.shape.n_params(),
                self.shape,
                self.values.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i} is {}", self.values[i])));
        }
        Ok(())
    }

    /// Slice of a named block, e.g. `"layer0.W_hf"` or `"head.bias"`.
    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.shape
            .blocks()
            .into_iter()
            .find(|b| b.0 == name)
            .map(|(_, off, r, c)| &self.values[off..off + r * c])
    }

    /// Parameters of the recurrent cells, excluding the head.
    pub fn cell_values(&self) -> &[f64] {
        &self.values[..self.shape.head_offset()]
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations kept from a forward pass for the backward pass. Reusable
/// across calls with the same shape and sequence length.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    shape: LstmShape,
    seq_len: usize,
    input: Vec<f64>,
    /// Per layer, `L × 4H` post-activation gates.
    gates: Vec<Vec<f64>>,
    /// Per layer, `(L + 1) × H` cell states; row 0 is the zero start.
    cells: Vec<Vec<f64>>,
    tanh_c: Vec<Vec<f64>>,
    /// Per layer, `(L + 1) × H` hidden states; row 0 is the zero start.
    hidden: Vec<Vec<f64>>,
    top: Vec<f64>,
    silu: Vec<f64>,
    output: f64,
}

impl ForwardCache {
    pub fn new(shape: LstmShape, seq_len: usize) -> Self {
        let h = shape.hidden_dim;
        let per = |n: usize| vec![vec![0.0; n]; shape.n_layers];
        Self {
            shape,
            seq_len,
            input: vec![0.0; seq_len * shape.input_dim],
            gates: per(seq_len * 4 * h),
            cells: per((seq_len + 1) * h),
            tanh_c: per(seq_len * h),
            hidden: per((seq_len + 1) * h),
            top: vec![0.0; h],
            silu: vec![0.0; h],
            output: 0.0,
        }
    }

    pub fn output(&self) -> f64 {
        self.output
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }
}

/// Runs the network on `seq`, a row-major `L × input_dim` array.
pub fn forward_into(params: &LstmParams, seq: &[f64], cache: &mut ForwardCache) -> f64 {
    let shape = params.shape;
    debug_assert_eq!(cache.shape, shape);
    debug_assert_eq!(seq.len(), cache.seq_len * shape.input_dim);
    let h = shape.hidden_dim;
    let big_l = cache.seq_len;
    let p = &params.values;
    cache.input.copy_from_slice(seq);
    let mut pre = vec![0.0; 4 * h];
    for l in 0..shape.n_layers {
        let o = shape.layer(l);
        let (below, rest) = cache.hidden.split_at_mut(l);
        let hid = &mut rest[0];
        let gates = &mut cache.gates[l];
        let cells = &mut cache.cells[l];
        let tanh_c = &mut cache.tanh_c[l];
        for t in 0..big_l {
            let x: &[f64] = if l == 0 {
                &cache.input[t * o.n_in..(t + 1) * o.n_in]
            } else {
                &below[l - 1][(t + 1) * h..(t + 2) * h]
            };
            let h_prev = &hid[t * h..(t + 1) * h];
            for (r, pr) in pre.iter_mut().enumerate() {
                let mut acc = p[o.b_ih + r] + p[o.b_hh + r];
                let wi = &p[o.w_ih + r * o.n_in..o.w_ih + (r + 1) * o.n_in];
                for (w, xv) in wi.iter().zip(x) {
                    acc += w * xv;
                }
                let wh = &p[o.w_hh + r * h..o.w_hh + (r + 1) * h];
                for (w, hv) in wh.iter().zip(h_prev) {
                    acc += w * hv;
                }
                *pr = acc;
            }
            let g_row = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            for j in 0..h {
                let i_g = sigmoid(pre[j]);
                let f_g = sigmoid(pre[h + j]);
                let g_g = pre[2 * h + j].tanh();
                let o_g = sigmoid(pre[3 * h + j]);
                g_row[j] = i_g;
                g_row[h + j] = f_g;
                g_row[2 * h + j] = g_g;
                g_row[3 * h + j] = o_g;
                let c = f_g * cells[t * h + j] + i_g * g_g;
                cells[(t + 1) * h + j] = c;
                let tc = c.tanh();
                tanh_c[t * h + j] = tc;
                hid[(t + 1) * h + j] = o_g * tc;
            }
        }
    }
    let top = &cache.hidden[shape.n_layers - 1][big_l * h..(big_l + 1) * h];
    let head = shape.head_offset();
    let mut y = p[head + h];
    for j in 0..h {
        let z = top[j];
        cache.top[j] = z;
        let s = z * sigmoid(z);
        cache.silu[j] = s;
        y += p[head + j] * s;
    }
    cache.output = y;
    y
}

/// Scratch space for [`backward_into`].
#[derive(Debug, Clone)]
pub struct BackwardScratch {
    dh_above: Vec<f64>,
    dh_below: Vec<f64>,
    dh_rec: Vec<f64>,
    dc_rec: Vec<f64>,
    da: Vec<f64>,
}

impl BackwardScratch {
    pub fn new(shape: LstmShape, seq_len: usize) -> Self {
        let h = shape.hidden_dim;
        let width = seq_len * shape.input_dim.max(h);
        Self {
            dh_above: vec![0.0; width],
            dh_below: vec![0.0; width],
            dh_rec: vec![0.0; h],
            dc_rec: vec![0.0; h],
            da: vec![0.0; 4 * h],
        }
    }
}

/// Accumulates `upstream · ∂y/∂θ` into `grad` and, when given, writes
/// `upstream · ∂y/∂x` into `d_input` (`L × input_dim`).
pub fn backward_into(
    params: &LstmParams,
    cache: &ForwardCache,
    upstream: f64,
    grad: &mut [f64],
    d_input: Option<&mut [f64]>,
    scratch: &mut BackwardScratch,
) {
    let shape = params.shape;
    let h = shape.hidden_dim;
    let big_l = cache.seq_len;
    let p = &params.values;
    let head = shape.head_offset();

    grad[head + h] += upstream;
    scratch.dh_above[..big_l * h].iter_mut().for_each(|v| *v = 0.0);
    for j in 0..h {
        grad[head + j] += upstream * cache.silu[j];
        let z = cache.top[j];
        let sg = sigmoid(z);
        let dsilu = sg * (1.0 + z * (1.0 - sg));
        scratch.dh_above[(big_l - 1) * h + j] = upstream * p[head + j] * dsilu;
    }

    for l in (0..shape.n_layers).rev() {
        let o = shape.layer(l);
        let n_in = o.n_in;
        scratch.dh_below[..big_l * n_in].iter_mut().for_each(|v| *v = 0.0);
        scratch.dh_rec.iter_mut().for_each(|v| *v = 0.0);
        scratch.dc_rec.iter_mut().for_each(|v| *v = 0.0);
        let gates = &cache.gates[l];
        let cells = &cache.cells[l];
        let tanh_c = &cache.tanh_c[l];
        let hid = &cache.hidden[l];
        for t in (0..big_l).rev() {
            let g_row = &gates[t * 4 * h..(t + 1) * 4 * h];
            for j in 0..h {
                let (i_g, f_g, g_g, o_g) = (g_row[j], g_row[h + j], g_row[2 * h + j], g_row[3 * h + j]);
                let tc = tanh_c[t * h + j];
                let dh = scratch.dh_above[t * h + j] + scratch.dh_rec[j];
                let d_o = dh * tc;
                let dc = scratch.dc_rec[j] + dh * o_g * (1.0 - tc * tc);
                let d_i = dc * g_g;
                let d_g = dc * i_g;
                let d_f = dc * cells[t * h + j];
                scratch.dc_rec[j] = dc * f_g;
                scratch.da[j] = d_i * i_g * (1.0 - i_g);
                scratch.da[h + j] = d_f * f_g * (1.0 - f_g);
                scratch.da[2 * h + j] = d_g * (1.0 - g_g * g_g);
                scratch.da[3 * h + j] = d_o * o_g * (1.0 - o_g);
            }
            let x: &[f64] = if l == 0 {
                &cache.input[t * n_in..(t + 1) * n_in]
            } else {
                &cache.hidden[l - 1][(t + 1) * h..(t + 2) * h]
            };
            let h_prev = &hid[t * h..(t + 1) * h];
            scratch.dh_rec.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..4 * h {
                let a = scratch.da[r];
                grad[o.b_ih + r] += a;
                grad[o.b_hh + r] += a;
                let wi = o.w_ih + r * n_in;
                for k in 0..n_in {
                    grad[wi + k] += a * x[k];
                    scratch.dh_below[t * n_in + k] += p[wi + k] * a;
                }
                let wh = o.w_hh + r * h;
                for k in 0..h {
                    grad[wh + k] += a * h_prev[k];
                    scratch.dh_rec[k] += p[wh + k] * a;
                }
            }
        }
        std::mem::swap(&mut scratch.dh_above, &mut scratch.dh_below);
    }
    if let Some(d) = d_input {
        d.copy_from_slice(&scratch.dh_above[..big_l * shape.input_dim]);
    }
}

/// Output of one forward pass.
pub fn forward(params: &LstmParams, seq: &[f64]) -> Result<(f64, ForwardCache)> {
    params.validate()?;
    check_sequence(params.shape, seq)?;
    let mut cache = ForwardCache::new(params.shape, seq.len() / params.shape.input_dim);
    let y = forward_into(params, seq, &mut cache);
    Ok((y, cache))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub inputs: Vec<f64>,
}

/// Exact gradient of `upstream · y` with respect to parameters and inputs.
pub fn backward(params: &LstmParams, cache: &ForwardCache, upstream: f64) -> Result<Gradients> {
    let mut g = Gradients {
        params: vec![0.0; params.values.len()],
        inputs: vec![0.0; cache.seq_len * params.shape.input_dim],
    };
    let mut scratch = BackwardScratch::new(params.shape, cache.seq_len);
    backward_into(params, cache, upstream, &mut g.params, Some(&mut g.inputs), &mut scratch);
    ensure_finite(&g.params, "parameter gradient")?;
    ensure_finite(&g.inputs, "input gradient")?;
    Ok(g)
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what} entry {i} is {}", values[i]))),
        None => Ok(()),
    }
}

pub(crate) fn check_sequence(shape: LstmShape, seq: &[f64]) -> Result<()> {
    if seq.is_empty() || seq.len() % shape.input_dim != 0 {
        return Err(Error::InvalidInput(format!(
            "sequence of {} values is not a whole number of {}-wide rows",
            seq.len(),
            shape.input_dim
        )));
    }
    ensure_finite(seq, "input sequence")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape(input_dim: usize, hidden_dim: usize, n_layers: usize) -> LstmShape {
        LstmShape {
            input_dim,
            hidden_dim,
            n_layers,
        }
    }

    fn random_params(s: LstmShape, seed: u64) -> LstmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = LstmParams::zeros(s);
        p.values.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        p
    }

    fn random_seq(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    #[test]
    fn blocks_tile_the_parameter_vector() {
        for s in [shape(1, 2, 2), shape(2, 3, 1), shape(2, 2, 3)] {
            let mut next = 0;
            for (_, off, r, c) in s.blocks() {
                assert_eq!(off, next);
                next += r * c;
            }
            assert_eq!(next, s.n_params());
        }
        // Two layers of hidden size 2 on σ² input.
        assert_eq!(shape(1, 2, 2).n_params(), (8 + 16 + 16) + (16 + 16 + 16) + 3);
    }

    #[test]
    fn zero_params_predict_the_head_bias() {
        let s = shape(2, 2, 2);
        let mut p = LstmParams::zeros(s);
        *p.values.last_mut().unwrap() = 0.37;
        let (y, cache) = forward(&p, &random_seq(44, 1)).unwrap();
        assert_eq!(y, 0.37);
        let g = backward(&p, &cache, 1.0).unwrap();
        assert!(g.inputs.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identical_inputs_give_identical_outputs() {
        let p = random_params(shape(2, 2, 2), 4);
        let seq = random_seq(44, 5);
        assert_eq!(forward(&p, &seq).unwrap().0, forward(&p, &seq).unwrap().0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = LstmParams::zeros(shape(2, 2, 1));
        assert!(forward(&p, &[1.0, 2.0, 3.0]).is_err());
        assert!(forward(&p, &[1.0, f64::NAN]).is_err());
        let mut bad = p.clone();
        bad.values.pop();
        assert!(forward(&bad, &[1.0, 2.0]).is_err());
    }

    /// Plain scalar recursion over nested vectors built from the named blocks.
    fn reference_forward(p: &LstmParams, seq: &[f64]) -> f64 {
        let s = p.shape;
        let h = s.hidden_dim;
        let rows = seq.len() / s.input_dim;
        let mut xs: Vec<Vec<f64>> = seq.chunks(s.input_dim).map(|r| r.to_vec()).collect();
        let mat = |name: String| -> Vec<Vec<f64>> {
            let b = p.block(&name).unwrap();
            b.chunks(b.len() / h).map(|r| r.to_vec()).collect()
        };
        let vecb = |name: String| p.block(&name).unwrap().to_vec();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        for l in 0..s.n_layers {
            let w_i: Vec<_> = GATES.iter().map(|g| mat(format!("layer{l}.W_i{g}"))).collect();
            let w_h: Vec<_> = GATES.iter().map(|g| mat(format!("layer{l}.W_h{g}"))).collect();
            let b_i: Vec<_> = GATES.iter().map(|g| vecb(format!("layer{l}.b_i{g}"))).collect();
            let b_h: Vec<_> = GATES.iter().map(|g| vecb(format!("layer{l}.b_h{g}"))).collect();
            let mut hs = vec![0.0; h];
            let mut cs = vec![0.0; h];
            let mut out = Vec::with_capacity(rows);
            for x in &xs {
                let affine = |k: usize, j: usize| {
                    let mut a = b_i[k][j] + b_h[k][j];
                    for (w, v) in w_i[k][j].iter().zip(x) {
                        a += w * v;
                    }
                    for (w, v) in w_h[k][j].iter().zip(&hs) {
                        a += w * v;
                    }
                    a
                };
                let mut nh = vec![0.0; h];
                for j in 0..h {
                    let i = sig(affine(0, j));
                    let f = sig(affine(1, j));
                    let g = affine(2, j).tanh();
                    let o = sig(affine(3, j));
                    cs[j] = f * cs[j] + i * g;
                    nh[j] = o * cs[j].tanh();
                }
                hs = nh;
                out.push(hs.clone());
            }
            xs = out;
        }
        let w = p.block("head.weight").unwrap();
        let b = p.block("head.bias").unwrap()[0];
        b + xs.last().unwrap().iter().zip(w).map(|(z, w)| w * z * sig(*z)).sum::<f64>()
    }

    #[test]
    fn matches_scalar_reference() {
        for (k, s) in [shape(1, 2, 2), shape(2, 2, 2), shape(2, 3, 1), shape(1, 4, 3)].into_iter().enumerate() {
            let p = random_params(s, 10 + k as u64);
            let seq = random_seq(s.input_dim * 22, 20 + k as u64);
            let y = forward(&p, &seq).unwrap().0;
            let r = reference_forward(&p, &seq);
            assert!((y - r).abs() <= 1e-12, "{s:?}: {y} vs {r}");
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradients_match_central_differences() {
        let step = 1e-5;
        let mut worst: f64 = 0.0;
        for case in 0..12u64 {
            let s = shape(1 + (case % 2) as usize, 2 + (case % 3) as usize, 1 + (case / 2 % 2) as usize);
            let mut p = random_params(s, 100 + case);
            let seq = random_seq(s.input_dim * (5 + case as usize), 200 + case);
            let (_, cache) = forward(&p, &seq).unwrap();
            let g = backward(&p, &cache, 1.0).unwrap();
            for i in 0..p.values.len() {
                let orig = p.values[i];
                p.values[i] = orig + step;
                let up = forward(&p, &seq).unwrap().0;
                p.values[i] = orig - step;
                let dn = forward(&p, &seq).unwrap().0;
                p.values[i] = orig;
                worst = worst.max(rel_err(g.params[i], (up - dn) / (2.0 * step)));
            }
            let mut x = seq.clone();
            for i in 0..x.len() {
                let orig = x[i];
                x[i] = orig + step;
                let up = forward(&p, &x).unwrap().0;
                x[i] = orig - step;
                let dn = forward(&p, &x).unwrap().0;
                x[i] = orig;
                worst = worst.max(rel_err(g.inputs[i], (up - dn) / (2.0 * step)));
            }
        }
        assert!(worst <= 1e-4, "max relative error {worst}");
    }

    #[test]
    fn upstream_scales_gradients() {
        let p = random_params(shape(2, 2, 2), 9);
        let (_, cache) = forward(&p, &random_seq(20, 9)).unwrap();
        let g1 = backward(&p, &cache, 1.0).unwrap();
        let g0 = backward(&p, &cache, 0.0).unwrap();
        let g2 = backward(&p, &cache, -2.0).unwrap();
        assert!(g0.params.iter().chain(&g0.inputs).all(|v| *v == 0.0));
        for (a, b) in g1.params.iter().zip(&g2.params) {
            assert!((b + 2.0 * a).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }
}
