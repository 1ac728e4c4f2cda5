//! Layers with explicit forward and backward passes.
//!
//! Gradients live in a structure of the same type as the parameters
//! (`zeros_like`), so optimisers and checkpoints can walk both in lockstep
//! through [`Params`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{dot, matvec_acc, matvec_t_acc, outer_acc, sigmoid, Tensor};

/// Ordered, named access to every trainable tensor of a component.
pub trait Params {
    fn params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    fn zero_(&mut self) {
        for t in self.params_mut() {
            t.fill(0.0);
        }
    }
}

pub(crate) fn prefixed<'a>(prefix: &str, inner: Vec<(String, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
    inner
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Linear {
            weight: Tensor::uniform(&[outputs, inputs], inputs, rng),
            bias: Tensor::uniform(&[outputs], inputs, rng),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.data.clone();
        matvec_acc(&self.weight.data, self.outputs(), self.inputs(), x, &mut y);
        y
    }

    /// Accumulates parameter gradients into `grad` and input gradient into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear, dx: Option<&mut [f64]>) {
        outer_acc(&mut grad.weight.data, dy, x);
        for (b, g) in grad.bias.data.iter_mut().zip(dy) {
            *b += g;
        }
        if let Some(dx) = dx {
            matvec_t_acc(&self.weight.data, self.outputs(), self.inputs(), dy, dx);
        }
    }
}

impl Params for Linear {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub table: Tensor,
}

impl Embedding {
    pub fn new<R: Rng>(vocab: usize, dim: usize, rng: &mut R) -> Self {
        Embedding {
            table: Tensor::uniform(&[vocab, dim], dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.table.shape[1]
    }

    pub fn rows(&self) -> usize {
        self.table.shape[0]
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let d = self.dim();
        &self.table.data[id as usize * d..(id as usize + 1) * d]
    }

    pub fn backward(&self, id: u32, dy: &[f64], grad: &mut Embedding) {
        let d = self.dim();
        for (g, v) in grad.table.data[id as usize * d..(id as usize + 1) * d]
            .iter_mut()
            .zip(dy)
        {
            *g += v;
        }
    }
}

impl Params for Embedding {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("table".into(), &self.table)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.table]
    }
}

/// Valid (unpadded) 2-D convolution followed by ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    /// `(out, in, k, k)`
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

impl Conv2d {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = inputs * kernel * kernel;
        Conv2d {
            weight: Tensor::uniform(&[outputs, inputs, kernel, kernel], fan_in, rng),
            bias: Tensor::uniform(&[outputs], fan_in, rng),
            stride,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape[2]
    }

    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let k = self.kernel();
        if h < k || w < k || self.stride == 0 {
            return None;
        }
        Some(((h - k) / self.stride + 1, (w - k) / self.stride + 1))
    }

    fn gather(&self, input: &[f64], h: usize, w: usize, oy: usize, ox: usize, patch: &mut [f64]) {
        let (k, s) = (self.kernel(), self.stride);
        let mut i = 0;
        for c in 0..self.in_channels() {
            for ky in 0..k {
                let row = c * h * w + (oy * s + ky) * w + ox * s;
                patch[i..i + k].copy_from_slice(&input[row..row + k]);
                i += k;
            }
        }
    }

    /// Returns the post-ReLU output of shape `(out, oh, ow)`.
    pub fn forward(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = self.output_size(h, w).expect("input smaller than kernel");
        let co = self.out_channels();
        let plen = self.in_channels() * self.kernel() * self.kernel();
        let mut patch = vec![0.0; plen];
        let mut out = vec![0.0; co * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                self.gather(input, h, w, oy, ox, &mut patch);
                for c in 0..co {
                    let v = self.bias.data[c] + dot(&self.weight.data[c * plen..(c + 1) * plen], &patch);
                    out[c * oh * ow + oy * ow + ox] = v.max(0.0);
                }
            }
        }
        out
    }

    /// `output` is what [`Conv2d::forward`] returned; `dout` is overwritten
    /// with the pre-activation gradient.
    pub fn backward(
        &self,
        input: &[f64],
        h: usize,
        w: usize,
        output: &[f64],
        dout: &mut [f64],
        grad: &mut Conv2d,
        dinput: Option<&mut [f64]>,
    ) {
        let (oh, ow) = self.output_size(h, w).expect("input smaller than kernel");
        let (k, s) = (self.kernel(), self.stride);
        let co = self.out_channels();
        let plen = self.in_channels() * k * k;
        for (d, &o) in dout.iter_mut().zip(output) {
            if o <= 0.0 {
                *d = 0.0;
            }
        }
        let mut patch = vec![0.0; plen];
        let mut dpatch = vec![0.0; plen];
        let mut g = vec![0.0; co];
        let mut dinput = dinput;
        for oy in 0..oh {
            for ox in 0..ow {
                for (c, gc) in g.iter_mut().enumerate() {
                    *gc = dout[c * oh * ow + oy * ow + ox];
                }
                if g.iter().all(|&x| x == 0.0) {
                    continue;
                }
                self.gather(input, h, w, oy, ox, &mut patch);
                outer_acc(&mut grad.weight.data, &g, &patch);
                for (b, gc) in grad.bias.data.iter_mut().zip(&g) {
                    *b += gc;
                }
                if let Some(din) = dinput.as_deref_mut() {
                    dpatch.fill(0.0);
                    matvec_t_acc(&self.weight.data, co, plen, &g, &mut dpatch);
                    let mut i = 0;
                    for c in 0..self.in_channels() {
                        for ky in 0..k {
                            let row = c * h * w + (oy * s + ky) * w + ox * s;
                            for kx in 0..k {
                                din[row + kx] += dpatch[i + kx];
                            }
                            i += k;
                        }
                    }
                }
            }
        }
    }
}

impl Params for Conv2d {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Gated recurrent unit with separate input and hidden biases.
/// Gate blocks are ordered reset, update, candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gru {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub b_input: Tensor,
    pub b_hidden: Tensor,
}

/// Intermediate values of one GRU step needed by the backward pass.
#[derive(Debug, Clone)]
pub struct GruStep {
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub n: Vec<f64>,
    pub gh_n: Vec<f64>,
}

impl Gru {
    pub fn new<R: Rng>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        Gru {
            w_input: Tensor::uniform(&[3 * hidden, inputs], hidden, rng),
            w_hidden: Tensor::uniform(&[3 * hidden, hidden], hidden, rng),
            b_input: Tensor::uniform(&[3 * hidden], hidden, rng),
            b_hidden: Tensor::uniform(&[3 * hidden], hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.shape[1]
    }

    pub fn inputs(&self) -> usize {
        self.w_input.shape[1]
    }

    pub fn forward(&self, x: &[f64], h: &[f64]) -> (Vec<f64>, GruStep) {
        let d = self.hidden();
        let mut gi = self.b_input.data.clone();
        matvec_acc(&self.w_input.data, 3 * d, self.inputs(), x, &mut gi);
        let mut gh = self.b_hidden.data.clone();
        matvec_acc(&self.w_hidden.data, 3 * d, d, h, &mut gh);
        let mut step = GruStep {
            r: vec![0.0; d],
            z: vec![0.0; d],
            n: vec![0.0; d],
            gh_n: gh[2 * d..].to_vec(),
        };
        let mut h_next = vec![0.0; d];
        for j in 0..d {
            let r = sigmoid(gi[j] + gh[j]);
            let z = sigmoid(gi[d + j] + gh[d + j]);
            let n = (gi[2 * d + j] + r * gh[2 * d + j]).tanh();
            step.r[j] = r;
            step.z[j] = z;
            step.n[j] = n;
            h_next[j] = (1.0 - z) * n + z * h[j];
        }
        (h_next, step)
    }

    /// Backpropagates `dh_next`; accumulates into `dx` and returns `dh`.
    pub fn backward(
        &self,
        x: &[f64],
        h: &[f64],
        step: &GruStep,
        dh_next: &[f64],
        grad: &mut Gru,
        dx: &mut [f64],
    ) -> Vec<f64> {
        let d = self.hidden();
        let mut dgi = vec![0.0; 3 * d];
        let mut dgh = vec![0.0; 3 * d];
        let mut dh = vec![0.0; d];
        for j in 0..d {
            let (r, z, n) = (step.r[j], step.z[j], step.n[j]);
            let g = dh_next[j];
            dh[j] = g * z;
            let dn_pre = g * (1.0 - z) * (1.0 - n * n);
            let dz_pre = g * (h[j] - n) * z * (1.0 - z);
            let dr_pre = dn_pre * step.gh_n[j] * r * (1.0 - r);
            dgi[j] = dr_pre;
            dgh[j] = dr_pre;
            dgi[d + j] = dz_pre;
            dgh[d + j] = dz_pre;
            dgi[2 * d + j] = dn_pre;
            dgh[2 * d + j] = dn_pre * r;
        }
        outer_acc(&mut grad.w_input.data, &dgi, x);
        outer_acc(&mut grad.w_hidden.data, &dgh, h);
        for j in 0..3 * d {
            grad.b_input.data[j] += dgi[j];
            grad.b_hidden.data[j] += dgh[j];
        }
        matvec_t_acc(&self.w_input.data, 3 * d, self.inputs(), &dgi, dx);
        matvec_t_acc(&self.w_hidden.data, 3 * d, d, &dgh, &mut dh);
        dh
    }
}

impl Params for Gru {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_input".into(), &self.w_input),
            ("w_hidden".into(), &self.w_hidden),
            ("b_input".into(), &self.b_input),
            ("b_hidden".into(), &self.b_hidden),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_input,
            &mut self.w_hidden,
            &mut self.b_input,
            &mut self.b_hidden,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn numeric<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
        let eps = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                p[i] += eps;
                let mut m = x.to_vec();
                m[i] -= eps;
                (f(&p) - f(&m)) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn conv_output_size_follows_stride_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c1 = Conv2d::new(3, 32, 4, 4, &mut rng);
        let c2 = Conv2d::new(32, 64, 2, 2, &mut rng);
        let (h, w) = c1.output_size(64, 64).unwrap();
        assert_eq!((h, w), (16, 16));
        assert_eq!(c2.output_size(h, w), Some((8, 8)));
        assert_eq!(c1.output_size(3, 3), None);
    }

    #[test]
    fn conv_input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv2d::new(2, 3, 3, 2, &mut rng);
        let x: Vec<f64> = (0..2 * 7 * 7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..3 * 3 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |inp: &[f64]| dot(&conv.forward(inp, 7, 7), &weights);
        let out = conv.forward(&x, 7, 7);
        let mut dout = weights.clone();
        let mut grad = conv.clone();
        grad.zero_();
        let mut dx = vec![0.0; x.len()];
        conv.backward(&x, 7, 7, &out, &mut dout, &mut grad, Some(&mut dx));
        for (a, b) in dx.iter().zip(numeric(loss, &x)) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gru = Gru::new(3, 4, &mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, step) = gru.forward(&x, &h);
        let mut grad = gru.clone();
        grad.zero_();
        let mut dx = vec![0.0; 3];
        let dh = gru.backward(&x, &h, &step, &c, &mut grad, &mut dx);
        let fx = numeric(|xx| dot(&gru.forward(xx, &h).0, &c), &x);
        let fh = numeric(|hh| dot(&gru.forward(&x, hh).0, &c), &h);
        for (a, b) in dx.iter().zip(&fx).chain(dh.iter().zip(&fh)) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }
}
