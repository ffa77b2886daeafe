//! Dense ReLU networks over a flat parameter buffer, plus Adam.

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Fully connected network: ReLU on hidden layers, linear output.
///
/// Parameters live in one buffer; layer `l` stores its `out × in` weight
/// matrix row-major followed by its bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
struct LayerSpan {
    w: usize,
    b: usize,
    inp: usize,
    out: usize,
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache {
    /// Input followed by each hidden layer's post-activation output.
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Orthogonal weights scaled by `hidden_gain` (or `out_gain` for the last
    /// layer) and zero biases.
    pub fn orthogonal<R: Rng>(sizes: &[usize], hidden_gain: f64, out_gain: f64, rng: &mut R) -> Self {
        let mut net = Self { sizes: sizes.to_vec(), params: vec![0.0; Self::param_count(sizes)] };
        let spans = net.spans();
        let last = spans.len() - 1;
        for (l, sp) in spans.iter().enumerate() {
            let gain = if l == last { out_gain } else { hidden_gain };
            let w = orthogonal_matrix(sp.out, sp.inp, rng);
            for (dst, src) in net.params[sp.w..sp.w + sp.out * sp.inp].iter_mut().zip(w.iter()) {
                *dst = gain * src;
            }
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap_or(&0)
    }

    fn spans(&self) -> Vec<LayerSpan> {
        let mut off = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let sp = LayerSpan { w: off, b: off + w[0] * w[1], inp: w[0], out: w[1] };
                off += w[0] * w[1] + w[1];
                sp
            })
            .collect()
    }

    fn weight(&self, sp: &LayerSpan) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((sp.out, sp.inp), &self.params[sp.w..sp.w + sp.out * sp.inp])
            .expect("parameter buffer matches layer sizes")
    }

    fn bias(&self, sp: &LayerSpan) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[sp.b..sp.b + sp.out])
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, ForwardCache) {
        let spans = self.spans();
        let last = spans.len() - 1;
        let mut inputs = Vec::with_capacity(spans.len());
        let mut h = x.to_owned();
        for (l, sp) in spans.iter().enumerate() {
            let mut z = h.dot(&self.weight(sp).t());
            z += &self.bias(sp);
            if l != last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = z;
        }
        (h, ForwardCache { inputs })
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂output`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<f64>, grad: &mut [f64]) {
        let spans = self.spans();
        let mut g = grad_out.to_owned();
        for (l, sp) in spans.iter().enumerate().rev() {
            let a = &cache.inputs[l];
            let dw = g.t().dot(a);
            for (dst, src) in grad[sp.w..sp.w + sp.out * sp.inp].iter_mut().zip(dw.iter()) {
                *dst += src;
            }
            for (dst, src) in grad[sp.b..sp.b + sp.out].iter_mut().zip(g.sum_axis(Axis(0)).iter()) {
                *dst += src;
            }
            if l > 0 {
                let mut gi = g.dot(&self.weight(sp));
                gi.zip_mut_with(a, |v, &act| {
                    if act <= 0.0 {
                        *v = 0.0;
                    }
                });
                g = gi;
            }
        }
    }
}

/// `rows × cols` matrix with orthonormal rows or columns (whichever is shorter).
fn orthogonal_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let (n, k) = (rows.max(cols), rows.min(cols));
    let mut q = Array2::<f64>::zeros((n, k));
    for j in 0..k {
        loop {
            let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            for p in 0..j {
                let col = q.slice(s![.., p]);
                let d: f64 = col.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, ci) in v.iter_mut().zip(col.iter()) {
                    *vi -= d * ci;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for (dst, vi) in q.slice_mut(s![.., j]).iter_mut().zip(&v) {
                    *dst = vi / norm;
                }
                break;
            }
        }
    }
    if rows >= cols {
        q
    } else {
        q.reversed_axes()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}
