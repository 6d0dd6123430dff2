//! Small MLPs with layer normalization and exact manual backpropagation.
//!
//! Architecture: input -> Linear -> LayerNorm -> ReLU -> Linear -> LayerNorm
//! -> ReLU -> Linear head. All parameters are 64-bit floats; gradients are
//! validated against central finite differences in the test and acceptance
//! suites.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const LN_EPS: f64 = 1e-5;
/// Orthogonal-init gain for the hidden (ReLU) layers.
const HIDDEN_GAIN: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// Weight matrix, `(out, in)`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { w: Array2::zeros((out_dim, in_dim)), b: Array1::zeros(out_dim) }
    }

    fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.w.dot(x) + &self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub shift: Array1<f64>,
}

impl LayerNorm {
    fn unit(dim: usize) -> Self {
        Self { gain: Array1::ones(dim), shift: Array1::zeros(dim) }
    }

    fn zeros(dim: usize) -> Self {
        Self { gain: Array1::zeros(dim), shift: Array1::zeros(dim) }
    }

    fn forward(&self, z: &Array1<f64>) -> (Array1<f64>, LnCache) {
        let n = z.len() as f64;
        let mean = z.sum() / n;
        let var = z.mapv(|v| (v - mean) * (v - mean)).sum() / n;
        let inv_std = 1.0 / (var + LN_EPS).sqrt();
        let xhat = z.mapv(|v| (v - mean) * inv_std);
        let y = &xhat * &self.gain + &self.shift;
        (y, LnCache { xhat, inv_std })
    }

    /// Backward through normalization; accumulates parameter gradients and
    /// returns the input gradient.
    fn backward(&self, cache: &LnCache, dy: &Array1<f64>, grads: &mut LayerNorm) -> Array1<f64> {
        let n = dy.len() as f64;
        grads.gain = &grads.gain + &(dy * &cache.xhat);
        grads.shift = &grads.shift + dy;
        let dxhat = dy * &self.gain;
        let mean_dxhat = dxhat.sum() / n;
        let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum() / n;
        cache
            .xhat
            .iter()
            .zip(dxhat.iter())
            .map(|(&xh, &dxh)| cache.inv_std * (dxh - mean_dxhat - xh * mean_dxhat_xhat))
            .collect()
    }
}

#[derive(Debug, Clone)]
struct LnCache {
    xhat: Array1<f64>,
    inv_std: f64,
}

/// Two-hidden-layer MLP with layer normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub l1: Linear,
    pub n1: LayerNorm,
    pub l2: Linear,
    pub n2: LayerNorm,
    pub head: Linear,
}

/// Intermediate activations needed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Array1<f64>,
    ln1: LnCache,
    a1: Array1<f64>,
    ln2: LnCache,
    a2: Array1<f64>,
}

impl Mlp {
    /// Orthogonal initialization: hidden layers use gain sqrt(2), the output
    /// head uses `head_gain`; biases zero, normalization gains one.
    pub fn init(
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        head_gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            l1: Linear { w: orthogonal(hidden_dim, in_dim, HIDDEN_GAIN, rng), b: Array1::zeros(hidden_dim) },
            n1: LayerNorm::unit(hidden_dim),
            l2: Linear { w: orthogonal(hidden_dim, hidden_dim, HIDDEN_GAIN, rng), b: Array1::zeros(hidden_dim) },
            n2: LayerNorm::unit(hidden_dim),
            head: Linear { w: orthogonal(out_dim, hidden_dim, head_gain, rng), b: Array1::zeros(out_dim) },
        }
    }

    /// All-zero parameters with the given shape (also used as a gradient
    /// accumulator).
    pub fn zeros(in_dim: usize, hidden_dim: usize, out_dim: usize) -> Self {
        Self {
            l1: Linear::zeros(hidden_dim, in_dim),
            n1: LayerNorm::zeros(hidden_dim),
            l2: Linear::zeros(hidden_dim, hidden_dim),
            n2: LayerNorm::zeros(hidden_dim),
            head: Linear::zeros(out_dim, hidden_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim(), self.hidden_dim(), self.out_dim())
    }

    pub fn in_dim(&self) -> usize {
        self.l1.w.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.l1.w.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.head.w.nrows()
    }

    pub fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Array1<f64>) -> (Array1<f64>, ForwardCache) {
        let z1 = self.l1.forward(x);
        let (y1, ln1) = self.n1.forward(&z1);
        let a1 = y1.mapv(|v| v.max(0.0));
        let z2 = self.l2.forward(&a1);
        let (y2, ln2) = self.n2.forward(&z2);
        let a2 = y2.mapv(|v| v.max(0.0));
        let out = self.head.forward(&a2);
        (out, ForwardCache { x: x.clone(), ln1, a1, ln2, a2 })
    }

    /// Accumulate parameter gradients for `d loss / d out = dout` into
    /// `grads` (same shape as `self`).
    pub fn backward(&self, cache: &ForwardCache, dout: &Array1<f64>, grads: &mut Mlp) {
        accumulate_linear(&mut grads.head, dout, &cache.a2);
        let da2 = self.head.w.t().dot(dout);
        let dy2: Array1<f64> = da2
            .iter()
            .zip(cache.a2.iter())
            .map(|(&d, &a)| if a > 0.0 { d } else { 0.0 })
            .collect();
        let dz2 = self.n2.backward(&cache.ln2, &dy2, &mut grads.n2);

        accumulate_linear(&mut grads.l2, &dz2, &cache.a1);
        let da1 = self.l2.w.t().dot(&dz2);
        let dy1: Array1<f64> = da1
            .iter()
            .zip(cache.a1.iter())
            .map(|(&d, &a)| if a > 0.0 { d } else { 0.0 })
            .collect();
        let dz1 = self.n1.backward(&cache.ln1, &dy1, &mut grads.n1);

        accumulate_linear(&mut grads.l1, &dz1, &cache.x);
    }

    pub fn n_params(&self) -> usize {
        let lin = |l: &Linear| l.w.len() + l.b.len();
        let ln = |n: &LayerNorm| n.gain.len() + n.shift.len();
        lin(&self.l1) + ln(&self.n1) + lin(&self.l2) + ln(&self.n2) + lin(&self.head)
    }

    /// Append all parameters in a fixed order.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        let push_lin = |l: &Linear, out: &mut Vec<f64>| {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        };
        let push_ln = |n: &LayerNorm, out: &mut Vec<f64>| {
            out.extend(n.gain.iter());
            out.extend(n.shift.iter());
        };
        push_lin(&self.l1, out);
        push_ln(&self.n1, out);
        push_lin(&self.l2, out);
        push_ln(&self.n2, out);
        push_lin(&self.head, out);
    }

    /// Read parameters back from the flattened order; returns the number of
    /// values consumed.
    pub fn assign_from_slice(&mut self, values: &[f64]) -> usize {
        fn take(dst: &mut f64, values: &[f64], i: &mut usize) {
            *dst = values[*i];
            *i += 1;
        }
        fn take_lin(l: &mut Linear, values: &[f64], i: &mut usize) {
            for w in l.w.iter_mut() {
                take(w, values, i);
            }
            for b in l.b.iter_mut() {
                take(b, values, i);
            }
        }
        fn take_ln(n: &mut LayerNorm, values: &[f64], i: &mut usize) {
            for g in n.gain.iter_mut() {
                take(g, values, i);
            }
            for s in n.shift.iter_mut() {
                take(s, values, i);
            }
        }
        let mut i = 0;
        take_lin(&mut self.l1, values, &mut i);
        take_ln(&mut self.n1, values, &mut i);
        take_lin(&mut self.l2, values, &mut i);
        take_ln(&mut self.n2, values, &mut i);
        take_lin(&mut self.head, values, &mut i);
        i
    }
}

fn accumulate_linear(grads: &mut Linear, dout: &Array1<f64>, input: &Array1<f64>) {
    for (i, &d) in dout.iter().enumerate() {
        grads.b[i] += d;
        for (j, &x) in input.iter().enumerate() {
            grads.w[(i, j)] += d * x;
        }
    }
}

/// Orthogonal `(rows, cols)` matrix scaled by `gain`: the smaller dimension
/// is orthonormal, so `W W^T = gain^2 I` (rows <= cols) or `W^T W = gain^2 I`
/// (rows > cols).
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (tall, slim) = (rows.max(cols), rows.min(cols));
    let mut a = Array2::<f64>::zeros((tall, slim));
    for v in a.iter_mut() {
        *v = standard_normal(rng);
    }
    let q = orthonormalize_columns(a);
    let w = if rows >= cols { q } else { q.t().to_owned() };
    w * gain
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 shifted into (0, 1] to keep the log finite.
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Modified Gram-Schmidt with a second orthogonalization pass.
fn orthonormalize_columns(mut a: Array2<f64>) -> Array2<f64> {
    let (rows, cols) = a.dim();
    for j in 0..cols {
        for _ in 0..2 {
            for i in 0..j {
                let qi = a.column(i).to_owned();
                let proj = qi.dot(&a.column(j));
                let mut col = a.column_mut(j);
                col.zip_mut_with(&qi, |x, &q| *x -= proj * q);
            }
        }
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        if norm < 1e-12 {
            // Degenerate draw: fall back to a unit basis vector.
            let mut col = a.column_mut(j);
            col.fill(0.0);
            col[j % rows] = 1.0;
        } else {
            a.column_mut(j).mapv_inplace(|x| x / norm);
        }
    }
    a
}
