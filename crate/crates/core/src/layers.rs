//! Layers and the optimizer: valid stride-1 convolution (im2col), dense,
//! ReLU, softmax cross-entropy, fully-connected dropout and momentum SGD.
//!
//! Dense activations travel as `(batch, features, 1, 1)` tensors so every
//! layer speaks `Tensor4`.

use crate::error::{Error, Result};
use crate::pooling::RetainProb;
use crate::rng::RngStream;
use crate::tensor::Tensor4;

/// Weight-init standard deviation for all layers.
pub const WEIGHT_INIT_STD: f64 = 0.1;

// ---------------------------------------------------------------------------
// matrix kernels (row-major)
// ---------------------------------------------------------------------------

/// C(m x n) = A(m x k) * B(k x n)
fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for t in 0..k {
            let a_it = a[i * k + t];
            if a_it == 0.0 {
                continue;
            }
            let bt = &b[t * n..(t + 1) * n];
            for j in 0..n {
                ci[j] += a_it * bt[j];
            }
        }
    }
    c
}

/// C(m x n) = A(m x k) * B(n x k)^T
fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let ai = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let bj = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for t in 0..k {
                acc += ai[t] * bj[t];
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// C(m x n) = A(k x m)^T * B(k x n)
fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for t in 0..k {
        let at = &a[t * m..(t + 1) * m];
        let bt = &b[t * n..(t + 1) * n];
        for i in 0..m {
            let a_ti = at[i];
            if a_ti == 0.0 {
                continue;
            }
            let ci = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                ci[j] += a_ti * bt[j];
            }
        }
    }
    c
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

/// Valid stride-1 cross-correlation layer.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    /// (out_channels, in_channels, f_h, f_w)
    pub weights: Tensor4,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn new(out_channels: usize, in_channels: usize, f_h: usize, f_w: usize) -> Result<Self> {
        if f_h < 1 || f_w < 1 || out_channels < 1 || in_channels < 1 {
            return Err(Error::Param("conv dimensions must be >= 1".into()));
        }
        Ok(Self {
            weights: Tensor4::zeros((out_channels, in_channels, f_h, f_w))?,
            bias: vec![0.0; out_channels],
        })
    }

    /// Weights from N(0, std^2), biases 0.
    pub fn init(&mut self, rng: &mut RngStream, std: f64) -> Result<()> {
        self.weights = rng.gaussian(self.weights.shape(), 0.0, std)?;
        self.bias.iter_mut().for_each(|b| *b = 0.0);
        Ok(())
    }

    pub fn out_shape(&self, input: (usize, usize, usize, usize)) -> Result<(usize, usize, usize, usize)> {
        let (n, c, h, w) = input;
        let (oc, ic, fh, fw) = self.weights.shape();
        if c != ic {
            return Err(Error::Geometry(format!(
                "input has {c} channels, filter expects {ic}"
            )));
        }
        if fh > h || fw > w {
            return Err(Error::Geometry(format!(
                "filter {fh}x{fw} exceeds input {h}x{w}"
            )));
        }
        Ok((n, oc, h - fh + 1, w - fw + 1))
    }

    pub fn forward(&self, input: &Tensor4) -> Result<Tensor4> {
        let (n, _, h, w) = input.shape();
        let out_shape = self.out_shape(input.shape())?;
        let (_, oc, oh, ow) = out_shape;
        let (_, ic, fh, fw) = self.weights.shape();
        let (kk, ll) = (ic * fh * fw, oh * ow);
        let mut out = Tensor4::zeros(out_shape)?;
        let mut cols = vec![0.0; kk * ll];
        for b in 0..n {
            im2col(input.example(b), ic, h, w, fh, fw, &mut cols);
            let y = matmul_nn(self.weights.data(), &cols, oc, kk, ll);
            let dst = &mut out.data_mut()[b * oc * ll..(b + 1) * oc * ll];
            for o in 0..oc {
                let bias = self.bias[o];
                for l in 0..ll {
                    dst[o * ll + l] = y[o * ll + l] + bias;
                }
            }
        }
        Ok(out)
    }

    /// Exact gradients of the forward map.
    pub fn backward(
        &self,
        input: &Tensor4,
        grad_out: &Tensor4,
    ) -> Result<(Tensor4, Tensor4, Vec<f64>)> {
        let expected = self.out_shape(input.shape())?;
        if grad_out.shape() != expected {
            return Err(Error::ShapeMismatch(format!(
                "grad_out {:?}, expected {:?}",
                grad_out.shape(),
                expected
            )));
        }
        let (n, _, h, w) = input.shape();
        let (oc, ic, fh, fw) = self.weights.shape();
        let (_, _, oh, ow) = expected;
        let (kk, ll) = (ic * fh * fw, oh * ow);

        let mut grad_input = Tensor4::zeros(input.shape())?;
        let mut grad_w = vec![0.0; oc * kk];
        let mut grad_b = vec![0.0; oc];
        let mut cols = vec![0.0; kk * ll];

        for b in 0..n {
            let g = &grad_out.data()[b * oc * ll..(b + 1) * oc * ll];
            im2col(input.example(b), ic, h, w, fh, fw, &mut cols);

            // dW += g (oc x ll) * cols^T (ll x kk)
            let gw = matmul_nt(g, &cols, oc, ll, kk);
            for (acc, v) in grad_w.iter_mut().zip(&gw) {
                *acc += v;
            }
            for o in 0..oc {
                grad_b[o] += g[o * ll..(o + 1) * ll].iter().sum::<f64>();
            }

            // dcols (kk x ll) = W^T (kk x oc) * g (oc x ll)
            let gcols = matmul_tn(self.weights.data(), g, oc, kk, ll);
            let stride = ic * h * w;
            col2im_add(
                &gcols,
                ic,
                h,
                w,
                fh,
                fw,
                &mut grad_input.data_mut()[b * stride..(b + 1) * stride],
            );
        }
        let grad_weights = Tensor4::from_vec((oc, ic, fh, fw), grad_w)?;
        Ok((grad_input, grad_weights, grad_b))
    }
}

/// Unrolls one example (c, h, w) into a (c*fh*fw) x (oh*ow) column matrix,
/// valid windows, stride 1.
fn im2col(example: &[f64], c: usize, h: usize, w: usize, fh: usize, fw: usize, cols: &mut [f64]) {
    let (oh, ow) = (h - fh + 1, w - fw + 1);
    let ll = oh * ow;
    let mut row = 0;
    for ch in 0..c {
        let plane = &example[ch * h * w..(ch + 1) * h * w];
        for kh in 0..fh {
            for kw in 0..fw {
                let dst = &mut cols[row * ll..(row + 1) * ll];
                for i in 0..oh {
                    let src = &plane[(i + kh) * w + kw..(i + kh) * w + kw + ow];
                    dst[i * ow..(i + 1) * ow].copy_from_slice(src);
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of im2col: scatter-adds the column matrix back into the example.
fn col2im_add(cols: &[f64], c: usize, h: usize, w: usize, fh: usize, fw: usize, out: &mut [f64]) {
    let (oh, ow) = (h - fh + 1, w - fw + 1);
    let ll = oh * ow;
    let mut row = 0;
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for kh in 0..fh {
            for kw in 0..fw {
                let src = &cols[row * ll..(row + 1) * ll];
                for i in 0..oh {
                    let dst = &mut plane[(i + kh) * w + kw..(i + kh) * w + kw + ow];
                    for j in 0..ow {
                        dst[j] += src[i * ow + j];
                    }
                }
                row += 1;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// dense
// ---------------------------------------------------------------------------

/// Affine layer over flattened activations.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// row-major (out_units, in_units)
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_units: usize,
    pub out_units: usize,
}

impl DenseLayer {
    pub fn new(out_units: usize, in_units: usize) -> Result<Self> {
        if out_units < 1 || in_units < 1 {
            return Err(Error::Param("dense dimensions must be >= 1".into()));
        }
        Ok(Self {
            weights: vec![0.0; out_units * in_units],
            bias: vec![0.0; out_units],
            in_units,
            out_units,
        })
    }

    pub fn init(&mut self, rng: &mut RngStream, std: f64) -> Result<()> {
        let w = rng.gaussian((1, 1, self.out_units, self.in_units), 0.0, std)?;
        self.weights = w.into_vec();
        self.bias.iter_mut().for_each(|b| *b = 0.0);
        Ok(())
    }

    fn check_input(&self, input: &Tensor4) -> Result<usize> {
        let (n, f, h, w) = input.shape();
        if f != self.in_units || h != 1 || w != 1 {
            return Err(Error::ShapeMismatch(format!(
                "dense expects (N, {}, 1, 1), got {:?}",
                self.in_units,
                input.shape()
            )));
        }
        Ok(n)
    }

    pub fn forward(&self, input: &Tensor4) -> Result<Tensor4> {
        let n = self.check_input(input)?;
        let mut y = matmul_nt(input.data(), &self.weights, n, self.in_units, self.out_units);
        for b in 0..n {
            for o in 0..self.out_units {
                y[b * self.out_units + o] += self.bias[o];
            }
        }
        Tensor4::from_vec((n, self.out_units, 1, 1), y)
    }

    pub fn backward(
        &self,
        input: &Tensor4,
        grad_out: &Tensor4,
    ) -> Result<(Tensor4, Vec<f64>, Vec<f64>)> {
        let n = self.check_input(input)?;
        if grad_out.shape() != (n, self.out_units, 1, 1) {
            return Err(Error::ShapeMismatch(format!(
                "dense grad_out {:?}, expected ({n}, {}, 1, 1)",
                grad_out.shape(),
                self.out_units
            )));
        }
        let grad_in = matmul_nn(grad_out.data(), &self.weights, n, self.out_units, self.in_units);
        let grad_w = matmul_tn(grad_out.data(), input.data(), n, self.out_units, self.in_units);
        let mut grad_b = vec![0.0; self.out_units];
        for b in 0..n {
            for o in 0..self.out_units {
                grad_b[o] += grad_out.data()[b * self.out_units + o];
            }
        }
        Ok((
            Tensor4::from_vec((n, self.in_units, 1, 1), grad_in)?,
            grad_w,
            grad_b,
        ))
    }
}

// ---------------------------------------------------------------------------
// relu / softmax / dropout
// ---------------------------------------------------------------------------

pub fn relu_forward(input: &Tensor4) -> Tensor4 {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Subgradient 0 at exactly 0.
pub fn relu_backward(input: &Tensor4, grad_out: &Tensor4) -> Result<Tensor4> {
    if input.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch(format!(
            "relu {:?} vs {:?}",
            input.shape(),
            grad_out.shape()
        )));
    }
    let gate = input.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    gate.hadamard(grad_out)
}

/// Mean cross-entropy over the batch with max-subtraction stabilization.
/// Gradient w.r.t. logits is (softmax - one_hot) / batch.
pub fn softmax_xent(logits: &Tensor4, labels: &[usize]) -> Result<(f64, Tensor4)> {
    let (n, classes, h, w) = logits.shape();
    if h != 1 || w != 1 {
        return Err(Error::ShapeMismatch(format!(
            "logits must be (N, C, 1, 1), got {:?}",
            logits.shape()
        )));
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for batch of {n}",
            labels.len()
        )));
    }
    let mut grad = Tensor4::zeros(logits.shape())?;
    let mut loss = 0.0;
    for b in 0..n {
        let y = labels[b];
        if y >= classes {
            return Err(Error::Param(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
        let row = &logits.data()[b * classes..(b + 1) * classes];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() - (row[y] - m);
        let g = &mut grad.data_mut()[b * classes..(b + 1) * classes];
        for c in 0..classes {
            g[c] = (exps[c] / z - if c == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Train-time dropout on dense inputs: elementwise Bernoulli mask.
/// Returns the masked activations and the mask (needed for backprop).
pub fn fc_dropout_train(
    input: &Tensor4,
    p: RetainProb,
    rng: &mut RngStream,
) -> Result<(Tensor4, Tensor4)> {
    let mask = rng.bernoulli_mask(input.shape(), p)?;
    Ok((input.hadamard(&mask)?, mask))
}

/// Test-time compensation: scale activations by p so expectations match the
/// train-time masked values.
pub fn fc_dropout_test(input: &Tensor4, p: RetainProb) -> Tensor4 {
    input.map(|v| v * p.p())
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

/// v <- momentum*v - lr*grad; param <- param + v
#[derive(Debug, Clone)]
pub struct MomentumSGD {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl MomentumSGD {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::Param(format!("lr must be > 0, got {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Param(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} param buffers vs {} grad buffers",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::ShapeMismatch(
                "parameter list changed between steps".into(),
            ));
        }
        for ((param, grad), vel) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if param.len() != grad.len() || param.len() != vel.len() {
                return Err(Error::ShapeMismatch(
                    "param/grad/velocity length mismatch".into(),
                ));
            }
            for i in 0..param.len() {
                vel[i] = self.momentum * vel[i] - self.learning_rate * grad[i];
                param[i] += vel[i];
            }
        }
        Ok(())
    }
}
