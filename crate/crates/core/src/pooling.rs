//! The five pooling schemes and their probability machinery.
//!
//! Train time: plain max, max-pooling dropout (Bernoulli mask then max,
//! equivalently multinomial index sampling over the sorted region), and
//! stochastic pooling (multinomial over activation-normalized probabilities).
//! Test time: scaled max, probabilistic weighted pooling (the exact
//! expectation of the dropout-modified max) and activation-weighted pooling.
//!
//! All windows are valid (no padding): windows that would overhang the input
//! are not emitted.

use num_bigint::BigUint;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor4;

/// Pooling-region geometry: a `region_h x region_w` window moved by `stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub region_h: usize,
    pub region_w: usize,
    pub stride: usize,
}

impl PoolSpec {
    pub fn new(region_h: usize, region_w: usize, stride: usize) -> Result<Self> {
        if region_h < 1 || region_w < 1 || stride < 1 {
            return Err(Error::Param(format!(
                "pool geometry must be >= 1, got {region_h}x{region_w} stride {stride}"
            )));
        }
        Ok(Self {
            region_h,
            region_w,
            stride,
        })
    }

    /// Square region, the `<t>P<s>` architecture token.
    pub fn square(side: usize, stride: usize) -> Result<Self> {
        Self::new(side, side, stride)
    }

    /// Number of units per region (t).
    pub fn region_size(&self) -> usize {
        self.region_h * self.region_w
    }

    /// Regions never share input units iff the stride equals the region side.
    pub fn non_overlapping(&self) -> bool {
        self.stride == self.region_h && self.stride == self.region_w
    }

    /// Output spatial dims for a valid (no padding) pooling pass.
    pub fn out_dims(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        if self.region_h > in_h || self.region_w > in_w {
            return Err(Error::Geometry(format!(
                "pooling region {}x{} exceeds input {}x{}",
                self.region_h, self.region_w, in_h, in_w
            )));
        }
        Ok((
            (in_h - self.region_h) / self.stride + 1,
            (in_w - self.region_w) / self.stride + 1,
        ))
    }
}

/// Retaining probability p in (0, 1]; q = 1 - p is the dropout probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetainProb {
    p: f64,
}

impl RetainProb {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Param(format!(
                "retaining probability must be in (0, 1], got {p}"
            )));
        }
        Ok(Self { p })
    }

    #[inline]
    pub fn p(&self) -> f64 {
        self.p
    }

    #[inline]
    pub fn q(&self) -> f64 {
        1.0 - self.p
    }
}

/// Selection probabilities over a sorted pooling region under dropout.
///
/// `probs[0]` is the all-dropped event (output 0); `probs[i]` for i >= 1 is
/// the probability that the i-th smallest activation is the pooled output.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexProbs {
    probs: Vec<f64>,
}

impl IndexProbs {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Per-output index of the pooled region: the index of the i-th smallest
/// activation under dropout. p_i = p * q^(n-i) for i >= 1, p_0 = q^n.
pub fn dropout_index_probs(n: usize, p: RetainProb) -> Result<IndexProbs> {
    if n == 0 {
        return Err(Error::Param("region size must be >= 1".into()));
    }
    let q = p.q();
    let mut probs = Vec::with_capacity(n + 1);
    probs.push(q.powi(n as i32));
    for i in 1..=n {
        probs.push(p.p() * q.powi((n - i) as i32));
    }
    Ok(IndexProbs { probs })
}

/// Forward pooling result plus the per-output source index for backprop.
///
/// `chosen[k]` is the flat index into the input tensor whose value produced
/// output `k`, or `None` when every unit in the region was dropped (the
/// output was the constant 0 and no gradient flows).
#[derive(Debug, Clone)]
pub struct PoolForwardTrace {
    pub pooled: Tensor4,
    pub chosen: Vec<Option<usize>>,
    pub input_shape: (usize, usize, usize, usize),
}

/// The `t` activations of region (out_h, out_w) in raster order with their
/// source coordinates.
pub fn extract_region(
    input: &Tensor4,
    spec: &PoolSpec,
    b: usize,
    c: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Vec<(f64, (usize, usize))>> {
    let (_, _, h, w) = input.shape();
    let h0 = out_h * spec.stride;
    let w0 = out_w * spec.stride;
    if h0 + spec.region_h > h || w0 + spec.region_w > w {
        return Err(Error::Geometry(format!(
            "window at output ({out_h},{out_w}) exceeds input bounds {h}x{w}"
        )));
    }
    let mut out = Vec::with_capacity(spec.region_size());
    for dh in 0..spec.region_h {
        for dw in 0..spec.region_w {
            let (hh, ww) = (h0 + dh, w0 + dw);
            out.push((input.get(b, c, hh, ww), (hh, ww)));
        }
    }
    Ok(out)
}

fn pool_output_shape(input: &Tensor4, spec: &PoolSpec) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = input.shape();
    let (oh, ow) = spec.out_dims(h, w)?;
    Ok((n, c, oh, ow))
}

fn check_non_negative(input: &Tensor4, what: &str) -> Result<()> {
    if input.data().iter().any(|&v| v < 0.0) {
        return Err(Error::Precondition(format!(
            "{what} requires non-negative activations"
        )));
    }
    Ok(())
}

/// Plain max pooling. Argmax ties break toward the lowest raster index.
pub fn max_pool_forward(input: &Tensor4, spec: &PoolSpec) -> Result<PoolForwardTrace> {
    let out_shape = pool_output_shape(input, spec)?;
    let (n, c, oh, ow) = out_shape;
    let mut pooled = Tensor4::zeros(out_shape)?;
    let mut chosen = vec![None; pooled.len()];
    let mut k = 0;
    for b in 0..n {
        for ci in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let (mut best, mut best_idx) = (f64::NEG_INFINITY, 0usize);
                    for dh in 0..spec.region_h {
                        for dw in 0..spec.region_w {
                            let (hh, ww) = (i * spec.stride + dh, j * spec.stride + dw);
                            let v = input.get(b, ci, hh, ww);
                            if v > best {
                                best = v;
                                best_idx = input.flat_index(b, ci, hh, ww);
                            }
                        }
                    }
                    pooled.data_mut()[k] = best;
                    chosen[k] = Some(best_idx);
                    k += 1;
                }
            }
        }
    }
    Ok(PoolForwardTrace {
        pooled,
        chosen,
        input_shape: input.shape(),
    })
}

/// Max pooling over a mask-modified input: dropped units (mask 0) cannot win;
/// a fully dropped region outputs 0 with no source index.
///
/// This is the deterministic core of max-pooling dropout, split out so tests
/// can freeze the mask.
pub fn masked_max_pool_forward(
    input: &Tensor4,
    mask: &Tensor4,
    spec: &PoolSpec,
) -> Result<PoolForwardTrace> {
    if mask.shape() != input.shape() {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} vs input {:?}",
            mask.shape(),
            input.shape()
        )));
    }
    let out_shape = pool_output_shape(input, spec)?;
    let (n, c, oh, ow) = out_shape;
    let mut pooled = Tensor4::zeros(out_shape)?;
    let mut chosen = vec![None; pooled.len()];
    let mut k = 0;
    for b in 0..n {
        for ci in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = None;
                    for dh in 0..spec.region_h {
                        for dw in 0..spec.region_w {
                            let (hh, ww) = (i * spec.stride + dh, j * spec.stride + dw);
                            if mask.get(b, ci, hh, ww) == 0.0 {
                                continue;
                            }
                            let v = input.get(b, ci, hh, ww);
                            if v > best {
                                best = v;
                                best_idx = Some(input.flat_index(b, ci, hh, ww));
                            }
                        }
                    }
                    pooled.data_mut()[k] = if best_idx.is_some() { best } else { 0.0 };
                    chosen[k] = best_idx;
                    k += 1;
                }
            }
        }
    }
    Ok(PoolForwardTrace {
        pooled,
        chosen,
        input_shape: input.shape(),
    })
}

/// Train-time max-pooling dropout: draw a Bernoulli mask over the whole
/// input, zero the dropped units, pool the maximum of what survives.
pub fn max_pool_dropout_forward(
    input: &Tensor4,
    spec: &PoolSpec,
    p: RetainProb,
    rng: &mut RngStream,
) -> Result<PoolForwardTrace> {
    check_non_negative(input, "max-pooling dropout")?;
    let mask = rng.bernoulli_mask(input.shape(), p)?;
    masked_max_pool_forward(input, &mask, spec)
}

/// One multinomial draw over a sorted region: returns the pooled value and
/// the sorted index (0 = all dropped, output 0).
pub fn multinomial_pool_sample(
    region: &[f64],
    p: RetainProb,
    rng: &mut RngStream,
) -> Result<(f64, usize)> {
    if region.is_empty() {
        return Err(Error::Param("region must be non-empty".into()));
    }
    if region.iter().any(|&v| v < 0.0) {
        return Err(Error::Precondition(
            "multinomial pooling requires non-negative activations".into(),
        ));
    }
    let mut sorted = region.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let probs = dropout_index_probs(region.len(), p)?;
    let i = sample_index(probs.probs(), rng);
    let value = if i == 0 { 0.0 } else { sorted[i - 1] };
    Ok((value, i))
}

fn sample_index(probs: &[f64], rng: &mut RngStream) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, &pr) in probs.iter().enumerate() {
        acc += pr;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Test-time scaled max pooling: p times the region maximum.
pub fn scaled_max_pool(input: &Tensor4, spec: &PoolSpec, p: RetainProb) -> Result<Tensor4> {
    let trace = max_pool_forward(input, spec)?;
    Ok(trace.pooled.map(|v| p.p() * v))
}

/// Test-time probabilistic weighted pooling: the exact expectation of the
/// train-time dropout-modified max, sum_i p_i * a_i over the sorted region.
pub fn prob_weighted_pool(input: &Tensor4, spec: &PoolSpec, p: RetainProb) -> Result<Tensor4> {
    check_non_negative(input, "probabilistic weighted pooling")?;
    let n = spec.region_size();
    let probs = dropout_index_probs(n, p)?;
    let weights = &probs.probs()[1..];
    region_reduce(input, spec, |region| {
        let mut sorted = region.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted
            .iter()
            .zip(weights)
            .map(|(a, w)| a * w)
            .sum()
    })
}

/// Activation-normalized selection probabilities; an all-zero region gets the
/// uniform distribution (the limit of vanishing activations).
pub fn stochastic_pool_probs(region: &[f64]) -> Result<Vec<f64>> {
    if region.is_empty() {
        return Err(Error::Param("region must be non-empty".into()));
    }
    if region.iter().any(|&v| v < 0.0) {
        return Err(Error::Precondition(
            "stochastic pooling requires non-negative activations".into(),
        ));
    }
    let sum: f64 = region.iter().sum();
    if sum == 0.0 {
        let u = 1.0 / region.len() as f64;
        return Ok(vec![u; region.len()]);
    }
    Ok(region.iter().map(|&v| v / sum).collect())
}

/// One stochastic-pooling draw: index i with probability a_i / sum(a).
pub fn stochastic_pool_sample(region: &[f64], rng: &mut RngStream) -> Result<(f64, usize)> {
    let probs = stochastic_pool_probs(region)?;
    let i = sample_index(&probs, rng);
    Ok((region[i], i))
}

/// Train-time stochastic pooling over a whole tensor, with source indices for
/// gradient routing.
pub fn stochastic_pool_forward(
    input: &Tensor4,
    spec: &PoolSpec,
    rng: &mut RngStream,
) -> Result<PoolForwardTrace> {
    check_non_negative(input, "stochastic pooling")?;
    let out_shape = pool_output_shape(input, spec)?;
    let (n, c, oh, ow) = out_shape;
    let mut pooled = Tensor4::zeros(out_shape)?;
    let mut chosen = vec![None; pooled.len()];
    let mut k = 0;
    for b in 0..n {
        for ci in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let region = extract_region(input, spec, b, ci, i, j)?;
                    let values: Vec<f64> = region.iter().map(|(v, _)| *v).collect();
                    let (value, idx) = stochastic_pool_sample(&values, rng)?;
                    let (hh, ww) = region[idx].1;
                    pooled.data_mut()[k] = value;
                    chosen[k] = Some(input.flat_index(b, ci, hh, ww));
                    k += 1;
                }
            }
        }
    }
    Ok(PoolForwardTrace {
        pooled,
        chosen,
        input_shape: input.shape(),
    })
}

/// Test-time stochastic pooling: activations weighted by their own
/// normalized probabilities and summed.
pub fn stochastic_pool_weighted(input: &Tensor4, spec: &PoolSpec) -> Result<Tensor4> {
    check_non_negative(input, "stochastic weighted pooling")?;
    region_reduce(input, spec, |region| {
        let sum: f64 = region.iter().sum();
        if sum == 0.0 {
            0.0
        } else {
            region.iter().map(|&v| v * v).sum::<f64>() / sum
        }
    })
}

fn region_reduce(
    input: &Tensor4,
    spec: &PoolSpec,
    f: impl Fn(&[f64]) -> f64,
) -> Result<Tensor4> {
    let out_shape = pool_output_shape(input, spec)?;
    let (n, c, oh, ow) = out_shape;
    let mut pooled = Tensor4::zeros(out_shape)?;
    let mut region = vec![0.0; spec.region_size()];
    let mut k = 0;
    for b in 0..n {
        for ci in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut r = 0;
                    for dh in 0..spec.region_h {
                        for dw in 0..spec.region_w {
                            region[r] = input.get(b, ci, i * spec.stride + dh, j * spec.stride + dw);
                            r += 1;
                        }
                    }
                    pooled.data_mut()[k] = f(&region);
                    k += 1;
                }
            }
        }
    }
    Ok(pooled)
}

/// Routes each output gradient to its recorded source unit, accumulating
/// where overlapping regions share a cell. All-dropped outputs route nothing.
pub fn pool_backward(trace: &PoolForwardTrace, grad_out: &Tensor4) -> Result<Tensor4> {
    if grad_out.shape() != trace.pooled.shape() {
        return Err(Error::ShapeMismatch(format!(
            "grad_out {:?} vs pooled {:?}",
            grad_out.shape(),
            trace.pooled.shape()
        )));
    }
    let mut grad_in = Tensor4::zeros(trace.input_shape)?;
    for (k, src) in trace.chosen.iter().enumerate() {
        if let Some(j) = src {
            grad_in.data_mut()[*j] += grad_out.data()[k];
        }
    }
    Ok(grad_in)
}

/// Exact number of distinct dropout-realizable networks for one pooling
/// layer, (1+t)^(rs/t), with its base-10 logarithm. Non-overlapping pooling
/// only: r feature maps of s units each, regions of t units.
pub fn model_count(r: usize, s: usize, t: usize) -> Result<(BigUint, f64)> {
    if t == 0 {
        return Err(Error::Param("region size t must be >= 1".into()));
    }
    let rs = r
        .checked_mul(s)
        .ok_or_else(|| Error::Size("r*s overflows".into()))?;
    if rs % t != 0 {
        return Err(Error::Param(format!(
            "t = {t} does not divide r*s = {rs}; geometry is inconsistent"
        )));
    }
    let exponent = rs / t;
    let exp32 = u32::try_from(exponent)
        .map_err(|_| Error::Size(format!("exponent {exponent} too large")))?;
    let count = BigUint::from(t + 1).pow(exp32);
    let log10 = exponent as f64 * ((t + 1) as f64).log10();
    Ok((count, log10))
}

/// The per-unit base b(t) = (1+t)^(1/t); b(1) = 2 and b decreases with t.
pub fn model_count_base(t: usize) -> Result<f64> {
    if t < 1 {
        return Err(Error::Param("t must be >= 1".into()));
    }
    Ok(((1 + t) as f64).powf(1.0 / t as f64))
}
