//! Network assembly: turns an [`ArchSpec`](crate::arch::ArchSpec) into a
//! layer stack and provides train/test forward passes plus backprop.
//!
//! Pooling behavior is not baked into the stack; the caller picks a
//! [`PoolTrainMode`] or [`PoolTestMode`] per pass, so one trained model can
//! be evaluated under every test-time pooling scheme.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::arch::{ArchSpec, ArchToken, Shape};
use crate::error::{Error, Result};
use crate::layers::{
    fc_dropout_test, fc_dropout_train, relu_backward, relu_forward, ConvLayer, DenseLayer,
    WEIGHT_INIT_STD,
};
use crate::pooling::{
    max_pool_dropout_forward, max_pool_forward, pool_backward, prob_weighted_pool,
    scaled_max_pool, stochastic_pool_forward, stochastic_pool_weighted, PoolForwardTrace,
    PoolSpec, RetainProb,
};
use crate::rng::RngStream;
use crate::tensor::Tensor4;

/// Pooling scheme used during training forward passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolTrainMode {
    Max,
    MaxDropout,
    Stochastic,
}

/// Pooling scheme used at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolTestMode {
    Max,
    ScaledMax,
    ProbWeighted,
    StochasticWeighted,
}

impl PoolTrainMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Self::Max),
            "max_dropout" => Ok(Self::MaxDropout),
            "stochastic" => Ok(Self::Stochastic),
            other => Err(Error::Param(format!(
                "unknown train pool mode `{other}` (expected max, max_dropout, stochastic)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Max => "max",
            Self::MaxDropout => "max_dropout",
            Self::Stochastic => "stochastic",
        }
    }
}

impl PoolTestMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Self::Max),
            "scaled_max" => Ok(Self::ScaledMax),
            "prob_weighted" => Ok(Self::ProbWeighted),
            "stochastic_weighted" => Ok(Self::StochasticWeighted),
            other => Err(Error::Param(format!(
                "unknown test pool mode `{other}` (expected max, scaled_max, prob_weighted, stochastic_weighted)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Max => "max",
            Self::ScaledMax => "scaled_max",
            Self::ProbWeighted => "prob_weighted",
            Self::StochasticWeighted => "stochastic_weighted",
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Conv(ConvLayer),
    Relu,
    Pool(PoolSpec),
    Flatten,
    FcDropout(RetainProb),
    Dense(DenseLayer),
}

/// Per-node forward cache consumed by the backward pass.
pub enum Cache {
    Conv { input: Tensor4 },
    Relu { input: Tensor4 },
    Pool { trace: PoolForwardTrace },
    Flatten { in_shape: (usize, usize, usize, usize) },
    FcDropout { mask: Tensor4 },
    Dense { input: Tensor4 },
}

/// Gradients for the parameterized nodes, in network order.
pub struct Grads {
    buffers: Vec<Vec<f64>>,
}

impl Grads {
    pub fn buffers(&self) -> Vec<&[f64]> {
        self.buffers.iter().map(|b| b.as_slice()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    arch: String,
    nodes: Vec<Node>,
    n_classes: usize,
}

impl Network {
    /// Builds an uninitialized network. `fc_dropout` inserts a dropout node
    /// before every dense layer.
    pub fn build(spec: &ArchSpec, fc_dropout: Option<RetainProb>) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut flattened = false;
        for (i, tok) in spec.tokens.iter().enumerate().skip(1) {
            let prev = spec.shapes[i - 1];
            match *tok {
                ArchToken::Input { .. } => unreachable!("parse rejects mid-stream input"),
                ArchToken::Conv { maps, filter } => {
                    let in_c = match prev {
                        Shape::Spatial { channels, .. } => channels,
                        Shape::Flat { .. } => unreachable!(),
                    };
                    nodes.push(Node::Conv(ConvLayer::new(maps, in_c, filter, filter)?));
                    nodes.push(Node::Relu);
                }
                ArchToken::Pool { region, stride } => {
                    nodes.push(Node::Pool(PoolSpec::square(region, stride)?));
                }
                ArchToken::Dense { units } => {
                    let in_units = match prev {
                        Shape::Spatial { channels, height, width } => {
                            if !flattened {
                                nodes.push(Node::Flatten);
                                flattened = true;
                            }
                            channels * height * width
                        }
                        Shape::Flat { units } => units,
                    };
                    // a dense layer that is not the last is followed by relu
                    let last = i == spec.tokens.len() - 1;
                    if !last {
                        if let Some(p) = fc_dropout {
                            nodes.push(Node::FcDropout(p));
                        }
                        nodes.push(Node::Dense(DenseLayer::new(units, in_units)?));
                        nodes.push(Node::Relu);
                    } else {
                        if let Some(p) = fc_dropout {
                            nodes.push(Node::FcDropout(p));
                        }
                        nodes.push(Node::Dense(DenseLayer::new(units, in_units)?));
                    }
                }
            }
        }
        Ok(Self {
            arch: spec.source().to_string(),
            nodes,
            n_classes: spec.n_classes(),
        })
    }

    pub fn arch(&self) -> &str {
        &self.arch
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Gaussian weight init (std 0.1), zero biases.
    pub fn init(&mut self, rng: &mut RngStream) -> Result<()> {
        for node in &mut self.nodes {
            match node {
                Node::Conv(c) => c.init(rng, WEIGHT_INIT_STD)?,
                Node::Dense(d) => d.init(rng, WEIGHT_INIT_STD)?,
                _ => {}
            }
        }
        Ok(())
    }

    /// Training forward pass; returns logits and the caches backprop needs.
    pub fn forward_train(
        &self,
        input: &Tensor4,
        mode: PoolTrainMode,
        p: Option<RetainProb>,
        rng: &mut RngStream,
    ) -> Result<(Tensor4, Vec<Cache>)> {
        let mut caches = Vec::with_capacity(self.nodes.len());
        let mut x = input.clone();
        for node in &self.nodes {
            x = match node {
                Node::Conv(c) => {
                    let y = c.forward(&x)?;
                    caches.push(Cache::Conv { input: x });
                    y
                }
                Node::Relu => {
                    let y = relu_forward(&x);
                    caches.push(Cache::Relu { input: x });
                    y
                }
                Node::Pool(spec) => {
                    let trace = match mode {
                        PoolTrainMode::Max => max_pool_forward(&x, spec)?,
                        PoolTrainMode::MaxDropout => {
                            let p = p.ok_or_else(|| {
                                Error::Param("max_dropout training requires p".into())
                            })?;
                            max_pool_dropout_forward(&x, spec, p, rng)?
                        }
                        PoolTrainMode::Stochastic => stochastic_pool_forward(&x, spec, rng)?,
                    };
                    let y = trace.pooled.clone();
                    caches.push(Cache::Pool { trace });
                    y
                }
                Node::Flatten => {
                    let shape = x.shape();
                    let (n, c, h, w) = shape;
                    let y = Tensor4::from_vec((n, c * h * w, 1, 1), x.into_vec())?;
                    caches.push(Cache::Flatten { in_shape: shape });
                    y
                }
                Node::FcDropout(p) => {
                    let (y, mask) = fc_dropout_train(&x, *p, rng)?;
                    caches.push(Cache::FcDropout { mask });
                    y
                }
                Node::Dense(d) => {
                    let y = d.forward(&x)?;
                    caches.push(Cache::Dense { input: x });
                    y
                }
            };
        }
        Ok((x, caches))
    }

    /// Deterministic evaluation forward pass under the chosen test pooling.
    /// `p` is required for scaled max and probabilistic weighted pooling and
    /// for dropout-scaling of dense inputs.
    pub fn forward_test(
        &self,
        input: &Tensor4,
        mode: PoolTestMode,
        p: Option<RetainProb>,
    ) -> Result<Tensor4> {
        let need_p = || p.ok_or_else(|| Error::Param(format!("{} pooling requires p", mode.name())));
        let mut x = input.clone();
        for node in &self.nodes {
            x = match node {
                Node::Conv(c) => c.forward(&x)?,
                Node::Relu => relu_forward(&x),
                Node::Pool(spec) => match mode {
                    PoolTestMode::Max => max_pool_forward(&x, spec)?.pooled,
                    PoolTestMode::ScaledMax => scaled_max_pool(&x, spec, need_p()?)?,
                    PoolTestMode::ProbWeighted => prob_weighted_pool(&x, spec, need_p()?)?,
                    PoolTestMode::StochasticWeighted => stochastic_pool_weighted(&x, spec)?,
                },
                Node::Flatten => {
                    let (n, c, h, w) = x.shape();
                    Tensor4::from_vec((n, c * h * w, 1, 1), x.into_vec())?
                }
                Node::FcDropout(p) => fc_dropout_test(&x, *p),
                Node::Dense(d) => d.forward(&x)?,
            };
        }
        Ok(x)
    }

    /// Backprop through the cached forward pass. Returns parameter gradients
    /// aligned with [`Network::param_buffers_mut`].
    pub fn backward(&self, caches: &[Cache], grad_logits: &Tensor4) -> Result<Grads> {
        if caches.len() != self.nodes.len() {
            return Err(Error::ShapeMismatch(
                "cache list does not match network".into(),
            ));
        }
        let mut grad = grad_logits.clone();
        // gradients discovered in reverse order, flipped at the end
        let mut rev_buffers: Vec<Vec<f64>> = Vec::new();
        for (node, cache) in self.nodes.iter().zip(caches).rev() {
            grad = match (node, cache) {
                (Node::Conv(c), Cache::Conv { input }) => {
                    let (gi, gw, gb) = c.backward(input, &grad)?;
                    rev_buffers.push(gb);
                    rev_buffers.push(gw.into_vec());
                    gi
                }
                (Node::Relu, Cache::Relu { input }) => relu_backward(input, &grad)?,
                (Node::Pool(_), Cache::Pool { trace }) => pool_backward(trace, &grad)?,
                (Node::Flatten, Cache::Flatten { in_shape }) => {
                    Tensor4::from_vec(*in_shape, grad.into_vec())?
                }
                (Node::FcDropout(_), Cache::FcDropout { mask }) => grad.hadamard(mask)?,
                (Node::Dense(d), Cache::Dense { input }) => {
                    let (gi, gw, gb) = d.backward(input, &grad)?;
                    rev_buffers.push(gb);
                    rev_buffers.push(gw);
                    gi
                }
                _ => {
                    return Err(Error::ShapeMismatch(
                        "cache kind does not match node kind".into(),
                    ))
                }
            };
        }
        rev_buffers.reverse();
        Ok(Grads {
            buffers: rev_buffers,
        })
    }

    /// Mutable views of all parameter buffers, in network order
    /// (per layer: weights then bias).
    pub fn param_buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            match node {
                Node::Conv(c) => {
                    out.push(c.weights.data_mut());
                    out.push(c.bias.as_mut_slice());
                }
                Node::Dense(d) => {
                    out.push(d.weights.as_mut_slice());
                    out.push(d.bias.as_mut_slice());
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_buffers(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node {
                Node::Conv(c) => {
                    out.push(c.weights.data());
                    out.push(c.bias.as_slice());
                }
                Node::Dense(d) => {
                    out.push(d.weights.as_slice());
                    out.push(d.bias.as_slice());
                }
                _ => {}
            }
        }
        out
    }

    /// Pooling layers with their input geometry `(r maps, s units, spec)`,
    /// needed for the model-count report.
    pub fn pool_layers_with_inputs(spec: &ArchSpec) -> Vec<(usize, usize, PoolSpec)> {
        let mut out = Vec::new();
        for (i, tok) in spec.tokens.iter().enumerate() {
            if let ArchToken::Pool { region, stride } = *tok {
                if let Shape::Spatial { channels, height, width } = spec.shapes[i - 1] {
                    // geometry already validated by the parser
                    let ps = PoolSpec::square(region, stride).expect("validated");
                    out.push((channels, height * width, ps));
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// model persistence: magic, version, arch string, little-endian f64 buffers
// ---------------------------------------------------------------------------

const MODEL_MAGIC: &[u8; 4] = b"PNM1";
const MODEL_VERSION: u32 = 1;

impl Network {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        let arch = self.arch.as_bytes();
        w.write_all(&(arch.len() as u32).to_le_bytes())?;
        w.write_all(arch)?;
        let params = self.param_buffers();
        w.write_all(&(params.len() as u32).to_le_bytes())?;
        for buf in params {
            w.write_all(&(buf.len() as u64).to_le_bytes())?;
            for v in buf {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a model dump; the network is rebuilt from its stored arch string
    /// (without fully-connected dropout nodes, which carry no parameters).
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: format!("bad model magic {magic:?}"),
            });
        }
        let version = read_u32(&mut r)?;
        if version != MODEL_VERSION {
            return Err(Error::Format {
                offset: 4,
                msg: format!("unsupported model version {version}"),
            });
        }
        let arch_len = read_u32(&mut r)? as usize;
        let mut arch_bytes = vec![0u8; arch_len];
        r.read_exact(&mut arch_bytes)?;
        let arch = String::from_utf8(arch_bytes).map_err(|e| Error::Format {
            offset: 12,
            msg: format!("arch string is not utf-8: {e}"),
        })?;
        let spec = crate::arch::parse_arch(&arch)?;
        let mut net = Network::build(&spec, None)?;
        let n_bufs = read_u32(&mut r)? as usize;
        {
            let mut bufs = net.param_buffers_mut();
            if bufs.len() != n_bufs {
                return Err(Error::Format {
                    offset: 0,
                    msg: format!("model has {n_bufs} buffers, arch expects {}", bufs.len()),
                });
            }
            for buf in bufs.iter_mut() {
                let len = read_u64(&mut r)? as usize;
                if len != buf.len() {
                    return Err(Error::Format {
                        offset: 0,
                        msg: format!("buffer of {len} values, expected {}", buf.len()),
                    });
                }
                let mut bytes = vec![0u8; len * 8];
                r.read_exact(&mut bytes)?;
                for (i, chunk) in bytes.chunks_exact(8).enumerate() {
                    buf[i] = f64::from_le_bytes(chunk.try_into().unwrap());
                }
            }
        }
        Ok(net)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
