//! Experiment driver: training runs, evaluation under every test-time
//! pooling scheme, retaining-probability sweeps, the model-count report and
//! CSV emission.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::arch::{resolve_arch, ArchSpec};
use crate::data::{batch_iter, Dataset};
use crate::error::{Error, Result};
use crate::layers::{softmax_xent, MomentumSGD};
use crate::net::{Network, PoolTestMode, PoolTrainMode};
use crate::pooling::{model_count, model_count_base, RetainProb};
use crate::rng::RngStream;
use crate::tensor::Tensor4;

/// One training/evaluation configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Preset name (`mnist`, `cifar10`, `cifar100`) or raw architecture string.
    pub arch: String,
    pub train_pool: PoolTrainMode,
    pub test_pool: PoolTestMode,
    /// Retaining probability for dropout-based modes; ignored by stochastic
    /// pooling.
    pub p: Option<RetainProb>,
    /// Dropout on dense-layer inputs; off by default.
    pub fc_dropout: Option<RetainProb>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Permits train/test pooling pairings outside the standard ones
    /// (stochastic training with stochastic-weighted testing, dropout
    /// training with max-family testing).
    pub allow_cross_pairing: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Param("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Param("batch size must be >= 1".into()));
        }
        if matches!(self.train_pool, PoolTrainMode::MaxDropout) && self.p.is_none() {
            return Err(Error::Param("max_dropout training requires --p".into()));
        }
        if matches!(
            self.test_pool,
            PoolTestMode::ScaledMax | PoolTestMode::ProbWeighted
        ) && self.p.is_none()
        {
            return Err(Error::Param(format!(
                "{} testing requires --p",
                self.test_pool.name()
            )));
        }
        if !self.allow_cross_pairing {
            let stochastic_train = matches!(self.train_pool, PoolTrainMode::Stochastic);
            let stochastic_test = matches!(self.test_pool, PoolTestMode::StochasticWeighted);
            if stochastic_train != stochastic_test {
                return Err(Error::Param(format!(
                    "train mode {} does not pair with test mode {}; pass --allow-cross-pairing to override",
                    self.train_pool.name(),
                    self.test_pool.name()
                )));
            }
        }
        Ok(())
    }
}

/// Per-epoch training metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_error_percent: f64,
    pub wall_seconds: f64,
}

/// One sweep row; `p = None` marks the stochastic-pooling baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub p: Option<f64>,
    pub test_mode: String,
    pub test_error_percent: f64,
}

// substream roles under the run seed
const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_LAYERS: u64 = 2;

/// Trains a network on `train`, evaluating on `test` after every epoch with
/// the configured test-time pooling. Deterministic for a fixed seed.
pub fn run_training(
    config: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<(Vec<MetricsRecord>, Network)> {
    config.validate()?;
    let spec = resolve_arch(&config.arch)?;
    let mut net = Network::build(&spec, config.fc_dropout)?;
    let root = RngStream::new(config.seed);
    net.init(&mut root.substream(STREAM_INIT))?;

    let mut opt = MomentumSGD::new(config.learning_rate, config.momentum)?;
    let mut records = Vec::with_capacity(config.epochs);
    let start = Instant::now();

    for epoch in 0..config.epochs {
        let mut shuffle_rng = root.substream(STREAM_SHUFFLE).substream(epoch as u64);
        let mut layer_rng = root.substream(STREAM_LAYERS).substream(epoch as u64);

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (batch_idx, (images, labels)) in
            batch_iter(train, config.batch_size, &mut shuffle_rng)?.enumerate()
        {
            let (logits, caches) =
                net.forward_train(&images, config.train_pool, config.p, &mut layer_rng)?;
            let (loss, grad_logits) = softmax_xent(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NanLoss {
                    epoch,
                    batch: batch_idx,
                    value: loss,
                });
            }
            let grads = net.backward(&caches, &grad_logits)?;
            let grad_bufs = grads.buffers();
            let mut params = net.param_buffers_mut();
            opt.step(&mut params, &grad_bufs)?;

            loss_sum += loss * labels.len() as f64;
            seen += labels.len();
        }

        let test_error = evaluate(&net, test, config.test_pool, config.p)?;
        records.push(MetricsRecord {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            test_error_percent: test_error,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((records, net))
}

/// Fraction of argmax-misclassified examples, in percent.
pub fn evaluate(
    net: &Network,
    dataset: &Dataset,
    mode: PoolTestMode,
    p: Option<RetainProb>,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Param("cannot evaluate on an empty dataset".into()));
    }
    let (_, c, h, w) = dataset.images.shape();
    let stride = c * h * w;
    let chunk = 200usize;
    let mut wrong = 0usize;
    let mut i = 0usize;
    while i < dataset.len() {
        let end = (i + chunk).min(dataset.len());
        let n = end - i;
        let images = Tensor4::from_vec(
            (n, c, h, w),
            dataset.images.data()[i * stride..end * stride].to_vec(),
        )?;
        let logits = net.forward_test(&images, mode, p)?;
        let classes = net.n_classes();
        for b in 0..n {
            let row = &logits.data()[b * classes..(b + 1) * classes];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if pred != dataset.labels[i + b] {
                wrong += 1;
            }
        }
        i = end;
    }
    Ok(100.0 * wrong as f64 / dataset.len() as f64)
}

/// Trains one dropout model per retaining probability, evaluates each under
/// max, scaled max and probabilistic weighted pooling, and appends one
/// stochastic-pooling baseline row.
pub fn sweep(
    config: &ExperimentConfig,
    p_values: &[f64],
    train: &Dataset,
    test: &Dataset,
) -> Result<Vec<SweepRecord>> {
    if p_values.is_empty() {
        return Err(Error::Param("sweep needs a non-empty p grid".into()));
    }
    let mut rows = Vec::with_capacity(p_values.len() * 3 + 1);
    for &p in p_values {
        let p = RetainProb::new(p)?;
        let run = ExperimentConfig {
            train_pool: PoolTrainMode::MaxDropout,
            test_pool: PoolTestMode::ProbWeighted,
            p: Some(p),
            allow_cross_pairing: false,
            ..config.clone()
        };
        let (_, net) = run_training(&run, train, test)?;
        for mode in [
            PoolTestMode::Max,
            PoolTestMode::ScaledMax,
            PoolTestMode::ProbWeighted,
        ] {
            let err = evaluate(&net, test, mode, Some(p))?;
            rows.push(SweepRecord {
                p: Some(p.p()),
                test_mode: mode.name().to_string(),
                test_error_percent: err,
            });
        }
    }

    let baseline = ExperimentConfig {
        train_pool: PoolTrainMode::Stochastic,
        test_pool: PoolTestMode::StochasticWeighted,
        p: None,
        allow_cross_pairing: false,
        ..config.clone()
    };
    let (_, net) = run_training(&baseline, train, test)?;
    rows.push(SweepRecord {
        p: None,
        test_mode: PoolTestMode::StochasticWeighted.name().to_string(),
        test_error_percent: evaluate(&net, test, PoolTestMode::StochasticWeighted, None)?,
    });
    Ok(rows)
}

/// One row of the model-count report.
#[derive(Debug, Clone)]
pub struct ModelCountRow {
    pub layer: usize,
    pub maps: usize,
    pub units_per_map: usize,
    pub region_size: usize,
    pub base: f64,
    /// None when the geometry is overlapping or does not tile.
    pub log10_count: Option<f64>,
}

/// Per pooling layer: r, s, t, b(t) and log10 of the count. Overlapping
/// layers get no count (the formula assumes non-overlapping regions).
pub fn report_model_count(spec: &ArchSpec) -> Result<Vec<ModelCountRow>> {
    let mut rows = Vec::new();
    for (i, (maps, units, pool)) in Network::pool_layers_with_inputs(spec).iter().enumerate() {
        let t = pool.region_size();
        let log10_count = if pool.non_overlapping() && (maps * units) % t == 0 {
            Some(model_count(*maps, *units, t)?.1)
        } else {
            None
        };
        rows.push(ModelCountRow {
            layer: i + 1,
            maps: *maps,
            units_per_map: *units,
            region_size: t,
            base: model_count_base(t)?,
            log10_count,
        });
    }
    Ok(rows)
}

pub fn render_model_count_csv(rows: &[ModelCountRow]) -> String {
    let mut out = String::from("layer,r,s,t,base,log10_count\n");
    for row in rows {
        let count = match row.log10_count {
            Some(v) => format!("{v:.2}"),
            None => "N/A".to_string(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{}",
            row.layer, row.maps, row.units_per_map, row.region_size, row.base, count
        );
    }
    out
}

pub fn render_metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from("epoch,train_loss,test_error_percent,wall_seconds\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{:.3}",
            r.epoch, r.train_loss, r.test_error_percent, r.wall_seconds
        );
    }
    out
}

pub fn render_sweep_csv(rows: &[SweepRecord]) -> String {
    let mut out = String::from("p,test_mode,test_error_percent\n");
    for r in rows {
        let p = match r.p {
            Some(v) => v.to_string(),
            None => "na".to_string(),
        };
        let _ = writeln!(out, "{},{},{}", p, r.test_mode, r.test_error_percent);
    }
    out
}

pub fn write_csv(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)?;
    Ok(())
}
