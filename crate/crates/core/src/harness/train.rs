//! Adam training of the enhancer on paired samples, enhancement and the Fourier-KL weight
//! sweep.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::PairedSample;
use super::image_io::{crop, reflect_pad};
use super::metrics::{metrics, MetricsRow};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossReport, LossWeights, Preset};
use crate::network::{llfdisc_forward, Network, NetworkConfig};
use crate::tensor_core::{Graph, Shape, Tensor, Var};

pub const DEFAULT_LEARNING_RATE: f64 = 2e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub preset: Preset,
    /// Replaces the preset's weights when set.
    pub weights: Option<LossWeights>,
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Side of the square training crops.
    pub crop: usize,
    /// Drives batch sampling and cropping; the network has its own seed.
    pub seed: u64,
    pub network: NetworkConfig,
    /// Where `train.csv` and `model.ckpt` go; nothing is written when unset.
    pub output_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Full,
            weights: None,
            steps: 500,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: 4,
            crop: 32,
            seed: 0,
            network: NetworkConfig::with_width(8),
            output_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn loss_weights(&self) -> LossWeights {
        self.weights.unwrap_or_else(|| self.preset.weights())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig::new(self.loss_weights())
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Invalid("steps must be at least 1".into()));
        }
        if self.crop == 0 || self.crop % 4 != 0 {
            return Err(Error::Invalid(format!("crop must be a positive multiple of 4, got {}", self.crop)));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid(format!("learning rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        self.loss_weights().validate()?;
        self.network.validate()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    pub fn new(learning_rate: f64, params: &[&Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// Updates `params` in place from `grads`, both in the order given at construction.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
            }
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based; the losses are measured before that step's update.
    pub step: usize,
    pub report: LossReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub log: Vec<StepRecord>,
    /// Composite over the whole training set before and after training.
    pub initial_composite: f64,
    pub final_composite: f64,
}

impl TrainOutcome {
    pub fn csv(&self) -> String {
        let mut out = format!("step,{}\n", LossReport::csv_header());
        for r in &self.log {
            let _ = writeln!(out, "{},{}", r.step, r.report.csv_row());
        }
        out
    }
}

fn random_crop(s: &PairedSample, side: usize, rng: &mut impl Rng) -> Result<(Tensor, Tensor)> {
    let sh = s.low.shape();
    if sh.height < side || sh.width < side {
        return Err(Error::Invalid(format!(
            "sample {} is {}x{}, smaller than the {side}x{side} crop",
            s.id, sh.height, sh.width
        )));
    }
    let y0 = rng.random_range(0..=sh.height - side);
    let x0 = rng.random_range(0..=sh.width - side);
    let cut = |t: &Tensor| Tensor::from_fn(Shape::new(1, 3, side, side), |_, c, y, x| t.at(0, c, y0 + y, x0 + x));
    Ok((cut(&s.low), cut(&s.normal)))
}

fn composite_on(net: &Network, cfg: &LossConfig, low: &Tensor, normal: &Tensor) -> Result<LossReport> {
    let mut g = Graph::new();
    let p = net.bind_constant(&mut g);
    let x = g.constant(low.clone());
    let t = g.constant(normal.clone());
    let y = llfdisc_forward(&mut g, x, &p, &net.config)?;
    g.composite_loss(y, t, cfg, true)?.report(&g)
}

/// Composite loss of `net` over every sample, each weighted equally.
pub fn dataset_composite(net: &Network, cfg: &LossConfig, data: &[PairedSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in data {
        let r = composite_on(net, cfg, &reflect_pad(&s.low, 4), &reflect_pad(&s.normal, 4))?;
        total += r.composite;
    }
    Ok(total / data.len() as f64)
}

fn diverged(step: usize, e: Error) -> Error {
    if e.is_numerical() {
        Error::Diverged {
            step,
            value: f64::NAN,
        }
    } else {
        e
    }
}

/// Trains a freshly initialised network. Each step draws `batch_size` samples with
/// replacement and one random crop from each.
pub fn train_toy(cfg: &TrainConfig, data: &[PairedSample]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("no training samples".into()));
    }
    let loss_cfg = cfg.loss_config();
    let mut net = Network::new(cfg.network)?;
    let initial_composite = dataset_composite(&net, &loss_cfg, data).map_err(|e| diverged(0, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut values: Vec<Tensor> = net.params.flatten().into_iter().cloned().collect();
    let mut adam = Adam::new(cfg.learning_rate, &values.iter().collect::<Vec<_>>());
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let mut lows = Vec::with_capacity(cfg.batch_size);
        let mut highs = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let s = &data[rng.random_range(0..data.len())];
            let (l, h) = random_crop(s, cfg.crop, &mut rng)?;
            lows.push(l);
            highs.push(h);
        }
        let (low, high) = (Tensor::stack_batch(&lows)?, Tensor::stack_batch(&highs)?);

        let mut g = Graph::new();
        let leaves: Vec<Var> = values.iter().map(|t| g.leaf(t.clone())).collect();
        let p = net.params.relabel(&leaves);
        let result = (|| {
            let x = g.constant(low);
            let t = g.constant(high);
            let y = llfdisc_forward(&mut g, x, &p, &net.config)?;
            let c = g.composite_loss(y, t, &loss_cfg, true)?;
            let report = c.report(&g)?;
            let grads = g.backward(c.composite)?;
            Ok::<_, Error>((report, grads))
        })();
        let (report, grads) = result.map_err(|e| diverged(step, e))?;
        if !report.composite.is_finite() {
            return Err(Error::Diverged {
                step,
                value: report.composite,
            });
        }
        let grads: Vec<Tensor> = leaves.iter().map(|v| grads.wrt(*v).clone()).collect();
        adam.step(&mut values, &grads);
        log.push(StepRecord { step, report });
    }
    net.params = net.params.with_values(values);
    let final_composite = dataset_composite(&net, &loss_cfg, data).map_err(|e| diverged(cfg.steps, e))?;
    let outcome = TrainOutcome {
        network: net,
        log,
        initial_composite,
        final_composite,
    };
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("train.csv");
        fs::write(&csv, outcome.csv()).map_err(|e| Error::io(&csv, e))?;
        outcome.network.save(&dir.join("model.ckpt"))?;
    }
    Ok(outcome)
}

/// Enhances a `(B, 3, H, W)` batch of any size: reflect-pads to a multiple of 4, runs the
/// network, crops back and clamps to `[0, 1]`.
pub fn enhance(net: &Network, image: &Tensor) -> Result<Tensor> {
    let s = image.shape();
    let padded = reflect_pad(image, 4);
    let out = net.forward(&padded)?;
    Ok(crop(&out, s.height, s.width).clamp(0.0, 1.0))
}

/// Enhances one PNG file into another.
pub fn enhance_file(net: &Network, input: &std::path::Path, output: &std::path::Path) -> Result<()> {
    let x = super::image_io::load_png(input)?;
    super::image_io::save_png(output, &enhance(net, &x)?)
}

/// Metrics of the enhanced low images against their references.
pub fn evaluate(net: &Network, data: &[PairedSample]) -> Result<Vec<MetricsRow>> {
    data.iter().map(|s| metrics(s.id.clone(), &enhance(net, &s.low)?, &s.normal)).collect()
}

/// Metrics of the unprocessed low images.
pub fn evaluate_inputs(data: &[PairedSample]) -> Result<Vec<MetricsRow>> {
    data.iter().map(|s| metrics(s.id.clone(), &s.low, &s.normal)).collect()
}

pub fn mean_metrics(rows: &[MetricsRow]) -> (f64, f64) {
    let n = rows.len().max(1) as f64;
    (
        rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
        rows.iter().map(|r| r.ssim).sum::<f64>() / n,
    )
}

/// Result of one training run in the Fourier-KL weight sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub fkl_weight: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub final_composite: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "fkl_weight,psnr_db,ssim,final_composite";

    pub fn csv_row(&self) -> String {
        format!("{},{:.6},{:.6},{:.10e}", self.fkl_weight, self.psnr_db, self.ssim, self.final_composite)
    }
}

pub const SWEEP_WEIGHTS: [f64; 6] = [0.0, 0.001, 0.01, 0.1, 0.5, 1.0];

/// Trains once per Fourier-KL weight, all other weights taken from `base`, and scores each
/// run on `test`. Per-run outputs go to `<output_dir>/fkl_<weight>` when set.
pub fn sweep_fkl(base: &TrainConfig, fkl_weights: &[f64], train: &[PairedSample], test: &[PairedSample]) -> Result<Vec<SweepRow>> {
    fkl_weights
        .iter()
        .map(|&a7| {
            let mut cfg = base.clone();
            let mut w = base.loss_weights();
            w.fourier_kl = a7;
            cfg.weights = Some(w);
            cfg.output_dir = base.output_dir.as_ref().map(|d| d.join(format!("fkl_{a7}")));
            let out = train_toy(&cfg, train)?;
            let (psnr_db, ssim) = mean_metrics(&evaluate(&out.network, test)?);
            Ok(SweepRow {
                fkl_weight: a7,
                psnr_db,
                ssim,
                final_composite: out.final_composite,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{}\n", SweepRow::CSV_HEADER);
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}
