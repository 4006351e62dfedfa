//! Base reconstruction losses and the weighted composite objective.
//!
//! The histogram, colour and PSNR losses have no canonical formulation; the forms used here
//! are documented on each function.

mod basic;
mod histogram;
pub mod probe;
mod ssim;

use std::fmt;
use std::str::FromStr;

pub use basic::{COLOR_NORM_FLOOR, MSE_FLOOR, PSNR_TARGET_DB};
pub use histogram::HIST_BINS;
pub use ssim::{gaussian_window, ms_ssim_loss, ms_ssim_loss_with, ssim, ssim_with, SsimConfig, MS_SSIM_WEIGHTS};


use crate::error::{Error, Result};
use crate::perceptual_kl::FeatureExtractor;
use crate::spectral_kl::FklOptions;
use crate::tensor_core::{Graph, Tensor, Var};

/// Seed of the default feature extractor used by the losses.
pub const DEFAULT_EXTRACTOR_SEED: u64 = 42;

/// Evaluates a two-argument loss on constant inputs.
pub fn eval_pair(
    pred: &Tensor,
    truth: &Tensor,
    f: impl FnOnce(&mut Graph, Var, Var) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::new();
    let (p, t) = (g.constant(pred.clone()), g.constant(truth.clone()));
    let v = f(&mut g, p, t)?;
    g.scalar(v)
}

pub fn smooth_l1(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    eval_pair(pred, truth, |g, p, t| g.smooth_l1(p, t, 1.0))
}

pub fn histogram_loss(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    eval_pair(pred, truth, |g, p, t| g.histogram_loss(p, t))
}

pub fn psnr_loss(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    eval_pair(pred, truth, |g, p, t| g.psnr_loss(p, t))
}

pub fn color_loss(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    eval_pair(pred, truth, |g, p, t| g.color_loss(p, t))
}

pub fn fourier_mse(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    eval_pair(pred, truth, |g, p, t| g.fourier_mse(p, t))
}

/// One named sub-loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossTerm {
    SmoothL1,
    Histogram,
    MsSsim,
    Psnr,
    Color,
    FeatureKl,
    FourierKl,
    /// Squared error between amplitude maps plus between phase maps.
    FourierMse,
    /// Squared error between extracted features.
    FeatureMse,
}

impl LossTerm {
    /// Report order.
    pub const ALL: [LossTerm; 9] = [
        LossTerm::SmoothL1,
        LossTerm::Histogram,
        LossTerm::MsSsim,
        LossTerm::Psnr,
        LossTerm::Color,
        LossTerm::FeatureKl,
        LossTerm::FourierKl,
        LossTerm::FourierMse,
        LossTerm::FeatureMse,
    ];

    /// Column name in reports and CSV output.
    pub fn column(self) -> &'static str {
        match self {
            LossTerm::SmoothL1 => "l_s",
            LossTerm::Histogram => "l_hist",
            LossTerm::MsSsim => "l_msssim",
            LossTerm::Psnr => "l_psnr",
            LossTerm::Color => "l_color",
            LossTerm::FeatureKl => "l_vggkl",
            LossTerm::FourierKl => "l_fkl",
            LossTerm::FourierMse => "l_fmse",
            LossTerm::FeatureMse => "l_vgg",
        }
    }

    fn index(self) -> usize {
        LossTerm::ALL.iter().position(|&t| t == self).unwrap()
    }
}

/// Non-negative weight per sub-loss.
///
/// `a1..a7` weight smooth L1, histogram, MS-SSIM, PSNR, colour, feature KL and Fourier KL.
/// Two extra weights cover the plain Fourier-MSE and feature-MSE baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub smooth_l1: f64,
    pub histogram: f64,
    pub ms_ssim: f64,
    pub psnr: f64,
    pub color: f64,
    pub feature_kl: f64,
    pub fourier_kl: f64,
    pub fourier_mse: f64,
    pub feature_mse: f64,
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        smooth_l1: 0.0,
        histogram: 0.0,
        ms_ssim: 0.0,
        psnr: 0.0,
        color: 0.0,
        feature_kl: 0.0,
        fourier_kl: 0.0,
        fourier_mse: 0.0,
        feature_mse: 0.0,
    };

    /// The full seven-term objective: (1, 0.06, 0.05, 0.5, 0.0083, 0.15, 0.1).
    pub const FULL: LossWeights = LossWeights {
        smooth_l1: 1.0,
        histogram: 0.06,
        ms_ssim: 0.05,
        psnr: 0.5,
        color: 0.0083,
        feature_kl: 0.15,
        fourier_kl: 0.1,
        fourier_mse: 0.0,
        feature_mse: 0.0,
    };

    pub fn get(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::SmoothL1 => self.smooth_l1,
            LossTerm::Histogram => self.histogram,
            LossTerm::MsSsim => self.ms_ssim,
            LossTerm::Psnr => self.psnr,
            LossTerm::Color => self.color,
            LossTerm::FeatureKl => self.feature_kl,
            LossTerm::FourierKl => self.fourier_kl,
            LossTerm::FourierMse => self.fourier_mse,
            LossTerm::FeatureMse => self.feature_mse,
        }
    }

    pub fn set(&mut self, term: LossTerm, value: f64) {
        *match term {
            LossTerm::SmoothL1 => &mut self.smooth_l1,
            LossTerm::Histogram => &mut self.histogram,
            LossTerm::MsSsim => &mut self.ms_ssim,
            LossTerm::Psnr => &mut self.psnr,
            LossTerm::Color => &mut self.color,
            LossTerm::FeatureKl => &mut self.feature_kl,
            LossTerm::FourierKl => &mut self.fourier_kl,
            LossTerm::FourierMse => &mut self.fourier_mse,
            LossTerm::FeatureMse => &mut self.feature_mse,
        } = value;
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut w = *self;
        for t in LossTerm::ALL {
            w.set(t, self.get(t) * k);
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        for t in LossTerm::ALL {
            let v = self.get(t);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!(
                    "loss weight for {} must be finite and non-negative, got {v}",
                    t.column()
                )));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::FULL
    }
}

/// Loss-ablation configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// The five base losses.
    Base,
    /// Base plus Fourier MSE.
    BaseF,
    /// Base plus Fourier KL.
    BaseFkl,
    /// Base plus feature MSE.
    BaseVgg,
    /// Base plus feature KL.
    BaseVggkl,
    /// Every term of the composite.
    Full,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Base,
        Preset::BaseF,
        Preset::BaseFkl,
        Preset::BaseVgg,
        Preset::BaseVggkl,
        Preset::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Base => "base",
            Preset::BaseF => "base+f",
            Preset::BaseFkl => "base+fkl",
            Preset::BaseVgg => "base+vgg",
            Preset::BaseVggkl => "base+vggkl",
            Preset::Full => "full",
        }
    }

    pub fn weights(self) -> LossWeights {
        let base = LossWeights {
            feature_kl: 0.0,
            fourier_kl: 0.0,
            ..LossWeights::FULL
        };
        match self {
            Preset::Base => base,
            Preset::BaseF => LossWeights {
                fourier_mse: LossWeights::FULL.fourier_kl,
                ..base
            },
            Preset::BaseFkl => LossWeights {
                fourier_kl: LossWeights::FULL.fourier_kl,
                ..base
            },
            Preset::BaseVgg => LossWeights {
                feature_mse: LossWeights::FULL.feature_kl,
                ..base
            },
            Preset::BaseVggkl => LossWeights {
                feature_kl: LossWeights::FULL.feature_kl,
                ..base
            },
            Preset::Full => LossWeights::FULL,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::Invalid(format!("unknown preset {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything the composite objective needs besides the images.
#[derive(Debug, Clone)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub smooth_l1_beta: f64,
    pub ssim: SsimConfig,
    pub fkl: FklOptions,
    pub extractor: FeatureExtractor,
}

impl LossConfig {
    pub fn new(weights: LossWeights) -> Self {
        Self {
            weights,
            smooth_l1_beta: 1.0,
            ssim: SsimConfig::default(),
            fkl: FklOptions::default(),
            extractor: FeatureExtractor::seeded(DEFAULT_EXTRACTOR_SEED),
        }
    }

    pub fn preset(p: Preset) -> Self {
        Self::new(p.weights())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::new(LossWeights::FULL)
    }
}

/// Values of every sub-loss plus the weighted composite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_s: f64,
    pub l_hist: f64,
    pub l_msssim: f64,
    pub l_psnr: f64,
    pub l_color: f64,
    pub l_vggkl: f64,
    pub l_fkl: f64,
    pub l_fmse: f64,
    pub l_vgg: f64,
    pub composite: f64,
}

impl LossReport {
    pub fn get(&self, term: LossTerm) -> f64 {
        self.values()[term.index()]
    }

    fn values(&self) -> [f64; 9] {
        [
            self.l_s,
            self.l_hist,
            self.l_msssim,
            self.l_psnr,
            self.l_color,
            self.l_vggkl,
            self.l_fkl,
            self.l_fmse,
            self.l_vgg,
        ]
    }

    fn from_values(v: [f64; 9], composite: f64) -> Self {
        Self {
            l_s: v[0],
            l_hist: v[1],
            l_msssim: v[2],
            l_psnr: v[3],
            l_color: v[4],
            l_vggkl: v[5],
            l_fkl: v[6],
            l_fmse: v[7],
            l_vgg: v[8],
            composite,
        }
    }

    /// `l_s,l_hist,...,l_vgg,composite`
    pub fn csv_header() -> String {
        let mut cols: Vec<&str> = LossTerm::ALL.iter().map(|t| t.column()).collect();
        cols.push("composite");
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut v: Vec<String> = self.values().iter().map(|x| format!("{x:.10e}")).collect();
        v.push(format!("{:.10e}", self.composite));
        v.join(",")
    }
}

/// Graph handles of an assembled composite.
#[derive(Debug, Clone)]
pub struct CompositeVars {
    /// Evaluated sub-losses, in report order.
    pub terms: Vec<(LossTerm, Var)>,
    pub composite: Var,
}

impl CompositeVars {
    /// Reads the report; terms that were not evaluated are reported as 0.
    pub fn report(&self, g: &Graph) -> Result<LossReport> {
        let mut v = [0.0; 9];
        for &(t, var) in &self.terms {
            v[t.index()] = g.scalar(var)?;
        }
        Ok(LossReport::from_values(v, g.scalar(self.composite)?))
    }
}

impl Graph {
    fn loss_term(&mut self, term: LossTerm, pred: Var, truth: Var, cfg: &LossConfig) -> Result<Var> {
        let v = match term {
            LossTerm::SmoothL1 => self.smooth_l1(pred, truth, cfg.smooth_l1_beta),
            LossTerm::Histogram => self.histogram_loss(pred, truth),
            LossTerm::MsSsim => self.ms_ssim_loss(pred, truth, &cfg.ssim),
            LossTerm::Psnr => self.psnr_loss(pred, truth),
            LossTerm::Color => self.color_loss(pred, truth),
            LossTerm::FeatureKl => self.feature_kl(pred, truth, &cfg.extractor),
            LossTerm::FourierKl => self.fourier_kl(pred, truth, cfg.fkl).map(|v| v.total),
            LossTerm::FourierMse => self.fourier_mse(pred, truth),
            LossTerm::FeatureMse => self.feature_mse(pred, truth, &cfg.extractor),
        };
        v.map_err(|e| Error::SubLoss {
            loss: term.column(),
            source: Box::new(e),
        })
    }

    /// Weighted sum of sub-losses.
    ///
    /// With `all_terms` false only terms with a nonzero weight are recorded, which keeps
    /// training graphs small; with it true every term is evaluated for reporting.
    pub fn composite_loss(&mut self, pred: Var, truth: Var, cfg: &LossConfig, all_terms: bool) -> Result<CompositeVars> {
        cfg.weights.validate()?;
        if self.shape(pred) != self.shape(truth) {
            return Err(Error::shape(
                "composite_loss",
                format!("prediction {} and truth {} differ", self.shape(pred), self.shape(truth)),
            ));
        }
        let mut terms = Vec::new();
        let mut composite: Option<Var> = None;
        for t in LossTerm::ALL {
            let w = cfg.weights.get(t);
            if w == 0.0 && !all_terms {
                continue;
            }
            let v = self.loss_term(t, pred, truth, cfg)?;
            terms.push((t, v));
            if w != 0.0 {
                let wv = self.scale(v, w)?;
                composite = Some(match composite {
                    None => wv,
                    Some(c) => self.add(c, wv)?,
                });
            }
        }
        let composite = match composite {
            Some(c) => c,
            None => self.constant(Tensor::scalar(0.0)),
        };
        Ok(CompositeVars { terms, composite })
    }
}

/// Evaluates every sub-loss and the weighted composite.
pub fn composite_loss(pred: &Tensor, truth: &Tensor, cfg: &LossConfig) -> Result<LossReport> {
    let mut g = Graph::new();
    let (p, t) = (g.constant(pred.clone()), g.constant(truth.clone()));
    g.composite_loss(p, t, cfg, true)?.report(&g)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::perceptual_kl::feature_kl_loss;
    use crate::spectral_kl::fourier_kl_loss;
    use crate::losses::probe::disjoint_support_pair;
    use crate::tensor_core::{gradient_check, Shape};

    fn img(seed: u64, shape: Shape) -> Tensor {
        Tensor::uniform(shape, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn paper_weights_and_presets() {
        let f = LossWeights::FULL;
        assert_eq!(
            [f.smooth_l1, f.histogram, f.ms_ssim, f.psnr, f.color, f.feature_kl, f.fourier_kl],
            [1.0, 0.06, 0.05, 0.5, 0.0083, 0.15, 0.1]
        );
        assert_eq!(Preset::Full.weights(), f);
        let base = Preset::Base.weights();
        assert_eq!((base.feature_kl, base.fourier_kl, base.fourier_mse, base.feature_mse), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(Preset::BaseF.weights().fourier_mse, 0.1);
        assert_eq!(Preset::BaseFkl.weights().fourier_kl, 0.1);
        assert_eq!(Preset::BaseVgg.weights().feature_mse, 0.15);
        assert_eq!(Preset::BaseVggkl.weights().feature_kl, 0.15);
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("nope".parse::<Preset>().is_err());
        assert!(LossWeights { color: -1.0, ..f }.validate().is_err());
    }

    #[test]
    fn identical_images_give_zero_report() {
        let x = img(1, Shape::new(1, 3, 16, 16));
        let r = composite_loss(&x, &x, &LossConfig::default()).unwrap();
        assert_eq!(r, LossReport::from_values([0.0; 9], 0.0));
    }

    #[test]
    fn selector_weights_pick_single_terms() {
        let p = img(2, Shape::new(2, 3, 16, 16));
        let t = img(3, p.shape());
        let full = composite_loss(&p, &t, &LossConfig::default()).unwrap();
        for term in LossTerm::ALL {
            let mut w = LossWeights::ZERO;
            w.set(term, 1.0);
            let r = composite_loss(&p, &t, &LossConfig::new(w)).unwrap();
            assert_eq!(r.composite, r.get(term));
            assert_eq!(r.get(term), full.get(term));
        }
    }

    #[test]
    fn composite_recombines_individual_losses() {
        let p = img(4, Shape::new(2, 3, 16, 16));
        let t = img(5, p.shape());
        let cfg = LossConfig::default();
        let r = composite_loss(&p, &t, &cfg).unwrap();
        let parts = [
            (1.0, smooth_l1(&p, &t).unwrap()),
            (0.06, histogram_loss(&p, &t).unwrap()),
            (0.05, ms_ssim_loss(&p, &t).unwrap()),
            (0.5, psnr_loss(&p, &t).unwrap()),
            (0.0083, color_loss(&p, &t).unwrap()),
            (0.15, feature_kl_loss(&p, &t, &cfg.extractor).unwrap()),
            (0.1, fourier_kl_loss(&p, &t).unwrap().total),
        ];
        let hand: f64 = parts.iter().map(|(w, l)| w * l).sum();
        assert!((r.composite - hand).abs() < 1e-12);
        let terms = [r.l_s, r.l_hist, r.l_msssim, r.l_psnr, r.l_color, r.l_vggkl, r.l_fkl];
        for ((_, l), v) in parts.iter().zip(terms) {
            assert_eq!(*l, v);
        }
        assert!((r.l_fmse - fourier_mse(&p, &t).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn composite_is_linear_in_weights() {
        let p = img(6, Shape::new(1, 3, 16, 16));
        let t = img(7, p.shape());
        let one = composite_loss(&p, &t, &LossConfig::default()).unwrap().composite;
        let two = composite_loss(&p, &t, &LossConfig::new(LossWeights::FULL.scaled(2.0))).unwrap().composite;
        assert!((two - 2.0 * one).abs() < 1e-12);
    }

    #[test]
    fn sub_loss_errors_carry_their_name() {
        let p = Tensor::zeros(Shape::new(1, 3, 8, 8));
        let err = composite_loss(&p, &p, &LossConfig::default()).unwrap_err();
        match err {
            Error::SubLoss { loss, .. } => assert_eq!(loss, "l_msssim"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn sub_losses_are_nonnegative_on_random_pairs() {
        for s in 0..5 {
            let r = composite_loss(&img(10 + s, Shape::new(1, 3, 16, 16)), &img(20 + s, Shape::new(1, 3, 16, 16)), &LossConfig::default()).unwrap();
            for t in LossTerm::ALL {
                assert!(r.get(t) >= 0.0, "{t:?}");
            }
            assert!(r.l_msssim <= 2.0);
        }
    }

    #[test]
    fn report_csv_layout() {
        assert_eq!(
            LossReport::csv_header(),
            "l_s,l_hist,l_msssim,l_psnr,l_color,l_vggkl,l_fkl,l_fmse,l_vgg,composite"
        );
        let r = LossReport::from_values([1.0; 9], 2.0);
        assert_eq!(r.csv_row().split(',').count(), 10);
    }

    #[test]
    fn composite_gradient_passes_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut cfg = LossConfig::default();
        cfg.weights.fourier_mse = 0.1;
        cfg.weights.feature_mse = 0.15;
        for _ in 0..3 {
            let (p, t) = disjoint_support_pair(&mut rng, Shape::new(1, 3, 12, 12));
            let r = gradient_check(
                |g, v| {
                    let tc = g.constant(t.clone());
                    Ok(g.composite_loss(v, tc, &cfg, false)?.composite)
                },
                &p,
            )
            .unwrap();
            assert!(r.max_relative_error < 1e-4, "{r:?}");
        }
    }
}
