//! Finite-difference checks of every loss and of the network composed with the composite
//! loss.
//!
//! A central difference only measures the analytic gradient where the function is smooth
//! across the step and the gradient is large against rounding noise (about
//! `ulp(value) / 2h`). Check points are therefore drawn under stated margins: no
//! piecewise-linear input within [`KINK_MARGIN`] of its breakpoint, no spectral bin of the
//! prediction within [`SPECTRAL_MARGIN`] of the origin (where its phase is singular, or, for
//! bins that are real by symmetry, where the phase steps between `0` and `π`). Candidates
//! are drawn in a fixed order from the seed and the first one meeting every margin is
//! used; the check's own outcome never influences the choice.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fourier::fft2d;
use crate::losses::probe::{disjoint_support_pair, histogram_check_pair, nearest_disjoint_reference};
use crate::losses::{LossConfig, Preset, SsimConfig, PSNR_TARGET_DB};
use crate::network::{llfdisc_forward, Network, NetworkConfig};
use crate::perceptual_kl::FeatureExtractor;
use crate::spectral_kl::FklOptions;
use crate::tensor_core::{gradient_check, gradient_check_many, GradCheckReport, Graph, Shape, Tensor, Var};

pub const LOSS_TOLERANCE: f64 = 1e-4;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
pub const KINK_MARGIN: f64 = 1e-4;
pub const SPECTRAL_MARGIN: f64 = 1e-3;
const MAX_CANDIDATES: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GradTarget {
    SmoothL1,
    Histogram,
    MsSsim,
    Psnr,
    Color,
    FeatureKl,
    FourierKl,
    Composite,
    /// The width-4 network on an 8x8 input, composed with the full composite loss.
    Network,
}

impl GradTarget {
    pub const ALL: [GradTarget; 9] = [
        GradTarget::SmoothL1,
        GradTarget::Histogram,
        GradTarget::MsSsim,
        GradTarget::Psnr,
        GradTarget::Color,
        GradTarget::FeatureKl,
        GradTarget::FourierKl,
        GradTarget::Composite,
        GradTarget::Network,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradTarget::SmoothL1 => "smooth_l1",
            GradTarget::Histogram => "histogram",
            GradTarget::MsSsim => "ms_ssim",
            GradTarget::Psnr => "psnr",
            GradTarget::Color => "color",
            GradTarget::FeatureKl => "feature_kl",
            GradTarget::FourierKl => "fourier_kl",
            GradTarget::Composite => "composite",
            GradTarget::Network => "network",
        }
    }

    pub fn tolerance(self) -> f64 {
        match self {
            GradTarget::Network => END_TO_END_TOLERANCE,
            _ => LOSS_TOLERANCE,
        }
    }
}

impl FromStr for GradTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradTarget::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| {
            let names: Vec<_> = GradTarget::ALL.iter().map(|t| t.name()).collect();
            Error::Invalid(format!("unknown gradient target {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

impl fmt::Display for GradTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub target: GradTarget,
    pub point: usize,
    /// Candidates rejected by the margins before this point was accepted.
    pub rejected: u64,
    pub report: GradCheckReport,
}

impl GradCheckRow {
    pub const CSV_HEADER: &'static str =
        "target,point,rejected,coordinates,max_relative_error,worst_arg,worst_index,analytic,numeric,tolerance,pass";

    pub fn passes(&self) -> bool {
        self.report.passes(self.target.tolerance())
    }

    pub fn csv_row(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{},{:.6e},{},{},{:.10e},{:.10e},{:e},{}",
            self.target,
            self.point,
            self.rejected,
            r.coordinates,
            r.max_relative_error,
            r.worst.0,
            r.worst.1,
            r.analytic_at_worst,
            r.numeric_at_worst,
            self.target.tolerance(),
            self.passes()
        )
    }
}

/// Smallest distance of any spectral coefficient of `image` from the origin, measured
/// along the real axis for bins that are real by symmetry.
pub fn spectral_margin(image: &Tensor) -> f64 {
    let spec = fft2d(image);
    spec.real
        .data()
        .iter()
        .zip(spec.imag.data())
        .fold(f64::INFINITY, |m, (&re, &im)| m.min(re.hypot(im)))
}

fn extractor_margin(e: &FeatureExtractor, image: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(image.clone());
    e.forward(&mut g, x)?;
    Ok(g.kink_margin())
}

fn uniform(rng: &mut impl Rng, shape: Shape, lo: f64, hi: f64) -> Tensor {
    Tensor::uniform(shape, lo, hi, rng)
}

/// The check of `target` at point number `point` of the stream seeded by `seed`.
pub fn check(target: GradTarget, seed: u64, point: usize) -> Result<GradCheckRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((target as u64) << 32) | point as u64);
    let pair = |rng: &mut ChaCha8Rng, shape: Shape| {
        let t = uniform(rng, shape, 0.0, 1.0);
        let p = uniform(rng, shape, 0.0, 1.0).scale(0.6);
        (p, t)
    };
    let loss_check = |p: &Tensor, t: &Tensor, f: &dyn Fn(&mut Graph, Var, Var) -> Result<Var>| {
        gradient_check(
            |g, v| {
                let tc = g.constant(t.clone());
                f(g, v, tc)
            },
            p,
        )
    };
    let mut rejected = 0;
    let report = match target {
        GradTarget::SmoothL1 => {
            // differences span both the quadratic and the linear branch
            let t = uniform(&mut rng, Shape::new(2, 3, 4, 4), 0.0, 1.0);
            let p = uniform(&mut rng, t.shape(), -1.5, 2.5);
            loss_check(&p, &t, &|g, p, t| g.smooth_l1(p, t, 1.0))?
        }
        GradTarget::Histogram => {
            let (p, t) = histogram_check_pair(&mut rng, Shape::new(2, 3, 4, 4));
            loss_check(&p, &t, &|g, p, t| g.histogram_loss(p, t))?
        }
        GradTarget::MsSsim => {
            // A sigma-1.5 window gives border pixels gradients near 1e-8 through its tail
            // taps, inside the rounding floor of the difference; sigma 3 keeps every
            // coordinate measurable and still exercises two scales.
            let cfg = SsimConfig {
                sigma: 3.0,
                ..SsimConfig::default()
            };
            let t = uniform(&mut rng, Shape::new(1, 3, 22, 22), 0.0, 1.0);
            let p = t.zip_map(&uniform(&mut rng, t.shape(), 0.0, 1.0), |a, b| 0.6 * a + 0.4 * b)?;
            loss_check(&p, &t, &|g, p, t| g.ms_ssim_loss(p, t, &cfg))?
        }
        GradTarget::Psnr => {
            let (p, t) = pair(&mut rng, Shape::new(2, 3, 4, 4));
            loss_check(&p, &t, &|g, p, t| g.psnr_loss(p, t))?
        }
        GradTarget::Color => {
            let (p, t) = pair(&mut rng, Shape::new(2, 3, 4, 4));
            loss_check(&p, &t, &|g, p, t| g.color_loss(p, t))?
        }
        GradTarget::FeatureKl => {
            let e = FeatureExtractor::seeded(crate::losses::DEFAULT_EXTRACTOR_SEED);
            let (p, t) = loop {
                let (p, t) = pair(&mut rng, Shape::new(2, 3, 8, 8));
                if extractor_margin(&e, &p)? >= KINK_MARGIN {
                    break (p, t);
                }
                rejected += 1;
                if rejected == MAX_CANDIDATES {
                    return Err(Error::Invalid("no feature-KL check point met the margins".into()));
                }
            };
            loss_check(&p, &t, &|g, p, t| g.feature_kl(p, t, &e))?
        }
        GradTarget::FourierKl => {
            let (p, t) = loop {
                let (p, t) = pair(&mut rng, Shape::new(2, 3, 6, 6));
                if spectral_margin(&p) >= SPECTRAL_MARGIN {
                    break (p, t);
                }
                rejected += 1;
                if rejected == MAX_CANDIDATES {
                    return Err(Error::Invalid("no Fourier-KL check point met the margins".into()));
                }
            };
            loss_check(&p, &t, &|g, p, t| Ok(g.fourier_kl(p, t, FklOptions::default())?.total))?
        }
        GradTarget::Composite => {
            // every term, including the two baseline terms the full preset leaves at zero
            let mut cfg = LossConfig::preset(Preset::Full);
            cfg.weights.fourier_mse = 0.1;
            cfg.weights.feature_mse = 0.15;
            let (p, t) = loop {
                let (p, t) = disjoint_support_pair(&mut rng, Shape::new(1, 3, 12, 12));
                if extractor_margin(&cfg.extractor, &p)? >= KINK_MARGIN && spectral_margin(&p) >= SPECTRAL_MARGIN {
                    break (p, t);
                }
                rejected += 1;
                if rejected == MAX_CANDIDATES {
                    return Err(Error::Invalid("no composite check point met the margins".into()));
                }
            };
            loss_check(&p, &t, &|g, p, t| Ok(g.composite_loss(p, t, &cfg, false)?.composite))?
        }
        GradTarget::Network => {
            let problem = EndToEndProblem::draw(&mut rng)?;
            rejected = problem.rejected;
            problem.check()?
        }
    };
    Ok(GradCheckRow {
        target,
        point,
        rejected,
        report,
    })
}

/// Runs `points` checks of `target`.
pub fn run(target: GradTarget, seed: u64, points: usize) -> Result<Vec<GradCheckRow>> {
    (0..points).map(|i| check(target, seed, i)).collect()
}

/// A width-4 network, an 8x8 input and a reference at which the network-plus-loss
/// gradient can be checked.
#[derive(Debug, Clone)]
pub struct EndToEndProblem {
    pub network: Network,
    pub low: Tensor,
    pub reference: Tensor,
    pub loss: LossConfig,
    pub rejected: u64,
}

impl EndToEndProblem {
    /// Draws candidates until one meets every margin.
    ///
    /// The freshly initialised output layer is zero, which would zero every upstream
    /// gradient, so it is redrawn and scaled to move the image by at most 0.05. The
    /// reference comes from [`nearest_disjoint_reference`]. The full preset is used with a
    /// 7-tap SSIM window, the largest odd window an 8x8 image admits at the second scale.
    pub fn draw(rng: &mut impl Rng) -> Result<Self> {
        let mut loss = LossConfig::preset(Preset::Full);
        loss.ssim = SsimConfig {
            window: 7,
            ..SsimConfig::default()
        };
        for rejected in 0..MAX_CANDIDATES {
            let mut network = Network::new(NetworkConfig {
                seed: rng.random(),
                ..NetworkConfig::with_width(4)
            })?;
            let out = &mut network.params.output.weight;
            *out = Tensor::uniform(out.shape(), -1.0, 1.0, rng);
            let low = Tensor::uniform(Shape::new(1, 3, 8, 8), 0.1, 0.9, rng);
            let delta = network.forward(&low)?.zip_map(&low, |y, x| y - x)?.max_abs();
            network.params.output.weight = network.params.output.weight.scale(0.05 / delta);

            let mut g = Graph::new();
            let params = network.bind_constant(&mut g);
            let x = g.constant(low.clone());
            let y = llfdisc_forward(&mut g, x, &params, &network.config)?;
            let pred = g.value(y).clone();
            let in_range = pred.data().iter().all(|&v| v > 0.01 && v < 0.99);
            if !in_range || g.kink_margin() < KINK_MARGIN || spectral_margin(&pred) < SPECTRAL_MARGIN {
                continue;
            }
            let reference = nearest_disjoint_reference(&pred, rng);
            let psnr = crate::harness::metrics::psnr(&pred, &reference)?;
            if psnr > PSNR_TARGET_DB - 1.0 {
                continue;
            }
            return Ok(Self {
                network,
                low,
                reference,
                loss,
                rejected,
            });
        }
        Err(Error::Invalid("no end-to-end check point met the margins".into()))
    }

    pub fn composite(&self, g: &mut Graph, params: &[Var]) -> Result<Var> {
        let p = self.network.params.relabel(params);
        let x = g.constant(self.low.clone());
        let t = g.constant(self.reference.clone());
        let y = llfdisc_forward(g, x, &p, &self.network.config)?;
        Ok(g.composite_loss(y, t, &self.loss, false)?.composite)
    }

    /// Checks the gradient with respect to every network parameter.
    pub fn check(&self) -> Result<GradCheckReport> {
        let points: Vec<Tensor> = self.network.params.flatten().into_iter().cloned().collect();
        gradient_check_many(|g, vars| self.composite(g, vars), &points)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for t in GradTarget::ALL {
            assert_eq!(t.name().parse::<GradTarget>().unwrap(), t);
        }
        assert!("vgg".parse::<GradTarget>().is_err());
    }

    #[test]
    fn cheap_targets_pass() {
        for t in [GradTarget::SmoothL1, GradTarget::Histogram, GradTarget::Psnr, GradTarget::Color, GradTarget::FourierKl] {
            let row = check(t, 0, 0).unwrap();
            assert!(row.passes(), "{}", row.csv_row());
            assert_eq!(row.csv_row().split(',').count(), GradCheckRow::CSV_HEADER.split(',').count());
        }
    }

    #[test]
    fn spectral_margin_sees_real_bins_crossing_zero() {
        // a pure Nyquist checkerboard of amplitude 1e-4 on top of a constant
        let x = Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, w| 0.5 + 1e-4 * if (y + w) % 2 == 0 { 1.0 } else { -1.0 });
        let m = spectral_margin(&x);
        assert!(m < 1e-3 && m >= 0.0);
    }

    #[test]
    fn end_to_end_problem_meets_its_margins() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = EndToEndProblem::draw(&mut rng).unwrap();
        let pred = p.network.forward(&p.low).unwrap();
        assert!(spectral_margin(&pred) >= SPECTRAL_MARGIN);
        assert!(pred.max_abs_diff(&p.low) <= 0.05 + 1e-12);
        assert!(crate::harness::metrics::psnr(&pred, &p.reference).unwrap() < PSNR_TARGET_DB - 1.0);
    }
}
