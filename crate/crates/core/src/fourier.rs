//! Unitary 2-D discrete Fourier analysis of image tensors.
//!
//! The forward transform is
//! `X(u,v) = 1/√(HW) · Σ_h Σ_w x(h,w) · exp(-j2π(hu/H + wv/W))`,
//! applied to every `(batch, channel)` plane independently. Spectra are kept in natural
//! (uncentred) order.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor_core::{Graph, Shape, Tensor, Var};

/// Real and imaginary planes of a batch of spectra, both shaped like the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    pub real: Tensor,
    pub imag: Tensor,
}

impl ComplexSpectrum {
    pub fn new(real: Tensor, imag: Tensor) -> Result<Self> {
        real.expect_shape("complex_spectrum", imag.shape())?;
        Ok(Self { real, imag })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            real: Tensor::zeros(shape),
            imag: Tensor::zeros(shape),
        }
    }

    pub fn shape(&self) -> Shape {
        self.real.shape()
    }

    /// `(H, W)` of the source image.
    pub fn source_shape(&self) -> (usize, usize) {
        (self.real.shape().height, self.real.shape().width)
    }

    pub fn get(&self, b: usize, c: usize, u: usize, v: usize) -> Complex64 {
        Complex64::new(self.real.at(b, c, u, v), self.imag.at(b, c, u, v))
    }
}

/// Magnitude `√(R² + I²)` of every coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeMap(Tensor);

/// Angle `atan2(I, R)` of every coefficient, in `(-π, π]`; zero where the amplitude is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMap(Tensor);

impl AmplitudeMap {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.data().iter().any(|&v| v < 0.0) {
            return Err(Error::Invalid("amplitudes must be non-negative".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

impl PhaseMap {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.data().iter().any(|&v| !(v > -PI && v <= PI)) {
            return Err(Error::Invalid("phases must lie in (-pi, pi]".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// In-place unitary 2-D DFT of one `h x w` plane.
fn transform_plane(planner: &mut FftPlanner<f64>, buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let row_fft = if inverse {
        planner.plan_fft_inverse(w)
    } else {
        planner.plan_fft_forward(w)
    };
    row_fft.process(buf);

    let col_fft = if inverse {
        planner.plan_fft_inverse(h)
    } else {
        planner.plan_fft_forward(h)
    };
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }

    let norm = 1.0 / ((h * w) as f64).sqrt();
    buf.iter_mut().for_each(|z| *z *= norm);
}

fn transform(real: &Tensor, imag: Option<&Tensor>, inverse: bool) -> ComplexSpectrum {
    let s = real.shape();
    let (h, w) = (s.height, s.width);
    let mut re = Tensor::zeros(s);
    let mut im = Tensor::zeros(s);
    if s.numel() == 0 {
        return ComplexSpectrum { real: re, imag: im };
    }
    let mut planner = FftPlanner::new();
    let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
    for p in 0..s.batch * s.channels {
        let src_re = &real.data()[p * h * w..][..h * w];
        for (i, z) in buf.iter_mut().enumerate() {
            *z = Complex64::new(src_re[i], imag.map_or(0.0, |t| t.data()[p * h * w + i]));
        }
        transform_plane(&mut planner, &mut buf, h, w, inverse);
        let dst_re = &mut re.data_mut()[p * h * w..][..h * w];
        for (d, z) in dst_re.iter_mut().zip(&buf) {
            *d = z.re;
        }
        let dst_im = &mut im.data_mut()[p * h * w..][..h * w];
        for (d, z) in dst_im.iter_mut().zip(&buf) {
            *d = z.im;
        }
    }
    ComplexSpectrum { real: re, imag: im }
}

/// Bins equal to their own conjugate partner; their coefficients are real for real input.
fn is_self_conjugate(u: usize, v: usize, h: usize, w: usize) -> bool {
    (2 * u) % h == 0 && (2 * v) % w == 0
}

/// Spectrum of a real image.
///
/// Coefficients at self-conjugate bins (DC and the Nyquist rows/columns) are real by
/// symmetry; their imaginary parts are set to exactly zero so the phase there is exactly
/// `0` or `π` instead of flipping sign with rounding noise.
pub fn fft2d(image: &Tensor) -> ComplexSpectrum {
    let mut spec = transform(image, None, false);
    let s = image.shape();
    for p in 0..s.batch * s.channels {
        for u in 0..s.height {
            for v in 0..s.width {
                if is_self_conjugate(u, v, s.height, s.width) {
                    spec.imag.data_mut()[(p * s.height + u) * s.width + v] = 0.0;
                }
            }
        }
    }
    spec
}

/// Forward unitary transform of a complex input.
pub fn fft2d_complex(spectrum: &ComplexSpectrum) -> ComplexSpectrum {
    transform(&spectrum.real, Some(&spectrum.imag), false)
}

/// Result of an inverse transform: the real part plus the largest discarded imaginary
/// magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub image: Tensor,
    pub max_imag_residue: f64,
}

/// Inverse unitary transform.
pub fn ifft2d(spectrum: &ComplexSpectrum) -> Reconstruction {
    let out = transform(&spectrum.real, Some(&spectrum.imag), true);
    Reconstruction {
        max_imag_residue: out.imag.max_abs(),
        image: out.real,
    }
}

fn angle(re: f64, im: f64) -> f64 {
    if re == 0.0 && im == 0.0 {
        return 0.0;
    }
    let p = im.atan2(re);
    if p <= -PI {
        PI
    } else {
        p
    }
}

pub fn amplitude(spectrum: &ComplexSpectrum) -> AmplitudeMap {
    AmplitudeMap(
        spectrum
            .real
            .zip_map(&spectrum.imag, f64::hypot)
            .expect("spectrum planes share a shape"),
    )
}

pub fn phase(spectrum: &ComplexSpectrum) -> PhaseMap {
    PhaseMap(
        spectrum
            .real
            .zip_map(&spectrum.imag, angle)
            .expect("spectrum planes share a shape"),
    )
}

/// Rebuilds `A·cos P + j·A·sin P`.
pub fn recompose(amp: &AmplitudeMap, pha: &PhaseMap) -> Result<ComplexSpectrum> {
    if amp.0.shape() != pha.0.shape() {
        return Err(Error::shape(
            "recompose",
            format!(
                "amplitude {} and phase {} differ",
                amp.0.shape(),
                pha.0.shape()
            ),
        ));
    }
    Ok(ComplexSpectrum {
        real: amp.0.zip_map(&pha.0, |a, p| a * p.cos())?,
        imag: amp.0.zip_map(&pha.0, |a, p| a * p.sin())?,
    })
}

/// Exchanges amplitude spectra while keeping each image's phase.
///
/// Returns `(ifft(|F b|·e^{j∠F a}), ifft(|F a|·e^{j∠F b}))`. Channels are swapped
/// independently. No clamping is applied.
pub fn amplitude_swap(a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "amplitude_swap",
            format!("images have shapes {} and {}", a.shape(), b.shape()),
        ));
    }
    let (fa, fb) = (fft2d(a), fft2d(b));
    let a_swapped = ifft2d(&recompose(&amplitude(&fb), &phase(&fa))?).image;
    let b_swapped = ifft2d(&recompose(&amplitude(&fa), &phase(&fb))?).image;
    Ok((a_swapped, b_swapped))
}

fn shift_center(t: &Tensor) -> Tensor {
    let s = t.shape();
    Tensor::from_fn(s, |b, c, y, x| {
        t.at(b, c, (y + s.height - s.height / 2) % s.height, (x + s.width - s.width / 2) % s.width)
    })
}

/// `log(1 + A)` scaled to `[0, 1]` per plane, with the DC bin moved to the centre for
/// display.
pub fn log_amplitude_image(amp: &AmplitudeMap) -> Tensor {
    let mut t = shift_center(&amp.0.map(f64::ln_1p));
    let plane = t.shape().plane();
    for chunk in t.data_mut().chunks_mut(plane) {
        let max = chunk.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            chunk.iter_mut().for_each(|v| *v /= max);
        }
    }
    t
}

/// Phase mapped linearly from `(-π, π]` to `(0, 1]`, centred for display.
pub fn phase_image(pha: &PhaseMap) -> Tensor {
    shift_center(&pha.0.map(|p| (p + PI) / (2.0 * PI)))
}

impl Graph {
    /// Differentiable real and imaginary parts of the spectrum of a real tensor.
    pub fn fft2d(&mut self, x: Var) -> Result<(Var, Var)> {
        let spec = fft2d(self.value(x));
        let re = self.record(
            "fft2d_real",
            spec.real,
            &[x],
            Box::new(|ctx| {
                // d Re(Fx) / dx applied to g is Re(F^H g)
                let back = transform(ctx.grad, None, true);
                vec![Some(back.real)]
            }),
        )?;
        let im = self.record(
            "fft2d_imag",
            spec.imag,
            &[x],
            Box::new(|ctx| {
                // Re(F^H (j g)) = -Im(F^H g)
                let back = transform(ctx.grad, None, true);
                vec![Some(back.imag.scale(-1.0))]
            }),
        )?;
        Ok((re, im))
    }

    /// Differentiable coefficient magnitude; the gradient is taken as zero where `A = 0`.
    pub fn complex_abs(&mut self, re: Var, im: Var) -> Result<Var> {
        let value = self.value(re).zip_map(self.value(im), f64::hypot)?;
        self.record(
            "complex_abs",
            value,
            &[re, im],
            Box::new(|ctx| {
                let (r, i, a) = (ctx.inputs[0], ctx.inputs[1], ctx.output);
                let part = |num: &Tensor| {
                    let q = num.zip_map(a, |n, a| if a > 0.0 { n / a } else { 0.0 }).expect("shape");
                    q.zip_map(ctx.grad, |q, g| q * g).expect("shape")
                };
                vec![ctx.needs[0].then(|| part(r)), ctx.needs[1].then(|| part(i))]
            }),
        )
    }

    /// Differentiable coefficient angle `atan2(I, R)` in `(-π, π]`.
    pub fn complex_angle(&mut self, re: Var, im: Var) -> Result<Var> {
        let value = self.value(re).zip_map(self.value(im), angle)?;
        self.record(
            "complex_angle",
            value,
            &[re, im],
            Box::new(|ctx| {
                let (r, i) = (ctx.inputs[0], ctx.inputs[1]);
                let a2 = r.zip_map(i, |r, i| r * r + i * i).expect("shape");
                let part = |num: &Tensor, sign: f64| {
                    let q = num
                        .zip_map(&a2, |n, a2| if a2 > 0.0 { sign * n / a2 } else { 0.0 })
                        .expect("shape");
                    q.zip_map(ctx.grad, |q, g| q * g).expect("shape")
                };
                // d/dR = -I/A², d/dI = R/A²
                vec![
                    ctx.needs[0].then(|| part(i, -1.0)),
                    ctx.needs[1].then(|| part(r, 1.0)),
                ]
            }),
        )
    }

    /// Amplitude and phase maps of a real tensor, both differentiable.
    pub fn amplitude_phase(&mut self, x: Var) -> Result<(Var, Var)> {
        let (re, im) = self.fft2d(x)?;
        Ok((self.complex_abs(re, im)?, self.complex_angle(re, im)?))
    }
}
