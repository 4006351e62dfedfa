//! Gaussian summaries of amplitude and phase spectra and the Fourier KL loss between a
//! low-light image and its reference, compared with the MSE-on-spectra baseline.
//!
//! ```text
//! cargo run --example fourier_kl
//! ```

use llie::fourier::{amplitude, fft2d, phase};
use llie::harness::synth_pairs;
use llie::losses::fourier_mse;
use llie::spectral_kl::{fourier_kl_loss, fourier_kl_loss_with, spectral_stats, FklOptions, StatsScope};
use llie::Result;

pub fn run_example() -> Result<()> {
    let s = synth_pairs(1, 32, 3)?.remove(0);
    for (name, img) in [("low", &s.low), ("normal", &s.normal)] {
        let spec = fft2d(img);
        let a = spectral_stats(amplitude(&spec).values())?;
        let p = spectral_stats(phase(&spec).values())?;
        println!("{name:>6}: amplitude N({:.4}, {:.4})  phase N({:.4}, {:.4})  [red channel]", a[0].mean, a[0].variance, p[0].mean, p[0].variance);
    }

    let per_channel = fourier_kl_loss(&s.low, &s.normal)?;
    let joint = fourier_kl_loss_with(
        &s.low,
        &s.normal,
        FklOptions {
            scope: StatsScope::Joint,
            reverse: false,
        },
    )?;
    println!("fkl per channel: d_amp {:.4} d_pha {:.4} total {:.4}", per_channel.d_amp, per_channel.d_pha, per_channel.total);
    println!("fkl joint:       d_amp {:.4} d_pha {:.4} total {:.4}", joint.d_amp, joint.d_pha, joint.total);
    println!("fourier mse:     {:.4}", fourier_mse(&s.low, &s.normal)?);

    // the loss is blind to where energy sits: a circular shift leaves it unchanged
    let sh = s.low.shape();
    let rolled = llie::Tensor::from_fn(sh, |b, c, y, x| s.low.at(b, c, (y + 5) % sh.height, (x + 11) % sh.width));
    println!("fkl(shifted low, normal) = {:.4}", fourier_kl_loss(&rolled, &s.normal)?.total);
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
