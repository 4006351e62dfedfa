//! Swaps amplitude spectra between a bright image and a darkened copy.
//!
//! Scaling an image only scales its amplitude spectrum, so swapping amplitudes between an
//! image and its scaled copy exchanges their brightness and nothing else.
//!
//! ```text
//! cargo run --example amplitude_swap
//! ```

use llie::fourier::{amplitude, amplitude_swap, fft2d, phase};
use llie::harness::synth_pairs;
use llie::Result;

pub fn run_example() -> Result<()> {
    let sample = synth_pairs(1, 32, 7)?.remove(0);
    let bright = sample.normal;
    let dark = bright.scale(0.25);

    let (dark_phase_bright_amp, bright_phase_dark_amp) = amplitude_swap(&dark, &bright)?;
    println!("max |swap(dark) - bright| = {:.3e}", dark_phase_bright_amp.max_abs_diff(&bright));
    println!("max |swap(bright) - dark| = {:.3e}", bright_phase_dark_amp.max_abs_diff(&dark));

    // a degraded pair: giving the low image the normal amplitude recovers most of the gap
    let (fl, fn_) = (fft2d(&sample.low), fft2d(&bright));
    let amp_gap = amplitude(&fl).values().max_abs_diff(amplitude(&fn_).values());
    let pha_gap = phase(&fl).values().zip_map(phase(&fn_).values(), |a, b| (a - b).abs())?.mean();
    println!("low vs normal: max amplitude gap {amp_gap:.3}, mean phase gap {pha_gap:.3} rad");

    let (swapped, _) = amplitude_swap(&sample.low, &bright)?;
    let err = |x: &llie::Tensor| x.zip_map(&bright, |a, b| (a - b).powi(2)).map(|t| t.mean());
    println!(
        "MSE to the normal image: low {:.5}, low phase with normal amplitude {:.5}",
        err(&sample.low)?,
        err(&swapped.clamp(0.0, 1.0))?
    );
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
