//! Trains a small enhancer on synthetic pairs and scores it on held-out ones.
//!
//! ```text
//! cargo run --release --example train_and_enhance -- 300
//! ```

use llie::harness::{evaluate, evaluate_inputs, mean_metrics, synth_pairs, train_toy, TrainConfig};
use llie::network::NetworkConfig;
use llie::Result;

pub fn run(steps: usize, width: usize) -> Result<()> {
    let mut pairs = synth_pairs(40, 32, 1)?;
    let test = pairs.split_off(32);
    let cfg = TrainConfig {
        steps,
        network: NetworkConfig::with_width(width),
        ..TrainConfig::default()
    };
    let out = train_toy(&cfg, &pairs)?;
    for r in out.log.iter().step_by((steps / 5).max(1)) {
        println!("step {:>4}: composite {:.4}", r.step, r.report.composite);
    }
    println!("composite on the training set: {:.4} -> {:.4}", out.initial_composite, out.final_composite);

    let (psnr_in, ssim_in) = mean_metrics(&evaluate_inputs(&test)?);
    let (psnr_out, ssim_out) = mean_metrics(&evaluate(&out.network, &test)?);
    println!("held out: PSNR {psnr_in:.2} -> {psnr_out:.2} dB, SSIM {ssim_in:.3} -> {ssim_out:.3}");
    Ok(())
}

pub fn run_example() -> Result<()> {
    run(10, 4)
}

fn main() -> Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    run(steps, 8)
}
