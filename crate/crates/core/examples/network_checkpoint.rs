//! Builds the enhancer, shows that a fresh network is the identity, and round-trips a
//! checkpoint.
//!
//! ```text
//! cargo run --example network_checkpoint
//! ```

use llie::harness::{enhance, synth_pairs};
use llie::network::{Network, NetworkConfig};
use llie::Result;

pub fn run_example() -> Result<()> {
    for width in [4, 8, 16] {
        let net = Network::new(NetworkConfig::with_width(width))?;
        println!("width {width:>2}: {} parameters", net.parameter_count());
    }

    let mut net = Network::new(NetworkConfig::with_width(8))?;
    let img = synth_pairs(1, 24, 0)?.remove(0).low;
    println!("fresh network: max |f(x) - x| = {:.1e}", net.forward(&img)?.max_abs_diff(&img));

    // a non-zero output layer, so the checkpoint carries something interesting
    net.params.output.weight = net.params.output.weight.map(|_| 1e-3);
    let dir = tempfile::tempdir().map_err(|e| llie::Error::Io {
        path: std::env::temp_dir(),
        source: e,
    })?;
    let path = dir.path().join("model.ckpt");
    net.save(&path)?;
    let back = Network::load(&path)?;
    let (a, b) = (enhance(&net, &img)?, enhance(&back, &img)?);
    println!(
        "checkpoint {} bytes, reloaded output identical: {}",
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0),
        a == b
    );

    // odd sizes are padded reflectively and cropped back
    let odd = llie::Tensor::from_fn(llie::Shape::new(1, 3, 13, 18), |_, c, y, x| img.at(0, c, y, x));
    println!("13x18 input -> {} output", enhance(&net, &odd)?.shape());
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
