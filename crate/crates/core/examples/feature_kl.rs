//! Feature-space KL divergence with the fixed extractor, and how to swap in other weights.
//!
//! ```text
//! cargo run --example feature_kl
//! cargo run --example feature_kl -- weights.llfx
//! ```

use llie::harness::synth_pairs;
use llie::perceptual_kl::{extract_features, feature_kl_loss, to_distribution, FeatureExtractor};
use llie::Result;

pub fn run_with(spec: &str) -> Result<()> {
    let e = FeatureExtractor::from_spec(spec)?;
    println!("extractor {spec}: {:?}", e.provenance());
    let s = synth_pairs(1, 32, 5)?.remove(0);
    let f = extract_features(&s.normal, &e)?;
    let p = to_distribution(&f)?;
    let top = p.row(0).iter().copied().fold(0.0, f64::max);
    println!("features {} -> distribution over {} entries, largest mass {top:.4}", f.shape(), p.row(0).len());

    println!("KL(low || normal)        = {:.5}", feature_kl_loss(&s.low, &s.normal, &e)?);
    println!("KL(normal || normal)     = {:.5}", feature_kl_loss(&s.normal, &s.normal, &e)?);
    let brighter = s.low.map(|v| (v * 2.5).min(1.0));
    println!("KL(2.5 x low || normal)  = {:.5}", feature_kl_loss(&brighter, &s.normal, &e)?);
    Ok(())
}

pub fn run_example() -> Result<()> {
    run_with("seed:42")
}

fn main() -> Result<()> {
    match std::env::args().nth(1) {
        Some(path) => run_with(&path),
        None => run_example(),
    }
}
