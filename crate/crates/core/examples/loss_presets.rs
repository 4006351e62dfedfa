//! Every sub-loss and the weighted composite under each ablation preset, as CSV.
//!
//! ```text
//! cargo run --example loss_presets
//! ```

use llie::harness::synth_pairs;
use llie::losses::{composite_loss, LossConfig, LossReport, Preset};
use llie::Result;

pub fn run_example() -> Result<()> {
    let s = synth_pairs(1, 32, 11)?.remove(0);
    println!("preset,{}", LossReport::csv_header());
    for p in Preset::ALL {
        let r = composite_loss(&s.low, &s.normal, &LossConfig::preset(p))?;
        println!("{p},{}", r.csv_row());
    }
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
