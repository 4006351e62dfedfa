//! Data, metrics, training and enhancement around the network, shared by the `llie` binary
//! and the examples.

pub mod config;
pub mod data;
pub mod gradsuite;
pub mod image_io;
pub mod metrics;
pub mod train;

pub use data::{load_paired_dir, synth_pairs, synth_pairs_with, write_pairs, Degradation, PairedSample};
pub use image_io::{crop, load_png, quantize, reflect_pad, save_png};
pub use metrics::{metrics, psnr, ssim_metric, MetricsRow};
pub use train::{
    dataset_composite, enhance, enhance_file, evaluate, evaluate_inputs, mean_metrics, sweep_csv, sweep_fkl, train_toy, Adam,
    StepRecord, SweepRow, TrainConfig, TrainOutcome, DEFAULT_LEARNING_RATE, SWEEP_WEIGHTS,
};
