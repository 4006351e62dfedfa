//! Command-line front end. Tabular output is CSV on stdout; diagnostics go to stderr.
//! Exit codes: 0 success, 1 invalid input, 2 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use llie::fourier::{amplitude, amplitude_swap, fft2d, log_amplitude_image, phase, phase_image};
use llie::harness::config::Config;
use llie::harness::gradsuite::{self, GradCheckRow, GradTarget};
use llie::harness::{
    enhance_file, evaluate_inputs, load_paired_dir, load_png, metrics, save_png, sweep_csv, sweep_fkl, synth_pairs,
    train_toy, write_pairs, MetricsRow, PairedSample,
};
use llie::losses::{composite_loss, LossConfig, LossTerm, Preset};
use llie::network::Network;
use llie::perceptual_kl::FeatureExtractor;
use llie::spectral_kl::{fourier_kl_loss_with, FklOptions, StatsScope};
use llie::{Error, Result};

#[derive(Parser)]
#[command(name = "llie", version, about = "Frequency-aware low-light image enhancement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Swap amplitude spectra between two images and write the spectra for inspection.
    AmpSwap {
        image_a: PathBuf,
        image_b: PathBuf,
        out_dir: PathBuf,
    },
    /// Evaluate a loss between two PNG images.
    LossEval(LossEvalArgs),
    /// Check analytic gradients against central differences.
    Gradcheck {
        /// A loss name, `network`, or `all`.
        #[arg(long, default_value = "all")]
        target: String,
        /// Points per target; defaults to 3 for losses and 1 for the network.
        #[arg(long)]
        points: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write synthetic low/normal pairs as `low/` and `high/` PNG directories.
    SynthData {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the enhancer and print the per-step losses.
    TrainToy(TrainArgs),
    /// Train once per Fourier-KL weight and report held-out PSNR/SSIM.
    SweepFkl {
        #[command(flatten)]
        train: TrainArgs,
        /// Comma-separated weights; defaults to 0,0.001,0.01,0.1,0.5,1.
        #[arg(long)]
        fkl_weights: Option<String>,
        #[arg(long)]
        test_count: Option<usize>,
        /// Paired directory used for evaluation instead of synthetic held-out pairs.
        #[arg(long)]
        test_data: Option<PathBuf>,
    },
    /// Enhance a PNG, or every PNG in a directory.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// PSNR and SSIM of predictions against references (files or directories).
    Metrics { pred: PathBuf, truth: PathBuf },
    /// Write a freshly initialised checkpoint.
    Init {
        checkpoint: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Args)]
struct LossEvalArgs {
    /// `fkl`, `all` (every term plus the composite), or a sub-loss column such as `l_s`.
    #[arg(long, default_value = "all")]
    loss: String,
    #[arg(long, default_value = "full")]
    preset: Preset,
    /// `per-channel` or `joint` Gaussians for the Fourier KL.
    #[arg(long, default_value = "per-channel")]
    fkl_scope: String,
    /// Use D(true ‖ pred) for the Fourier KL.
    #[arg(long)]
    fkl_reverse: bool,
    /// `seed:N` or an extractor weight file.
    #[arg(long)]
    extractor: Option<String>,
    pred: PathBuf,
    truth: PathBuf,
}

/// Training options; every flag has a config-file key of the same name with `-` as `_`.
#[derive(Args, Default)]
struct TrainArgs {
    /// `key = value` configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Weight override such as `l_fkl=0.05`; repeatable.
    #[arg(long = "weight", value_name = "COLUMN=VALUE")]
    weights: Vec<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    heads: Option<String>,
    #[arg(long)]
    leaky_slope: Option<f64>,
    #[arg(long)]
    network_seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Paired directory with `low/` and `high/`; synthetic pairs are used otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    data_seed: Option<u64>,
}

impl TrainArgs {
    fn config(&self) -> Result<Config> {
        let file = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        let mut flags = Config::default();
        let mut set = |k: &str, v: Option<String>| v.map_or(Ok(()), |v| flags.set(k, v));
        set("preset", self.preset.clone())?;
        set("steps", self.steps.map(|v| v.to_string()))?;
        set("lr", self.lr.map(|v| v.to_string()))?;
        set("batch_size", self.batch_size.map(|v| v.to_string()))?;
        set("crop", self.crop.map(|v| v.to_string()))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("width", self.width.map(|v| v.to_string()))?;
        set("heads", self.heads.clone())?;
        set("leaky_slope", self.leaky_slope.map(|v| v.to_string()))?;
        set("network_seed", self.network_seed.map(|v| v.to_string()))?;
        set("output", self.output.as_ref().map(|p| p.display().to_string()))?;
        set("data", self.data.as_ref().map(|p| p.display().to_string()))?;
        set("train_count", self.train_count.map(|v| v.to_string()))?;
        set("image_size", self.image_size.map(|v| v.to_string()))?;
        set("data_seed", self.data_seed.map(|v| v.to_string()))?;
        for w in &self.weights {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("--weight expects COLUMN=VALUE, got {w:?}")))?;
            flags.set(&format!("weight.{}", k.trim()), v.trim())?;
        }
        Ok(file.merged(&flags))
    }
}

/// Training pairs from `data`, or synthetic ones.
fn training_data(cfg: &Config) -> Result<Vec<PairedSample>> {
    match cfg.get_str("data") {
        Some(dir) => load_paired_dir(Path::new(dir)),
        None => synth_pairs(
            cfg.get_or("train_count", 64)?,
            cfg.get_or("image_size", 32)?,
            cfg.get_or("data_seed", 0)?,
        ),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

fn amp_swap(a: &Path, b: &Path, out: &Path) -> Result<()> {
    let (ia, ib) = (load_png(a)?, load_png(b)?);
    let (sa, sb) = amplitude_swap(&ia, &ib)?;
    create_dir(out)?;
    save_png(&out.join("a_phase_b_amplitude.png"), &sa)?;
    save_png(&out.join("b_phase_a_amplitude.png"), &sb)?;
    for (name, img) in [("a", &ia), ("b", &ib)] {
        let spec = fft2d(img);
        save_png(&out.join(format!("{name}_log_amplitude.png")), &log_amplitude_image(&amplitude(&spec)))?;
        save_png(&out.join(format!("{name}_phase.png")), &phase_image(&phase(&spec)))?;
    }
    Ok(())
}

fn loss_eval(args: &LossEvalArgs) -> Result<()> {
    let (p, t) = (load_png(&args.pred)?, load_png(&args.truth)?);
    let scope = match args.fkl_scope.as_str() {
        "per-channel" => StatsScope::PerChannel,
        "joint" => StatsScope::Joint,
        s => return Err(Error::Invalid(format!("unknown --fkl-scope {s:?}; expected per-channel or joint"))),
    };
    let fkl = FklOptions {
        scope,
        reverse: args.fkl_reverse,
    };
    if args.loss == "fkl" {
        let b = fourier_kl_loss_with(&p, &t, fkl)?;
        println!("d_amp,d_pha,total\n{:.10e},{:.10e},{:.10e}", b.d_amp, b.d_pha, b.total);
        return Ok(());
    }
    let mut cfg = LossConfig::preset(args.preset);
    cfg.fkl = fkl;
    if let Some(spec) = &args.extractor {
        cfg.extractor = FeatureExtractor::from_spec(spec)?;
    }
    let report = composite_loss(&p, &t, &cfg)?;
    if args.loss == "all" || args.loss == "composite" {
        println!("{}\n{}", llie::losses::LossReport::csv_header(), report.csv_row());
        return Ok(());
    }
    let term = LossTerm::ALL.into_iter().find(|t| t.column() == args.loss).ok_or_else(|| {
        let names: Vec<_> = LossTerm::ALL.iter().map(|t| t.column()).collect();
        Error::Invalid(format!(
            "unknown --loss {:?}; expected fkl, all or one of {}",
            args.loss,
            names.join(", ")
        ))
    })?;
    println!("loss,value\n{},{:.10e}", term.column(), report.get(term));
    Ok(())
}

fn gradcheck(target: &str, points: Option<usize>, seed: u64) -> Result<bool> {
    let targets = if target == "all" {
        GradTarget::ALL.to_vec()
    } else {
        vec![target.parse()?]
    };
    println!("{}", GradCheckRow::CSV_HEADER);
    let mut ok = true;
    for t in targets {
        let n = points.unwrap_or(if t == GradTarget::Network { 1 } else { 3 });
        for i in 0..n {
            let row = gradsuite::check(t, seed, i)?;
            ok &= row.passes();
            println!("{}", row.csv_row());
        }
    }
    Ok(ok)
}

fn print_metrics(rows: &[MetricsRow]) {
    println!("{}", MetricsRow::CSV_HEADER);
    for r in rows {
        println!("{}", r.csv_row());
    }
}

fn synth_data(out: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    let pairs = synth_pairs(count, size, seed)?;
    write_pairs(out, &pairs)?;
    print_metrics(&evaluate_inputs(&pairs)?);
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let cfg = args.config()?;
    let train_cfg = cfg.train_config()?;
    let data = training_data(&cfg)?;
    let out = train_toy(&train_cfg, &data)?;
    print!("{}", out.csv());
    eprintln!(
        "composite over the training set: initial {:.6}, final {:.6}",
        out.initial_composite, out.final_composite
    );
    Ok(())
}

fn sweep(args: &TrainArgs, weights: Option<&str>, test_count: Option<usize>, test_data: Option<&Path>) -> Result<()> {
    let mut cfg = args.config()?;
    if let Some(w) = weights {
        cfg.set("fkl_weights", w)?;
    }
    if let Some(n) = test_count {
        cfg.set("test_count", n.to_string())?;
    }
    let base = cfg.train_config()?;
    let (train, test) = match (cfg.get_str("data"), test_data) {
        (_, Some(dir)) => (training_data(&cfg)?, load_paired_dir(dir)?),
        (Some(_), None) => return Err(Error::Invalid("--data needs --test-data for the sweep".into())),
        (None, None) => {
            let n = cfg.get_or("train_count", 64)?;
            let mut all = synth_pairs(
                n + cfg.get_or("test_count", 8)?,
                cfg.get_or("image_size", 32)?,
                cfg.get_or("data_seed", 0)?,
            )?;
            let test = all.split_off(n);
            (all, test)
        }
    };
    let rows = sweep_fkl(&base, &cfg.fkl_weights()?, &train, &test)?;
    let csv = sweep_csv(&rows);
    if let Some(dir) = &base.output_dir {
        create_dir(dir)?;
        write_text(&dir.join("sweep.csv"), &csv)?;
    }
    print!("{csv}");
    Ok(())
}

fn enhance(checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let net = Network::load(checkpoint)?;
    if input.is_dir() {
        create_dir(output)?;
        for name in png_names(input)? {
            enhance_file(&net, &input.join(&name), &output.join(&name))?;
        }
        Ok(())
    } else {
        enhance_file(&net, input, output)
    }
}

fn metrics_cmd(pred: &Path, truth: &Path) -> Result<()> {
    let pairs: Vec<(String, PathBuf, PathBuf)> = if pred.is_dir() {
        png_names(pred)?
            .into_iter()
            .map(|n| {
                let id = n.rsplit_once('.').map_or(n.as_str(), |(s, _)| s).to_string();
                (id, pred.join(&n), truth.join(&n))
            })
            .collect()
    } else {
        let id = pred.file_stem().map_or(String::new(), |s| s.to_string_lossy().into_owned());
        vec![(id, pred.to_path_buf(), truth.to_path_buf())]
    };
    if pairs.is_empty() {
        return Err(Error::Invalid(format!("no PNG files in {}", pred.display())));
    }
    let rows = pairs
        .iter()
        .map(|(id, p, t)| metrics(id.clone(), &load_png(p)?, &load_png(t)?))
        .collect::<Result<Vec<_>>>()?;
    print_metrics(&rows);
    Ok(())
}

fn init(checkpoint: &Path, args: &TrainArgs) -> Result<()> {
    let cfg = args.config()?.train_config()?;
    Network::new(cfg.network)?.save(checkpoint)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::AmpSwap { image_a, image_b, out_dir } => amp_swap(&image_a, &image_b, &out_dir)?,
        Command::LossEval(args) => loss_eval(&args)?,
        Command::Gradcheck { target, points, seed } => {
            if !gradcheck(&target, points, seed)? {
                eprintln!("error: gradient check exceeded its tolerance");
                return Ok(ExitCode::from(2));
            }
        }
        Command::SynthData { out_dir, count, size, seed } => synth_data(&out_dir, count, size, seed)?,
        Command::TrainToy(args) => train(&args)?,
        Command::SweepFkl {
            train,
            fkl_weights,
            test_count,
            test_data,
        } => sweep(&train, fkl_weights.as_deref(), test_count, test_data.as_deref())?,
        Command::Enhance {
            checkpoint,
            input,
            output,
        } => enhance(&checkpoint, &input, &output)?,
        Command::Metrics { pred, truth } => metrics_cmd(&pred, &truth)?,
        Command::Init { checkpoint, train } => init(&checkpoint, &train)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    use super::Cli;

    #[test]
    fn argument_definitions_are_consistent() {
        Cli::command().debug_assert();
    }
}
