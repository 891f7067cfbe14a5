//! `ctxnet` command-line tool.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or configuration
//! error, 3 numerical failure.

mod config;

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ctxnet::data::image_io::{save_gray16, save_labels};
use ctxnet::data::{
    load_checkpoint, load_image, read_dataset, save_checkpoint, synth_counting_set, synth_segmentation_set,
    write_dataset, CountingSynth, Dataset, Record, Sample, SegmentationSynth, SplitSpec, Task,
};
use ctxnet::gradcheck::{network_suite, op_suite, CheckResult};
use ctxnet::hourglass::{Head, Network};
use ctxnet::training::{argmax_labels, evaluate_counting, evaluate_segmentation, train, TrainOptions};
use ctxnet::{Error, RngState, Tensor};

use config::{DataSource, RunConfig};

#[derive(Parser)]
#[command(name = "ctxnet", version, about = "Contextual U-Net training, inference and verification")]
struct Cli {
    /// Worker threads. 1 gives bit-reproducible runs.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    Ops,
    Network,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Segment,
    Count,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network described by a JSON run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue an interrupted run from its output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Predict segmentation maps or density maps for images.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image path or glob pattern.
        #[arg(long)]
        input: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient verification in double precision.
    Gradcheck {
        #[arg(long, value_enum, default_value = "ops")]
        scope: Scope,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Break the backward rule of this operator (suite self-test).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Write a synthetic dataset directory.
    Synth {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Image side length in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Evaluate a checkpoint on one split of a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        split: SplitArg,
        /// Gaussian width of density targets, in pixels.
        #[arg(long, default_value_t = 3.0)]
        sigma: f64,
    },
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Display) -> Failure {
    Failure { code: 2, message: message.to_string() }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Numerical(_) => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build_global() {
        eprintln!("error: cannot start thread pool: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Train { config, resume } => cmd_train(&config, resume),
        Command::Infer { checkpoint, input, out } => cmd_infer(&checkpoint, &input, &out),
        Command::Gradcheck { scope, seed, inject_fault } => cmd_gradcheck(scope, seed, inject_fault.as_deref()),
        Command::Synth { task, n, out, seed, size } => cmd_synth(task, n, &out, seed, size),
        Command::Eval { checkpoint, data, split, sigma } => cmd_eval(&checkpoint, &data, split, sigma),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn samples(records: &[&Record], sigma: f64) -> Result<Vec<Sample<f32>>, Failure> {
    Ok(records.iter().map(|r| r.to_sample(sigma)).collect::<Result<Vec<_>, _>>()?)
}

fn load_run_data(config: &RunConfig) -> Result<Dataset, Failure> {
    match &config.data {
        DataSource::Dir(dir) => {
            let data = read_dataset(dir)?;
            if data.task != config.task {
                return Err(usage(format!(
                    "field `data.dir`: dataset task {:?} differs from {:?}",
                    data.task, config.task
                )));
            }
            Ok(data)
        }
        DataSource::Synthetic(s) => {
            let rng = RngState::new(s.seed.unwrap_or(config.seed)).substream("synth");
            let (records, spec) = match config.task {
                Task::Count => (synth_counting_set(s.n, &s.counting, &rng)?, SplitSpec::counting_protocol(s.n)),
                Task::Segment => {
                    (synth_segmentation_set(s.n, &s.segmentation, &rng)?, SplitSpec::segmentation_protocol(s.n))
                }
            };
            Ok(Dataset { task: config.task, split: spec.apply(records.len())?, records })
        }
    }
}

fn cmd_train(path: &Path, resume: bool) -> Result<(), Failure> {
    let config = RunConfig::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let data = load_run_data(&config)?;
    let train_set = samples(&data.part("train")?, config.density_sigma)?;
    let val_set = samples(&data.part("val")?, config.density_sigma)?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| usage(format!("field `output_dir`: {}: {e}", out.display())))?;
    let resolved = serde_json::to_string_pretty(&config).expect("config serializes") + "\n";
    std::fs::write(out.join("config.json"), resolved).map_err(|e| usage(format!("{}: {e}", out.display())))?;

    let mut net: Network<f32> = config.model.build(&config.network, &RngState::new(config.seed))?;
    let options = TrainOptions { seed: config.seed, out_dir: Some(out.clone()), resume, halt_after: None };
    let report = train(&mut net, &train_set, &val_set, &config.train, &config.optimizer, &options)?;
    for r in &report.epochs {
        println!(
            "epoch {:>4}  phase {}  train_loss {:.6e}  val_loss {:.6e}  {} {:.6}",
            r.epoch, r.phase, r.train_loss, r.val_loss, report.metric, r.metric
        );
    }
    println!(
        "phases ended after epochs {} and {}; best epoch {} (val_loss {:.6e}); {} train {:.6} val {:.6}",
        report.phase_end[0],
        report.phase_end[1],
        report.best_epoch,
        report.best_val_loss,
        report.metric,
        report.final_train_metric,
        report.final_val_metric
    );
    if report.best_epoch == 0 {
        // No epoch ran; keep the initial weights as the checkpoint.
        save_checkpoint(&net, &out.join("best.ckpt"))?;
    }
    println!("checkpoint: {}", out.join("best.ckpt").display());
    Ok(())
}

fn expand_inputs(pattern: &str) -> Result<Vec<PathBuf>, Failure> {
    let paths = glob::glob(pattern).map_err(|e| usage(format!("--input {pattern:?}: {e}")))?;
    let mut out: Vec<PathBuf> = paths.filter_map(|p| p.ok()).filter(|p| p.is_file()).collect();
    out.sort();
    if out.is_empty() {
        return Err(usage(format!("--input {pattern:?} matches no files")));
    }
    Ok(out)
}

fn cmd_infer(checkpoint: &Path, input: &str, out: &Path) -> Result<(), Failure> {
    let net: Network<f32> = load_checkpoint(checkpoint)?;
    let inputs = expand_inputs(input)?;
    std::fs::create_dir_all(out).map_err(|e| usage(format!("--out {}: {e}", out.display())))?;
    for path in inputs {
        let image: Tensor<f32> = load_image(&path)?;
        net.config().check_input(image.shape()).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let pred = net.predict(&image)?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let target = out.join(format!("{stem}.png"));
        match net.config().head {
            Head::SoftmaxSegmentation => {
                let classes = net.config().out_channels as u32;
                let scale = (255 / (classes - 1).max(1)) as u8;
                save_labels(&target, &argmax_labels(&pred), scale)?;
                println!("{stem}\t{}", target.display());
            }
            Head::LinearDensity => {
                let values: Vec<f64> = pred.data().iter().map(|&v| v as f64).collect();
                let count: f64 = values.iter().sum();
                let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                // pixel = (value - offset) * scale, rounded to 16 bits
                let scale = if hi > lo { 65535.0 / (hi - lo) } else { 1.0 };
                let unit = pred.map(|v| ((v as f64 - lo) * scale / 65535.0) as f32);
                save_gray16(&target, &unit)?;
                let sidecar = format!("scale={scale:e}\noffset={lo:e}\ncount={count}\n");
                let side_path = out.join(format!("{stem}.txt"));
                std::fs::write(&side_path, sidecar).map_err(|e| usage(format!("{}: {e}", side_path.display())))?;
                println!("{stem}\t{count:.4}");
            }
        }
    }
    Ok(())
}

fn report_checks(label: &str, results: &[CheckResult]) -> Vec<String> {
    let mut failed = Vec::new();
    for r in results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{label:<10} {:<40} max_rel_err {:.3e}  {status}", r.name, r.max_relative_error);
        if !r.passed() {
            failed.push(format!("{label}:{}", r.name));
        }
    }
    failed
}

fn cmd_gradcheck(scope: Scope, seed: u64, fault: Option<&str>) -> Result<(), Failure> {
    let failed = match scope {
        Scope::Ops => report_checks("op", &op_suite(seed, fault)?),
        Scope::Network => {
            if fault.is_some() {
                return Err(usage("--inject-fault applies to --scope ops"));
            }
            let mut failed = report_checks("segment", &network_suite(seed, Head::SoftmaxSegmentation)?);
            failed.extend(report_checks("count", &network_suite(seed, Head::LinearDensity)?));
            failed
        }
    };
    if failed.is_empty() {
        println!("all gradient checks passed");
        Ok(())
    } else {
        Err(Failure { code: 1, message: format!("gradient check failed for {}", failed.join(", ")) })
    }
}

fn cmd_synth(task: TaskArg, n: usize, out: &Path, seed: u64, size: usize) -> Result<(), Failure> {
    let rng = RngState::new(seed).substream("synth");
    let (task, records, spec) = match task {
        TaskArg::Count => {
            let spec = CountingSynth { size, ..Default::default() };
            (Task::Count, synth_counting_set(n, &spec, &rng)?, SplitSpec::counting_protocol(n))
        }
        TaskArg::Segment => {
            let spec = SegmentationSynth { size, ..Default::default() };
            (Task::Segment, synth_segmentation_set(n, &spec, &rng)?, SplitSpec::segmentation_protocol(n))
        }
    };
    let data = Dataset { task, split: spec.apply(n)?, records };
    write_dataset(out, &data).map_err(|e| usage(format!("--out {}: {e}", out.display())))?;
    println!(
        "{n} {:?} images in {} (train {}, val {}, test {})",
        task,
        out.display(),
        data.split.train.len(),
        data.split.val.len(),
        data.split.test.len()
    );
    Ok(())
}

fn cmd_eval(checkpoint: &Path, dir: &Path, split: SplitArg, sigma: f64) -> Result<(), Failure> {
    let net: Network<f32> = load_checkpoint(checkpoint)?;
    let data = read_dataset(dir)?;
    let name = match split {
        SplitArg::Train => "train",
        SplitArg::Val => "val",
        SplitArg::Test => "test",
    };
    let part = data.part(name)?;
    if part.is_empty() {
        return Err(usage(format!("split {name} of {} is empty", dir.display())));
    }
    let set = samples(&part, sigma)?;
    match net.config().head {
        Head::SoftmaxSegmentation if data.task == Task::Segment => {
            let m = evaluate_segmentation(&net, &set)?;
            println!("pixel_accuracy {:.8}", m.pixel_accuracy);
            println!("mean_iou {:.8}", m.mean_iou);
        }
        Head::LinearDensity if data.task == Task::Count => {
            println!("mae {:.8}", evaluate_counting(&net, &set)?);
        }
        head => return Err(usage(format!("checkpoint head {head:?} does not fit a {:?} dataset", data.task))),
    }
    Ok(())
}
