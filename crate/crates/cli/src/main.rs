mod source;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use qaxnet::checkpoint;
use qaxnet::data::{subsample_imagenet300k, AugmentationPolicy};
use qaxnet::gradsuite;
use qaxnet::nn::Mode;
use qaxnet::recon::{color_reconstruction_experiment, ReconConfig};
use qaxnet::train::{evaluate, TrainConfig, Trainer};
use qaxnet::zoo::{build, multipliers_for_depth, ArchitectureSpec, Variant};
use qaxnet::{Error, Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "qaxnet",
    version,
    about = "Quaternion-enhanced axial-attention residual networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the layer and trainable-parameter counts of a model.
    CountParams {
        #[command(flatten)]
        arch: Arch,
        /// Count each quaternion bank as a layer.
        #[arg(long)]
        quat_layers: bool,
        /// Also print one row per stem, bank, block and head.
        #[arg(long)]
        summary: bool,
    },
    /// Train a model, writing history.csv and one checkpoint per epoch.
    Train {
        #[command(flatten)]
        arch: Arch,
        /// CIFAR-10 binary directory, manifest file, or synthetic[:k=v,...].
        #[arg(long)]
        data: String,
        /// `key = value` training configuration.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint instead of a fresh model.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Print the top-1 accuracy of a checkpoint on the evaluation split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
    },
    /// Run the float64 finite-difference gradient suite.
    GradCheck {
        /// One of: conv, bn, relu, softmax, pool, linear, quat_conv,
        /// quat_bank, axial_1d, axial_pair, bottleneck.
        #[arg(long)]
        module: Option<String>,
    },
    /// Time forward passes and report the attention-core MAC count.
    Bench {
        #[command(flatten)]
        arch: Arch,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 5)]
        repeat: usize,
    },
    /// Write the per-class subsampling manifest of an image tree.
    Subsample {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value_t = 300)]
        per_class: usize,
        /// Manifest path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grayscale-to-color reconstruction: quaternion vs real autoencoder.
    ReconDemo {
        #[arg(long, default_value = "synthetic:classes=10,per_class=125,size=16")]
        data: String,
        #[arg(long, default_value_t = ReconConfig::default().epochs)]
        epochs: usize,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
}

#[derive(Args, Clone)]
struct Arch {
    /// resnet, quat_resnet, axial or quat_axial.
    #[arg(long)]
    variant: Variant,
    /// 26, 35 or 50.
    #[arg(long, value_parser = parse_depth)]
    depth: usize,
    /// Channel multiplier; defaults to 0.5 for axial variants, 1 otherwise.
    #[arg(long)]
    width_scale: Option<f64>,
    /// Blocks per group, e.g. 1,1,1,1; overrides the depth's plan.
    #[arg(long, value_delimiter = ',')]
    multipliers: Option<Vec<usize>>,
    /// Input side length (count-params, bench); train takes it from the data.
    #[arg(long, default_value_t = 224)]
    size: usize,
    /// Output classes (count-params, bench); train takes it from the data.
    #[arg(long, default_value_t = 1000)]
    classes: usize,
}

fn parse_depth(s: &str) -> std::result::Result<usize, String> {
    let d: usize = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    multipliers_for_depth(d).map(|_| d).map_err(|e| e.to_string())
}

impl Arch {
    fn spec(&self) -> Result<ArchitectureSpec> {
        let mut spec = ArchitectureSpec::for_depth(self.variant, self.depth)?;
        if let Some(s) = self.width_scale {
            spec.width_scale = s;
        }
        if let Some(m) = &self.multipliers {
            if m.len() != 4 {
                return Err(Error::Config(format!("--multipliers needs 4 values, got {}", m.len())));
            }
            spec.multipliers = [m[0], m[1], m[2], m[3]];
        }
        spec.input = [3, self.size, self.size];
        spec.num_classes = self.classes;
        Ok(spec)
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{}: no such file", path.display())))
    }
}

fn count_params(arch: &Arch, quat_layers: bool, summary: bool) -> Result<()> {
    let spec = arch.spec()?;
    let model = build::<f32>(&spec, 0)?;
    println!("model: {}-{}", spec.variant, arch.depth);
    println!("layers: {}", model.count_layers(quat_layers));
    println!("params: {}", model.count_params());
    if summary {
        let rows = model.summarize();
        let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
        for r in rows {
            let shape = r.output.iter().map(ToString::to_string).collect::<Vec<_>>().join("x");
            println!("  {:width$}  {:>14}  {:>10}", r.name, shape, r.params);
        }
    }
    Ok(())
}

fn train(arch: &Arch, data: &str, config: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let splits = source::load(data)?;
    println!("data: {}", splits.description);
    let mut trainer = match resume {
        Some(path) => {
            require_file(path)?;
            let t = checkpoint::load::<f32>(path)?;
            println!("resuming at epoch {}", t.next_epoch);
            t
        }
        None => {
            let text = read(config)?;
            let config = qaxnet::kv::KeyValues::parse(&text, &config.display().to_string())?;
            let config = TrainConfig::from_kv(&config)?;
            let mut spec = arch.spec()?;
            spec.input = splits.train.shape();
            spec.num_classes = splits.train.class_count();
            let model = build::<f32>(&spec, config.seed)?;
            println!(
                "model: {}-{}, {} params",
                spec.variant,
                arch.depth,
                model.count_params()
            );
            Trainer::new(model, config)?
        }
    };
    trainer.run(&splits.train, Some(&splits.eval), Some(out))?;
    if let Some(last) = trainer.history.records.last() {
        println!(
            "final: epoch {} train_top1 {} val_top1 {}",
            last.epoch, last.train_top1, last.val_top1
        );
    }
    println!("history: {}", out.join("history.csv").display());
    Ok(())
}

fn eval(path: &Path, data: &str) -> Result<()> {
    require_file(path)?;
    let (mut model, stored) = checkpoint::load_model::<f32>(path)?;
    let splits = source::load(data)?;
    let policy = AugmentationPolicy {
        crop_padding: 0,
        flip_probability: 0.0,
        ..stored
    };
    println!("top1: {}", evaluate(&mut model, &splits.eval, &policy)?);
    Ok(())
}

/// Returns whether every case passed.
fn grad_check(module: Option<&str>) -> Result<bool> {
    let results = gradsuite::run(module)?;
    let mut worst = 0f64;
    for r in &results {
        worst = worst.max(r.report.max_rel_error);
        println!(
            "{:<11} {:<24} max_rel_error {:.3e} over {:>5} coords  {}",
            r.module,
            r.case,
            r.report.max_rel_error,
            r.report.coords_checked,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    println!(
        "max error: {worst:.3e} (tolerance {:.0e}); {failed} of {} cases failed",
        gradsuite::TOLERANCE,
        results.len()
    );
    Ok(failed == 0)
}

fn bench(arch: &Arch, batch: usize, repeat: usize) -> Result<()> {
    if batch == 0 || repeat == 0 {
        return Err(Error::Config("--batch and --repeat must be positive".into()));
    }
    let spec = arch.spec()?;
    let mut model = build::<f32>(&spec, 0)?;
    let [c, h, w] = spec.input;
    let x = Tensor::<f32>::randn(&[batch, c, h, w], 1.0, &mut ChaCha8Rng::seed_from_u64(0));
    let mut times = Vec::with_capacity(repeat);
    for _ in 0..repeat {
        let start = Instant::now();
        model.logits(&x, Mode::Eval)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mean = times.iter().sum::<f64>() / repeat as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (repeat.max(2) - 1) as f64;
    let mut runs = String::new();
    for t in &times {
        let _ = write!(runs, " {t:.1}");
    }
    println!("model: {}-{} input {c}x{h}x{w} batch {batch}", spec.variant, arch.depth);
    println!("runs_ms:{runs}");
    println!("mean_ms: {mean:.2}");
    println!("std_ms: {:.2}", var.sqrt());
    println!("axial_flops: {}", model.net.attention_flop_count()?);
    Ok(())
}

fn subsample(root: &Path, per_class: usize, out: Option<&Path>) -> Result<()> {
    let manifest = subsample_imagenet300k(root, per_class)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    match out {
        Some(path) => {
            std::fs::write(path, manifest.render())?;
            println!("{} entries written to {}", manifest.entries.len(), path.display());
        }
        None => print!("{}", manifest.render()),
    }
    Ok(())
}

fn recon_demo(data: &str, epochs: usize, seeds: u64) -> Result<()> {
    if seeds == 0 {
        return Err(Error::Config("--seeds must be positive".into()));
    }
    let splits = source::load(data)?;
    println!("data: {}", splits.description);
    let cfg = ReconConfig {
        epochs,
        ..ReconConfig::default()
    };
    let (mut q, mut r) = (Vec::new(), Vec::new());
    for seed in 0..seeds {
        let o = color_reconstruction_experiment(&splits.train, &cfg, seed)?;
        println!(
            "seed {seed}: quaternion {:.6} ({} params)  real {:.6} ({} params)  target variance {:.6}",
            o.quat_test_mse, o.quat_params, o.real_test_mse, o.real_params, o.target_variance
        );
        q.push(o.quat_test_mse);
        r.push(o.real_test_mse);
    }
    let (mq, mr) = (median(&mut q), median(&mut r));
    println!("median held-out MSE: quaternion {mq:.6}, real {mr:.6}");
    println!("lower: {}", if mq < mr { "quaternion" } else { "real" });
    Ok(())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::CountParams {
            arch,
            quat_layers,
            summary,
        } => count_params(&arch, quat_layers, summary)?,
        Command::Train {
            arch,
            data,
            config,
            out,
            resume,
        } => train(&arch, &data, &config, &out, resume.as_deref())?,
        Command::Eval { checkpoint, data } => eval(&checkpoint, &data)?,
        Command::GradCheck { module } => return grad_check(module.as_deref()),
        Command::Bench { arch, batch, repeat } => bench(&arch, batch, repeat)?,
        Command::Subsample { root, per_class, out } => subsample(&root, per_class, out.as_deref())?,
        Command::ReconDemo { data, epochs, seeds } => recon_demo(&data, epochs, seeds)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
