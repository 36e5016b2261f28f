//! `tacgap`: dataset synthesis, training, adaptation, evaluation and the
//! sim-to-real classification experiment.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 data
//! integrity error, 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tacgap::classify::{render_table, sim2real_experiment, ClassifierConfig, TrainSource};
use tacgap::data::{generate_dataset, load_dataset, DatasetManifest, Split, SynthConfig};
use tacgap::error::{Error, Result};
use tacgap::eval::{adapt_all, evaluate_pairs};
use tacgap::image::TactileImage;
use tacgap::training::{load_generator, train_loop, RunOptions, TrainConfig};

#[derive(Parser)]
#[command(name = "tacgap", version, about = "Mask-constrained sim-to-real adaptation of tactile images")]
struct Cli {
    /// Validate inputs and print the plan without writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset tools.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train the cycle-consistent generators.
    Train(TrainArgs),
    /// Map simulated images to the real domain.
    Adapt(AdaptArgs),
    /// Score adapted images against paired real images.
    Eval(EvalArgs),
    /// Train classifiers on sim or adapted images and test them on real ones.
    Classify(ClassifyArgs),
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Generate a paired synthetic dataset and its manifest.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// TOML file with synthesis settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML training config. Without it the desk-scale preset is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Print losses every this many steps.
    #[arg(long, default_value_t = 100)]
    progress_every: usize,
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of simulated PNG images.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Sim,
    Adapted,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long, value_enum)]
    source: SourceArg,
    #[arg(long)]
    manifest: PathBuf,
    /// Trained checkpoint; required with `--source adapted`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// TOML classifier config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn deterministic() -> bool {
    std::env::var("TACGAP_DETERMINISTIC").is_ok_and(|v| v == "1")
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Records the command line and determinism flag next to the outputs.
fn write_run_record(out: &Path, command: &str, seed: Option<u64>) -> Result<()> {
    let record = serde_json::json!({
        "command": command,
        "args": std::env::args().collect::<Vec<_>>(),
        "seed": seed,
        "deterministic": deterministic(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    let path = out.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&record).expect("json")).map_err(|e| Error::io(&path, e))
}

fn synth(args: &SynthArgs, dry_run: bool) -> Result<()> {
    let mut cfg: SynthConfig = match &args.config {
        Some(p) => SynthConfig::from_toml(&read_text(p)?)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = args.classes {
        cfg.classes = v;
    }
    if let Some(v) = args.count {
        cfg.count = v;
    }
    if let Some(v) = args.resolution {
        cfg.resolution = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    if dry_run {
        println!(
            "would generate {} samples of {} classes at {}x{} into {}",
            cfg.count,
            cfg.classes,
            cfg.resolution,
            cfg.resolution,
            args.out.display()
        );
        return Ok(());
    }
    let manifest = generate_dataset(&cfg, &args.out)?;
    let cfg_path = args.out.join("synth.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    write_run_record(&args.out, "dataset synth", Some(cfg.seed))?;
    println!("wrote {} samples to {}", manifest.samples.len(), args.out.join("manifest.json").display());
    Ok(())
}

fn train(args: &TrainArgs, dry_run: bool) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::desk(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.max_steps {
        cfg.max_steps = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    cfg.validate()?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    manifest.validate()?;
    let [h, w] = manifest.resolution;
    if h != cfg.resolution() || w != cfg.resolution() {
        return Err(Error::Config(format!(
            "config expects {0}x{0} images but the manifest holds {h}x{w}",
            cfg.resolution()
        )));
    }
    if dry_run {
        let n = manifest.split(Split::Train).samples.len();
        println!("would train for {} steps on {n} samples into {}", cfg.total_steps(n), args.out.display());
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let opts = RunOptions { resume: args.resume.clone(), stop_after: None, progress_every: args.progress_every };
    let summary = train_loop(&manifest, &cfg, &args.out, &opts)?;
    write_run_record(&args.out, "train", Some(cfg.seed))?;
    println!(
        "trained {} steps (step {}/{}); checkpoint {}",
        summary.steps_run,
        summary.final_step,
        summary.total_steps,
        summary.checkpoint.display()
    );
    Ok(())
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

fn adapt(args: &AdaptArgs, dry_run: bool) -> Result<()> {
    let g = load_generator(&args.checkpoint)?;
    let files = png_files(&args.input)?;
    if dry_run {
        println!("would adapt {} images from {} into {}", files.len(), args.input.display(), args.out.display());
        return Ok(());
    }
    let images = files.iter().map(|p| TactileImage::load_png(p)).collect::<Result<Vec<_>>>()?;
    let adapted = adapt_all(&g, &images)?;
    create_dir(&args.out)?;
    for (path, img) in files.iter().zip(&adapted) {
        img.save_png(&args.out.join(path.file_name().expect("file name")))?;
    }
    write_run_record(&args.out, "adapt", None)?;
    println!("adapted {} images into {}", adapted.len(), args.out.display());
    Ok(())
}

fn eval(args: &EvalArgs, dry_run: bool) -> Result<()> {
    let g = load_generator(&args.checkpoint)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let manifest = match args.split {
        SplitArg::Train => manifest.split(Split::Train),
        SplitArg::Test => manifest.split(Split::Test),
        SplitArg::All => manifest,
    };
    if let Some(s) = manifest.samples.iter().find(|s| s.real.is_none()) {
        return Err(Error::Validation(format!("evaluation needs paired data; sample `{}` has no real image", s.id)));
    }
    if dry_run {
        println!("would evaluate {} samples into {}", manifest.samples.len(), args.out.display());
        return Ok(());
    }
    let pairs = load_dataset(&manifest)?;
    create_dir(&args.out)?;
    let report = evaluate_pairs(&g, &pairs, Some(&args.out.join("difference_maps")))?;
    report.save_json(&args.out.join("report.json"))?;
    report.save_csv(&args.out.join("per_sample.csv"))?;
    write_run_record(&args.out, "eval", None)?;
    match &report.aggregate {
        Some(a) => println!(
            "{} samples: SSIM {:.4} (sim {:.4}), MAE {:.2}% (sim {:.2}%)",
            a.samples, a.ssim, a.sim_ssim, a.mae_percent, a.sim_mae_percent
        ),
        None => println!("no samples to evaluate"),
    }
    Ok(())
}

fn classify(args: &ClassifyArgs, dry_run: bool) -> Result<()> {
    let mut cfg: ClassifierConfig = match &args.config {
        Some(p) => ClassifierConfig::from_toml(&read_text(p)?)?,
        None => ClassifierConfig::default(),
    };
    if let Some(v) = args.repeats {
        cfg.repeats = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    let source = match args.source {
        SourceArg::Sim => TrainSource::Sim,
        SourceArg::Adapted => TrainSource::Adapted,
    };
    let g = match (&args.checkpoint, source) {
        (Some(p), TrainSource::Adapted) => Some(load_generator(p)?),
        (None, TrainSource::Adapted) => return Err(Error::Config("`--source adapted` needs `--checkpoint`".into())),
        _ => None,
    };
    let manifest = DatasetManifest::load(&args.manifest)?;
    if dry_run {
        println!("would run {} repeats of {} epochs into {}", cfg.repeats, cfg.epochs, args.out.display());
        return Ok(());
    }
    let result = sim2real_experiment(source, &manifest, g.as_ref(), &cfg)?;
    create_dir(&args.out)?;
    result.save_json(&args.out.join("transfer.json"))?;
    let cfg_path = args.out.join("classifier.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    let mut csv = String::from("repeat,seed,source_accuracy,real_accuracy\n");
    for (i, r) in result.repeats.iter().enumerate() {
        csv.push_str(&format!("{i},{},{},{}\n", r.seed, r.source_accuracy, r.real_accuracy));
    }
    let csv_path = args.out.join("repeats.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    let name = match source {
        TrainSource::Sim => "Direct",
        TrainSource::Adapted => "Adapted",
    };
    let table = render_table(&[(name, &result)]);
    let table_path = args.out.join("table.txt");
    std::fs::write(&table_path, &table).map_err(|e| Error::io(&table_path, e))?;
    write_run_record(&args.out, "classify", Some(cfg.seed))?;
    print!("{table}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Dataset(DatasetCommand::Synth(a)) => synth(a, cli.dry_run),
        Command::Train(a) => train(a, cli.dry_run),
        Command::Adapt(a) => adapt(a, cli.dry_run),
        Command::Eval(a) => eval(a, cli.dry_run),
        Command::Classify(a) => classify(a, cli.dry_run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
