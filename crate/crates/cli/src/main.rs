#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, LevelFilter};

use mvp_core::checkpoint::Checkpoint;
use mvp_core::data::{generate_synthetic, load_corpus, load_physio, physio::save_physio, write_corpus};
use mvp_core::dataset::DatasetTag;
use mvp_core::dsp::Channel;
use mvp_core::fsutil::{read_to_string, write_atomic};
use mvp_core::gradcheck::{op_suite, tiny_model_check};
use mvp_core::model::FusionMode;
use mvp_core::train::{cross_validate, evaluate_checkpoint, write_run, RunConfig, KEYS};
use mvp_core::{Error, Result};

/// Gradient checks must stay at or below this relative error.
const GRADCHECK_TOL: f64 = 1e-3;

#[derive(Parser, Debug)]
#[command(name = "mvp", version, about = "Multimodal emotion recognition from facial action units and physiological signals")]
#[command(after_help = keys_help())]
struct Cli {
    /// Base directory for every relative path.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Resample, notch- and band-filter every physiological recording in a directory.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "amigos")]
        dataset: DatasetTag,
    },
    /// Write a synthetic corpus with planted valence and arousal signals.
    Synth {
        #[arg(long, default_value_t = 20)]
        subjects: usize,
        #[arg(long, default_value_t = 16)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Cardiac channel kind recorded in the corpus (ecg or ppg).
        #[arg(long, default_value = "ecg")]
        cardiac: String,
    },
    /// Subject-independent cross-validation of the configured model.
    Train(RunArgs),
    /// Score a fold checkpoint on a corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validation with a single modality (or fused, for reference).
    Ablate {
        #[arg(long)]
        mode: FusionMode,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Finite-difference check of every op and of the tiny network.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Key-value config file (TOML syntax, dotted sections).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override one key, e.g. `--set model.n_layers=2`. Wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn keys_help() -> String {
    let mut s = String::from("Config keys (train, ablate):\n");
    for k in KEYS {
        s.push_str(&format!("  {:<30} {:<26} default {:<30} {}\n", k.key, k.kind, k.default, k.help));
    }
    s.push_str("\nEnvironment: MVP_THREADS caps the number of folds trained at once.\n");
    s.push_str("Exit codes: 0 ok, 1 other failure, 2 configuration, 3 I/O, 4 numeric.");
    s
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } => 3,
        Error::Numeric(_) => 4,
        _ => 1,
    }
}

fn resolve(workdir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        workdir.join(p)
    }
}

fn toml_string(p: &Path) -> String {
    format!("{:?}", p.display().to_string())
}

fn run_config(workdir: &Path, args: &RunArgs, mode: Option<FusionMode>) -> Result<RunConfig> {
    let text = match &args.config {
        Some(p) => read_to_string(&resolve(workdir, p))?,
        None => String::new(),
    };
    let mut overrides = args.overrides.clone();
    if let Some(c) = &args.corpus {
        overrides.push(format!("corpus={}", toml_string(c)));
    }
    if let Some(o) = &args.out {
        overrides.push(format!("out={}", toml_string(o)));
    }
    if let Some(m) = mode {
        overrides.push(format!("mode=\"{m}\""));
    }
    let mut cfg = RunConfig::parse(&text, &overrides)?;
    cfg.corpus = cfg.corpus.map(|c| resolve(workdir, &c));
    cfg.out = resolve(workdir, &cfg.out);
    Ok(cfg)
}

fn train(cfg: &RunConfig) -> Result<()> {
    let trials = load_corpus(cfg.require_corpus()?)?;
    info!("{} trials loaded", trials.len());
    let cv = cross_validate::<f64>(&trials, cfg)?;
    write_run(&cfg.out, cfg, &cv)?;
    for f in &cv.folds {
        for w in &f.report.warnings {
            eprintln!("warning: {w}");
        }
    }
    print!("{}", cv.summary.to_text());
    Ok(())
}

fn preprocess(input: &Path, out: &Path, dataset: DatasetTag) -> Result<()> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(input, err)))
        .collect::<Result<_>>()?;
    files.retain(|p| p.is_file() && p.extension().is_none_or(|e| e != "meta"));
    files.sort();
    for f in &files {
        let rec = load_physio(f)?.preprocess(dataset)?;
        save_physio(&out.join(f.file_name().expect("file has a name")), &rec)?;
    }
    println!("{} recordings written to {}", files.len(), out.display());
    Ok(())
}

fn gradcheck(seed: u64) -> Result<()> {
    let mut worst: f64 = 0.0;
    for (name, r) in op_suite(seed)? {
        println!("{name:<16} {:>6} coords  max rel err {:.3e}", r.coordinates, r.max_rel_err);
        worst = worst.max(r.max_rel_err);
    }
    let r = tiny_model_check(seed)?;
    println!("{:<16} {:>6} coords  max rel err {:.3e}", "tiny network", r.coordinates, r.max_rel_err);
    worst = worst.max(r.max_rel_err);
    println!("max relative error {worst:.3e}");
    if worst > GRADCHECK_TOL {
        return Err(Error::Numeric(format!("max relative error {worst:.3e} exceeds {GRADCHECK_TOL:e}")));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let wd = cli.workdir.as_path();
    match cli.command {
        Command::Preprocess { input, out, dataset } => preprocess(&resolve(wd, &input), &resolve(wd, &out), dataset),
        Command::Synth { subjects, trials, seed, out, cardiac } => {
            let cardiac = Channel::parse(&cardiac)
                .filter(|c| c.is_cardiac())
                .ok_or_else(|| Error::Config(format!("--cardiac must be ecg or ppg, got '{cardiac}'")))?;
            let corpus = generate_synthetic(subjects, trials, seed)?;
            let manifest = write_corpus(&resolve(wd, &out), &corpus, cardiac)?;
            println!("{}", manifest.display());
            Ok(())
        }
        Command::Train(args) => train(&run_config(wd, &args, None)?),
        Command::Ablate { mode, run } => train(&run_config(wd, &run, Some(mode))?),
        Command::Eval { checkpoint, corpus, out } => {
            let ck = Checkpoint::load(&resolve(wd, &checkpoint))?;
            let trials = load_corpus(&resolve(wd, &corpus))?;
            let report = evaluate_checkpoint(&ck, &trials)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            if let Some(o) = out {
                write_atomic(&resolve(wd, &o), json.as_bytes())?;
            }
            println!("{json}");
            Ok(())
        }
        Command::Gradcheck { seed } => gradcheck(seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
