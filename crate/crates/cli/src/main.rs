use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use cgpnas::bench::{self, RunConfig, TemplateKind, ARCHIVE_FILE, OUTPUT_ROOT_ENV};
use cgpnas::moea::Scenario;

#[derive(Parser)]
#[command(name = "cgpnas", version, about = "Evolve small CNNs together with approximate multipliers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a search and write its artifacts.
    Run(RunArgs),
    /// Summarize the final front of an archive (file or run directory).
    Report { archive: PathBuf },
    /// Show a multiplier's metadata and recomputed error metrics.
    MultInfo {
        id: String,
        /// Library file; the built-in library otherwise.
        #[arg(long)]
        library: Option<PathBuf>,
    },
    /// Check a config file without running it.
    ValidateConfig {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; built-in defaults otherwise.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Suppress per-generation progress on stderr.
    #[arg(long, short)]
    quiet: bool,
}

/// Flags that take precedence over config-file values.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    multiplier: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// `desk`, `idx:DIR` or `cifar10:DIR`.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, value_parser = parse_template)]
    template: Option<TemplateKind>,
    #[arg(long)]
    library: Option<PathBuf>,
    /// Output directory; relative paths go under $CGPNAS_OUTPUT_DIR when set.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    pop_size: Option<usize>,
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long)]
    e_train: Option<usize>,
    #[arg(long)]
    e_retrain: Option<usize>,
    #[arg(long)]
    d_train: Option<usize>,
    #[arg(long)]
    d_retrain: Option<usize>,
    #[arg(long)]
    d_test: Option<usize>,
}

fn parse_template(s: &str) -> Result<TemplateKind, String> {
    match s {
        "standard" => Ok(TemplateKind::Standard),
        "desk" => Ok(TemplateKind::Desk),
        _ => Err(format!("unknown template {s:?} (expected standard or desk)")),
    }
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        fn set<T: Clone>(dst: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *dst = v.clone();
            }
        }
        set(&mut cfg.scenario, &self.scenario);
        if self.multiplier.is_some() {
            cfg.multiplier = self.multiplier.clone();
        }
        if self.library.is_some() {
            cfg.library = self.library.clone();
        }
        set(&mut cfg.seed, &self.seed);
        set(&mut cfg.workers, &self.workers);
        set(&mut cfg.dataset, &self.dataset);
        set(&mut cfg.template, &self.template);
        set(&mut cfg.output_dir, &self.output);
        let p = &mut cfg.parameters;
        set(&mut p.pop_size, &self.pop_size);
        set(&mut p.generations, &self.generations);
        set(&mut p.e_train, &self.e_train);
        set(&mut p.e_retrain, &self.e_retrain);
        set(&mut p.d_train, &self.d_train);
        set(&mut p.d_retrain, &self.d_retrain);
        set(&mut p.d_test, &self.d_test);
    }
}

fn load_config(path: Option<&PathBuf>, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg);
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = load_config(args.config.as_ref(), &args.overrides)?;
    let quiet = args.quiet;
    let outcome = bench::run(&cfg, &mut |s| {
        if !quiet {
            eprintln!(
                "generation {:>3}: {} evaluated, best f1 {:.4}, front size {}",
                s.generation, s.evaluated, s.best_f1, s.front_size
            );
        }
    })?;
    println!("{} evaluations, {} networks in the final front", outcome.archive.evaluations(), outcome.archive.final_front.len());
    println!("artifacts in {}", outcome.dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Report { archive } => {
            let path = if archive.is_dir() { archive.join(ARCHIVE_FILE) } else { archive };
            bench::report_file(&path).map(|text| print!("{text}")).map_err(Into::into)
        }
        Command::MultInfo { id, library } => {
            bench::mult_info(library.as_deref(), &id).map(|text| print!("{text}")).map_err(Into::into)
        }
        Command::ValidateConfig { config, overrides } => load_config(Some(&config), &overrides)
            .and_then(|cfg| {
                cfg.validate().with_context(|| format!("{} is invalid", config.display()))?;
                println!("{}: ok", config.display());
                println!("output directory: {}", cfg.resolved_output_dir().display());
                if std::env::var_os(OUTPUT_ROOT_ENV).is_some() {
                    println!("({OUTPUT_ROOT_ENV} is set)");
                }
                Ok(())
            }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
