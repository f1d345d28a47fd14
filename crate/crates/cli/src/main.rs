use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hybrid_sysid::pipeline::Scheme;
use hybrid_sysid::store::{parse_architecture, Kind, Role, Task};
use hybrid_sysid_cli::{
    cmd_evaluate, cmd_fit_frf, cmd_generate, cmd_predict, cmd_study, cmd_train, init_threads, resolve_config, CliError,
    CliResult, GenerateArgs, Overrides, PlantChoice, StudyArgs,
};

#[derive(Parser)]
#[command(name = "hybrid-sysid", version, about = "Hybrid FRF + LSTM system identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlantArg {
    Rig,
    Linear,
}

#[derive(Clone)]
struct List(Vec<usize>);

#[derive(clap::Args)]
struct RunFlags {
    /// Dataset manifest (TSV).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Run configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// pure, hybrid1, hybrid2 or frf.
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<Scheme>,
    /// fp (drive to displacements and forces) or vs (displacements to forces).
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    /// Cells per block, comma separated, e.g. `23,23`.
    #[arg(long, value_parser = parse_arch)]
    arch: Option<List>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            config: self.config.clone(),
            manifest: self.manifest.clone(),
            seed: self.seed,
            scheme: self.scheme,
            task: self.task,
            arch: self.arch.as_ref().map(|a| a.0.clone()),
            epochs: self.epochs,
            out: self.out.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate drive/response files and merge them into <out>/manifest.tsv.
    Generate {
        /// noise, serviceload, sin or sweep.
        #[arg(long, value_parser = parse_kind)]
        kind: Kind,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "rig")]
        plant: PlantArg,
        /// Seconds per file.
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        #[arg(long, default_value_t = 200.0)]
        sample_rate: f64,
        /// Put every file in this role instead of the default split.
        #[arg(long, value_parser = parse_role)]
        role: Option<Role>,
        #[arg(long)]
        group: Option<String>,
        #[arg(long)]
        prefix: Option<String>,
    },
    /// Estimate the FRF from the training files and save an FRF-only bundle.
    FitFrf {
        #[command(flatten)]
        run: RunFlags,
    },
    /// Train a predictor and save its bundle.
    Train {
        #[command(flatten)]
        run: RunFlags,
        /// FRF bundle for hybrid schemes; estimated from the training files
        /// when absent.
        #[arg(long)]
        frf: Option<PathBuf>,
        /// Per-epoch loss CSV; defaults next to the bundle.
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// Predict output channels for CSV input files.
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "predictions")]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Evaluate a bundle on one role of a manifest.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_role)]
        role: Role,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Training-set size study on a linear plant.
    Study {
        /// FRF bundle used as the plant; the built-in 3x3 plant otherwise.
        #[arg(long)]
        plant: Option<PathBuf>,
        /// Training-set sizes, comma separated.
        #[arg(long, value_parser = parse_arch)]
        sizes: Option<List>,
        /// Architectures separated by `;`, e.g. `10;39;23,23;39,39`.
        #[arg(long)]
        archs: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        /// Seconds per generated file.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        validation_files: Option<usize>,
        #[arg(long, default_value = "study.csv")]
        out: PathBuf,
    },
}

fn parse_kind(s: &str) -> Result<Kind, String> {
    s.parse().map_err(|e: hybrid_sysid::Error| e.to_string())
}

fn parse_role(s: &str) -> Result<Role, String> {
    s.parse().map_err(|e: hybrid_sysid::Error| e.to_string())
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    s.parse().map_err(|e: hybrid_sysid::Error| e.to_string())
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: hybrid_sysid::Error| e.to_string())
}

fn parse_arch(s: &str) -> Result<List, String> {
    parse_architecture(s).map(List).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::Generate {
            kind,
            count,
            seed,
            out,
            plant,
            duration,
            sample_rate,
            role,
            group,
            prefix,
        } => {
            let path = cmd_generate(&GenerateArgs {
                kind,
                count,
                seed,
                out,
                plant: match plant {
                    PlantArg::Rig => PlantChoice::Rig,
                    PlantArg::Linear => PlantChoice::Linear,
                },
                duration,
                sample_rate,
                role,
                group,
                prefix,
            })?;
            println!("wrote {count} {kind} files, manifest {}", path.display());
        }
        Command::FitFrf { run } => {
            let cfg = resolve_config(&run.overrides())?;
            let path = cmd_fit_frf(&cfg)?;
            println!("saved FRF bundle {}", path.display());
        }
        Command::Train { run, frf, loss_log } => {
            let cfg = resolve_config(&run.overrides())?;
            let s = cmd_train(&cfg, frf.as_deref(), loss_log.as_deref())?;
            if cfg.scheme == Scheme::Frf {
                println!("saved FRF-only bundle {}", s.bundle.display());
            } else {
                println!("parameters: {}", s.parameters);
                println!("loss: {:.6} -> {:.6}", s.initial_loss, s.final_loss);
                println!("target/output variance: {:.4}", s.target_variance_ratio);
                println!("saved {} ({}), loss log {}", s.bundle.display(), cfg.scheme, s.loss_log.display());
            }
        }
        Command::Predict { bundle, out, inputs } => {
            for p in cmd_predict(&bundle, &inputs, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Evaluate { bundle, role, run } => {
            let cfg = resolve_config(&run.overrides())?;
            print!("{}", cmd_evaluate(&bundle, &cfg, role)?);
        }
        Command::Study {
            plant,
            sizes,
            archs,
            seed,
            epochs,
            duration,
            validation_files,
            out,
        } => {
            let architectures = match archs {
                Some(s) => s
                    .split(';')
                    .map(parse_architecture)
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| CliError::Usage(e.to_string()))?,
                None => Vec::new(),
            };
            let args = StudyArgs {
                plant,
                sizes: sizes.map(|s| s.0).unwrap_or_default(),
                architectures,
                seed,
                epochs,
                duration,
                validation_files,
                out,
            };
            print!("{}", cmd_study(&args, |line| eprintln!("{line}"))?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
