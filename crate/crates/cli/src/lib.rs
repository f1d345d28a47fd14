//! Subcommands of the `hybrid-sysid` binary.

use std::fmt;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use hybrid_sysid::lstm::TrainConfig;
use hybrid_sysid::metrics::{self, EvalFile, EvalSettings};
use hybrid_sysid::pipeline::{fit_predictor, FitSpec, HybridPredictor, Scheme};
use hybrid_sysid::seed::derive_seed;
use hybrid_sysid::signal::{fit_standardization, MultiChannelSignal};
use hybrid_sysid::spectral::estimate_frf;
use hybrid_sysid::store::{
    load_bundle, read_config, read_manifest, save_bundle, sha256_hex, validate_manifest, DatasetManifest, Kind,
    ModelBundle, Provenance, Role, RunConfig, Task,
};
use hybrid_sysid::study::{run_study, StudyConfig};
use hybrid_sysid::synth::{make_dataset, study_plant, DatasetSpec, NonlinearRigParams, Plant};
use hybrid_sysid::{Error, FrfModel};

/// Failure of a subcommand, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit code 2.
    Usage(String),
    /// Anything that went wrong while running; exit code 1.
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Settings shared by the training-related commands, before they are merged
/// into a [`RunConfig`].
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub seed: Option<u64>,
    pub scheme: Option<Scheme>,
    pub task: Option<Task>,
    pub arch: Option<Vec<usize>>,
    pub epochs: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Config file (or defaults) with the command-line flags applied on top.
pub fn resolve_config(o: &Overrides) -> CliResult<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => read_config(p).map_err(usage)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &o.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(s) = o.seed {
        cfg.train.seed = s;
    }
    if let Some(s) = o.scheme {
        cfg.scheme = s;
    }
    if let Some(t) = o.task {
        cfg.task = t;
    }
    if let Some(a) = &o.arch {
        cfg.architecture = a.clone();
    }
    if let Some(e) = o.epochs {
        cfg.train.epochs = e;
    }
    if let Some(p) = &o.out {
        cfg.out = Some(p.clone());
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

/// Reads and validates the manifest named by the config.
fn load_manifest(cfg: &RunConfig) -> CliResult<(DatasetManifest, String)> {
    let path = cfg.manifest.as_ref().ok_or_else(|| usage("--manifest is required"))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    let manifest = read_manifest(path)?;
    validate_manifest(&manifest)?;
    Ok((manifest, sha256_hex(text.as_bytes())))
}

/// Input and output channels of every file of `role`.
fn wired_files(
    manifest: &DatasetManifest,
    role: Role,
    inputs: &[String],
    outputs: &[String],
) -> CliResult<Vec<(String, String, MultiChannelSignal, MultiChannelSignal)>> {
    let mut out = Vec::new();
    for e in manifest.with_role(role) {
        let s = manifest.load(e)?;
        let x = s.select(inputs).map_err(|err| err.in_file(manifest.resolve(e)))?;
        let y = s.select(outputs).map_err(|err| err.in_file(manifest.resolve(e)))?;
        out.push((e.group.clone(), e.path.display().to_string(), x, y));
    }
    if out.is_empty() {
        return Err(CliError::Runtime(Error::Manifest(format!("manifest has no {role} files"))));
    }
    Ok(out)
}

fn provenance(cfg: &RunConfig, manifest_hash: String) -> Provenance {
    Provenance {
        seed: cfg.train.seed,
        config_hash: sha256_hex(cfg.to_text().as_bytes()),
        manifest_hash,
    }
}

fn out_path(cfg: &RunConfig, default: &str) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

/// Which plant `generate` pushes drives through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantChoice {
    /// The hysteretic three-axis rig.
    Rig,
    /// The linear displacement-to-force plant of the study.
    Linear,
}

#[derive(Debug, Clone)]
pub struct GenerateArgs {
    pub kind: Kind,
    pub count: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub plant: PlantChoice,
    pub duration: f64,
    pub sample_rate: f64,
    pub role: Option<Role>,
    pub group: Option<String>,
    pub prefix: Option<String>,
}

/// Writes `count` files into `out` and merges them into `out/manifest.tsv`.
/// Returns the manifest path.
pub fn cmd_generate(a: &GenerateArgs) -> CliResult<PathBuf> {
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let mut spec = DatasetSpec::new(a.kind, a.count, a.seed);
    spec.noise.duration = a.duration;
    spec.noise.sample_rate = a.sample_rate;
    spec.role = a.role;
    spec.group = a.group.clone();
    spec.prefix = a.prefix.clone();
    spec.noise.validate().map_err(usage)?;
    let plant = match a.plant {
        PlantChoice::Rig => Plant::Rig(NonlinearRigParams::moderate()),
        PlantChoice::Linear => Plant::Lti(study_plant(a.sample_rate, (0.4 * a.sample_rate).min(80.0))?),
    };
    let fresh = make_dataset(&spec, &plant, &a.out)?;
    let path = a.out.join("manifest.tsv");
    let mut merged = if path.exists() {
        read_manifest(&path)?
    } else {
        DatasetManifest::default()
    };
    merged.entries.retain(|e| !fresh.entries.iter().any(|f| f.path == e.path));
    merged.entries.extend(fresh.entries);
    merged.base_dir = a.out.clone();
    validate_manifest(&merged)?;
    merged.write(&path)?;
    Ok(path)
}

fn fit_frf_from(cfg: &RunConfig, manifest: &DatasetManifest) -> CliResult<FrfModel> {
    let files = wired_files(manifest, Role::Train, &cfg.input_names(), &cfg.output_names())?;
    let (xs, ys): (Vec<_>, Vec<_>) = files.into_iter().map(|(_, _, x, y)| (x, y)).unzip();
    Ok(estimate_frf(&xs, &ys, cfg.segment_length, cfg.band_limit)?)
}

/// Estimates the FRF from the training files and saves an FRF-only bundle.
pub fn cmd_fit_frf(cfg: &RunConfig) -> CliResult<PathBuf> {
    let (manifest, hash) = load_manifest(cfg)?;
    let frf = fit_frf_from(cfg, &manifest)?;
    let bundle = ModelBundle {
        predictor: HybridPredictor::frf_only(frf, cfg.windowing)?,
        provenance: provenance(cfg, hash),
    };
    let out = out_path(cfg, "frf.bundle");
    save_bundle(&bundle, &out)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub bundle: PathBuf,
    pub loss_log: PathBuf,
    pub parameters: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Variance of the network targets relative to the variance of the raw
    /// outputs, averaged over channels.
    pub target_variance_ratio: f64,
}

/// Trains the configured scheme and saves the bundle. The per-epoch loss is
/// appended to `loss_log` as training goes, so a diverged run keeps its
/// history.
pub fn cmd_train(cfg: &RunConfig, frf_bundle: Option<&Path>, loss_log: Option<&Path>) -> CliResult<TrainSummary> {
    let (manifest, hash) = load_manifest(cfg)?;
    let (inputs, outputs) = (cfg.input_names(), cfg.output_names());
    let frf = if cfg.scheme.uses_frf() {
        Some(match frf_bundle {
            Some(p) => {
                let b = load_bundle(p)?;
                b.predictor
                    .frf
                    .ok_or_else(|| usage(format!("{} holds no FRF model", p.display())))?
            }
            None => fit_frf_from(cfg, &manifest)?,
        })
    } else {
        None
    };
    let out = out_path(cfg, "model.bundle");
    if cfg.scheme == Scheme::Frf {
        let bundle = ModelBundle {
            predictor: HybridPredictor::frf_only(frf.expect("frf scheme uses the FRF"), cfg.windowing)?,
            provenance: provenance(cfg, hash),
        };
        save_bundle(&bundle, &out)?;
        return Ok(TrainSummary {
            bundle: out,
            loss_log: PathBuf::new(),
            parameters: 0,
            initial_loss: f64::NAN,
            final_loss: f64::NAN,
            target_variance_ratio: f64::NAN,
        });
    }
    let files = wired_files(&manifest, Role::Train, &inputs, &outputs)?;
    let (xs, ys): (Vec<_>, Vec<_>) = files.into_iter().map(|(_, _, x, y)| (x, y)).unzip();

    let log_path = loss_log.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("loss.csv"));
    let mut log = File::create(&log_path).map_err(|e| Error::from(e).in_file(&log_path))?;
    writeln!(log, "epoch,loss").map_err(|e| Error::from(e).in_file(&log_path))?;

    let spec = FitSpec {
        scheme: cfg.scheme,
        frf: frf.as_ref(),
        windowing: cfg.windowing,
        architecture: cfg.architecture.clone(),
        input_names: inputs,
        output_names: outputs,
        train: TrainConfig {
            seed: derive_seed(cfg.train.seed, "train-shuffle", 0),
            ..cfg.train.clone()
        },
        init_seed: derive_seed(cfg.train.seed, "train-init", 0),
    };
    let (predictor, outcome) = fit_predictor(&spec, &xs, &ys, |s| {
        writeln!(log, "{},{:?}", s.epoch, s.loss)
            .and_then(|_| log.flush())
            .map_err(|e| Error::from(e).in_file(&log_path))
    })?;

    let raw = fit_standardization(&ys)?;
    let net = predictor.lstm.as_ref().expect("trained schemes carry a network");
    let target_variance_ratio = net
        .output_stats()
        .std()
        .iter()
        .zip(raw.std())
        .map(|(t, y)| (t * t) / (y * y))
        .sum::<f64>()
        / raw.len() as f64;
    let parameters = net.parameter_count();
    let bundle = ModelBundle {
        predictor,
        provenance: provenance(cfg, hash),
    };
    save_bundle(&bundle, &out)?;
    Ok(TrainSummary {
        bundle: out,
        loss_log: log_path,
        parameters,
        initial_loss: outcome.initial_loss,
        final_loss: outcome.loss_history.last().copied().unwrap_or(outcome.initial_loss),
        target_variance_ratio,
    })
}

/// Predicts every input file and writes `<stem>.pred.csv` into `out_dir`.
pub fn cmd_predict(bundle: &Path, inputs: &[PathBuf], out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(usage("no input files given"));
    }
    let b = load_bundle(bundle)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::from(e).in_file(out_dir))?;
    let mut written = Vec::new();
    for path in inputs {
        let x = MultiChannelSignal::read_csv(path)?;
        let y = b.predictor.predict(&x).map_err(|e| e.in_file(path))?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
        let dest = out_dir.join(format!("{stem}.pred.csv"));
        y.write_csv(&dest, &[format!("prediction of {}", path.display())])?;
        written.push(dest);
    }
    Ok(written)
}

/// Evaluates a bundle on every file of `role` and writes the report CSV.
/// Returns the report summary table.
pub fn cmd_evaluate(bundle: &Path, cfg: &RunConfig, role: Role) -> CliResult<String> {
    let (manifest, _) = load_manifest(cfg)?;
    let b = load_bundle(bundle)?;
    let files = wired_files(&manifest, role, &b.predictor.input_names, &b.predictor.output_names)?;
    let files: Vec<EvalFile> = files
        .into_iter()
        .map(|(group, name, input, target)| EvalFile {
            group,
            name,
            input,
            target,
        })
        .collect();
    let settings = EvalSettings {
        segment_length: cfg.segment_length,
        ..EvalSettings::default()
    };
    let report = metrics::evaluate(&b.predictor, &files, &settings)?;
    let out = out_path(cfg, "report.csv");
    hybrid_sysid::store::write_atomic(&out, report.to_csv_string().as_bytes())?;
    Ok(report.summary())
}

#[derive(Debug, Clone)]
pub struct StudyArgs {
    /// FRF bundle used as the ground-truth plant; the built-in linear plant
    /// when absent.
    pub plant: Option<PathBuf>,
    pub sizes: Vec<usize>,
    pub architectures: Vec<Vec<usize>>,
    pub seed: u64,
    pub epochs: Option<usize>,
    pub duration: Option<f64>,
    pub validation_files: Option<usize>,
    pub out: PathBuf,
}

/// Runs the training-set size study, writes its CSV and returns the table
/// with the best row (lowest validation RMS) marked.
pub fn cmd_study(a: &StudyArgs, mut progress: impl FnMut(&str)) -> CliResult<String> {
    let plant = match &a.plant {
        Some(p) => load_bundle(p)?
            .predictor
            .frf
            .ok_or_else(|| usage(format!("{} holds no FRF model", p.display())))?,
        None => study_plant(200.0, 80.0)?,
    };
    let mut cfg = StudyConfig::desk(plant.clone(), a.seed);
    cfg.noise.sample_rate = plant.sample_rate;
    if !a.sizes.is_empty() {
        cfg.sizes = a.sizes.clone();
    }
    if !a.architectures.is_empty() {
        cfg.architectures = a.architectures.clone();
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(d) = a.duration {
        cfg.noise.duration = d;
    }
    if let Some(v) = a.validation_files {
        cfg.validation_files = v;
    }
    cfg.train.validate().map_err(usage)?;
    cfg.noise.validate().map_err(usage)?;
    let report = run_study(&cfg, |r| {
        progress(&format!(
            "arch {:?} files {:>3}: rms {:.4} multirain {:.3}",
            r.architecture, r.files, r.rms, r.multirain
        ))
    })?;
    hybrid_sysid::store::write_atomic(&a.out, report.to_csv_string().as_bytes())?;
    let best = report
        .rows
        .iter()
        .filter(|r| r.rms.is_finite())
        .min_by(|x, y| x.rms.total_cmp(&y.rms));
    let mut table = report.to_csv_string();
    if let Some(b) = best {
        table.push_str(&format!(
            "best by validation rms: arch {:?} ({} parameters) with {} files, rms {:.4}\n",
            b.architecture, b.parameters, b.files, b.rms
        ));
    }
    Ok(table)
}

/// Caps the global thread pool from `HYBRID_SYSID_THREADS`, if set.
pub fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("HYBRID_SYSID_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("HYBRID_SYSID_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage(format!("cannot size thread pool: {e}")))
}
