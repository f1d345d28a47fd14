//! Training-set size study on an LTI plant.
//!
//! Noise files are pushed through a known FRF, networks are trained on
//! growing prefixes of the training files from one shared initialization per
//! architecture, and each is scored on an independent validation set.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fatigue::{self, WoehlerParams};
use crate::lstm::{parameter_count, TrainConfig};
use crate::metrics;
use crate::pipeline::{fit_predictor, FitSpec, Scheme, WindowingConfig};
use crate::seed::derive_seed;
use crate::signal::MultiChannelSignal;
use crate::spectral::FrfModel;
use crate::synth::{generate_noise, NoiseSpec, Plant};

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub plant: FrfModel,
    pub sizes: Vec<usize>,
    pub architectures: Vec<Vec<usize>>,
    pub validation_files: usize,
    /// Duration, rate and spectral shape of every file; seed and channels
    /// are replaced per file.
    pub noise: NoiseSpec,
    pub windowing: WindowingConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub direction_count: usize,
    pub woehler: WoehlerParams,
}

impl StudyConfig {
    /// Desk-scale defaults: sizes 2/5/10/20, 4 validation files of 30 s at
    /// 200 Hz, learning rate 0.001, 100 epochs.
    pub fn desk(plant: FrfModel, seed: u64) -> Self {
        Self {
            plant,
            sizes: vec![2, 5, 10, 20],
            architectures: vec![vec![10], vec![39], vec![23, 23], vec![39, 39]],
            validation_files: 4,
            noise: NoiseSpec {
                duration: 30.0,
                sample_rate: 200.0,
                ..NoiseSpec::default()
            },
            windowing: WindowingConfig::default(),
            train: TrainConfig {
                learning_rate: 1e-3,
                epochs: 100,
                batch_size: 16,
                ..TrainConfig::default()
            },
            seed,
            direction_count: fatigue::DEFAULT_DIRECTION_COUNT,
            woehler: WoehlerParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub architecture: Vec<usize>,
    pub parameters: usize,
    pub files: usize,
    /// Validation RMS averaged over channels and files.
    pub rms: f64,
    /// Validation Multi-Rain ratio averaged over files.
    pub multirain: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
}

impl StudyReport {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("architecture,parameters,files,rms,multirain,final_loss\n");
        for r in &self.rows {
            let arch = r.architecture.iter().map(usize::to_string).collect::<Vec<_>>().join("-");
            let _ = writeln!(
                out,
                "{arch},{},{},{:?},{:?},{:?}",
                r.parameters, r.files, r.rms, r.multirain, r.final_loss
            );
        }
        out
    }

    pub fn rows_for<'a>(&'a self, architecture: &'a [usize]) -> impl Iterator<Item = &'a StudyRow> {
        self.rows.iter().filter(move |r| r.architecture == architecture)
    }
}

/// Ranks with ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = mean;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `None` for fewer than two points or constant
/// data.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

fn make_files(cfg: &StudyConfig, label: &str, count: usize) -> Result<Vec<(MultiChannelSignal, MultiChannelSignal)>> {
    let plant = Plant::Lti(cfg.plant.clone());
    (0..count)
        .into_par_iter()
        .map(|i| {
            let spec = NoiseSpec {
                seed: derive_seed(cfg.seed, label, i as u64),
                channels: cfg.plant.input_names().to_vec(),
                ..cfg.noise.clone()
            };
            let x = generate_noise(&spec)?;
            let y = plant.respond(&x)?;
            Ok((x, y))
        })
        .collect()
}

/// Runs the study. Rows are ordered by architecture, then size.
pub fn run_study(cfg: &StudyConfig, mut progress: impl FnMut(&StudyRow)) -> Result<StudyReport> {
    if cfg.sizes.is_empty() || cfg.architectures.is_empty() || cfg.validation_files == 0 {
        return Err(Error::InvalidArgument("study needs sizes, architectures and validation files".into()));
    }
    if cfg.sizes.contains(&0) {
        return Err(Error::InvalidArgument("training-set sizes must be positive".into()));
    }
    cfg.train.validate()?;
    cfg.windowing.validate()?;
    let max = *cfg.sizes.iter().max().expect("non-empty");
    let train = make_files(cfg, "study-train", max)?;
    let val = make_files(cfg, "study-validation", cfg.validation_files)?;
    let directions = fatigue::generate_directions(cfg.direction_count)?;
    let inputs = cfg.plant.input_names().to_vec();
    let outputs = cfg.plant.output_names().to_vec();
    let (n_in, n_out) = (inputs.len(), outputs.len());

    let mut rows = Vec::new();
    for (a, arch) in cfg.architectures.iter().enumerate() {
        let init_seed = derive_seed(cfg.seed, "study-init", a as u64);
        for &size in &cfg.sizes {
            let spec = FitSpec {
                scheme: Scheme::Pure,
                frf: None,
                windowing: cfg.windowing,
                architecture: arch.clone(),
                input_names: inputs.clone(),
                output_names: outputs.clone(),
                train: TrainConfig {
                    seed: derive_seed(cfg.seed, "study-shuffle", (a * 1_000_003 + size) as u64),
                    ..cfg.train.clone()
                },
                init_seed,
            };
            let (xs, ys): (Vec<_>, Vec<_>) = train[..size].iter().cloned().unzip();
            let (predictor, outcome) = fit_predictor(&spec, &xs, &ys, |_| Ok(()))?;
            let scores = val
                .par_iter()
                .map(|(x, y)| -> Result<(f64, f64)> {
                    let p = predictor.predict(x)?;
                    let rms = p
                        .channels()
                        .iter()
                        .zip(y.channels())
                        .map(|(a, b)| metrics::rms_error(a, b).unwrap_or(f64::NAN))
                        .sum::<f64>()
                        / n_out as f64;
                    let mut mr = Vec::new();
                    for triplet in outputs.chunks_exact(3) {
                        let v = fatigue::multirain_ratio(
                            &p.select(triplet)?,
                            &y.select(triplet)?,
                            &directions,
                            &cfg.woehler,
                        )?;
                        mr.push(v.unwrap_or(f64::NAN));
                    }
                    let mr = if mr.is_empty() { f64::NAN } else { mr.iter().sum::<f64>() / mr.len() as f64 };
                    Ok((rms, mr))
                })
                .collect::<Result<Vec<_>>>()?;
            let nv = scores.len() as f64;
            let row = StudyRow {
                architecture: arch.clone(),
                parameters: parameter_count(arch, n_in, n_out),
                files: size,
                rms: scores.iter().map(|s| s.0).sum::<f64>() / nv,
                multirain: scores.iter().map(|s| s.1).sum::<f64>() / nv,
                final_loss: outcome.loss_history.last().copied().unwrap_or(f64::NAN),
            };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(StudyReport { rows })
}
