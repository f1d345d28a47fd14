//! Error metrics and evaluation reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fatigue::{self, DirectionSet, WoehlerParams};
use crate::pipeline::HybridPredictor;
use crate::signal::MultiChannelSignal;
use crate::spectral::{self, SpectralWindow};

/// Normalized RMS error `sqrt(sum (y - y*)^2 / sum y^2)`.
///
/// `None` when the lengths differ or the target has no energy.
pub fn rms_error(prediction: &[f64], target: &[f64]) -> Option<f64> {
    if prediction.len() != target.len() {
        return None;
    }
    let energy: f64 = target.iter().map(|y| y * y).sum();
    if !(energy > 0.0) {
        return None;
    }
    let err: f64 = prediction.iter().zip(target).map(|(p, y)| (y - p) * (y - p)).sum();
    Some((err / energy).sqrt())
}

/// [`rms_error`] between the one-sided PSDs of prediction and target.
///
/// `Ok(None)` when the target PSD is identically zero.
pub fn psd_rms_error(
    prediction: &[f64],
    target: &[f64],
    sample_rate: f64,
    segment_length: usize,
) -> Result<Option<f64>> {
    if prediction.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} samples, target {}",
            prediction.len(),
            target.len()
        )));
    }
    let p = spectral::estimate_psd(prediction, sample_rate, segment_length, SpectralWindow::Hann)?;
    let t = spectral::estimate_psd(target, sample_rate, segment_length, SpectralWindow::Hann)?;
    Ok(rms_error(&p.real(), &t.real()))
}

/// Largest power of two not above `n`.
fn floor_pow2(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        1 << (usize::BITS - 1 - n.leading_zeros())
    }
}

/// Settings shared by all metrics of one evaluation.
#[derive(Debug, Clone)]
pub struct EvalSettings {
    /// PSD segment length; shortened to the largest power of two that fits
    /// files shorter than this.
    pub segment_length: usize,
    pub woehler: WoehlerParams,
    pub directions: DirectionSet,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            segment_length: spectral::DEFAULT_SEGMENT_LENGTH,
            woehler: WoehlerParams::default(),
            directions: fatigue::generate_directions(fatigue::DEFAULT_DIRECTION_COUNT)
                .expect("positive count"),
        }
    }
}

pub const METRIC_RMS: &str = "rms";
pub const METRIC_PSD_RMS: &str = "psd_rms";
pub const METRIC_DAMAGE: &str = "damage_ratio";
pub const METRIC_MULTIRAIN: &str = "multirain";
/// Channel label of per-file aggregates.
pub const ALL_CHANNELS: &str = "*";

/// One report value. `None` marks an undefined metric (zero-energy target).
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub group: String,
    pub file: String,
    pub channel: String,
    pub metric: String,
    pub value: Option<f64>,
}

/// Per-file, per-channel metric values.
///
/// For every file the report holds `rms`, `psd_rms` and `damage_ratio` per
/// predicted channel, their channel means under channel `*`, and one
/// `multirain` value per consecutive triplet of output channels (labelled
/// `a+b+c`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvaluationReport {
    pub fn value(&self, file: &str, channel: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.file == file && r.channel == channel && r.metric == metric)
            .and_then(|r| r.value)
    }

    /// Group names in order of first appearance.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.group) {
                out.push(r.group.clone());
            }
        }
        out
    }

    /// Unweighted mean over the files of `group` of the per-file channel
    /// mean of `metric`. For `multirain`, all triplets of all files are
    /// averaged.
    pub fn group_mean(&self, group: &str, metric: &str) -> Option<f64> {
        let per_file = metric != METRIC_MULTIRAIN;
        mean_defined(
            self.rows
                .iter()
                .filter(|r| r.group == group && r.metric == metric)
                .filter(|r| !per_file || r.channel == ALL_CHANNELS)
                .map(|r| r.value),
        )
    }

    /// Mean of `metric` over every file of the report.
    pub fn overall_mean(&self, metric: &str) -> Option<f64> {
        let per_file = metric != METRIC_MULTIRAIN;
        mean_defined(
            self.rows
                .iter()
                .filter(|r| r.metric == metric && (!per_file || r.channel == ALL_CHANNELS))
                .map(|r| r.value),
        )
    }

    /// CSV with columns `group,file,channel,metric,value`; undefined values
    /// are left empty.
    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["group", "file", "channel", "metric", "value"])
            .expect("in-memory write");
        for r in &self.rows {
            let v = r.value.map(|v| format!("{v:?}")).unwrap_or_default();
            w.write_record([&r.group, &r.file, &r.channel, &r.metric, &v])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    /// Plain-text table of group means.
    pub fn summary(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let mut out = format!(
            "{:<16} {:>6} {:>10} {:>10} {:>12} {:>10}\n",
            "group", "files", METRIC_RMS, METRIC_PSD_RMS, METRIC_DAMAGE, METRIC_MULTIRAIN
        );
        let mut files: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for r in &self.rows {
            let e = files.entry(r.group.as_str()).or_default();
            if !e.contains(&r.file.as_str()) {
                e.push(&r.file);
            }
        }
        for g in self.groups() {
            let _ = writeln!(
                out,
                "{:<16} {:>6} {:>10} {:>10} {:>12} {:>10}",
                g,
                files.get(g.as_str()).map_or(0, Vec::len),
                fmt(self.group_mean(&g, METRIC_RMS)),
                fmt(self.group_mean(&g, METRIC_PSD_RMS)),
                fmt(self.group_mean(&g, METRIC_DAMAGE)),
                fmt(self.group_mean(&g, METRIC_MULTIRAIN)),
            );
        }
        out
    }
}

/// All metrics of one predicted file.
pub fn evaluate_prediction(
    group: &str,
    file: &str,
    prediction: &MultiChannelSignal,
    target: &MultiChannelSignal,
    settings: &EvalSettings,
) -> Result<Vec<ReportRow>> {
    let target = target.select(prediction.names())?;
    if target.len() != prediction.len() {
        return Err(Error::ShapeMismatch(format!(
            "{file}: prediction has {} samples, target {}",
            prediction.len(),
            target.len()
        )));
    }
    let seg = settings.segment_length.min(floor_pow2(target.len()));
    let row = |channel: &str, metric: &str, value: Option<f64>| ReportRow {
        group: group.to_string(),
        file: file.to_string(),
        channel: channel.to_string(),
        metric: metric.to_string(),
        value,
    };
    let mut rows = Vec::new();
    let mut per_metric: [Vec<Option<f64>>; 3] = Default::default();
    for (name, (p, y)) in prediction
        .names()
        .iter()
        .zip(prediction.channels().iter().zip(target.channels()))
    {
        let values = [
            rms_error(p, y),
            psd_rms_error(p, y, target.sample_rate(), seg)?,
            fatigue::damage_ratio(p, y, &settings.woehler),
        ];
        for ((metric, v), acc) in [METRIC_RMS, METRIC_PSD_RMS, METRIC_DAMAGE]
            .into_iter()
            .zip(values)
            .zip(per_metric.iter_mut())
        {
            rows.push(row(name, metric, v));
            acc.push(v);
        }
    }
    for (metric, acc) in [METRIC_RMS, METRIC_PSD_RMS, METRIC_DAMAGE].into_iter().zip(per_metric) {
        rows.push(row(ALL_CHANNELS, metric, mean_defined(acc.into_iter())));
    }
    for triplet in prediction.names().chunks_exact(3) {
        let p = prediction.select(triplet)?;
        let y = target.select(triplet)?;
        let v = fatigue::multirain_ratio(&p, &y, &settings.directions, &settings.woehler)?;
        rows.push(row(&triplet.join("+"), METRIC_MULTIRAIN, v));
    }
    Ok(rows)
}

/// One file to evaluate.
#[derive(Debug, Clone)]
pub struct EvalFile {
    pub group: String,
    pub name: String,
    pub input: MultiChannelSignal,
    pub target: MultiChannelSignal,
}

/// Runs `predictor` on every file and collects all metrics.
pub fn evaluate(
    predictor: &HybridPredictor,
    files: &[EvalFile],
    settings: &EvalSettings,
) -> Result<EvaluationReport> {
    if files.is_empty() {
        return Err(Error::Empty("nothing to evaluate".into()));
    }
    let per_file: Vec<Vec<ReportRow>> = files
        .par_iter()
        .map(|f| {
            let prediction = predictor.predict(&f.input)?;
            evaluate_prediction(&f.group, &f.name, &prediction, &f.target, settings)
        })
        .collect::<Result<_>>()?;
    Ok(EvaluationReport {
        rows: per_file.into_iter().flatten().collect(),
    })
}
