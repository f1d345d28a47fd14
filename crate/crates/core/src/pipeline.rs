//! Windowed LSTM prediction and the FRF/LSTM predictor compositions.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lstm::{self, LstmNetwork, SequenceSet, TrainConfig, TrainOutcome};
use crate::signal::{
    check_windowing, fit_standardization, slice_clamped, subsequence_starts, MultiChannelSignal,
    StandardizationStats, Subsequence,
};
use crate::spectral::{frf_predict, FrfModel};

/// Subsequence length, overlap factor and recombination window exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowingConfig {
    pub length: usize,
    pub overlap: f64,
    pub window_power: u32,
}

impl Default for WindowingConfig {
    fn default() -> Self {
        Self {
            length: 256,
            overlap: 0.5,
            window_power: 10,
        }
    }
}

impl WindowingConfig {
    pub fn new(length: usize, overlap: f64, window_power: u32) -> Result<Self> {
        let cfg = Self {
            length,
            overlap,
            window_power,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_windowing(self.length, self.overlap)?;
        if self.window_power == 0 {
            return Err(Error::InvalidArgument("window power must be at least 1".into()));
        }
        Ok(())
    }

    /// Samples of constant extension in front of the signal.
    pub fn lead(&self) -> usize {
        self.length / 2
    }
}

/// `w(t) = (1 - ((2t - L) / L)^2)^power` for `t = 0..L`.
pub fn welch_window(length: usize, power: u32) -> Vec<f64> {
    let l = length as f64;
    (0..length)
        .map(|t| {
            let u = (2.0 * t as f64 - l) / l;
            (1.0 - u * u).powi(power as i32)
        })
        .collect()
}

/// Normalized recombination weights for subsequences starting at `starts`.
///
/// Entry `[i][t]` weighs sample `starts[i] + t` of subsequence `i`; weights
/// of samples outside `[0, total_len)` are zero and at every covered sample
/// the weights sum to one. Where all covering windows vanish (window edges
/// without a neighbor), the covering subsequences share equal weights.
pub fn recombination_weights(
    starts: &[isize],
    total_len: usize,
    config: &WindowingConfig,
) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let l = config.length;
    let window = welch_window(l, config.window_power);
    let mut sum = vec![0.0; total_len];
    let mut cover = vec![0usize; total_len];
    let in_range = |s: isize, t: usize| {
        let i = s + t as isize;
        (i >= 0 && (i as usize) < total_len).then_some(i as usize)
    };
    for &s in starts {
        for t in 0..l {
            if let Some(i) = in_range(s, t) {
                sum[i] += window[t];
                cover[i] += 1;
            }
        }
    }
    if let Some(i) = cover.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!("sample {i} is not covered by any subsequence")));
    }
    Ok(starts
        .iter()
        .map(|&s| {
            (0..l)
                .map(|t| match in_range(s, t) {
                    None => 0.0,
                    Some(i) if sum[i] > 0.0 => window[t] / sum[i],
                    Some(i) => 1.0 / cover[i] as f64,
                })
                .collect()
        })
        .collect())
}

/// Blends per-subsequence predictions into one signal of `total_len`
/// samples. Samples at negative time are discarded.
pub fn recombine(
    predictions: &[Subsequence],
    total_len: usize,
    config: &WindowingConfig,
    sample_rate: f64,
    names: Vec<String>,
) -> Result<MultiChannelSignal> {
    let n_ch = names.len();
    if let Some(p) = predictions
        .iter()
        .find(|p| p.data.len() != n_ch || p.data.iter().any(|c| c.len() != config.length))
    {
        return Err(Error::ShapeMismatch(format!(
            "subsequence at {} does not have {n_ch} channels of {} samples",
            p.start, config.length
        )));
    }
    let starts: Vec<isize> = predictions.iter().map(|p| p.start).collect();
    let weights = recombination_weights(&starts, total_len, config)?;
    let mut out = vec![vec![0.0; total_len]; n_ch];
    for (p, w) in predictions.iter().zip(&weights) {
        for t in 0..config.length {
            let i = p.start + t as isize;
            if i < 0 || i as usize >= total_len {
                continue;
            }
            for (ch, o) in out.iter_mut().enumerate() {
                o[i as usize] += w[t] * p.data[ch][t];
            }
        }
    }
    MultiChannelSignal::new(sample_rate, names, out)
}

/// How the FRF and the LSTM are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// FRF model alone.
    Frf,
    /// LSTM alone.
    Pure,
    /// FRF prediction plus an LSTM estimate of its residual.
    Hybrid1,
    /// LSTM fed with the inputs and the FRF prediction.
    Hybrid2,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Frf, Scheme::Pure, Scheme::Hybrid1, Scheme::Hybrid2];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Frf => "frf",
            Scheme::Pure => "pure",
            Scheme::Hybrid1 => "hybrid1",
            Scheme::Hybrid2 => "hybrid2",
        }
    }

    pub fn uses_frf(self) -> bool {
        !matches!(self, Scheme::Pure)
    }

    pub fn uses_lstm(self) -> bool {
        !matches!(self, Scheme::Frf)
    }

    /// LSTM input width for `n_in` inputs and `n_out` outputs.
    pub fn lstm_inputs(self, n_in: usize, n_out: usize) -> usize {
        match self {
            Scheme::Hybrid2 => n_in + n_out,
            _ => n_in,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme `{s}`")))
    }
}

/// Name of the LSTM input channel carrying the FRF prediction of `output`.
pub fn frf_feature_name(output: &str) -> String {
    format!("frf:{output}")
}

fn pad_front(x: &MultiChannelSignal, lead: usize) -> Result<MultiChannelSignal> {
    x.map_channels(|c| {
        let mut v = vec![c[0]; lead];
        v.extend_from_slice(c);
        v
    })
}

/// FRF prediction of `x` computed on `x` extended by `lead` copies of its
/// first sample. The result keeps the lead samples.
fn frf_on_padded(frf: &FrfModel, x: &MultiChannelSignal, lead: usize) -> Result<MultiChannelSignal> {
    let y = frf_predict(frf, &pad_front(x, lead)?)?;
    y.renamed(y.names().iter().map(|n| frf_feature_name(n)).collect())
}

fn drop_front(x: &MultiChannelSignal, lead: usize) -> Result<MultiChannelSignal> {
    x.map_channels(|c| c[lead..].to_vec())
}

/// Raw (unstandardized) LSTM inputs for `x`, with `lead` leading samples of
/// constant extension.
fn lstm_input(
    scheme: Scheme,
    frf: Option<&FrfModel>,
    x: &MultiChannelSignal,
    lead: usize,
) -> Result<MultiChannelSignal> {
    let padded = pad_front(x, lead)?;
    match scheme {
        Scheme::Hybrid2 => {
            let frf = frf.ok_or_else(|| Error::InvalidArgument("hybrid2 needs an FRF model".into()))?;
            padded.concat_channels(&frf_on_padded(frf, x, lead)?)
        }
        _ => Ok(padded),
    }
}

fn check_frf_wiring(frf: &FrfModel, inputs: &[String], outputs: &[String]) -> Result<()> {
    if frf.input_names() != inputs || frf.output_names() != outputs {
        return Err(Error::ChannelMismatch(format!(
            "FRF maps [{}] -> [{}], predictor wiring is [{}] -> [{}]",
            frf.input_names().join(", "),
            frf.output_names().join(", "),
            inputs.join(", "),
            outputs.join(", ")
        )));
    }
    Ok(())
}

/// Sequences per forward batch during prediction.
const PREDICT_BATCH: usize = 64;

/// Runs `net` over every subsequence of a standardized signal whose first
/// `lead` samples are constant extension, and recombines the standardized
/// outputs over the `n` real samples.
fn windowed_forward(
    net: &LstmNetwork,
    channels: &[Vec<f64>],
    lead: usize,
    n: usize,
    windowing: &WindowingConfig,
) -> Result<Vec<Vec<f64>>> {
    let l = windowing.length;
    let plan = subsequence_starts(n, l, windowing.overlap)?;
    let starts: Vec<isize> = plan.all_starts().collect();
    let (ni, no) = (net.n_inputs(), net.n_outputs());
    let chunks: Vec<&[isize]> = starts.chunks(PREDICT_BATCH).collect();
    let outputs: Vec<Vec<Subsequence>> = chunks
        .par_iter()
        .map(|chunk| -> Result<Vec<Subsequence>> {
            let batch = chunk.len();
            let mut x = vec![0.0; l * batch * ni];
            for (b, &s) in chunk.iter().enumerate() {
                for (i, c) in channels.iter().enumerate() {
                    let slice = slice_clamped(c, s + lead as isize, l);
                    for (t, v) in slice.into_iter().enumerate() {
                        x[(t * batch + b) * ni + i] = v;
                    }
                }
            }
            let (y, _) = net.forward_batch(&x, l, batch, false)?;
            Ok(chunk
                .iter()
                .enumerate()
                .map(|(b, &s)| Subsequence {
                    start: s,
                    data: (0..no)
                        .map(|o| (0..l).map(|t| y[(t * batch + b) * no + o]).collect())
                        .collect(),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let subs: Vec<Subsequence> = outputs.into_iter().flatten().collect();
    let names = (0..no).map(|o| format!("y{o}")).collect();
    Ok(recombine(&subs, n, windowing, 1.0, names)?.into_parts().2)
}

/// A trained predictor: scheme, models, windowing and channel wiring.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridPredictor {
    pub scheme: Scheme,
    pub frf: Option<FrfModel>,
    pub lstm: Option<LstmNetwork>,
    pub windowing: WindowingConfig,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
}

impl HybridPredictor {
    /// Validates and assembles a predictor.
    pub fn new(
        scheme: Scheme,
        frf: Option<FrfModel>,
        lstm: Option<LstmNetwork>,
        windowing: WindowingConfig,
        input_names: Vec<String>,
        output_names: Vec<String>,
    ) -> Result<Self> {
        windowing.validate()?;
        if input_names.is_empty() || output_names.is_empty() {
            return Err(Error::InvalidArgument("predictor needs input and output channels".into()));
        }
        match (&frf, scheme.uses_frf()) {
            (None, true) => {
                return Err(Error::InvalidArgument(format!("scheme {scheme} needs an FRF model")))
            }
            (Some(f), true) => check_frf_wiring(f, &input_names, &output_names)?,
            _ => {}
        }
        match (&lstm, scheme.uses_lstm()) {
            (None, true) => {
                return Err(Error::InvalidArgument(format!("scheme {scheme} needs an LSTM network")))
            }
            (Some(net), true) => {
                let width = scheme.lstm_inputs(input_names.len(), output_names.len());
                if net.n_inputs() != width || net.n_outputs() != output_names.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "scheme {scheme} needs a {width}->{} network, got {}->{}",
                        output_names.len(),
                        net.n_inputs(),
                        net.n_outputs()
                    )));
                }
            }
            _ => {}
        }
        Ok(Self {
            scheme,
            frf,
            lstm,
            windowing,
            input_names,
            output_names,
        })
    }

    /// FRF-only predictor.
    pub fn frf_only(frf: FrfModel, windowing: WindowingConfig) -> Result<Self> {
        let (i, o) = (frf.input_names().to_vec(), frf.output_names().to_vec());
        Self::new(Scheme::Frf, Some(frf), None, windowing, i, o)
    }

    /// Predicts the output channels for `input`. The result has as many
    /// samples as `input`.
    pub fn predict(&self, input: &MultiChannelSignal) -> Result<MultiChannelSignal> {
        let x = input.select(&self.input_names)?;
        let n = x.len();
        let frf_out = match (self.scheme, &self.frf) {
            (Scheme::Frf | Scheme::Hybrid1, Some(frf)) => Some(frf_predict(frf, &x)?),
            _ => None,
        };
        let lstm_out = match &self.lstm {
            Some(net) if self.scheme.uses_lstm() => {
                let lead = self.windowing.lead();
                let raw = lstm_input(self.scheme, self.frf.as_ref(), &x, lead)?;
                let stats = net.input_stats();
                let mut channels = raw.into_parts().2;
                for (i, c) in channels.iter_mut().enumerate() {
                    stats.forward_in_place(i, c);
                }
                let mut y = windowed_forward(net, &channels, lead, n, &self.windowing)?;
                for (o, c) in y.iter_mut().enumerate() {
                    net.output_stats().inverse_in_place(o, c);
                }
                Some(y)
            }
            _ => None,
        };
        let channels = match (frf_out, lstm_out) {
            (Some(f), None) => f.into_parts().2,
            (None, Some(l)) => l,
            (Some(f), Some(l)) => f
                .into_parts()
                .2
                .into_iter()
                .zip(l)
                .map(|(a, b)| a.iter().zip(&b).map(|(u, v)| u + v).collect())
                .collect(),
            (None, None) => unreachable!("validated at construction"),
        };
        MultiChannelSignal::new(x.sample_rate(), self.output_names.clone(), channels)
    }
}

/// Training sequences and the statistics used to standardize them.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub sequences: SequenceSet,
    pub input_stats: StandardizationStats,
    pub output_stats: StandardizationStats,
}

/// Assembles standardized training subsequences for `scheme`.
///
/// `pure` pairs inputs with outputs, `hybrid1` pairs inputs with the FRF
/// residual `y - FRF(x)`, and `hybrid2` pairs inputs plus FRF predictions
/// with outputs. Only interior subsequences are used.
pub fn build_training_set(
    scheme: Scheme,
    inputs: &[MultiChannelSignal],
    targets: &[MultiChannelSignal],
    frf: Option<&FrfModel>,
    windowing: &WindowingConfig,
    input_names: &[String],
    output_names: &[String],
) -> Result<TrainingSet> {
    windowing.validate()?;
    if !scheme.uses_lstm() {
        return Err(Error::InvalidArgument("the frf scheme has no LSTM to train".into()));
    }
    if inputs.is_empty() {
        return Err(Error::Empty("no training files".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} input files but {} target files",
            inputs.len(),
            targets.len()
        )));
    }
    let frf = match scheme {
        Scheme::Pure => None,
        _ => {
            let f = frf.ok_or_else(|| Error::InvalidArgument(format!("scheme {scheme} needs an FRF model")))?;
            check_frf_wiring(f, input_names, output_names)?;
            Some(f)
        }
    };
    let mut lstm_in = Vec::with_capacity(inputs.len());
    let mut lstm_out = Vec::with_capacity(inputs.len());
    for (x, y) in inputs.iter().zip(targets) {
        let x = x.select(input_names)?;
        let y = y.select(output_names)?;
        if x.len() != y.len() {
            return Err(Error::ShapeMismatch(format!(
                "paired files have {} and {} samples",
                x.len(),
                y.len()
            )));
        }
        let target = match scheme {
            Scheme::Hybrid1 => {
                let f = frf_predict(frf.expect("checked"), &x)?;
                let e = y
                    .channels()
                    .iter()
                    .zip(f.channels())
                    .map(|(a, b)| a.iter().zip(b).map(|(u, v)| u - v).collect())
                    .collect();
                y.with_channels(e)?
            }
            _ => y,
        };
        let lead = windowing.lead();
        let input = drop_front(&lstm_input(scheme, frf, &x, lead)?, lead)?;
        lstm_in.push(input);
        lstm_out.push(target);
    }
    let input_stats = fit_standardization(&lstm_in)?;
    let output_stats = match scheme {
        Scheme::Hybrid1 => zero_mean_stats(&lstm_out)?,
        _ => fit_standardization(&lstm_out)?,
    };

    let l = windowing.length;
    let (ni, no) = (input_stats.len(), output_stats.len());
    let mut sequences = SequenceSet::new(l, ni, no);
    for (x, y) in lstm_in.iter().zip(&lstm_out) {
        let mut xs = x.channels().to_vec();
        let mut ys = y.channels().to_vec();
        xs.iter_mut().enumerate().for_each(|(i, c)| input_stats.forward_in_place(i, c));
        ys.iter_mut().enumerate().for_each(|(o, c)| output_stats.forward_in_place(o, c));
        let plan = subsequence_starts(x.len(), l, windowing.overlap)?;
        for &s in &plan.interior {
            let row_major = |chs: &[Vec<f64>]| {
                let w = chs.len();
                let cols: Vec<Vec<f64>> = chs.iter().map(|c| slice_clamped(c, s as isize, l)).collect();
                let mut out = vec![0.0; l * w];
                for (i, c) in cols.iter().enumerate() {
                    for t in 0..l {
                        out[t * w + i] = c[t];
                    }
                }
                out
            };
            sequences.push(row_major(&xs), row_major(&ys))?;
        }
    }
    debug_assert_eq!(ni, scheme.lstm_inputs(input_names.len(), output_names.len()));
    debug_assert_eq!(no, output_names.len());
    Ok(TrainingSet {
        sequences,
        input_stats,
        output_stats,
    })
}

/// Statistics with mean zero and deviation equal to the RMS of each channel.
fn zero_mean_stats(signals: &[MultiChannelSignal]) -> Result<StandardizationStats> {
    let first = &signals[0];
    let total: usize = signals.iter().map(MultiChannelSignal::len).sum();
    let std = (0..first.n_channels())
        .map(|ch| {
            let ms = signals.iter().flat_map(|s| s.channel(ch)).map(|v| v * v).sum::<f64>() / total as f64;
            let rms = ms.sqrt();
            if rms > 0.0 && rms.is_finite() {
                rms
            } else {
                1.0
            }
        })
        .collect();
    StandardizationStats::new(first.names().to_vec(), vec![0.0; first.n_channels()], std)
}

/// Everything needed to fit the LSTM part of a predictor.
#[derive(Debug, Clone)]
pub struct FitSpec<'a> {
    pub scheme: Scheme,
    pub frf: Option<&'a FrfModel>,
    pub windowing: WindowingConfig,
    pub architecture: Vec<usize>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    pub train: TrainConfig,
    /// Seed of the initial network; equal seeds give equal initializations.
    pub init_seed: u64,
}

/// Builds the training set, trains a freshly initialized network and wraps
/// it in a predictor.
pub fn fit_predictor(
    spec: &FitSpec<'_>,
    inputs: &[MultiChannelSignal],
    targets: &[MultiChannelSignal],
    on_epoch: impl FnMut(lstm::EpochStats) -> Result<()>,
) -> Result<(HybridPredictor, TrainOutcome)> {
    let set = build_training_set(
        spec.scheme,
        inputs,
        targets,
        spec.frf,
        &spec.windowing,
        &spec.input_names,
        &spec.output_names,
    )?;
    let mut net = LstmNetwork::initialized(
        set.sequences.n_inputs,
        set.sequences.n_outputs,
        &spec.architecture,
        spec.init_seed,
    )?;
    net.set_stats(set.input_stats, set.output_stats)?;
    let outcome = lstm::train_with(&mut net, &set.sequences, &spec.train, on_epoch)?;
    let predictor = HybridPredictor::new(
        spec.scheme,
        spec.frf.filter(|_| spec.scheme.uses_frf()).cloned(),
        Some(net),
        spec.windowing,
        spec.input_names.clone(),
        spec.output_names.clone(),
    )?;
    Ok((predictor, outcome))
}
