//! Multichannel time series, standardization, FFT low-pass filtering and
//! subsequence extraction.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Upper bound on the configurable subsequence length.
pub const MAX_SUBSEQUENCE_LENGTH: usize = 1 << 16;

/// Relative tolerance on the sampling step of CSV time columns.
const TIME_STEP_TOLERANCE: f64 = 1e-9;

/// Comment key carrying the sample rate in CSV headers.
const SAMPLE_RATE_KEY: &str = "sample_rate_hz";

/// Uniformly sampled multichannel time series.
///
/// All channels share one length (at least one sample) and one sample rate,
/// and channel names are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelSignal {
    sample_rate: f64,
    names: Vec<String>,
    channels: Vec<Vec<f64>>,
}

impl MultiChannelSignal {
    pub fn new(sample_rate: f64, names: Vec<String>, channels: Vec<Vec<f64>>) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if names.len() != channels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} channel names for {} channels",
                names.len(),
                channels.len()
            )));
        }
        if channels.is_empty() {
            return Err(Error::Empty("signal has no channels".into()));
        }
        let len = channels[0].len();
        if len == 0 {
            return Err(Error::Empty("signal has no samples".into()));
        }
        if let Some((name, ch)) = names.iter().zip(&channels).find(|(_, c)| c.len() != len) {
            return Err(Error::ShapeMismatch(format!(
                "channel `{name}` has {} samples, expected {len}",
                ch.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::ChannelMismatch(format!("duplicate channel `{name}`")));
            }
        }
        Ok(Self {
            sample_rate,
            names,
            channels,
        })
    }

    /// Builds a signal from string-like names.
    pub fn from_named<S: Into<String>>(
        sample_rate: f64,
        channels: impl IntoIterator<Item = (S, Vec<f64>)>,
    ) -> Result<Self> {
        let (names, data): (Vec<String>, Vec<Vec<f64>>) =
            channels.into_iter().map(|(n, c)| (n.into(), c)).unzip();
        Self::new(sample_rate, names, data)
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Number of samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn channel_by_name(&self, name: &str) -> Option<&[f64]> {
        self.index_of(name).map(|i| self.channels[i].as_slice())
    }

    pub fn into_parts(self) -> (f64, Vec<String>, Vec<Vec<f64>>) {
        (self.sample_rate, self.names, self.channels)
    }

    /// Sub-signal with the named channels, in the requested order.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        let mut out_names = Vec::with_capacity(names.len());
        let mut out = Vec::with_capacity(names.len());
        for name in names {
            let name = name.as_ref();
            let idx = self.index_of(name).ok_or_else(|| {
                Error::ChannelMismatch(format!(
                    "channel `{name}` not present (have {})",
                    self.names.join(", ")
                ))
            })?;
            out_names.push(name.to_string());
            out.push(self.channels[idx].clone());
        }
        Self::new(self.sample_rate, out_names, out)
    }

    /// Appends the channels of `other` after those of `self`.
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        if other.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot join signals of {} and {} samples",
                self.len(),
                other.len()
            )));
        }
        if other.sample_rate != self.sample_rate {
            return Err(Error::InvalidArgument(format!(
                "cannot join signals sampled at {} Hz and {} Hz",
                self.sample_rate, other.sample_rate
            )));
        }
        let mut names = self.names.clone();
        names.extend(other.names.iter().cloned());
        let mut channels = self.channels.clone();
        channels.extend(other.channels.iter().cloned());
        Self::new(self.sample_rate, names, channels)
    }

    /// Same channel layout with new sample data.
    pub fn with_channels(&self, channels: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(self.sample_rate, self.names.clone(), channels)
    }

    /// Renames all channels, keeping data and order.
    pub fn renamed(&self, names: Vec<String>) -> Result<Self> {
        Self::new(self.sample_rate, names, self.channels.clone())
    }

    /// Applies `f` to every channel.
    pub fn map_channels(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        self.with_channels(self.channels.iter().map(|c| f(c)).collect())
    }

    /// Time of sample `i`, starting at zero.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.sample_rate
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::parse_csv(&text).map_err(|e| e.in_file(path))
    }

    /// Parses the CSV interchange format.
    ///
    /// Leading `#` lines are comments; a `# sample_rate_hz: <value>` comment
    /// pins the sample rate, otherwise it is derived from the time column.
    /// The header row starts with `time` followed by one column per channel.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut declared_rate = None;
        let mut body_start = 0;
        let mut line_no = 0;
        for line in text.split_inclusive('\n') {
            let trimmed = line.trim();
            if !trimmed.starts_with('#') && !trimmed.is_empty() {
                break;
            }
            line_no += 1;
            body_start += line.len();
            if let Some((key, value)) = trimmed.trim_start_matches('#').split_once(':') {
                if key.trim() == SAMPLE_RATE_KEY {
                    let rate: f64 = value
                        .trim()
                        .parse()
                        .map_err(|_| Error::parse(line_no, "bad sample rate"))?;
                    declared_rate = Some(rate);
                }
            }
        }

        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text[body_start..].as_bytes());
        let header_line = line_no + 1;
        let headers = reader
            .headers()
            .map_err(|e| Error::parse(header_line, e.to_string()))?
            .clone();
        if headers.len() < 2 || &headers[0] != "time" {
            return Err(Error::parse(
                header_line,
                "header must be `time` followed by at least one channel",
            ));
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        if let Some(empty) = names.iter().position(String::is_empty) {
            return Err(Error::parse(header_line, format!("column {} has no name", empty + 2)));
        }

        let mut times = Vec::new();
        let mut channels = vec![Vec::new(); names.len()];
        for (row, record) in reader.records().enumerate() {
            let line = header_line + row + 1;
            let record = record.map_err(|e| Error::parse(line, e.to_string()))?;
            if record.len() != headers.len() {
                return Err(Error::parse(line, "wrong number of fields"));
            }
            for (col, field) in record.iter().enumerate() {
                let value: f64 = field
                    .parse()
                    .map_err(|_| Error::parse(line, format!("`{field}` is not a number")))?;
                if !value.is_finite() {
                    return Err(Error::parse(line, "non-finite value"));
                }
                if col == 0 {
                    times.push(value);
                } else {
                    channels[col - 1].push(value);
                }
            }
        }
        if times.is_empty() {
            return Err(Error::parse(header_line, "no data rows"));
        }

        let derived_rate = if times.len() >= 2 {
            let n = times.len();
            let mean_step = (times[n - 1] - times[0]) / (n - 1) as f64;
            if !(mean_step > 0.0) {
                return Err(Error::parse(header_line + 1, "time must be strictly increasing"));
            }
            for (i, w) in times.windows(2).enumerate() {
                let step = w[1] - w[0];
                if !(step > 0.0) {
                    return Err(Error::parse(
                        header_line + i + 2,
                        "time must be strictly increasing",
                    ));
                }
                if (step - mean_step).abs() > TIME_STEP_TOLERANCE * mean_step {
                    return Err(Error::parse(header_line + i + 2, "non-uniform time step"));
                }
            }
            Some(1.0 / mean_step)
        } else {
            None
        };
        let sample_rate = match (declared_rate, derived_rate) {
            (Some(d), Some(t)) => {
                if (d - t).abs() > 1e-6 * d {
                    return Err(Error::parse(
                        header_line,
                        format!("declared sample rate {d} Hz disagrees with time column ({t} Hz)"),
                    ));
                }
                d
            }
            (Some(d), None) => d,
            (None, Some(t)) => t,
            (None, None) => {
                return Err(Error::parse(
                    header_line,
                    "a single-row file needs a sample_rate_hz comment",
                ))
            }
        };
        Self::new(sample_rate, names, channels).map_err(|e| Error::parse(header_line, e.to_string()))
    }

    /// Serializes to the CSV interchange format. `comments` are emitted as
    /// `# ` lines after the sample rate comment.
    pub fn to_csv_string(&self, comments: &[String]) -> String {
        let mut out = String::with_capacity(self.len() * (self.n_channels() + 1) * 20);
        let _ = writeln!(out, "# {SAMPLE_RATE_KEY}: {:?}", self.sample_rate);
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str("time");
        for name in &self.names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for i in 0..self.len() {
            let _ = write!(out, "{:?}", self.time(i));
            for ch in &self.channels {
                let _ = write!(out, ",{:?}", ch[i]);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
        crate::store::write_atomic(path.as_ref(), self.to_csv_string(comments).as_bytes())
    }
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationStats {
    names: Vec<String>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

/// Direction of [`apply_standardization`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `(x - mean) / std`
    Forward,
    /// `x * std + mean`
    Inverse,
}

impl StandardizationStats {
    pub fn new(names: Vec<String>, mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if names.len() != mean.len() || names.len() != std.len() {
            return Err(Error::ShapeMismatch("stats vectors differ in length".into()));
        }
        if let Some(s) = std.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidArgument(format!("standard deviation {s} is not positive")));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("non-finite mean".into()));
        }
        Ok(Self { names, mean, std })
    }

    /// Zero mean, unit deviation for every channel.
    pub fn identity(names: Vec<String>) -> Self {
        let n = names.len();
        Self {
            names,
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    fn lookup(&self, name: &str) -> Result<(f64, f64)> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| (self.mean[i], self.std[i]))
            .ok_or_else(|| Error::ChannelMismatch(format!("no statistics for channel `{name}`")))
    }

    /// Standardizes one channel in place.
    pub fn forward_in_place(&self, index: usize, data: &mut [f64]) {
        let (m, s) = (self.mean[index], self.std[index]);
        data.iter_mut().for_each(|x| *x = (*x - m) / s);
    }

    /// Undoes standardization of one channel in place.
    pub fn inverse_in_place(&self, index: usize, data: &mut [f64]) {
        let (m, s) = (self.mean[index], self.std[index]);
        data.iter_mut().for_each(|x| *x = *x * s + m);
    }
}

fn degenerate_std(std: f64, mean: f64) -> bool {
    std == 0.0 || std <= 8.0 * f64::EPSILON * mean.abs()
}

/// Fits per-channel statistics over the concatenation of all `signals`.
///
/// Uses the population (1/N) variance; zero-variance channels get a
/// deviation of one so that standardization only removes the mean.
pub fn fit_standardization(signals: &[MultiChannelSignal]) -> Result<StandardizationStats> {
    let first = signals
        .first()
        .ok_or_else(|| Error::Empty("no signals to fit standardization on".into()))?;
    for s in &signals[1..] {
        if s.names() != first.names() {
            return Err(Error::ChannelMismatch(format!(
                "channel sets differ: [{}] vs [{}]",
                first.names().join(", "),
                s.names().join(", ")
            )));
        }
    }
    let total: usize = signals.iter().map(MultiChannelSignal::len).sum();
    let n = total as f64;
    let mut mean = Vec::with_capacity(first.n_channels());
    let mut std = Vec::with_capacity(first.n_channels());
    for ch in 0..first.n_channels() {
        let m = signals.iter().flat_map(|s| s.channel(ch)).sum::<f64>() / n;
        let var = signals
            .iter()
            .flat_map(|s| s.channel(ch))
            .map(|x| (x - m) * (x - m))
            .sum::<f64>()
            / n;
        let sd = var.sqrt();
        mean.push(m);
        std.push(if degenerate_std(sd, m) { 1.0 } else { sd });
    }
    StandardizationStats::new(first.names().to_vec(), mean, std)
}

/// Standardizes (or un-standardizes) every channel of `signal`, matching
/// statistics to channels by name.
pub fn apply_standardization(
    signal: &MultiChannelSignal,
    stats: &StandardizationStats,
    direction: Direction,
) -> Result<MultiChannelSignal> {
    let mut channels = Vec::with_capacity(signal.n_channels());
    for (name, data) in signal.names().iter().zip(signal.channels()) {
        let (m, s) = stats.lookup(name)?;
        channels.push(match direction {
            Direction::Forward => data.iter().map(|x| (x - m) / s).collect(),
            Direction::Inverse => data.iter().map(|x| x * s + m).collect(),
        });
    }
    signal.with_channels(channels)
}

/// Zeroes every FFT bin above `cutoff` Hz (no transition band).
pub fn lowpass_fft(signal: &MultiChannelSignal, cutoff: f64) -> Result<MultiChannelSignal> {
    let nyquist = signal.sample_rate() / 2.0;
    if !(cutoff > 0.0 && cutoff < nyquist) {
        return Err(Error::InvalidArgument(format!(
            "cutoff {cutoff} Hz outside (0, {nyquist}) Hz"
        )));
    }
    let n = signal.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let df = signal.sample_rate() / n as f64;
    signal.map_channels(|data| {
        let mut buf: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        fwd.process(&mut buf);
        for (j, bin) in buf.iter_mut().enumerate() {
            let k = j.min(n - j);
            if k as f64 * df > cutoff {
                *bin = Complex64::new(0.0, 0.0);
            }
        }
        inv.process(&mut buf);
        buf.iter().map(|c| c.re / n as f64).collect()
    })
}

/// Fixed-length slice of a signal. `start` may be negative for the boundary
/// subsequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsequence {
    pub start: isize,
    /// Per-channel samples, each of the configured length.
    pub data: Vec<Vec<f64>>,
}

impl Subsequence {
    pub fn len(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Start positions of the subsequences covering a signal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsequencePlan {
    pub length: usize,
    /// Interior starts, ascending, all within `[0, total_len)`.
    pub interior: Vec<usize>,
    /// Start of the boundary subsequence, `-(length / 2)`.
    pub boundary: isize,
}

impl SubsequencePlan {
    /// Boundary start followed by the interior starts.
    pub fn all_starts(&self) -> impl Iterator<Item = isize> + '_ {
        std::iter::once(self.boundary).chain(self.interior.iter().map(|&s| s as isize))
    }
}

/// Stride in samples for subsequence length `length` and overlap factor
/// `overlap`.
pub fn subsequence_stride(length: usize, overlap: f64) -> usize {
    ((overlap * length as f64).round() as usize).max(1)
}

pub(crate) fn check_windowing(length: usize, overlap: f64) -> Result<()> {
    if length < 2 {
        return Err(Error::InvalidArgument(format!("subsequence length {length} < 2")));
    }
    if length > MAX_SUBSEQUENCE_LENGTH {
        return Err(Error::InvalidArgument(format!(
            "subsequence length {length} exceeds the limit of {MAX_SUBSEQUENCE_LENGTH}"
        )));
    }
    if !(overlap > 0.0 && overlap <= 1.0) {
        return Err(Error::InvalidArgument(format!("overlap factor {overlap} outside (0, 1]")));
    }
    Ok(())
}

/// Computes where subsequences start for a signal of `total_len` samples.
///
/// Starts advance by `round(overlap * length)`; when the stride overshoots the
/// end, one more subsequence is anchored flush with the last sample.
pub fn subsequence_starts(total_len: usize, length: usize, overlap: f64) -> Result<SubsequencePlan> {
    check_windowing(length, overlap)?;
    if total_len == 0 {
        return Err(Error::Empty("signal has no samples".into()));
    }
    let stride = subsequence_stride(length, overlap);
    let mut interior = Vec::new();
    if total_len <= length {
        interior.push(0);
    } else {
        let mut s = 0;
        while s + length <= total_len {
            interior.push(s);
            s += stride;
        }
        let last = *interior.last().expect("at least one start");
        if last + length < total_len {
            interior.push(total_len - length);
        }
    }
    Ok(SubsequencePlan {
        length,
        interior,
        boundary: -((length / 2) as isize),
    })
}

/// Copies `length` samples starting at `start`, clamping out-of-range
/// indices to the first and last sample.
pub(crate) fn slice_clamped(data: &[f64], start: isize, length: usize) -> Vec<f64> {
    let last = data.len() as isize - 1;
    (0..length as isize)
        .map(|i| data[(start + i).clamp(0, last) as usize])
        .collect()
}

/// Extracts the boundary subsequence followed by all interior subsequences.
///
/// Samples before the start of the signal take the value of the first sample;
/// samples past the end (only possible for signals shorter than the
/// subsequence) take the value of the last one.
pub fn extract_subsequences(
    signal: &MultiChannelSignal,
    length: usize,
    overlap: f64,
) -> Result<Vec<Subsequence>> {
    let plan = subsequence_starts(signal.len(), length, overlap)?;
    Ok(plan
        .all_starts()
        .map(|start| Subsequence {
            start,
            data: signal
                .channels()
                .iter()
                .map(|c| slice_clamped(c, start, length))
                .collect(),
        })
        .collect())
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn standardization_round_trip(data in prop::collection::vec(-1e6f64..1e6, 1..200)) {
            let s = MultiChannelSignal::new(10.0, vec!["x".into()], vec![data.clone()]).unwrap();
            let stats = fit_standardization(std::slice::from_ref(&s)).unwrap();
            let fwd = apply_standardization(&s, &stats, Direction::Forward).unwrap();
            let back = apply_standardization(&fwd, &stats, Direction::Inverse).unwrap();
            let scale = data.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            for (a, b) in back.channel(0).iter().zip(&data) {
                prop_assert!((a - b).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn lowpass_idempotent(data in prop::collection::vec(-10f64..10.0, 8..300), cut in 1.0f64..49.0) {
            let s = MultiChannelSignal::new(100.0, vec!["x".into()], vec![data]).unwrap();
            let once = lowpass_fft(&s, cut).unwrap();
            let twice = lowpass_fft(&once, cut).unwrap();
            for (a, b) in once.channel(0).iter().zip(twice.channel(0)) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn interior_covers_signal(total in 1usize..3000, len_pow in 1u32..9, o_idx in 0usize..4) {
            let length = 1usize << len_pow;
            let overlap = [0.25, 0.5, 0.75, 1.0][o_idx];
            let plan = subsequence_starts(total, length, overlap).unwrap();
            let mut cover = vec![0u32; total];
            for &s in &plan.interior {
                for c in cover.iter_mut().skip(s).take(length) {
                    *c += 1;
                }
            }
            prop_assert!(cover.iter().all(|&c| c >= 1));
            if overlap == 0.5 && total >= length {
                let half = length / 2;
                for (i, &c) in cover.iter().enumerate() {
                    if i >= half && i + half < total {
                        prop_assert!(c >= 2, "sample {} covered {} times", i, c);
                    }
                }
            }
        }
    }
}
