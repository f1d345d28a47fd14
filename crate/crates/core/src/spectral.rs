//! Welch PSD/CPSD estimation and the MIMO frequency response function model.
//!
//! Spectra are one-sided and scaled so that summing `S(f) * df` over all bins
//! gives the mean square of the signal. Segments are Hann-windowed with 50 %
//! overlap unless another [`SpectralWindow`] is requested.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::signal::MultiChannelSignal;

/// Relative floor below which an input auto-spectrum counts as unexcited.
pub const PSD_FLOOR: f64 = 1e-10;

/// Default Welch segment length in samples.
pub const DEFAULT_SEGMENT_LENGTH: usize = 4096;

/// Default upper band limit of FRF models in hertz.
pub const DEFAULT_BAND_LIMIT: f64 = 80.0;

/// Taper applied to each Welch segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpectralWindow {
    #[default]
    Hann,
    Rectangular,
}

impl SpectralWindow {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            SpectralWindow::Rectangular => vec![1.0; n],
            SpectralWindow::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

/// Segment-averaged (cross) spectral density on a one-sided grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensity {
    pub frequencies: Vec<f64>,
    pub values: Vec<Complex64>,
    pub segment_count: usize,
    pub segment_length: usize,
    pub sample_rate: f64,
}

impl SpectralDensity {
    /// Segment duration in seconds.
    pub fn segment_duration(&self) -> f64 {
        self.segment_length as f64 / self.sample_rate
    }

    /// Bin spacing in hertz.
    pub fn resolution(&self) -> f64 {
        self.sample_rate / self.segment_length as f64
    }

    /// Real parts, i.e. the auto-spectrum values.
    pub fn real(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    /// `sum S(f) df`, the mean square for auto-spectra.
    pub fn integrated(&self) -> f64 {
        self.values.iter().map(|v| v.re).sum::<f64>() * self.resolution()
    }
}

/// Reusable Welch segmenter: window, FFT plan and scaling.
struct Welch {
    length: usize,
    step: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    sample_rate: f64,
    window_power: f64,
}

impl Welch {
    fn new(length: usize, sample_rate: f64, window: SpectralWindow) -> Result<Self> {
        if length < 2 || !length.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "segment length {length} must be a power of two >= 2"
            )));
        }
        let coeffs = window.coefficients(length);
        let window_power = coeffs.iter().map(|w| w * w).sum();
        Ok(Self {
            length,
            step: length / 2,
            window: coeffs,
            fft: FftPlanner::new().plan_fft_forward(length),
            sample_rate,
            window_power,
        })
    }

    fn bins(&self) -> usize {
        self.length / 2 + 1
    }

    fn segment_count(&self, n: usize) -> usize {
        if n < self.length {
            0
        } else {
            (n - self.length) / self.step + 1
        }
    }

    fn frequencies(&self) -> Vec<f64> {
        let df = self.sample_rate / self.length as f64;
        (0..self.bins()).map(|j| j as f64 * df).collect()
    }

    /// One-sided spectra of every windowed segment of `data`, after removing
    /// the mean of the whole record.
    fn segments(&self, data: &[f64]) -> Vec<Vec<Complex64>> {
        let mut out = Vec::with_capacity(self.segment_count(data.len()));
        let mut buf = vec![Complex64::new(0.0, 0.0); self.length];
        let mean = data.iter().sum::<f64>() / data.len().max(1) as f64;
        for m in 0..self.segment_count(data.len()) {
            let seg = &data[m * self.step..m * self.step + self.length];
            for ((b, x), w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex64::new((x - mean) * w, 0.0);
            }
            self.fft.process(&mut buf);
            out.push(buf[..self.bins()].to_vec());
        }
        out
    }

    /// Scale turning `sum_m conj(X) Y` into a one-sided density.
    fn scale(&self, bin: usize, segments: usize) -> f64 {
        let one_sided = if bin == 0 || bin == self.length / 2 { 1.0 } else { 2.0 };
        one_sided / (self.sample_rate * self.window_power * segments as f64)
    }

    fn density(&self, acc: Vec<Complex64>, segments: usize) -> SpectralDensity {
        SpectralDensity {
            frequencies: self.frequencies(),
            values: acc
                .into_iter()
                .enumerate()
                .map(|(j, v)| v * self.scale(j, segments))
                .collect(),
            segment_count: segments,
            segment_length: self.length,
            sample_rate: self.sample_rate,
        }
    }
}

fn check_segment_fits(n: usize, segment_length: usize) -> Result<()> {
    if segment_length > n {
        return Err(Error::InvalidArgument(format!(
            "segment of {segment_length} samples is longer than the {n}-sample record"
        )));
    }
    Ok(())
}

/// Welch estimate of the one-sided power spectral density of `data`.
pub fn estimate_psd(
    data: &[f64],
    sample_rate: f64,
    segment_length: usize,
    window: SpectralWindow,
) -> Result<SpectralDensity> {
    let welch = Welch::new(segment_length, sample_rate, window)?;
    check_segment_fits(data.len(), segment_length)?;
    let mut acc = vec![Complex64::new(0.0, 0.0); welch.bins()];
    let segs = welch.segments(data);
    for seg in &segs {
        for (a, x) in acc.iter_mut().zip(seg) {
            *a += Complex64::new(x.norm_sqr(), 0.0);
        }
    }
    Ok(welch.density(acc, segs.len()))
}

/// Welch estimate of the cross spectral density `conj(X) * Y`.
pub fn estimate_cpsd(
    input: &[f64],
    output: &[f64],
    sample_rate: f64,
    segment_length: usize,
    window: SpectralWindow,
) -> Result<SpectralDensity> {
    if input.len() != output.len() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} samples, output {}",
            input.len(),
            output.len()
        )));
    }
    let welch = Welch::new(segment_length, sample_rate, window)?;
    check_segment_fits(input.len(), segment_length)?;
    let mut acc = vec![Complex64::new(0.0, 0.0); welch.bins()];
    let xs = welch.segments(input);
    let ys = welch.segments(output);
    for (xm, ym) in xs.iter().zip(&ys) {
        for ((a, x), y) in acc.iter_mut().zip(xm).zip(ym) {
            *a += x.conj() * y;
        }
    }
    Ok(welch.density(acc, xs.len()))
}

/// Complex frequency response matrix `H[input k][output l]` on a discrete
/// frequency grid. Entries above the band limit are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FrfModel {
    frequencies: Vec<f64>,
    response: Vec<Complex64>,
    input_names: Vec<String>,
    output_names: Vec<String>,
    band_limit: f64,
    /// Sample rate of the parameterization data.
    pub sample_rate: f64,
    /// Welch segment length used for estimation (0 for analytic models).
    pub segment_length: usize,
    /// Number of averaged segments (0 for analytic models).
    pub segment_count: usize,
}

impl FrfModel {
    /// Builds a model from a flat `[frequency][input][output]` response.
    pub fn new(
        frequencies: Vec<f64>,
        response: Vec<Complex64>,
        input_names: Vec<String>,
        output_names: Vec<String>,
        band_limit: f64,
        sample_rate: f64,
    ) -> Result<Self> {
        if frequencies.is_empty() || frequencies[0] != 0.0 {
            return Err(Error::InvalidArgument("frequency grid must start at 0 Hz".into()));
        }
        if frequencies.windows(2).any(|w| !(w[1] > w[0])) || frequencies.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidArgument("frequency grid must be strictly increasing".into()));
        }
        if input_names.is_empty() || output_names.is_empty() {
            return Err(Error::Empty("FRF model needs input and output channels".into()));
        }
        let per_bin = input_names.len() * output_names.len();
        if response.len() != frequencies.len() * per_bin {
            return Err(Error::ShapeMismatch(format!(
                "{} response entries for {} bins of {}x{}",
                response.len(),
                frequencies.len(),
                input_names.len(),
                output_names.len()
            )));
        }
        if response.iter().any(|h| !(h.re.is_finite() && h.im.is_finite())) {
            return Err(Error::InvalidArgument("non-finite FRF entry".into()));
        }
        if !(band_limit > 0.0) {
            return Err(Error::InvalidArgument(format!("band limit {band_limit} must be positive")));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("sample rate {sample_rate} must be positive")));
        }
        let mut model = Self {
            frequencies,
            response,
            input_names,
            output_names,
            band_limit,
            sample_rate,
            segment_length: 0,
            segment_count: 0,
        };
        model.apply_band_limit();
        Ok(model)
    }

    /// Evaluates `response(f)` (row-major `[input][output]`) on the grid.
    pub fn from_fn(
        frequencies: Vec<f64>,
        input_names: Vec<String>,
        output_names: Vec<String>,
        band_limit: f64,
        sample_rate: f64,
        response: impl Fn(f64) -> Vec<Complex64>,
    ) -> Result<Self> {
        let per_bin = input_names.len() * output_names.len();
        let mut flat = Vec::with_capacity(frequencies.len() * per_bin);
        for &f in &frequencies {
            let h = response(f);
            if h.len() != per_bin {
                return Err(Error::ShapeMismatch(format!(
                    "response function returned {} entries, expected {per_bin}",
                    h.len()
                )));
            }
            flat.extend(h);
        }
        Self::new(frequencies, flat, input_names, output_names, band_limit, sample_rate)
    }

    /// Uniform grid `0, df, ..., sample_rate / 2` with `bins` points.
    pub fn uniform_grid(sample_rate: f64, bins: usize) -> Vec<f64> {
        let df = sample_rate / 2.0 / (bins - 1) as f64;
        (0..bins).map(|j| j as f64 * df).collect()
    }

    fn apply_band_limit(&mut self) {
        let per_bin = self.per_bin();
        for (j, &f) in self.frequencies.iter().enumerate() {
            if f > self.band_limit {
                self.response[j * per_bin..(j + 1) * per_bin]
                    .iter_mut()
                    .for_each(|h| *h = Complex64::new(0.0, 0.0));
            }
        }
    }

    fn per_bin(&self) -> usize {
        self.input_names.len() * self.output_names.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// Flat `[frequency][input][output]` response.
    pub fn response(&self) -> &[Complex64] {
        &self.response
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    pub fn output_names(&self) -> &[String] {
        &self.output_names
    }

    pub fn n_inputs(&self) -> usize {
        self.input_names.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.output_names.len()
    }

    pub fn band_limit(&self) -> f64 {
        self.band_limit
    }

    /// `H_kl` at grid bin `bin`.
    pub fn h(&self, bin: usize, input: usize, output: usize) -> Complex64 {
        self.response[bin * self.per_bin() + input * self.n_outputs() + output]
    }

    /// Row-major `[input][output]` matrix linearly interpolated at `freq`;
    /// zero beyond the grid.
    pub fn interpolate(&self, freq: f64) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.per_bin()];
        let mut cursor = 0;
        self.interpolate_into(freq, &mut cursor, &mut out);
        out
    }

    /// Interpolation with a monotone search cursor for ascending queries.
    fn interpolate_into(&self, freq: f64, cursor: &mut usize, out: &mut [Complex64]) {
        let grid = &self.frequencies;
        let last = grid.len() - 1;
        let per_bin = self.per_bin();
        if freq > grid[last] || freq < 0.0 {
            out.iter_mut().for_each(|h| *h = Complex64::new(0.0, 0.0));
            return;
        }
        if last == 0 || freq == grid[last] {
            out.copy_from_slice(&self.response[last * per_bin..]);
            return;
        }
        while *cursor + 1 < last && grid[*cursor + 1] <= freq {
            *cursor += 1;
        }
        while *cursor > 0 && grid[*cursor] > freq {
            *cursor -= 1;
        }
        let j = *cursor;
        let t = (freq - grid[j]) / (grid[j + 1] - grid[j]);
        let lo = &self.response[j * per_bin..(j + 1) * per_bin];
        let hi = &self.response[(j + 1) * per_bin..(j + 2) * per_bin];
        for ((o, a), b) in out.iter_mut().zip(lo).zip(hi) {
            *o = a * (1.0 - t) + b * t;
        }
    }
}

/// Estimates `H_kl = S_kl / S_kk` from paired input/output records.
///
/// Spectra are accumulated over all segments of all files. Bins whose input
/// auto-spectrum falls below [`PSD_FLOOR`] times its maximum, and bins above
/// `band_limit`, are set to zero.
pub fn estimate_frf(
    inputs: &[MultiChannelSignal],
    outputs: &[MultiChannelSignal],
    segment_length: usize,
    band_limit: f64,
) -> Result<FrfModel> {
    if inputs.is_empty() {
        return Err(Error::Empty("no parameterization files".into()));
    }
    if inputs.len() != outputs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} input files but {} output files",
            inputs.len(),
            outputs.len()
        )));
    }
    let sample_rate = inputs[0].sample_rate();
    let in_names = inputs[0].names().to_vec();
    let out_names = outputs[0].names().to_vec();
    for (x, y) in inputs.iter().zip(outputs) {
        if x.names() != in_names.as_slice() || y.names() != out_names.as_slice() {
            return Err(Error::ChannelMismatch("files disagree on channel layout".into()));
        }
        if x.sample_rate() != sample_rate || y.sample_rate() != sample_rate {
            return Err(Error::InvalidArgument("files disagree on sample rate".into()));
        }
        if x.len() != y.len() {
            return Err(Error::ShapeMismatch(format!(
                "paired files have {} and {} samples",
                x.len(),
                y.len()
            )));
        }
        check_segment_fits(x.len(), segment_length)?;
    }

    let welch = Welch::new(segment_length, sample_rate, SpectralWindow::Hann)?;
    let bins = welch.bins();
    let (n_in, n_out) = (in_names.len(), out_names.len());
    let mut auto = vec![0.0; n_in * bins];
    let mut cross = vec![Complex64::new(0.0, 0.0); n_in * n_out * bins];
    let mut segments = 0;
    for (x, y) in inputs.iter().zip(outputs) {
        let xs: Vec<_> = x.channels().iter().map(|c| welch.segments(c)).collect();
        let ys: Vec<_> = y.channels().iter().map(|c| welch.segments(c)).collect();
        segments += xs[0].len();
        for (k, xk) in xs.iter().enumerate() {
            for seg in xk {
                for (a, v) in auto[k * bins..(k + 1) * bins].iter_mut().zip(seg) {
                    *a += v.norm_sqr();
                }
            }
            for (l, yl) in ys.iter().enumerate() {
                let acc = &mut cross[(k * n_out + l) * bins..(k * n_out + l + 1) * bins];
                for (xm, ym) in xk.iter().zip(yl) {
                    for ((a, xv), yv) in acc.iter_mut().zip(xm).zip(ym) {
                        *a += xv.conj() * yv;
                    }
                }
            }
        }
    }

    let mut response = vec![Complex64::new(0.0, 0.0); bins * n_in * n_out];
    for k in 0..n_in {
        let s_kk = &auto[k * bins..(k + 1) * bins];
        let peak = s_kk.iter().cloned().fold(0.0, f64::max);
        if peak == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "input channel `{}` carries no power",
                in_names[k]
            )));
        }
        for j in 0..bins {
            if s_kk[j] < PSD_FLOOR * peak {
                continue;
            }
            for l in 0..n_out {
                // The 1/(T*M) scaling cancels in the ratio.
                response[j * n_in * n_out + k * n_out + l] = cross[(k * n_out + l) * bins + j] / s_kk[j];
            }
        }
    }
    let mut model = FrfModel::new(
        welch.frequencies(),
        response,
        in_names,
        out_names,
        band_limit,
        sample_rate,
    )?;
    model.segment_length = segment_length;
    model.segment_count = segments;
    Ok(model)
}

/// FFT length used by [`frf_predict`] for a record of `n` samples.
///
/// Padding to at least twice the record keeps the frequency-domain product a
/// linear (not circular) convolution for impulse responses shorter than the
/// record.
pub fn prediction_fft_len(n: usize) -> usize {
    (2 * n).next_power_of_two()
}

/// Applies the FRF model to `input` in the frequency domain.
pub fn frf_predict(model: &FrfModel, input: &MultiChannelSignal) -> Result<MultiChannelSignal> {
    let x = input.select(model.input_names())?;
    let n = x.len();
    let nfft = prediction_fft_len(n);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);

    let spectra: Vec<Vec<Complex64>> = x
        .channels()
        .iter()
        .map(|c| {
            let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
            for (b, v) in buf.iter_mut().zip(c) {
                b.re = *v;
            }
            fwd.process(&mut buf);
            buf
        })
        .collect();

    let (n_in, n_out) = (model.n_inputs(), model.n_outputs());
    let half = nfft / 2;
    let df = x.sample_rate() / nfft as f64;
    let mut out_spectra = vec![vec![Complex64::new(0.0, 0.0); nfft]; n_out];
    let mut h = vec![Complex64::new(0.0, 0.0); n_in * n_out];
    let mut cursor = 0;
    for j in 0..=half {
        model.interpolate_into(j as f64 * df, &mut cursor, &mut h);
        for (l, ys) in out_spectra.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, xs) in spectra.iter().enumerate() {
                acc += h[k * n_out + l] * xs[j];
            }
            ys[j] = acc;
        }
    }
    let mut channels = Vec::with_capacity(n_out);
    for mut ys in out_spectra {
        for j in half + 1..nfft {
            ys[j] = ys[nfft - j].conj();
        }
        inv.process(&mut ys);
        channels.push(ys[..n].iter().map(|c| c.re / nfft as f64).collect());
    }
    MultiChannelSignal::new(x.sample_rate(), model.output_names().to_vec(), channels)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn model() -> FrfModel {
        FrfModel::from_fn(
            FrfModel::uniform_grid(50.0, 65),
            vec!["a".into(), "b".into()],
            vec!["y".into()],
            20.0,
            50.0,
            |f| {
                let s = Complex64::new(0.0, f / 5.0);
                vec![1.0 / (s + 1.0), Complex64::new(0.5, 0.0) / (s * s + s * 0.4 + 1.0)]
            },
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn prediction_is_linear(
            x1 in prop::collection::vec(-5f64..5.0, 64),
            x2 in prop::collection::vec(-5f64..5.0, 64),
            a in -3f64..3.0,
            b in -3f64..3.0,
        ) {
            let m = model();
            let sig = |x: &[f64]| MultiChannelSignal::new(
                50.0,
                vec!["a".into(), "b".into()],
                vec![x[..32].to_vec(), x[32..].to_vec()],
            ).unwrap();
            let mix: Vec<f64> = x1.iter().zip(&x2).map(|(p, q)| a * p + b * q).collect();
            let y1 = frf_predict(&m, &sig(&x1)).unwrap();
            let y2 = frf_predict(&m, &sig(&x2)).unwrap();
            let ym = frf_predict(&m, &sig(&mix)).unwrap();
            for i in 0..32 {
                let lin = a * y1.channel(0)[i] + b * y2.channel(0)[i];
                prop_assert!((ym.channel(0)[i] - lin).abs() < 1e-9);
            }
        }

        #[test]
        fn cpsd_is_hermitian(x in prop::collection::vec(-1f64..1.0, 256), y in prop::collection::vec(-1f64..1.0, 256)) {
            let a = estimate_cpsd(&x, &y, 10.0, 64, SpectralWindow::Hann).unwrap();
            let b = estimate_cpsd(&y, &x, 10.0, 64, SpectralWindow::Hann).unwrap();
            for (p, q) in a.values.iter().zip(&b.values) {
                prop_assert!((p - q.conj()).norm() < 1e-12);
            }
        }
    }
}
