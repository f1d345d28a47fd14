//! Synthetic excitations and plants.

mod rig;

pub use rig::{rig_respond, NonlinearRigParams};

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::signal::MultiChannelSignal;
use crate::spectral::{frf_predict, FrfModel};
use crate::store::{DatasetManifest, Kind, ManifestEntry, Role};

/// Band-limited white/pink noise settings.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    /// Flat spectrum up to here, Hz.
    pub white_limit: f64,
    /// `1/f` power spectrum from `white_limit` up to here, zero above.
    pub pink_limit: f64,
    pub mean_range: (f64, f64),
    /// Range of the peak deviation from the mean.
    pub amplitude_range: (f64, f64),
    pub duration: f64,
    pub sample_rate: f64,
    pub seed: u64,
    pub channels: Vec<String>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            white_limit: 20.0,
            pink_limit: 50.0,
            mean_range: (-4.0, 4.0),
            amplitude_range: (0.5, 2.0),
            duration: 180.0,
            sample_rate: 1000.0,
            seed: 0,
            channels: vec!["drive_1".into(), "drive_2".into(), "drive_3".into()],
        }
    }
}

impl NoiseSpec {
    pub fn samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.duration > 0.0) || self.samples() < 2 {
            return Err(Error::InvalidArgument("noise needs a positive duration and sample rate".into()));
        }
        if !(0.0 < self.white_limit && self.white_limit < self.pink_limit && self.pink_limit < self.sample_rate / 2.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < white_limit ({}) < pink_limit ({}) < Nyquist ({})",
                self.white_limit,
                self.pink_limit,
                self.sample_rate / 2.0
            )));
        }
        for (lo, hi) in [self.mean_range, self.amplitude_range] {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::InvalidArgument(format!("invalid range [{lo}, {hi}]")));
            }
        }
        if self.amplitude_range.0 < 0.0 {
            return Err(Error::InvalidArgument("amplitudes must be non-negative".into()));
        }
        if self.channels.is_empty() {
            return Err(Error::Empty("noise needs at least one channel".into()));
        }
        Ok(())
    }
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.gen_range(lo..=hi)
}

/// Complex time series of one noise channel before taking the real part.
fn shaped_noise(n: usize, spec: &NoiseSpec, rng: &mut impl Rng) -> Vec<Complex64> {
    let df = spec.sample_rate / n as f64;
    let magnitude = |f: f64| {
        if f <= spec.white_limit {
            1.0
        } else if f <= spec.pink_limit {
            (spec.white_limit / f).sqrt()
        } else {
            0.0
        }
    };
    let mut bins = vec![Complex64::new(0.0, 0.0); n];
    for k in 1..=(n - 1) / 2 {
        let phase = rng.gen_range(0.0..2.0 * PI);
        let b = Complex64::from_polar(magnitude(k as f64 * df), phase);
        bins[k] = b;
        bins[n - k] = b.conj();
    }
    if n % 2 == 0 {
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        bins[n / 2] = Complex64::new(sign * magnitude(spec.sample_rate / 2.0), 0.0);
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut bins);
    bins
}

/// Shifts and scales `x` so that its mean is `mean` and its largest
/// deviation from the mean is `amplitude`.
fn rescale(x: &mut [f64], mean: f64, amplitude: f64) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let peak = x.iter().map(|v| (v - m).abs()).fold(0.0, f64::max);
    let s = if peak > 0.0 { amplitude / peak } else { 0.0 };
    x.iter_mut().for_each(|v| *v = (*v - m) * s + mean);
}

/// Generates mutually independent white/pink noise channels.
pub fn generate_noise(spec: &NoiseSpec) -> Result<MultiChannelSignal> {
    spec.validate()?;
    let n = spec.samples();
    let channels = (0..spec.channels.len())
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "noise-channel", c as u64));
            let mut x: Vec<f64> = shaped_noise(n, spec, &mut rng).iter().map(|v| v.re).collect();
            let mean = draw(&mut rng, spec.mean_range);
            let amp = draw(&mut rng, spec.amplitude_range);
            rescale(&mut x, mean, amp);
            x
        })
        .collect();
    MultiChannelSignal::new(spec.sample_rate, spec.channels.clone(), channels)
}

/// Response of an LTI plant given by its FRF.
pub fn lti_respond(frf: &FrfModel, excitation: &MultiChannelSignal) -> Result<MultiChannelSignal> {
    frf_predict(frf, excitation)
}

/// Frequency bins of the analytic plant models.
pub const PLANT_BINS: usize = 4097;

/// Diagonal plant `gain * exp(-i 2 pi f delay)`, delay in samples.
pub fn delayed_gain_plant(
    inputs: Vec<String>,
    outputs: Vec<String>,
    gain: f64,
    delay_samples: f64,
    sample_rate: f64,
    band_limit: f64,
) -> Result<FrfModel> {
    let (ni, no) = (inputs.len(), outputs.len());
    FrfModel::from_fn(
        FrfModel::uniform_grid(sample_rate, PLANT_BINS),
        inputs,
        outputs,
        band_limit,
        sample_rate,
        |f| {
            let h = Complex64::from_polar(gain, -2.0 * PI * f * delay_samples / sample_rate);
            (0..ni * no)
                .map(|i| if i / no == i % no { h } else { Complex64::new(0.0, 0.0) })
                .collect()
        },
    )
}

/// Coupled second-order plant: output `l` resonates at `resonances[l]` with
/// damping ratio `zeta`, static gain `gain` from its own input and
/// `coupling * gain` from the others.
pub fn second_order_plant(
    inputs: Vec<String>,
    outputs: Vec<String>,
    resonances: &[f64],
    zeta: f64,
    gain: f64,
    coupling: f64,
    sample_rate: f64,
    band_limit: f64,
) -> Result<FrfModel> {
    let (ni, no) = (inputs.len(), outputs.len());
    if resonances.len() != no {
        return Err(Error::ShapeMismatch(format!(
            "{} resonances for {no} outputs",
            resonances.len()
        )));
    }
    let res = resonances.to_vec();
    FrfModel::from_fn(
        FrfModel::uniform_grid(sample_rate, PLANT_BINS),
        inputs,
        outputs,
        band_limit,
        sample_rate,
        move |f| {
            let mut h = Vec::with_capacity(ni * no);
            for k in 0..ni {
                for (l, fl) in res.iter().enumerate() {
                    let r = f / fl;
                    let g = if k == l { gain } else { coupling * gain };
                    h.push(Complex64::new(g, 0.0) / Complex64::new(1.0 - r * r, 2.0 * zeta * r));
                }
            }
            h
        },
    )
}

/// The 3x3 linear plant of the dataset-size study: displacements to forces,
/// resonances at 12, 18 and 25 Hz.
pub fn study_plant(sample_rate: f64, band_limit: f64) -> Result<FrfModel> {
    let names = |p: &str| (1..=3).map(|i| format!("{p}_{i}")).collect::<Vec<_>>();
    second_order_plant(
        names("disp"),
        names("force"),
        &[12.0, 18.0, 25.0],
        0.3,
        1.0,
        0.2,
        sample_rate,
        band_limit,
    )
}

const SERVICE_LOAD_SHAPES: &str = include_str!("../../data/service_load_shapes.csv");

/// Number of stored service-load shapes.
pub const SERVICE_LOAD_SHAPE_COUNT: usize = 3;

/// Keypoints `(u, [c1, c2, c3])` of every stored shape.
fn service_load_keypoints() -> Vec<Vec<(f64, [f64; 3])>> {
    let mut shapes = vec![Vec::new(); SERVICE_LOAD_SHAPE_COUNT];
    for line in SERVICE_LOAD_SHAPES.lines() {
        if line.starts_with('#') || line.starts_with("shape") || line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line.split(',').map(|s| s.parse().expect("fixture is numeric")).collect();
        shapes[v[0] as usize].push((v[1], [v[2], v[3], v[4]]));
    }
    shapes
}

/// Base shape `shape` (kN) resampled to `n` samples spanning the shape.
pub fn service_load_base(shape: usize, n: usize) -> Result<[Vec<f64>; 3]> {
    let all = service_load_keypoints();
    let keys = all
        .get(shape)
        .ok_or_else(|| Error::InvalidArgument(format!("service-load shape {shape} does not exist")))?;
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut j = 0;
    for i in 0..n {
        let u = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        while j + 2 < keys.len() && keys[j + 1].0 < u {
            j += 1;
        }
        let (u0, a) = keys[j];
        let (u1, b) = keys[j + 1];
        let t = ((u - u0) / (u1 - u0)).clamp(0.0, 1.0);
        for c in 0..3 {
            out[c][i] = a[c] + t * (b[c] - a[c]);
        }
    }
    Ok(out)
}

/// A plant that turns drive files into responses.
#[derive(Debug, Clone)]
pub enum Plant {
    Lti(FrfModel),
    Rig(NonlinearRigParams),
}

impl Plant {
    pub fn drive_names(&self) -> Vec<String> {
        match self {
            Plant::Lti(f) => f.input_names().to_vec(),
            Plant::Rig(_) => (1..=3).map(|i| format!("drive_{i}")).collect(),
        }
    }

    /// Response to `drive`, starting from the drive's initial level rather
    /// than from rest. A pre-roll of [`PRE_ROLL_RAMP`] seconds of
    /// raised-cosine ramp from zero to the first drive sample, then
    /// [`PRE_ROLL_HOLD`] seconds at that sample, is simulated and dropped.
    pub fn respond(&self, drive: &MultiChannelSignal) -> Result<MultiChannelSignal> {
        let fs = drive.sample_rate();
        let ramp = (PRE_ROLL_RAMP * fs).round() as usize;
        let lead = ramp + (PRE_ROLL_HOLD * fs).round() as usize;
        let extended = drive.map_channels(|c| {
            let x0 = c.first().copied().unwrap_or(0.0);
            let mut v: Vec<f64> = (0..lead)
                .map(|i| {
                    if i < ramp {
                        x0 * 0.5 * (1.0 - (std::f64::consts::PI * i as f64 / ramp as f64).cos())
                    } else {
                        x0
                    }
                })
                .collect();
            v.extend_from_slice(c);
            v
        })?;
        let y = match self {
            Plant::Lti(f) => lti_respond(f, &extended)?,
            Plant::Rig(p) => rig_respond(p, &extended)?,
        };
        y.map_channels(|c| c[lead..].to_vec())
    }
}

/// Seconds of ramp from rest to the initial drive level before a response
/// is recorded.
pub const PRE_ROLL_RAMP: f64 = 1.0;
/// Seconds the initial drive level is held before recording starts.
pub const PRE_ROLL_HOLD: f64 = 2.0;

/// What [`make_dataset`] generates.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub kind: Kind,
    pub count: usize,
    pub seed: u64,
    /// Noise band limits, mean and amplitude ranges, duration and rate. The
    /// seed and channel list of this spec are ignored.
    pub noise: NoiseSpec,
    /// Service-load scale range.
    pub scale_range: (f64, f64),
    /// Per-channel service-load offset range; `None` for no offset.
    pub offset_range: Option<(f64, f64)>,
    /// Forces every file into one role instead of the default proportions.
    pub role: Option<Role>,
    /// Group label; defaults to the kind name.
    pub group: Option<String>,
    /// File name prefix; defaults to the kind name.
    pub prefix: Option<String>,
}

impl DatasetSpec {
    pub fn new(kind: Kind, count: usize, seed: u64) -> Self {
        Self {
            kind,
            count,
            seed,
            noise: NoiseSpec::default(),
            scale_range: (0.3, 1.0),
            offset_range: None,
            role: None,
            group: None,
            prefix: None,
        }
    }
}

/// Default train/validation/test shares per kind.
pub fn role_proportions(kind: Kind) -> [f64; 3] {
    match kind {
        Kind::Noise => [0.85, 0.06, 0.09],
        Kind::ServiceLoad => [0.0, 0.72, 0.28],
        Kind::Sin | Kind::Sweep => [0.0, 0.8, 0.2],
    }
}

/// Role of file `index` out of `count` under `proportions`.
pub fn assign_role(index: usize, count: usize, proportions: [f64; 3]) -> Role {
    let frac = (index as f64 + 0.5) / count as f64;
    let mut acc = 0.0;
    for (role, p) in Role::ALL.into_iter().zip(proportions) {
        acc += p;
        if frac < acc {
            return role;
        }
    }
    Role::Test
}

struct Drive {
    signal: MultiChannelSignal,
    scale: Option<f64>,
    offset: Option<Vec<f64>>,
}

fn make_drive(spec: &DatasetSpec, names: &[String], index: usize) -> Result<Drive> {
    let seed = derive_seed(spec.seed, spec.kind.name(), index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ns = &spec.noise;
    let n = ns.samples();
    let fs = ns.sample_rate;
    match spec.kind {
        Kind::Noise => {
            let noise = NoiseSpec {
                seed,
                channels: names.to_vec(),
                ..ns.clone()
            };
            Ok(Drive {
                signal: generate_noise(&noise)?,
                scale: None,
                offset: None,
            })
        }
        Kind::ServiceLoad => {
            if names.len() != 3 {
                return Err(Error::ChannelMismatch("service loads drive exactly 3 channels".into()));
            }
            let shape = index % SERVICE_LOAD_SHAPE_COUNT;
            let base = service_load_base(shape, n)?;
            let scale = draw(&mut rng, spec.scale_range);
            let offset: Vec<f64> = (0..3)
                .map(|_| spec.offset_range.map_or(0.0, |r| draw(&mut rng, r)))
                .collect();
            let channels = base
                .iter()
                .zip(&offset)
                .map(|(b, o)| b.iter().map(|v| scale * v + o).collect())
                .collect();
            Ok(Drive {
                signal: MultiChannelSignal::new(fs, names.to_vec(), channels)?,
                scale: Some(scale),
                offset: Some(offset),
            })
        }
        Kind::Sin | Kind::Sweep => {
            let duration = n as f64 / fs;
            let channels = names
                .iter()
                .map(|_| {
                    let mean = draw(&mut rng, ns.mean_range);
                    let amp = draw(&mut rng, ns.amplitude_range);
                    let phase = rng.gen_range(0.0..2.0 * PI);
                    let f0 = rng.gen_range(0.5..ns.white_limit);
                    (0..n)
                        .map(|i| {
                            let t = i as f64 / fs;
                            let arg = match spec.kind {
                                Kind::Sin => 2.0 * PI * f0 * t,
                                _ => {
                                    let rate = (ns.pink_limit - 0.5) / duration;
                                    2.0 * PI * (0.5 * t + 0.5 * rate * t * t)
                                }
                            };
                            mean + amp * (arg + phase).sin()
                        })
                        .collect()
                })
                .collect();
            Ok(Drive {
                signal: MultiChannelSignal::new(fs, names.to_vec(), channels)?,
                scale: None,
                offset: None,
            })
        }
    }
}

/// Generates `spec.count` files of drive and response channels into `dir`
/// and returns their manifest (not yet written). File `i` only depends on
/// the root seed, the kind and `i`.
pub fn make_dataset(spec: &DatasetSpec, plant: &Plant, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    if spec.count == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one file".into()));
    }
    if !(spec.scale_range.0 <= spec.scale_range.1) {
        return Err(Error::InvalidArgument("invalid scale range".into()));
    }
    spec.noise.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
    let names = plant.drive_names();
    let prefix = spec.prefix.clone().unwrap_or_else(|| spec.kind.name().to_string());
    let group = spec.group.clone().unwrap_or_else(|| spec.kind.name().to_string());
    let proportions = role_proportions(spec.kind);
    let entries = (0..spec.count)
        .into_par_iter()
        .map(|i| -> Result<ManifestEntry> {
            let drive = make_drive(spec, &names, i)?;
            let response = plant.respond(&drive.signal)?;
            let file = drive.signal.concat_channels(&response)?;
            let role = spec.role.unwrap_or_else(|| assign_role(i, spec.count, proportions));
            let rel = PathBuf::from(format!("{prefix}_{i:03}.csv"));
            let mut comments = vec![
                format!("kind: {}", spec.kind),
                format!("role: {role}"),
                "units: force kN, displacement mm, time s".to_string(),
            ];
            if let Some(s) = drive.scale {
                comments.push(format!("scale: {s:?}"));
            }
            file.write_csv(dir.join(&rel), &comments)?;
            Ok(ManifestEntry {
                path: rel,
                kind: spec.kind,
                role,
                group: group.clone(),
                sample_rate: file.sample_rate(),
                channels: file.names().to_vec(),
                scale: drive.scale,
                offset: drive.offset,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetManifest {
        entries,
        base_dir: dir.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_spec() -> NoiseSpec {
        NoiseSpec {
            duration: 4.0,
            sample_rate: 200.0,
            ..NoiseSpec::default()
        }
    }

    #[test]
    fn inverse_fft_is_real() {
        let spec = short_spec();
        for n in [800, 801] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let x = shaped_noise(n, &spec, &mut rng);
            let max_im = x.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
            assert!(max_im < 1e-10, "{max_im}");
        }
    }

    #[test]
    fn noise_respects_ranges_and_seed() {
        let spec = short_spec();
        let a = generate_noise(&spec).unwrap();
        assert_eq!(a, generate_noise(&spec).unwrap());
        for ch in a.channels() {
            let m = ch.iter().sum::<f64>() / ch.len() as f64;
            let peak = ch.iter().map(|v| (v - m).abs()).fold(0.0, f64::max);
            assert!((-4.0..=4.0).contains(&m));
            assert!((0.5 - 1e-12..=2.0 + 1e-12).contains(&peak));
        }
        let b = generate_noise(&NoiseSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn role_assignment_follows_proportions() {
        let roles: Vec<Role> = (0..100).map(|i| assign_role(i, 100, role_proportions(Kind::Noise))).collect();
        let count = |r| roles.iter().filter(|&&x| x == r).count();
        assert_eq!((count(Role::Train), count(Role::Validation), count(Role::Test)), (85, 6, 9));
        assert_eq!(assign_role(0, 4, role_proportions(Kind::ServiceLoad)), Role::Validation);
        assert_eq!(assign_role(3, 4, role_proportions(Kind::ServiceLoad)), Role::Test);
    }

    #[test]
    fn service_load_shapes_load() {
        for s in 0..SERVICE_LOAD_SHAPE_COUNT {
            let b = service_load_base(s, 500).unwrap();
            let peak = b.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(peak > 1.5 && peak <= 6.0 + 1e-9);
        }
        assert!(service_load_base(3, 10).is_err());
    }

    #[test]
    fn study_plant_is_three_by_three() {
        let p = study_plant(200.0, 80.0).unwrap();
        assert_eq!((p.n_inputs(), p.n_outputs()), (3, 3));
        assert!((p.h(0, 0, 0).re - 1.0).abs() < 1e-12);
        assert!((p.h(0, 1, 0).re - 0.2).abs() < 1e-12);
    }
}
