//! Rainflow counting, fictitious Wöhler damage and Multi-Rain.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::signal::MultiChannelSignal;

/// One counted load cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cycle {
    /// Half range.
    pub amplitude: f64,
    pub mean: f64,
    /// 1.0 for a full cycle, 0.5 for a half cycle.
    pub count: f64,
}

impl Cycle {
    fn full(a: f64, b: f64) -> Self {
        Self {
            amplitude: (a - b).abs() / 2.0,
            mean: (a + b) / 2.0,
            count: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CycleSet {
    pub cycles: Vec<Cycle>,
}

impl CycleSet {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    /// Sum of cycle counts.
    pub fn total_count(&self) -> f64 {
        self.cycles.iter().map(|c| c.count).sum()
    }

    /// `amplitude,mean,count` rows with a header line.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("amplitude,mean,count\n");
        for c in &self.cycles {
            let _ = writeln!(out, "{:?},{:?},{:?}", c.amplitude, c.mean, c.count);
        }
        out
    }
}

/// Power-law S-N curve `N = K * S_a^(-k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WoehlerParams {
    pub k: f64,
    pub big_k: f64,
}

impl Default for WoehlerParams {
    fn default() -> Self {
        Self { k: 5.0, big_k: 1e7 }
    }
}

impl WoehlerParams {
    pub fn new(k: f64, big_k: f64) -> Result<Self> {
        if !(k > 0.0 && big_k > 0.0 && k.is_finite() && big_k.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Wöhler parameters k={k}, K={big_k} must be positive"
            )));
        }
        Ok(Self { k, big_k })
    }

    /// Cycles to failure at amplitude `s`.
    pub fn cycles_to_failure(&self, s: f64) -> f64 {
        self.big_k * s.powf(-self.k)
    }
}

/// Alternating local extrema of `samples`, including the first and last
/// sample. Plateaus collapse to one point; a constant signal gives two equal
/// points.
pub fn turning_points(samples: &[f64]) -> Vec<f64> {
    let mut dedup: Vec<f64> = Vec::with_capacity(samples.len());
    for &x in samples {
        if dedup.last() != Some(&x) {
            dedup.push(x);
        }
    }
    if dedup.len() == 1 && samples.len() > 1 {
        return vec![dedup[0], dedup[0]];
    }
    if dedup.len() <= 2 {
        return dedup;
    }
    let mut out = vec![dedup[0]];
    for w in dedup.windows(3) {
        if (w[1] - w[0]) * (w[2] - w[1]) < 0.0 {
            out.push(w[1]);
        }
    }
    out.push(*dedup.last().expect("non-empty"));
    out
}

/// Runs the 4-point rule over `points`, pushing closed cycles into `cycles`
/// and returning the unclosed residual.
fn four_point_pass(points: &[f64], cycles: &mut Vec<Cycle>) -> Vec<f64> {
    let mut stack: Vec<f64> = Vec::with_capacity(points.len());
    for &p in points {
        stack.push(p);
        while stack.len() >= 4 {
            let n = stack.len();
            let (p1, p2, p3, p4) = (stack[n - 4], stack[n - 3], stack[n - 2], stack[n - 1]);
            if (p2 - p3).abs() <= (p1 - p2).abs().min((p3 - p4).abs()) {
                cycles.push(Cycle::full(p2, p3));
                stack.drain(n - 3..n - 1);
            } else {
                break;
            }
        }
    }
    stack
}

/// 4-point rainflow count of a turning-point sequence.
///
/// The residual left after the first pass is closed by counting the 4-point
/// cycles of the residual concatenated with itself; these are counted as full
/// cycles. A periodic signal of `n` identical periods therefore yields `n`
/// cycles per period shape.
pub fn rainflow_4pt(points: &[f64]) -> CycleSet {
    let mut cycles = Vec::new();
    let residual = four_point_pass(points, &mut cycles);
    if residual.len() >= 3 {
        let mut doubled = residual.clone();
        doubled.extend_from_slice(&residual);
        four_point_pass(&turning_points(&doubled), &mut cycles);
    }
    CycleSet { cycles }
}

/// Rainflow count of a raw signal.
pub fn rainflow(samples: &[f64]) -> CycleSet {
    rainflow_4pt(&turning_points(samples))
}

/// Elementary Palmgren-Miner damage `sum n_i S_i^k / K`.
pub fn damage(cycles: &CycleSet, woehler: &WoehlerParams) -> f64 {
    cycles
        .cycles
        .iter()
        .filter(|c| c.amplitude > 0.0)
        .map(|c| c.count * c.amplitude.powf(woehler.k))
        .sum::<f64>()
        / woehler.big_k
}

/// Damage of a raw signal.
pub fn signal_damage(samples: &[f64], woehler: &WoehlerParams) -> f64 {
    damage(&rainflow(samples), woehler)
}

/// `d(prediction) / d(target)`, or `None` when the target accrues no damage.
pub fn damage_ratio(prediction: &[f64], target: &[f64], woehler: &WoehlerParams) -> Option<f64> {
    let d_target = signal_damage(target, woehler);
    (d_target > 0.0).then(|| signal_damage(prediction, woehler) / d_target)
}

/// Unit vectors spread over the full sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    pub directions: Vec<[f64; 3]>,
}

impl DirectionSet {
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

pub const DEFAULT_DIRECTION_COUNT: usize = 500;

/// Deterministic Fibonacci-sphere lattice of `count` directions.
pub fn generate_directions(count: usize) -> Result<DirectionSet> {
    if count == 0 {
        return Err(Error::InvalidArgument("direction count must be at least 1".into()));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let directions = (0..count)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            let v = [r * phi.cos(), r * phi.sin(), z];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            [v[0] / norm, v[1] / norm, v[2] / norm]
        })
        .collect();
    Ok(DirectionSet { directions })
}

/// `psi_x s_x + psi_y s_y + psi_z s_z`.
pub fn project(channels: [&[f64]; 3], psi: [f64; 3]) -> Vec<f64> {
    channels[0]
        .iter()
        .zip(channels[1])
        .zip(channels[2])
        .map(|((x, y), z)| psi[0] * x + psi[1] * y + psi[2] * z)
        .collect()
}

/// Damage of the signal projected onto each direction.
pub fn directional_damages(
    channels: [&[f64]; 3],
    directions: &DirectionSet,
    woehler: &WoehlerParams,
) -> Vec<f64> {
    directions
        .directions
        .par_iter()
        .map(|&psi| signal_damage(&project(channels, psi), woehler))
        .collect()
}

fn three_channels(signal: &MultiChannelSignal) -> Result<[&[f64]; 3]> {
    if signal.n_channels() != 3 {
        return Err(Error::ChannelMismatch(format!(
            "Multi-Rain needs exactly 3 channels, got {}",
            signal.n_channels()
        )));
    }
    Ok([signal.channel(0), signal.channel(1), signal.channel(2)])
}

/// Largest directional damage of `signal` over `directions`.
pub fn multirain_damage(
    signal: &MultiChannelSignal,
    directions: &DirectionSet,
    woehler: &WoehlerParams,
) -> Result<f64> {
    let channels = three_channels(signal)?;
    Ok(directional_damages(channels, directions, woehler)
        .into_iter()
        .fold(0.0, f64::max))
}

/// `max_psi d_psi(prediction) / max_psi d_psi(target)`.
///
/// Returns `None` when the target has no directional damage at all.
pub fn multirain_ratio(
    prediction: &MultiChannelSignal,
    target: &MultiChannelSignal,
    directions: &DirectionSet,
    woehler: &WoehlerParams,
) -> Result<Option<f64>> {
    if prediction.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} samples, target {}",
            prediction.len(),
            target.len()
        )));
    }
    let d_target = multirain_damage(target, directions, woehler)?;
    let d_pred = multirain_damage(prediction, directions, woehler)?;
    Ok((d_target > 0.0).then(|| d_pred / d_target))
}
