//! Three-axis hysteretic test rig surrogate.
//!
//! Each axis is a mass on a viscous damper and a Bouc-Wen spring; the axes
//! are tied together by a small symmetric stiffness coupling. Units are kN,
//! mm and s, so masses are in kN s^2/mm.

use crate::error::{Error, Result};
use crate::signal::MultiChannelSignal;

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearRigParams {
    pub mass: [f64; 3],
    pub damping: [f64; 3],
    /// Initial (elastic) stiffness in kN/mm.
    pub stiffness: [f64; 3],
    /// Displacement at which the hysteretic spring yields, mm.
    pub yield_displacement: [f64; 3],
    /// Post-yield to initial stiffness ratio.
    pub post_yield_ratio: [f64; 3],
    /// Bouc-Wen smoothness exponent.
    pub smoothness: f64,
    /// Coupling stiffness relative to `sqrt(k_i k_j)`; symmetric, zero
    /// diagonal.
    pub coupling: [[f64; 3]; 3],
    /// Integrator sub-steps per sample.
    pub substeps: usize,
}

const BETA: f64 = 0.5;
const GAMMA: f64 = 0.5;

impl NonlinearRigParams {
    /// Rig with natural frequencies `freq_hz` and damping ratio `zeta`,
    /// stiffness `k` on every axis.
    pub fn from_modes(freq_hz: [f64; 3], zeta: f64, k: f64) -> Self {
        let mut mass = [0.0; 3];
        let mut damping = [0.0; 3];
        for i in 0..3 {
            let w = 2.0 * std::f64::consts::PI * freq_hz[i];
            mass[i] = k / (w * w);
            damping[i] = 2.0 * zeta * (k * mass[i]).sqrt();
        }
        Self {
            mass,
            damping,
            stiffness: [k; 3],
            yield_displacement: [f64::INFINITY; 3],
            post_yield_ratio: [1.0; 3],
            smoothness: 2.0,
            coupling: [[0.0; 3]; 3],
            substeps: 8,
        }
    }

    /// Default surrogate: 12/18/25 Hz axes, 10 kN/mm, moderate hysteresis and
    /// weak coupling.
    pub fn moderate() -> Self {
        let mut p = Self::from_modes([12.0, 18.0, 25.0], 0.1, 10.0);
        p.yield_displacement = [0.15; 3];
        p.post_yield_ratio = [0.4; 3];
        p.coupling = [[0.0, 0.1, 0.05], [0.1, 0.0, 0.1], [0.05, 0.1, 0.0]];
        p
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if !(self.mass[i] > 0.0 && self.stiffness[i] > 0.0 && self.damping[i] > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "axis {i}: mass, stiffness and damping must be positive"
                )));
            }
            if !(self.yield_displacement[i] > 0.0) {
                return Err(Error::InvalidArgument(format!("axis {i}: yield displacement must be positive")));
            }
            if !(0.0..=1.0).contains(&self.post_yield_ratio[i]) {
                return Err(Error::InvalidArgument(format!("axis {i}: post-yield ratio outside [0, 1]")));
            }
            if self.coupling[i][i] != 0.0 {
                return Err(Error::InvalidArgument("coupling diagonal must be zero".into()));
            }
            for j in 0..3 {
                if self.coupling[i][j] != self.coupling[j][i] {
                    return Err(Error::InvalidArgument("coupling must be symmetric".into()));
                }
            }
        }
        // Gershgorin bound on the spectral radius.
        let radius = (0..3)
            .map(|i| self.coupling[i].iter().map(|c| c.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        if radius >= 1.0 {
            return Err(Error::InvalidArgument("coupling too strong (row sum >= 1)".into()));
        }
        if !(self.smoothness >= 1.0) || self.substeps == 0 {
            return Err(Error::InvalidArgument("smoothness >= 1 and substeps >= 1 required".into()));
        }
        Ok(())
    }
}

/// State: displacement, velocity, hysteretic variable per axis.
type State = [f64; 9];

struct Rig<'a> {
    p: &'a NonlinearRigParams,
    kc: [[f64; 3]; 3],
}

impl Rig<'_> {
    /// Spring, damper and coupling force of every axis.
    fn forces(&self, s: &State) -> [f64; 3] {
        let p = self.p;
        let mut f = [0.0; 3];
        for i in 0..3 {
            let (x, v, z) = (s[i], s[3 + i], s[6 + i]);
            let a = p.post_yield_ratio[i];
            let k = p.stiffness[i];
            let hyst = if p.yield_displacement[i].is_finite() {
                (1.0 - a) * k * p.yield_displacement[i] * z
            } else {
                (1.0 - a) * k * x
            };
            f[i] = a * k * x + hyst + p.damping[i] * v;
            for j in 0..3 {
                f[i] += self.kc[i][j] * (x - s[j]);
            }
        }
        f
    }

    fn derivative(&self, s: &State, u: [f64; 3]) -> State {
        let p = self.p;
        let f = self.forces(s);
        let mut d = [0.0; 9];
        for i in 0..3 {
            let v = s[3 + i];
            d[i] = v;
            d[3 + i] = (u[i] - f[i]) / p.mass[i];
            let xy = p.yield_displacement[i];
            if xy.is_finite() {
                let z = s[6 + i];
                let zn = z.abs().powf(p.smoothness);
                let sgn = (v * z).signum();
                d[6 + i] = v / xy * (1.0 - zn * (BETA * sgn + GAMMA));
            }
        }
        d
    }
}

fn axpy(s: &State, h: f64, d: &State) -> State {
    let mut out = *s;
    out.iter_mut().zip(d).for_each(|(o, v)| *o += h * v);
    out
}

/// Simulates the rig under a 3-channel force drive (kN).
///
/// Returns `disp_1..3` (mm) and `force_1..3`, the total restoring force of
/// each axis (kN), at the drive's sample rate. The drive is interpolated
/// linearly between samples.
pub fn rig_respond(params: &NonlinearRigParams, drive: &MultiChannelSignal) -> Result<MultiChannelSignal> {
    params.validate()?;
    if drive.n_channels() != 3 {
        return Err(Error::ChannelMismatch(format!(
            "rig needs a 3-channel drive, got {}",
            drive.n_channels()
        )));
    }
    let mut kc = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            kc[i][j] = params.coupling[i][j] * (params.stiffness[i] * params.stiffness[j]).sqrt();
        }
    }
    let rig = Rig { p: params, kc };
    let n = drive.len();
    let dt = 1.0 / drive.sample_rate();
    let m = params.substeps;
    let h = dt / m as f64;
    let mut s: State = [0.0; 9];
    let mut out = vec![vec![0.0; n]; 6];
    let at = |i: usize| [drive.channel(0)[i], drive.channel(1)[i], drive.channel(2)[i]];
    for i in 0..n {
        if i > 0 {
            let (u0, u1) = (at(i - 1), at(i));
            let lerp = |frac: f64| [0, 1, 2].map(|c| u0[c] + frac * (u1[c] - u0[c]));
            for sub in 0..m {
                let t0 = sub as f64 / m as f64;
                let tm = (sub as f64 + 0.5) / m as f64;
                let t1 = (sub as f64 + 1.0) / m as f64;
                let k1 = rig.derivative(&s, lerp(t0));
                let k2 = rig.derivative(&axpy(&s, h / 2.0, &k1), lerp(tm));
                let k3 = rig.derivative(&axpy(&s, h / 2.0, &k2), lerp(tm));
                let k4 = rig.derivative(&axpy(&s, h, &k3), lerp(t1));
                for j in 0..9 {
                    s[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
                }
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { index: i });
            }
        }
        let f = rig.forces(&s);
        for c in 0..3 {
            out[c][i] = s[c];
            out[3 + c][i] = f[c];
        }
    }
    let names = ["disp_1", "disp_2", "disp_3", "force_1", "force_2", "force_3"]
        .map(String::from)
        .to_vec();
    MultiChannelSignal::new(drive.sample_rate(), names, out)
}
