//! Synthetic UE→RIS→BS channels and the co-phasing phase-shift matrix.
//!
//! Each link is a clustered geometric channel: a sum over paths of a complex
//! Gaussian gain times the steering vector of the M×M uniform planar array
//! that forms the surface. The generator is deterministic in `(seed, index)`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Largest `f64` below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PhaseDomain {
    /// Radians in `[0, 2π)`.
    Raw,
    /// Fractions of a turn in `[0, 1)`.
    Normalized,
}

/// M×M phase shifts of the surface, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseShiftMatrix {
    side: usize,
    values: Vec<f64>,
    domain: PhaseDomain,
}

impl PhaseShiftMatrix {
    pub fn new(side: usize, values: Vec<f64>, domain: PhaseDomain) -> Result<Self> {
        if side == 0 || values.len() != side * side {
            return Err(Error::shape(
                format!("{side}×{side} phases"),
                format!("{} values", values.len()),
            ));
        }
        let upper = match domain {
            PhaseDomain::Raw => TAU,
            PhaseDomain::Normalized => 1.0,
        };
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && **v < upper)) {
            return Err(Error::Domain(format!(
                "phase {bad} outside [0, {upper}) for {domain:?} matrix"
            )));
        }
        Ok(PhaseShiftMatrix { side, values, domain })
    }

    /// Builds a matrix from the length-N phase vector φ (row-major).
    pub fn from_vector(values: Vec<f64>, domain: PhaseDomain) -> Result<Self> {
        let side = square_side(values.len())?;
        Self::new(side, values, domain)
    }

    pub fn zeros(side: usize, domain: PhaseDomain) -> Self {
        PhaseShiftMatrix {
            side,
            values: vec![0.0; side * side],
            domain,
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn domain(&self) -> PhaseDomain {
        self.domain
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.side + col]
    }

    /// Maps `[0, 2π)` onto `[0, 1)`.
    pub fn normalize(&self) -> Result<Self> {
        if self.domain != PhaseDomain::Raw {
            return Err(Error::Domain("matrix is already normalized".into()));
        }
        let values = self.values.iter().map(|v| (v / TAU).min(BELOW_ONE)).collect();
        Ok(PhaseShiftMatrix {
            side: self.side,
            values,
            domain: PhaseDomain::Normalized,
        })
    }

    /// Inverse of [`normalize`](Self::normalize).
    pub fn denormalize(&self) -> Result<Self> {
        if self.domain != PhaseDomain::Normalized {
            return Err(Error::Domain("matrix is already in radians".into()));
        }
        let values = self.values.iter().map(|v| (v * TAU).min(TAU.next_down())).collect();
        Ok(PhaseShiftMatrix {
            side: self.side,
            values,
            domain: PhaseDomain::Raw,
        })
    }

    /// Normalized copy regardless of the current domain.
    pub fn to_normalized(&self) -> Self {
        match self.domain {
            PhaseDomain::Normalized => self.clone(),
            PhaseDomain::Raw => self.normalize().expect("raw matrix"),
        }
    }

    /// Raw copy regardless of the current domain.
    pub fn to_raw(&self) -> Self {
        match self.domain {
            PhaseDomain::Raw => self.clone(),
            PhaseDomain::Normalized => self.denormalize().expect("normalized matrix"),
        }
    }
}

/// Reduces an angle into `[0, 2π)`.
pub fn wrap_phase(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

fn square_side(n: usize) -> Result<usize> {
    let side = (n as f64).sqrt().round() as usize;
    if side == 0 || side * side != n {
        return Err(Error::config(format!("{n} elements do not form a square surface")));
    }
    Ok(side)
}

/// UE→RIS and RIS→BS channel vectors of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub h_sr: Vec<Complex64>,
    pub h_rd: Vec<Complex64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelConfig {
    /// Surface side M; the surface has N = M² elements.
    pub side: usize,
    pub paths_sr: usize,
    pub paths_rd: usize,
    /// Total expected power of each link, split evenly across its paths.
    pub gain_variance: f64,
    /// Azimuth range in radians.
    pub azimuth: (f64, f64),
    /// Elevation range in radians.
    pub elevation: (f64, f64),
    /// Element spacing in wavelengths.
    pub spacing: f64,
    pub seed: u64,
}

impl ChannelConfig {
    /// One path per link with angles within ±10° azimuth and ±5° elevation
    /// of broadside. Wider sectors or more paths give optimal phase maps
    /// that small autoencoders cannot learn beyond the mean prediction.
    pub fn new(side: usize, seed: u64) -> Self {
        ChannelConfig {
            side,
            paths_sr: 1,
            paths_rd: 1,
            gain_variance: 1.0,
            azimuth: (-PI / 18.0, PI / 18.0),
            elevation: (-PI / 36.0, PI / 36.0),
            spacing: 0.5,
            seed,
        }
    }

    pub fn with_paths(mut self, paths: usize) -> Self {
        self.paths_sr = paths;
        self.paths_rd = paths;
        self
    }

    pub fn elements(&self) -> usize {
        self.side * self.side
    }

    pub fn validate(&self) -> Result<()> {
        if self.side == 0 {
            return Err(Error::config("surface side must be positive"));
        }
        if self.paths_sr == 0 || self.paths_rd == 0 {
            return Err(Error::config("each link needs at least one path"));
        }
        if !(self.gain_variance > 0.0 && self.gain_variance.is_finite()) {
            return Err(Error::config("gain variance must be positive"));
        }
        for (name, (lo, hi)) in [("azimuth", self.azimuth), ("elevation", self.elevation)] {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::config(format!("invalid {name} range [{lo}, {hi}]")));
            }
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::config("element spacing must be positive"));
        }
        Ok(())
    }
}

/// Unit-norm UPA response: element (m, n) has phase
/// `2π·d·(m·sin(az)·cos(el) + n·sin(el))`, scaled by `1/√N`.
pub fn steering_vector(side: usize, spacing: f64, azimuth: f64, elevation: f64) -> Vec<Complex64> {
    let u = azimuth.sin() * elevation.cos();
    let v = elevation.sin();
    let norm = 1.0 / (side as f64);
    let mut out = Vec::with_capacity(side * side);
    for m in 0..side {
        for n in 0..side {
            let phase = TAU * spacing * (m as f64 * u + n as f64 * v);
            out.push(Complex64::from_polar(norm, phase));
        }
    }
    out
}

fn complex_gaussian(rng: &mut ChaCha8Rng, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn link(rng: &mut ChaCha8Rng, cfg: &ChannelConfig, paths: usize) -> Vec<Complex64> {
    let mut h = vec![Complex64::new(0.0, 0.0); cfg.elements()];
    let var = cfg.gain_variance / paths as f64;
    for _ in 0..paths {
        let gain = complex_gaussian(rng, var);
        let az = uniform(rng, cfg.azimuth);
        let el = uniform(rng, cfg.elevation);
        for (acc, a) in h.iter_mut().zip(steering_vector(cfg.side, cfg.spacing, az, el)) {
            *acc += gain * a;
        }
    }
    h
}

/// Channel sample `index` of the stream defined by `cfg.seed`.
pub fn gen_channel(cfg: &ChannelConfig, index: u64) -> Result<ChannelRealization> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let h_sr = link(&mut rng, cfg, cfg.paths_sr);
    let h_rd = link(&mut rng, cfg, cfg.paths_rd);
    Ok(ChannelRealization { h_sr, h_rd })
}

/// Sign convention for the optimal phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PhaseSign {
    /// `θ_i = −arg(h_sr,i·h_rd,i)`, which aligns every cascaded term.
    #[default]
    CoPhase,
    /// `θ_i = +arg(h_sr,i·h_rd,i)`.
    Literal,
}

pub fn optimal_phase(h_sr: &[Complex64], h_rd: &[Complex64]) -> Result<PhaseShiftMatrix> {
    optimal_phase_with(h_sr, h_rd, PhaseSign::CoPhase)
}

/// Per-element phase maximizing `|Σ h_rd,i·e^{jθ_i}·h_sr,i|`. Elements whose
/// product is zero get phase 0.
pub fn optimal_phase_with(h_sr: &[Complex64], h_rd: &[Complex64], sign: PhaseSign) -> Result<PhaseShiftMatrix> {
    if h_sr.len() != h_rd.len() {
        return Err(Error::shape(
            format!("{} channel entries", h_sr.len()),
            format!("{} entries", h_rd.len()),
        ));
    }
    let side = square_side(h_sr.len())?;
    let values = h_sr
        .iter()
        .zip(h_rd)
        .map(|(a, b)| {
            let p = a * b;
            if p.re == 0.0 && p.im == 0.0 {
                return 0.0;
            }
            match sign {
                PhaseSign::CoPhase => wrap_phase(-p.arg()),
                PhaseSign::Literal => wrap_phase(p.arg()),
            }
        })
        .collect();
    Ok(PhaseShiftMatrix {
        side,
        values,
        domain: PhaseDomain::Raw,
    })
}

/// Equivalent channel `Σ_i h_rd,i·e^{jθ_i}·h_sr,i` with unit reflection
/// amplitude.
pub fn cascaded_gain(h_sr: &[Complex64], h_rd: &[Complex64], phases: &PhaseShiftMatrix) -> Result<Complex64> {
    if phases.domain() != PhaseDomain::Raw {
        return Err(Error::Domain("cascaded gain needs phases in radians".into()));
    }
    let n = phases.values().len();
    if h_sr.len() != n || h_rd.len() != n {
        return Err(Error::shape(
            format!("{n} channel entries"),
            format!("{} / {}", h_sr.len(), h_rd.len()),
        ));
    }
    Ok(h_sr
        .iter()
        .zip(h_rd)
        .zip(phases.values())
        .map(|((s, r), &t)| r * Complex64::from_polar(1.0, t) * s)
        .sum())
}

/// Normalized optimal phase matrices for samples `0..count`.
pub fn generate_phase_dataset(cfg: &ChannelConfig, count: usize) -> Result<Vec<PhaseShiftMatrix>> {
    (0..count as u64)
        .map(|i| {
            let ch = gen_channel(cfg, i)?;
            optimal_phase(&ch.h_sr, &ch.h_rd)?.normalize()
        })
        .collect()
}
