//! Electron energy-ladder wavefunctions: periodic combs with ideal or
//! Gaussian envelopes, dispersion phase profiles, and the angle-basis
//! profile used by the fast interaction engine.
//!
//! Ladder index n labels the energy E0 + n (in photon-energy units); a comb
//! with spacing N populates only indices congruent to its center offset
//! mod N.

use crate::error::{GkpError, Result};
use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq)]
pub enum CombEnvelope {
    Ideal,
    /// Standard deviation of the energy-spectrum weights |c_n|^2, in photon
    /// energy units.
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone)]
pub struct ElectronComb {
    /// Comb period N >= 1 in photon-energy units.
    pub spacing: usize,
    pub envelope: CombEnvelope,
    /// Ladder index of the envelope center; also the comb's residue mod N.
    pub center_offset: i64,
    /// Half-width: ladder indices center_offset - window ..= center_offset + window.
    pub window: usize,
    /// Amplitudes over the retained window, length 2*window + 1; slot j holds
    /// ladder index center_offset - window + j. Zero off the comb's residue.
    pub amplitudes: Vec<Complex64>,
    /// False when the window truncates the envelope noticeably.
    pub converged: bool,
}

impl ElectronComb {
    pub fn ladder_index(&self, slot: usize) -> i64 {
        self.center_offset - self.window as i64 + slot as i64
    }

    pub fn slot_count(&self) -> usize {
        2 * self.window + 1
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Indices of the comb sites (slots with residue matching center_offset).
    pub fn site_slots(&self) -> Vec<usize> {
        let n = self.spacing as i64;
        (0..self.slot_count())
            .filter(|&j| (self.ladder_index(j) - self.center_offset).rem_euclid(n) == 0)
            .collect()
    }
}

/// Uniform comb over the window: amplitude 1/sqrt(count) at ladder indices
/// shift + k N. The analytic interaction path treats ideal combs without any
/// window; windowed ones exist to cross-validate the open-ladder engines.
pub fn ideal_comb(spacing: usize, shift: i64, window: usize) -> Result<ElectronComb> {
    if spacing == 0 {
        return Err(GkpError::InvalidArgument("comb spacing must be >= 1".into()));
    }
    if window == 0 {
        return Err(GkpError::InvalidArgument("window must be >= 1".into()));
    }
    let mut comb = ElectronComb {
        spacing,
        envelope: CombEnvelope::Ideal,
        center_offset: shift,
        window,
        amplitudes: vec![Complex64::ZERO; 2 * window + 1],
        converged: true,
    };
    let sites = comb.site_slots();
    let w = Complex64::new(1.0 / (sites.len() as f64).sqrt(), 0.0);
    for j in sites {
        comb.amplitudes[j] = w;
    }
    Ok(comb)
}

/// Gaussian-envelope comb centered on ladder index 0: site amplitude at
/// index k N proportional to e^{-(kN)^2/(4 sigma^2)}, so the spectrum weights
/// |c|^2 have standard deviation sigma.
pub fn gaussian_comb(spacing: usize, sigma: f64, window: usize) -> Result<ElectronComb> {
    if spacing == 0 {
        return Err(GkpError::InvalidArgument("comb spacing must be >= 1".into()));
    }
    if !(sigma > 0.0) {
        return Err(GkpError::InvalidArgument("sigma must be positive".into()));
    }
    let mut comb = ElectronComb {
        spacing,
        envelope: CombEnvelope::Gaussian { sigma },
        center_offset: 0,
        window,
        amplitudes: vec![Complex64::ZERO; 2 * window + 1],
        converged: true,
    };
    let mut total = 0.0;
    for j in comb.site_slots() {
        let n = comb.ladder_index(j) as f64;
        let a = (-n * n / (4.0 * sigma * sigma)).exp();
        comb.amplitudes[j] = Complex64::new(a, 0.0);
        total += a * a;
    }
    let scale = 1.0 / total.sqrt();
    for c in &mut comb.amplitudes {
        *c *= scale;
    }
    // Window guard: the retained sites must cover the envelope. The residual
    // site weight beyond the window edge is a Gaussian tail at window/sigma
    // standard deviations.
    let edge = comb.window as f64 / sigma;
    comb.converged = (comb.window as f64) * (spacing as f64) >= 4.0 * sigma && edge >= 4.0;
    Ok(comb)
}

#[derive(Debug, Clone)]
pub enum PhaseProfile {
    /// One phase (radians) per window slot.
    Explicit(Vec<f64>),
    /// phi_n = -beta n^2 z at ladder index n: free-space quadratic dispersion
    /// accumulated over propagation distance z, coefficient beta in radians
    /// per index^2 per unit length.
    Quadratic { beta: f64, z: f64 },
}

impl PhaseProfile {
    pub fn phase_at(&self, slot: usize, ladder_index: i64) -> f64 {
        match self {
            PhaseProfile::Explicit(phases) => phases[slot],
            PhaseProfile::Quadratic { beta, z } => {
                let n = ladder_index as f64;
                -beta * n * n * z
            }
        }
    }
}

/// amplitude_n -> amplitude_n e^{i phi_n}; the energy spectrum is untouched.
pub fn apply_phase_profile(comb: &ElectronComb, profile: &PhaseProfile) -> Result<ElectronComb> {
    if let PhaseProfile::Explicit(phases) = profile {
        if phases.len() < comb.slot_count() {
            return Err(GkpError::InvalidArgument(format!(
                "phase profile length {} does not cover window {}",
                phases.len(),
                comb.slot_count()
            )));
        }
    }
    let mut out = comb.clone();
    for j in 0..out.slot_count() {
        let phi = profile.phase_at(j, out.ladder_index(j));
        out.amplitudes[j] *= Complex64::from_polar(1.0, phi);
    }
    Ok(out)
}

/// Comb amplitudes transformed to the shift-operator eigenbasis:
/// psi(theta_j) = sum_n c_n e^{i n theta_j} on theta_j = 2 pi j / samples,
/// n the ladder index. Discrete Parseval with this convention:
/// (1/samples) sum_j |psi(theta_j)|^2 = sum_n |c_n|^2.
pub fn fourier_profile(comb: &ElectronComb, theta_samples: usize) -> Result<Vec<Complex64>> {
    if theta_samples < 4 * comb.slot_count() {
        return Err(GkpError::InvalidArgument(format!(
            "theta_samples {} below 4x window size {}",
            theta_samples,
            4 * comb.slot_count()
        )));
    }
    let step = std::f64::consts::TAU / theta_samples as f64;
    Ok((0..theta_samples)
        .map(|j| {
            let theta = step * j as f64;
            (0..comb.slot_count())
                .map(|s| {
                    comb.amplitudes[s]
                        * Complex64::from_polar(1.0, comb.ladder_index(s) as f64 * theta)
                })
                .sum()
        })
        .collect())
}
