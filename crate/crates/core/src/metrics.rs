//! State characterization: quadrature peak analysis and squeezing
//! estimators, reference constructors (multi-component cats, square and
//! hexagonal grid states), envelope-optimized fidelity reports, and
//! coupling-jitter robustness.

use crate::electron::gaussian_comb;
use crate::error::{GkpError, Result};
use crate::fock::{
    coherent_amplitudes, displaced_squeezed_amplitudes, fidelity, quadrature_wavefunction,
    PhotonState, SqueezeParams,
};
use crate::math::{golden_max, linspace};
use crate::protocols::{coefficient_expansion, expansion_state, run_protocol, table1_preset, Protocol};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

/// Local maxima below this fraction of the global density maximum are not
/// counted as peaks.
pub const PEAK_THRESHOLD: f64 = 0.01;

/// Envelope-parameter search range for delta-optimized fidelities.
pub const DELTA_SEARCH: (f64, f64) = (0.05, 1.0);

/// One quadrature peak: center, within-peak variance, probability mass.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PeakFit {
    pub center: f64,
    pub variance: f64,
    pub weight: f64,
}

/// Peak decomposition of the density along one quadrature axis.
#[derive(Debug, Clone, Serialize)]
pub struct AxisPeaks {
    /// Quadrature angle; 0 is x, pi/2 is p.
    pub axis: f64,
    pub peaks: Vec<PeakFit>,
}

impl AxisPeaks {
    /// Probability-weighted within-peak variance.
    pub fn pooled_variance(&self) -> f64 {
        let mass: f64 = self.peaks.iter().map(|p| p.weight).sum();
        self.peaks.iter().map(|p| p.weight * p.variance).sum::<f64>() / mass
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FidelityEntry {
    pub label: String,
    pub fidelity: f64,
    /// Maximizing envelope parameter, for references with a free envelope.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsBundle {
    /// (axis angle, dB) per requested axis.
    pub squeezing_db: Vec<(f64, f64)>,
    pub fidelities: Vec<FidelityEntry>,
    pub probability: f64,
    pub peak_fit: Vec<AxisPeaks>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GridLattice {
    Square,
    Hexagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GridLogical {
    Zero,
    One,
    Plus,
    Minus,
    H,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GridConstruction {
    /// Gaussian-weighted comb of displaced squeezed peaks on the logical
    /// sublattice; delta sets both the peak width and the inverse envelope
    /// width.
    EnvelopeComb,
    /// Long-schedule limit of the matching preset; the envelope is pinned by
    /// the schedule length, so delta is ignored.
    ProtocolLimit,
}

/// Finite-energy grid-state reference. Peak variance along the squeezed
/// axes is delta^2/2, so delta^2 = 10^(-S_dB/10).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GkpReference {
    pub lattice: GridLattice,
    pub logical: GridLogical,
    pub delta: f64,
    pub construction: GridConstruction,
}

impl GkpReference {
    pub fn square(logical: GridLogical, delta: f64) -> Self {
        GkpReference {
            lattice: GridLattice::Square,
            logical,
            delta,
            construction: GridConstruction::EnvelopeComb,
        }
    }

    pub fn label(&self) -> String {
        let lattice = match self.lattice {
            GridLattice::Square => "square",
            GridLattice::Hexagonal => "hexagonal",
        };
        let logical = match self.logical {
            GridLogical::Zero => "0",
            GridLogical::One => "1",
            GridLogical::Plus => "+",
            GridLogical::Minus => "-",
            GridLogical::H => "H",
            GridLogical::T => "T",
        };
        format!("{lattice} |{logical}>")
    }
}

/// Reference requested from a fidelity report.
#[derive(Debug, Clone)]
pub enum ReferenceSpec {
    Grid(GkpReference),
    Cat {
        components: usize,
        k: usize,
        alpha: Complex64,
    },
}

impl ReferenceSpec {
    pub fn label(&self) -> String {
        match self {
            ReferenceSpec::Grid(g) => g.label(),
            ReferenceSpec::Cat { components, k, .. } => format!("cat[{components},{k}]"),
        }
    }
}

/// |psi|^2 along the rotated quadrature on an auto-sized uniform grid.
pub fn quadrature_density(state: &PhotonState, axis: f64) -> (Vec<f64>, Vec<f64>) {
    let nbar = state.mean_photon_number().max(0.0);
    let xmax = (2.0 * (nbar + 1.0)).sqrt() * 1.5 + 4.0;
    let step = 0.005;
    let n = (2.0 * xmax / step).ceil() as usize + 1;
    let xs = linspace(-xmax, xmax, n);
    let psi = quadrature_wavefunction(state, axis, &xs);
    let dens: Vec<f64> = psi.iter().map(|c| c.norm_sqr()).collect();
    (xs, dens)
}

/// Detects density peaks along the axis (local maxima above the threshold
/// fraction of the global maximum) and fits each by the moments of its
/// midpoint-bounded segment.
pub fn peak_analysis(state: &PhotonState, axis: f64) -> Result<AxisPeaks> {
    let (xs, dens) = quadrature_density(state, axis);
    let max = dens.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Err(GkpError::NoPeaks("density is identically zero".into()));
    }
    let mut centers = Vec::new();
    for i in 1..dens.len() - 1 {
        if dens[i] >= dens[i - 1] && dens[i] > dens[i + 1] && dens[i] >= PEAK_THRESHOLD * max {
            centers.push(i);
        }
    }
    if centers.is_empty() {
        return Err(GkpError::NoPeaks(
            "no quadrature peaks above threshold".into(),
        ));
    }
    let mut bounds = Vec::with_capacity(centers.len() + 1);
    bounds.push(0usize);
    for pair in centers.windows(2) {
        bounds.push((pair[0] + pair[1]) / 2);
    }
    bounds.push(dens.len());
    let mut peaks = Vec::with_capacity(centers.len());
    for (k, &c) in centers.iter().enumerate() {
        // Moments over the contiguous run around the maximum that stays
        // above 1e-4 of its height; keeps sub-threshold neighbors and the
        // inter-peak floor out of the segment moments.
        let floor = dens[c] * 1e-4;
        let mut lo = c;
        while lo > bounds[k] && dens[lo - 1] >= floor {
            lo -= 1;
        }
        let mut hi = c;
        while hi + 1 < bounds[k + 1] && dens[hi + 1] >= floor {
            hi += 1;
        }
        let seg = lo..=hi;
        let mass: f64 = dens[seg.clone()].iter().sum();
        let mean: f64 = seg.clone().map(|i| xs[i] * dens[i]).sum::<f64>() / mass;
        let var: f64 = seg
            .clone()
            .map(|i| (xs[i] - mean) * (xs[i] - mean) * dens[i])
            .sum::<f64>()
            / mass;
        let step = xs[1] - xs[0];
        peaks.push(PeakFit {
            center: mean,
            variance: var,
            weight: mass * step,
        });
    }
    Ok(AxisPeaks { axis, peaks })
}

fn check_resolvable(analysis: &AxisPeaks) -> Result<()> {
    if analysis.peaks.len() < 2 {
        return Ok(());
    }
    let width = analysis
        .peaks
        .iter()
        .map(|p| p.variance.sqrt())
        .fold(0.0f64, f64::max);
    let spacing = analysis
        .peaks
        .windows(2)
        .map(|w| w[1].center - w[0].center)
        .fold(f64::INFINITY, f64::min);
    if spacing <= 4.0 * width {
        return Err(GkpError::NoPeaks(format!(
            "peaks unresolved (spacing {spacing:.3} <= 4 x width {width:.3}); \
             use the closed-form squeezing estimator"
        )));
    }
    Ok(())
}

/// Squeezing in dB from the probability-weighted within-peak variance,
/// relative to the vacuum variance 1/2: 10 log10(0.5/Var).
pub fn squeezing_db_peaks(state: &PhotonState, axis: f64) -> Result<f64> {
    let analysis = peak_analysis(state, axis)?;
    check_resolvable(&analysis)?;
    Ok(10.0 * (0.5 / analysis.pooled_variance()).log10())
}

/// Closed-form squeezing of the grid-growing schedules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SqueezingScheme {
    /// Grid grown from vacuum with m half-step interactions on the
    /// perpendicular axis.
    GridFromVacuum { m: usize },
    /// Grid grown from a squeezed seed with the stated number of electrons.
    GridFromSeed { electrons: usize, r: f64 },
}

pub fn squeezing_db_analytic(scheme: SqueezingScheme) -> f64 {
    match scheme {
        SqueezingScheme::GridFromVacuum { m } => 10.0 * (1.0 + PI * m as f64).log10(),
        SqueezingScheme::GridFromSeed { electrons, r } => {
            10.0 * ((-2.0 * r).exp() + PI * electrons as f64).log10()
        }
    }
}

/// N-component cat of order k: sum over e^{-i 2 pi m k / N} |alpha w^m>
/// with w the N-th root of unity, normalized.
pub fn make_cat_reference(
    components: usize,
    k: usize,
    alpha: Complex64,
    cutoff: usize,
) -> Result<PhotonState> {
    if components == 0 {
        return Err(GkpError::InvalidArgument("components must be >= 1".into()));
    }
    if k >= components {
        return Err(GkpError::InvalidArgument(format!(
            "order {k} outside 0..{components}"
        )));
    }
    let mut amps = vec![Complex64::ZERO; cutoff + 1];
    for m in 0..components {
        let w = Complex64::from_polar(1.0, -TAU * (m * k) as f64 / components as f64);
        let rotated = alpha * Complex64::from_polar(1.0, TAU * m as f64 / components as f64);
        for (a, b) in amps.iter_mut().zip(coherent_amplitudes(rotated, cutoff)) {
            *a += w * b;
        }
    }
    let state = PhotonState::from_amplitudes(amps);
    // Destructive interference leaves rounding residue rather than an exact
    // zero; treat anything at that scale as the zero vector.
    if state.norm_sqr() < 1e-20 {
        return Err(GkpError::ZeroNorm(format!(
            "cat components cancel for components={components}, k={k}, alpha={alpha}"
        )));
    }
    state.normalized()
}

/// Per-peak weight of the logical state on sublattice site s.
fn logical_weight(logical: GridLogical, s: i64) -> Complex64 {
    let even = s.rem_euclid(2) == 0;
    match logical {
        GridLogical::Zero => {
            if even {
                Complex64::ONE
            } else {
                Complex64::ZERO
            }
        }
        GridLogical::One => {
            if even {
                Complex64::ZERO
            } else {
                Complex64::ONE
            }
        }
        GridLogical::Plus => Complex64::ONE,
        GridLogical::Minus => {
            if even {
                Complex64::ONE
            } else {
                -Complex64::ONE
            }
        }
        GridLogical::H => {
            if even {
                Complex64::new((PI / 8.0).cos(), 0.0)
            } else {
                Complex64::new((PI / 8.0).sin(), 0.0)
            }
        }
        GridLogical::T => {
            if even {
                Complex64::ONE
            } else {
                Complex64::from_polar(1.0, PI / 4.0)
            }
        }
    }
}

fn truncation_pressure(state: &mut PhotonState) {
    let top = state.amplitudes.len().saturating_sub(2);
    state.norm_leak = state.amplitudes[top..].iter().map(|c| c.norm_sqr()).sum();
}

fn envelope_comb_state(reference: &GkpReference, cutoff: usize) -> Result<PhotonState> {
    if reference.lattice != GridLattice::Square {
        return Err(GkpError::InvalidArgument(
            "hexagonal references are built from the schedule limit".into(),
        ));
    }
    let delta = reference.delta;
    let params = SqueezeParams::new((1.0 / delta).ln(), 0.0);
    let smax = (5.0 / delta).ceil() as i64 + 1;
    let mut amps = vec![Complex64::ZERO; cutoff + 1];
    for s in -smax..=smax {
        let w = logical_weight(reference.logical, s);
        if w == Complex64::ZERO {
            continue;
        }
        let x = s as f64 * PI.sqrt();
        let envelope = (-delta * delta * x * x / 2.0).exp();
        if envelope < 1e-18 {
            continue;
        }
        let gamma = Complex64::new(x / 2f64.sqrt(), 0.0);
        let branch = displaced_squeezed_amplitudes(gamma, &params, cutoff);
        let weight = w * envelope;
        for (a, b) in amps.iter_mut().zip(branch) {
            *a += weight * b;
        }
    }
    let mut state = PhotonState::from_amplitudes(amps).normalized()?;
    truncation_pressure(&mut state);
    Ok(state)
}

/// Preset row and repetition count whose long-schedule limit realizes the
/// logical state.
fn protocol_limit_recipe(lattice: GridLattice, logical: GridLogical) -> Result<(usize, usize)> {
    match (lattice, logical) {
        (GridLattice::Square, GridLogical::Zero) => Ok((2, 12)),
        (GridLattice::Square, GridLogical::One) => Ok((2, 13)),
        (GridLattice::Square, GridLogical::H) => Ok((3, 12)),
        (GridLattice::Hexagonal, GridLogical::Zero) => Ok((6, 12)),
        (GridLattice::Hexagonal, GridLogical::T) => Ok((7, 12)),
        (lattice, logical) => Err(GkpError::InvalidArgument(format!(
            "no schedule-limit recipe for {lattice:?} {logical:?}"
        ))),
    }
}

fn protocol_limit_state(reference: &GkpReference, cutoff: usize) -> Result<PhotonState> {
    let (row, m) = protocol_limit_recipe(reference.lattice, reference.logical)?;
    let preset = table1_preset(row, m)?;
    let expansion = coefficient_expansion(&preset)?;
    let mut state = expansion_state(&expansion, &preset.initial, cutoff)?;
    truncation_pressure(&mut state);
    Ok(state)
}

/// Builds the finite-energy grid reference at the cutoff. Truncation
/// pressure is reported through the state's norm_leak field.
pub fn make_gkp_reference(reference: &GkpReference, cutoff: usize) -> Result<PhotonState> {
    if !(reference.delta > 0.0 && reference.delta.is_finite()) {
        return Err(GkpError::InvalidArgument(format!(
            "delta must be positive, got {}",
            reference.delta
        )));
    }
    match reference.construction {
        GridConstruction::EnvelopeComb => envelope_comb_state(reference, cutoff),
        GridConstruction::ProtocolLimit => protocol_limit_state(reference, cutoff),
    }
}

fn fidelity_entry(state: &PhotonState, spec: &ReferenceSpec) -> Result<FidelityEntry> {
    let label = spec.label();
    match spec {
        ReferenceSpec::Cat {
            components,
            k,
            alpha,
        } => {
            let reference = make_cat_reference(*components, *k, *alpha, state.cutoff)?;
            Ok(FidelityEntry {
                label,
                fidelity: fidelity(state, &reference)?,
                delta: None,
            })
        }
        ReferenceSpec::Grid(grid) if grid.construction == GridConstruction::ProtocolLimit => {
            let reference = make_gkp_reference(grid, state.cutoff)?;
            Ok(FidelityEntry {
                label,
                fidelity: fidelity(state, &reference)?,
                delta: None,
            })
        }
        ReferenceSpec::Grid(grid) => {
            let (delta, best) = golden_max(
                |delta| {
                    let trial = GkpReference { delta, ..*grid };
                    make_gkp_reference(&trial, state.cutoff)
                        .and_then(|r| fidelity(state, &r))
                        .unwrap_or(0.0)
                },
                DELTA_SEARCH.0,
                DELTA_SEARCH.1,
                1e-3,
            );
            Ok(FidelityEntry {
                label,
                fidelity: best,
                delta: Some(delta),
            })
        }
    }
}

/// Fidelity against each reference; grid references with a free envelope are
/// maximized over delta (golden section, tolerance 1e-3) and the maximizing
/// delta is reported.
pub fn fidelity_report(state: &PhotonState, refs: &[ReferenceSpec]) -> Result<Vec<FidelityEntry>> {
    refs.iter().map(|r| fidelity_entry(state, r)).collect()
}

/// Squeezing axes for the square grid.
pub fn square_squeeze_axes() -> [f64; 2] {
    [0.0, FRAC_PI_2]
}

/// Squeezing axes for the hexagonal grid: orthogonal to the three
/// displacement directions.
pub fn hex_squeeze_axes() -> [f64; 3] {
    [
        PI / 12.0 + FRAC_PI_2,
        PI / 12.0 + 2.0 * PI / 3.0 + FRAC_PI_2,
        PI / 12.0 + 4.0 * PI / 3.0 + FRAC_PI_2,
    ]
}

/// Assembles the characterization bundle: per-axis peak fits and squeezing,
/// reference fidelities, and the heralding probability passthrough.
pub fn metrics_bundle(
    state: &PhotonState,
    probability: f64,
    axes: &[f64],
    refs: &[ReferenceSpec],
) -> Result<MetricsBundle> {
    let mut squeezing_db = Vec::with_capacity(axes.len());
    let mut peak_fit = Vec::with_capacity(axes.len());
    for &axis in axes {
        let analysis = peak_analysis(state, axis)?;
        check_resolvable(&analysis)?;
        squeezing_db.push((axis, 10.0 * (0.5 / analysis.pooled_variance()).log10()));
        peak_fit.push(analysis);
    }
    Ok(MetricsBundle {
        squeezing_db,
        fidelities: fidelity_report(state, refs)?,
        probability,
        peak_fit,
    })
}

/// Monte Carlo robustness against amplitude jitter of the couplings: each
/// step's |g| is drawn from Normal(|g|, delta_g) with the phase fixed, the
/// schedule is re-run, and fidelity to the nominal output is recorded.
/// Returns (mean, population std); deterministic for a given seed.
pub fn jitter_robustness(
    protocol: &Protocol,
    delta_g: f64,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if !(0.0..=0.25).contains(&delta_g) {
        return Err(GkpError::InvalidArgument(format!(
            "delta_g {delta_g} outside the validated range [0, 0.25]"
        )));
    }
    if samples == 0 {
        return Err(GkpError::InvalidArgument("samples must be >= 1".into()));
    }
    let nominal = run_protocol(protocol)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fids = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut jittered = protocol.clone();
        for step in &mut jittered.steps {
            let dist = Normal::new(step.g.norm(), delta_g)
                .map_err(|e| GkpError::InvalidArgument(format!("jitter distribution: {e}")))?;
            let amplitude = dist.sample(&mut rng).max(0.0);
            step.g = Complex64::from_polar(amplitude, step.g.arg());
        }
        let out = run_protocol(&jittered)?;
        fids.push(fidelity(&out.state, &nominal.state)?);
    }
    let n = fids.len() as f64;
    let mean = fids.iter().sum::<f64>() / n;
    let var = fids.iter().map(|f| (f - mean) * (f - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Probability-weighted fidelity of a Gaussian-comb electron's exact exit
/// outcomes to the parity-matched two-component cat, over outcomes within
/// three envelope widths of the post-interaction envelope center (the
/// envelope shifts down by the mean created photon number |g|^2, rounded to
/// the nearest comb site). Uses the closed-form joint state for a vacuum
/// input.
pub fn finite_comb_cat_fidelity(g: Complex64, sigma: f64, cutoff: usize) -> Result<f64> {
    let window = (4.0 * sigma).ceil() as usize + 2;
    let comb = gaussian_comb(2, sigma, window)?;
    let coh = coherent_amplitudes(g, cutoff);
    let references = [
        make_cat_reference(2, 0, g, cutoff)?,
        make_cat_reference(2, 1, g, cutoff)?,
    ];
    let center = 2 * (-g.norm_sqr() / 2.0).round() as i64;
    let span = (3.0 * sigma).floor() as i64;
    let comb_amp = |ladder: i64| -> Complex64 {
        let slot = ladder + window as i64;
        if (0..comb.slot_count() as i64).contains(&slot) {
            comb.amplitudes[slot as usize]
        } else {
            Complex64::ZERO
        }
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for exit in center - span..=center + span {
        let amps: Vec<Complex64> = (0..=cutoff)
            .map(|n| comb_amp(exit + n as i64) * coh[n])
            .collect();
        let branch = PhotonState::from_amplitudes(amps);
        let p = branch.norm_sqr();
        if p < 1e-300 {
            continue;
        }
        let reference = &references[exit.rem_euclid(2) as usize];
        let f = fidelity(&branch, reference)?;
        num += p * f;
        den += p;
    }
    if den < 1e-300 {
        return Err(GkpError::ZeroProbability(
            "no comb outcomes within the averaging span".into(),
        ));
    }
    Ok(num / den)
}
