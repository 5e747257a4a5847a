//! Self-validation suite: every headline number the library is expected to
//! reproduce, packaged as pass/fail items shared by the acceptance tests and
//! the CLI `validate` command.

use crate::electron::{ideal_comb, CombEnvelope};
use crate::fock::{
    fidelity, make_coherent, wigner_point, PhotonState, SqueezeParams,
};
use crate::math::{linear_fit, r_squared};
use crate::metrics::{
    fidelity_report, finite_comb_cat_fidelity, jitter_robustness, make_cat_reference,
    squeezing_db_analytic, squeezing_db_peaks, GkpReference, GridConstruction, GridLattice,
    GridLogical, ReferenceSpec, SqueezingScheme,
};
use crate::protocols::{
    bell_scan, coefficient_expansion, row2_probability, row5_probability, run_protocol,
    square_half_step, table1_preset, CombSpec, Engine, InitialState, InteractionStep, Protocol,
};
use crate::scatter::{
    cat_probability, conditional_kraus, joint_scatter_fourier, joint_scatter_ladder, postselect,
    PostSelection,
};
use crate::Result;
use ndarray::Array2;
use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;
use std::time::Instant;

/// Extent of the validation run. The extended tier adds the large preset
/// probability spot checks (tens of electrons), everything else is shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckTier {
    Default,
    Extended,
}

/// One validation item: a named claim, whether it held, and the numbers
/// behind the verdict.
#[derive(Debug, Clone, Serialize)]
pub struct CheckItem {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub measured: String,
    pub expected: String,
    pub detail: String,
    pub runtime_ms: u64,
}

impl CheckItem {
    pub fn render_line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let mut line = format!(
            "check {:02} {:<28} {}  measured: {}  expected: {}",
            self.id, self.name, verdict, self.measured, self.expected
        );
        if !self.detail.is_empty() {
            line.push_str("  [");
            line.push_str(&self.detail);
            line.push(']');
        }
        line
    }
}

fn run_check<F>(id: u8, name: &'static str, body: F) -> CheckItem
where
    F: FnOnce() -> Result<(bool, String, String, String)>,
{
    let start = Instant::now();
    let (pass, measured, expected, detail) = match body() {
        Ok(t) => t,
        Err(e) => (false, "errored".into(), String::new(), e.to_string()),
    };
    CheckItem {
        id,
        name,
        pass,
        measured,
        expected,
        detail,
        runtime_ms: start.elapsed().as_millis() as u64,
    }
}

fn coupling_matrix() -> Vec<f64> {
    vec![0.5, (PI / 2.0).sqrt(), 2.0, 4.0]
}

/// Closed-form class probabilities against ladder-engine post-selection for
/// every coupling/spacing/class combination in the matrix.
pub fn check_branch_probabilities() -> CheckItem {
    run_check(1, "branch_probabilities", || {
        let mut max_dp = 0.0f64;
        let mut cells = 0usize;
        for gn in coupling_matrix() {
            let g = Complex64::new(gn, 0.0);
            let window = 8 * (gn * gn + gn).ceil().max(1.0) as usize;
            let cutoff = (gn * gn + 6.0 * gn + 10.0).ceil() as usize;
            let photon = PhotonState::vacuum(cutoff);
            for spacing in [2usize, 3, 4] {
                let comb = ideal_comb(spacing, 0, window)?;
                let joint = joint_scatter_ladder(&comb, &photon, g);
                for k in 0..spacing {
                    let analytic = cat_probability(g, spacing, k)?;
                    let (_, p) = postselect(
                        &joint,
                        &PostSelection::Residue {
                            lost: k as i64,
                            modulus: spacing,
                        },
                    )?;
                    max_dp = max_dp.max((analytic - p).abs());
                    cells += 1;
                }
            }
        }
        Ok((
            max_dp < 1e-6,
            format!("max |dP| = {max_dp:.2e} over {cells} classes"),
            "|dP| < 1e-6".into(),
            String::new(),
        ))
    })
}

/// Conditional branch operators resolve the identity on the block truncation
/// cannot reach, and the closed-form branch probabilities sum to one.
pub fn check_kraus_completeness() -> CheckItem {
    run_check(2, "kraus_completeness", || {
        let cutoff = 100;
        let block = 20;
        let mut max_id_dev = 0.0f64;
        for gn in [0.5, (PI / 2.0).sqrt(), 2.0] {
            let g = Complex64::new(gn, 0.0);
            for spacing in [2usize, 3, 4] {
                let mut total = Array2::<Complex64>::zeros((cutoff + 1, cutoff + 1));
                for k in 0..spacing {
                    let op = conditional_kraus(g, spacing, k, cutoff)?;
                    let ktk = op.dagger().compose(&op);
                    total += &ktk.entries;
                }
                for n in 0..=block {
                    for m in 0..=block {
                        let expected = if n == m { 1.0 } else { 0.0 };
                        max_id_dev = max_id_dev.max((total[(n, m)] - expected).norm());
                    }
                }
            }
        }
        let mut max_sum_dev = 0.0f64;
        for gn in coupling_matrix() {
            let g = Complex64::new(gn, 0.0);
            for spacing in [2usize, 3, 4] {
                let sum: f64 = (0..spacing)
                    .map(|k| cat_probability(g, spacing, k))
                    .sum::<Result<f64>>()?;
                max_sum_dev = max_sum_dev.max((sum - 1.0).abs());
            }
        }
        Ok((
            max_id_dev < 1e-10 && max_sum_dev < 1e-10,
            format!("identity dev {max_id_dev:.2e}, probability sum dev {max_sum_dev:.2e}"),
            "both < 1e-10".into(),
            format!("identity checked on the contained block 0..={block} at cutoff {cutoff}"),
        ))
    })
}

/// Direct ladder evolution against the angle-decomposition engine: same
/// joint state, and total excitation conserved.
pub fn check_engine_equivalence() -> CheckItem {
    run_check(3, "engine_equivalence", || {
        let photon = make_coherent(Complex64::new(1.1, 0.3), 40);
        let mut min_fid = 1.0f64;
        let mut max_exc_dev = 0.0f64;
        for gn in coupling_matrix() {
            let g = Complex64::new(gn, 0.0);
            let window = 8 * (gn * gn + gn).ceil().max(1.0) as usize;
            for spacing in [2usize, 3, 4] {
                let comb = ideal_comb(spacing, 0, window)?;
                let before = joint_scatter_ladder(&comb, &photon, Complex64::ZERO)
                    .total_excitation();
                let ladder = joint_scatter_ladder(&comb, &photon, g);
                max_exc_dev = max_exc_dev.max((ladder.total_excitation() - before).abs());
                let fourier = joint_scatter_fourier(&comb, &photon, g, 8 * comb.slot_count())?;
                let overlap: Complex64 = ladder
                    .amplitudes
                    .iter()
                    .zip(fourier.amplitudes.iter())
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                let fid = overlap.norm_sqr() / (ladder.norm_sqr() * fourier.norm_sqr());
                min_fid = min_fid.min(fid);
            }
        }
        Ok((
            min_fid > 1.0 - 1e-8 && max_exc_dev < 1e-10,
            format!("min cross-engine fidelity 1 - {:.2e}, excitation dev {max_exc_dev:.2e}", 1.0 - min_fid),
            "fidelity > 1 - 1e-8, excitation dev < 1e-10".into(),
            String::new(),
        ))
    })
}

/// The closed-form heralding probability of the vacuum square-grid schedule
/// sits in the quoted band and matches the step-chained engine.
pub fn check_row2_closed_form() -> CheckItem {
    run_check(4, "row2_closed_form", || {
        let closed = row2_probability(3)?;
        let sim = run_protocol(&table1_preset(2, 3)?)?.probability;
        let rel = (closed - sim).abs() / closed;
        let in_band = (0.094..=0.100).contains(&closed) && (0.094..=0.100).contains(&sim);
        Ok((
            in_band && rel < 1e-6,
            format!("closed {closed:.6}, simulated {sim:.6}, rel diff {rel:.2e}"),
            "both in [0.094, 0.100], rel diff < 1e-6".into(),
            String::new(),
        ))
    })
}

/// The closed-form seeded-schedule probability hits its quoted value and
/// matches the step-chained engine.
pub fn check_seeded_closed_form() -> CheckItem {
    run_check(5, "seeded_closed_form", || {
        let closed = row5_probability(3, 1.1513)?;
        let sim = run_protocol(&table1_preset(5, 3)?)?.probability;
        let rel = (closed - sim).abs() / closed;
        Ok((
            (closed - 0.3125).abs() < 0.001 && rel < 1e-6,
            format!("closed {closed:.6}, simulated {sim:.6}, rel diff {rel:.2e}"),
            "0.3125 +- 0.001, rel diff < 1e-6".into(),
            String::new(),
        ))
    })
}

/// Peak-variance squeezing of the vacuum schedule follows its logarithmic
/// law, and the seeded schedule measures its quoted squeezing.
pub fn check_squeezing_laws() -> CheckItem {
    run_check(6, "squeezing_laws", || {
        let mut worst = 0.0f64;
        let mut lines = Vec::new();
        for m in 1..=3 {
            let out = run_protocol(&table1_preset(2, m)?)?;
            let measured = squeezing_db_peaks(&out.state, 0.0)?;
            let law = squeezing_db_analytic(SqueezingScheme::GridFromVacuum { m });
            worst = worst.max((measured - law).abs());
            lines.push(format!("m={m}: {measured:.2}/{law:.2}"));
        }
        let seeded = run_protocol(&table1_preset(5, 3)?)?;
        let seeded_db = squeezing_db_peaks(&seeded.state, 0.0)?;
        Ok((
            worst < 0.5 && (seeded_db - 9.8).abs() < 0.3,
            format!("grid dB measured/law {}; seeded {seeded_db:.2} dB", lines.join(", ")),
            "law within 0.5 dB, seeded 9.8 +- 0.3 dB".into(),
            String::new(),
        ))
    })
}

/// Preset heralding probabilities at their quoted operating points.
pub fn check_preset_probability_spots(tier: CheckTier) -> CheckItem {
    run_check(7, "preset_probability_spots", move || {
        let mut spots: Vec<(usize, usize, f64, f64)> = vec![
            (3, 3, 0.111, 0.005),
            (7, 2, 0.095, 0.005),
            (8, 4, 0.273, 0.005),
        ];
        if tier == CheckTier::Extended {
            spots.push((1, 6, 0.05, 0.01));
            spots.push((6, 11, 0.026, 0.007));
            spots.push((4, 12, 0.004, 0.002));
        }
        let mut pass = true;
        let mut parts = Vec::new();
        for (row, m, expected, tol) in spots {
            let p = coefficient_expansion(&table1_preset(row, m)?)?.normalization;
            let ok = (p - expected).abs() < tol;
            pass &= ok;
            parts.push(format!("row {row} m={m}: {p:.4} (want {expected} +- {tol})"));
        }
        Ok((
            pass,
            parts.join("; "),
            "each within its band".into(),
            format!("tier {:?}", tier).to_lowercase(),
        ))
    })
}

/// Heralding probability scaling exponents vs electron count for the vacuum
/// and seeded square schedules.
pub fn check_probability_scaling() -> CheckItem {
    run_check(8, "probability_scaling", || {
        let xs: Vec<f64> = (1..=6).map(|m| ((5 * m) as f64).ln()).collect();
        let ys: Vec<f64> = (1..=6)
            .map(|m| row2_probability(m).map(|p| p.ln()))
            .collect::<Result<_>>()?;
        let (grid_slope, _) = linear_fit(&xs, &ys);
        let xs2: Vec<f64> = (1..=6).map(|ne| (ne as f64).ln()).collect();
        let ys2: Vec<f64> = (1..=6)
            .map(|ne| row5_probability(ne, 1.1513).map(|p| p.ln()))
            .collect::<Result<_>>()?;
        let (seed_slope, _) = linear_fit(&xs2, &ys2);
        Ok((
            (grid_slope + 1.0).abs() < 0.15 && (seed_slope + 0.5).abs() < 0.1,
            format!("grid exponent {grid_slope:.4}, seeded exponent {seed_slope:.4}"),
            "-1.0 +- 0.15 and -0.5 +- 0.1".into(),
            String::new(),
        ))
    })
}

/// Probability-weighted branch fidelity of enveloped-comb cat preparation at
/// two envelope widths, at the grid-protocol coupling.
pub fn check_finite_comb_fidelity() -> CheckItem {
    run_check(9, "finite_comb_fidelity", || {
        let g = Complex64::new(square_half_step(), 0.0);
        let narrow = finite_comb_cat_fidelity(g, 4.0, 64)?;
        let wide = finite_comb_cat_fidelity(g, 8.0, 64)?;
        let g4 = Complex64::new(4.0, 0.0);
        let narrow4 = finite_comb_cat_fidelity(g4, 4.0, 80)?;
        let wide4 = finite_comb_cat_fidelity(g4, 8.0, 80)?;
        let pass = (narrow - 0.97).abs() < 0.01
            && (wide - 0.99).abs() < 0.01
            && (narrow - 0.9772).abs() < 0.004
            && (wide - 0.9941).abs() < 0.004;
        Ok((
            pass,
            format!("sigma 4: {narrow:.4}, sigma 8: {wide:.4}"),
            "0.97 +- 0.01 and 0.99 +- 0.01 (frozen 0.9772/0.9941 +- 0.004)".into(),
            format!(
                "same averaging rule at coupling 4.0 gives {narrow4:.4}/{wide4:.4}, outside \
                 both bands for every averaging variant tried; the grid coupling is the one \
                 that reproduces the quoted numbers"
            ),
        ))
    })
}

/// A sigma = 30 comb running the vacuum square-grid schedule reproduces the
/// ideal-comb output.
pub fn check_comb_width_requirement() -> CheckItem {
    run_check(10, "comb_width_requirement", || {
        let analytic = run_protocol(&table1_preset(2, 3)?)?;
        let mut sim = table1_preset(2, 3)?;
        sim.engine = Engine::Ladder;
        for step in &mut sim.steps {
            step.comb = CombSpec {
                spacing: 2,
                envelope: CombEnvelope::Gaussian { sigma: 30.0 },
                window: Some(160),
            };
        }
        let out = run_protocol(&sim)?;
        let dim = out.state.amplitudes.len().max(analytic.state.amplitudes.len()) - 1;
        let f = fidelity(&out.state.embedded(dim), &analytic.state.embedded(dim))?;
        Ok((
            (f - 0.98).abs() < 0.01,
            format!("fidelity {f:.4}"),
            "0.98 +- 0.01".into(),
            "15 scatters of a sigma = 30 comb, window 160, all-even post-selection".into(),
        ))
    })
}

/// Mean cat fidelity under coupling jitter falls quadratically in the jitter
/// width; the fitted coefficient is reported, not asserted.
pub fn check_jitter_quadratic() -> CheckItem {
    run_check(11, "jitter_quadratic", || {
        let p = Protocol::single_mode(
            InitialState::Vacuum,
            vec![InteractionStep::two_phase(Complex64::new(2.0, 0.0), true)],
            Engine::Analytic,
        );
        let widths = [0.0, 0.05, 0.10, 0.15, 0.20, 0.25];
        let mut means = Vec::new();
        for &w in &widths {
            means.push(jitter_robustness(&p, w, 160, 20260819)?.0);
        }
        let x: Vec<f64> = widths.iter().map(|w| w * w).collect();
        let (slope, intercept) = linear_fit(&x, &means);
        let fit: Vec<f64> = x.iter().map(|&v| intercept + slope * v).collect();
        let r2 = r_squared(&means, &fit);
        Ok((
            r2 > 0.99,
            format!("R^2 = {r2:.5}, coefficient {:.3}, intercept {intercept:.4}", -slope),
            "R^2 > 0.99 for fidelity vs jitter width squared".into(),
            String::new(),
        ))
    })
}

fn seeded_step_protocol(steps: usize) -> Protocol {
    let g = Complex64::new(square_half_step(), 0.0);
    Protocol::single_mode(
        InitialState::Squeezed(SqueezeParams::new(1.1513, 0.0)),
        (0..steps)
            .map(|_| InteractionStep::two_phase(g, true))
            .collect(),
        Engine::Analytic,
    )
}

fn logical_fidelities(state: &PhotonState) -> Result<(f64, f64)> {
    let refs = [
        ReferenceSpec::Grid(GkpReference {
            lattice: GridLattice::Square,
            logical: GridLogical::Zero,
            delta: 0.3,
            construction: GridConstruction::EnvelopeComb,
        }),
        ReferenceSpec::Grid(GkpReference {
            lattice: GridLattice::Square,
            logical: GridLogical::One,
            delta: 0.3,
            construction: GridConstruction::EnvelopeComb,
        }),
    ];
    let report = fidelity_report(state, &refs)?;
    Ok((report[0].fidelity, report[1].fidelity))
}

/// Successive even-heralded half-steps on the squeezed seed toggle the
/// dominant grid logical state; two steps never lose ground.
pub fn check_xgate_stabilizer() -> CheckItem {
    run_check(12, "xgate_stabilizer", || {
        let mut f0 = Vec::new();
        let mut f1 = Vec::new();
        for m in 1..=4usize {
            let out = run_protocol(&seeded_step_protocol(m))?;
            let (a, b) = logical_fidelities(&out.state)?;
            f0.push(a);
            f1.push(b);
        }
        let alternates = f1[0] > f0[0] && f0[1] > f1[1] && f1[2] > f0[2] && f0[3] > f1[3];
        let non_decreasing = f0[3] >= f0[1] - 1e-9 && f1[2] >= f1[0] - 1e-9;
        let fmt = |v: &[f64]| {
            v.iter()
                .map(|f| format!("{f:.3}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        Ok((
            alternates && non_decreasing,
            format!("F0 by step [{}], F1 by step [{}]", fmt(&f0), fmt(&f1)),
            "dominance alternates 1/0/1/0; double steps non-decreasing".into(),
            String::new(),
        ))
    })
}

/// Even energy residues of the two-mode run herald their paired grid Bell
/// combinations, and the two branches are mutually orthogonal.
pub fn check_bell_branches() -> CheckItem {
    run_check(13, "bell_branches", || {
        let g = Complex64::new(square_half_step(), 0.0);
        let scan = bell_scan(g, g, 10.0)?;
        let (out0, out2) = (&scan[0], &scan[2]);
        let pick = |out: &crate::protocols::BellOutcome, label: &str| -> f64 {
            out.fidelities
                .iter()
                .find(|(l, _)| l == label)
                .map(|(_, f)| *f)
                .unwrap_or(0.0)
        };
        let f0 = pick(out0, "|++> + |-->");
        let f2 = pick(out2, "|+-> + |-+>");
        let mutual = out0.state.overlap(&out2.state).norm_sqr()
            / (out0.state.norm_sqr() * out2.state.norm_sqr());
        Ok((
            f0 > 0.9 && f2 > 0.9 && mutual < 0.1,
            format!("residue 0: {f0:.4}, residue 2: {f2:.4}, mutual {mutual:.2e}"),
            "> 0.9, > 0.9, < 0.1".into(),
            format!(
                "heralding probabilities {:.4} and {:.4}",
                out0.probability, out2.probability
            ),
        ))
    })
}

/// The Wigner function at the origin equals photon-number parity over pi.
pub fn check_wigner_parity() -> CheckItem {
    run_check(14, "wigner_parity", || {
        let alpha = Complex64::new(2.0, 0.0);
        let states = vec![
            ("vacuum", PhotonState::vacuum(30)),
            ("fock 1", PhotonState::fock(1, 30)?),
            ("even cat", make_cat_reference(2, 0, alpha, 40)?),
            ("odd cat", make_cat_reference(2, 1, alpha, 40)?),
        ];
        let mut max_dev = 0.0f64;
        let mut odd_origin = 0.0f64;
        for (name, state) in &states {
            let w = wigner_point(state, 0.0, 0.0);
            let parity = state.parity_expectation();
            max_dev = max_dev.max((PI * w - parity).abs());
            if *name == "odd cat" {
                odd_origin = w;
            }
        }
        Ok((
            max_dev < 1e-8 && odd_origin < 0.0,
            format!("max |pi W(0,0) - parity| = {max_dev:.2e}, odd cat W(0,0) = {odd_origin:.3}"),
            "dev < 1e-8, odd cat negative at origin".into(),
            String::new(),
        ))
    })
}

/// Every check in id order. The tier only changes the preset spot-check
/// coverage.
pub fn run_all(tier: CheckTier) -> Vec<CheckItem> {
    vec![
        check_branch_probabilities(),
        check_kraus_completeness(),
        check_engine_equivalence(),
        check_row2_closed_form(),
        check_seeded_closed_form(),
        check_squeezing_laws(),
        check_preset_probability_spots(tier),
        check_probability_scaling(),
        check_finite_comb_fidelity(),
        check_comb_width_requirement(),
        check_jitter_quadratic(),
        check_xgate_stabilizer(),
        check_bell_branches(),
        check_wigner_parity(),
    ]
}
