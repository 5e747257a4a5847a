//! Small numeric helpers shared across modules.

use ndarray::Array2;
use num_complex::Complex64;

/// Binomial coefficient as f64. Exact for results below 2^53, which covers
/// every Pascal row used by the protocol expansions (n <= 200).
pub fn binomial_f64(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// ln(n!) for n = 0..=nmax, by cumulative summation. Differences of entries
/// are what the callers exponentiate, so the table must come from one running
/// sum rather than independent lgamma calls.
pub fn ln_factorial_table(nmax: usize) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    let mut acc = 0.0f64;
    for (n, o) in out.iter_mut().enumerate().skip(1) {
        acc += (n as f64).ln();
        *o = acc;
    }
    out
}

/// Normalized Hermite functions h_n(x) = H_n(x) e^{-x^2/2} / sqrt(2^n n! sqrt(pi))
/// for n = 0..=nmax, by the three-term recurrence
///   h_{n+1} = sqrt(2/(n+1)) x h_n - sqrt(n/(n+1)) h_{n-1}.
/// The recurrence runs on rescaled values with a running log-scale so that
/// h_0(x) = pi^{-1/4} e^{-x^2/2} can be represented far outside the classical
/// turning point where e^{-x^2/2} underflows but h_n(x) for large n does not.
pub fn hermite_functions(x: f64, nmax: usize) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    // h_n = g_n * exp(scale); g starts at pi^{-1/4}, scale at -x^2/2.
    let mut scale = -0.5 * x * x;
    let mut g_prev = 0.0f64;
    let mut g = std::f64::consts::PI.powf(-0.25);
    out[0] = emit(g, scale);
    for n in 0..nmax {
        let nf = n as f64;
        let next = (2.0 / (nf + 1.0)).sqrt() * x * g - (nf / (nf + 1.0)).sqrt() * g_prev;
        g_prev = g;
        g = next;
        if g.abs() > 1e140 || g_prev.abs() > 1e140 {
            g *= 1e-140;
            g_prev *= 1e-140;
            scale += 140.0 * std::f64::consts::LN_10;
        }
        out[n + 1] = emit(g, scale);
    }
    out
}

fn emit(g: f64, scale: f64) -> f64 {
    if g == 0.0 {
        return 0.0;
    }
    if scale > -690.0 {
        return g * scale.exp();
    }
    // exp(scale) alone would underflow; combine magnitudes in log space.
    let ln_val = g.abs().ln() + scale;
    if ln_val < -745.0 {
        0.0
    } else {
        g.signum() * ln_val.exp()
    }
}

/// Matrix exponential by scaling and squaring with a Taylor series on the
/// scaled matrix. Intended for cross-checks and small generator matrices;
/// production paths apply exponentials as actions on vectors instead.
pub fn matrix_exp(a: &Array2<Complex64>) -> Array2<Complex64> {
    let dim = a.nrows();
    assert_eq!(dim, a.ncols(), "matrix_exp needs a square matrix");
    // 1-norm estimate for the scaling count.
    let norm = (0..dim)
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let squarings = if norm > 0.25 {
        (norm / 0.25).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a.mapv(|z| z / 2f64.powi(squarings as i32));

    let mut result = Array2::<Complex64>::eye(dim);
    let mut term = Array2::<Complex64>::eye(dim);
    for k in 1..200 {
        term = term.dot(&scaled) / Complex64::new(k as f64, 0.0);
        result = &result + &term;
        let tnorm: f64 = term.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if tnorm < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}

/// Uniform grid of n points covering [a, b] inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let step = (b - a) / (n - 1) as f64;
    (0..n).map(|i| a + step * i as f64).collect()
}

/// Golden-section maximization of a unimodal function on [a, b].
/// Returns (argmax, max). Tolerance is on the argument.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        }
    }
    let xm = 0.5 * (lo + hi);
    let fm = f(xm);
    if fm >= f1 && fm >= f2 {
        (xm, fm)
    } else if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Least-squares slope and intercept of y against x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Coefficient of determination for a fitted model y_hat over observations y.
pub fn r_squared(y: &[f64], y_hat: &[f64]) -> f64 {
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    let ss_tot: f64 = y.iter().map(|a| (a - my) * (a - my)).sum();
    1.0 - ss_res / ss_tot
}
