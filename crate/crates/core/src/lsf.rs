//! Line spectral frequencies.
//!
//! Per frame: autocorrelation LPC solved by Levinson-Durbin, construction
//! of the symmetric/antisymmetric polynomials from the inverse filter,
//! removal of the trivial roots at z = ±1, and root finding on the unit
//! circle. Everything uses the A(z) = 1 - sum a_k z^-k sign convention.
//!
//! Both reduced polynomials are palindromic, so on the unit circle they
//! collapse to real cosine polynomials; roots are bracketed on a fixed
//! 4096-point grid over (0, pi) and refined by bisection. For an order-P
//! minimum-phase filter the two root sets strictly alternate, giving P
//! increasing frequencies.

use std::sync::OnceLock;

use crate::audio::AudioClip;
use crate::dsp::{frame_signal, pre_emphasize};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

const GRID_POINTS: usize = 4096;
const BISECT_TOL: f64 = 1e-10;
/// Frames with autocorrelation energy under this emit the uniform LSFs.
const SILENCE_FLOOR: f64 = 1e-10;

/// All-pole model A(z) = 1 - sum_{k=1..P} a_k z^-k with gain G.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcModel {
    pub order: usize,
    /// Prediction coefficients a_1..a_P.
    pub a: Vec<f64>,
    /// sqrt of the final prediction-error energy.
    pub gain: f64,
}

/// P strictly increasing angular frequencies in (0, pi); entries at even
/// 0-based positions are roots of the reduced sum polynomial, odd
/// positions of the reduced difference polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct LsfVector {
    pub omegas: Vec<f64>,
}

impl LsfVector {
    pub fn new(omegas: Vec<f64>) -> Result<Self> {
        let mut prev = 0.0;
        for (i, &w) in omegas.iter().enumerate() {
            if !(w > prev && w < std::f64::consts::PI) {
                return Err(Error::InterlacingViolated(i));
            }
            prev = w;
        }
        Ok(LsfVector { omegas })
    }

    pub fn order(&self) -> usize {
        self.omegas.len()
    }
}

/// Evenly spaced LSFs k*pi/(P+1): the flat-spectrum (a = 0) solution.
pub fn uniform_lsf(order: usize) -> LsfVector {
    let omegas = (1..=order)
        .map(|k| k as f64 * std::f64::consts::PI / (order + 1) as f64)
        .collect();
    LsfVector { omegas }
}

/// r[tau] = sum_{t=tau}^{N-1} s(t) s(t-tau) for tau = 0..=max_lag.
pub fn autocorrelate(frame: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if frame.len() <= max_lag {
        return Err(Error::FrameTooShort {
            frame: frame.len(),
            lag: max_lag,
        });
    }
    Ok((0..=max_lag)
        .map(|tau| frame[tau..].iter().zip(frame).map(|(x, y)| x * y).sum())
        .collect())
}

/// Solve the Toeplitz normal equations for the prediction coefficients.
pub fn levinson_durbin(r: &[f64]) -> Result<LpcModel> {
    if r.len() < 2 {
        return Err(Error::FrameTooShort { frame: r.len(), lag: 1 });
    }
    if !(r[0] > 0.0) {
        return Err(Error::SingularAutocorrelation);
    }
    let order = r.len() - 1;
    let mut a = vec![0.0; order];
    let mut error = r[0];
    for i in 1..=order {
        let mut acc = r[i];
        for j in 1..i {
            acc -= a[j - 1] * r[i - j];
        }
        let k = acc / error;
        if !k.is_finite() || k.abs() >= 1.0 {
            return Err(Error::SingularAutocorrelation);
        }
        for j in 1..=(i - 1) / 2 {
            let hi = a[i - 1 - j];
            let lo = a[j - 1];
            a[j - 1] = lo - k * hi;
            a[i - 1 - j] = hi - k * lo;
        }
        if i >= 2 && i % 2 == 0 {
            let mid = i / 2;
            a[mid - 1] -= k * a[mid - 1];
        }
        a[i - 1] = k;
        error *= 1.0 - k * k;
        if !(error > 0.0) {
            return Err(Error::SingularAutocorrelation);
        }
    }
    Ok(LpcModel {
        order,
        a,
        gain: error.sqrt(),
    })
}

/// Rebuild prediction coefficients from reflection coefficients (step-up
/// recursion). Useful for generating guaranteed-stable test models.
pub fn model_from_reflections(reflections: &[f64]) -> Result<LpcModel> {
    let order = reflections.len();
    let mut a = vec![0.0; order];
    for (i, &k) in reflections.iter().enumerate() {
        if k.abs() >= 1.0 {
            return Err(Error::SingularAutocorrelation);
        }
        let i = i + 1;
        let prev = a[..i - 1].to_vec();
        for j in 1..i {
            a[j - 1] = prev[j - 1] - k * prev[i - 1 - j];
        }
        a[i - 1] = k;
    }
    Ok(LpcModel { order, a, gain: 1.0 })
}

fn inverse_filter_coeffs(model: &LpcModel) -> Vec<f64> {
    let mut c = Vec::with_capacity(model.order + 1);
    c.push(1.0);
    c.extend(model.a.iter().map(|ak| -ak));
    c
}

/// S(z) = A(z) + z^-(P+1) A(z^-1) and Theta(z) = A(z) - z^-(P+1) A(z^-1),
/// as degree-(P+1) coefficient sequences in z^-1.
pub fn lpc_to_sum_diff_polys(model: &LpcModel) -> (Vec<f64>, Vec<f64>) {
    let c = inverse_filter_coeffs(model);
    let n = model.order + 1; // output degree
    let coeff = |i: usize| if i <= model.order { c[i] } else { 0.0 };
    let mut sum = Vec::with_capacity(n + 1);
    let mut diff = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let mirrored = coeff(n - i);
        sum.push(coeff(i) + mirrored);
        diff.push(coeff(i) - mirrored);
    }
    (sum, diff)
}

/// Divide out the trivial roots: S/(1 + z^-1) and Theta/(1 - z^-1).
/// Only even prediction orders carry this root pattern.
pub fn remove_trivial_roots(sum: &[f64], diff: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let order = sum.len().checked_sub(2).ok_or(Error::RootCountMismatch {
        found: 0,
        expected: 1,
    })?;
    if order % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "trivial-root removal requires an even LPC order, got {order}"
        )));
    }
    if diff.len() != sum.len() {
        return Err(Error::DimMismatch(sum.len(), diff.len()));
    }
    let scale = sum.iter().chain(diff).fold(1.0f64, |m, v| m.max(v.abs()));
    let reduced_sum = synthetic_divide(sum, 1.0, scale)?;
    let reduced_diff = synthetic_divide(diff, -1.0, scale)?;
    Ok((reduced_sum, reduced_diff))
}

/// Divide a z^-1 coefficient sequence by (1 + root_sign * z^-1).
fn synthetic_divide(poly: &[f64], root_sign: f64, scale: f64) -> Result<Vec<f64>> {
    let n = poly.len() - 1;
    let mut q = Vec::with_capacity(n);
    let mut carry = 0.0;
    for &p in &poly[..n] {
        let v = p - root_sign * carry;
        q.push(v);
        carry = v;
    }
    let remainder = poly[n] - root_sign * carry;
    if remainder.abs() > 1e-9 * scale {
        return Err(Error::NonzeroRemainder(remainder));
    }
    Ok(q)
}

fn cos_grid() -> &'static [f64] {
    static GRID: OnceLock<Vec<f64>> = OnceLock::new();
    GRID.get_or_init(|| {
        (0..=GRID_POINTS + 1)
            .map(|j| (std::f64::consts::PI * j as f64 / (GRID_POINTS + 1) as f64).cos())
            .collect()
    })
}

/// Evaluate a palindromic degree-2m coefficient sequence on the unit
/// circle: e^{j m omega} Q(e^{-j omega}) = q_m + 2 sum q_{m-k} T_k(cos w).
fn eval_palindromic(q: &[f64], cos_w: f64) -> f64 {
    let m = q.len() / 2;
    let mut acc = q[m];
    let mut t_prev = 1.0;
    let mut t_cur = cos_w;
    for k in 1..=m {
        acc += 2.0 * q[m - k] * t_cur;
        let t_next = 2.0 * cos_w * t_cur - t_prev;
        t_prev = t_cur;
        t_cur = t_next;
    }
    acc
}

fn bracketed_roots(q: &[f64], expected: usize) -> Vec<f64> {
    let grid = cos_grid();
    let step = std::f64::consts::PI / (GRID_POINTS + 1) as f64;
    let mut values: Vec<f64> = grid.iter().map(|&c| eval_palindromic(q, c)).collect();
    // nudge exact zeros so every root is an interior sign change
    for v in values.iter_mut() {
        if *v == 0.0 {
            *v = f64::MIN_POSITIVE;
        }
    }
    let mut roots = Vec::with_capacity(expected);
    for j in 0..=GRID_POINTS {
        if values[j] * values[j + 1] < 0.0 {
            let mut lo = step * j as f64;
            let mut hi = step * (j + 1) as f64;
            let mut f_lo = values[j];
            while hi - lo > BISECT_TOL {
                let mid = 0.5 * (lo + hi);
                let f_mid = eval_palindromic(q, mid.cos());
                if f_lo * f_mid <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    f_lo = f_mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
    }
    roots
}

/// Find the P line spectral frequencies as the interleaved unit-circle
/// roots of the two reduced polynomials.
pub fn find_lsf_roots(reduced_sum: &[f64], reduced_diff: &[f64]) -> Result<LsfVector> {
    if reduced_sum.len() != reduced_diff.len() || reduced_sum.len() < 3 {
        return Err(Error::DimMismatch(reduced_sum.len(), reduced_diff.len()));
    }
    let order = reduced_sum.len() - 1;
    let per_poly = order / 2;
    let sum_roots = bracketed_roots(reduced_sum, per_poly);
    if sum_roots.len() != per_poly {
        return Err(Error::RootCountMismatch {
            found: sum_roots.len(),
            expected: per_poly,
        });
    }
    let diff_roots = bracketed_roots(reduced_diff, per_poly);
    if diff_roots.len() != per_poly {
        return Err(Error::RootCountMismatch {
            found: diff_roots.len(),
            expected: per_poly,
        });
    }
    // minimum phase guarantees sum-poly roots lead and the sets alternate
    let mut omegas = Vec::with_capacity(order);
    for i in 0..per_poly {
        omegas.push(sum_roots[i]);
        omegas.push(diff_roots[i]);
    }
    if omegas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::RootCountMismatch {
            found: per_poly,
            expected: per_poly,
        });
    }
    LsfVector::new(omegas)
}

/// Convenience chain: model -> polynomials -> reduced -> roots.
pub fn lpc_to_lsf(model: &LpcModel) -> Result<LsfVector> {
    let (sum, diff) = lpc_to_sum_diff_polys(model);
    let (rs, rd) = remove_trivial_roots(&sum, &diff)?;
    find_lsf_roots(&rs, &rd)
}

/// Rebuild the prediction filter from its line spectral frequencies.
/// The gain is not recoverable from LSFs and is set to 1.
pub fn lsf_to_lpc(lsf: &LsfVector) -> Result<LpcModel> {
    let order = lsf.order();
    if order % 2 != 0 || order == 0 {
        return Err(Error::InvalidConfig(format!(
            "LSF-to-LPC requires an even order, got {order}"
        )));
    }
    let mut prev = 0.0;
    for (i, &w) in lsf.omegas.iter().enumerate() {
        if !(w > prev && w < std::f64::consts::PI) {
            return Err(Error::InterlacingViolated(i));
        }
        prev = w;
    }
    // conjugate root pairs: each omega contributes 1 - 2 cos(w) z^-1 + z^-2
    let quad = |w: f64| vec![1.0, -2.0 * w.cos(), 1.0];
    let mut reduced_sum = vec![1.0];
    let mut reduced_diff = vec![1.0];
    for (i, &w) in lsf.omegas.iter().enumerate() {
        if i % 2 == 0 {
            reduced_sum = poly_mul(&reduced_sum, &quad(w));
        } else {
            reduced_diff = poly_mul(&reduced_diff, &quad(w));
        }
    }
    let sum = poly_mul(&reduced_sum, &[1.0, 1.0]);
    let diff = poly_mul(&reduced_diff, &[1.0, -1.0]);
    let a: Vec<f64> = (1..=order)
        .map(|k| -(sum[k] + diff[k]) / 2.0)
        .collect();
    Ok(LpcModel { order, a, gain: 1.0 })
}

pub(crate) fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Per-frame LSF extraction with the same pre-emphasis, framing, and
/// windowing as the MFCC path. Silent frames yield the uniform vector.
pub fn lsf_features(
    clip: &AudioClip,
    order: usize,
    frame_ms: f64,
    hop_ms: f64,
    preemph_a: f64,
) -> Result<FeatureMatrix> {
    if order % 2 != 0 || order == 0 {
        return Err(Error::InvalidConfig(format!(
            "LPC order must be even and positive, got {order}"
        )));
    }
    let emphasized = pre_emphasize(clip, preemph_a)?;
    let frames = frame_signal(&emphasized, frame_ms, hop_ms, true)?;
    let fallback = uniform_lsf(order);
    let rows: Result<Vec<Vec<f64>>> = frames
        .frames
        .iter()
        .map(|frame| {
            let r = autocorrelate(frame, order)?;
            if r[0] < SILENCE_FLOOR {
                return Ok(fallback.omegas.clone());
            }
            let model = levinson_durbin(&r)?;
            Ok(lpc_to_lsf(&model)?.omegas)
        })
        .collect();
    let labels = (1..=order).map(|i| format!("ω{i}")).collect();
    FeatureMatrix::from_rows(rows?, labels, hop_ms)
}
