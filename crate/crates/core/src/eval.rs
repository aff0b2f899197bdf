//! Trial bookkeeping, FA/FR sweeps, EER, and DET curve emission.
//!
//! Convention: a trial is accepted when score >= threshold, so FAR is
//! non-increasing and FRR non-decreasing as the threshold rises. The EER
//! is found by linear interpolation between the adjacent sweep points
//! where FAR - FRR changes sign.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// One verification attempt against a claimed identity.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialScore {
    pub claimed_id: String,
    pub is_target: bool,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
    pub eer: f64,
    pub eer_threshold: f64,
}

impl DetCurve {
    pub fn from_trials(trials: &[TrialScore]) -> Result<DetCurve> {
        let points = sweep_far_frr(trials)?;
        let (eer, eer_threshold) = compute_eer(&points);
        Ok(DetCurve {
            points,
            eer,
            eer_threshold,
        })
    }
}

/// Sweep thresholds over the sorted unique scores plus ±inf sentinels.
/// At threshold t: FAR = #(impostor >= t)/#impostors, FRR = #(target < t)/#targets.
pub fn sweep_far_frr(trials: &[TrialScore]) -> Result<Vec<DetPoint>> {
    let n_targets = trials.iter().filter(|t| t.is_target).count();
    let n_impostors = trials.len() - n_targets;
    if n_targets == 0 || n_impostors == 0 {
        return Err(Error::OneClassOnly);
    }
    if trials.iter().any(|t| !t.score.is_finite()) {
        return Err(Error::NonFinite("trial score"));
    }

    let mut thresholds: Vec<f64> = trials.iter().map(|t| t.score).collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();

    let mut target_scores: Vec<f64> = trials
        .iter()
        .filter(|t| t.is_target)
        .map(|t| t.score)
        .collect();
    let mut impostor_scores: Vec<f64> = trials
        .iter()
        .filter(|t| !t.is_target)
        .map(|t| t.score)
        .collect();
    target_scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    impostor_scores.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut points = Vec::with_capacity(thresholds.len() + 2);
    points.push(DetPoint {
        threshold: f64::NEG_INFINITY,
        far: 1.0,
        frr: 0.0,
    });
    for &t in &thresholds {
        // counts by binary search over the sorted score lists
        let rejected = target_scores.partition_point(|&s| s < t);
        let below = impostor_scores.partition_point(|&s| s < t);
        points.push(DetPoint {
            threshold: t,
            far: (n_impostors - below) as f64 / n_impostors as f64,
            frr: rejected as f64 / n_targets as f64,
        });
    }
    points.push(DetPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });
    Ok(points)
}

/// Equal error rate from a sweep: an exact FAR = FRR point is returned
/// directly, otherwise both rates are interpolated to their crossing.
pub fn compute_eer(points: &[DetPoint]) -> (f64, f64) {
    for p in points {
        if p.far == p.frr {
            return (p.far, p.threshold);
        }
    }
    for pair in points.windows(2) {
        let d1 = pair[0].far - pair[0].frr;
        let d2 = pair[1].far - pair[1].frr;
        if d1 > 0.0 && d2 < 0.0 {
            let t = d1 / (d1 - d2);
            let eer = pair[0].far + t * (pair[1].far - pair[0].far);
            let threshold = if pair[0].threshold.is_finite() && pair[1].threshold.is_finite() {
                pair[0].threshold + t * (pair[1].threshold - pair[0].threshold)
            } else if pair[1].threshold.is_finite() {
                pair[1].threshold
            } else {
                pair[0].threshold
            };
            return (eer, threshold);
        }
    }
    // a valid sweep always crosses; fall back defensively
    (0.5, 0.0)
}

/// Inverse standard normal CDF via the Acklam rational approximation
/// (absolute error below 4.5e-4 over (0, 1)).
pub fn probit(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

const RATE_CLAMP: f64 = 1e-4;

/// Sweep points in normal-deviate coordinates, rates clamped away from
/// 0 and 1 where the probit diverges.
pub fn det_points(points: &[DetPoint]) -> Vec<(f64, f64)> {
    points
        .iter()
        .map(|p| {
            (
                probit(p.far.clamp(RATE_CLAMP, 1.0 - RATE_CLAMP)),
                probit(p.frr.clamp(RATE_CLAMP, 1.0 - RATE_CLAMP)),
            )
        })
        .collect()
}

// --- artifact formats ---------------------------------------------------

/// Trials file: `claimed_id,is_target{0|1},score` with a header row.
pub fn format_trials(trials: &[TrialScore]) -> String {
    let mut out = String::from("claimed_id,is_target,score\n");
    for t in trials {
        let _ = writeln!(
            out,
            "{},{},{:.16e}",
            t.claimed_id,
            if t.is_target { 1 } else { 0 },
            t.score
        );
    }
    out
}

pub fn parse_trials(text: &str) -> Result<Vec<TrialScore>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 && line == "claimed_id,is_target,score" {
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (id, flag, score) = (fields.next(), fields.next(), fields.next());
        match (id, flag, score, fields.next()) {
            (Some(id), Some(flag), Some(score), None) => {
                let is_target = match flag {
                    "1" => true,
                    "0" => false,
                    other => {
                        return Err(Error::ManifestError(format!(
                            "trials line {}: bad is_target `{other}`",
                            idx + 1
                        )))
                    }
                };
                let score: f64 = score.parse().map_err(|e| {
                    Error::ManifestError(format!("trials line {}: bad score: {e}", idx + 1))
                })?;
                out.push(TrialScore {
                    claimed_id: id.to_string(),
                    is_target,
                    score,
                });
            }
            _ => {
                return Err(Error::ManifestError(format!(
                    "trials line {}: expected claimed_id,is_target,score",
                    idx + 1
                )))
            }
        }
    }
    Ok(out)
}

pub fn write_trials(trials: &[TrialScore], path: impl AsRef<Path>) -> Result<()> {
    crate::pipeline::write_file_atomic(path.as_ref(), format_trials(trials).as_bytes())
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<Vec<TrialScore>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trials(&text)
}

/// DET CSV: `threshold,far,frr` rows plus a trailing `#eer=` comment.
pub fn format_det_csv(curve: &DetCurve) -> String {
    let mut out = String::from("threshold,far,frr\n");
    for p in &curve.points {
        let _ = writeln!(out, "{},{:.16e},{:.16e}", fmt_threshold(p.threshold), p.far, p.frr);
    }
    let _ = writeln!(out, "#eer={:.16e}", curve.eer);
    out
}

fn fmt_threshold(t: f64) -> String {
    if t == f64::NEG_INFINITY {
        "-inf".to_string()
    } else if t == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{t:.16e}")
    }
}

pub fn write_det_csv(curve: &DetCurve, path: impl AsRef<Path>) -> Result<()> {
    crate::pipeline::write_file_atomic(path.as_ref(), format_det_csv(curve).as_bytes())
}

// --- DET curve rendering -------------------------------------------------

const SVG_SIZE: f64 = 640.0;
const SVG_MARGIN: f64 = 70.0;
const AXIS_TICKS_PCT: [f64; 9] = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0];
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Render one or more DET curves as a standalone SVG with probit-scaled
/// axes. The output is a pure function of its inputs.
pub fn render_det_svg(curves: &[(String, DetCurve)]) -> Result<String> {
    if curves.is_empty() {
        return Err(Error::OneClassOnly);
    }
    let lo = probit(0.001);
    let hi = probit(0.5);
    let to_px = |deviate: f64| {
        SVG_MARGIN + (deviate.clamp(lo, hi) - lo) / (hi - lo) * (SVG_SIZE - 2.0 * SVG_MARGIN)
    };
    // SVG y grows downward
    let to_py = |deviate: f64| SVG_SIZE - to_px(deviate);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{s}" height="{s}" viewBox="0 0 {s} {s}">"#,
        s = SVG_SIZE
    );
    let _ = writeln!(svg, r#"<rect width="{s}" height="{s}" fill="white"/>"#, s = SVG_SIZE);
    let _ = writeln!(
        svg,
        r#"<text x="{x:.1}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">Detection error trade-off</text>"#,
        x = SVG_SIZE / 2.0
    );

    for pct in AXIS_TICKS_PCT {
        let dev = probit(pct / 100.0);
        let x = to_px(dev);
        let y = to_py(dev);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{top:.2}" x2="{x:.2}" y2="{bottom:.2}" stroke="#dddddd" stroke-width="1"/>"##,
            top = SVG_MARGIN,
            bottom = SVG_SIZE - SVG_MARGIN
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{left:.2}" y1="{y:.2}" x2="{right:.2}" y2="{y:.2}" stroke="#dddddd" stroke-width="1"/>"##,
            left = SVG_MARGIN,
            right = SVG_SIZE - SVG_MARGIN
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{ly:.2}" text-anchor="middle" font-family="sans-serif" font-size="11">{pct}</text>"#,
            ly = SVG_SIZE - SVG_MARGIN + 16.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{lx:.2}" y="{y:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{pct}</text>"#,
            lx = SVG_MARGIN - 8.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{m}" y="{m}" width="{w:.1}" height="{w:.1}" fill="none" stroke="black" stroke-width="1"/>"#,
        m = SVG_MARGIN,
        w = SVG_SIZE - 2.0 * SVG_MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<text x="{x:.1}" y="{y:.1}" text-anchor="middle" font-family="sans-serif" font-size="13">False acceptance rate (%)</text>"#,
        x = SVG_SIZE / 2.0,
        y = SVG_SIZE - 20.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{y:.1}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 20 {y:.1})">False rejection rate (%)</text>"#,
        y = SVG_SIZE / 2.0
    );

    for (idx, (name, curve)) in curves.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let pts = det_points(&curve.points);
        let path: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", to_px(*x), to_py(*y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
            path.join(" ")
        );
        let eer_dev = probit(curve.eer.clamp(RATE_CLAMP, 1.0 - RATE_CLAMP));
        let _ = writeln!(
            svg,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{color}"/>"#,
            x = to_px(eer_dev),
            y = to_py(eer_dev)
        );
        let ly = SVG_MARGIN + 16.0 + 18.0 * idx as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{x1:.1}" y1="{ly:.1}" x2="{x2:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="1.8"/>"#,
            x1 = SVG_MARGIN + 10.0,
            x2 = SVG_MARGIN + 34.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{y:.1}" font-family="sans-serif" font-size="12">{name} (EER {eer:.2}%)</text>"#,
            x = SVG_MARGIN + 40.0,
            y = ly + 4.0,
            eer = curve.eer * 100.0
        );
    }
    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}

pub fn write_det_svg(curves: &[(String, DetCurve)], path: impl AsRef<Path>) -> Result<()> {
    let svg = render_det_svg(curves)?;
    crate::pipeline::write_file_atomic(path.as_ref(), svg.as_bytes())
}
