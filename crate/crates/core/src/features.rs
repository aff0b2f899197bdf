//! Feature assembly: log energy, delta appending, MFCC+LSF fusion, VAD
//! filtering, cepstral mean subtraction, and the feature-file format.
//!
//! The fused layout is fixed: 12 MFCC, E, 13 deltas, 13 delta-deltas,
//! 12 LSF — 51 dimensions.

use std::fmt::Write as _;
use std::path::Path;

use crate::dsp::{FrameMatrix, VadMask, ENERGY_EPS};
use crate::error::{Error, Result};

/// T x D feature frames with named dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
    pub labels: Vec<String>,
    pub frame_hop_ms: f64,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<String>, frame_hop_ms: f64) -> Result<Self> {
        let cols = labels.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in &rows {
            if row.len() != cols {
                return Err(Error::DimMismatch(row.len(), cols));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("feature matrix"));
            }
            data.extend_from_slice(row);
        }
        Ok(FeatureMatrix {
            data,
            rows: rows.len(),
            cols,
            labels,
            frame_hop_ms,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.rows
    }

    pub fn n_dims(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i)[j]).collect()
    }
}

/// Natural-log frame energy over unwindowed frames: E_t = ln(sum s^2 + eps).
pub fn frame_log_energy(frames: &FrameMatrix) -> Vec<f64> {
    frames
        .frames
        .iter()
        .map(|f| (f.iter().map(|s| s * s).sum::<f64>() + ENERGY_EPS).ln())
        .collect()
}

/// Append first and second time derivatives, tripling the dimension.
///
/// The delta operator is a +/-`window` linear regression with edge
/// replication, so the frame count is preserved.
pub fn append_deltas(m: &FeatureMatrix, window: usize) -> Result<FeatureMatrix> {
    if window == 0 {
        return Err(Error::InvalidConfig("delta window must be >= 1".into()));
    }
    if m.n_frames() < 2 * window + 1 {
        return Err(Error::TooFewFrames {
            frames: m.n_frames(),
            window,
        });
    }
    let delta = delta_matrix(m, window);
    let delta2 = delta_matrix(&delta, window);

    let mut labels = m.labels.clone();
    labels.extend(m.labels.iter().map(|l| format!("Δ{l}")));
    labels.extend(m.labels.iter().map(|l| format!("ΔΔ{l}")));

    let rows: Vec<Vec<f64>> = (0..m.n_frames())
        .map(|i| {
            let mut row = m.row(i).to_vec();
            row.extend_from_slice(delta.row(i));
            row.extend_from_slice(delta2.row(i));
            row
        })
        .collect();
    FeatureMatrix::from_rows(rows, labels, m.frame_hop_ms)
}

fn delta_matrix(m: &FeatureMatrix, window: usize) -> FeatureMatrix {
    let t_max = m.n_frames() as isize - 1;
    let norm = 2.0 * (1..=window).map(|t| (t * t) as f64).sum::<f64>();
    let rows: Vec<Vec<f64>> = (0..m.n_frames() as isize)
        .map(|t| {
            (0..m.n_dims())
                .map(|j| {
                    let mut acc = 0.0;
                    for tau in 1..=window as isize {
                        let ahead = m.row((t + tau).clamp(0, t_max) as usize)[j];
                        let behind = m.row((t - tau).clamp(0, t_max) as usize)[j];
                        acc += tau as f64 * (ahead - behind);
                    }
                    acc / norm
                })
                .collect()
        })
        .collect();
    FeatureMatrix::from_rows(rows, m.labels.clone(), m.frame_hop_ms).unwrap()
}

/// Row-wise concatenation of two frame-aligned streams.
pub fn fuse(left: &FeatureMatrix, right: &FeatureMatrix) -> Result<FeatureMatrix> {
    if left.n_frames() != right.n_frames() {
        return Err(Error::FrameCountMismatch(left.n_frames(), right.n_frames()));
    }
    let mut labels = left.labels.clone();
    labels.extend(right.labels.iter().cloned());
    let rows: Vec<Vec<f64>> = (0..left.n_frames())
        .map(|i| {
            let mut row = left.row(i).to_vec();
            row.extend_from_slice(right.row(i));
            row
        })
        .collect();
    FeatureMatrix::from_rows(rows, labels, left.frame_hop_ms)
}

/// Keep exactly the VAD-active rows, preserving order.
pub fn apply_vad_mask(m: &FeatureMatrix, mask: &VadMask) -> Result<FeatureMatrix> {
    if mask.active.len() != m.n_frames() {
        return Err(Error::LengthMismatch(mask.active.len(), m.n_frames()));
    }
    let rows: Vec<Vec<f64>> = mask
        .active
        .iter()
        .zip(m.iter_rows())
        .filter(|(a, _)| **a)
        .map(|(_, r)| r.to_vec())
        .collect();
    if rows.is_empty() {
        return Err(Error::AllFramesRemoved);
    }
    FeatureMatrix::from_rows(rows, m.labels.clone(), m.frame_hop_ms)
}

/// Subtract the per-utterance mean of the selected columns (all columns
/// when `columns` is None).
pub fn cepstral_mean_subtract(m: &FeatureMatrix, columns: Option<&[usize]>) -> FeatureMatrix {
    let selected: Vec<usize> = match columns {
        Some(c) => c.to_vec(),
        None => (0..m.n_dims()).collect(),
    };
    let t = m.n_frames() as f64;
    let mut means = vec![0.0; m.n_dims()];
    for row in m.iter_rows() {
        for &j in &selected {
            means[j] += row[j];
        }
    }
    for &j in &selected {
        means[j] /= t;
    }
    let rows: Vec<Vec<f64>> = m
        .iter_rows()
        .map(|r| {
            let mut row = r.to_vec();
            for &j in &selected {
                row[j] -= means[j];
            }
            row
        })
        .collect();
    FeatureMatrix::from_rows(rows, m.labels.clone(), m.frame_hop_ms).unwrap()
}

/// Columns the `cepstral` CMS mode applies to: MFCCs and their derivatives.
pub fn cepstral_columns(labels: &[String]) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, l)| {
            let base = l.trim_start_matches('Δ');
            base.starts_with('c') && base[1..].chars().all(|c| c.is_ascii_digit())
        })
        .map(|(i, _)| i)
        .collect()
}

/// Serialize in the feature-file format: a `#dims=` header line followed
/// by one CSV row per frame, 9 significant digits per value.
pub fn format_features(m: &FeatureMatrix) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "#dims={} hop_ms={} labels={}",
        m.n_dims(),
        m.frame_hop_ms,
        m.labels.join(",")
    );
    for row in m.iter_rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.8e}")).collect();
        let _ = writeln!(out, "{}", line.join(","));
    }
    out
}

pub fn write_feature_csv(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    crate::pipeline::write_file_atomic(path.as_ref(), format_features(m).as_bytes())
}

pub fn read_feature_csv(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_features(&text).map_err(|(line, msg)| Error::FeatureParseError {
        path: path.to_path_buf(),
        line,
        msg,
    })
}

pub fn parse_features(text: &str) -> std::result::Result<FeatureMatrix, (usize, String)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or((1, "empty file".to_string()))?;
    let header = header
        .strip_prefix("#dims=")
        .ok_or((1, "missing #dims= header".to_string()))?;
    let mut dims: Option<usize> = None;
    let mut hop_ms: Option<f64> = None;
    let mut labels: Vec<String> = Vec::new();
    for (i, field) in format!("dims={header}").split(' ').enumerate() {
        let (key, value) = field
            .split_once('=')
            .ok_or((1, format!("malformed header field {i}")))?;
        match key {
            "dims" => dims = Some(value.parse().map_err(|_| (1, "bad dims".to_string()))?),
            "hop_ms" => hop_ms = Some(value.parse().map_err(|_| (1, "bad hop_ms".to_string()))?),
            "labels" => labels = value.split(',').map(str::to_string).collect(),
            other => return Err((1, format!("unknown header key {other}"))),
        }
    }
    let dims = dims.ok_or((1, "missing dims".to_string()))?;
    let hop_ms = hop_ms.ok_or((1, "missing hop_ms".to_string()))?;
    if labels.len() != dims {
        return Err((1, format!("{} labels for {dims} dims", labels.len())));
    }

    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        let row = row.map_err(|e| (idx + 1, format!("bad value: {e}")))?;
        if row.len() != dims {
            return Err((idx + 1, format!("{} values for {dims} dims", row.len())));
        }
        rows.push(row);
    }
    FeatureMatrix::from_rows(rows, labels, hop_ms).map_err(|e| (0, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::AudioClip;
    use crate::dsp::frame_signal;
    use proptest::prelude::*;

    fn matrix(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        let labels = (0..rows[0].len()).map(|i| format!("c{}", i + 1)).collect();
        FeatureMatrix::from_rows(rows, labels, 10.0).unwrap()
    }

    #[test]
    fn log_energy_floor_and_ones() {
        let clip = AudioClip::new(vec![0.0; 800], 16000);
        let frames = frame_signal(&clip, 25.0, 10.0, false).unwrap();
        let e = frame_log_energy(&frames);
        assert!((e[0] - (1e-10f64).ln()).abs() < 1e-9);
        assert!((e[0] + 23.0259).abs() < 1e-3);

        let clip = AudioClip::new(vec![1.0; 800], 16000);
        let frames = frame_signal(&clip, 25.0, 10.0, false).unwrap();
        let e = frame_log_energy(&frames);
        assert!((e[0] - 400.0000000001f64.ln()).abs() < 1e-12);
        assert!((e[0] - 5.9915).abs() < 1e-4);
    }

    #[test]
    fn deltas_of_constant_are_zero() {
        let m = matrix(vec![vec![3.0, -1.0]; 9]);
        let out = append_deltas(&m, 2).unwrap();
        assert_eq!(out.n_dims(), 6);
        for row in out.iter_rows() {
            assert_eq!(&row[2..], &[0.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn deltas_of_ramp_are_one_inside() {
        let m = matrix((0..20).map(|t| vec![t as f64]).collect());
        let out = append_deltas(&m, 2).unwrap();
        for i in 2..18 {
            assert!((out.row(i)[1] - 1.0).abs() < 1e-12, "frame {i}");
        }
    }

    #[test]
    fn deltas_triple_thirteen_to_thirty_nine() {
        let m = FeatureMatrix::from_rows(
            vec![vec![0.5; 13]; 7],
            (0..13).map(|i| format!("c{i}")).collect(),
            10.0,
        )
        .unwrap();
        let out = append_deltas(&m, 2).unwrap();
        assert_eq!(out.n_dims(), 39);
        assert!(matches!(
            append_deltas(&matrix(vec![vec![1.0]; 4]), 2),
            Err(Error::TooFewFrames { .. })
        ));
    }

    #[test]
    fn fuse_concatenates_columns() {
        let a = matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = FeatureMatrix::from_rows(
            vec![vec![9.0], vec![8.0]],
            vec!["ω1".to_string()],
            10.0,
        )
        .unwrap();
        let f = fuse(&a, &b).unwrap();
        assert_eq!(f.n_dims(), 3);
        assert_eq!(f.row(0), &[1.0, 2.0, 9.0]);
        assert_eq!(f.row(1), &[3.0, 4.0, 8.0]);
        assert_eq!(f.labels, vec!["c1", "c2", "ω1"]);

        let short = matrix(vec![vec![0.0, 0.0]]);
        assert!(matches!(fuse(&a, &short), Err(Error::FrameCountMismatch(2, 1))));
    }

    #[test]
    fn vad_mask_filters_rows() {
        let m = matrix((0..10).map(|t| vec![t as f64]).collect());
        let mask = VadMask {
            active: (0..10).map(|t| t % 2 == 0).collect(),
            threshold_db: -60.0,
            all_silent: false,
        };
        let out = apply_vad_mask(&m, &mask).unwrap();
        assert_eq!(out.n_frames(), 5);
        assert_eq!(out.column(0), vec![0.0, 2.0, 4.0, 6.0, 8.0]);

        let all = VadMask {
            active: vec![true; 10],
            threshold_db: -60.0,
            all_silent: false,
        };
        assert_eq!(apply_vad_mask(&m, &all).unwrap(), m);

        let none = VadMask {
            active: vec![false; 10],
            threshold_db: -60.0,
            all_silent: true,
        };
        assert!(matches!(apply_vad_mask(&m, &none), Err(Error::AllFramesRemoved)));
    }

    #[test]
    fn cms_zeroes_column_means() {
        let m = matrix(vec![vec![1.0, 5.0], vec![2.0, 6.0], vec![3.0, 10.0]]);
        let out = cepstral_mean_subtract(&m, None);
        for j in 0..2 {
            let mean: f64 = out.column(j).iter().sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-9);
        }
        // idempotence
        assert_eq!(cepstral_mean_subtract(&out, None), out);
        // single frame goes to exactly zero
        let single = cepstral_mean_subtract(&matrix(vec![vec![7.0, -2.0]]), None);
        assert_eq!(single.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn cms_respects_column_selector() {
        let m = matrix(vec![vec![1.0, 5.0], vec![3.0, 7.0]]);
        let out = cepstral_mean_subtract(&m, Some(&[0]));
        assert_eq!(out.column(0), vec![-1.0, 1.0]);
        assert_eq!(out.column(1), vec![5.0, 7.0]);
    }

    #[test]
    fn cepstral_column_selector_matches_labels() {
        let labels: Vec<String> = ["c1", "c2", "E", "Δc1", "Δc2", "ΔE", "ΔΔc1", "ΔΔc2", "ΔΔE", "ω1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(cepstral_columns(&labels), vec![0, 1, 3, 4, 6, 7]);
    }

    #[test]
    fn feature_csv_round_trip() {
        let m = matrix(vec![vec![1.25, -0.5], vec![0.0, 3.25]]);
        let text = format_features(&m);
        assert!(text.starts_with("#dims=2 hop_ms=10 labels=c1,c2\n"));
        let back = parse_features(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn feature_csv_rejects_dim_mismatch() {
        let text = "#dims=3 hop_ms=10 labels=a,b,c\n1.0,2.0\n";
        assert!(parse_features(text).is_err());
    }

    proptest! {
        #[test]
        fn cms_cancels_constant_offsets(
            offset in -100.0f64..100.0,
            rows in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 3), 2..20),
        ) {
            let base = matrix(rows.clone());
            let shifted = matrix(rows.iter().map(|r| r.iter().map(|v| v + offset).collect()).collect());
            let a = cepstral_mean_subtract(&base, None);
            let b = cepstral_mean_subtract(&shifted, None);
            for i in 0..a.n_frames() {
                for j in 0..a.n_dims() {
                    prop_assert!((a.row(i)[j] - b.row(i)[j]).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn deltas_ignore_constant_offsets(
            offset in -50.0f64..50.0,
            rows in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 2), 5..30),
        ) {
            let base = matrix(rows.clone());
            let shifted = matrix(rows.iter().map(|r| r.iter().map(|v| v + offset).collect()).collect());
            let a = append_deltas(&base, 2).unwrap();
            let b = append_deltas(&shifted, 2).unwrap();
            for i in 0..a.n_frames() {
                for j in 2..a.n_dims() {
                    prop_assert!((a.row(i)[j] - b.row(i)[j]).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn csv_round_trip_preserves_nine_digits(
            rows in proptest::collection::vec(proptest::collection::vec(-1000.0f64..1000.0, 2), 1..10),
        ) {
            let m = matrix(rows);
            let back = parse_features(&format_features(&m)).unwrap();
            for i in 0..m.n_frames() {
                for j in 0..m.n_dims() {
                    let orig = m.row(i)[j];
                    let got = back.row(i)[j];
                    prop_assert!((orig - got).abs() <= orig.abs() * 1e-8 + 1e-12);
                }
            }
        }
    }
}
