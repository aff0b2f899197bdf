//! Time-domain conditioning shared by both feature streams: pre-emphasis,
//! framing, Hamming windowing, energy-based voice activity detection, and
//! additive-noise mixing at a target SNR.

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Energy floor added before taking logs, in linear power units.
pub const ENERGY_EPS: f64 = 1e-10;

/// T frames of N samples each, laid out row-major.
#[derive(Debug, Clone)]
pub struct FrameMatrix {
    pub frames: Vec<Vec<f64>>,
    pub frame_len_samples: usize,
    pub hop_samples: usize,
    pub sample_rate_hz: u32,
}

impl FrameMatrix {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }
}

/// Per-frame speech/silence decisions.
#[derive(Debug, Clone)]
pub struct VadMask {
    pub active: Vec<bool>,
    pub threshold_db: f64,
    /// True when no frame carried any energy at all.
    pub all_silent: bool,
}

impl VadMask {
    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }
}

/// First-order high-pass filter x(t) = y(t) - a*y(t-1); x(0) = y(0).
///
/// Values of `a` outside [0.95, 0.98] are accepted with a warning, except
/// that the identity a = 0 stays silent so tests can use it freely.
pub fn pre_emphasize(clip: &AudioClip, a: f64) -> Result<AudioClip> {
    if clip.is_empty() {
        return Err(Error::EmptySignal);
    }
    if a != 0.0 && !(0.95..=0.98).contains(&a) {
        log::warn!("pre-emphasis coefficient {a} outside the usual [0.95, 0.98]");
    }
    let y = &clip.samples;
    let mut x = Vec::with_capacity(y.len());
    x.push(y[0]);
    for t in 1..y.len() {
        x.push(y[t] - a * y[t - 1]);
    }
    Ok(AudioClip::new(x, clip.sample_rate_hz))
}

/// Hamming window W(n) = 0.54 - 0.46*cos(2*pi*n/(N-1)).
pub fn hamming_window(n_samples: usize) -> Result<Vec<f64>> {
    if n_samples < 2 {
        return Err(Error::WindowTooShort(n_samples));
    }
    let denom = (n_samples - 1) as f64;
    Ok((0..n_samples)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / denom).cos())
        .collect())
}

/// Slice a clip into frames of `frame_ms` every `hop_ms`, discarding the
/// trailing partial frame.
pub fn frame_signal(
    clip: &AudioClip,
    frame_ms: f64,
    hop_ms: f64,
    apply_window: bool,
) -> Result<FrameMatrix> {
    let rate = clip.sample_rate_hz as f64;
    let frame_len = (frame_ms * rate / 1000.0).round() as usize;
    let hop = ((hop_ms * rate / 1000.0).round() as usize).max(1);
    if frame_len < 2 {
        return Err(Error::WindowTooShort(frame_len));
    }
    if clip.len() < frame_len {
        return Err(Error::SignalTooShort {
            signal: clip.len(),
            frame: frame_len,
        });
    }
    let window = if apply_window {
        Some(hamming_window(frame_len)?)
    } else {
        None
    };
    let n_frames = (clip.len() - frame_len) / hop + 1;
    let mut frames = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let start = i * hop;
        let mut row = clip.samples[start..start + frame_len].to_vec();
        if let Some(w) = &window {
            for (s, wn) in row.iter_mut().zip(w) {
                *s *= wn;
            }
        }
        frames.push(row);
    }
    Ok(FrameMatrix {
        frames,
        frame_len_samples: frame_len,
        hop_samples: hop,
        sample_rate_hz: clip.sample_rate_hz,
    })
}

fn frame_energy_db(frame: &[f64]) -> f64 {
    let e: f64 = frame.iter().map(|s| s * s).sum();
    10.0 * (e + ENERGY_EPS).log10()
}

/// Energy-threshold voice activity detection.
///
/// A frame is active when its log energy exceeds
/// max(peak_energy_db - dynamic_range_db, floor_db). The peak frame is
/// always kept whenever any frame carries nonzero energy.
pub fn detect_voice_activity(
    frames: &FrameMatrix,
    floor_db: f64,
    dynamic_range_db: f64,
) -> Result<VadMask> {
    if frames.frames.is_empty() {
        return Err(Error::EmptySignal);
    }
    let energies: Vec<f64> = frames.frames.iter().map(|f| frame_energy_db(f)).collect();
    let raw_peak = frames
        .frames
        .iter()
        .map(|f| f.iter().map(|s| s * s).sum::<f64>())
        .fold(0.0, f64::max);
    let peak_db = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold_db = (peak_db - dynamic_range_db).max(floor_db);
    let mut active: Vec<bool> = energies.iter().map(|&e| e > threshold_db).collect();
    let all_silent = raw_peak == 0.0;
    if !all_silent {
        // the loudest frame always qualifies
        let peak_idx = energies
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        active[peak_idx] = true;
    } else {
        active.iter_mut().for_each(|a| *a = false);
    }
    Ok(VadMask {
        active,
        threshold_db,
        all_silent,
    })
}

/// Expand a frame-level mask to sample level: a sample is active when at
/// least one active frame covers it.
pub fn mask_to_samples(mask: &VadMask, frames: &FrameMatrix, n_samples: usize) -> Vec<bool> {
    let mut out = vec![false; n_samples];
    for (i, &a) in mask.active.iter().enumerate() {
        if a {
            let start = i * frames.hop_samples;
            let end = (start + frames.frame_len_samples).min(n_samples);
            out[start..end].iter_mut().for_each(|s| *s = true);
        }
    }
    out
}

/// Additively mix `noise` into `clean` so that the speech-to-noise power
/// ratio hits `snr_db`.
///
/// Speech power is measured over VAD-active samples when a mask is given,
/// over the whole clip otherwise. Noise shorter than the clip loops with
/// wraparound; longer noise contributes its prefix. The output is
/// peak-normalized only when it leaves [-1, 1].
pub fn mix_noise_at_snr(
    clean: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
    vad: Option<(&VadMask, &FrameMatrix)>,
) -> Result<AudioClip> {
    if clean.sample_rate_hz != noise.sample_rate_hz {
        return Err(Error::RateMismatch(clean.sample_rate_hz, noise.sample_rate_hz));
    }
    if clean.is_empty() {
        return Err(Error::EmptySignal);
    }
    if noise.is_empty() {
        return Err(Error::SilentNoise);
    }
    let n = clean.len();
    let aligned: Vec<f64> = (0..n).map(|t| noise.samples[t % noise.len()]).collect();

    let speech_power = match vad {
        Some((mask, frames)) => {
            let sample_mask = mask_to_samples(mask, frames, n);
            let active: Vec<f64> = clean
                .samples
                .iter()
                .zip(&sample_mask)
                .filter(|(_, m)| **m)
                .map(|(s, _)| *s)
                .collect();
            if active.is_empty() {
                mean_power(&clean.samples)
            } else {
                mean_power(&active)
            }
        }
        None => mean_power(&clean.samples),
    };
    let noise_power = mean_power(&aligned);
    if noise_power == 0.0 {
        return Err(Error::SilentNoise);
    }

    let gain = (speech_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut out: Vec<f64> = clean
        .samples
        .iter()
        .zip(&aligned)
        .map(|(s, v)| s + gain * v)
        .collect();
    let peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 1.0 {
        out.iter_mut().for_each(|s| *s /= peak);
    }
    Ok(AudioClip::new(out, clean.sample_rate_hz))
}

pub fn mean_power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, 16000)
    }

    #[test]
    fn pre_emphasis_identity_at_zero() {
        let y = clip(vec![0.3, -0.2, 0.9]);
        assert_eq!(pre_emphasize(&y, 0.0).unwrap().samples, y.samples);
    }

    #[test]
    fn pre_emphasis_constant_signal() {
        let y = clip(vec![1.0; 5]);
        let x = pre_emphasize(&y, 0.97).unwrap();
        assert_eq!(x.samples[0], 1.0);
        for &v in &x.samples[1..] {
            assert!((v - 0.03).abs() < 1e-15);
        }
    }

    #[test]
    fn pre_emphasis_unit_impulse() {
        let x = pre_emphasize(&clip(vec![1.0, 0.0, 0.0]), 0.95).unwrap();
        assert_eq!(x.samples, vec![1.0, -0.95, 0.0]);
    }

    #[test]
    fn pre_emphasis_rejects_empty() {
        assert!(matches!(pre_emphasize(&clip(vec![]), 0.97), Err(Error::EmptySignal)));
    }

    #[test]
    fn hamming_endpoints_and_midpoint() {
        let w = hamming_window(3).unwrap();
        assert!((w[0] - 0.08).abs() < 1e-12);
        assert!((w[1] - 1.0).abs() < 1e-12);
        assert!((w[2] - 0.08).abs() < 1e-12);
        assert!(matches!(hamming_window(1), Err(Error::WindowTooShort(1))));
    }

    #[test]
    fn hamming_sum_matches_naive() {
        let n = 400;
        let w = hamming_window(n).unwrap();
        let direct: f64 = (0..n)
            .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / 399.0).cos())
            .sum();
        assert!((w.iter().sum::<f64>() - direct).abs() < 1e-9);
    }

    #[test]
    fn framing_arithmetic() {
        let c = clip(vec![0.0; 16000]);
        let fm = frame_signal(&c, 25.0, 10.0, false).unwrap();
        assert_eq!(fm.frame_len_samples, 400);
        assert_eq!(fm.hop_samples, 160);
        assert_eq!(fm.n_frames(), 98);
    }

    #[test]
    fn non_overlapping_frames_reproduce_prefix() {
        let samples: Vec<f64> = (0..1000).map(|i| (i as f64 / 1000.0) - 0.5).collect();
        let c = clip(samples.clone());
        let fm = frame_signal(&c, 10.0, 10.0, false).unwrap();
        let rebuilt: Vec<f64> = fm.frames.concat();
        assert_eq!(&samples[..rebuilt.len()], &rebuilt[..]);
    }

    #[test]
    fn windowed_constant_rows_equal_scaled_window() {
        let c = clip(vec![0.5; 2000]);
        let fm = frame_signal(&c, 25.0, 10.0, true).unwrap();
        let w = hamming_window(400).unwrap();
        for row in &fm.frames {
            for (r, wn) in row.iter().zip(&w) {
                assert!((r - 0.5 * wn).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn too_short_signal_errors() {
        let c = clip(vec![0.0; 100]);
        assert!(matches!(
            frame_signal(&c, 25.0, 10.0, false),
            Err(Error::SignalTooShort { .. })
        ));
    }

    #[test]
    fn vad_all_zero_is_inactive() {
        let c = clip(vec![0.0; 4000]);
        let fm = frame_signal(&c, 25.0, 10.0, false).unwrap();
        let mask = detect_voice_activity(&fm, -60.0, 30.0).unwrap();
        assert!(mask.all_silent);
        assert!(mask.active.iter().all(|a| !a));
    }

    #[test]
    fn vad_single_loud_frame() {
        // quiet everywhere except one 400-sample burst aligned to a frame
        let mut samples = vec![1e-6; 4000];
        for s in samples.iter_mut().skip(1600).take(400) {
            *s = 0.5;
        }
        let c = clip(samples);
        let fm = frame_signal(&c, 25.0, 25.0, false).unwrap();
        let mask = detect_voice_activity(&fm, -200.0, 30.0).unwrap();
        let active: Vec<usize> = mask
            .active
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(active, vec![4]);
    }

    #[test]
    fn vad_keeps_peak_frame_below_floor() {
        let mut samples = vec![0.0; 2000];
        samples[500] = 1e-5; // peak energy well under -60 dBFS
        let c = clip(samples);
        let fm = frame_signal(&c, 25.0, 25.0, false).unwrap();
        let mask = detect_voice_activity(&fm, -60.0, 30.0).unwrap();
        assert!(!mask.all_silent);
        assert_eq!(mask.active_count(), 1);
        assert!(mask.active[1]);
    }

    #[test]
    fn snr_zero_matches_power() {
        let speech = clip((0..8000).map(|i| 0.1 * (i as f64 * 0.13).sin()).collect());
        let noise = clip((0..8000).map(|i| 0.2 * (i as f64 * 0.71).sin()).collect());
        let mixed = mix_noise_at_snr(&speech, &noise, 0.0, None).unwrap();
        let added: Vec<f64> = mixed
            .samples
            .iter()
            .zip(&speech.samples)
            .map(|(m, s)| m - s)
            .collect();
        let measured = 10.0 * (mean_power(&speech.samples) / mean_power(&added)).log10();
        assert!(measured.abs() < 0.1, "measured {measured} dB");
    }

    #[test]
    fn snr_sixty_barely_changes_signal() {
        let speech = clip((0..8000).map(|i| 0.1 * (i as f64 * 0.13).sin()).collect());
        let noise = clip((0..8000).map(|i| 0.1 * (i as f64 * 0.77).cos()).collect());
        let mixed = mix_noise_at_snr(&speech, &noise, 60.0, None).unwrap();
        let diff: Vec<f64> = mixed
            .samples
            .iter()
            .zip(&speech.samples)
            .map(|(m, s)| m - s)
            .collect();
        let rel = (mean_power(&diff) / mean_power(&speech.samples)).sqrt();
        assert!(rel < 0.002, "relative rms {rel}");
    }

    #[test]
    fn silent_noise_rejected() {
        let speech = clip(vec![0.1; 1000]);
        let noise = clip(vec![0.0; 1000]);
        assert!(matches!(
            mix_noise_at_snr(&speech, &noise, 10.0, None),
            Err(Error::SilentNoise)
        ));
    }

    #[test]
    fn rate_mismatch_rejected() {
        let speech = clip(vec![0.1; 1000]);
        let noise = AudioClip::new(vec![0.1; 1000], 8000);
        assert!(matches!(
            mix_noise_at_snr(&speech, &noise, 10.0, None),
            Err(Error::RateMismatch(16000, 8000))
        ));
    }

    proptest! {
        #[test]
        fn pre_emphasis_is_linear(
            y1 in proptest::collection::vec(-1.0f64..1.0, 10..50),
            scale in -3.0f64..3.0,
        ) {
            let y2: Vec<f64> = y1.iter().map(|v| v * 0.5 + 0.1).collect();
            let lhs: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| scale * a + b).collect();
            let out_lhs = pre_emphasize(&clip(lhs), 0.97).unwrap();
            let out1 = pre_emphasize(&clip(y1.clone()), 0.97).unwrap();
            let out2 = pre_emphasize(&clip(y2), 0.97).unwrap();
            for i in 0..y1.len() {
                let combined = scale * out1.samples[i] + out2.samples[i];
                prop_assert!((out_lhs.samples[i] - combined).abs() < 1e-12);
            }
        }

        #[test]
        fn hamming_weights_in_range(n in 2usize..2000) {
            let w = hamming_window(n).unwrap();
            for v in w {
                prop_assert!((0.08 - 1e-12..=1.0 + 1e-12).contains(&v));
            }
        }

        #[test]
        fn hamming_is_symmetric(n in 2usize..500) {
            let w = hamming_window(n).unwrap();
            for i in 0..n {
                prop_assert!((w[i] - w[n - 1 - i]).abs() < 1e-12);
            }
        }

        #[test]
        fn vad_is_gain_invariant(
            seed in 0u64..1000,
            gain in 0.01f64..20.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f64> = (0..4000)
                .map(|i| if (i / 800) % 2 == 0 { rng.random_range(-0.05..0.05) } else { rng.random_range(-0.4..0.4) })
                .collect();
            let base = frame_signal(&clip(samples.clone()), 25.0, 10.0, false).unwrap();
            let scaled_samples: Vec<f64> = samples.iter().map(|s| s * gain).collect();
            let scaled = frame_signal(&clip(scaled_samples), 25.0, 10.0, false).unwrap();
            // floor far below every scaled energy so only the relative rule acts
            let m1 = detect_voice_activity(&base, -400.0, 20.0).unwrap();
            let m2 = detect_voice_activity(&scaled, -400.0, 20.0).unwrap();
            prop_assert_eq!(m1.active, m2.active);
        }

        #[test]
        fn mix_hits_requested_snr(
            seed in 0u64..500,
            snr in prop_oneof![Just(-10.0f64), Just(0.0), Just(10.0), Just(30.0)],
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let speech: Vec<f64> = (0..6000).map(|_| rng.random_range(-0.05..0.05)).collect();
            let noise: Vec<f64> = (0..2500).map(|_| rng.random_range(-0.08..0.08)).collect();
            let speech = clip(speech);
            let noise = clip(noise);
            let mixed = mix_noise_at_snr(&speech, &noise, snr, None).unwrap();
            let added: Vec<f64> = mixed.samples.iter().zip(&speech.samples).map(|(m, s)| m - s).collect();
            let measured = 10.0 * (mean_power(&speech.samples) / mean_power(&added)).log10();
            prop_assert!((measured - snr).abs() < 0.1, "measured {} for target {}", measured, snr);
        }
    }
}
