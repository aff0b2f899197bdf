//! Mel-frequency cepstral coefficients.
//!
//! Pipeline per frame: zero-padded FFT power spectrum, triangular mel
//! filterbank on a base-2 log frequency scale, dB magnitude envelope,
//! and a DCT down to the cepstral order. Filter centers are spaced so
//! that 1000 Hz maps to 1000 mel and 3000 Hz to 2000 mel.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::AudioClip;
use crate::dsp::{frame_signal, pre_emphasize};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Spectral front-end settings.
#[derive(Debug, Clone)]
pub struct CepstraConfig {
    /// Number of cepstral coefficients L.
    pub n_cepstra: usize,
    /// Number of mel filters K.
    pub n_filters: usize,
    pub fft_size: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    /// Floor on the magnitude envelope before the log.
    pub log_floor: f64,
}

impl Default for CepstraConfig {
    fn default() -> Self {
        CepstraConfig {
            n_cepstra: 12,
            n_filters: 26,
            fft_size: 512,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl CepstraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cepstra < 1 || self.n_cepstra > self.n_filters {
            return Err(Error::BadOrder {
                order: self.n_cepstra,
                filters: self.n_filters,
            });
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::BadFftSize(self.fft_size));
        }
        if self.fmin_hz < 0.0 {
            return Err(Error::NegativeFrequency(self.fmin_hz));
        }
        if self.fmax_hz <= self.fmin_hz {
            return Err(Error::InvalidConfig(format!(
                "fmax {} must exceed fmin {}",
                self.fmax_hz, self.fmin_hz
            )));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::InvalidConfig("log_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Triangular mel filterbank evaluated at FFT bin centers.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub n_filters: usize,
    pub fft_size: usize,
    pub sample_rate_hz: u32,
    /// K rows of fft_size/2 + 1 weights.
    pub weights: Vec<Vec<f64>>,
    pub center_freqs_hz: Vec<f64>,
}

/// Base-2 mel scale: f_mel = 1000 * log2(1 + f/1000).
pub fn mel_scale(f_lin_hz: f64) -> Result<f64> {
    if f_lin_hz < 0.0 {
        return Err(Error::NegativeFrequency(f_lin_hz));
    }
    Ok(1000.0 * (1.0 + f_lin_hz / 1000.0).log2())
}

/// Inverse of [`mel_scale`].
pub fn mel_to_hz(f_mel: f64) -> f64 {
    1000.0 * ((f_mel / 1000.0).exp2() - 1.0)
}

/// Squared FFT magnitudes at bins 0..=fft_size/2 of the zero-padded frame.
pub fn power_spectrum(frame: &[f64], fft_size: usize) -> Result<Vec<f64>> {
    let fft = plan_fft(frame.len(), fft_size)?;
    Ok(power_spectrum_with(&fft, frame, fft_size))
}

fn plan_fft(frame_len: usize, fft_size: usize) -> Result<Arc<dyn Fft<f64>>> {
    if !fft_size.is_power_of_two() || fft_size < frame_len {
        return Err(Error::BadFftSize(fft_size));
    }
    Ok(FftPlanner::new().plan_fft_forward(fft_size))
}

fn power_spectrum_with(fft: &Arc<dyn Fft<f64>>, frame: &[f64], fft_size: usize) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = frame.iter().map(|&s| Complex::new(s, 0.0)).collect();
    buf.resize(fft_size, Complex::new(0.0, 0.0));
    fft.process(&mut buf);
    buf[..=fft_size / 2].iter().map(|c| c.norm_sqr()).collect()
}

/// Build K triangular filters whose K+2 boundary points are equally
/// spaced on the mel axis between fmin and fmax.
pub fn build_mel_filterbank(cfg: &CepstraConfig, sample_rate_hz: u32) -> Result<MelFilterbank> {
    cfg.validate()?;
    let nyquist = sample_rate_hz as f64 / 2.0;
    if cfg.fmax_hz > nyquist + 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "fmax {} Hz above Nyquist {} Hz",
            cfg.fmax_hz, nyquist
        )));
    }
    let k = cfg.n_filters;
    let mel_lo = mel_scale(cfg.fmin_hz)?;
    let mel_hi = mel_scale(cfg.fmax_hz)?;
    let bounds_hz: Vec<f64> = (0..k + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (k + 1) as f64))
        .collect();

    let n_bins = cfg.fft_size / 2 + 1;
    let bin_hz = sample_rate_hz as f64 / cfg.fft_size as f64;
    let mut weights = Vec::with_capacity(k);
    for f in 0..k {
        let (lo, mid, hi) = (bounds_hz[f], bounds_hz[f + 1], bounds_hz[f + 2]);
        let mut row = vec![0.0; n_bins];
        let mut covered = false;
        for (b, w) in row.iter_mut().enumerate() {
            let freq = b as f64 * bin_hz;
            let v = if freq >= lo && freq <= mid {
                (freq - lo) / (mid - lo)
            } else if freq > mid && freq <= hi {
                (hi - freq) / (hi - mid)
            } else {
                0.0
            };
            if v > 0.0 {
                covered = true;
            }
            *w = v;
        }
        if !covered {
            return Err(Error::TooManyFilters(f));
        }
        weights.push(row);
    }
    Ok(MelFilterbank {
        n_filters: k,
        fft_size: cfg.fft_size,
        sample_rate_hz,
        weights,
        center_freqs_hz: bounds_hz[1..=k].to_vec(),
    })
}

/// dB magnitude envelope per filter: 20*log10(max(sqrt(energy), floor)).
pub fn log_mel_energies(powspec: &[f64], fb: &MelFilterbank, log_floor: f64) -> Result<Vec<f64>> {
    let n_bins = fb.fft_size / 2 + 1;
    if powspec.len() != n_bins {
        return Err(Error::DimMismatch(powspec.len(), n_bins));
    }
    Ok(fb
        .weights
        .iter()
        .map(|row| {
            let energy: f64 = row.iter().zip(powspec).map(|(w, p)| w * p).sum();
            20.0 * energy.sqrt().max(log_floor).log10()
        })
        .collect())
}

/// DCT of the log-spectral coefficients:
/// c_n = sum_k S_k cos(n (k - 1/2) pi / K), n = 1..L.
pub fn dct_cepstrum(log_energies: &[f64], n_cepstra: usize) -> Result<Vec<f64>> {
    let k_filters = log_energies.len();
    if n_cepstra < 1 || n_cepstra > k_filters {
        return Err(Error::BadOrder {
            order: n_cepstra,
            filters: k_filters,
        });
    }
    let scale = std::f64::consts::PI / k_filters as f64;
    Ok((1..=n_cepstra)
        .map(|n| {
            log_energies
                .iter()
                .enumerate()
                .map(|(k, s)| s * ((n as f64) * (k as f64 + 0.5) * scale).cos())
                .sum()
        })
        .collect())
}

/// Full MFCC pipeline for one clip: pre-emphasis, windowed framing, power
/// spectrum, filterbank dB envelope, DCT. Rows are frames, columns c1..cL.
pub fn mfcc_features(
    clip: &AudioClip,
    cfg: &CepstraConfig,
    frame_ms: f64,
    hop_ms: f64,
    preemph_a: f64,
) -> Result<FeatureMatrix> {
    let fb = build_mel_filterbank(cfg, clip.sample_rate_hz)?;
    let emphasized = pre_emphasize(clip, preemph_a)?;
    let frames = frame_signal(&emphasized, frame_ms, hop_ms, true)?;
    if frames.frame_len_samples > cfg.fft_size {
        return Err(Error::BadFftSize(cfg.fft_size));
    }
    let fft = plan_fft(frames.frame_len_samples, cfg.fft_size)?;
    let rows: Result<Vec<Vec<f64>>> = frames
        .frames
        .iter()
        .map(|frame| {
            let ps = power_spectrum_with(&fft, frame, cfg.fft_size);
            let envelope = log_mel_energies(&ps, &fb, cfg.log_floor)?;
            dct_cepstrum(&envelope, cfg.n_cepstra)
        })
        .collect();
    let labels = (1..=cfg.n_cepstra).map(|i| format!("c{i}")).collect();
    FeatureMatrix::from_rows(rows?, labels, hop_ms)
}
