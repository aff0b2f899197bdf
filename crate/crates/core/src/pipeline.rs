//! End-to-end orchestration: per-utterance extraction, enrollment over a
//! manifest, and trial scoring. The CLI is a thin wrapper over these
//! functions, and the in-memory variants keep large test sweeps off the
//! filesystem.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::audio::AudioClip;
use crate::config::{CmsMode, GammaSpec, PcaSelection, PipelineConfig};
use crate::corpus::{CorpusManifest, Role};
use crate::dsp::{detect_voice_activity, frame_signal, mix_noise_at_snr, pre_emphasize};
use crate::error::{Error, Result};
use crate::eval::{DetCurve, TrialScore};
use crate::features::{
    append_deltas, apply_vad_mask, cepstral_columns, cepstral_mean_subtract, frame_log_energy,
    fuse, FeatureMatrix,
};
use crate::lsf::lsf_features;
use crate::mfcc::{mfcc_features, CepstraConfig};
use crate::pca::{choose_dimension, fit_pca, project, PcaTransform};
use crate::svm::{score_utterance, train_svm, KernelSpec, SpeakerModel, TrainOptions};

/// Whole-file atomic write: temp file in the target directory, then rename.
pub fn write_file_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp~");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureStream {
    /// 12 MFCC + energy + deltas + delta-deltas = 39 dims.
    Mfcc,
    /// 12 line spectral frequencies.
    Lsf,
    /// MFCC stream then LSF stream = 51 dims.
    Fused,
}

impl FeatureStream {
    pub fn name(self) -> &'static str {
        match self {
            FeatureStream::Mfcc => "mfcc",
            FeatureStream::Lsf => "lsf",
            FeatureStream::Fused => "fused",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "mfcc" => Some(FeatureStream::Mfcc),
            "lsf" => Some(FeatureStream::Lsf),
            "fused" => Some(FeatureStream::Fused),
            _ => None,
        }
    }
}

fn cepstra_config(cfg: &PipelineConfig) -> CepstraConfig {
    CepstraConfig {
        n_cepstra: cfg.n_cepstra,
        n_filters: cfg.n_filters,
        fft_size: cfg.fft_size,
        fmin_hz: cfg.fmin_hz,
        fmax_hz: cfg.fmax_hz,
        log_floor: cfg.log_floor,
    }
}

/// Extract one utterance: feature stream, VAD filtering, CMS. When noise
/// is given it is mixed at the stated SNR first; with `vad_on_clean` the
/// activity mask still comes from the clean signal.
pub fn extract_clip(
    clip: &AudioClip,
    cfg: &PipelineConfig,
    stream: FeatureStream,
    noise: Option<(&AudioClip, f64)>,
) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let clean_frames = frame_signal(clip, cfg.frame_ms, cfg.hop_ms, false)?;
    let clean_mask = detect_voice_activity(&clean_frames, cfg.vad_floor_db, cfg.vad_dynamic_range_db)?;

    let (signal, mask) = match noise {
        None => (clip.clone(), clean_mask),
        Some((noise_clip, snr_db)) => {
            let mixed = mix_noise_at_snr(clip, noise_clip, snr_db, Some((&clean_mask, &clean_frames)))?;
            if cfg.vad_on_clean {
                (mixed, clean_mask)
            } else {
                let frames = frame_signal(&mixed, cfg.frame_ms, cfg.hop_ms, false)?;
                let mask = detect_voice_activity(&frames, cfg.vad_floor_db, cfg.vad_dynamic_range_db)?;
                (mixed, mask)
            }
        }
    };

    let raw = match stream {
        FeatureStream::Mfcc => mfcc_with_energy(&signal, cfg)?,
        FeatureStream::Lsf => lsf_features(&signal, cfg.lpc_order, cfg.frame_ms, cfg.hop_ms, cfg.preemph_a)?,
        FeatureStream::Fused => {
            let mfcc39 = mfcc_with_energy(&signal, cfg)?;
            let lsf12 = lsf_features(&signal, cfg.lpc_order, cfg.frame_ms, cfg.hop_ms, cfg.preemph_a)?;
            fuse(&mfcc39, &lsf12)?
        }
    };

    let active = apply_vad_mask(&raw, &mask)?;
    Ok(match cfg.cms {
        CmsMode::All => cepstral_mean_subtract(&active, None),
        CmsMode::Cepstral => {
            let cols = cepstral_columns(&active.labels);
            cepstral_mean_subtract(&active, Some(&cols))
        }
        CmsMode::Off => active,
    })
}

/// 12 cepstra + log energy, then first and second derivatives: 39 dims.
fn mfcc_with_energy(clip: &AudioClip, cfg: &PipelineConfig) -> Result<FeatureMatrix> {
    let cepstra = mfcc_features(clip, &cepstra_config(cfg), cfg.frame_ms, cfg.hop_ms, cfg.preemph_a)?;
    // energy on the unwindowed frames of the pre-emphasized signal
    let emphasized = pre_emphasize(clip, cfg.preemph_a)?;
    let frames = frame_signal(&emphasized, cfg.frame_ms, cfg.hop_ms, false)?;
    let energy = frame_log_energy(&frames);
    if energy.len() != cepstra.n_frames() {
        return Err(Error::FrameCountMismatch(energy.len(), cepstra.n_frames()));
    }
    let mut labels = cepstra.labels.clone();
    labels.push("E".to_string());
    let rows: Vec<Vec<f64>> = cepstra
        .iter_rows()
        .zip(&energy)
        .map(|(row, &e)| {
            let mut r = row.to_vec();
            r.push(e);
            r
        })
        .collect();
    let base = FeatureMatrix::from_rows(rows, labels, cfg.hop_ms)?;
    append_deltas(&base, cfg.delta_window)
}

pub type UttKey = (String, String);
pub type FeatureSet = BTreeMap<UttKey, FeatureMatrix>;

/// Noise injection request for extraction: which roles hear the noise.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    pub noise: AudioClip,
    pub snr_db: f64,
    pub roles: Vec<Role>,
}

pub fn resolve_path(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Extract every manifest entry in parallel. `base` anchors relative
/// WAV paths (normally the manifest's directory).
pub fn extract_manifest(
    manifest: &CorpusManifest,
    base: &Path,
    cfg: &PipelineConfig,
    stream: FeatureStream,
    noise: Option<&NoiseSpec>,
) -> Result<FeatureSet> {
    manifest.validate()?;
    let results: Vec<(UttKey, Result<FeatureMatrix>)> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let key = (entry.speaker_id.clone(), entry.utterance_id.clone());
            let features = crate::audio::read_wav(resolve_path(base, &entry.path)).and_then(|clip| {
                let inject = noise
                    .filter(|n| n.roles.contains(&entry.role))
                    .map(|n| (&n.noise, n.snr_db));
                extract_clip(&clip, cfg, stream, inject)
            });
            (key, features)
        })
        .collect();
    let mut out = FeatureSet::new();
    for (key, result) in results {
        let features = result.map_err(|e| {
            Error::ManifestError(format!("{}/{}: {e}", key.0, key.1))
        })?;
        out.insert(key, features);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainedSpeaker {
    pub model: SpeakerModel,
    pub converged: bool,
}

/// Fit the global PCA on pooled enroll + background frames, then train
/// one model per enrolled speaker against the background cohort.
pub fn train_from_features(
    features: &FeatureSet,
    manifest: &CorpusManifest,
    cfg: &PipelineConfig,
    stream: FeatureStream,
) -> Result<Vec<TrainedSpeaker>> {
    cfg.validate()?;
    let enroll_speakers = manifest.speakers_with_role(Role::Enroll);
    if enroll_speakers.is_empty() {
        return Err(Error::EmptyClass("no enroll entries in manifest".into()));
    }

    let mut pooled_rows: Vec<Vec<f64>> = Vec::new();
    let mut background_rows: Vec<Vec<f64>> = Vec::new();
    let mut per_speaker: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    let mut labels: Option<Vec<String>> = None;
    for entry in &manifest.entries {
        if entry.role != Role::Enroll && entry.role != Role::Background {
            continue;
        }
        let key = (entry.speaker_id.clone(), entry.utterance_id.clone());
        let m = features
            .get(&key)
            .ok_or_else(|| Error::ManifestError(format!("missing features for {}/{}", key.0, key.1)))?;
        if labels.is_none() {
            labels = Some(m.labels.clone());
        }
        for row in m.iter_rows() {
            pooled_rows.push(row.to_vec());
            match entry.role {
                Role::Background => background_rows.push(row.to_vec()),
                Role::Enroll => per_speaker
                    .entry(entry.speaker_id.as_str())
                    .or_default()
                    .push(row.to_vec()),
                _ => unreachable!(),
            }
        }
    }
    if background_rows.is_empty() {
        return Err(Error::EmptyClass("no background entries in manifest".into()));
    }
    let input_dim = pooled_rows.first().map(|r| r.len()).unwrap_or(0);

    let transform = match cfg.pca {
        PcaSelection::Off => PcaTransform::identity(input_dim),
        selection => {
            let pool = FeatureMatrix::from_rows(
                pooled_rows,
                labels.clone().unwrap_or_default(),
                cfg.hop_ms,
            )?;
            let full = fit_pca(&pool)?;
            let d = match selection {
                PcaSelection::Retention(r) => choose_dimension(&full.eigenvalues, r, None),
                PcaSelection::Fixed(d) => choose_dimension(&full.eigenvalues, 1.0, Some(d)),
                PcaSelection::Off => unreachable!(),
            };
            full.truncate(d)
        }
    };

    let dim = transform.output_dim;
    let gamma = match cfg.svm_gamma {
        GammaSpec::Auto => 1.0 / dim as f64,
        GammaSpec::Fixed(g) => g,
    };
    let neg_reduced: Vec<Vec<f64>> = background_rows
        .iter()
        .map(|r| transform.project_row(r))
        .collect::<Result<_>>()?;

    let layout = format!("{}{}", stream.name(), input_dim);
    let jobs: Vec<(usize, &str, &Vec<Vec<f64>>)> = enroll_speakers
        .iter()
        .enumerate()
        .map(|(i, s)| {
            (
                i,
                s.as_str(),
                per_speaker.get(s.as_str()).expect("enroll speaker has rows"),
            )
        })
        .collect();
    let trained: Vec<Result<TrainedSpeaker>> = jobs
        .par_iter()
        .map(|(index, speaker, rows)| {
            let pos: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| transform.project_row(r))
                .collect::<Result<_>>()?;
            let opts = TrainOptions {
                kernel: KernelSpec::Rbf { gamma },
                c: cfg.svm_c,
                tol: cfg.svm_tol,
                seed: cfg.seed.wrapping_add(*index as u64),
                negatives_per_positive: cfg.svm_neg_ratio,
                max_pair_updates: 1_000_000,
            };
            let outcome = train_svm(speaker, &pos, &neg_reduced, &opts)?;
            let mut model = outcome.model;
            model.pca = transform.clone();
            model.cms_mode = cfg.cms;
            model.feature_layout = layout.clone();
            Ok(TrainedSpeaker {
                model,
                converged: outcome.converged,
            })
        })
        .collect();
    trained.into_iter().collect()
}

/// Project an unreduced feature matrix through the model's embedded
/// transform and score it.
pub fn score_features(model: &SpeakerModel, m: &FeatureMatrix) -> Result<f64> {
    let reduced = project(&model.pca, m)?;
    score_utterance(model, &reduced)
}

/// Score the manifest's trial protocol: each test utterance against its
/// own speaker's model, each impostor utterance against every model.
pub fn score_trials(
    models: &[SpeakerModel],
    features: &FeatureSet,
    manifest: &CorpusManifest,
) -> Result<Vec<TrialScore>> {
    let by_id: BTreeMap<&str, &SpeakerModel> =
        models.iter().map(|m| (m.speaker_id.as_str(), m)).collect();

    let mut jobs: Vec<(&SpeakerModel, UttKey, bool)> = Vec::new();
    for entry in &manifest.entries {
        let key = (entry.speaker_id.clone(), entry.utterance_id.clone());
        match entry.role {
            Role::Test => {
                let model = by_id
                    .get(entry.speaker_id.as_str())
                    .ok_or_else(|| Error::MissingModel(entry.speaker_id.clone()))?;
                jobs.push((model, key, true));
            }
            Role::Impostor => {
                for model in models {
                    jobs.push((model, key.clone(), false));
                }
            }
            _ => {}
        }
    }

    let scores: Vec<Result<TrialScore>> = jobs
        .par_iter()
        .map(|(model, key, is_target)| {
            let m = features
                .get(key)
                .ok_or_else(|| Error::ManifestError(format!("missing features for {}/{}", key.0, key.1)))?;
            Ok(TrialScore {
                claimed_id: model.speaker_id.clone(),
                is_target: *is_target,
                score: score_features(model, m)?,
            })
        })
        .collect();
    scores.into_iter().collect()
}

/// Full in-memory evaluation: extraction, training, scoring, curve.
/// Used by the CLI pieces and by end-to-end sweeps in tests.
pub fn evaluate_corpus(
    manifest: &CorpusManifest,
    base: &Path,
    cfg: &PipelineConfig,
    stream: FeatureStream,
    noise_for_tests: Option<&NoiseSpec>,
) -> Result<(Vec<TrialScore>, DetCurve)> {
    let clean = extract_manifest(manifest, base, cfg, stream, None)?;
    let models = train_from_features(&clean, manifest, cfg, stream)?;
    let test_features = match noise_for_tests {
        None => clean,
        Some(spec) => extract_manifest(manifest, base, cfg, stream, Some(spec))?,
    };
    let trials = score_trials(
        &models.iter().map(|t| t.model.clone()).collect::<Vec<_>>(),
        &test_features,
        manifest,
    )?;
    let curve = DetCurve::from_trials(&trials)?;
    Ok((trials, curve))
}
