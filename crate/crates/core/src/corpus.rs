//! Corpus manifests and the synthetic corpus generator.
//!
//! Synthetic speakers are order-12 all-pole voices: six resonances with
//! per-speaker angles and radii, excited by a jittered glottal-style pulse
//! train plus a small noise floor. Speaker filters are resampled until
//! every pair of voices is at least 0.05 rad apart in mean LSF distance,
//! so the corpus is separable by construction and the LSF front-end can
//! be checked against the generator's own filters.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{write_wav, AudioClip};
use crate::error::{Error, Result};
use crate::lsf::{lpc_to_lsf, LpcModel, LsfVector};

pub const CORPUS_SAMPLE_RATE: u32 = 16000;
/// Minimum pairwise mean LSF distance between generated speakers.
pub const MIN_SPEAKER_LSF_DISTANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Enroll,
    Test,
    Background,
    Impostor,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Enroll => "enroll",
            Role::Test => "test",
            Role::Background => "background",
            Role::Impostor => "impostor",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "enroll" => Some(Role::Enroll),
            "test" => Some(Role::Test),
            "background" => Some(Role::Background),
            "impostor" => Some(Role::Impostor),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub speaker_id: String,
    pub utterance_id: String,
    pub role: Role,
    /// WAV path, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert((e.speaker_id.clone(), e.utterance_id.clone())) {
                return Err(Error::ManifestError(format!(
                    "duplicate entry {}/{}",
                    e.speaker_id, e.utterance_id
                )));
            }
        }
        let background: BTreeSet<&str> = self
            .entries
            .iter()
            .filter(|e| e.role == Role::Background)
            .map(|e| e.speaker_id.as_str())
            .collect();
        let impostor: BTreeSet<&str> = self
            .entries
            .iter()
            .filter(|e| e.role == Role::Impostor)
            .map(|e| e.speaker_id.as_str())
            .collect();
        if let Some(overlap) = background.intersection(&impostor).next() {
            return Err(Error::ManifestError(format!(
                "speaker {overlap} appears as both background and impostor"
            )));
        }
        Ok(())
    }

    pub fn speakers_with_role(&self, role: Role) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .entries
            .iter()
            .filter(|e| e.role == role)
            .map(|e| e.speaker_id.as_str())
            .collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn format_csv(&self) -> String {
        let mut out = String::from("speaker_id,utterance_id,role,path\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                e.speaker_id,
                e.utterance_id,
                e.role.name(),
                e.path.display()
            );
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.is_empty() || (idx == 0 && line == "speaker_id,utterance_id,role,path") {
                continue;
            }
            let mut fields = line.splitn(4, ',');
            match (fields.next(), fields.next(), fields.next(), fields.next()) {
                (Some(spk), Some(utt), Some(role), Some(path)) if !path.is_empty() => {
                    let role = Role::from_name(role).ok_or_else(|| {
                        Error::ManifestError(format!("line {}: unknown role `{role}`", idx + 1))
                    })?;
                    entries.push(ManifestEntry {
                        speaker_id: spk.to_string(),
                        utterance_id: utt.to_string(),
                        role,
                        path: PathBuf::from(path),
                    });
                }
                _ => {
                    return Err(Error::ManifestError(format!(
                        "line {}: expected speaker_id,utterance_id,role,path",
                        idx + 1
                    )))
                }
            }
        }
        let manifest = CorpusManifest { entries };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::pipeline::write_file_atomic(path.as_ref(), self.format_csv().as_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }
}

/// A synthetic speaker: resonance geometry plus pitch.
#[derive(Debug, Clone)]
pub struct SpeakerVoice {
    /// (angle rad, radius) per conjugate pole pair.
    pub poles: Vec<(f64, f64)>,
    pub f0_hz: f64,
    pub model: LpcModel,
    pub lsf: LsfVector,
}

fn substream(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    // splitmix-style mixing keeps per-entity streams independent
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(b.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn model_from_poles(poles: &[(f64, f64)]) -> LpcModel {
    let mut coeffs = vec![1.0];
    for &(angle, radius) in poles {
        coeffs = crate::lsf::poly_mul(
            &coeffs,
            &[1.0, -2.0 * radius * angle.cos(), radius * radius],
        );
    }
    let order = coeffs.len() - 1;
    let a = coeffs[1..].iter().map(|c| -c).collect();
    LpcModel { order, a, gain: 1.0 }
}

fn draw_voice(rng: &mut ChaCha8Rng, n_pairs: usize) -> SpeakerVoice {
    let lo = 0.05 * std::f64::consts::PI;
    let hi = 0.93 * std::f64::consts::PI;
    let band = (hi - lo) / n_pairs as f64;
    let poles: Vec<(f64, f64)> = (0..n_pairs)
        .map(|i| {
            let angle = lo + band * (i as f64 + rng.random_range(0.15..0.85));
            let radius = rng.random_range(0.88..0.96);
            (angle, radius)
        })
        .collect();
    let f0_hz = rng.random_range(85.0..240.0);
    let model = model_from_poles(&poles);
    let lsf = lpc_to_lsf(&model).expect("pole-product filters are minimum phase");
    SpeakerVoice {
        poles,
        f0_hz,
        model,
        lsf,
    }
}

/// Mean absolute LSF difference between two same-order voices.
pub fn lsf_distance(a: &LsfVector, b: &LsfVector) -> f64 {
    a.omegas
        .iter()
        .zip(&b.omegas)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.omegas.len() as f64
}

/// Deterministically synthesize voice `index` of the corpus, rejecting
/// candidates too close to any previously accepted voice.
pub fn synth_voice(seed: u64, kind: u64, index: usize, accepted: &[SpeakerVoice]) -> SpeakerVoice {
    for attempt in 0..1000u64 {
        let mut rng = substream(seed, kind * 1000 + index as u64, attempt);
        let voice = draw_voice(&mut rng, 6);
        let ok = accepted
            .iter()
            .all(|v| lsf_distance(&voice.lsf, &v.lsf) > MIN_SPEAKER_LSF_DISTANCE);
        if ok {
            return voice;
        }
    }
    unreachable!("voice rejection failed 1000 draws; distance bound too strict")
}

/// One utterance of a voice: silence, pulse-train-excited resonances with
/// pitch drift and a per-utterance wobble of the pole geometry, silence.
pub fn synth_utterance(voice: &SpeakerVoice, seed: u64, kind: u64, index: usize, utt: usize) -> AudioClip {
    let rate = CORPUS_SAMPLE_RATE as f64;
    let mut rng = substream(seed, kind * 1000 + index as u64, 1_000_000 + utt as u64);

    let voiced_s = rng.random_range(1.0..1.4);
    let silence = (0.12 * rate) as usize;
    let voiced = (voiced_s * rate) as usize;
    let total = voiced + 2 * silence;

    // small per-utterance deviation from the speaker's canonical filter
    let poles: Vec<(f64, f64)> = voice
        .poles
        .iter()
        .map(|&(angle, radius)| {
            (
                angle + rng.random_range(-0.008..0.008),
                (radius + rng.random_range(-0.004..0.004)).clamp(0.85, 0.97),
            )
        })
        .collect();
    let model = model_from_poles(&poles);

    let f0 = voice.f0_hz * (1.0 + rng.random_range(-0.04..0.04));
    let noise_level = rng.random_range(0.02..0.04);
    let mut excitation = vec![0.0f64; voiced];
    let mut t = 0.0f64;
    while (t as usize) < voiced {
        excitation[t as usize] = 1.0;
        // slow vibrato on the pitch period
        let vibrato = 1.0 + 0.03 * (2.0 * std::f64::consts::PI * 2.5 * t / rate).sin();
        t += rate / f0 * vibrato;
    }
    for e in excitation.iter_mut() {
        *e += rng.random_range(-noise_level..noise_level);
    }

    // all-pole synthesis x[t] = e[t] + sum a_k x[t-k]
    let mut x = vec![0.0f64; voiced];
    for i in 0..voiced {
        let mut v = excitation[i];
        for (k, &ak) in model.a.iter().enumerate() {
            if i > k {
                v += ak * x[i - k - 1];
            }
        }
        x[i] = v;
    }

    // raised-cosine fades avoid onset clicks
    let fade = (0.05 * rate) as usize;
    for i in 0..fade.min(voiced) {
        let w = 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / fade as f64).cos();
        x[i] *= w;
        x[voiced - 1 - i] *= w;
    }

    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let gain = rng.random_range(0.35..0.45) / peak;

    let mut samples = vec![0.0f64; total];
    for (i, v) in x.iter().enumerate() {
        samples[silence + i] = v * gain;
    }
    AudioClip::new(samples, CORPUS_SAMPLE_RATE)
}

/// Babble-style noise: several independent all-pole sources excited by
/// noise, summed. A deterministic stand-in for a crowd recording.
pub fn generate_babble(seed: u64, seconds: f64, sample_rate_hz: u32) -> AudioClip {
    let n = (seconds * sample_rate_hz as f64) as usize;
    let mut mix = vec![0.0f64; n];
    for source in 0..8u64 {
        let mut rng = substream(seed, 7_000_000 + source, 0);
        let voice = draw_voice(&mut rng, 6);
        let mut x = vec![0.0f64; n];
        for i in 0..n {
            let mut v = rng.random_range(-0.1..0.1);
            for (k, &ak) in voice.model.a.iter().enumerate() {
                if i > k {
                    v += ak * x[i - k - 1];
                }
            }
            x[i] = v;
        }
        for (m, v) in mix.iter_mut().zip(&x) {
            *m += v;
        }
    }
    let peak = mix.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    for m in mix.iter_mut() {
        *m *= 0.5 / peak;
    }
    AudioClip::new(mix, sample_rate_hz)
}

#[derive(Debug, Clone)]
pub struct GenCorpusSpec {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub enroll_utts: usize,
    pub background_speakers: usize,
    pub background_utts: usize,
    pub impostor_speakers: usize,
    pub impostor_utts: usize,
    /// Babble noise track length; 0 skips the noise file.
    pub babble_seconds: f64,
    pub seed: u64,
}

impl Default for GenCorpusSpec {
    fn default() -> Self {
        GenCorpusSpec {
            n_speakers: 10,
            utts_per_speaker: 8,
            enroll_utts: 5,
            background_speakers: 0,
            background_utts: 4,
            impostor_speakers: 0,
            impostor_utts: 3,
            babble_seconds: 0.0,
            seed: 42,
        }
    }
}

/// The generated voices, for tests that compare extracted features to
/// the known source filters.
pub fn corpus_voices(spec: &GenCorpusSpec) -> Vec<(String, SpeakerVoice)> {
    let mut voices: Vec<(String, SpeakerVoice)> = Vec::new();
    let mut accepted: Vec<SpeakerVoice> = Vec::new();
    let groups = [
        (0u64, "spk", spec.n_speakers),
        (1u64, "bg", spec.background_speakers),
        (2u64, "imp", spec.impostor_speakers),
    ];
    for (kind, prefix, count) in groups {
        for i in 0..count {
            let voice = synth_voice(spec.seed, kind, i, &accepted);
            accepted.push(voice.clone());
            voices.push((format!("{prefix}{:02}", i + 1), voice));
        }
    }
    voices
}

/// Generate WAVs plus `manifest.csv` under `out_dir`. Byte-deterministic
/// for a fixed spec.
pub fn generate_corpus(out_dir: impl AsRef<Path>, spec: &GenCorpusSpec) -> Result<CorpusManifest> {
    let out_dir = out_dir.as_ref();
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;

    let voices = corpus_voices(spec);
    let mut entries = Vec::new();
    for (speaker_id, voice) in &voices {
        let (kind, n_utts) = if speaker_id.starts_with("spk") {
            (0u64, spec.utts_per_speaker)
        } else if speaker_id.starts_with("bg") {
            (1, spec.background_utts)
        } else {
            (2, spec.impostor_utts)
        };
        let speaker_index: usize = speaker_id[speaker_id.len() - 2..]
            .parse::<usize>()
            .expect("generated id suffix")
            - 1;
        for u in 0..n_utts {
            let role = match kind {
                0 if u < spec.enroll_utts => Role::Enroll,
                0 => Role::Test,
                1 => Role::Background,
                _ => Role::Impostor,
            };
            let clip = synth_utterance(voice, spec.seed, kind, speaker_index, u);
            let utterance_id = format!("u{:02}", u + 1);
            let rel = PathBuf::from("wav").join(format!("{speaker_id}_{utterance_id}.wav"));
            write_wav(&clip, out_dir.join(&rel))?;
            entries.push(ManifestEntry {
                speaker_id: speaker_id.clone(),
                utterance_id,
                role,
                path: rel,
            });
        }
    }

    if spec.babble_seconds > 0.0 {
        let babble = generate_babble(spec.seed, spec.babble_seconds, CORPUS_SAMPLE_RATE);
        write_wav(&babble, out_dir.join("babble.wav"))?;
    }

    let manifest = CorpusManifest { entries };
    manifest.validate()?;
    manifest.write(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_and_validation() {
        let m = CorpusManifest {
            entries: vec![
                ManifestEntry {
                    speaker_id: "spk01".into(),
                    utterance_id: "u01".into(),
                    role: Role::Enroll,
                    path: "wav/spk01_u01.wav".into(),
                },
                ManifestEntry {
                    speaker_id: "imp01".into(),
                    utterance_id: "u01".into(),
                    role: Role::Impostor,
                    path: "wav/imp01_u01.wav".into(),
                },
            ],
        };
        let text = m.format_csv();
        let back = CorpusManifest::parse_csv(&text).unwrap();
        assert_eq!(back.entries, m.entries);
    }

    #[test]
    fn duplicate_entries_rejected() {
        let text = "spk01,u01,enroll,a.wav\nspk01,u01,test,b.wav\n";
        assert!(matches!(
            CorpusManifest::parse_csv(text),
            Err(Error::ManifestError(_))
        ));
    }

    #[test]
    fn background_impostor_overlap_rejected() {
        let text = "x,u01,background,a.wav\nx,u02,impostor,b.wav\n";
        assert!(matches!(
            CorpusManifest::parse_csv(text),
            Err(Error::ManifestError(_))
        ));
    }

    #[test]
    fn paths_may_contain_commas() {
        let text = "spk01,u01,enroll,dir,with,commas/a.wav\n";
        let m = CorpusManifest::parse_csv(text).unwrap();
        assert_eq!(m.entries[0].path, PathBuf::from("dir,with,commas/a.wav"));
    }

    #[test]
    fn voices_are_distinct_and_deterministic() {
        let spec = GenCorpusSpec {
            n_speakers: 6,
            background_speakers: 2,
            impostor_speakers: 2,
            ..GenCorpusSpec::default()
        };
        let a = corpus_voices(&spec);
        let b = corpus_voices(&spec);
        assert_eq!(a.len(), 10);
        for ((id_a, va), (id_b, vb)) in a.iter().zip(&b) {
            assert_eq!(id_a, id_b);
            assert_eq!(va.model.a, vb.model.a);
        }
        for i in 0..a.len() {
            for j in 0..i {
                let d = lsf_distance(&a[i].1.lsf, &a[j].1.lsf);
                assert!(
                    d > MIN_SPEAKER_LSF_DISTANCE,
                    "voices {i} and {j} too close: {d}"
                );
            }
        }
    }

    #[test]
    fn utterances_are_deterministic_and_sane() {
        let voice = synth_voice(7, 0, 0, &[]);
        let a = synth_utterance(&voice, 7, 0, 0, 0);
        let b = synth_utterance(&voice, 7, 0, 0, 0);
        assert_eq!(a.samples, b.samples);
        let c = synth_utterance(&voice, 7, 0, 0, 1);
        assert_ne!(a.samples, c.samples);
        assert!(a.duration_seconds() >= 1.2 && a.duration_seconds() <= 1.7);
        let peak = a.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak <= 0.45 + 1e-12 && peak >= 0.3);
        // leading silence present
        assert!(a.samples[..1900].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn babble_is_nonsilent_and_deterministic() {
        let a = generate_babble(3, 2.0, CORPUS_SAMPLE_RATE);
        let b = generate_babble(3, 2.0, CORPUS_SAMPLE_RATE);
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.len(), 32000);
        let power = crate::dsp::mean_power(&a.samples);
        assert!(power > 1e-4, "power {power}");
    }

    #[test]
    fn generate_corpus_writes_expected_counts() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GenCorpusSpec {
            n_speakers: 3,
            utts_per_speaker: 4,
            enroll_utts: 3,
            background_speakers: 1,
            background_utts: 2,
            impostor_speakers: 1,
            impostor_utts: 2,
            babble_seconds: 1.0,
            seed: 5,
        };
        let manifest = generate_corpus(dir.path(), &spec).unwrap();
        assert_eq!(manifest.entries.len(), 3 * 4 + 2 + 2);
        let wavs = std::fs::read_dir(dir.path().join("wav")).unwrap().count();
        assert_eq!(wavs, 16);
        assert!(dir.path().join("babble.wav").exists());
        assert!(dir.path().join("manifest.csv").exists());
        let roles: Vec<Role> = manifest
            .entries
            .iter()
            .filter(|e| e.speaker_id == "spk01")
            .map(|e| e.role)
            .collect();
        assert_eq!(roles, vec![Role::Enroll, Role::Enroll, Role::Enroll, Role::Test]);
    }
}
