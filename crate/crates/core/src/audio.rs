//! Mono PCM audio and WAV file I/O.
//!
//! Only 16-bit mono PCM is accepted; chunks other than `fmt ` and `data`
//! are skipped. Decoded samples are int16 / 32768, so they always lie in
//! [-1.0, 1.0). Quantization on write saturates symmetrically at ±32767,
//! which makes write(read(f)) reproduce the data chunk of any file this
//! crate wrote.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Mono audio signal with unit-scaled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        AudioClip {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

const RIFF: &[u8; 4] = b"RIFF";
const WAVE: &[u8; 4] = b"WAVE";
const FMT: &[u8; 4] = b"fmt ";
const DATA: &[u8; 4] = b"data";

/// Decode a 16-bit mono PCM WAV file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes, &path.display().to_string())
}

pub fn decode_wav(bytes: &[u8], name: &str) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != RIFF || &bytes[8..12] != WAVE {
        return Err(Error::NotWav(name.to_string()));
    }

    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // tag, channels, rate, bits
    let mut data: Option<&[u8]> = None;

    while pos + 8 <= bytes.len() {
        let id: [u8; 4] = bytes[pos..pos + 4].try_into().unwrap();
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        pos += 8;
        if size > bytes.len() - pos {
            return Err(Error::TruncatedFile(format!(
                "{name}: chunk {:?} declares {size} bytes, {} remain",
                String::from_utf8_lossy(&id),
                bytes.len() - pos
            )));
        }
        let body = &bytes[pos..pos + size];
        match &id {
            FMT => {
                if size < 16 {
                    return Err(Error::TruncatedFile(format!("{name}: fmt chunk of {size} bytes")));
                }
                fmt = Some((
                    u16::from_le_bytes(body[0..2].try_into().unwrap()),
                    u16::from_le_bytes(body[2..4].try_into().unwrap()),
                    u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    u16::from_le_bytes(body[14..16].try_into().unwrap()),
                ));
            }
            DATA => data = Some(body),
            _ => {}
        }
        // RIFF chunks are word-aligned; odd sizes carry a pad byte.
        pos += size + (size & 1);
    }

    let (tag, channels, rate, bits) =
        fmt.ok_or_else(|| Error::TruncatedFile(format!("{name}: missing fmt chunk")))?;
    if tag != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{name}: format tag {tag}, only PCM (1) supported"
        )));
    }
    if channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{name}: {channels} channels, only mono supported"
        )));
    }
    if bits != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{name}: {bits}-bit samples, only 16-bit supported"
        )));
    }
    if rate == 0 {
        return Err(Error::UnsupportedFormat(format!("{name}: zero sample rate")));
    }

    let data = data.ok_or_else(|| Error::TruncatedFile(format!("{name}: missing data chunk")))?;
    if data.is_empty() {
        return Err(Error::TruncatedFile(format!("{name}: empty data chunk")));
    }

    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    Ok(AudioClip::new(samples, rate))
}

/// Encode a clip as 16-bit mono PCM WAV.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav(clip);
    crate::pipeline::write_file_atomic(path, &bytes)
}

pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let n = clip.samples.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(RIFF);
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(WAVE);
    out.extend_from_slice(FMT);
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate_hz * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(DATA);
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

/// Saturating symmetric quantization to ±32767. The 1/32768 step is the
/// exact inverse of decoding, so decoded values re-encode losslessly.
fn quantize(sample: f64) -> i16 {
    let q = (sample * 32768.0).round();
    q.clamp(-32767.0, 32767.0) as i16
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clip(samples: &[f64]) -> AudioClip {
        AudioClip::new(samples.to_vec(), 16000)
    }

    /// 44-byte header followed by raw little-endian int16 words.
    fn wav_bytes(raw: &[i16], rate: u32) -> Vec<u8> {
        let mut bytes = encode_wav(&AudioClip::new(vec![], rate));
        let data_len = (raw.len() * 2) as u32;
        bytes[4..8].copy_from_slice(&(36 + data_len).to_le_bytes());
        let len = bytes.len();
        bytes[len - 4..].copy_from_slice(&data_len.to_le_bytes());
        for v in raw {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes
    }

    #[test]
    fn decodes_fixed_point_scaling() {
        let decoded = wav_bytes(&[0, 16384, -16384, 32767], 16000);
        let decoded = decode_wav(&decoded, "test").unwrap();
        assert_eq!(decoded.sample_rate_hz, 16000);
        let expected = [0.0, 0.5, -0.5, 0.99996948];
        for (got, want) in decoded.samples.iter().zip(expected) {
            assert!((got - want).abs() < 5e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn empty_data_chunk_is_truncated() {
        let bytes = encode_wav(&AudioClip::new(vec![], 16000));
        assert!(matches!(decode_wav(&bytes, "t"), Err(Error::TruncatedFile(_))));
    }

    #[test]
    fn oversized_data_declaration_rejected() {
        let mut bytes = wav_bytes(&[0; 10], 16000);
        bytes.truncate(bytes.len() - 12); // data chunk now shorter than declared
        assert!(matches!(decode_wav(&bytes, "t"), Err(Error::TruncatedFile(_))));
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(matches!(decode_wav(b"RIFXxxxxWAVE", "t"), Err(Error::NotWav(_))));
        assert!(matches!(decode_wav(b"ID3", "t"), Err(Error::NotWav(_))));
    }

    #[test]
    fn stereo_rejected() {
        let mut bytes = encode_wav(&clip(&[0.0, 0.1]));
        bytes[22] = 2; // channel count
        assert!(matches!(decode_wav(&bytes, "t"), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn quantization_saturates_symmetrically() {
        assert_eq!(quantize(1.0), 32767);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(-1.0), -32767);
        assert_eq!(quantize(2.5), 32767);
        assert_eq!(quantize(-2.5), -32767);
    }

    #[test]
    fn skips_foreign_chunks() {
        let payload = encode_wav(&clip(&[0.25, -0.25]));
        // splice a LIST chunk (odd size, so padded) between header and fmt
        let mut bytes = payload[..12].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(b"abc\0");
        bytes.extend_from_slice(&payload[12..]);
        bytes[4..8].copy_from_slice(&((payload.len() - 8 + 12) as u32).to_le_bytes());
        let decoded = decode_wav(&bytes, "t").unwrap();
        assert_eq!(decoded.samples.len(), 2);
    }

    proptest! {
        #[test]
        fn round_trip_is_byte_exact_on_generated_files(samples in proptest::collection::vec(-1.2f64..1.2, 1..400)) {
            let first = encode_wav(&clip(&samples));
            let decoded = decode_wav(&first, "t").unwrap();
            let second = encode_wav(&decoded);
            prop_assert_eq!(first, second);
        }

        #[test]
        fn quantization_error_is_bounded(samples in proptest::collection::vec(-1.0f64..1.0, 1..200)) {
            let decoded = decode_wav(&encode_wav(&clip(&samples)), "t").unwrap();
            for (x, y) in samples.iter().zip(&decoded.samples) {
                prop_assert!((x - y).abs() <= 1.0 / 32767.0);
            }
        }
    }
}
