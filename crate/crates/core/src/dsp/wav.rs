//! Minimal RIFF/WAVE reader and writer.
//!
//! Reads PCM 16/24-bit and IEEE float 32-bit files with one or two channels.
//! Stereo input is folded to mono by channel mean.

use std::io::Write;
use std::path::Path;

use crate::dsp::AudioClip;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Sample encoding used when writing a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_wav(&bytes, source_id)
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes an in-memory RIFF/WAVE byte stream.
pub fn decode_wav(bytes: &[u8], source_id: impl Into<String>) -> Result<AudioClip> {
    if bytes.len() < 12 {
        return Err(Error::wav("RIFF", "file shorter than the 12-byte RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(Error::wav("RIFF", "missing RIFF magic"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::wav("RIFF", "form type is not WAVE"));
    }

    let mut format: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let name = String::from_utf8_lossy(id).into_owned();
        // Some writers leave the data size at zero or oversize it when streaming.
        let body_end = if id == b"data" {
            body_start.saturating_add(size).min(bytes.len())
        } else {
            let end = body_start.saturating_add(size);
            if end > bytes.len() {
                return Err(Error::wav(&name, "chunk extends past end of file"));
            }
            end
        };
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => format = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1);
        if data.is_some() && format.is_some() {
            break;
        }
    }

    let format = format.ok_or_else(|| Error::wav("fmt ", "no fmt chunk found"))?;
    let data = data.ok_or_else(|| Error::wav("data", "no data chunk found"))?;
    let samples = decode_samples(&format, data)?;
    AudioClip::new(samples, format.sample_rate, source_id)
}

fn parse_fmt(body: &[u8]) -> Result<Format> {
    if body.len() < 16 {
        return Err(Error::wav("fmt ", format!("chunk is {} bytes, need 16", body.len())));
    }
    let mut tag = u16_at(body, 0);
    let channels = u16_at(body, 2);
    let sample_rate = u32_at(body, 4);
    let bits = u16_at(body, 14);
    if tag == FORMAT_EXTENSIBLE {
        if body.len() < 26 {
            return Err(Error::wav("fmt ", "extensible format without sub-format GUID"));
        }
        tag = u16_at(body, 24);
    }
    if !(1..=2).contains(&channels) {
        return Err(Error::wav("fmt ", format!("{channels} channels unsupported (1 or 2 allowed)")));
    }
    if sample_rate == 0 {
        return Err(Error::wav("fmt ", "sample rate is zero"));
    }
    match (tag, bits) {
        (FORMAT_PCM, 16) | (FORMAT_PCM, 24) | (FORMAT_FLOAT, 32) => {}
        _ => {
            return Err(Error::wav(
                "fmt ",
                format!("unsupported codec: format tag {tag} with {bits} bits per sample"),
            ))
        }
    }
    Ok(Format {
        tag,
        channels,
        sample_rate,
        bits,
    })
}

fn decode_samples(format: &Format, data: &[u8]) -> Result<Vec<f32>> {
    let width = (format.bits / 8) as usize;
    let channels = format.channels as usize;
    let frame = width * channels;
    let frames = data.len() / frame;
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut acc = 0.0f32;
        for c in 0..channels {
            let at = f * frame + c * width;
            let s = match (format.tag, format.bits) {
                (FORMAT_PCM, 16) => i16::from_le_bytes([data[at], data[at + 1]]) as f32 / 32768.0,
                (FORMAT_PCM, 24) => {
                    let v = i32::from_le_bytes([0, data[at], data[at + 1], data[at + 2]]) >> 8;
                    v as f32 / 8_388_608.0
                }
                _ => {
                    let v = f32::from_le_bytes([data[at], data[at + 1], data[at + 2], data[at + 3]]);
                    if !v.is_finite() {
                        return Err(Error::wav("data", format!("non-finite float sample at frame {f}")));
                    }
                    v.clamp(-1.0, 1.0)
                }
            };
            acc += s;
        }
        out.push(acc / channels as f32);
    }
    Ok(out)
}

/// Encodes a mono clip as a RIFF/WAVE byte stream.
pub fn encode_wav(clip: &AudioClip, encoding: WavEncoding) -> Vec<u8> {
    let (tag, bits) = match encoding {
        WavEncoding::Pcm16 => (FORMAT_PCM, 16u16),
        WavEncoding::Float32 => (FORMAT_FLOAT, 32u16),
    };
    let width = (bits / 8) as u32;
    let data_len = clip.samples.len() as u32 * width;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * width).to_le_bytes());
    out.extend_from_slice(&(width as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        match encoding {
            WavEncoding::Pcm16 => {
                let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
                out.extend_from_slice(&v.to_le_bytes());
            }
            WavEncoding::Float32 => out.extend_from_slice(&s.to_le_bytes()),
        }
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav(clip, encoding);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}
