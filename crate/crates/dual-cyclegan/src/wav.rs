//! Minimal WAV reader/writer: mono, PCM16 and IEEE float32, little-endian.
//!
//! PCM16 samples are converted to real amplitudes by division by 32768.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::audio::{AudioClip, AudioError};

#[derive(Debug, Error)]
pub enum WavError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a RIFF/WAVE file")]
    NotWave { path: String },
    #[error("{path}: missing {chunk} chunk")]
    MissingChunk { path: String, chunk: &'static str },
    #[error("{path}: unsupported format (tag {format_tag}, {bits} bits)")]
    UnsupportedFormat { path: String, format_tag: u16, bits: u16 },
    #[error("{path}: {source}")]
    Audio {
        path: String,
        #[source]
        source: AudioError,
    },
}

/// Sample encodings the writer can emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

pub fn read_wav(path: &Path) -> Result<AudioClip, WavError> {
    let p = path.display().to_string();
    let io_err = |source| WavError::Io { path: p.clone(), source };
    let file = File::open(path).map_err(io_err)?;
    let mut r = BufReader::new(file);

    let mut hdr = [0u8; 12];
    r.read_exact(&mut hdr)
        .map_err(|source| WavError::Io { path: p.clone(), source })?;
    if &hdr[0..4] != b"RIFF" || &hdr[8..12] != b"WAVE" {
        return Err(WavError::NotWave { path: p });
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // tag, channels, rate, bits
    let mut data: Option<Vec<u8>> = None;
    loop {
        let mut id = [0u8; 4];
        match r.read_exact(&mut id) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(source) => return Err(WavError::Io { path: p, source }),
        }
        let size = r
            .read_u32::<LittleEndian>()
            .map_err(|source| WavError::Io { path: p.clone(), source })?;
        match &id {
            b"fmt " => {
                let mut buf = vec![0u8; size as usize];
                r.read_exact(&mut buf)
                    .map_err(|source| WavError::Io { path: p.clone(), source })?;
                let tag = u16::from_le_bytes([buf[0], buf[1]]);
                let channels = u16::from_le_bytes([buf[2], buf[3]]);
                let rate = u32::from_le_bytes([buf[4], buf[5], buf[6], buf[7]]);
                let bits = u16::from_le_bytes([buf[14], buf[15]]);
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let mut buf = vec![0u8; size as usize];
                r.read_exact(&mut buf)
                    .map_err(|source| WavError::Io { path: p.clone(), source })?;
                data = Some(buf);
            }
            _ => {
                // skip unknown chunk (word-aligned)
                let skip = size + (size & 1);
                let mut buf = vec![0u8; skip as usize];
                r.read_exact(&mut buf)
                    .map_err(|source| WavError::Io { path: p.clone(), source })?;
            }
        }
        if fmt.is_some() && data.is_some() {
            break;
        }
    }

    let (tag, channels, rate, bits) = fmt.ok_or(WavError::MissingChunk { path: p.clone(), chunk: "fmt " })?;
    let data = data.ok_or(WavError::MissingChunk { path: p.clone(), chunk: "data" })?;
    if channels != 1 {
        return Err(WavError::Audio { path: p, source: AudioError::NotMono(channels) });
    }
    let samples: Vec<f64> = match (tag, bits) {
        (1, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
            .collect(),
        (3, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        _ => return Err(WavError::UnsupportedFormat { path: p, format_tag: tag, bits }),
    };
    AudioClip::new(samples, rate).map_err(|source| WavError::Audio { path: p, source })
}

pub fn write_wav(path: &Path, clip: &AudioClip, format: SampleFormat) -> Result<(), WavError> {
    let p = path.display().to_string();
    let file = File::create(path).map_err(|source| WavError::Io { path: p.clone(), source })?;
    let mut w = BufWriter::new(file);
    let (tag, bits): (u16, u16) = match format {
        SampleFormat::Pcm16 => (1, 16),
        SampleFormat::Float32 => (3, 32),
    };
    let bytes_per = (bits / 8) as u32;
    let data_len = clip.samples.len() as u32 * bytes_per;
    let werr = |source| WavError::Io { path: p.clone(), source };

    w.write_all(b"RIFF").map_err(werr)?;
    w.write_u32::<LittleEndian>(36 + data_len)
        .map_err(|source| WavError::Io { path: p.clone(), source })?;
    w.write_all(b"WAVEfmt ")
        .map_err(|source| WavError::Io { path: p.clone(), source })?;
    w.write_u32::<LittleEndian>(16)
        .map_err(|source| WavError::Io { path: p.clone(), source })?;
    w.write_u16::<LittleEndian>(tag)
        .map_err(|source| WavError::Io { path: p.clone(), source })?;
    w.write_u16::<LittleEndian>(1)
        .map_err(|source| WavError::Io { path: p.clone(), source })?;
    w.write_u32::<LittleEndian>(clip.sample_rate)
        .map_err(|source| WavError::Io { path: p.clone(), source })?;
    w.write_u32::<LittleEndian>(clip.sample_rate * bytes_per)
        .map_err(|source| WavError::Io { path: p.clone(), source })?;
    w.write_u16::<LittleEndian>(bytes_per as u16)
        .map_err(|source| WavError::Io { path: p.clone(), source })?;
    w.write_u16::<LittleEndian>(bits)
        .map_err(|source| WavError::Io { path: p.clone(), source })?;
    w.write_all(b"data")
        .map_err(|source| WavError::Io { path: p.clone(), source })?;
    w.write_u32::<LittleEndian>(data_len)
        .map_err(|source| WavError::Io { path: p.clone(), source })?;
    match format {
        SampleFormat::Pcm16 => {
            for &s in &clip.samples {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                w.write_i16::<LittleEndian>(v)
                    .map_err(|source| WavError::Io { path: p.clone(), source })?;
            }
        }
        SampleFormat::Float32 => {
            for &s in &clip.samples {
                w.write_f32::<LittleEndian>(s as f32)
                    .map_err(|source| WavError::Io { path: p.clone(), source })?;
            }
        }
    }
    w.flush().map_err(|source| WavError::Io { path: p, source })
}
