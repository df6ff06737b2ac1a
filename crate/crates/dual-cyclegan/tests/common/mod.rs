//! Helpers shared by the integration test binaries: deterministic signal
//! generators, a synthetic three-domain fixture corpus, and FFT-domain
//! resampling oracles used to cross-check the windowed-sinc implementation.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use dual_cyclegan::audio::AudioClip;
use dual_cyclegan::data::{
    preprocess_corpus, save_manifest, split_manifest, DomainTag, Manifest, PreprocessOpts,
    SplitPolicy,
};
use dual_cyclegan::wav::{write_wav, SampleFormat};

/// Sine with raised-cosine fades so onset/offset stay band-limited.
pub fn faded_tone(freq: f64, rate: u32, len: usize) -> AudioClip {
    let w = 2.0 * std::f64::consts::PI * freq / rate as f64;
    let fade = (rate as usize / 50).min(len / 4).max(1);
    let samples = (0..len)
        .map(|n| {
            let edge = n.min(len - 1 - n);
            let env = if edge < fade {
                0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / fade as f64).cos()
            } else {
                1.0
            };
            0.4 * env * (w * n as f64).sin()
        })
        .collect();
    AudioClip { samples, sample_rate: rate }
}

/// Periodic multitone: each entry of `cycles` is a whole number of periods
/// over `len`, so the signal is exactly circular.
pub fn periodic_multitone(cycles: &[usize], len: usize, rate: u32) -> AudioClip {
    let amp = 0.8 / cycles.len() as f64;
    let samples = (0..len)
        .map(|n| {
            cycles
                .iter()
                .enumerate()
                .map(|(j, &c)| {
                    let phase = 2.0 * std::f64::consts::PI
                        * (c as f64 * n as f64 / len as f64 + 0.13 * (j + 1) as f64);
                    amp * phase.sin()
                })
                .sum()
        })
        .collect();
    AudioClip { samples, sample_rate: rate }
}

/// Deterministic pseudo-speech: a few harmonics under a syllabic envelope.
pub fn utterance(seed: u64, rate: u32, secs: f64) -> AudioClip {
    let n = (rate as f64 * secs) as usize;
    let fs = [
        110.0 + 13.0 * seed as f64,
        420.0 + 31.0 * seed as f64,
        1900.0 + 57.0 * seed as f64,
        4300.0 + 83.0 * seed as f64,
    ];
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let t = i as f64 / rate as f64;
        let env = (2.0 * std::f64::consts::PI * 2.5 * t).sin().abs();
        let mut v = 0.0;
        for (j, f) in fs.iter().enumerate() {
            v += 0.2 / (j + 1) as f64 * (2.0 * std::f64::consts::PI * f * t).sin();
        }
        let fade = (i.min(n - 1 - i) as f64 / 400.0).min(1.0);
        *o = v * env * fade;
    }
    AudioClip { samples: out, sample_rate: rate }
}

/// Builds a preprocessed fixture corpus under `dir` with `n_s` source
/// recordings and `n_t` target pairs; returns the split manifest (also
/// written to `dir/corpus/manifest.jsonl`).
pub fn build_corpus(
    dir: &Path,
    n_s: usize,
    n_t: usize,
    valid: usize,
    test: usize,
    seed: u64,
) -> (Manifest, PathBuf) {
    let raw_s = dir.join("raw_s");
    let raw_t = dir.join("raw_t");
    std::fs::create_dir_all(&raw_s).unwrap();
    std::fs::create_dir_all(&raw_t).unwrap();
    for i in 0..n_s {
        let clip = utterance(i as u64, 16000, 1.0);
        write_wav(&raw_s.join(format!("s{i}.wav")), &clip, SampleFormat::Float32).unwrap();
    }
    for i in 0..n_t {
        let clip = utterance(10 + i as u64, 48000, 1.0);
        write_wav(&raw_t.join(format!("t{i}.wav")), &clip, SampleFormat::Float32).unwrap();
    }
    let corpus = dir.join("corpus");
    let opts = PreprocessOpts::default();
    let t = preprocess_corpus(&raw_t, DomainTag::THr, &corpus, &opts).unwrap();
    let s = preprocess_corpus(&raw_s, DomainTag::SLr, &corpus, &opts).unwrap();
    let mut merged = Manifest { entries: t.entries, base: corpus.clone() };
    merged.entries.extend(s.entries);
    let split = split_manifest(&merged, &SplitPolicy { valid, test, seed }).unwrap();
    let path = corpus.join("manifest.jsonl");
    save_manifest(&split, &path).unwrap();
    (split, path)
}

fn fft(x: &[Complex<f64>], inverse: bool) -> Vec<Complex<f64>> {
    let mut planner = FftPlanner::new();
    let plan = if inverse {
        planner.plan_fft_inverse(x.len())
    } else {
        planner.plan_fft_forward(x.len())
    };
    let mut buf = x.to_vec();
    plan.process(&mut buf);
    if inverse {
        let n = x.len() as f64;
        buf.iter_mut().for_each(|v| *v /= n);
    }
    buf
}

/// Ideal circular 3x upsampler: zero-pad the spectrum and rescale.
pub fn fft_upsample3(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let spec = fft(&x.iter().map(|&v| Complex::new(v, 0.0)).collect::<Vec<_>>(), false);
    let m = 3 * n;
    let mut out = vec![Complex::new(0.0, 0.0); m];
    for k in 0..=n / 2 {
        out[k] = 3.0 * spec[k];
    }
    for k in 1..n.div_ceil(2) {
        out[m - k] = 3.0 * spec[n - k];
    }
    if n % 2 == 0 {
        // split the Nyquist bin across the two images
        out[n / 2] = 1.5 * spec[n / 2];
        out[m - n / 2] = 1.5 * spec[n / 2];
    }
    fft(&out, true).iter().map(|v| v.re).collect()
}

/// Ideal circular 3x decimator for signals band-limited below rate/6.
pub fn fft_downsample3(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert_eq!(n % 3, 0);
    let m = n / 3;
    let spec = fft(&x.iter().map(|&v| Complex::new(v, 0.0)).collect::<Vec<_>>(), false);
    let mut out = vec![Complex::new(0.0, 0.0); m];
    for k in 0..=m / 2 {
        out[k] = spec[k] / 3.0;
    }
    for k in 1..m.div_ceil(2) {
        out[m - k] = spec[n - k] / 3.0;
    }
    fft(&out, true).iter().map(|v| v.re).collect()
}

/// Max absolute difference over the interior (dropping `edge` samples per side).
pub fn interior_max_err(a: &[f64], b: &[f64], edge: usize) -> f64 {
    assert_eq!(a.len(), b.len());
    a[edge..a.len() - edge]
        .iter()
        .zip(&b[edge..b.len() - edge])
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
