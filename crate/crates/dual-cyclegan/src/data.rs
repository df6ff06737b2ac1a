//! Corpus ingestion and batching: preprocessing of the raw target/source
//! corpora into the on-disk layout, JSONL manifests, deterministic splits,
//! and random clip sampling that pairs nonparallel x with parallel (z, y).

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::dsp::{
    highpass, normalize_loudness, resample_rational, sinc_resample, DspError, ResampleSpec,
};
use crate::losses::Batch;
use crate::wav::{read_wav, write_wav, SampleFormat, WavError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("manifest parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DomainTag {
    #[serde(rename = "s_lr")]
    SLr,
    #[serde(rename = "t_lr")]
    TLr,
    #[serde(rename = "t_hr")]
    THr,
}

impl DomainTag {
    pub fn rate(self, lr_rate: u32) -> u32 {
        match self {
            DomainTag::SLr | DomainTag::TLr => lr_rate,
            DomainTag::THr => lr_rate * 3,
        }
    }

    pub fn subdir(self) -> &'static str {
        match self {
            DomainTag::SLr => "s_lr",
            DomainTag::TLr => "t_lr",
            DomainTag::THr => "t_hr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub domain: DomainTag,
    pub num_samples: usize,
    pub sample_rate: u32,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
}

/// Entry paths are relative to `base` (the manifest file's directory).
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub base: PathBuf,
}

impl Manifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.base.join(&entry.path)
    }

    /// Pair integrity: every T_LR entry has exactly one T_HR partner with 3x
    /// the samples (and vice versa); S_LR entries carry no pair id.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut lr: HashMap<&str, &ManifestEntry> = HashMap::new();
        let mut hr: HashMap<&str, &ManifestEntry> = HashMap::new();
        for e in &self.entries {
            match e.domain {
                DomainTag::SLr => {
                    if e.pair_id.is_some() {
                        return Err(DataError::Config(format!(
                            "S_LR entry {} must not have a pair_id",
                            e.path.display()
                        )));
                    }
                }
                DomainTag::TLr | DomainTag::THr => {
                    let id = e.pair_id.as_deref().ok_or_else(|| {
                        DataError::Config(format!(
                            "target-domain entry {} missing pair_id",
                            e.path.display()
                        ))
                    })?;
                    let map = if e.domain == DomainTag::TLr { &mut lr } else { &mut hr };
                    if map.insert(id, e).is_some() {
                        return Err(DataError::Config(format!("duplicate pair_id {id}")));
                    }
                }
            }
        }
        if lr.len() != hr.len() {
            return Err(DataError::Config(format!(
                "{} T_LR entries vs {} T_HR entries",
                lr.len(),
                hr.len()
            )));
        }
        for (id, z) in &lr {
            let y = hr
                .get(id)
                .ok_or_else(|| DataError::Config(format!("pair {id} has no T_HR partner")))?;
            if y.num_samples != 3 * z.num_samples {
                return Err(DataError::Config(format!(
                    "pair {id}: {} HR samples vs {} LR samples (want exactly 3:1)",
                    y.num_samples, z.num_samples
                )));
            }
            if z.split != y.split {
                return Err(DataError::Config(format!("pair {id} straddles splits")));
            }
        }
        Ok(())
    }

    pub fn domain_count(&self, domain: DomainTag, split: Split) -> usize {
        self.entries.iter().filter(|e| e.domain == domain && e.split == split).count()
    }
}

pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<(), DataError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for e in &manifest.entries {
        let line = serde_json::to_string(e)
            .map_err(|e| DataError::Config(format!("serialize: {e}")))?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Manifest, DataError> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut entries = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| DataError::Parse { line: i + 1, msg: e.to_string() })?;
        entries.push(entry);
    }
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok(Manifest { entries, base })
}

#[derive(Debug, Clone)]
pub struct PreprocessOpts {
    /// RMS loudness target in dBFS.
    pub target_db: f64,
    /// High-pass cutoff in Hz; `None` disables (source domain default).
    pub highpass_hz: Option<f64>,
    /// LR sample rate; the HR side is always 3x this.
    pub lr_rate: u32,
}

impl Default for PreprocessOpts {
    fn default() -> Self {
        Self { target_db: -26.0, highpass_hz: Some(70.0), lr_rate: 16000 }
    }
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Preprocesses one raw directory into `out_dir` and returns the manifest
/// fragment (all entries marked `train`; run [`split_manifest`] afterwards).
///
/// Target domain: high-pass at 48 kHz, normalize, emit HR trimmed to a
/// multiple of 3, then sinc-decimate and emit the parallel LR copy under the
/// same pair id. Source domain: rational-resample to the LR rate if needed,
/// then normalize (high-pass only if configured). Unreadable or silent files
/// are skipped with a warning on stderr.
pub fn preprocess_corpus(
    raw_dir: &Path,
    domain: DomainTag,
    out_dir: &Path,
    opts: &PreprocessOpts,
) -> Result<Manifest, DataError> {
    if domain == DomainTag::TLr {
        return Err(DataError::Config(
            "preprocess the target domain as t_hr; the LR copy is derived".into(),
        ));
    }
    let hr_rate = opts.lr_rate * 3;
    let mut entries = Vec::new();
    match domain {
        DomainTag::THr => {
            fs::create_dir_all(out_dir.join("t_hr"))?;
            fs::create_dir_all(out_dir.join("t_lr"))?;
        }
        DomainTag::SLr => fs::create_dir_all(out_dir.join("s_lr"))?,
        DomainTag::TLr => unreachable!(),
    }
    for file in wav_files(raw_dir)? {
        let clip = match read_wav(&file) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("warning: skipping unreadable {}: {e}", file.display());
                continue;
            }
        };
        if clip.rms() <= 0.0 {
            eprintln!("warning: skipping silent {}", file.display());
            continue;
        }
        let id = stem(&file);
        match domain {
            DomainTag::THr => {
                if clip.sample_rate != hr_rate {
                    eprintln!(
                        "warning: skipping {} ({} Hz, expected {hr_rate})",
                        file.display(),
                        clip.sample_rate
                    );
                    continue;
                }
                let mut processed = match opts.highpass_hz {
                    Some(hz) => highpass(&clip, hz)?,
                    None => clip,
                };
                processed = normalize_loudness(&processed, opts.target_db)?;
                processed.samples.truncate(processed.len() / 3 * 3);
                let hr_rel = PathBuf::from("t_hr").join(format!("{id}.wav"));
                write_wav(&out_dir.join(&hr_rel), &processed, SampleFormat::Float32)?;
                let lr = sinc_resample(&processed, &ResampleSpec::down3(hr_rate))?;
                let lr_rel = PathBuf::from("t_lr").join(format!("{id}.wav"));
                write_wav(&out_dir.join(&lr_rel), &lr, SampleFormat::Float32)?;
                entries.push(ManifestEntry {
                    path: hr_rel,
                    domain: DomainTag::THr,
                    num_samples: processed.len(),
                    sample_rate: hr_rate,
                    split: Split::Train,
                    pair_id: Some(id.clone()),
                });
                entries.push(ManifestEntry {
                    path: lr_rel,
                    domain: DomainTag::TLr,
                    num_samples: lr.len(),
                    sample_rate: opts.lr_rate,
                    split: Split::Train,
                    pair_id: Some(id),
                });
            }
            DomainTag::SLr => {
                let mut processed = if clip.sample_rate == opts.lr_rate {
                    clip
                } else {
                    resample_rational(&clip, opts.lr_rate)?
                };
                if let Some(hz) = opts.highpass_hz {
                    processed = highpass(&processed, hz)?;
                }
                processed = normalize_loudness(&processed, opts.target_db)?;
                let rel = PathBuf::from("s_lr").join(format!("{id}.wav"));
                write_wav(&out_dir.join(&rel), &processed, SampleFormat::Float32)?;
                entries.push(ManifestEntry {
                    path: rel,
                    domain: DomainTag::SLr,
                    num_samples: processed.len(),
                    sample_rate: opts.lr_rate,
                    split: Split::Train,
                    pair_id: None,
                });
            }
            DomainTag::TLr => unreachable!(),
        }
    }
    Ok(Manifest { entries, base: out_dir.to_path_buf() })
}

#[derive(Debug, Clone, Copy)]
pub struct SplitPolicy {
    pub valid: usize,
    pub test: usize,
    pub seed: u64,
}

/// Deterministic split. Units are shuffled per domain (a parallel pair is one
/// unit, so pairs never straddle splits); the first `valid` units go to
/// validation, the next `test` to test, the rest to train.
pub fn split_manifest(manifest: &Manifest, policy: &SplitPolicy) -> Result<Manifest, DataError> {
    // unit key: pair id for the target domain, path for the source domain
    let mut units: HashMap<DomainTag, Vec<String>> = HashMap::new();
    for e in &manifest.entries {
        match e.domain {
            DomainTag::SLr => units
                .entry(DomainTag::SLr)
                .or_default()
                .push(e.path.to_string_lossy().into_owned()),
            DomainTag::TLr => {
                units.entry(DomainTag::TLr).or_default().push(e.pair_id.clone().unwrap_or_default())
            }
            DomainTag::THr => {}
        }
    }
    let mut assignment: HashMap<(DomainTag, String), Split> = HashMap::new();
    for (domain, mut keys) in units {
        keys.sort();
        if policy.valid + policy.test > keys.len() {
            return Err(DataError::Config(format!(
                "requested {} valid + {} test but only {} units in {:?}",
                policy.valid,
                policy.test,
                keys.len(),
                domain
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(policy.seed ^ (domain as u64).wrapping_mul(0x9e3779b97f4a7c15));
        // Fisher-Yates
        for i in (1..keys.len()).rev() {
            let j = rng.gen_range(0..=i);
            keys.swap(i, j);
        }
        for (i, key) in keys.into_iter().enumerate() {
            let split = if i < policy.valid {
                Split::Valid
            } else if i < policy.valid + policy.test {
                Split::Test
            } else {
                Split::Train
            };
            assignment.insert((domain, key), split);
        }
    }
    let mut out = manifest.clone();
    for e in &mut out.entries {
        let key = match e.domain {
            DomainTag::SLr => (DomainTag::SLr, e.path.to_string_lossy().into_owned()),
            // HR follows its LR partner via the shared pair id
            DomainTag::TLr | DomainTag::THr => {
                (DomainTag::TLr, e.pair_id.clone().unwrap_or_default())
            }
        };
        if let Some(&split) = assignment.get(&key) {
            e.split = split;
        }
    }
    Ok(out)
}

/// In-memory training corpus: all train-split clips, pairs joined.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub s: Vec<AudioClip>,
    pub pairs: Vec<(AudioClip, AudioClip)>, // (z, y)
}

impl TrainSet {
    pub fn load(manifest: &Manifest, split: Split) -> Result<Self, DataError> {
        manifest.validate()?;
        let mut s = Vec::new();
        let mut lr: HashMap<String, AudioClip> = HashMap::new();
        let mut hr: HashMap<String, AudioClip> = HashMap::new();
        for e in &manifest.entries {
            if e.split != split {
                continue;
            }
            let clip = read_wav(&manifest.resolve(e))?;
            match e.domain {
                DomainTag::SLr => s.push(clip),
                DomainTag::TLr => {
                    lr.insert(e.pair_id.clone().unwrap(), clip);
                }
                DomainTag::THr => {
                    hr.insert(e.pair_id.clone().unwrap(), clip);
                }
            }
        }
        let mut ids: Vec<String> = lr.keys().cloned().collect();
        ids.sort();
        let mut pairs = Vec::with_capacity(ids.len());
        for id in ids {
            let z = lr.remove(&id).unwrap();
            let y = hr
                .remove(&id)
                .ok_or_else(|| DataError::Config(format!("pair {id} missing its HR side")))?;
            pairs.push((z, y));
        }
        Ok(Self { s, pairs })
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty() || self.pairs.is_empty()
    }
}

fn window(samples: &[f64], offset: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let end = (offset + len).min(samples.len());
    if offset < end {
        out[..end - offset].copy_from_slice(&samples[offset..end]);
    }
    out
}

/// One random minibatch. `x` is drawn uniformly over source files and
/// offsets; `(z, y)` are drawn jointly from one pair with `offset_y == 3 ×
/// offset_z`, so the alignment identity holds exactly. Short files are
/// zero-padded at the tail.
pub fn sample_batch(
    set: &TrainSet,
    rng: &mut ChaCha8Rng,
    clip_len: usize,
    batch: usize,
    lr_rate: u32,
) -> Result<Batch, DataError> {
    if set.is_empty() {
        return Err(DataError::Config("empty training domain (need S_LR and T pairs)".into()));
    }
    let mut out = Batch::default();
    for _ in 0..batch {
        let sx = &set.s[rng.gen_range(0..set.s.len())];
        let off_x = rng.gen_range(0..=sx.len().saturating_sub(clip_len));
        out.x.push(AudioClip {
            samples: window(&sx.samples, off_x, clip_len),
            sample_rate: lr_rate,
        });
        let (z, y) = &set.pairs[rng.gen_range(0..set.pairs.len())];
        let off_z = rng.gen_range(0..=z.len().saturating_sub(clip_len));
        out.z.push(AudioClip {
            samples: window(&z.samples, off_z, clip_len),
            sample_rate: lr_rate,
        });
        out.y.push(AudioClip {
            samples: window(&y.samples, 3 * off_z, 3 * clip_len),
            sample_rate: lr_rate * 3,
        });
    }
    Ok(out)
}
