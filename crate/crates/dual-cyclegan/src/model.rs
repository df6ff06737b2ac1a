//! The four generators and three discriminators, their parameterization with
//! weight normalization, and the graph builders shared by training and
//! inference. D2 exists once in the parameter set and is referenced by both
//! the domain-adaptation and resampling loss groups.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::dsp::{resample_kernel, stft_plan, ResampleDirection, SpectrogramConfig, RESAMPLE_TAPS};
use crate::tape::{NodeId, Tape, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("length error: {0}")]
    Length(String),
    #[error("model parameters contain NaN/Inf ({0})")]
    CorruptModel(String),
    #[error("weight channel {0} has zero norm")]
    DegenerateWeight(usize),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("input rate {got} Hz, expected {want} Hz")]
    WrongRate { got: u32, want: u32 },
}

/// Named parameter tensors with a stable iteration order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, ModelError> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, ModelError> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.tensors[i]),
            None => Err(ModelError::MissingParam(name.to_string())),
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

/// Network dimensions. `channels`/`blocks` follow the WaveCycleGAN2-style
/// generator body; the waveform discriminator follows Parallel WaveGAN's
/// dilated stack; the spectral branch is a set of grouped sub-discriminators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArch {
    pub channels: usize,
    pub blocks: usize,
    pub gen_kernel_io: usize,
    pub gen_kernel_block: usize,
    pub disc_layers: usize,
    pub disc_channels: usize,
    pub spectral_groups: Vec<usize>,
    pub spectral_channels: usize,
    pub spectral_layers: usize,
    /// Sample rate of the LR domains; the HR domain runs at 3x this.
    pub lr_rate: u32,
}

impl ModelArch {
    pub fn full() -> Self {
        Self {
            channels: 128,
            blocks: 6,
            gen_kernel_io: 15,
            gen_kernel_block: 5,
            disc_layers: 10,
            disc_channels: 64,
            spectral_groups: vec![1, 2, 4],
            spectral_channels: 16,
            spectral_layers: 4,
            lr_rate: 16000,
        }
    }

    /// Laptop-scale preset used by the bundled fixture experiments.
    pub fn desk() -> Self {
        Self {
            channels: 32,
            blocks: 3,
            gen_kernel_io: 15,
            gen_kernel_block: 5,
            disc_layers: 4,
            disc_channels: 16,
            spectral_groups: vec![1, 2, 4],
            spectral_channels: 8,
            spectral_layers: 4,
            lr_rate: 16000,
        }
    }

    /// Minimal preset for fast determinism/resume checks and gradient tests.
    pub fn micro() -> Self {
        Self {
            channels: 8,
            blocks: 2,
            gen_kernel_io: 7,
            gen_kernel_block: 5,
            disc_layers: 3,
            disc_channels: 8,
            spectral_groups: vec![1, 2],
            spectral_channels: 4,
            spectral_layers: 2,
            lr_rate: 16000,
        }
    }

    pub fn hr_rate(&self) -> u32 {
        self.lr_rate * 3
    }

    fn gen_block_dilation(&self, k: usize) -> usize {
        1 << k
    }

    fn disc_dilation(&self, layer: usize) -> usize {
        if layer == 0 {
            1
        } else {
            (1usize << (layer - 1)).min(64)
        }
    }

    /// Receptive field of the generator conv stack, in samples.
    pub fn gen_receptive_field(&self) -> usize {
        let mut rf = 1 + 2 * (self.gen_kernel_io / 2); // input conv
        for k in 0..self.blocks {
            rf += 2 * (self.gen_kernel_block / 2) * self.gen_block_dilation(k);
        }
        rf += 2 * (self.gen_kernel_io / 2); // output conv
        rf
    }

    pub fn disc_receptive_field(&self) -> usize {
        let mut rf = 1;
        for l in 0..self.disc_layers {
            rf += 2 * self.disc_dilation(l);
        }
        rf
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GenId {
    G1,
    G2,
    G3,
    G4,
}

impl GenId {
    pub fn prefix(self) -> &'static str {
        match self {
            GenId::G1 => "g1",
            GenId::G2 => "g2",
            GenId::G3 => "g3",
            GenId::G4 => "g4",
        }
    }

    /// G3 upsamples 3x before its first layer, G4 decimates 3x; G1/G2 are
    /// rate-preserving.
    pub fn resample_mode(self) -> ResampleMode {
        match self {
            GenId::G1 | GenId::G2 => ResampleMode::None,
            GenId::G3 => ResampleMode::Up3,
            GenId::G4 => ResampleMode::Down3,
        }
    }

    pub const ALL: [GenId; 4] = [GenId::G1, GenId::G2, GenId::G3, GenId::G4];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiscId {
    D1,
    D2,
    D3,
}

impl DiscId {
    pub fn prefix(self) -> &'static str {
        match self {
            DiscId::D1 => "d1",
            DiscId::D2 => "d2",
            DiscId::D3 => "d3",
        }
    }

    /// Sample rate of the domain each discriminator judges.
    pub fn rate(self, arch: &ModelArch) -> u32 {
        match self {
            DiscId::D1 | DiscId::D2 => arch.lr_rate,
            DiscId::D3 => arch.hr_rate(),
        }
    }

    pub const ALL: [DiscId; 3] = [DiscId::D1, DiscId::D2, DiscId::D3];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMode {
    None,
    Up3,
    Down3,
}

/// Per-timestep waveform scores plus the spectral summarizer output.
#[derive(Debug, Clone)]
pub struct DiscOutput {
    pub waveform_map: Vec<f64>,
    pub spectral_scalar: f64,
}

/// All generator and discriminator parameters plus the architecture they
/// instantiate.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub arch: ModelArch,
    pub params: ParamSet,
}

fn conv_param_shapes(c_in: usize, c_out: usize, kernel: usize) -> [(String, usize, usize); 3] {
    [
        ("v".into(), c_out, c_in * kernel),
        ("g".into(), c_out, 1),
        ("b".into(), c_out, 1),
    ]
}

fn init_conv(params: &mut ParamSet, rng: &mut ChaCha8Rng, prefix: &str, c_in: usize, c_out: usize, kernel: usize) {
    let fan_in = (c_in * kernel) as f64;
    let bound = (3.0 / fan_in).sqrt();
    let mut v = Tensor::zeros(c_out, c_in * kernel);
    for x in v.data.iter_mut() {
        *x = rng.gen_range(-bound..bound);
    }
    let mut g = Tensor::zeros(c_out, 1);
    for r in 0..c_out {
        g.data[r] = v.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    params.insert(format!("{prefix}.v"), v);
    params.insert(format!("{prefix}.g"), g);
    params.insert(format!("{prefix}.b"), Tensor::zeros(c_out, 1));
}

impl ModelBundle {
    /// Fresh bundle with weight-normalized uniform init; at initialization the
    /// effective weights equal the raw draws (g is the per-channel norm).
    pub fn init(arch: ModelArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x6d6f64656c)); // "model"
        let mut params = ParamSet::new();
        let c = arch.channels;
        for gen in GenId::ALL {
            let p = gen.prefix();
            init_conv(&mut params, &mut rng, &format!("{p}.in_conv"), 1, 2 * c, arch.gen_kernel_io);
            for k in 0..arch.blocks {
                init_conv(
                    &mut params,
                    &mut rng,
                    &format!("{p}.block{k}.conv"),
                    c,
                    2 * c,
                    arch.gen_kernel_block,
                );
            }
            init_conv(&mut params, &mut rng, &format!("{p}.out_conv"), c, 2 * c, arch.gen_kernel_io);
            init_conv(&mut params, &mut rng, &format!("{p}.proj"), c, 1, 1);
        }
        for disc in DiscId::ALL {
            let p = disc.prefix();
            let d = arch.disc_channels;
            for l in 0..arch.disc_layers {
                let c_in = if l == 0 { 1 } else { d };
                init_conv(&mut params, &mut rng, &format!("{p}.wf{l}"), c_in, d, 3);
            }
            init_conv(&mut params, &mut rng, &format!("{p}.wf_out"), d, 1, 1);
            let s = arch.spectral_channels;
            for (m, &groups) in arch.spectral_groups.iter().enumerate() {
                for l in 0..arch.spectral_layers {
                    let c_in = if l == 0 { groups } else { s };
                    let c_out = if l + 1 == arch.spectral_layers { 1 } else { s };
                    init_conv(&mut params, &mut rng, &format!("{p}.spec{m}.l{l}"), c_in, c_out, 3);
                }
            }
            let m = arch.spectral_groups.len();
            let bound = (3.0 / m as f64).sqrt();
            let mut w = Tensor::zeros(1, m);
            for x in w.data.iter_mut() {
                *x = rng.gen_range(-bound..bound);
            }
            params.insert(format!("{p}.sum.w"), w);
            params.insert(format!("{p}.sum.b"), Tensor::zeros(1, 1));
        }
        Self { arch, params }
    }

    /// Names and shapes of every tensor a bundle of this architecture carries.
    pub fn expected_shapes(arch: &ModelArch) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        fn conv(out: &mut Vec<(String, usize, usize)>, prefix: String, c_in: usize, c_out: usize, kernel: usize) {
            for (suffix, r, c) in conv_param_shapes(c_in, c_out, kernel) {
                out.push((format!("{prefix}.{suffix}"), r, c));
            }
        }
        let c = arch.channels;
        for gen in GenId::ALL {
            let p = gen.prefix();
            conv(&mut out, format!("{p}.in_conv"), 1, 2 * c, arch.gen_kernel_io);
            for k in 0..arch.blocks {
                conv(&mut out, format!("{p}.block{k}.conv"), c, 2 * c, arch.gen_kernel_block);
            }
            conv(&mut out, format!("{p}.out_conv"), c, 2 * c, arch.gen_kernel_io);
            conv(&mut out, format!("{p}.proj"), c, 1, 1);
        }
        for disc in DiscId::ALL {
            let p = disc.prefix();
            let d = arch.disc_channels;
            for l in 0..arch.disc_layers {
                conv(&mut out, format!("{p}.wf{l}"), if l == 0 { 1 } else { d }, d, 3);
            }
            conv(&mut out, format!("{p}.wf_out"), d, 1, 1);
            let s = arch.spectral_channels;
            for (m, &groups) in arch.spectral_groups.iter().enumerate() {
                for l in 0..arch.spectral_layers {
                    let c_in = if l == 0 { groups } else { s };
                    let c_out = if l + 1 == arch.spectral_layers { 1 } else { s };
                    conv(&mut out, format!("{p}.spec{m}.l{l}"), c_in, c_out, 3);
                }
            }
            out.push((format!("{p}.sum.w"), 1, arch.spectral_groups.len()));
            out.push((format!("{p}.sum.b"), 1, 1));
        }
        out
    }
}

/// Splits a raw weight tensor into the weight-norm pair: `g` is the norm of
/// each output channel and `v` the raw direction, so `g * v/||v|| == raw`.
pub fn apply_weight_norm(raw: &Tensor) -> Result<(Tensor, Tensor), ModelError> {
    let mut g = Tensor::zeros(raw.rows, 1);
    for r in 0..raw.rows {
        let norm = raw.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(ModelError::DegenerateWeight(r));
        }
        g.data[r] = norm;
    }
    Ok((raw.clone(), g))
}

/// Binds parameter tensors to tape leaves, one leaf per distinct parameter,
/// so gradients for shared parameters (D2) accumulate in one place.
#[derive(Default)]
pub struct ParamBinder {
    bound: HashMap<usize, NodeId>,
}

impl ParamBinder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, tape: &mut Tape, params: &ParamSet, name: &str) -> NodeId {
        let idx = params
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        *self
            .bound
            .entry(idx)
            .or_insert_with(|| tape.leaf(params.tensor(idx).clone()))
    }

    /// (parameter index, leaf node) pairs bound so far.
    pub fn bound(&self) -> impl Iterator<Item = (usize, NodeId)> + '_ {
        self.bound.iter().map(|(&k, &v)| (k, v))
    }
}

fn conv_wn(
    tape: &mut Tape,
    binder: &mut ParamBinder,
    params: &ParamSet,
    prefix: &str,
    input: NodeId,
    kernel: usize,
    dilation: usize,
) -> NodeId {
    let v = binder.bind(tape, params, &format!("{prefix}.v"));
    let g = binder.bind(tape, params, &format!("{prefix}.g"));
    let b = binder.bind(tape, params, &format!("{prefix}.b"));
    let w = tape.weight_norm(v, g);
    tape.conv1d(input, w, b, kernel, dilation)
}

/// Generator graph: sinc pre-resampler (G3/G4), input conv + GLU, dilated
/// residual GLU blocks, output conv + GLU, 1x1 projection, and a skip
/// connection from the resampled input.
pub fn build_generator(
    tape: &mut Tape,
    bundle: &ModelBundle,
    binder: &mut ParamBinder,
    which: GenId,
    input: NodeId,
) -> NodeId {
    let arch = &bundle.arch;
    let p = which.prefix();
    let base = match which.resample_mode() {
        ResampleMode::None => input,
        ResampleMode::Up3 => {
            let kernel = Arc::new(resample_kernel(ResampleDirection::Up3, RESAMPLE_TAPS, 8.0));
            tape.resample3(input, ResampleDirection::Up3, kernel)
        }
        ResampleMode::Down3 => {
            let kernel = Arc::new(resample_kernel(ResampleDirection::Down3, RESAMPLE_TAPS, 8.0));
            tape.resample3(input, ResampleDirection::Down3, kernel)
        }
    };
    let c0 = conv_wn(tape, binder, &bundle.params, &format!("{p}.in_conv"), base, arch.gen_kernel_io, 1);
    let mut h = tape.glu(c0);
    for k in 0..arch.blocks {
        let c = conv_wn(
            tape,
            binder,
            &bundle.params,
            &format!("{p}.block{k}.conv"),
            h,
            arch.gen_kernel_block,
            arch.gen_block_dilation(k),
        );
        let t = tape.glu(c);
        h = tape.add(h, t);
    }
    let ca = conv_wn(tape, binder, &bundle.params, &format!("{p}.out_conv"), h, arch.gen_kernel_io, 1);
    let a = tape.glu(ca);
    let proj = conv_wn(tape, binder, &bundle.params, &format!("{p}.proj"), a, 1, 1);
    tape.add(base, proj)
}

/// Discriminator graph. Returns the per-timestep waveform map and the
/// spectral summarizer scalar.
pub fn build_discriminator(
    tape: &mut Tape,
    bundle: &ModelBundle,
    binder: &mut ParamBinder,
    which: DiscId,
    input: NodeId,
    spec_cfg: &SpectrogramConfig,
) -> (NodeId, NodeId) {
    let arch = &bundle.arch;
    let p = which.prefix();

    // waveform branch
    let mut h = input;
    for l in 0..arch.disc_layers {
        let c = conv_wn(tape, binder, &bundle.params, &format!("{p}.wf{l}"), h, 3, arch.disc_dilation(l));
        h = tape.leaky_relu(c, 0.2);
    }
    let wf_map = conv_wn(tape, binder, &bundle.params, &format!("{p}.wf_out"), h, 1, 1);

    // spectral branch over the log-amplitude linear spectrogram
    let plan = stft_plan(spec_cfg.fft_size, spec_cfg.win_length, spec_cfg.hop);
    let mag = tape.stft_mag(input, plan, spec_cfg.mag_eps);
    let log_spec = tape.log_clamp(mag, spec_cfg.log_floor);
    let bins = spec_cfg.bins();
    let mut sub_scores = Vec::with_capacity(arch.spectral_groups.len());
    for (m, &groups) in arch.spectral_groups.iter().enumerate() {
        let band = Arc::new(band_matrix(bins, groups));
        let banded = tape.matmul_const(log_spec, band, groups);
        let mut s = banded;
        for l in 0..arch.spectral_layers {
            let c = conv_wn(tape, binder, &bundle.params, &format!("{p}.spec{m}.l{l}"), s, 3, 1);
            s = if l + 1 == arch.spectral_layers { c } else { tape.leaky_relu(c, 0.2) };
        }
        sub_scores.push(tape.mean(s));
    }
    let stacked = tape.stack_scalars(sub_scores);
    let w = binder.bind(tape, &bundle.params, &format!("{p}.sum.w"));
    let b = binder.bind(tape, &bundle.params, &format!("{p}.sum.b"));
    let spectral = tape.linear(stacked, w, b);
    (wf_map, spectral)
}

/// Band-averaging matrix [groups, bins]: bins are zero-padded up to a
/// multiple of the group count, each group averages its contiguous band.
fn band_matrix(bins: usize, groups: usize) -> Vec<f64> {
    let padded = bins.div_ceil(groups) * groups;
    let width = padded / groups;
    let mut m = vec![0.0; groups * bins];
    for gidx in 0..groups {
        let lo = gidx * width;
        let hi = ((gidx + 1) * width).min(bins);
        for b in lo..hi {
            m[gidx * bins + b] = 1.0 / width as f64;
        }
    }
    m
}

fn check_gen_input(bundle: &ModelBundle, which: GenId, clip: &AudioClip) -> Result<(), ModelError> {
    if !bundle.params.all_finite() {
        return Err(ModelError::CorruptModel(which.prefix().to_string()));
    }
    if which.resample_mode() == ResampleMode::Down3 && clip.len() % 3 != 0 {
        return Err(ModelError::Length(format!(
            "decimating generator needs length divisible by 3, got {}",
            clip.len()
        )));
    }
    let rf = bundle.arch.gen_receptive_field();
    let effective = match which.resample_mode() {
        ResampleMode::Up3 => clip.len() * 3,
        _ => clip.len(),
    };
    if effective < rf {
        return Err(ModelError::Length(format!(
            "input of {} samples shorter than the receptive field ({rf})",
            clip.len()
        )));
    }
    Ok(())
}

/// One generator applied to a clip outside any training graph.
pub fn generator_forward(
    bundle: &ModelBundle,
    which: GenId,
    clip: &AudioClip,
) -> Result<AudioClip, ModelError> {
    check_gen_input(bundle, which, clip)?;
    let mut tape = Tape::new();
    let mut binder = ParamBinder::new();
    let input = tape.leaf(Tensor::row_vector(clip.samples.clone()));
    let out = build_generator(&mut tape, bundle, &mut binder, which, input);
    let value = tape.value(out);
    let rate = match which.resample_mode() {
        ResampleMode::None => clip.sample_rate,
        ResampleMode::Up3 => clip.sample_rate * 3,
        ResampleMode::Down3 => clip.sample_rate / 3,
    };
    Ok(AudioClip { samples: value.data.clone(), sample_rate: rate })
}

/// One discriminator applied to a clip outside any training graph.
pub fn discriminator_forward(
    bundle: &ModelBundle,
    which: DiscId,
    clip: &AudioClip,
    spec_cfg: &SpectrogramConfig,
) -> Result<DiscOutput, ModelError> {
    if !bundle.params.all_finite() {
        return Err(ModelError::CorruptModel(which.prefix().to_string()));
    }
    let min_len = spec_cfg.win_length.max(bundle.arch.disc_receptive_field());
    if clip.len() < min_len {
        return Err(ModelError::Length(format!(
            "input of {} samples shorter than required {min_len}",
            clip.len()
        )));
    }
    let mut tape = Tape::new();
    let mut binder = ParamBinder::new();
    let input = tape.leaf(Tensor::row_vector(clip.samples.clone()));
    let (wf, spec) = build_discriminator(&mut tape, bundle, &mut binder, which, input, spec_cfg);
    Ok(DiscOutput {
        waveform_map: tape.value(wf).data.clone(),
        spectral_scalar: tape.value(spec).item(),
    })
}

/// The deployment path: `g3(g1(x))`, 16 kHz in, 48 kHz out, 3x the samples.
pub fn composite_sr(bundle: &ModelBundle, input: &AudioClip) -> Result<AudioClip, ModelError> {
    if input.sample_rate != bundle.arch.lr_rate {
        return Err(ModelError::WrongRate { got: input.sample_rate, want: bundle.arch.lr_rate });
    }
    let mid = generator_forward(bundle, GenId::G1, input)?;
    generator_forward(bundle, GenId::G3, &mid)
}

/// Forces a generator to the identity on its resampled input by zeroing the
/// projection gain and bias. Used by tests and stub constructions.
pub fn zero_projection(bundle: &mut ModelBundle, which: GenId) {
    let p = which.prefix();
    for suffix in ["g", "b"] {
        let t = bundle.params.get_mut(&format!("{p}.proj.{suffix}")).unwrap();
        t.data.iter_mut().for_each(|v| *v = 0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_bundle() -> ModelBundle {
        ModelBundle::init(ModelArch::micro(), 42)
    }

    fn ramp(len: usize, rate: u32) -> AudioClip {
        AudioClip {
            samples: (0..len).map(|i| ((i % 80) as f64 - 40.0) / 60.0).collect(),
            sample_rate: rate,
        }
    }

    #[test]
    fn generator_length_contracts() {
        let bundle = tiny_bundle();
        let x = ramp(1200, 16000);
        let same = generator_forward(&bundle, GenId::G1, &x).unwrap();
        assert_eq!(same.len(), 1200);
        assert_eq!(same.sample_rate, 16000);
        let up = generator_forward(&bundle, GenId::G3, &x).unwrap();
        assert_eq!(up.len(), 3600);
        assert_eq!(up.sample_rate, 48000);
        let y = ramp(3600, 48000);
        let down = generator_forward(&bundle, GenId::G4, &y).unwrap();
        assert_eq!(down.len(), 1200);
        assert_eq!(down.sample_rate, 16000);
    }

    #[test]
    fn decimation_divisibility_enforced() {
        let bundle = tiny_bundle();
        let y = ramp(3601, 48000);
        assert!(matches!(
            generator_forward(&bundle, GenId::G4, &y),
            Err(ModelError::Length(_))
        ));
    }

    #[test]
    fn zero_projection_makes_identity() {
        let mut bundle = tiny_bundle();
        zero_projection(&mut bundle, GenId::G1);
        let x = ramp(900, 16000);
        let out = generator_forward(&bundle, GenId::G1, &x).unwrap();
        for (a, b) in x.samples.iter().zip(&out.samples) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn composite_sr_contract_and_determinism() {
        let bundle = tiny_bundle();
        let x = ramp(1600, 16000);
        let out1 = composite_sr(&bundle, &x).unwrap();
        let out2 = composite_sr(&bundle, &x).unwrap();
        assert_eq!(out1.len(), 4800);
        assert_eq!(out1.sample_rate, 48000);
        assert_eq!(out1.samples, out2.samples);

        let wrong = ramp(1600, 44100);
        assert!(matches!(
            composite_sr(&bundle, &wrong),
            Err(ModelError::WrongRate { .. })
        ));
    }

    #[test]
    fn composite_equals_g3_when_g1_is_identity() {
        let mut bundle = tiny_bundle();
        zero_projection(&mut bundle, GenId::G1);
        let x = ramp(1500, 16000);
        let composite = composite_sr(&bundle, &x).unwrap();
        let direct = generator_forward(&bundle, GenId::G3, &x).unwrap();
        for (a, b) in composite.samples.iter().zip(&direct.samples) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn waveform_map_has_input_length() {
        let bundle = tiny_bundle();
        let mut cfg = SpectrogramConfig::mel_16k().linear();
        cfg.fft_size = 256;
        cfg.win_length = 256;
        cfg.hop = 64;
        let x = ramp(1200, 16000);
        let out = discriminator_forward(&bundle, DiscId::D2, &x, &cfg).unwrap();
        assert_eq!(out.waveform_map.len(), 1200);
        assert!(out.spectral_scalar.is_finite());
    }

    #[test]
    fn summarizer_bias_reaches_output() {
        // zero all spectral conv paths; the scalar must equal the summarizer bias
        let mut bundle = tiny_bundle();
        for m in 0..bundle.arch.spectral_groups.len() {
            let l_last = bundle.arch.spectral_layers - 1;
            for suffix in ["g", "b"] {
                let name = format!("d1.spec{m}.l{l_last}.{suffix}");
                bundle.params.get_mut(&name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        {
            let w = bundle.params.get_mut("d1.sum.w").unwrap();
            w.data.iter_mut().for_each(|v| *v = 0.0);
        }
        bundle.params.get_mut("d1.sum.b").unwrap().data[0] = 0.625;
        let mut cfg = SpectrogramConfig::mel_16k().linear();
        cfg.fft_size = 256;
        cfg.win_length = 256;
        cfg.hop = 64;
        let x = ramp(800, 16000);
        let out = discriminator_forward(&bundle, DiscId::D1, &x, &cfg).unwrap();
        assert!((out.spectral_scalar - 0.625).abs() < 1e-15);
    }

    #[test]
    fn apply_weight_norm_345() {
        let raw = Tensor::from_vec(1, 2, vec![3.0, 4.0]);
        let (v, g) = apply_weight_norm(&raw).unwrap();
        assert_eq!(g.data[0], 5.0);
        // reconstruct: g * v/||v||
        let norm = (v.data[0] * v.data[0] + v.data[1] * v.data[1]).sqrt();
        assert!((g.data[0] * v.data[0] / norm - 3.0).abs() < 1e-12);
        assert!((g.data[0] * v.data[1] / norm - 4.0).abs() < 1e-12);

        let zero = Tensor::from_vec(1, 2, vec![0.0, 0.0]);
        assert!(matches!(apply_weight_norm(&zero), Err(ModelError::DegenerateWeight(0))));
    }

    #[test]
    fn corrupt_model_detected() {
        let mut bundle = tiny_bundle();
        bundle.params.get_mut("g1.proj.b").unwrap().data[0] = f64::NAN;
        let x = ramp(900, 16000);
        assert!(matches!(
            generator_forward(&bundle, GenId::G1, &x),
            Err(ModelError::CorruptModel(_))
        ));
    }

    #[test]
    fn d2_is_shared_single_parameter_set() {
        // binding d2 twice on one tape yields the same leaf
        let bundle = tiny_bundle();
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new();
        let a = binder.bind(&mut tape, &bundle.params, "d2.wf0.v");
        let b = binder.bind(&mut tape, &bundle.params, "d2.wf0.v");
        assert_eq!(a, b);
    }
}
