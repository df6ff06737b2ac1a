//! Nonparallel audio super-resolution built from two connected CycleGANs.
//!
//! The library decomposes 16 kHz → 48 kHz super-resolution into a domain
//! adaptation step (generators G1/G2 between a source LR corpus and a target
//! LR corpus) and a resampling step (G3/G4 between the target LR and HR
//! corpora). Training runs in two stages, joint pre-training then fine-tuning,
//! and inference applies the composite mapping `g3(g1(x))`.

pub mod audio;
pub mod checkpoint;
pub mod data;
pub mod dsp;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tape;
pub mod trainer;
pub mod wav;
