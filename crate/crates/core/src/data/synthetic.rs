//! Synthetic feature clips with temporally-defined anomalies.
//!
//! Normal clips are smooth spatial fields per channel plus a coherent linear
//! drift along T (per-channel gains fixed at dataset level) and Gaussian
//! noise. Abnormal clips share the same construction, then a random channel
//! band has its temporal behavior violated: frames reversed in time, or the
//! whole band frozen at one randomly chosen frame.
//!
//! Both violations preserve the marginal distribution of any single temporal
//! slice (reversal permutes frames; freezing replays one valid frame), so
//! single-frame classifiers stay near chance while whole-clip classifiers
//! separate the classes.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{clip_seed, write_feature_file, FeatureClip, Label, Manifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::seeding::{mix, rng, salt};
use crate::tensor::Tensor;

const NOISE_STD: f64 = 0.1;
const BACKGROUND_AMPS: [f64; 2] = [0.4, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnomalyKind {
    /// A channel band is frozen at one randomly chosen frame for all of T.
    StaticBlob,
    /// A channel band plays its frames in reversed temporal order.
    ReversedMotion,
}

impl AnomalyKind {
    pub fn parse(s: &str) -> Result<AnomalyKind> {
        match s {
            "static_blob" => Ok(AnomalyKind::StaticBlob),
            "reversed_motion" => Ok(AnomalyKind::ReversedMotion),
            other => Err(Error::Config(format!(
                "unknown anomaly kind {other:?}; expected static_blob or reversed_motion"
            ))),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            AnomalyKind::StaticBlob => "static_blob",
            AnomalyKind::ReversedMotion => "reversed_motion",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_normal: usize,
    pub n_abnormal: usize,
    pub shape: [usize; 4],
    pub seed: u64,
    pub kind: AnomalyKind,
    pub split: Split,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_normal: 100,
            n_abnormal: 100,
            shape: [192, 16, 10, 10],
            seed: 0,
            kind: AnomalyKind::ReversedMotion,
            split: Split::Train,
        }
    }
}

/// Dataset-level per-channel drift gains; split-independent so train and test
/// sets generated from the same seed share structure.
pub fn drift_gains(seed: u64, channels: usize) -> Vec<f64> {
    let mut r = rng(seed, salt::SYNTH_STRUCTURE);
    (0..channels)
        .map(|_| {
            let mag = 0.6 + 0.8 * r.random::<f64>();
            if r.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// Centered temporal ramp in [-1/2, 1/2].
fn ramp(t: usize, len: usize) -> f64 {
    (t as f64 - (len as f64 - 1.0) / 2.0) / (len.max(2) as f64 - 1.0)
}

/// Generate one clip deterministically from (spec.seed, split, index, label).
pub fn synth_clip(spec: &SyntheticSpec, index: usize, label: Label, gains: &[f64]) -> FeatureClip {
    let [c, t, h, w] = spec.shape;
    let mut r = rng(
        clip_seed(spec.seed, spec.split, index, label),
        salt::SYNTH_CLIP,
    );
    let hw = h * w;

    // smooth per-channel spatial background, static across time
    let mut background = vec![0.0f64; c * hw];
    for ci in 0..c {
        for &amp in &BACKGROUND_AMPS {
            let u = 1 + (r.random::<u32>() % 2) as usize;
            let v = 1 + (r.random::<u32>() % 2) as usize;
            let phase = r.random::<f64>() * std::f64::consts::TAU;
            for hi in 0..h {
                for wi in 0..w {
                    let arg = std::f64::consts::TAU
                        * (u as f64 * hi as f64 / h as f64 + v as f64 * wi as f64 / w as f64)
                        + phase;
                    background[ci * hw + hi * w + wi] += amp * arg.cos();
                }
            }
        }
    }

    let mut data = vec![0.0f32; c * t * hw];
    for ci in 0..c {
        for ti in 0..t {
            let drift = gains[ci] * ramp(ti, t);
            let base = ci * t * hw + ti * hw;
            for si in 0..hw {
                let noise: f64 = r.sample::<f64, _>(StandardNormal) * NOISE_STD;
                data[base + si] = (background[ci * hw + si] + drift + noise) as f32;
            }
        }
    }

    if label == Label::Abnormal {
        let band = (c / 3).max(1);
        let c0 = if c > band {
            (r.random::<u32>() as usize) % (c - band + 1)
        } else {
            0
        };
        match spec.kind {
            AnomalyKind::ReversedMotion => {
                for ci in c0..c0 + band {
                    let chan = &mut data[ci * t * hw..(ci + 1) * t * hw];
                    for ti in 0..t / 2 {
                        let tj = t - 1 - ti;
                        for si in 0..hw {
                            chan.swap(ti * hw + si, tj * hw + si);
                        }
                    }
                }
            }
            AnomalyKind::StaticBlob => {
                let frozen = (r.random::<u32>() as usize) % t;
                for ci in c0..c0 + band {
                    let chan = &mut data[ci * t * hw..(ci + 1) * t * hw];
                    let frame: Vec<f32> = chan[frozen * hw..(frozen + 1) * hw].to_vec();
                    for ti in 0..t {
                        chan[ti * hw..(ti + 1) * hw].copy_from_slice(&frame);
                    }
                }
            }
        }
    }

    let tag = match label {
        Label::Normal => "n",
        Label::Abnormal => "a",
    };
    FeatureClip {
        tensor: Tensor::new(vec![c, t, h, w], data).expect("synthetic shape"),
        label,
        id: format!("clip-{}-{}-{:04}", spec.split.tag(), tag, index),
    }
}

/// All clips of a spec, normals first. Clips are produced lazily; peak memory
/// stays at one clip.
pub fn generate_clips(spec: &SyntheticSpec) -> impl Iterator<Item = FeatureClip> + '_ {
    let gains = drift_gains(spec.seed, spec.shape[0]);
    let normals = 0..spec.n_normal;
    let abnormals = 0..spec.n_abnormal;
    let g2 = gains.clone();
    normals
        .map(move |i| synth_clip(spec, i, Label::Normal, &gains))
        .chain(abnormals.map(move |i| synth_clip(spec, i, Label::Abnormal, &g2)))
}

/// Write a dataset to disk: one STDF file per clip plus `manifest.tsv`.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<Manifest> {
    if spec.n_normal == 0 || spec.n_abnormal == 0 {
        return Err(Error::Config(
            "synthetic datasets need at least one clip of each label".into(),
        ));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(spec.n_normal + spec.n_abnormal);
    for clip in generate_clips(spec) {
        let rel = format!("{}.stdf", clip.id);
        let path = out_dir.join(&rel);
        write_feature_file(&clip, &path)?;
        entries.push(ManifestEntry {
            rel,
            path,
            label: clip.label,
            id: clip.id.clone(),
        });
    }
    let manifest = Manifest {
        entries,
        split: spec.split,
        dir: out_dir.to_path_buf(),
    };
    manifest.save(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

/// Conventional manifest location inside a generated dataset directory.
pub fn manifest_path(out_dir: &Path) -> std::path::PathBuf {
    out_dir.join("manifest.tsv")
}

/// Salt-derived sub-seed helper for callers that need split variants of one
/// dataset seed (e.g. a held-out eval set with fresh clip noise).
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut acc = 0u64;
    for (i, b) in tag.bytes().enumerate() {
        acc ^= (b as u64) << ((i % 8) * 8);
    }
    mix(seed, acc)
}
