//! Feature-tensor files, dataset manifests, batch sampling and checkpoints.
//!
//! # STDF feature file (little-endian)
//!
//! ```text
//! offset  size      field
//! 0       4         magic 53 54 44 46 ("STDF")
//! 4       1         version, 0x01
//! 5       1         label (0 normal, 1 abnormal)
//! 6       2         id length (u16)
//! 8       idlen     id, UTF-8
//! +0      1         rank, must be 4
//! +1      4*rank    dims (u32 each), order (C, T, H, W)
//! +       4*prod    f32 payload, row major, C outermost / W innermost
//! ```
//!
//! Round trips are bit-exact, including negative zero.
//!
//! # Manifest
//!
//! Line-oriented text, one entry per line: `<relative-path>\t<label>\t<id>`.
//! Paths resolve relative to the manifest file's directory.
//!
//! # Checkpoint (STCK)
//!
//! ```text
//! magic 53 54 43 4B ("STCK"), version 0x01,
//! u32 config length + config text (flat key = value lines),
//! u32 tensor count, then per tensor:
//!   u16 name length, name UTF-8, u8 rank, rank x u32 dims, f32 payload.
//! ```
//!
//! Checkpoints carry model parameters by plan name, the attention feature map
//! as `feature_map.w_rand`, and optimizer state as `opt.m.<param>`,
//! `opt.v.<param>` and scalar `opt.step`.

pub mod synthetic;

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::seeding::{rng, salt};
use crate::tensor::Tensor;

pub const STDF_MAGIC: [u8; 4] = *b"STDF";
pub const STDF_VERSION: u8 = 0x01;
pub const STCK_MAGIC: [u8; 4] = *b"STCK";
pub const STCK_VERSION: u8 = 0x01;

/// Video-level (weak) label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Normal = 0,
    Abnormal = 1,
}

impl Label {
    pub fn from_byte(b: u8) -> Result<Label> {
        match b {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Abnormal),
            other => Err(Error::Contract(format!(
                "label byte must be 0/1, got {other}"
            ))),
        }
    }

    pub fn as_byte(self) -> u8 {
        self as u8
    }
}

/// One video's pooled feature tensor plus its weak label.
#[derive(Debug, Clone)]
pub struct FeatureClip {
    pub tensor: Tensor<f32>,
    pub label: Label,
    pub id: String,
}

// ---------------------------------------------------------------------------
// STDF read/write
// ---------------------------------------------------------------------------

pub fn write_feature_file(clip: &FeatureClip, path: &Path) -> Result<()> {
    if clip.tensor.rank() != 4 {
        return Err(Error::Contract(format!(
            "feature tensors are rank 4, got {:?}",
            clip.tensor.shape()
        )));
    }
    if !clip.tensor.all_finite() {
        return Err(Error::Contract(format!(
            "refusing to write non-finite tensor for clip {}",
            clip.id
        )));
    }
    if clip.id.len() > u16::MAX as usize {
        return Err(Error::Contract("clip id longer than 65535 bytes".into()));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(&STDF_MAGIC).map_err(io)?;
    w.write_all(&[STDF_VERSION, clip.label.as_byte()])
        .map_err(io)?;
    w.write_all(&(clip.id.len() as u16).to_le_bytes())
        .map_err(io)?;
    w.write_all(clip.id.as_bytes()).map_err(io)?;
    w.write_all(&[4u8]).map_err(io)?;
    for &d in clip.tensor.shape() {
        if d > u32::MAX as usize {
            return Err(Error::Contract(format!("dimension {d} exceeds u32")));
        }
        w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
    }
    for &v in clip.tensor.data() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                offset: self.buf.len() as u64,
                message: format!(
                    "truncated while reading {what}: need {n} bytes at offset {}",
                    self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

pub fn read_feature_file(path: &Path) -> Result<FeatureClip> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    parse_feature_bytes(&buf)
}

pub fn parse_feature_bytes(buf: &[u8]) -> Result<FeatureClip> {
    let mut c = Cursor { buf, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != STDF_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:02x?}, expected \"STDF\""),
        });
    }
    let version = c.take(1, "version")?[0];
    if version != STDF_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let label_off = c.pos as u64;
    let label = Label::from_byte(c.take(1, "label")?[0]).map_err(|_| Error::Format {
        offset: label_off,
        message: "label byte must be 0 or 1".into(),
    })?;
    let id_len = u16::from_le_bytes(c.take(2, "id length")?.try_into().unwrap()) as usize;
    let id_off = c.pos as u64;
    let id = String::from_utf8(c.take(id_len, "id")?.to_vec()).map_err(|_| Error::Format {
        offset: id_off,
        message: "id is not valid UTF-8".into(),
    })?;
    let rank_off = c.pos as u64;
    let rank = c.take(1, "rank")?[0];
    if rank != 4 {
        return Err(Error::Format {
            offset: rank_off,
            message: format!("rank must be 4, got {rank}"),
        });
    }
    let mut dims = Vec::with_capacity(4);
    let mut elems: usize = 1;
    for i in 0..4 {
        let dim_off = c.pos as u64;
        let d = u32::from_le_bytes(c.take(4, "dimension")?.try_into().unwrap()) as usize;
        if d == 0 {
            return Err(Error::Format {
                offset: dim_off,
                message: format!("dimension {i} is zero"),
            });
        }
        elems = elems.checked_mul(d).ok_or(Error::Format {
            offset: dim_off,
            message: "dimension product overflows".into(),
        })?;
        dims.push(d);
    }
    let payload_off = c.pos;
    let payload_bytes = elems.checked_mul(4).ok_or(Error::Format {
        offset: payload_off as u64,
        message: "payload size overflows".into(),
    })?;
    let payload = c.take(payload_bytes, "payload")?;
    if c.pos != buf.len() {
        return Err(Error::Format {
            offset: c.pos as u64,
            message: format!("{} trailing bytes after payload", buf.len() - c.pos),
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let _ = payload_off;
    Ok(FeatureClip {
        tensor: Tensor::new(dims, data)?,
        label,
        id,
    })
}

// ---------------------------------------------------------------------------
// Clip pooling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipPooling {
    /// Elementwise max: keeps the most prominent activation per cell. Default.
    Max,
    /// Elementwise mean, available for ablation.
    Mean,
}

/// Pool several same-shape clip tensors into one video-level tensor.
pub fn pool_clip_features(clips: &[Tensor<f32>], mode: ClipPooling) -> Result<Tensor<f32>> {
    let first = clips
        .first()
        .ok_or_else(|| Error::Contract("pool_clip_features on empty clip list".into()))?;
    for c in clips {
        if c.shape() != first.shape() {
            return Err(Error::Shape(format!(
                "clip shapes disagree: {:?} vs {:?}",
                first.shape(),
                c.shape()
            )));
        }
    }
    let mut out = first.clone();
    match mode {
        ClipPooling::Max => {
            for c in &clips[1..] {
                for (o, &v) in out.data_mut().iter_mut().zip(c.data()) {
                    if v > *o {
                        *o = v;
                    }
                }
            }
        }
        ClipPooling::Mean => {
            for c in &clips[1..] {
                for (o, &v) in out.data_mut().iter_mut().zip(c.data()) {
                    *o += v;
                }
            }
            let inv = 1.0 / clips.len() as f32;
            for o in out.data_mut() {
                *o *= inv;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn seed_salt(self) -> u64 {
        match self {
            Split::Train => 0xA1,
            Split::Test => 0xA2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    /// Path as written in the manifest.
    pub rel: String,
    /// Resolved path on disk.
    pub path: PathBuf,
    pub label: Label,
    pub id: String,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
    pub dir: PathBuf,
}

impl Manifest {
    /// Parse and validate: every referenced file must exist; ids are unique.
    pub fn load(path: &Path, split: Split) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut entries = Vec::new();
        let mut ids = HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (rel, label, id) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(r), Some(l), Some(i), None) => (r, l, i),
                _ => {
                    return Err(Error::Format {
                        offset: lineno as u64 + 1,
                        message: format!(
                            "manifest line {} needs 3 tab-separated fields",
                            lineno + 1
                        ),
                    })
                }
            };
            let label = match label {
                "0" => Label::Normal,
                "1" => Label::Abnormal,
                other => {
                    return Err(Error::Format {
                        offset: lineno as u64 + 1,
                        message: format!("manifest line {}: label {other:?} not 0/1", lineno + 1),
                    })
                }
            };
            if !ids.insert(id.to_string()) {
                return Err(Error::Contract(format!(
                    "duplicate clip id {id:?} in manifest"
                )));
            }
            let resolved = dir.join(rel);
            if !resolved.is_file() {
                return Err(Error::Contract(format!(
                    "manifest references missing file {}",
                    resolved.display()
                )));
            }
            entries.push(ManifestEntry {
                rel: rel.to_string(),
                path: resolved,
                label,
                id: id.to_string(),
            });
        }
        Ok(Manifest {
            entries,
            split,
            dir,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for e in &self.entries {
            text.push_str(&format!("{}\t{}\t{}\n", e.rel, e.label.as_byte(), e.id));
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn indices_of(&self, label: Label) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == label)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn counts(&self) -> (usize, usize) {
        let n = self.indices_of(Label::Normal).len();
        (n, self.entries.len() - n)
    }
}

// ---------------------------------------------------------------------------
// Balanced batch sampling
// ---------------------------------------------------------------------------

/// Per-epoch balanced batch plan: a seeded shuffle of each class, chunked into
/// N normal + N abnormal index groups, without replacement within the epoch.
pub struct BatchPlan {
    normal: Vec<usize>,
    abnormal: Vec<usize>,
    n: usize,
    seed: u64,
}

impl BatchPlan {
    pub fn new(manifest: &Manifest, n: usize, seed: u64) -> Result<BatchPlan> {
        if n == 0 {
            return Err(Error::Contract("batch half-size must be positive".into()));
        }
        let normal = manifest.indices_of(Label::Normal);
        let abnormal = manifest.indices_of(Label::Abnormal);
        if normal.len() < n || abnormal.len() < n {
            return Err(Error::Contract(format!(
                "manifest holds {} normal / {} abnormal clips; batches need {n} of each",
                normal.len(),
                abnormal.len()
            )));
        }
        Ok(BatchPlan {
            normal,
            abnormal,
            n,
            seed,
        })
    }

    /// Batches of one epoch: each is N normal indices then N abnormal indices.
    pub fn epoch_batches(&self, epoch: u64) -> Vec<Vec<usize>> {
        let shuffle = |base: &[usize], class_salt: u64| {
            let mut v = base.to_vec();
            let mut r = rng(self.seed, salt::BATCH_SHUFFLE ^ (epoch << 8) ^ class_salt);
            // Fisher-Yates
            for i in (1..v.len()).rev() {
                let j = (rand::Rng::random::<u64>(&mut r) % (i as u64 + 1)) as usize;
                v.swap(i, j);
            }
            v
        };
        let normals = shuffle(&self.normal, 1);
        let abnormals = shuffle(&self.abnormal, 2);
        let batches_per_epoch = self.normal.len().min(self.abnormal.len()) / self.n;
        (0..batches_per_epoch)
            .map(|b| {
                let mut batch = Vec::with_capacity(2 * self.n);
                batch.extend_from_slice(&normals[b * self.n..(b + 1) * self.n]);
                batch.extend_from_slice(&abnormals[b * self.n..(b + 1) * self.n]);
                batch
            })
            .collect()
    }

    /// One full pass of the smaller label class.
    pub fn batches_per_epoch(&self) -> usize {
        self.normal.len().min(self.abnormal.len()) / self.n
    }
}

/// Load the first batch of epoch 0: exactly N normal + N abnormal clips.
pub fn sample_batch(manifest: &Manifest, n: usize, seed: u64) -> Result<Vec<FeatureClip>> {
    let plan = BatchPlan::new(manifest, n, seed)?;
    let batches = plan.epoch_batches(0);
    let first = batches
        .first()
        .ok_or_else(|| Error::Contract("manifest too small for one batch".into()))?;
    first
        .iter()
        .map(|&i| read_feature_file(&manifest.entries[i].path))
        .collect()
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Named tensors plus a config text block.
pub struct Checkpoint {
    pub config_text: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

pub fn write_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(&STCK_MAGIC).map_err(io)?;
    w.write_all(&[STCK_VERSION]).map_err(io)?;
    w.write_all(&(ck.config_text.len() as u32).to_le_bytes())
        .map_err(io)?;
    w.write_all(ck.config_text.as_bytes()).map_err(io)?;
    w.write_all(&(ck.tensors.len() as u32).to_le_bytes())
        .map_err(io)?;
    for (name, t) in &ck.tensors {
        w.write_all(&(name.len() as u16).to_le_bytes())
            .map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&[t.rank() as u8]).map_err(io)?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != STCK_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad checkpoint magic {magic:02x?}, expected \"STCK\""),
        });
    }
    let version = c.take(1, "version")?[0];
    if version != STCK_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let cfg_len = u32::from_le_bytes(c.take(4, "config length")?.try_into().unwrap()) as usize;
    let cfg_off = c.pos as u64;
    let config_text =
        String::from_utf8(c.take(cfg_len, "config")?.to_vec()).map_err(|_| Error::Format {
            offset: cfg_off,
            message: "config block is not valid UTF-8".into(),
        })?;
    let count = u32::from_le_bytes(c.take(4, "tensor count")?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(c.take(2, "name length")?.try_into().unwrap()) as usize;
        let name_off = c.pos as u64;
        let name =
            String::from_utf8(c.take(name_len, "name")?.to_vec()).map_err(|_| Error::Format {
                offset: name_off,
                message: "tensor name is not valid UTF-8".into(),
            })?;
        let rank = c.take(1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        let mut elems: usize = 1;
        for _ in 0..rank {
            let off = c.pos as u64;
            let d = u32::from_le_bytes(c.take(4, "dimension")?.try_into().unwrap()) as usize;
            elems = elems.checked_mul(d).ok_or(Error::Format {
                offset: off,
                message: "dimension product overflows".into(),
            })?;
            dims.push(d);
        }
        let payload = c.take(elems * 4, "tensor payload")?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::new(dims, data)?));
    }
    if c.pos != buf.len() {
        return Err(Error::Format {
            offset: c.pos as u64,
            message: format!("{} trailing bytes after last tensor", buf.len() - c.pos),
        });
    }
    Ok(Checkpoint {
        config_text,
        tensors,
    })
}

/// Seed stream for per-clip synthesis; shared structure comes from the plain
/// seed so train/test splits of one dataset agree on it.
pub(crate) fn clip_seed(seed: u64, split: Split, index: usize, label: Label) -> u64 {
    crate::seeding::mix(
        seed,
        salt::SYNTH_CLIP
            ^ split.seed_salt()
            ^ ((index as u64) << 16)
            ^ ((label.as_byte() as u64) << 1),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "vad-data-{tag}-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn clip(shape: &[usize], seed: u64) -> FeatureClip {
        let mut r = rng(seed, 0x99);
        FeatureClip {
            tensor: Tensor::from_fn(shape, |_| rand::Rng::random::<f32>(&mut r) * 2.0 - 1.0),
            label: if seed % 2 == 0 {
                Label::Normal
            } else {
                Label::Abnormal
            },
            id: format!("clip-{seed}"),
        }
    }

    #[test]
    fn stdf_round_trip_bit_exact() {
        let dir = tmpdir("roundtrip");
        let mut c = clip(&[3, 2, 4, 4], 7);
        // include negative zero explicitly
        c.tensor.data_mut()[0] = -0.0;
        let path = dir.join("a.stdf");
        write_feature_file(&c, &path).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert_eq!(back.id, c.id);
        assert_eq!(back.label, c.label);
        assert_eq!(back.tensor.shape(), c.tensor.shape());
        for (a, b) in back.tensor.data().iter().zip(c.tensor.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn stdf_rejects_bad_magic_at_offset_zero() {
        match parse_feature_bytes(b"XXXXrest") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn stdf_rejects_truncated_payload() {
        let dir = tmpdir("trunc");
        let c = clip(&[2, 2, 2, 2], 8);
        let path = dir.join("t.stdf");
        write_feature_file(&c, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        match parse_feature_bytes(&bytes) {
            Err(Error::Format { message, .. }) => {
                assert!(message.contains("truncated"), "{message}")
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn stdf_rejects_dim_overflow() {
        // header declaring dims whose product overflows the payload math
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&STDF_MAGIC);
        bytes.extend_from_slice(&[STDF_VERSION, 0]);
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(b"xx");
        bytes.push(4);
        for _ in 0..4 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        match parse_feature_bytes(&bytes) {
            Err(Error::Format { message, .. }) => {
                assert!(message.contains("overflow"), "{message}")
            }
            other => panic!("expected overflow rejection, got {other:?}"),
        }
    }

    #[test]
    fn stdf_rejects_non_finite_on_write() {
        let dir = tmpdir("nonfinite");
        let mut c = clip(&[1, 1, 1, 2], 9);
        c.tensor.data_mut()[0] = f32::NAN;
        assert!(matches!(
            write_feature_file(&c, &dir.join("n.stdf")),
            Err(Error::Contract(_))
        ));
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn pooling_max_and_dominance() {
        let a = Tensor::<f32>::from_fn(&[2, 1, 2, 2], |i| i as f32);
        let zero = Tensor::<f32>::zeros(&[2, 1, 2, 2]);
        let pooled = pool_clip_features(&[a.clone(), zero.clone()], ClipPooling::Max).unwrap();
        assert_eq!(pooled.data(), a.data()); // a >= 0 elementwise
        let single = pool_clip_features(&[a.clone()], ClipPooling::Max).unwrap();
        assert_eq!(single.data(), a.data());
        // idempotent / commutative / associative on a triple
        let b = Tensor::<f32>::from_fn(&[2, 1, 2, 2], |i| (8 - i as i32) as f32);
        let ab = pool_clip_features(&[a.clone(), b.clone()], ClipPooling::Max).unwrap();
        let ba = pool_clip_features(&[b.clone(), a.clone()], ClipPooling::Max).unwrap();
        assert_eq!(ab.data(), ba.data());
        let aab = pool_clip_features(&[a.clone(), ab.clone()], ClipPooling::Max).unwrap();
        assert_eq!(aab.data(), ab.data());
    }

    #[test]
    fn pooling_empty_list_is_contract_error() {
        assert!(matches!(
            pool_clip_features(&[], ClipPooling::Max),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn manifest_round_trip_and_validation() {
        let dir = tmpdir("manifest");
        for i in 0..4 {
            let mut c = clip(&[1, 1, 2, 2], i);
            c.id = format!("id-{i}");
            write_feature_file(&c, &dir.join(format!("c{i}.stdf"))).unwrap();
        }
        let text = "c0.stdf\t0\tid-0\nc1.stdf\t1\tid-1\nc2.stdf\t0\tid-2\nc3.stdf\t1\tid-3\n";
        let mpath = dir.join("manifest.tsv");
        fs::write(&mpath, text).unwrap();
        let m = Manifest::load(&mpath, Split::Train).unwrap();
        assert_eq!(m.entries.len(), 4);
        assert_eq!(m.counts(), (2, 2));

        // duplicate id rejected
        fs::write(&mpath, "c0.stdf\t0\tdup\nc1.stdf\t1\tdup\n").unwrap();
        assert!(matches!(
            Manifest::load(&mpath, Split::Train),
            Err(Error::Contract(_))
        ));

        // missing file rejected
        fs::write(&mpath, "missing.stdf\t0\tid-x\n").unwrap();
        assert!(matches!(
            Manifest::load(&mpath, Split::Train),
            Err(Error::Contract(_))
        ));
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn batch_plan_balanced_and_deterministic() {
        let dir = tmpdir("batches");
        let mut lines = String::new();
        for i in 0..10 {
            let mut c = clip(&[1, 1, 2, 2], i);
            c.label = if i < 6 {
                Label::Normal
            } else {
                Label::Abnormal
            };
            c.id = format!("id-{i}");
            let name = format!("c{i}.stdf");
            write_feature_file(&c, &dir.join(&name)).unwrap();
            lines.push_str(&format!("{name}\t{}\tid-{i}\n", c.label.as_byte()));
        }
        let mpath = dir.join("manifest.tsv");
        fs::write(&mpath, lines).unwrap();
        let m = Manifest::load(&mpath, Split::Train).unwrap();

        let plan = BatchPlan::new(&m, 2, 42).unwrap();
        assert_eq!(plan.batches_per_epoch(), 2); // min(6, 4) / 2
        let b0 = plan.epoch_batches(0);
        let b0_again = plan.epoch_batches(0);
        assert_eq!(b0, b0_again);
        let b1 = plan.epoch_batches(1);
        assert_ne!(b0, b1);
        for batch in &b0 {
            assert_eq!(batch.len(), 4);
            let normal = batch
                .iter()
                .filter(|&&i| m.entries[i].label == Label::Normal)
                .count();
            assert_eq!(normal, 2);
        }
        // without replacement within an epoch
        let mut seen: Vec<usize> = b0.iter().flatten().copied().collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), b0.iter().map(|b| b.len()).sum::<usize>());

        // insufficient class count
        assert!(matches!(BatchPlan::new(&m, 5, 1), Err(Error::Contract(_))));

        // 1+1 manifest with N=1 returns both clips deterministically
        fs::write(&mpath, "c0.stdf\t0\tid-0\nc6.stdf\t1\tid-6\n").unwrap();
        let tiny = Manifest::load(&mpath, Split::Train).unwrap();
        let batch = sample_batch(&tiny, 1, 7).unwrap();
        assert_eq!(batch.len(), 2);
        assert_eq!(batch[0].label, Label::Normal);
        assert_eq!(batch[1].label, Label::Abnormal);
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tmpdir("ckpt");
        let ck = Checkpoint {
            config_text: "preset = fast\nmargin = 100\n".into(),
            tensors: vec![
                (
                    "w".into(),
                    Tensor::<f32>::from_fn(&[2, 3], |i| i as f32 * 0.5),
                ),
                (
                    "opt.step".into(),
                    Tensor::<f32>::new(vec![1], vec![42.0]).unwrap(),
                ),
            ],
        };
        let path = dir.join("model.stck");
        write_checkpoint(&ck, &path).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.config_text, ck.config_text);
        assert_eq!(back.tensors.len(), 2);
        assert_eq!(back.tensors[0].0, "w");
        assert_eq!(back.tensors[0].1.shape(), &[2, 3]);
        for (a, b) in back.tensors[0].1.data().iter().zip(ck.tensors[0].1.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        fs::remove_dir_all(dir).ok();
    }
}
