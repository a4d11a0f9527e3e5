//! Synthetic matched-pair datasets, the `TPDS` file format and the batch
//! sampler.
//!
//! Every scene has a latent vector `z ~ N(0, I)`. Its two views are
//!
//! ```text
//! view_a = z + σ·ε₁
//! view_p = R·z + σ·ε₂,   R = I + distortion·G/‖G‖_F
//! ```
//!
//! with one Gaussian `G` shared by the whole dataset, so `‖R − I‖_F` equals
//! the distortion parameter. Views are rounded to `f32` at generation time
//! so a write/read cycle is bit-exact.
//!
//! # File layout
//!
//! All fields little-endian.
//!
//! | field      | type  |
//! |------------|-------|
//! | magic      | `TPDS` |
//! | version    | u32 (1) |
//! | scenes     | u64   |
//! | dim        | u32   |
//! | seed       | u64   |
//! | noise      | f64   |
//! | distortion | f64   |
//!
//! followed by `scenes` records of `u64 scene_id`, `dim × f32 view_a`,
//! `dim × f32 view_p`.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const DATASET_MAGIC: &[u8; 4] = b"TPDS";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 8 + 8 + 8;

/// Latent source of one matching pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: u64,
    pub latent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub scene_id: u64,
    pub view_a: Vec<f64>,
    pub view_p: Vec<f64>,
}

/// Generator parameters, echoed into the file header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub version: u32,
    pub scenes: u64,
    pub dim: u32,
    pub seed: u64,
    pub noise: f64,
    pub distortion: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub pairs: Vec<PatchPair>,
}

/// Generates a dataset and returns the scenes behind it.
pub fn generate_with_scenes(
    seed: u64,
    scenes: usize,
    dim: usize,
    noise: f64,
    distortion: f64,
) -> Result<(DatasetFile, Vec<Scene>)> {
    if scenes < 2 {
        return Err(Error::InvalidArgument(format!(
            "at least 2 scenes are required, got {scenes}"
        )));
    }
    if dim == 0 || dim > u32::MAX as usize {
        return Err(Error::InvalidArgument(format!(
            "invalid patch dimension {dim}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise must be >= 0, got {noise}"
        )));
    }
    if !(distortion >= 0.0 && distortion.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "distortion must be >= 0, got {distortion}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    };

    let g = normal(dim * dim);
    let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut r = DenseMatrix::identity(dim).into_vec();
    if distortion > 0.0 && g_norm > 0.0 {
        for (rv, gv) in r.iter_mut().zip(&g) {
            *rv += distortion * gv / g_norm;
        }
    }
    let r = DenseMatrix::new(dim, dim, r)?;

    let round = |v: f64| v as f32 as f64;
    let mut pairs = Vec::with_capacity(scenes);
    let mut latents = Vec::with_capacity(scenes);
    for id in 0..scenes as u64 {
        let z = normal(dim);
        let ea = normal(dim);
        let ep = normal(dim);
        let rz = r.mat_vec(&z);
        pairs.push(PatchPair {
            scene_id: id,
            view_a: z
                .iter()
                .zip(&ea)
                .map(|(z, e)| round(z + noise * e))
                .collect(),
            view_p: rz
                .iter()
                .zip(&ep)
                .map(|(z, e)| round(z + noise * e))
                .collect(),
        });
        latents.push(Scene {
            scene_id: id,
            latent: z,
        });
    }
    let header = DatasetHeader {
        version: DATASET_VERSION,
        scenes: scenes as u64,
        dim: dim as u32,
        seed,
        noise,
        distortion,
    };
    Ok((DatasetFile { header, pairs }, latents))
}

pub fn generate(
    seed: u64,
    scenes: usize,
    dim: usize,
    noise: f64,
    distortion: f64,
) -> Result<DatasetFile> {
    generate_with_scenes(seed, scenes, dim, noise, distortion).map(|(d, _)| d)
}

impl DatasetFile {
    pub fn dim(&self) -> usize {
        self.header.dim as usize
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.dim();
        let mut buf = Vec::with_capacity(HEADER_LEN + self.pairs.len() * (8 + 8 * dim));
        let h = &self.header;
        buf.extend_from_slice(DATASET_MAGIC);
        buf.extend_from_slice(&h.version.to_le_bytes());
        buf.extend_from_slice(&h.scenes.to_le_bytes());
        buf.extend_from_slice(&h.dim.to_le_bytes());
        buf.extend_from_slice(&h.seed.to_le_bytes());
        buf.extend_from_slice(&h.noise.to_le_bytes());
        buf.extend_from_slice(&h.distortion.to_le_bytes());
        for pair in &self.pairs {
            buf.extend_from_slice(&pair.scene_id.to_le_bytes());
            for v in pair.view_a.iter().chain(&pair.view_p) {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        let magic = cur.take(4)?;
        if magic != DATASET_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad dataset magic {magic:?}, expected TPDS"),
            });
        }
        let version = cur.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported dataset version {version}"),
            });
        }
        let scenes = cur.u64()?;
        let dim_at = cur.offset();
        let dim = cur.u32()?;
        if dim == 0 {
            return Err(Error::Format {
                offset: dim_at,
                message: "patch dimension is zero".into(),
            });
        }
        let header = DatasetHeader {
            version,
            scenes,
            dim,
            seed: cur.u64()?,
            noise: cur.f64()?,
            distortion: cur.f64()?,
        };
        let record = 8 + 8 * dim as u64;
        let expected = (cur.remaining() as u64) / record;
        if scenes > expected {
            return Err(Error::Format {
                offset: HEADER_LEN as u64 + expected * record,
                message: format!(
                    "truncated: header declares {scenes} records, file holds {expected}"
                ),
            });
        }
        let mut pairs = Vec::with_capacity(scenes as usize);
        let mut seen = HashSet::with_capacity(scenes as usize);
        for _ in 0..scenes {
            let at = cur.offset();
            let scene_id = cur.u64()?;
            if !seen.insert(scene_id) {
                return Err(Error::Format {
                    offset: at,
                    message: format!("duplicate scene id {scene_id}"),
                });
            }
            let read_view = |cur: &mut ByteCursor| -> Result<Vec<f64>> {
                (0..dim)
                    .map(|_| {
                        let at = cur.offset();
                        let v = cur.f32()?;
                        if !v.is_finite() {
                            return Err(Error::Format {
                                offset: at,
                                message: "non-finite patch value".into(),
                            });
                        }
                        Ok(v as f64)
                    })
                    .collect()
            };
            let view_a = read_view(&mut cur)?;
            let view_p = read_view(&mut cur)?;
            pairs.push(PatchPair {
                scene_id,
                view_a,
                view_p,
            });
        }
        if !cur.is_empty() {
            return Err(Error::Format {
                offset: cur.offset(),
                message: "trailing bytes after the last record".into(),
            });
        }
        Ok(Self { header, pairs })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Splits into (training, held-out) pairs; the held-out part is the
    /// last `round(len·holdout)` scenes, kept to at least 2 on each side
    /// when `holdout > 0`.
    pub fn split(&self, holdout: f64) -> Result<(&[PatchPair], &[PatchPair])> {
        let cut = split_point(self.len(), holdout)?;
        Ok(self.pairs.split_at(cut))
    }
}

/// Index where the held-out part of `len` pairs begins.
pub fn split_point(len: usize, holdout: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&holdout) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction must lie in [0, 1), got {holdout}"
        )));
    }
    if holdout == 0.0 {
        return Ok(len);
    }
    if len < 4 {
        return Err(Error::InvalidArgument(format!(
            "{len} scenes cannot be split into training and held-out sets"
        )));
    }
    let held = ((len as f64 * holdout).round() as usize).clamp(2, len - 2);
    Ok(len - held)
}

/// Matched raw patches of one batch; row `i` of both matrices comes from
/// scene `scene_ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub scene_ids: Vec<u64>,
    pub anchors: DenseMatrix,
    pub positives: DenseMatrix,
}

impl PatchBatch {
    pub fn from_pairs(pairs: &[&PatchPair]) -> Result<Self> {
        let anchors: Vec<&[f64]> = pairs.iter().map(|p| p.view_a.as_slice()).collect();
        let positives: Vec<&[f64]> = pairs.iter().map(|p| p.view_p.as_slice()).collect();
        Ok(Self {
            scene_ids: pairs.iter().map(|p| p.scene_id).collect(),
            anchors: DenseMatrix::from_rows(&anchors)?,
            positives: DenseMatrix::from_rows(&positives)?,
        })
    }

    pub fn len(&self) -> usize {
        self.scene_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scene_ids.is_empty()
    }
}

/// Draws `batch_size` distinct pairs without replacement.
pub fn sample_batch<R: Rng + ?Sized>(
    pairs: &[PatchPair],
    batch_size: usize,
    rng: &mut R,
) -> Result<PatchBatch> {
    if batch_size > pairs.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {batch_size} exceeds {} available scenes",
            pairs.len()
        )));
    }
    let picked: Vec<&PatchPair> = sample(rng, pairs.len(), batch_size)
        .into_iter()
        .map(|i| &pairs[i])
        .collect();
    PatchBatch::from_pairs(&picked)
}

/// Little-endian reader that reports the offset of every short read.
#[derive(Debug)]
pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format {
                offset: self.offset(),
                message: format!("truncated: need {n} bytes, {} remain", self.remaining()),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        self.array().map(f32::from_le_bytes)
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }
}
