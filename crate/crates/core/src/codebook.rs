//! Per-scale store of normal patch features with count-weighted merging,
//! cosine retrieval and scale selection.

use std::collections::BTreeSet;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor};
use crate::encoder::{encoder_input, Encoder, PatchFeatureMode, PatchReducer, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::geometry::{spatial_hash, PointCloud};
use crate::patchify::{patchify, PatchConfig};

pub const DEFAULT_TAU: f64 = 0.85;
pub const LEVELS: usize = 3;
pub const CODEBOOK_MAGIC: &[u8; 4] = b"PBCB";
pub const CODEBOOK_VERSION: u32 = 1;
const CRC: crc::Crc<u64> = crc::Crc::<u64>::new(&crc::CRC_64_ECMA_182);

pub type Feature = [f32; FEATURE_DIM];

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookEntry {
    pub feature: Feature,
    /// Accumulated merge weight n.
    pub weight: f64,
    pub keys: BTreeSet<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CodebookMeta {
    pub class: String,
    pub sources: Vec<String>,
    pub config_hash: u64,
}

/// What an [`Codebook::update`] call did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateOutcome {
    Merged { index: usize, similarity: f64 },
    Inserted { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub tau: f64,
    levels: [Vec<CodebookEntry>; LEVELS],
    pub meta: CodebookMeta,
}

pub fn dot(a: &[f64], b: &Feature) -> f64 {
    a.iter().zip(b).map(|(x, &y)| x * y as f64).sum()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v {
        *x /= n + 1e-12;
    }
}

fn level_index(level: usize) -> Result<usize> {
    if (1..=LEVELS).contains(&level) {
        Ok(level - 1)
    } else {
        Err(Error::InvalidConfig(format!("codebook level {level} outside 1..=3")))
    }
}

impl Codebook {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("tau {tau} outside (0, 1]")));
        }
        Ok(Self {
            tau,
            levels: Default::default(),
            meta: CodebookMeta::default(),
        })
    }

    /// Entries of level `level` (1-based).
    pub fn level(&self, level: usize) -> &[CodebookEntry] {
        &self.levels[level - 1]
    }

    pub fn len(&self, level: usize) -> usize {
        self.levels[level - 1].len()
    }

    pub fn total_entries(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_entries() == 0
    }

    /// Merge `feature` into the first entry with cosine ≥ τ, or append it.
    pub fn update(&mut self, level: usize, feature: &[f64], key: u64) -> Result<UpdateOutcome> {
        let li = level_index(level)?;
        if feature.len() != FEATURE_DIM {
            return Err(Error::ShapeMismatch(format!("feature of width {}", feature.len())));
        }
        if !feature.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("codebook feature".into()));
        }
        let mut t = feature.to_vec();
        normalize(&mut t);
        let tau = self.tau;
        let entries = &mut self.levels[li];
        for (index, entry) in entries.iter_mut().enumerate() {
            let s = dot(&t, &entry.feature);
            if s >= tau {
                let n = entry.weight;
                let mut merged: Vec<f64> = entry
                    .feature
                    .iter()
                    .zip(&t)
                    .map(|(&c, &ti)| (n * c as f64 + s * ti) / (n + s))
                    .collect();
                normalize(&mut merged);
                for (dst, v) in entry.feature.iter_mut().zip(merged) {
                    *dst = v as f32;
                }
                entry.weight = n + s;
                entry.keys.insert(key);
                return Ok(UpdateOutcome::Merged {
                    index,
                    similarity: s,
                });
            }
        }
        let mut stored = [0f32; FEATURE_DIM];
        for (dst, v) in stored.iter_mut().zip(&t) {
            *dst = *v as f32;
        }
        entries.push(CodebookEntry {
            feature: stored,
            weight: 1.0,
            keys: BTreeSet::from([key]),
        });
        Ok(UpdateOutcome::Inserted {
            index: entries.len() - 1,
        })
    }

    /// Index and cosine of the most similar entry to a unit-norm query;
    /// ties go to the earliest.
    pub fn retrieve(&self, level: usize, query: &[f64]) -> Result<(usize, f64)> {
        let entries = &self.levels[level_index(level)?];
        if entries.is_empty() {
            return Err(Error::EmptyLevel(level));
        }
        let mut best = (0, f64::NEG_INFINITY);
        for (i, e) in entries.iter().enumerate() {
            let s = dot(query, &e.feature);
            if s > best.1 {
                best = (i, s);
            }
        }
        Ok(best)
    }

    /// Retrieved template for every row of `queries`, with similarities.
    pub fn templates(&self, level: usize, queries: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<f64>)> {
        let mut out = Tensor::zeros(queries.rows(), FEATURE_DIM);
        let mut sims = Vec::with_capacity(queries.rows());
        for r in 0..queries.rows() {
            let (i, s) = self.retrieve(level, queries.row(r))?;
            for (dst, &v) in out.row_mut(r).iter_mut().zip(&self.levels[level - 1][i].feature) {
                *dst = v as f64;
            }
            sims.push(s);
        }
        Ok((out, sims))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CODEBOOK_MAGIC);
        out.write_u32::<LittleEndian>(CODEBOOK_VERSION).expect("vec write");
        out.write_f64::<LittleEndian>(self.tau).expect("vec write");
        let meta = serde_json::to_vec(&self.meta)?;
        out.write_u32::<LittleEndian>(meta.len() as u32).expect("vec write");
        out.extend_from_slice(&meta);
        for level in &self.levels {
            out.write_u64::<LittleEndian>(level.len() as u64).expect("vec write");
            for e in level {
                for &v in &e.feature {
                    out.write_f32::<LittleEndian>(v).expect("vec write");
                }
                out.write_f64::<LittleEndian>(e.weight).expect("vec write");
                out.write_u32::<LittleEndian>(e.keys.len() as u32).expect("vec write");
                for &k in &e.keys {
                    out.write_u64::<LittleEndian>(k).expect("vec write");
                }
            }
        }
        let checksum = CRC.checksum(&out);
        out.write_u64::<LittleEndian>(checksum).expect("vec write");
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| Error::CorruptFile(format!("codebook: {what}"));
        if bytes.len() < 8 || &bytes[..4] != CODEBOOK_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CODEBOOK_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CODEBOOK_VERSION,
            });
        }
        if bytes.len() < 16 {
            return Err(corrupt("truncated"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if CRC.checksum(body) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        let mut cur = Cursor::new(&body[8..]);
        let io = |_: std::io::Error| corrupt("truncated");
        let tau = cur.read_f64::<LittleEndian>().map_err(io)?;
        let meta_len = cur.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut meta = vec![0u8; meta_len];
        cur.read_exact(&mut meta).map_err(io)?;
        let meta: CodebookMeta =
            serde_json::from_slice(&meta).map_err(|e| corrupt(&e.to_string()))?;
        let mut book = Codebook::new(tau).map_err(|_| corrupt("tau out of range"))?;
        book.meta = meta;
        for level in book.levels.iter_mut() {
            let count = cur.read_u64::<LittleEndian>().map_err(io)?;
            for _ in 0..count {
                let mut feature = [0f32; FEATURE_DIM];
                for v in feature.iter_mut() {
                    *v = cur.read_f32::<LittleEndian>().map_err(io)?;
                }
                let weight = cur.read_f64::<LittleEndian>().map_err(io)?;
                let nkeys = cur.read_u32::<LittleEndian>().map_err(io)?;
                let keys = (0..nkeys)
                    .map(|_| cur.read_u64::<LittleEndian>())
                    .collect::<std::io::Result<_>>()
                    .map_err(io)?;
                level.push(CodebookEntry {
                    feature,
                    weight,
                    keys,
                });
            }
        }
        if cur.position() as usize != body.len() - 8 {
            return Err(corrupt("trailing bytes"));
        }
        Ok(book)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Σ pⱼ·tⱼ over rank-matched pairs, truncated to the shorter list.
pub fn scale_similarity(queries: &Tensor<f64>, templates: &Tensor<f64>) -> Result<f64> {
    let pairs = queries.rows().min(templates.rows());
    if pairs == 0 {
        return Err(Error::EmptyInput);
    }
    Ok((0..pairs)
        .map(|r| {
            queries
                .row(r)
                .iter()
                .zip(templates.row(r))
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .sum())
}

/// Index of the level with the largest (optionally count-normalized)
/// similarity sum; ties resolve to the finest level.
pub fn select_scale(alphas: &[f64], counts: &[usize], normalized: bool) -> usize {
    let score = |i: usize| {
        if normalized {
            alphas[i] / counts[i].max(1) as f64
        } else {
            alphas[i]
        }
    };
    let mut best = 0;
    for i in 1..alphas.len() {
        if score(i) > score(best) {
            best = i;
        }
    }
    best
}

/// Insert every patch of every cloud, level by level in rank order.
pub fn build_codebook(
    clouds: &[PointCloud],
    patch_config: &PatchConfig,
    encoder: &Encoder,
    params: &ParamStore,
    mode: PatchFeatureMode,
    tau: f64,
) -> Result<Codebook> {
    if clouds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut book = Codebook::new(tau)?;
    for cloud in clouds {
        let levels = patchify(cloud, patch_config)?;
        let input = encoder_input(cloud)?;
        let mut tape = Tape::<f64>::new();
        let bound = params.bind(&mut tape)?;
        let x = tape.constant(input)?;
        let z = encoder.forward(&mut tape, &bound, x)?;
        for (li, set) in levels.iter().enumerate() {
            let reducer = PatchReducer::new(set, cloud, mode)?;
            let p = reducer.apply(&mut tape, z)?;
            let features = tape.value(p).clone();
            let cell = 2.0 * set.mean_radius(cloud);
            for (patch, row) in set.patches.iter().zip(0..features.rows()) {
                let key = spatial_hash(&patch.center, set.level, cell.max(1e-9));
                book.update(li + 1, features.row(row), key.key)?;
            }
        }
    }
    Ok(book)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn unit(rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut v: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        normalize(&mut v);
        v
    }

    fn basis(i: usize) -> Vec<f64> {
        let mut v = vec![0.0; FEATURE_DIM];
        v[i] = 1.0;
        v
    }

    #[test]
    fn self_merge_is_fixed_point() {
        let mut book = Codebook::new(DEFAULT_TAU).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = unit(&mut rng);
        book.update(1, &f, 7).unwrap();
        let before = book.level(1)[0].feature;
        let out = book.update(1, &f, 8).unwrap();
        assert!(matches!(out, UpdateOutcome::Merged { index: 0, .. }));
        assert_eq!(book.len(1), 1);
        let e = &book.level(1)[0];
        for (a, b) in e.feature.iter().zip(&before) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!((e.weight - 2.0).abs() < 1e-6);
        assert_eq!(e.keys, BTreeSet::from([7, 8]));
    }

    #[test]
    fn orthogonal_vectors_stay_apart() {
        let mut book = Codebook::new(DEFAULT_TAU).unwrap();
        book.update(2, &basis(0), 1).unwrap();
        book.update(2, &basis(1), 2).unwrap();
        assert_eq!(book.len(2), 2);
        assert_eq!(book.len(1), 0);
    }

    #[test]
    fn merge_formula_at_cosine_point_nine() {
        let mut book = Codebook::new(DEFAULT_TAU).unwrap();
        let c = basis(0);
        let mut t = vec![0.0; FEATURE_DIM];
        t[0] = 0.9;
        t[1] = (1.0f64 - 0.81).sqrt();
        book.update(1, &c, 1).unwrap();
        book.update(1, &t, 2).unwrap();
        let s = 0.9;
        let raw: Vec<f64> = (0..FEATURE_DIM).map(|i| (c[i] + s * t[i]) / (1.0 + s)).collect();
        let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let e = &book.level(1)[0];
        for (got, want) in e.feature.iter().zip(raw.iter().map(|x| x / n)) {
            assert!((*got as f64 - want).abs() < 1e-6);
        }
        assert!((e.weight - 1.9).abs() < 1e-12);
        let norm: f64 = e.feature.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn retrieval_cases() {
        let mut book = Codebook::new(DEFAULT_TAU).unwrap();
        assert!(matches!(book.retrieve(1, &basis(0)), Err(Error::EmptyLevel(1))));
        book.update(1, &basis(3), 1).unwrap();
        let (i, s) = book.retrieve(1, &basis(3)).unwrap();
        assert_eq!((i, s), (0, 1.0));
        let neg: Vec<f64> = basis(3).iter().map(|x| -x).collect();
        assert_eq!(book.retrieve(1, &neg).unwrap(), (0, -1.0));
    }

    #[test]
    fn retrieval_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut book = Codebook::new(1.0).unwrap();
        for k in 0..5 {
            book.update(3, &unit(&mut rng), k).unwrap();
        }
        assert_eq!(book.len(3), 5);
        for _ in 0..50 {
            let q = unit(&mut rng);
            let (i, s) = book.retrieve(3, &q).unwrap();
            let sims: Vec<f64> = book.level(3).iter().map(|e| dot(&q, &e.feature)).collect();
            let max = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(s, max);
            assert_eq!(i, sims.iter().position(|&x| x == max).unwrap());
        }
    }

    #[test]
    fn scale_similarity_cases() {
        let id = Tensor::from_rows(&[basis(0), basis(1), basis(2)]).unwrap();
        assert_eq!(scale_similarity(&id, &id).unwrap(), 3.0);
        let shifted = Tensor::from_rows(&[basis(1), basis(2), basis(3)]).unwrap();
        assert_eq!(scale_similarity(&id, &shifted).unwrap(), 0.0);
        let mut t = vec![basis(0)];
        let mut half = vec![0.0; FEATURE_DIM];
        half[1] = 0.5;
        half[5] = 0.75f64.sqrt();
        t.push(half);
        let mut neg = vec![0.0; FEATURE_DIM];
        neg[2] = -0.2;
        neg[7] = 0.96f64.sqrt();
        t.push(neg);
        let alpha = scale_similarity(&id, &Tensor::from_rows(&t).unwrap()).unwrap();
        assert!((alpha - 1.3).abs() < 1e-15);
        let empty = Tensor::<f64>::zeros(0, FEATURE_DIM);
        assert!(matches!(scale_similarity(&empty, &id), Err(Error::EmptyInput)));
    }

    #[test]
    fn scale_selection() {
        assert_eq!(select_scale(&[0.4], &[1], true), 0);
        assert_eq!(select_scale(&[0.9, 0.7, 0.5], &[1, 1, 1], true), 0);
        assert_eq!(select_scale(&[0.5, 0.5, 0.5], &[1, 1, 1], true), 0);
        // raw sums favour the populous level, normalized ones need not
        assert_eq!(select_scale(&[96.0, 40.0, 28.0], &[192, 64, 32], false), 0);
        assert_eq!(select_scale(&[96.0, 40.0, 28.0], &[192, 64, 32], true), 2);
    }

    #[test]
    fn serialization_round_trip_and_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut book = Codebook::new(0.5).unwrap();
        for k in 0..40 {
            book.update(1 + (k % 3) as usize, &unit(&mut rng), k).unwrap();
        }
        book.meta.class = "gear".into();
        let bytes = book.to_bytes().unwrap();
        assert_eq!(Codebook::from_bytes(&bytes).unwrap(), book);
        let cut = &bytes[..bytes.len() - 5];
        assert_eq!(Codebook::from_bytes(cut).unwrap_err().kind(), "CorruptFile");
        let mut flipped = bytes.clone();
        flipped[30] ^= 1;
        assert_eq!(Codebook::from_bytes(&flipped).unwrap_err().kind(), "CorruptFile");
        let mut newer = bytes.clone();
        newer[4] = 2;
        assert!(matches!(
            Codebook::from_bytes(&newer),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn empty_codebook_file_has_three_levels() {
        let book = Codebook::new(DEFAULT_TAU).unwrap();
        let bytes = book.to_bytes().unwrap();
        let back = Codebook::from_bytes(&bytes).unwrap();
        assert_eq!(back, book);
        assert!(back.is_empty());
        // 3 zero counts precede the checksum
        assert_eq!(&bytes[bytes.len() - 32..bytes.len() - 8], &[0u8; 24]);
    }
}
