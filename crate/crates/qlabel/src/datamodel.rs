//! Core data types, dataset splits, and IDX binary ingestion.
//!
//! Everything downstream (environment generation, classifier, policy,
//! baselines) consumes the types defined here. All types are immutable
//! after construction and safe to share between threads.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::envgen::BucketSpec;

/// IDX magic for unsigned-byte rank-3 tensors (image files).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// IDX magic for unsigned-byte rank-1 tensors (label files).
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX payload: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("IDX dimension overflow: {count} items of {rows}x{cols}")]
    DimensionOverflow { count: u32, rows: u32, cols: u32 },
    #[error("corrupt label {value} at index {index} (labels must be 0..=9)")]
    CorruptLabel { index: usize, value: u8 },
    #[error("insufficient images: need {needed}, have {available}")]
    InsufficientImages { needed: usize, available: usize },
}

/// One data point: a feature vector plus an optional ground-truth flag.
///
/// The truth flag exists only in simulation (it drives rewards and recall
/// metrics) and is deliberately not public: episode code paths work on
/// features alone, and metric code goes through [`Example::truth`].
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    id: u64,
    features: Vec<f64>,
    truth: Option<bool>,
}

impl Example {
    pub fn new(id: u64, features: Vec<f64>, truth: Option<bool>) -> Self {
        debug_assert!(features.iter().all(|v| v.is_finite()));
        Example {
            id,
            features,
            truth,
        }
    }

    /// Stable identifier assigned at ingestion or episode generation.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// Simulation ground truth. Only evaluation and environment code may
    /// look at this; selection policies and classifiers never do.
    pub fn truth(&self) -> Option<bool> {
        self.truth
    }
}

/// The atomic selection unit: a fixed-size group of examples sharing one
/// generation spec.
#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    spec: BucketSpec,
    examples: Vec<Example>,
}

impl Bucket {
    pub fn new(spec: BucketSpec, examples: Vec<Example>) -> Self {
        Bucket { spec, examples }
    }

    pub fn spec(&self) -> &BucketSpec {
        &self.spec
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// True iff the generation spec is a valid positive sub-concept.
    /// Derived from the spec alone, so it can never disagree with it.
    pub fn is_clean(&self) -> bool {
        self.spec.is_clean()
    }
}

/// Held-out labeled examples used to compute rewards during policy
/// training. Reads of the labeled contents are counted so tests can
/// assert that test-time rollouts never touch them.
#[derive(Debug)]
pub struct RewardSet {
    examples: Vec<Example>,
    reads: AtomicU64,
}

impl RewardSet {
    pub fn new(examples: Vec<Example>) -> Self {
        debug_assert!(examples.iter().all(|e| e.truth().is_some()));
        RewardSet {
            examples,
            reads: AtomicU64::new(0),
        }
    }

    /// The labeled examples. Every call is recorded.
    pub fn labeled(&self) -> &[Example] {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.examples
    }

    /// Number of times `labeled` has been called on this instance.
    pub fn read_count(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    /// Size without counting as a labeled read.
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

impl Clone for RewardSet {
    fn clone(&self) -> Self {
        // A clone starts with a fresh read counter.
        RewardSet::new(self.examples.clone())
    }
}

/// Everything one class contributes to an episode: trusted seed
/// positives, a negative pool, the noisy candidate buckets, and the
/// held-out reward set.
#[derive(Debug, Clone)]
pub struct ClassEpisodeData {
    pub class_id: u32,
    pub seed: Vec<Example>,
    pub negatives: Vec<Example>,
    pub candidates: Vec<Bucket>,
    pub reward_set: RewardSet,
}

impl ClassEpisodeData {
    /// Checks the structural invariants: non-empty seed of positives,
    /// both labels in the reward set, and id-disjoint candidates/reward.
    pub fn validate(&self) -> Result<(), String> {
        if self.seed.is_empty() {
            return Err("empty seed set".into());
        }
        if self.seed.iter().any(|e| e.truth() != Some(true)) {
            return Err("seed contains non-positive examples".into());
        }
        let reward = self.reward_set.labeled();
        let pos = reward.iter().filter(|e| e.truth() == Some(true)).count();
        if pos == 0 || pos == reward.len() {
            return Err("reward set must contain both labels".into());
        }
        let mut reward_ids: Vec<u64> = reward.iter().map(|e| e.id()).collect();
        reward_ids.sort_unstable();
        for bucket in &self.candidates {
            for ex in bucket.examples() {
                if reward_ids.binary_search(&ex.id()).is_ok() {
                    return Err(format!("candidate id {} appears in reward set", ex.id()));
                }
            }
        }
        Ok(())
    }
}

/// An `n x rows x cols` tensor of raw image bytes as stored in IDX files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    data: Vec<u8>,
}

impl IdxImages {
    pub fn new(count: usize, rows: usize, cols: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), count * rows * cols);
        IdxImages {
            count,
            rows,
            cols,
            data,
        }
    }

    pub fn image(&self, index: usize) -> &[u8] {
        let px = self.rows * self.cols;
        &self.data[index * px..(index + 1) * px]
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Unit-scaled feature vector (`byte / 255`) for one image.
    pub fn features(&self, index: usize) -> Vec<f64> {
        self.image(index).iter().map(|&b| b as f64 / 255.0).collect()
    }
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(DataError::Truncated {
            needed: end,
            available: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads an IDX image file: big-endian magic `0x00000803`, three
/// big-endian u32 dimension sizes, then row-major unsigned bytes.
pub fn read_idx_images(path: &Path) -> Result<IdxImages, DataError> {
    let bytes = read_file(path)?;
    parse_idx_images(&bytes)
}

/// Parses IDX image bytes already in memory. See [`read_idx_images`].
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages, DataError> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_be_u32(bytes, 4)?;
    let rows = read_be_u32(bytes, 8)?;
    let cols = read_be_u32(bytes, 12)?;
    let payload = (count as u64)
        .checked_mul(rows as u64)
        .and_then(|v| v.checked_mul(cols as u64))
        .filter(|&v| v <= usize::MAX as u64 && v <= (1 << 40))
        .ok_or(DataError::DimensionOverflow { count, rows, cols })? as usize;
    let have = bytes.len() - 16;
    if have < payload {
        return Err(DataError::Truncated {
            needed: payload + 16,
            available: bytes.len(),
        });
    }
    Ok(IdxImages::new(
        count as usize,
        rows as usize,
        cols as usize,
        bytes[16..16 + payload].to_vec(),
    ))
}

/// Reads an IDX label file: magic `0x00000801`, a big-endian count, then
/// one byte per label. Labels must be digits 0..=9.
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let bytes = read_file(path)?;
    parse_idx_labels(&bytes)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let have = bytes.len() - 8;
    if have < count {
        return Err(DataError::Truncated {
            needed: count + 8,
            available: bytes.len(),
        });
    }
    let labels = bytes[8..8 + count].to_vec();
    for (index, &value) in labels.iter().enumerate() {
        if value > 9 {
            return Err(DataError::CorruptLabel { index, value });
        }
    }
    Ok(labels)
}

/// Serializes an image tensor back into IDX bytes, bit-exact with what
/// [`read_idx_images`] accepts.
pub fn write_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.data().len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.count as u32).to_be_bytes());
    out.extend_from_slice(&(images.rows as u32).to_be_bytes());
    out.extend_from_slice(&(images.cols as u32).to_be_bytes());
    out.extend_from_slice(images.data());
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Splits one class's image pool into two disjoint random subsets of
/// `half` examples each, deterministically under `rng_seed`.
pub fn split_class_pool(
    pool: &[Example],
    half: usize,
    rng_seed: u64,
) -> Result<(Vec<Example>, Vec<Example>), DataError> {
    if pool.len() < 2 * half {
        return Err(DataError::InsufficientImages {
            needed: 2 * half,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut indices: Vec<usize> = (0..pool.len()).collect();
    indices.shuffle(&mut rng);
    let first = indices[..half].iter().map(|&i| pool[i].clone()).collect();
    let second = indices[half..2 * half]
        .iter()
        .map(|&i| pool[i].clone())
        .collect();
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dummy_example(id: u64) -> Example {
        Example::new(id, vec![0.1, 0.2, 0.3], Some(true))
    }

    #[test]
    fn idx_images_round_trip() {
        let data: Vec<u8> = (0..2 * 3 * 4).map(|i| (i * 7 % 256) as u8).collect();
        let images = IdxImages::new(2, 3, 4, data);
        let bytes = write_idx_images(&images);
        let back = parse_idx_images(&bytes).unwrap();
        assert_eq!(back, images);
        assert_eq!(write_idx_images(&back), bytes);
    }

    #[test]
    fn idx_labels_round_trip() {
        let labels = vec![0u8, 3, 9, 1, 7];
        let bytes = write_idx_labels(&labels);
        assert_eq!(parse_idx_labels(&bytes).unwrap(), labels);
    }

    #[test]
    fn images_magic_mismatch_is_distinct_error() {
        // A label file passed where images are expected.
        let bytes = write_idx_labels(&[1, 2, 3]);
        match parse_idx_images(&bytes) {
            Err(DataError::BadMagic { expected, found }) => {
                assert_eq!(expected, IDX_IMAGES_MAGIC);
                assert_eq!(found, IDX_LABELS_MAGIC);
            }
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn zero_image_file_is_valid() {
        let images = IdxImages::new(0, 28, 28, vec![]);
        let bytes = write_idx_images(&images);
        let back = parse_idx_images(&bytes).unwrap();
        assert_eq!(back.count, 0);
        assert!(back.data().is_empty());
    }

    #[test]
    fn zero_label_file_is_valid() {
        let bytes = write_idx_labels(&[]);
        assert!(parse_idx_labels(&bytes).unwrap().is_empty());
    }

    #[test]
    fn truncated_images_error() {
        let images = IdxImages::new(2, 3, 4, vec![5; 24]);
        let mut bytes = write_idx_images(&images);
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(
            parse_idx_images(&bytes),
            Err(DataError::Truncated { .. })
        ));
    }

    #[test]
    fn truncated_labels_error() {
        let mut bytes = write_idx_labels(&[1, 2, 3]);
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(
            parse_idx_labels(&bytes),
            Err(DataError::Truncated { .. })
        ));
    }

    #[test]
    fn corrupt_label_error() {
        let mut bytes = write_idx_labels(&[1, 2, 3]);
        let last = bytes.len() - 1;
        bytes[last] = 11;
        assert!(matches!(
            parse_idx_labels(&bytes),
            Err(DataError::CorruptLabel { index: 2, value: 11 })
        ));
    }

    #[test]
    fn dimension_overflow_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        assert!(matches!(
            parse_idx_images(&bytes),
            Err(DataError::DimensionOverflow { .. })
        ));
    }

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let pool: Vec<Example> = (0..1200).map(dummy_example).collect();
        let (a1, b1) = split_class_pool(&pool, 500, 1).unwrap();
        let (a2, b2) = split_class_pool(&pool, 500, 1).unwrap();
        assert_eq!(a1.len(), 500);
        assert_eq!(b1.len(), 500);
        let ids_a: Vec<u64> = a1.iter().map(Example::id).collect();
        let ids_b: Vec<u64> = b1.iter().map(Example::id).collect();
        assert!(ids_a.iter().all(|id| !ids_b.contains(id)));
        assert_eq!(ids_a, a2.iter().map(Example::id).collect::<Vec<_>>());
        assert_eq!(ids_b, b2.iter().map(Example::id).collect::<Vec<_>>());

        let mut union: Vec<u64> = ids_a.into_iter().chain(ids_b).collect();
        union.sort_unstable();
        union.dedup();
        assert_eq!(union.len(), 1000);
    }

    #[test]
    fn split_differs_across_seeds() {
        let pool: Vec<Example> = (0..1000).map(dummy_example).collect();
        let (a1, _) = split_class_pool(&pool, 500, 1).unwrap();
        let (a2, _) = split_class_pool(&pool, 500, 2).unwrap();
        let ids1: Vec<u64> = a1.iter().map(Example::id).collect();
        let ids2: Vec<u64> = a2.iter().map(Example::id).collect();
        assert_ne!(ids1, ids2);
    }

    #[test]
    fn split_insufficient_images() {
        let pool: Vec<Example> = (0..900).map(dummy_example).collect();
        assert!(matches!(
            split_class_pool(&pool, 500, 1),
            Err(DataError::InsufficientImages {
                needed: 1000,
                available: 900
            })
        ));
    }

    #[test]
    fn reward_set_counts_reads() {
        let rs = RewardSet::new(vec![
            Example::new(0, vec![0.0], Some(true)),
            Example::new(1, vec![1.0], Some(false)),
        ]);
        assert_eq!(rs.read_count(), 0);
        assert_eq!(rs.len(), 2); // len is not a labeled read
        assert_eq!(rs.read_count(), 0);
        let _ = rs.labeled();
        let _ = rs.labeled();
        assert_eq!(rs.read_count(), 2);
        // Clones start clean.
        assert_eq!(rs.clone().read_count(), 0);
    }

    proptest! {
        #[test]
        fn idx_round_trip_arbitrary(count in 0usize..5, rows in 1usize..6, cols in 1usize..6,
                                    seed in any::<u64>()) {
            let n = count * rows * cols;
            let data: Vec<u8> = (0..n).map(|i| ((seed as usize).wrapping_mul(31).wrapping_add(i * 17) % 256) as u8).collect();
            let images = IdxImages::new(count, rows, cols, data);
            let bytes = write_idx_images(&images);
            prop_assert_eq!(parse_idx_images(&bytes).unwrap(), images);
        }

        #[test]
        fn split_pool_disjoint_union(n in 1000usize..1100, seed in any::<u64>()) {
            let pool: Vec<Example> = (0..n as u64).map(dummy_example).collect();
            let (a, b) = split_class_pool(&pool, 500, seed).unwrap();
            let mut ids: Vec<u64> = a.iter().chain(b.iter()).map(Example::id).collect();
            prop_assert_eq!(ids.len(), 1000);
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), 1000);
        }
    }
}
