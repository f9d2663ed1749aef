//! Construction of noisy candidate/reward sets for digit classes, plus a
//! fast synthetic Gaussian environment used by unit tests.
//!
//! A candidate set is a list of buckets. Each bucket is generated from one
//! [`BucketSpec`]: either a geometric transform of the target digit (a
//! valid sub-concept), a mixture of target images with distractor digits,
//! or a different digit entirely. The reward set applies the same clean
//! transform family to held-out images of the class.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{Bucket, ClassEpisodeData, Example, IdxImages, RewardSet};

/// Side length of the square digit images.
pub const IMG_SIDE: usize = 28;

/// Translation offsets, in pixels, that clean transform specs draw from.
pub const TRANSLATE_GRID: [i8; 6] = [-6, -4, -2, 2, 4, 6];
/// Rotation angles, in degrees, that clean transform specs draw from.
pub const ROTATE_GRID: [i16; 6] = [-45, -30, -15, 15, 30, 45];
/// Contamination levels (percent) for mixed-noise buckets.
pub const CONTAMINATION_GRID: [u8; 5] = [10, 20, 30, 40, 50];

const MAX_TRANSLATE: i8 = 6;
const MAX_ROTATE_DEG: i16 = 45;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("transform parameter out of bounds: {0}")]
    TransformOutOfBounds(String),
    #[error("spec {0:?} is not a per-image transform")]
    NotATransform(BucketSpec),
    #[error("empty distractor pool for digit {digit}")]
    EmptyDistractorPool { digit: u8 },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed episode file {path}: {reason}")]
    Format { path: String, reason: String },
}

/// Generation spec for one candidate bucket.
///
/// Geometric kinds (`Identity`, `Translate`, `Rotate`, `TranslateRotate`)
/// are valid sub-concepts of the class; the rest are noise. Parameters are
/// stored on integer grids so specs hash and compare exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BucketSpec {
    Identity,
    Translate { dx: i8, dy: i8 },
    Rotate { angle_deg: i16 },
    TranslateRotate { dx: i8, dy: i8, angle_deg: i16 },
    /// `percent` of the bucket is distractor digits, the rest target.
    MixedNoise { percent: u8 },
    OtherDigit { digit: u8 },
    /// Gaussian sub-concept mode of the synthetic test environment.
    SyntheticClean { mode: u16 },
    SyntheticNoise { mode: u16 },
}

impl BucketSpec {
    /// True iff a bucket generated from this spec consists of valid
    /// positives of the class.
    pub fn is_clean(&self) -> bool {
        matches!(
            self,
            BucketSpec::Identity
                | BucketSpec::Translate { .. }
                | BucketSpec::Rotate { .. }
                | BucketSpec::TranslateRotate { .. }
                | BucketSpec::SyntheticClean { .. }
        )
    }

    /// Contamination fraction in [0,1] for mixed-noise specs, else 0.
    pub fn contamination(&self) -> f64 {
        match self {
            BucketSpec::MixedNoise { percent } => *percent as f64 / 100.0,
            _ => 0.0,
        }
    }
}

/// Counts shaping one class episode. The candidate image pool size is
/// `n_query_subsets * buckets_per_subset * bucket_size`, which must equal
/// the per-class split half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub n_query_subsets: usize,
    pub buckets_per_subset: usize,
    pub bucket_size: usize,
    pub reward_negatives: usize,
    pub seed_size: usize,
    /// K: candidate buckets per episode.
    pub candidate_buckets: usize,
    pub neg_pool_size: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            n_query_subsets: 10,
            buckets_per_subset: 5,
            bucket_size: 10,
            reward_negatives: 1000,
            seed_size: 10,
            candidate_buckets: 100,
            neg_pool_size: 500,
        }
    }
}

impl EnvConfig {
    /// Size of each of the two per-class pool halves.
    pub fn pool_half(&self) -> usize {
        self.n_query_subsets * self.buckets_per_subset * self.bucket_size
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let positive = [
            self.n_query_subsets,
            self.buckets_per_subset,
            self.bucket_size,
            self.reward_negatives,
            self.seed_size,
            self.candidate_buckets,
            self.neg_pool_size,
        ]
        .iter()
        .all(|&c| c > 0);
        if !positive {
            return Err(EnvError::InvalidConfig("all counts must be positive".into()));
        }
        if self.seed_size >= self.pool_half() {
            return Err(EnvError::InvalidConfig(format!(
                "seed size {} must be smaller than the pool half {}",
                self.seed_size,
                self.pool_half()
            )));
        }
        Ok(())
    }
}

/// Per-digit example pools built from an ingested image set.
#[derive(Debug, Clone)]
pub struct DigitPools {
    pools: Vec<Vec<Example>>,
}

impl DigitPools {
    /// Groups ingested images by label. Ids are the global image indices.
    pub fn from_idx(images: &IdxImages, labels: &[u8]) -> Self {
        assert_eq!(images.count, labels.len());
        let mut pools: Vec<Vec<Example>> = vec![Vec::new(); 10];
        for i in 0..images.count {
            let ex = Example::new(i as u64, images.features(i), None);
            pools[labels[i] as usize].push(ex);
        }
        DigitPools { pools }
    }

    pub fn digit(&self, digit: u8) -> &[Example] {
        &self.pools[digit as usize]
    }

    pub fn digits_present(&self) -> Vec<u8> {
        (0..10u8).filter(|&d| !self.digit(d).is_empty()).collect()
    }
}

fn shift_image(src: &[f64], side: usize, dx: i32, dy: i32) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    for y in 0..side as i32 {
        for x in 0..side as i32 {
            let sx = x - dx;
            let sy = y - dy;
            if sx >= 0 && sx < side as i32 && sy >= 0 && sy < side as i32 {
                out[(y * side as i32 + x) as usize] = src[(sy * side as i32 + sx) as usize];
            }
        }
    }
    out
}

fn rotate_image(src: &[f64], side: usize, angle_deg: f64) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    let c = (side as f64 - 1.0) / 2.0;
    let (sin, cos) = (-angle_deg).to_radians().sin_cos();
    for y in 0..side {
        for x in 0..side {
            // Inverse-rotate the output pixel into source coordinates.
            let xr = x as f64 - c;
            let yr = y as f64 - c;
            let sx = cos * xr - sin * yr + c;
            let sy = sin * xr + cos * yr + c;
            let x0 = sx.floor();
            let y0 = sy.floor();
            if x0 < -1.0 || y0 < -1.0 || x0 >= side as f64 || y0 >= side as f64 {
                continue;
            }
            let fx = sx - x0;
            let fy = sy - y0;
            let sample = |ix: f64, iy: f64| -> f64 {
                if ix < 0.0 || iy < 0.0 || ix >= side as f64 || iy >= side as f64 {
                    0.0
                } else {
                    src[iy as usize * side + ix as usize]
                }
            };
            let v = sample(x0, y0) * (1.0 - fx) * (1.0 - fy)
                + sample(x0 + 1.0, y0) * fx * (1.0 - fy)
                + sample(x0, y0 + 1.0) * (1.0 - fx) * fy
                + sample(x0 + 1.0, y0 + 1.0) * fx * fy;
            out[y * side + x] = v;
        }
    }
    out
}

/// Applies a geometric transform spec to one square image. Out-of-frame
/// pixels are zero-filled; rotation resamples bilinearly.
pub fn apply_transform(
    image: &[f64],
    side: usize,
    spec: &BucketSpec,
) -> Result<Vec<f64>, EnvError> {
    let check_translate = |dx: i8, dy: i8| {
        if dx.abs() > MAX_TRANSLATE || dy.abs() > MAX_TRANSLATE {
            Err(EnvError::TransformOutOfBounds(format!(
                "translation ({dx},{dy}) exceeds +/-{MAX_TRANSLATE} pixels"
            )))
        } else {
            Ok(())
        }
    };
    let check_rotate = |angle: i16| {
        if angle.abs() > MAX_ROTATE_DEG {
            Err(EnvError::TransformOutOfBounds(format!(
                "rotation {angle} deg exceeds +/-{MAX_ROTATE_DEG} deg"
            )))
        } else {
            Ok(())
        }
    };
    match *spec {
        BucketSpec::Identity => Ok(image.to_vec()),
        BucketSpec::Translate { dx, dy } => {
            check_translate(dx, dy)?;
            Ok(shift_image(image, side, dx as i32, dy as i32))
        }
        BucketSpec::Rotate { angle_deg } => {
            check_rotate(angle_deg)?;
            Ok(rotate_image(image, side, angle_deg as f64))
        }
        BucketSpec::TranslateRotate { dx, dy, angle_deg } => {
            check_translate(dx, dy)?;
            check_rotate(angle_deg)?;
            let rotated = rotate_image(image, side, angle_deg as f64);
            Ok(shift_image(&rotated, side, dx as i32, dy as i32))
        }
        other => Err(EnvError::NotATransform(other)),
    }
}

/// Rounds half-down to the nearest integer: 2.5 -> 2, 2.6 -> 3.
fn round_half_down(x: f64) -> usize {
    (x - 0.5).ceil().max(0.0) as usize
}

fn sample_clean_spec(rng: &mut ChaCha8Rng) -> BucketSpec {
    let pick_t = |rng: &mut ChaCha8Rng| *TRANSLATE_GRID.choose(rng).unwrap();
    let pick_r = |rng: &mut ChaCha8Rng| *ROTATE_GRID.choose(rng).unwrap();
    match rng.random_range(0..4u8) {
        0 => BucketSpec::Identity,
        1 => BucketSpec::Translate {
            dx: pick_t(rng),
            dy: pick_t(rng),
        },
        2 => BucketSpec::Rotate {
            angle_deg: pick_r(rng),
        },
        _ => BucketSpec::TranslateRotate {
            dx: pick_t(rng),
            dy: pick_t(rng),
            angle_deg: pick_r(rng),
        },
    }
}

fn sample_distractor_digit(rng: &mut ChaCha8Rng, target: u8, pools: &DigitPools) -> Option<u8> {
    let options: Vec<u8> = pools
        .digits_present()
        .into_iter()
        .filter(|&d| d != target)
        .collect();
    options.choose(rng).copied()
}

struct IdAlloc(u64);

impl IdAlloc {
    fn next(&mut self) -> u64 {
        let id = self.0;
        self.0 += 1;
        id
    }
}

/// Builds one class episode: K candidate buckets with controlled noise, a
/// trusted seed, a negative pool, and a transformed held-out reward set.
/// Byte-identical output for identical inputs and seed.
pub fn make_noisy_mnist_episode(
    digit: u8,
    pools: &DigitPools,
    config: &EnvConfig,
    rng_seed: u64,
) -> Result<ClassEpisodeData, EnvError> {
    config.validate()?;
    let half = config.pool_half();
    let class_pool = pools.digit(digit);
    let (s_c, s_r) = crate::datamodel::split_class_pool(class_pool, half, rng_seed)
        .map_err(|e| EnvError::InvalidConfig(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut ids = IdAlloc(0);

    // Seed positives: untouched class images, reserved out of the
    // candidate image pool.
    let seed: Vec<Example> = s_c[..config.seed_size]
        .iter()
        .map(|e| Example::new(ids.next(), e.features().to_vec(), Some(true)))
        .collect();
    let cand_pool = &s_c[config.seed_size..];

    let mut sample_target_image = |rng: &mut ChaCha8Rng| -> &Example {
        &cand_pool[rng.random_range(0..cand_pool.len())]
    };

    let mut candidates = Vec::with_capacity(config.candidate_buckets);
    for _ in 0..config.candidate_buckets {
        let roll: f64 = rng.random();
        let spec = if roll < 0.60 {
            sample_clean_spec(&mut rng)
        } else if roll < 0.85 {
            BucketSpec::MixedNoise {
                percent: *CONTAMINATION_GRID.choose(&mut rng).unwrap(),
            }
        } else {
            let d = sample_distractor_digit(&mut rng, digit, pools)
                .ok_or(EnvError::EmptyDistractorPool { digit })?;
            BucketSpec::OtherDigit { digit: d }
        };
        let mut examples = Vec::with_capacity(config.bucket_size);
        match spec {
            BucketSpec::MixedNoise { percent } => {
                let frac_target = 1.0 - percent as f64 / 100.0;
                let n_target = round_half_down(config.bucket_size as f64 * frac_target);
                for _ in 0..n_target {
                    let src = sample_target_image(&mut rng);
                    examples.push(Example::new(
                        ids.next(),
                        src.features().to_vec(),
                        Some(true),
                    ));
                }
                for _ in n_target..config.bucket_size {
                    let d = sample_distractor_digit(&mut rng, digit, pools)
                        .ok_or(EnvError::EmptyDistractorPool { digit })?;
                    let pool = pools.digit(d);
                    let src = &pool[rng.random_range(0..pool.len())];
                    examples.push(Example::new(
                        ids.next(),
                        src.features().to_vec(),
                        Some(false),
                    ));
                }
            }
            BucketSpec::OtherDigit { digit: d } => {
                let pool = pools.digit(d);
                for _ in 0..config.bucket_size {
                    let src = &pool[rng.random_range(0..pool.len())];
                    examples.push(Example::new(
                        ids.next(),
                        src.features().to_vec(),
                        Some(false),
                    ));
                }
            }
            clean => {
                for _ in 0..config.bucket_size {
                    let src = sample_target_image(&mut rng);
                    let feats = apply_transform(src.features(), IMG_SIDE, &clean)?;
                    examples.push(Example::new(ids.next(), feats, Some(true)));
                }
            }
        }
        candidates.push(Bucket::new(spec, examples));
    }

    // Negative pool: random images of other digits.
    let mut negatives = Vec::with_capacity(config.neg_pool_size);
    for _ in 0..config.neg_pool_size {
        let d = sample_distractor_digit(&mut rng, digit, pools)
            .ok_or(EnvError::EmptyDistractorPool { digit })?;
        let pool = pools.digit(d);
        let src = &pool[rng.random_range(0..pool.len())];
        negatives.push(Example::new(ids.next(), src.features().to_vec(), Some(false)));
    }

    // Reward set: every held-out image under a fresh clean transform,
    // plus negatives from other digits.
    let mut reward = Vec::with_capacity(s_r.len() + config.reward_negatives);
    for src in &s_r {
        let spec = sample_clean_spec(&mut rng);
        let feats = apply_transform(src.features(), IMG_SIDE, &spec)?;
        reward.push(Example::new(ids.next(), feats, Some(true)));
    }
    for _ in 0..config.reward_negatives {
        let d = sample_distractor_digit(&mut rng, digit, pools)
            .ok_or(EnvError::EmptyDistractorPool { digit })?;
        let pool = pools.digit(d);
        let src = &pool[rng.random_range(0..pool.len())];
        reward.push(Example::new(ids.next(), src.features().to_vec(), Some(false)));
    }

    let episode = ClassEpisodeData {
        class_id: digit as u32,
        seed,
        negatives,
        candidates,
        reward_set: RewardSet::new(reward),
    };
    debug_assert_eq!(episode.validate(), Ok(()));
    Ok(episode)
}

/// Parameters of the synthetic Gaussian environment.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticConfig {
    pub n_clean_modes: usize,
    pub n_noise_modes: usize,
    pub dim: usize,
    pub separation: f64,
    pub buckets_per_mode: usize,
    pub bucket_size: usize,
    pub seed_size: usize,
    pub neg_pool_size: usize,
    pub reward_pos_per_mode: usize,
    pub reward_neg: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_clean_modes: 2,
            n_noise_modes: 3,
            dim: 16,
            separation: 12.0,
            buckets_per_mode: 5,
            bucket_size: 10,
            seed_size: 10,
            neg_pool_size: 100,
            reward_pos_per_mode: 60,
            reward_neg: 240,
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream simple.
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn gaussian_point(rng: &mut ChaCha8Rng, center: &[f64], std: f64) -> Vec<f64> {
    center
        .iter()
        .map(|&c| c + std * standard_normal(rng))
        .collect()
}

/// Fast test double for the digit environment: clean buckets come from
/// Gaussian sub-concept modes near the class center, noise buckets from
/// distractor centers `separation` away. Reward examples are labeled by
/// their generating mode.
pub fn make_synthetic_episode(cfg: &SyntheticConfig, rng_seed: u64) -> ClassEpisodeData {
    assert!(cfg.dim >= 2, "dim must be at least 2");
    assert!(cfg.separation > 0.0, "separation must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut ids = IdAlloc(0);

    let center: Vec<f64> = (0..cfg.dim).map(|_| standard_normal(&mut rng)).collect();
    let clean_centers: Vec<Vec<f64>> = (0..cfg.n_clean_modes)
        .map(|_| {
            let dir = unit_vector(&mut rng, cfg.dim);
            center
                .iter()
                .zip(&dir)
                .map(|(&c, &d)| c + 2.0 * d)
                .collect()
        })
        .collect();
    let noise_centers: Vec<Vec<f64>> = (0..cfg.n_noise_modes)
        .map(|_| {
            let dir = unit_vector(&mut rng, cfg.dim);
            center
                .iter()
                .zip(&dir)
                .map(|(&c, &d)| c + cfg.separation * d)
                .collect()
        })
        .collect();

    let seed: Vec<Example> = (0..cfg.seed_size)
        .map(|_| Example::new(ids.next(), gaussian_point(&mut rng, &center, 1.0), Some(true)))
        .collect();

    let mut candidates = Vec::new();
    for (m, c) in clean_centers.iter().enumerate() {
        for _ in 0..cfg.buckets_per_mode {
            let examples = (0..cfg.bucket_size)
                .map(|_| Example::new(ids.next(), gaussian_point(&mut rng, c, 1.0), Some(true)))
                .collect();
            candidates.push(Bucket::new(
                BucketSpec::SyntheticClean { mode: m as u16 },
                examples,
            ));
        }
    }
    for (m, c) in noise_centers.iter().enumerate() {
        for _ in 0..cfg.buckets_per_mode {
            let examples = (0..cfg.bucket_size)
                .map(|_| Example::new(ids.next(), gaussian_point(&mut rng, c, 1.0), Some(false)))
                .collect();
            candidates.push(Bucket::new(
                BucketSpec::SyntheticNoise { mode: m as u16 },
                examples,
            ));
        }
    }
    // Interleave deterministically so clean buckets are not all in front.
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.shuffle(&mut rng);
    let candidates: Vec<Bucket> = order.into_iter().map(|i| candidates[i].clone()).collect();

    let negatives: Vec<Example> = (0..cfg.neg_pool_size)
        .map(|_| {
            let c = &noise_centers[rng.random_range(0..noise_centers.len().max(1))
                % noise_centers.len().max(1)];
            Example::new(ids.next(), gaussian_point(&mut rng, c, 1.0), Some(false))
        })
        .collect();

    let mut reward = Vec::new();
    for c in &clean_centers {
        for _ in 0..cfg.reward_pos_per_mode {
            reward.push(Example::new(
                ids.next(),
                gaussian_point(&mut rng, c, 1.0),
                Some(true),
            ));
        }
    }
    for _ in 0..cfg.reward_neg {
        let c = &noise_centers[rng.random_range(0..noise_centers.len())];
        reward.push(Example::new(
            ids.next(),
            gaussian_point(&mut rng, c, 1.0),
            Some(false),
        ));
    }

    ClassEpisodeData {
        class_id: 0,
        seed,
        negatives,
        candidates,
        reward_set: RewardSet::new(reward),
    }
}

// ---------------------------------------------------------------------------
// Episode serialization: versioned JSON manifest + raw feature blob.
// ---------------------------------------------------------------------------

pub const MANIFEST_VERSION: u32 = 1;
const BLOB_MAGIC: &[u8; 4] = b"QLEB";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRecord {
    pub spec: BucketSpec,
    pub example_ids: Vec<u64>,
    pub truth: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub id: u64,
    pub positive: bool,
}

/// Everything needed to reconstruct an episode except the raw features,
/// which live in the companion blob file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeManifest {
    pub version: u32,
    pub class_id: u32,
    pub rng_seed: u64,
    pub seed_ids: Vec<u64>,
    pub negative_ids: Vec<u64>,
    pub buckets: Vec<BucketRecord>,
    pub reward: Vec<RewardRecord>,
}

fn episode_examples(episode: &ClassEpisodeData) -> Vec<&Example> {
    let mut all: Vec<&Example> = Vec::new();
    all.extend(episode.seed.iter());
    all.extend(episode.negatives.iter());
    for b in &episode.candidates {
        all.extend(b.examples().iter());
    }
    all.extend(episode.reward_set.labeled().iter());
    all
}

/// Writes `manifest.json` + `features.blob` style files for one episode.
/// The byte output is a pure function of the episode and `rng_seed`.
pub fn save_episode(
    episode: &ClassEpisodeData,
    rng_seed: u64,
    manifest_path: &Path,
    blob_path: &Path,
) -> Result<(), EnvError> {
    let manifest = EpisodeManifest {
        version: MANIFEST_VERSION,
        class_id: episode.class_id,
        rng_seed,
        seed_ids: episode.seed.iter().map(Example::id).collect(),
        negative_ids: episode.negatives.iter().map(Example::id).collect(),
        buckets: episode
            .candidates
            .iter()
            .map(|b| BucketRecord {
                spec: *b.spec(),
                example_ids: b.examples().iter().map(Example::id).collect(),
                truth: b
                    .examples()
                    .iter()
                    .map(|e| e.truth().unwrap_or(b.is_clean()))
                    .collect(),
            })
            .collect(),
        reward: episode
            .reward_set
            .labeled()
            .iter()
            .map(|e| RewardRecord {
                id: e.id(),
                positive: e.truth() == Some(true),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(manifest_path, json.as_bytes())?;

    let examples = episode_examples(episode);
    let dim = examples.first().map(|e| e.dim()).unwrap_or(0);
    let mut blob = Vec::with_capacity(24 + examples.len() * (8 + dim * 8));
    blob.extend_from_slice(BLOB_MAGIC);
    blob.extend_from_slice(&MANIFEST_VERSION.to_le_bytes());
    blob.extend_from_slice(&(examples.len() as u64).to_le_bytes());
    blob.extend_from_slice(&(dim as u64).to_le_bytes());
    for ex in &examples {
        blob.extend_from_slice(&ex.id().to_le_bytes());
        for v in ex.features() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_file(blob_path, &blob)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), EnvError> {
    let io_err = |source| EnvError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(bytes).map_err(io_err)
}

/// Reads the manifest + blob pair back into an episode.
pub fn load_episode(manifest_path: &Path, blob_path: &Path) -> Result<ClassEpisodeData, EnvError> {
    let io_err = |path: &Path| {
        let p = path.display().to_string();
        move |source| EnvError::Io { path: p.clone(), source }
    };
    let fmt_err = |path: &Path, reason: String| EnvError::Format {
        path: path.display().to_string(),
        reason,
    };

    let json = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: EpisodeManifest =
        serde_json::from_str(&json).map_err(|e| fmt_err(manifest_path, e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(fmt_err(
            manifest_path,
            format!("unsupported version {}", manifest.version),
        ));
    }

    let blob = fs::read(blob_path).map_err(io_err(blob_path))?;
    if blob.len() < 24 || &blob[..4] != BLOB_MAGIC {
        return Err(fmt_err(blob_path, "bad blob header".into()));
    }
    let n = u64::from_le_bytes(blob[8..16].try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(blob[16..24].try_into().unwrap()) as usize;
    let rec = 8 + dim * 8;
    if blob.len() != 24 + n * rec {
        return Err(fmt_err(blob_path, "blob length mismatch".into()));
    }
    let mut features: std::collections::HashMap<u64, Vec<f64>> =
        std::collections::HashMap::with_capacity(n);
    for i in 0..n {
        let off = 24 + i * rec;
        let id = u64::from_le_bytes(blob[off..off + 8].try_into().unwrap());
        let feats: Vec<f64> = (0..dim)
            .map(|j| {
                let o = off + 8 + j * 8;
                f64::from_le_bytes(blob[o..o + 8].try_into().unwrap())
            })
            .collect();
        features.insert(id, feats);
    }
    let take = |id: u64, truth: Option<bool>| -> Result<Example, EnvError> {
        features
            .get(&id)
            .map(|f| Example::new(id, f.clone(), truth))
            .ok_or_else(|| fmt_err(blob_path, format!("missing features for id {id}")))
    };

    let seed = manifest
        .seed_ids
        .iter()
        .map(|&id| take(id, Some(true)))
        .collect::<Result<Vec<_>, _>>()?;
    let negatives = manifest
        .negative_ids
        .iter()
        .map(|&id| take(id, Some(false)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut candidates = Vec::with_capacity(manifest.buckets.len());
    for b in &manifest.buckets {
        if b.example_ids.len() != b.truth.len() {
            return Err(fmt_err(manifest_path, "bucket truth length mismatch".into()));
        }
        let examples = b
            .example_ids
            .iter()
            .zip(&b.truth)
            .map(|(&id, &t)| take(id, Some(t)))
            .collect::<Result<Vec<_>, _>>()?;
        candidates.push(Bucket::new(b.spec, examples));
    }
    let reward = manifest
        .reward
        .iter()
        .map(|r| take(r.id, Some(r.positive)))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(ClassEpisodeData {
        class_id: manifest.class_id,
        seed,
        negatives,
        candidates,
        reward_set: RewardSet::new(reward),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob_image() -> Vec<f64> {
        // Smooth radial blob; bilinear resampling error is small on it.
        let c = (IMG_SIDE as f64 - 1.0) / 2.0;
        let mut img = vec![0.0; IMG_SIDE * IMG_SIDE];
        for y in 0..IMG_SIDE {
            for x in 0..IMG_SIDE {
                let d2 = ((x as f64 - c).powi(2) + (y as f64 - c - 3.0).powi(2)) / 18.0;
                img[y * IMG_SIDE + x] = (-d2).exp();
            }
        }
        img
    }

    #[test]
    fn identity_translate_is_identity() {
        let img = blob_image();
        let spec = BucketSpec::Translate { dx: 0, dy: 0 };
        assert_eq!(apply_transform(&img, IMG_SIDE, &spec).unwrap(), img);
    }

    #[test]
    fn translation_shifts_column_sums() {
        let img = blob_image();
        let out = apply_transform(&img, IMG_SIDE, &BucketSpec::Translate { dx: 3, dy: 0 }).unwrap();
        let col_sum = |im: &[f64], x: usize| -> f64 {
            (0..IMG_SIDE).map(|y| im[y * IMG_SIDE + x]).sum()
        };
        for x in 3..IMG_SIDE {
            let a = col_sum(&img, x - 3);
            let b = col_sum(&out, x);
            assert!((a - b).abs() < 1e-12, "column {x}: {a} vs {b}");
        }
    }

    #[test]
    fn rotation_round_trip_small_error() {
        let img = blob_image();
        let there = apply_transform(&img, IMG_SIDE, &BucketSpec::Rotate { angle_deg: 30 }).unwrap();
        let back = apply_transform(&there, IMG_SIDE, &BucketSpec::Rotate { angle_deg: -30 }).unwrap();
        // Interior disk only: the frame boundary loses mass by design.
        let c = (IMG_SIDE as f64 - 1.0) / 2.0;
        let mut total = 0.0;
        let mut count = 0;
        for y in 0..IMG_SIDE {
            for x in 0..IMG_SIDE {
                if (x as f64 - c).powi(2) + (y as f64 - c).powi(2) <= 81.0 {
                    total += (img[y * IMG_SIDE + x] - back[y * IMG_SIDE + x]).abs();
                    count += 1;
                }
            }
        }
        let mean = total / count as f64;
        assert!(mean < 0.05, "mean abs diff {mean}");
    }

    #[test]
    fn transform_bounds_checked() {
        let img = blob_image();
        assert!(matches!(
            apply_transform(&img, IMG_SIDE, &BucketSpec::Translate { dx: 7, dy: 0 }),
            Err(EnvError::TransformOutOfBounds(_))
        ));
        assert!(matches!(
            apply_transform(&img, IMG_SIDE, &BucketSpec::Rotate { angle_deg: 46 }),
            Err(EnvError::TransformOutOfBounds(_))
        ));
        assert!(matches!(
            apply_transform(&img, IMG_SIDE, &BucketSpec::MixedNoise { percent: 20 }),
            Err(EnvError::NotATransform(_))
        ));
    }

    #[test]
    fn clean_spec_classification_matches_kind() {
        assert!(BucketSpec::Identity.is_clean());
        assert!(BucketSpec::Translate { dx: 2, dy: -4 }.is_clean());
        assert!(BucketSpec::Rotate { angle_deg: 15 }.is_clean());
        assert!(BucketSpec::TranslateRotate { dx: 2, dy: 2, angle_deg: -15 }.is_clean());
        assert!(!BucketSpec::MixedNoise { percent: 10 }.is_clean());
        assert!(!BucketSpec::OtherDigit { digit: 3 }.is_clean());
    }

    #[test]
    fn round_half_down_behavior() {
        assert_eq!(round_half_down(2.5), 2);
        assert_eq!(round_half_down(2.51), 3);
        assert_eq!(round_half_down(9.0), 9);
        assert_eq!(round_half_down(0.0), 0);
        assert_eq!(round_half_down(0.4), 0);
    }

    #[test]
    fn synthetic_same_seed_identical() {
        let cfg = SyntheticConfig::default();
        let a = make_synthetic_episode(&cfg, 7);
        let b = make_synthetic_episode(&cfg, 7);
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.candidates, b.candidates);
        assert_eq!(a.reward_set.labeled(), b.reward_set.labeled());
    }

    #[test]
    fn synthetic_no_noise_modes_all_clean() {
        let cfg = SyntheticConfig {
            n_noise_modes: 0,
            neg_pool_size: 0,
            reward_neg: 0,
            ..SyntheticConfig::default()
        };
        let ep = make_synthetic_episode(&cfg, 3);
        assert!(ep.candidates.iter().all(|b| b.is_clean()));
    }

    #[test]
    fn synthetic_bucket_shape() {
        let cfg = SyntheticConfig::default();
        let ep = make_synthetic_episode(&cfg, 11);
        assert_eq!(
            ep.candidates.len(),
            (cfg.n_clean_modes + cfg.n_noise_modes) * cfg.buckets_per_mode
        );
        assert!(ep.candidates.iter().all(|b| b.len() == cfg.bucket_size));
        assert_eq!(ep.validate(), Ok(()));
    }
}
