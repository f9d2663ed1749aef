//! Learning a data-labeling policy with Q-learning.
//!
//! An agent repeatedly picks buckets of examples out of a noisy candidate
//! pool to grow the positive training set of a binary classifier. During
//! policy training the agent is rewarded by the change in held-out average
//! precision after each pick; the learned policy is then applied, without
//! any held-out labels, to select training data for classes it has never
//! seen.
//!
//! The crate ships:
//!
//! * [`datamodel`] — core example/bucket types, IDX ingestion, pool splits;
//! * [`envgen`] — the noisy-digit selection environment and a fast
//!   Gaussian test environment;
//! * [`digits`] — a deterministic procedural digit corpus in IDX format,
//!   for running the full pipeline without external data;
//! * [`classifier`] — the per-episode MLP classifier and average precision;
//! * [`policy`] — score-histogram states and the Q-network;
//! * [`rl`] — experience replay, the Q-learning loop, and greedy rollouts;
//! * [`baselines`] — seed SVM, label propagation/spreading, TSVM, and
//!   greedy selection variants;
//! * [`eval`] — per-class AP, budget sweeps, recall metrics, and reports;
//! * [`cli`] — configuration, checkpoints, and the command-line surface.

pub mod baselines;
pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod datamodel;
pub mod digits;
pub mod envgen;
pub mod eval;
pub mod policy;
pub mod rl;

pub use classifier::{average_precision, score, train_classifier, MlpParams, TrainConfig};
pub use datamodel::{Bucket, ClassEpisodeData, Example, RewardSet};
pub use envgen::{BucketSpec, EnvConfig};
pub use policy::{EpisodeState, Histogram, QNetParams};
pub use rl::{AgentConfig, PolicyCheckpoint, ReplayBuffer, Transition};
