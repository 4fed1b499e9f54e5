//! Reconstruction of DNA storage strands from clusters of noisy reads.
//!
//! The pipeline: a synthetic insertion/deletion/substitution channel
//! ([`channel`]), prefix-based pseudo-clustering ([`cluster`]), vote-count
//! embedding of clusters ([`embed`]), a convolution + transformer network
//! with hand-written gradients ([`model`]), its training loop ([`train`])
//! and evaluation against a plurality-vote baseline ([`eval`]).

pub mod channel;
pub mod cluster;
pub mod embed;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod seq;
pub mod train;

pub use channel::{Cluster, Corpus, EccScheme, ErrorModel, Sdg};
pub use cluster::{ClusterStats, Clustering, PrefixIndex};
pub use embed::{EmbedConfig, EmbeddedBatch, EmbeddedCluster};
pub use error::{Error, Result};
pub use eval::{EvalReport, Evaluation};
pub use model::{Checkpoint, ModelConfig, ModelParams};
pub use seq::DnaSequence;
pub use train::{TrainConfig, TrainOutcome};
