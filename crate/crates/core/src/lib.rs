//! Zero-shot harmful meme detection.
//!
//! For each target meme the pipeline retrieves similar reference memes by
//! fused image/text embedding, derives insights from them in two opposite
//! orders, lets one debater argue from each insight set, and calls a judge
//! only when the debaters disagree. Ablation modes switch individual
//! stages off; see [`pipeline::Mode`].

pub mod backend;
pub mod config;
pub mod debate;
pub mod eval;
pub mod insight;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod retrieval;
pub mod runner;

pub use backend::{AgentRole, BackendConfig, BackendError, CallRecord, ChatBackend, ChatMessage, LmmClient};
pub use config::RunConfig;
pub use eval::{accuracy, macro_f1, ConfusionCounts, ErrorPolicy, MetricsSummary};
pub use model::{merge_label, BinaryLabel, DatasetManifest, Meme, RawLabel, Split};
pub use pipeline::{infer_sample, Mode, PipelineContext, SampleTranscript};
pub use retrieval::{brute_force_topk, cosine_similarity, fuse_embedding, retrieve_similar, FusionWeights};
