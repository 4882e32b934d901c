//! Text embeddings: the built-in hashed n-gram baseline, precomputed
//! embedding files, and a remote embedding service.

mod baseline;
mod remote;
mod store;
mod vector;

pub use baseline::{char_ngrams, normalize_text, BaselineVectorizer, BaselineVectorizerConfig};
pub use remote::{RemoteConfig, RemoteEmbedder, ENDPOINT_ENV};
pub use store::{EmbeddingStore, Namespace, Provenance, MAGIC, VERSION};
pub use vector::{dense_dot, SparseVector, Vector};
