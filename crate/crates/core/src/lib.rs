//! Online adaptation of a translation model from human corrections.
//!
//! A base model proposes a next-token distribution at every decoding step. Two incremental
//! nearest-neighbor datastores sit beside it:
//!
//! * the token datastore maps decoder context vectors to the tokens a human wrote in that
//!   context and turns retrieval results into a second distribution;
//! * the policy datastore maps features of that retrieval (neighbor distances and the number
//!   of distinct retrieved tokens) to a learned weight for mixing the two distributions.
//!
//! After each corrected sentence both datastores grow; nothing is trained by gradient.

pub mod dist;
pub mod error;
pub mod index;
pub mod metrics;
pub mod model;
pub mod policy_knn;
pub mod session;
pub mod simulate;
pub mod storage;
pub mod synth;
pub mod token_knn;
pub mod vocab;

pub use dist::{argmax_token, interpolate, ContextVector, Distribution};
pub use error::{Error, Result};
pub use index::{Neighbor, NnIndex};
pub use model::{BaseModel, LexiconStubModel, ModelOutput, StubConfig};
pub use policy_knn::{build_features, induce_value, PolicyFeature, PolicyStore};
pub use session::{AdaptReport, PolicyMode, Session, SessionConfig, TokenDiagnostics, Translation};
pub use token_knn::{p_knn, TokenNeighborSet, TokenStore};
pub use vocab::{Sentence, Token, TokenId, Vocabulary, BOS, EOS, UNK};
