//! Learning sparse, interpretable prediction models from clinical notes.
//!
//! A language model extracts keyphrases and proposes yes/no concept
//! questions; a greedy search keeps the concepts whose lasso logistic model
//! scores best on held-out notes.

pub mod config;
pub mod corpus_io;
pub mod error;
pub mod glm;
pub mod keyphrase;
pub mod llm;
pub mod metrics;
pub mod model;
pub mod rounds;
pub mod search;
pub mod synth;

pub use config::{PromptSet, RoundConfig};
pub use error::{CpmError, Result};
pub use llm::{BackendSpec, ChatBackend, Gateway, ResponseCache};
pub use model::{AnnotationMatrix, Concept, ConceptOrigin, Corpus, DataSplit, FittedCPM, LabeledNote, Note, RunRecord, SignPrior};
pub use search::{evaluate_fixed_concepts, run_round, run_seed, RunMeta};
