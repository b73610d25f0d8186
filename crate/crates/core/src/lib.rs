//! Iterative self-training for CTC line recognizers: prefix-search decoding
//! with character language model fusion, line confidence measures, ranked
//! selection of machine-annotated lines, masking augmentation and evaluation.

pub mod augment;
pub mod confidence;
pub mod ctc;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod frames;
pub mod lm;
pub mod logmath;
pub mod par;
pub mod pipeline;
pub mod seed;
pub mod simulator;

pub use confidence::{ConfidenceMeasure, MeasureKind};
pub use decoder::{prefix_search_decode, DecodeParams, Hypothesis, PrefixDecoder};
pub use error::{Error, Result};
pub use frames::{Alphabet, CorpusManifest, FrameMatrix, LineRecord, Origin};
pub use lm::{CharLm, NGramLm, Stage};
pub use par::Execution;
pub use pipeline::{run_iteration, PipelineConfig};
