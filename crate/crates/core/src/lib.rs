//! Multi-class positive-unlabeled learning for distantly supervised tagging.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the bottom fix it to `f64`.

// `!(x > 0)` style checks are there to reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod pu;
pub mod risk;
pub mod scalar;
pub mod seeds;
pub mod synth;
pub mod tagging;
pub mod train;
pub mod verify;

pub use corpus::{Sentence, TaggedCorpus};
pub use error::{Error, Result};
pub use eval::EvalResult;
pub use model::{Architecture, SgdConfig, SoftmaxModel};
pub use pu::{ClassPriors, LabelSpace, OneHotLabel, PuDataset};
pub use risk::{Branch, CmpuConfig, EstimatorKind, GradientMode, RiskReport};
pub use scalar::Scalar;
pub use tagging::{Span, Tag};
pub use train::{TraceRow, TrainOptions, Training};

pub type Priors = ClassPriors<f64>;
pub type Dataset = PuDataset<f64>;
pub type Model = SoftmaxModel<f64>;
pub type Report = RiskReport<f64>;
