//! Joint detection, classification and localization of possibly overlapping
//! acoustic events observed by several small microphone arrays.
//!
//! Every array steers one beamformer at each cell of a floor grid. Each
//! beamformer output is turned into frequency-filtered log filter-bank
//! energies and scored by per-array HMM-GMM event models. Detection picks the
//! best Viterbi segmentation across all channels; classification and
//! localization then fuse the per-array `cell x class` likelihood matrices with
//! a product-of-posteriors MAP rule.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the `*F64`
//! aliases below name the common double-precision instantiations.

pub mod baselines;
pub mod beamform;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod features;
pub mod hmm;
pub mod io;
pub mod joint;
pub mod real;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
pub use real::Real;
pub use scene::{ArrayGeometry, CellGrid, Point, PriorTable, SceneConfig};

pub type EventModelF64 = hmm::EventModel<f64>;
pub type ModelSetF64 = hmm::ModelSet<f64>;
pub type ModelInventoryF64 = hmm::ModelInventory<f64>;
pub type FeatureSequenceF64 = features::FeatureSequence<f64>;
pub type FeatureExtractorF64 = features::FeatureExtractor<f64>;
pub type BeamformerBankF64 = beamform::BeamformerBank<f64>;
pub type RecordingF64 = synth::MultichannelRecording<f64>;
pub type LikelihoodTensorF64 = joint::LikelihoodTensor<f64>;
pub type EventHypothesisF64 = joint::EventHypothesis<f64>;
pub type SystemConfigF64 = eval::SystemConfig<f64>;
pub type SessionDataF64 = eval::SessionData<f64>;
