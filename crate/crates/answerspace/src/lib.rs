//! Answer prediction in a semantic answer space.
//!
//! A visual-question-answering head with two output branches: a
//! classifier that scores a fixed set of candidate answers, and a
//! regression branch that projects the fused question/image vector into a
//! vector space in which every candidate answer has a representation (a
//! row of the answer matrix). The two branches are trained jointly with a
//! convex combination of a binary cross-entropy loss and a margin hinge
//! loss on distances, and predictions mix both branches. Replacing the
//! answer matrix at test time yields predictions over answers never seen
//! during training.
//!
//! The crate also ships a desk-scale trainable model around the head, a
//! synthetic compositional benchmark generator, and an evaluation metric
//! suite (accuracy, validity, plausibility, distribution, consistency).
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! `Real*` aliases at the crate root pin the `f64` instantiation used by
//! the file formats and the CLI.

pub mod embedding;
pub mod gradcheck;
pub mod head;
pub mod io;
pub mod layers;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod synth;

pub use scalar::Scalar;

/// Scalar type used by the file formats and the CLI.
pub type Real = f64;
pub type RealMatrix = linalg::Matrix<Real>;
pub type RealEmbeddingTable = embedding::EmbeddingTable<Real>;
pub type RealAnswerMatrix = embedding::AnswerMatrix<Real>;
pub type RealHeadParameters = head::HeadParameters<Real>;
pub type RealModelParameters = model::ModelParameters<Real>;
