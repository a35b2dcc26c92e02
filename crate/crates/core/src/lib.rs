//! Expert finding for community question answering: a question × topic ×
//! vote × answerer tensor, factorized with a tree-guided penalty on the
//! question factor and coupled to subsite and topic membership matrices.

mod error;
mod linalg;

pub mod als;
pub mod coupled;
pub mod eval;
pub mod ingest;
pub mod io;
pub mod tensor;
pub mod tree;

pub use als::{cp_als, fit_metric, tensor_objective, AlsConfig, CpModel, FitWarning};
pub use coupled::{
    fit_joint, joint_objective, JointConfig, JointLambdas, JointModel, MembershipMatrix,
};
pub use error::{Error, Result};
pub use eval::{evaluate, rank_experts, EvalReport, RankedList};
pub use tensor::{FactorMatrix, SparseTensor4};
pub use tree::{HierarchyTree, TreeBuilder, TreePenalty};
