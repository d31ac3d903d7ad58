//! Koopman-operator generalization bounds for invertible and injective
//! multi-task networks, with a Monte-Carlo Rademacher complexity estimator.

pub mod bounds;
pub mod error;
pub mod kernels;
pub mod matana;
pub mod network;
pub mod rademacher;

pub use bounds::{
    baseline_bounds, combined_minimum, compute_variant, corollary_bound, hashimoto_alt_bound, ratio_sup, ratio_sup_restricted,
    remark_brownian_bound, theorem_inj_bound, theorem_inv_bound, BoundReport, BoundVariant, LayerFactor,
};
pub use error::{Error, Result};
pub use kernels::{FinalMapSpec, FinalMapTerm, MultiTaskKernelConfig, OutputMatrix, ScalarKernelSpec, TaskKernel};
pub use matana::{Matrix, WeightClassKind, WeightClassSpec};
pub use network::{generate_network, ActivationSpec, GeneratorConfig, LayerSpec, NetworkSpec, WeightRecipe};
pub use rademacher::{
    brute_force_oracle, estimate_sup, estimate_sup_on_grid, fixed_function_rademacher, OracleResult,
    RademacherConfig, RademacherEstimate,
};
