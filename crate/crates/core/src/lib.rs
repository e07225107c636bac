//! Backstepping boundary control of 2x2 linear hyperbolic PDEs with spatially varying
//! coefficients, plus a DeepONet surrogate for the gain kernels.

pub mod analysis;
pub mod coefficients;
pub mod controller;
pub mod dataset;
pub mod deeponet;
pub mod error;
pub mod kernels;
pub mod numerics;
pub mod plant;

pub use coefficients::{gamma_family, sample_random, CoefficientFamily, CoefficientSet};
pub use controller::{consistent_control, control_value, forward_transform, inverse_transform, GainVector};
pub use dataset::{Dataset, Manifest, Sample};
pub use deeponet::{encode_input, Architecture, DeepONet, TrainConfig};
pub use error::{Error, Result};
pub use kernels::{gain_slice, solve_inverse_kernels, solve_kappa_c, solve_kernels, CIntegrand, KernelField, KernelSet};
pub use numerics::{IntervalGrid, TriangularGrid};
pub use plant::{simulate, simulate_target, ControllerSpec, PlantState, SimTrace};
