//! Low-temperature Gibbs states of p-SOS and finite-spin models on Cayley tree
//! balls around sparse ground states.
//!
//! The numerical core is generic over the scalar type; the aliases at the
//! bottom fix it to `f64`.
pub mod contour;
pub mod error;
pub mod exact;
pub mod graph;
pub mod ground;
pub mod mc;
pub mod model;
pub mod polymer;
pub mod scalar;
pub mod tree;

pub use contour::{extract_contours, verify_excess_bound, CheckKind, LabelSpace, LabelledContour, VerifyOptions};
pub use error::{Error, Result};
pub use exact::{MarginalTable, Method, TreeRecursion, TruncationWindow};
pub use ground::GroundState;
pub use model::{BoundaryMode, Interaction, ModelSpec, Perturbation, PerturbationKind, SitePotential, Spin, SpinConfig};
pub use polymer::bz::BzParams;
pub use polymer::cluster::PolymerSystem;
pub use scalar::Real;
pub use tree::TreeBall;

pub type Model = ModelSpec<f64>;
pub type InteractionF64 = Interaction<f64>;
pub type Potential = SitePotential<f64>;
pub type Recursion<'a> = TreeRecursion<'a, f64>;
pub type Table = MarginalTable<f64>;
pub type Report = contour::VerificationReport<f64>;
pub type StabilityReport = ground::StabilityReport<f64>;
pub type Polymers = PolymerSystem<f64>;
