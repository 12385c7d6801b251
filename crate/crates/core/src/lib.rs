//! Local next-best-view planning for plant phenotyping: a simulated depth and
//! semantic camera, a probabilistic semantic voxel grid, a differentiable
//! semantic information gain, and the planners and metrics built on them.

pub mod camera;
pub mod detector;
pub mod geometry;
pub mod metrics;
pub mod planners;
pub mod scene;
pub mod seeds;
pub mod semantic_grid;
pub mod tracker;
pub mod utility;

pub use geometry::{Aabb, CameraPose, Vec3, Viewpoint, Workspace};
pub use planners::{PlannerConfig, PlannerKind};
pub use semantic_grid::SemanticGrid;
pub use utility::{evaluate_gain, GainEvaluation, RaySpec};
