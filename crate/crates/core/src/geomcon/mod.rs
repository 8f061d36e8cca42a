//! Local frames, manifold fits and the constraint ladder.

pub mod classify;
pub mod frames;
pub mod manifold;

pub use classify::{
    align_to_frame, classify_constraint, extract_pair_constraints, frame_poses, AlignedSamples,
    Classification, ConstraintKind, ConstraintParams, ConstraintTolerances, GeometricConstraint,
    PairConstraints, PairMasks, PoseTarget,
};
pub use frames::{candidate_local_frames, FramePose, LocalFrame};
pub use manifold::{fit_manifold_curve, fit_manifold_surface, CurveFit, CurveModel, SurfaceFit, SurfaceModel};
