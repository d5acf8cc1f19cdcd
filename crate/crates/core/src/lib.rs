//! Barrier-pair guarded shared control for a planar arm.

pub mod arm;
pub mod certify;
pub mod exec;
pub mod executive;
pub mod intent;
pub mod ldi;
pub mod lmi;
pub mod regions;
pub mod rrt;
pub mod sdp;
pub mod synth;
