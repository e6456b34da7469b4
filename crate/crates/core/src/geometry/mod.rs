//! Camera model, observation containers, neighborhood graphs and geodesics.

mod camera;
mod depth;
mod geodesic;
mod graph;
mod tracks;

pub use camera::{Iac, Intrinsics};
pub use depth::{upgraded_distance, DepthField, Reconstruction};
pub use geodesic::{geodesics, geodesics_masked, GeodesicTable};
pub use graph::{EdgeLengths, NeighborGraph};
pub use tracks::TrackSet;

/// Default neighbors per point.
pub const DEFAULT_K: usize = 8;
