//! Per-frame scene-graphs: object and relation types, the rule-based
//! builder, bird's-eye projection and JSON-lines I/O.

mod builder;
mod homography;
mod io;
mod rules;
mod types;

pub use builder::{build_scene_graph, clip_to_graph_sequence, Edge, GraphNode, SceneGraph, ROOT_NODE, STATIC_NODES};
pub use homography::{estimate_homography, project_to_birdseye, Homography};
pub use io::{
    detections_to_clips, read_clips, read_detections, read_graph_records, read_homography,
    write_clips, write_graph_records, DetectionBox, DetectionRecord, GraphRecord,
};
pub use rules::{
    assign_lanes, bearing_sector, classify_direction, classify_distance, GraphConfig,
    DIRECTIONAL_RANGE_FT,
};
pub use types::{
    ClipRecord, Frame, Lane, LaneSet, NodeKind, ObjectKind, ObjectState, RelationType, RiskLabel,
};
