use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::rules::{assign_lanes, bearing_sector, classify_distance, GraphConfig, DIRECTIONAL_RANGE_FT};
use super::types::{validate_frame, ClipRecord, Lane, NodeKind, ObjectKind, ObjectState, RelationType};

/// Index of the root road node; lane nodes occupy `0..3`.
pub const ROOT_NODE: usize = 3;
/// Number of static nodes preceding the object nodes.
pub const STATIC_NODES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub relation: RelationType,
}

impl Edge {
    pub fn new(src: usize, dst: usize, relation: RelationType) -> Self {
        Self { src, dst, relation }
    }
}

/// Directed multigraph of one frame. Node order is canonical: the three
/// lanes, the root road, then objects sorted by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<Edge>,
}

impl SceneGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn ego_index(&self) -> Option<usize> {
        self.nodes.iter().position(|n| n.kind == NodeKind::EgoCar)
    }

    pub fn edges_of(&self, relation: RelationType) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.relation == relation)
    }

    pub fn has_edge(&self, src: usize, dst: usize, relation: RelationType) -> bool {
        self.edges.contains(&Edge::new(src, dst, relation))
    }

    /// Checks index ranges and the structural invariants of built graphs.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if let Some(e) = self.edges.iter().find(|e| e.src >= n || e.dst >= n) {
            return Err(Error::Input(format!(
                "edge {}->{} out of range for {n} nodes",
                e.src, e.dst
            )));
        }
        let statics = [
            NodeKind::LeftLane,
            NodeKind::MiddleLane,
            NodeKind::RightLane,
            NodeKind::RootRoad,
        ];
        if n < STATIC_NODES + 1
            || self.nodes[..STATIC_NODES]
                .iter()
                .zip(statics)
                .any(|(node, k)| node.kind != k)
            || self.ego_index().is_none()
        {
            return Err(Error::Input(
                "graph must start with the lane and road nodes and contain the ego".into(),
            ));
        }
        Ok(())
    }
}

fn static_nodes() -> Vec<GraphNode> {
    [
        NodeKind::LeftLane,
        NodeKind::MiddleLane,
        NodeKind::RightLane,
        NodeKind::RootRoad,
    ]
    .into_iter()
    .map(|kind| GraphNode {
        id: kind.name().to_string(),
        kind,
    })
    .collect()
}

/// Builds the scene-graph of one frame.
///
/// Edges: lane→road and vehicle→lane `isIn`; a symmetric pair of distance
/// edges for every object pair within `Visible` range; one directional edge
/// each way for pairs within `Near` range.
pub fn build_scene_graph(frame: &[ObjectState], cfg: &GraphConfig) -> Result<SceneGraph> {
    validate_frame(frame)?;
    let mut objects: Vec<&ObjectState> = frame.iter().collect();
    objects.sort_by(|a, b| a.id.cmp(&b.id));

    let ego = objects
        .iter()
        .find(|o| o.kind == ObjectKind::EgoCar)
        .expect("validated");
    let (ex, ey) = (ego.x_ft, ego.y_ft);
    // Everything below works in the ego frame.
    let rel: Vec<ObjectState> = objects
        .iter()
        .map(|o| ObjectState {
            x_ft: o.x_ft - ex,
            y_ft: o.y_ft - ey,
            ..(*o).clone()
        })
        .collect();

    let mut nodes = static_nodes();
    nodes.extend(rel.iter().map(|o| GraphNode {
        id: o.id.clone(),
        kind: o.kind.node_kind(),
    }));

    let mut edges = Vec::new();
    for lane in Lane::ALL {
        edges.push(Edge::new(lane.node_index(), ROOT_NODE, RelationType::IsIn));
    }
    for (i, o) in rel.iter().enumerate() {
        if o.kind.is_vehicle() {
            for lane in assign_lanes(o, cfg).lanes() {
                edges.push(Edge::new(STATIC_NODES + i, lane.node_index(), RelationType::IsIn));
            }
        }
    }
    for i in 0..rel.len() {
        for j in i + 1..rel.len() {
            let (a, b) = (&rel[i], &rel[j]);
            let (u, v) = (STATIC_NODES + i, STATIC_NODES + j);
            let (dx, dy) = (b.x_ft - a.x_ft, b.y_ft - a.y_ft);
            let d = dx.hypot(dy);
            if let Some(r) = classify_distance(d)? {
                edges.push(Edge::new(u, v, r));
                edges.push(Edge::new(v, u, r));
            }
            if d <= DIRECTIONAL_RANGE_FT {
                if let Some(s) = bearing_sector(dx, dy) {
                    edges.push(Edge::new(u, v, RelationType::SECTORS[s]));
                    edges.push(Edge::new(v, u, RelationType::SECTORS[(s + 4) % 8]));
                }
            }
        }
    }
    edges.sort();
    Ok(SceneGraph { nodes, edges })
}

/// One graph per frame, in frame order.
pub fn clip_to_graph_sequence(clip: &ClipRecord, cfg: &GraphConfig) -> Result<Vec<SceneGraph>> {
    if clip.frames.is_empty() {
        return Err(Error::Input(format!("clip {} has no frames", clip.clip_id)));
    }
    clip.frames
        .iter()
        .enumerate()
        .map(|(t, f)| build_scene_graph(&f.objects, cfg).map_err(|e| e.in_frame(t)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegraph::{Frame, ObjectKind, RiskLabel};
    use proptest::prelude::*;
    use RelationType::*;

    fn car(id: &str, x: f64, y: f64) -> ObjectState {
        ObjectState::new(id, ObjectKind::Car, x, y)
    }

    #[test]
    fn ego_only_frame() {
        let g = build_scene_graph(&[ObjectState::ego()], &GraphConfig::default()).unwrap();
        assert_eq!(g.num_nodes(), 5);
        assert_eq!(g.edges.len(), 4);
        assert!(g.has_edge(4, Lane::Middle.node_index(), IsIn));
        for lane in Lane::ALL {
            assert!(g.has_edge(lane.node_index(), ROOT_NODE, IsIn));
        }
        g.validate().unwrap();
    }

    #[test]
    fn ego_and_one_close_car() {
        let g = build_scene_graph(
            &[ObjectState::ego(), car("car1", 3.0, 5.0)],
            &GraphConfig::default(),
        )
        .unwrap();
        let (c, e) = (g.node_index("car1").unwrap(), g.node_index("ego").unwrap());
        assert!(g.has_edge(e, c, SuperNear) && g.has_edge(c, e, SuperNear));
        assert!(g.has_edge(e, c, FrontRight) && g.has_edge(c, e, RearLeft));
        assert!(g.has_edge(c, Lane::Middle.node_index(), IsIn));
        assert_eq!(g.edges.len(), 3 + 2 + 2 + 2);
    }

    #[test]
    fn distant_car_only_gets_lane_edge() {
        let g = build_scene_graph(
            &[ObjectState::ego(), car("far", 0.0, 30.0)],
            &GraphConfig::default(),
        )
        .unwrap();
        let f = g.node_index("far").unwrap();
        let touching: Vec<_> = g.edges.iter().filter(|e| e.src == f || e.dst == f).collect();
        assert_eq!(touching, vec![&Edge::new(f, Lane::Middle.node_index(), IsIn)]);
    }

    #[test]
    fn pedestrians_get_no_lane_edges_and_straddlers_get_two() {
        let frame = [
            ObjectState::ego(),
            ObjectState::new("ped", ObjectKind::Pedestrian, -20.0, 3.0),
            car("mid", -6.0, 40.0),
        ];
        let g = build_scene_graph(&frame, &GraphConfig::default()).unwrap();
        let p = g.node_index("ped").unwrap();
        assert_eq!(g.edges_of(IsIn).filter(|e| e.src == p).count(), 0);
        let m = g.node_index("mid").unwrap();
        let lanes: Vec<usize> = g.edges_of(IsIn).filter(|e| e.src == m).map(|e| e.dst).collect();
        assert_eq!(lanes, vec![0, 1]);
    }

    #[test]
    fn missing_ego_is_input_error() {
        let err = build_scene_graph(&[car("a", 1.0, 1.0)], &GraphConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
        let dup = [ObjectState::ego(), car("a", 1.0, 1.0), car("a", 2.0, 1.0)];
        assert!(build_scene_graph(&dup, &GraphConfig::default()).is_err());
    }

    #[test]
    fn sequence_preserves_frames_and_reports_frame_index() {
        let mut clip = ClipRecord {
            clip_id: "c".into(),
            label: RiskLabel::Safe,
            frames: vec![Frame::new(vec![ObjectState::ego()])],
            meta: Default::default(),
        };
        assert_eq!(clip_to_graph_sequence(&clip, &GraphConfig::default()).unwrap().len(), 1);
        clip.frames = vec![Frame::new(vec![ObjectState::ego()]); 36];
        assert_eq!(clip_to_graph_sequence(&clip, &GraphConfig::default()).unwrap().len(), 36);
        clip.frames[7].objects.clear();
        match clip_to_graph_sequence(&clip, &GraphConfig::default()).unwrap_err() {
            Error::Frame { frame, .. } => assert_eq!(frame, 7),
            e => panic!("{e}"),
        }
    }

    fn arb_frame() -> impl Strategy<Value = Vec<ObjectState>> {
        // Positions on an eighth-foot grid keep sums and differences exact.
        proptest::collection::vec((-160i32..160, -240i32..240, 0usize..4), 0..7).prop_map(|v| {
            let kinds = [
                ObjectKind::Car,
                ObjectKind::Truck,
                ObjectKind::Pedestrian,
                ObjectKind::Motorcycle,
            ];
            let mut objs = vec![ObjectState::ego()];
            for (i, (x, y, k)) in v.into_iter().enumerate() {
                objs.push(ObjectState::new(
                    format!("o{i}"),
                    kinds[k],
                    x as f64 / 8.0,
                    y as f64 / 8.0,
                ));
            }
            objs
        })
    }

    proptest! {
        #[test]
        fn structural_invariants(frame in arb_frame()) {
            let g = build_scene_graph(&frame, &GraphConfig::default()).unwrap();
            prop_assert!(g.num_nodes() >= 5);
            g.validate().unwrap();
            for e in &g.edges {
                if e.relation.is_distance() {
                    prop_assert!(g.has_edge(e.dst, e.src, e.relation));
                    let same_dir = g.edges.iter()
                        .filter(|o| o.src == e.src && o.dst == e.dst && o.relation.is_distance())
                        .count();
                    prop_assert_eq!(same_dir, 1);
                }
                if let Some(anti) = e.relation.antipode() {
                    prop_assert!(g.has_edge(e.dst, e.src, anti));
                }
            }
            for (i, n) in g.nodes.iter().enumerate() {
                let lanes = g.edges_of(IsIn).filter(|e| e.src == i).count();
                match n.kind {
                    NodeKind::EgoCar | NodeKind::Car | NodeKind::Truck | NodeKind::Motorcycle => {
                        prop_assert!((1..=2).contains(&lanes))
                    }
                    NodeKind::Pedestrian => prop_assert_eq!(lanes, 0),
                    _ => {}
                }
            }
        }

        #[test]
        fn shuffled_objects_give_identical_graph(frame in arb_frame(), seed in 0u64..100) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = frame.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let cfg = GraphConfig::default();
            prop_assert_eq!(
                build_scene_graph(&frame, &cfg).unwrap(),
                build_scene_graph(&shuffled, &cfg).unwrap()
            );
        }

        #[test]
        fn translation_invariant(frame in arb_frame(), cx in -64i32..64, cy in -64i32..64) {
            let (cx, cy) = (cx as f64 / 4.0, cy as f64 / 4.0);
            let moved: Vec<ObjectState> = frame
                .iter()
                .map(|o| ObjectState { x_ft: o.x_ft + cx, y_ft: o.y_ft + cy, ..o.clone() })
                .collect();
            let cfg = GraphConfig::default();
            prop_assert_eq!(build_scene_graph(&frame, &cfg).unwrap(), build_scene_graph(&moved, &cfg).unwrap());
        }
    }
}
