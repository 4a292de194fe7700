use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    EgoCar,
    Car,
    Motorcycle,
    Pedestrian,
    Truck,
    Other,
}

impl ObjectKind {
    /// Vehicles are the objects that get lane membership edges.
    pub fn is_vehicle(self) -> bool {
        matches!(
            self,
            ObjectKind::EgoCar | ObjectKind::Car | ObjectKind::Motorcycle | ObjectKind::Truck
        )
    }

    pub fn node_kind(self) -> NodeKind {
        match self {
            ObjectKind::EgoCar => NodeKind::EgoCar,
            ObjectKind::Car => NodeKind::Car,
            ObjectKind::Motorcycle => NodeKind::Motorcycle,
            ObjectKind::Pedestrian => NodeKind::Pedestrian,
            ObjectKind::Truck => NodeKind::Truck,
            ObjectKind::Other => NodeKind::Other,
        }
    }
}

/// Kind of a scene-graph node: an object class or one of the static road nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    #[serde(rename = "ego_car")]
    EgoCar,
    #[serde(rename = "car")]
    Car,
    #[serde(rename = "motorcycle")]
    Motorcycle,
    #[serde(rename = "pedestrian")]
    Pedestrian,
    #[serde(rename = "truck")]
    Truck,
    #[serde(rename = "other")]
    Other,
    #[serde(rename = "Left_Lane")]
    LeftLane,
    #[serde(rename = "Middle_Lane")]
    MiddleLane,
    #[serde(rename = "Right_Lane")]
    RightLane,
    #[serde(rename = "Root_Road")]
    RootRoad,
}

impl NodeKind {
    pub const ALL: [NodeKind; 10] = [
        NodeKind::EgoCar,
        NodeKind::Car,
        NodeKind::Motorcycle,
        NodeKind::Pedestrian,
        NodeKind::Truck,
        NodeKind::Other,
        NodeKind::LeftLane,
        NodeKind::MiddleLane,
        NodeKind::RightLane,
        NodeKind::RootRoad,
    ];

    pub fn is_static(self) -> bool {
        matches!(
            self,
            NodeKind::LeftLane | NodeKind::MiddleLane | NodeKind::RightLane | NodeKind::RootRoad
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeKind::EgoCar => "ego_car",
            NodeKind::Car => "car",
            NodeKind::Motorcycle => "motorcycle",
            NodeKind::Pedestrian => "pedestrian",
            NodeKind::Truck => "truck",
            NodeKind::Other => "other",
            NodeKind::LeftLane => "Left_Lane",
            NodeKind::MiddleLane => "Middle_Lane",
            NodeKind::RightLane => "Right_Lane",
            NodeKind::RootRoad => "Root_Road",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Lane {
    Left,
    Middle,
    Right,
}

impl Lane {
    pub const ALL: [Lane; 3] = [Lane::Left, Lane::Middle, Lane::Right];

    pub fn node_kind(self) -> NodeKind {
        match self {
            Lane::Left => NodeKind::LeftLane,
            Lane::Middle => NodeKind::MiddleLane,
            Lane::Right => NodeKind::RightLane,
        }
    }

    /// Position of the lane node among the static nodes.
    pub fn node_index(self) -> usize {
        self as usize
    }

    fn name(self) -> &'static str {
        match self {
            Lane::Left => "left",
            Lane::Middle => "middle",
            Lane::Right => "right",
        }
    }
}

/// One lane, or two adjacent lanes while a vehicle straddles the boundary.
///
/// Serialized as `"left"`, `"middle"`, `"right"`, `"left+middle"` or
/// `"middle+right"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LaneSet(Vec<Lane>);

impl LaneSet {
    pub fn single(lane: Lane) -> Self {
        LaneSet(vec![lane])
    }

    pub fn pair(a: Lane, b: Lane) -> Result<Self> {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if hi as usize - lo as usize != 1 {
            return Err(Error::Input(format!(
                "lanes {} and {} are not adjacent",
                lo.name(),
                hi.name()
            )));
        }
        Ok(LaneSet(vec![lo, hi]))
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.0
    }
}

impl fmt::Display for LaneSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|l| l.name()).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for LaneSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |p: &str| match p.trim() {
            "left" => Ok(Lane::Left),
            "middle" => Ok(Lane::Middle),
            "right" => Ok(Lane::Right),
            other => Err(Error::Input(format!("unknown lane `{other}`"))),
        };
        let parts: Vec<&str> = s.split('+').collect();
        match parts.as_slice() {
            [a] => Ok(LaneSet::single(parse(a)?)),
            [a, b] => LaneSet::pair(parse(a)?, parse(b)?),
            _ => Err(Error::Input(format!("bad lane hint `{s}`"))),
        }
    }
}

impl Serialize for LaneSet {
    fn serialize<Se: Serializer>(&self, s: Se) -> std::result::Result<Se::Ok, Se::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LaneSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Explicit edge types. The self-connection used inside graph convolution
/// is not an edge type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationType {
    #[serde(rename = "Near_Collision")]
    NearCollision,
    #[serde(rename = "Super_Near")]
    SuperNear,
    #[serde(rename = "Very_Near")]
    VeryNear,
    #[serde(rename = "Near")]
    Near,
    #[serde(rename = "Visible")]
    Visible,
    #[serde(rename = "Front_Right")]
    FrontRight,
    #[serde(rename = "Right_Front")]
    RightFront,
    #[serde(rename = "Right_Rear")]
    RightRear,
    #[serde(rename = "Rear_Right")]
    RearRight,
    #[serde(rename = "Rear_Left")]
    RearLeft,
    #[serde(rename = "Left_Rear")]
    LeftRear,
    #[serde(rename = "Left_Front")]
    LeftFront,
    #[serde(rename = "Front_Left")]
    FrontLeft,
    #[serde(rename = "isIn")]
    IsIn,
}

impl RelationType {
    pub const COUNT: usize = 14;

    pub const ALL: [RelationType; 14] = [
        RelationType::NearCollision,
        RelationType::SuperNear,
        RelationType::VeryNear,
        RelationType::Near,
        RelationType::Visible,
        RelationType::FrontRight,
        RelationType::RightFront,
        RelationType::RightRear,
        RelationType::RearRight,
        RelationType::RearLeft,
        RelationType::LeftRear,
        RelationType::LeftFront,
        RelationType::FrontLeft,
        RelationType::IsIn,
    ];

    /// Distance buckets with their inclusive upper thresholds in feet.
    pub const DISTANCE_THRESHOLDS: [(RelationType, f64); 5] = [
        (RelationType::NearCollision, 4.0),
        (RelationType::SuperNear, 7.0),
        (RelationType::VeryNear, 10.0),
        (RelationType::Near, 16.0),
        (RelationType::Visible, 25.0),
    ];

    /// Clockwise from straight ahead, one per 45° sector.
    pub const SECTORS: [RelationType; 8] = [
        RelationType::FrontRight,
        RelationType::RightFront,
        RelationType::RightRear,
        RelationType::RearRight,
        RelationType::RearLeft,
        RelationType::LeftRear,
        RelationType::LeftFront,
        RelationType::FrontLeft,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_distance(self) -> bool {
        self.index() < 5
    }

    pub fn is_directional(self) -> bool {
        (5..13).contains(&self.index())
    }

    /// Directional relation seen from the other endpoint.
    pub fn antipode(self) -> Option<RelationType> {
        self.is_directional()
            .then(|| Self::SECTORS[(self.index() - 5 + 4) % 8])
    }

    pub fn name(self) -> &'static str {
        match self {
            RelationType::NearCollision => "Near_Collision",
            RelationType::SuperNear => "Super_Near",
            RelationType::VeryNear => "Very_Near",
            RelationType::Near => "Near",
            RelationType::Visible => "Visible",
            RelationType::FrontRight => "Front_Right",
            RelationType::RightFront => "Right_Front",
            RelationType::RightRear => "Right_Rear",
            RelationType::RearRight => "Rear_Right",
            RelationType::RearLeft => "Rear_Left",
            RelationType::LeftRear => "Left_Rear",
            RelationType::LeftFront => "Left_Front",
            RelationType::FrontLeft => "Front_Left",
            RelationType::IsIn => "isIn",
        }
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Object position in the ego frame: `x_ft` lateral (positive right),
/// `y_ft` longitudinal (positive forward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectState {
    pub id: String,
    pub kind: ObjectKind,
    pub x_ft: f64,
    pub y_ft: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lane_hint: Option<LaneSet>,
}

impl ObjectState {
    pub fn new(id: impl Into<String>, kind: ObjectKind, x_ft: f64, y_ft: f64) -> Self {
        Self {
            id: id.into(),
            kind,
            x_ft,
            y_ft,
            lane_hint: None,
        }
    }

    pub fn ego() -> Self {
        Self::new("ego", ObjectKind::EgoCar, 0.0, 0.0)
    }

    pub fn with_lane_hint(mut self, hint: LaneSet) -> Self {
        self.lane_hint = Some(hint);
        self
    }

    pub fn distance_to(&self, other: &ObjectState) -> f64 {
        (other.x_ft - self.x_ft).hypot(other.y_ft - self.y_ft)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    pub objects: Vec<ObjectState>,
}

impl Frame {
    pub fn new(objects: Vec<ObjectState>) -> Self {
        Self { objects }
    }

    pub fn ego(&self) -> Option<&ObjectState> {
        self.objects.iter().find(|o| o.kind == ObjectKind::EgoCar)
    }
}

/// Binary clip label; one-hot `(1,0)` for safe and `(0,1)` for risky.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskLabel {
    Safe,
    Risky,
}

impl RiskLabel {
    pub fn index(self) -> usize {
        match self {
            RiskLabel::Safe => 0,
            RiskLabel::Risky => 1,
        }
    }

    pub fn one_hot(self) -> [f64; 2] {
        match self {
            RiskLabel::Safe => [1.0, 0.0],
            RiskLabel::Risky => [0.0, 1.0],
        }
    }

    pub fn from_one_hot(y: [f64; 2]) -> Result<Self> {
        match y {
            [a, b] if a == 1.0 && b == 0.0 => Ok(RiskLabel::Safe),
            [a, b] if a == 0.0 && b == 1.0 => Ok(RiskLabel::Risky),
            _ => Err(Error::Label(format!("{y:?} is not one-hot"))),
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            RiskLabel::Safe
        } else {
            RiskLabel::Risky
        }
    }
}

/// A labeled lane-change clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    pub clip_id: String,
    pub label: RiskLabel,
    pub frames: Vec<Frame>,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl ClipRecord {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Input(format!("clip {} has no frames", self.clip_id)));
        }
        for (t, frame) in self.frames.iter().enumerate() {
            validate_frame(&frame.objects).map_err(|e| e.in_frame(t))?;
        }
        Ok(())
    }
}

pub(crate) fn validate_frame(objects: &[ObjectState]) -> Result<()> {
    let egos = objects
        .iter()
        .filter(|o| o.kind == ObjectKind::EgoCar)
        .count();
    match egos {
        0 => return Err(Error::Input("frame has no ego vehicle".into())),
        1 => {}
        n => return Err(Error::Input(format!("frame has {n} ego vehicles"))),
    }
    let mut ids: Vec<&str> = objects.iter().map(|o| o.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Input(format!("duplicate object id `{}`", w[0])));
    }
    if let Some(o) = objects
        .iter()
        .find(|o| !o.x_ft.is_finite() || !o.y_ft.is_finite())
    {
        return Err(Error::Input(format!("object `{}` has non-finite position", o.id)));
    }
    Ok(())
}
