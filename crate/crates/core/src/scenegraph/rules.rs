//! Relation rules between pairs of objects and lane membership.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::types::{Lane, LaneSet, ObjectState, RelationType};

/// Range within which directional relations are emitted (the `Near` bucket).
pub const DIRECTIONAL_RANGE_FT: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    pub lane_width_ft: f64,
    pub overlap_margin_ft: f64,
    /// Use ground-truth lane labels when an object carries one.
    pub use_lane_hints: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            lane_width_ft: 12.0,
            overlap_margin_ft: 1.5,
            use_lane_hints: true,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lane_width_ft > 0.0) {
            return Err(Error::Config("graph.lane_width_ft must be positive".into()));
        }
        if !(self.overlap_margin_ft >= 0.0) || self.overlap_margin_ft >= self.lane_width_ft / 2.0 {
            return Err(Error::Config(
                "graph.overlap_margin_ft must be in [0, lane_width_ft / 2)".into(),
            ));
        }
        Ok(())
    }
}

/// Tightest distance bucket containing `d_ft` (upper bounds inclusive).
pub fn classify_distance(d_ft: f64) -> Result<Option<RelationType>> {
    if !(d_ft >= 0.0) {
        return Err(Error::Domain {
            op: "classify_distance",
            msg: format!("distance {d_ft} is negative or NaN"),
        });
    }
    Ok(RelationType::DISTANCE_THRESHOLDS
        .iter()
        .find(|(_, limit)| d_ft <= *limit)
        .map(|(r, _)| *r))
}

/// 45° sector of the vector `(dx, dy)`, clockwise from straight ahead.
///
/// Uses exact sign and magnitude comparisons so that negating the vector
/// always lands in the opposite sector.
pub fn bearing_sector(dx: f64, dy: f64) -> Option<usize> {
    if dx == 0.0 && dy == 0.0 {
        return None;
    }
    let right_half = dx > 0.0 || (dx == 0.0 && dy > 0.0);
    let (x, y, base) = if right_half { (dx, dy, 0) } else { (-dx, -dy, 4) };
    let s = if y > 0.0 {
        if x < y {
            0
        } else {
            1
        }
    } else if x > -y {
        2
    } else {
        3
    };
    Some(base + s)
}

/// Directional relation from `src` to `dst`, if they are within range.
pub fn classify_direction(src: &ObjectState, dst: &ObjectState) -> Option<RelationType> {
    let (dx, dy) = (dst.x_ft - src.x_ft, dst.y_ft - src.y_ft);
    if dx.hypot(dy) > DIRECTIONAL_RANGE_FT {
        return None;
    }
    bearing_sector(dx, dy).map(|s| RelationType::SECTORS[s])
}

/// Lane node(s) an object belongs to.
///
/// A ground-truth hint wins when enabled; otherwise the lateral offset from
/// the ego picks the lane, with both adjacent lanes inside the overlap band
/// around a boundary.
pub fn assign_lanes(obj: &ObjectState, cfg: &GraphConfig) -> LaneSet {
    if cfg.use_lane_hints {
        if let Some(h) = &obj.lane_hint {
            return h.clone();
        }
    }
    let edge = cfg.lane_width_ft / 2.0;
    let m = cfg.overlap_margin_ft;
    let x = obj.x_ft;
    if x.abs() <= edge - m {
        LaneSet::single(Lane::Middle)
    } else if x < -(edge + m) {
        LaneSet::single(Lane::Left)
    } else if x > edge + m {
        LaneSet::single(Lane::Right)
    } else if x < 0.0 {
        LaneSet::pair(Lane::Left, Lane::Middle).expect("adjacent")
    } else {
        LaneSet::pair(Lane::Middle, Lane::Right).expect("adjacent")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegraph::ObjectKind;

    fn at(x: f64, y: f64) -> ObjectState {
        ObjectState::new("o", ObjectKind::Car, x, y)
    }

    #[test]
    fn distance_buckets() {
        use RelationType::*;
        let cases = [
            (0.0, Some(NearCollision)),
            (4.0, Some(NearCollision)),
            (4.0001, Some(SuperNear)),
            (5.83, Some(SuperNear)),
            (7.0, Some(SuperNear)),
            (10.0, Some(VeryNear)),
            (16.0, Some(Near)),
            (16.5, Some(Visible)),
            (25.0, Some(Visible)),
            (25.0001, None),
            (30.0, None),
        ];
        for (d, want) in cases {
            assert_eq!(classify_distance(d).unwrap(), want, "d = {d}");
        }
        assert!(classify_distance(-1.0).is_err());
        assert!(classify_distance(f64::NAN).is_err());
    }

    #[test]
    fn direction_sectors() {
        let src = at(0.0, 0.0);
        assert_eq!(classify_direction(&src, &at(5.0, 0.0)), Some(RelationType::RightRear));
        assert_eq!(classify_direction(&src, &at(0.0, 20.0)), None);
        assert_eq!(classify_direction(&src, &at(0.0, 0.0)), None);
        assert_eq!(classify_direction(&src, &at(3.0, 5.0)), Some(RelationType::FrontRight));
        assert_eq!(classify_direction(&at(3.0, 5.0), &src), Some(RelationType::RearLeft));
        assert_eq!(classify_direction(&src, &at(0.0, 3.0)), Some(RelationType::FrontRight));
        assert_eq!(classify_direction(&src, &at(2.0, 2.0)), Some(RelationType::RightFront));
        assert_eq!(classify_direction(&src, &at(2.0, -2.0)), Some(RelationType::RearRight));
        assert_eq!(classify_direction(&src, &at(0.0, -3.0)), Some(RelationType::RearLeft));
        assert_eq!(classify_direction(&src, &at(-2.0, -2.0)), Some(RelationType::LeftRear));
        assert_eq!(classify_direction(&src, &at(-3.0, 0.0)), Some(RelationType::LeftFront));
        assert_eq!(classify_direction(&src, &at(-2.0, 2.0)), Some(RelationType::FrontLeft));
        assert_eq!(classify_direction(&src, &at(0.0, 16.0)), Some(RelationType::FrontRight));
    }

    #[test]
    fn sector_matches_atan2_away_from_boundaries() {
        for k in 0..360 {
            let deg = k as f64 + 0.5;
            let rad = deg.to_radians();
            let s = bearing_sector(rad.sin(), rad.cos()).unwrap();
            assert_eq!(s, (deg / 45.0).floor() as usize, "bearing {deg}");
        }
    }

    #[test]
    fn lane_assignment() {
        let cfg = GraphConfig::default();
        let lanes = |x: f64| assign_lanes(&at(x, 0.0), &cfg).lanes().to_vec();
        assert_eq!(lanes(0.0), vec![Lane::Middle]);
        assert_eq!(lanes(-6.0), vec![Lane::Left, Lane::Middle]);
        assert_eq!(lanes(6.5), vec![Lane::Middle, Lane::Right]);
        assert_eq!(lanes(-4.5), vec![Lane::Middle]);
        assert_eq!(lanes(-12.0), vec![Lane::Left]);
        assert_eq!(lanes(40.0), vec![Lane::Right]);
        let hinted = at(0.0, 0.0).with_lane_hint("left".parse().unwrap());
        assert_eq!(assign_lanes(&hinted, &cfg).lanes(), &[Lane::Left]);
        let no_hints = GraphConfig {
            use_lane_hints: false,
            ..cfg
        };
        assert_eq!(assign_lanes(&hinted, &no_hints).lanes(), &[Lane::Middle]);
    }

    proptest::proptest! {
        #[test]
        fn negated_vector_is_antipodal(dx in -30.0f64..30.0, dy in -30.0f64..30.0) {
            if let Some(s) = bearing_sector(dx, dy) {
                proptest::prop_assert_eq!(bearing_sector(-dx, -dy), Some((s + 4) % 8));
            }
        }
    }
}
