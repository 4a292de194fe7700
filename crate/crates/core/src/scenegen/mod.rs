//! Kinematic lane-change clip generator.
//!
//! The world is a straight three-lane road with lane centres at
//! `x = -w, 0, +w`. The ego starts in a random lane and moves to an adjacent
//! one over the middle third of the clip. One "key" vehicle sits in the
//! target lane and closes in on the ego during the final third: for risky
//! clips the gap drops below the collision threshold, for safe clips it stays
//! above it. Independently of the label, a vehicle in the origin lane may
//! brush past the ego before the lane change starts; the label window
//! begins at the lane change, so such encounters do not make a clip risky.
//! Other traffic drives at constant speed in its lane and pedestrians walk
//! along the roadside. Emitted coordinates are ego-relative and jittered;
//! labels are recomputed from the emitted clip.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::scenegraph::{
    write_clips, ClipRecord, Frame, Lane, LaneSet, ObjectKind, ObjectState, RiskLabel,
};

/// Attempts per clip before generation gives up.
pub const MAX_ATTEMPTS_PER_CLIP: usize = 10;

const OVERLAP_MARGIN_FT: f64 = 1.5;
const PEDESTRIAN_MIN_X_FT: f64 = 20.0;
/// Minimum clearance between background traffic and any other vehicle.
const TRAFFIC_CLEARANCE_FT: f64 = 8.0;
const RISKY_GAP_FT: (f64, f64) = (0.5, 3.0);
const SAFE_GAP_FT: (f64, f64) = (5.0, 14.0);
/// Distance above the collision threshold a pre-change encounter must have
/// reopened to by the time the label window starts.
const ENCOUNTER_MARGIN_FT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskLabelRule {
    pub collision_threshold_ft: f64,
    /// Fraction of the clip before the window starts; the default, one
    /// third, is where the lane change begins. 0 uses every frame.
    pub window_start: f64,
}

impl Default for RiskLabelRule {
    fn default() -> Self {
        Self {
            collision_threshold_ft: 4.0,
            window_start: 1.0 / 3.0,
        }
    }
}

impl RiskLabelRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.collision_threshold_ft > 0.0) {
            return Err(Error::Config(
                "label_rule.collision_threshold_ft must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.window_start) {
            return Err(Error::Config("label_rule.window_start must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainShift {
    /// More vehicles and pedestrians, wider speed spread, triple jitter.
    DenseTraffic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub n_clips: usize,
    pub risky_fraction: f64,
    pub frames_per_clip: [usize; 2],
    /// Non-ego vehicles per clip, including the key vehicle.
    pub n_vehicles: [usize; 2],
    pub n_pedestrians: [usize; 2],
    pub ego_speed_ft: [f64; 2],
    /// Background traffic speed relative to the ego, ft/frame.
    pub traffic_speed_delta_ft: [f64; 2],
    /// Rate at which the key vehicle closes the gap, ft/frame.
    pub closing_speed_ft: [f64; 2],
    /// Chance of a close pass in the origin lane before the lane change.
    pub pre_change_encounter_prob: f64,
    pub lane_width_ft: f64,
    pub noise_std_ft: f64,
    pub domain_shift: Option<DomainShift>,
    pub label_rule: RiskLabelRule,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_clips: 96,
            risky_fraction: 0.5,
            frames_per_clip: [20, 40],
            n_vehicles: [1, 6],
            n_pedestrians: [0, 2],
            ego_speed_ft: [3.0, 5.0],
            traffic_speed_delta_ft: [-1.5, 1.5],
            closing_speed_ft: [0.75, 2.0],
            pre_change_encounter_prob: 0.5,
            lane_width_ft: 12.0,
            noise_std_ft: 0.2,
            domain_shift: None,
            label_rule: RiskLabelRule::default(),
        }
    }
}

fn check_range<T: PartialOrd + Copy + std::fmt::Debug>(name: &str, r: [T; 2], zero: T) -> Result<()> {
    if r[0] > r[1] || r[0] < zero {
        return Err(Error::Config(format!(
            "{name} must be a nonnegative [min, max] range, got {r:?}"
        )));
    }
    Ok(())
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.risky_fraction) {
            return Err(Error::Config(format!(
                "risky_fraction must be in [0, 1], got {}",
                self.risky_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.pre_change_encounter_prob) {
            return Err(Error::Config(format!(
                "pre_change_encounter_prob must be in [0, 1], got {}",
                self.pre_change_encounter_prob
            )));
        }
        check_range("frames_per_clip", self.frames_per_clip, 1)?;
        check_range("n_vehicles", self.n_vehicles, 0)?;
        check_range("n_pedestrians", self.n_pedestrians, 0)?;
        check_range("ego_speed_ft", self.ego_speed_ft, 0.0)?;
        check_range("closing_speed_ft", self.closing_speed_ft, 0.0)?;
        let d = self.traffic_speed_delta_ft;
        if !(d[0] <= d[1]) || !d.iter().all(|x| x.is_finite()) {
            return Err(Error::Config(format!(
                "traffic_speed_delta_ft must be a [min, max] range, got {d:?}"
            )));
        }
        if !(self.closing_speed_ft[0] > 0.0) {
            return Err(Error::Config("closing_speed_ft must be positive".into()));
        }
        if !(self.lane_width_ft > 2.0 * OVERLAP_MARGIN_FT) {
            return Err(Error::Config(format!(
                "lane_width_ft must exceed {}",
                2.0 * OVERLAP_MARGIN_FT
            )));
        }
        if !(self.noise_std_ft >= 0.0) || !self.noise_std_ft.is_finite() {
            return Err(Error::Config("noise_std_ft must be nonnegative".into()));
        }
        if self.frames_per_clip[0] < 3 {
            return Err(Error::Config(
                "frames_per_clip must be at least 3 for a three-phase lane change".into(),
            ));
        }
        self.label_rule.validate()?;
        let n_risky = self.n_risky();
        if n_risky > 0 && self.n_vehicles[1] == 0 {
            return Err(Error::Config(
                "risky clips need at least one vehicle; raise n_vehicles".into(),
            ));
        }
        Ok(())
    }

    /// Domain-shift preset applied to a base spec.
    pub fn domain_shifted(&self) -> Self {
        let mut s = self.clone();
        s.domain_shift = Some(DomainShift::DenseTraffic);
        s
    }

    /// The spec with its domain-shift preset folded in.
    pub fn effective(&self) -> Self {
        let mut s = self.clone();
        if let Some(DomainShift::DenseTraffic) = self.domain_shift {
            s.n_vehicles = [self.n_vehicles[0].max(4), self.n_vehicles[1].max(4) + 4];
            s.n_pedestrians = [self.n_pedestrians[0] + 1, self.n_pedestrians[1] + 2];
            s.traffic_speed_delta_ft = self.traffic_speed_delta_ft.map(|v| v * 1.5);
            s.noise_std_ft = (self.noise_std_ft * 3.0).max(0.5);
        }
        s
    }

    pub fn n_risky(&self) -> usize {
        (self.risky_fraction * self.n_clips as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub spec: ScenarioSpec,
    pub n_clips: usize,
    pub n_risky: usize,
    pub n_safe: usize,
    pub risky_fraction: f64,
    /// Generation attempts including regenerated clips.
    pub attempts: usize,
}

impl RiskLabelRule {
    /// First frame of the label window in a clip of `t` frames.
    pub fn window_start_frame(&self, t: usize) -> usize {
        ((self.window_start * t as f64).floor() as usize).min(t.saturating_sub(1))
    }
}

/// Risky iff some in-window frame has a vehicle strictly closer to the ego
/// than the collision threshold.
pub fn label_clip(clip: &ClipRecord, rule: &RiskLabelRule) -> RiskLabel {
    let start = rule.window_start_frame(clip.frames.len());
    let risky = clip.frames[start..].iter().any(|f| {
        let Some(ego) = f.ego() else { return false };
        f.objects
            .iter()
            .filter(|o| o.kind.is_vehicle() && o.kind != ObjectKind::EgoCar)
            .any(|o| ego.distance_to(o) < rule.collision_threshold_ft)
    });
    if risky {
        RiskLabel::Risky
    } else {
        RiskLabel::Safe
    }
}

/// Closest approach of any non-ego object to the ego over the whole clip.
pub fn min_ego_distance(clip: &ClipRecord) -> f64 {
    min_ego_distance_from(clip, 0)
}

/// Closest approach to the ego from frame `start` on.
pub fn min_ego_distance_from(clip: &ClipRecord, start: usize) -> f64 {
    clip.frames
        .iter()
        .skip(start)
        .filter_map(|f| {
            let ego = f.ego()?;
            f.objects
                .iter()
                .filter(|o| o.kind != ObjectKind::EgoCar)
                .map(|o| ego.distance_to(o))
                .min_by(f64::total_cmp)
        })
        .min_by(f64::total_cmp)
        .unwrap_or(f64::INFINITY)
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

fn lane_hint(x: f64, w: f64) -> LaneSet {
    let half = w / 2.0;
    let m = OVERLAP_MARGIN_FT;
    if x.abs() <= half - m {
        LaneSet::single(Lane::Middle)
    } else if x < -(half + m) {
        LaneSet::single(Lane::Left)
    } else if x > half + m {
        LaneSet::single(Lane::Right)
    } else if x < 0.0 {
        LaneSet::pair(Lane::Left, Lane::Middle).expect("adjacent")
    } else {
        LaneSet::pair(Lane::Middle, Lane::Right).expect("adjacent")
    }
}

/// World trajectory sampled per frame.
struct Track {
    id: String,
    kind: ObjectKind,
    xy: Vec<(f64, f64)>,
}

fn ego_track(t_len: usize, x0: f64, x1: f64, speed: f64) -> Vec<(f64, f64)> {
    let a = t_len as f64 / 3.0;
    (0..t_len)
        .map(|t| {
            let r = ((t as f64 - a) / a).clamp(0.0, 1.0);
            (x0 + (x1 - x0) * (0.5 - 0.5 * (PI * r).cos()), speed * t as f64)
        })
        .collect()
}

/// A vehicle `gap` ahead of (or behind) the ego at `event` whose distance
/// grows by `closing` per frame on either side of it.
fn pass_track(ego: &[(f64, f64)], x: f64, event: usize, gap: f64, closing: f64, front: bool) -> Vec<(f64, f64)> {
    let sign = if front { 1.0 } else { -1.0 };
    ego.iter()
        .enumerate()
        .map(|(t, e)| (x, e.1 + sign * (gap + closing * (event as f64 - t as f64).abs())))
        .collect()
}

fn min_gap(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p.0 - q.0).hypot(p.1 - q.1))
        .fold(f64::INFINITY, f64::min)
}

fn vehicle_kind(rng: &mut ChaCha8Rng) -> ObjectKind {
    match rng.gen_range(0..10) {
        0..=6 => ObjectKind::Car,
        7..=8 => ObjectKind::Truck,
        _ => ObjectKind::Motorcycle,
    }
}

/// Builds one clip aimed at `intended`. The emergent label is not checked
/// here; [`generate_dataset`] regenerates clips whose label disagrees.
pub fn generate_clip(
    spec: &ScenarioSpec,
    intended: RiskLabel,
    clip_id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<ClipRecord> {
    let spec = spec.effective();
    let w = spec.lane_width_ft;
    let t_len = rng.gen_range(spec.frames_per_clip[0]..=spec.frames_per_clip[1]);
    let start_lane: i32 = rng.gen_range(-1..=1);
    let step = match start_lane {
        0 if rng.gen_bool(0.5) => -1,
        0 => 1,
        s => -s,
    };
    let (x0, x1) = (start_lane as f64 * w, (start_lane + step) as f64 * w);
    let ego_speed = uniform(rng, spec.ego_speed_ft);
    let ego = ego_track(t_len, x0, x1, ego_speed);

    let mut n_veh = rng.gen_range(spec.n_vehicles[0]..=spec.n_vehicles[1]);
    if intended == RiskLabel::Risky && n_veh == 0 {
        if spec.n_vehicles[1] == 0 {
            return Err(Error::Generation("risky clip requested with no vehicles".into()));
        }
        n_veh = 1;
    }
    let n_ped = rng.gen_range(spec.n_pedestrians[0]..=spec.n_pedestrians[1]);

    // Vehicle ids are shuffled so the key vehicle has no fixed name.
    let mut slots: Vec<usize> = (0..n_veh).collect();
    slots.shuffle(rng);
    let mut tracks: Vec<Track> = Vec::new();
    let mut meta = serde_json::Map::new();

    if n_veh > 0 {
        let third = t_len / 3;
        let event = rng.gen_range((t_len - third).max(1)..t_len);
        let gap_range = match intended {
            RiskLabel::Risky => RISKY_GAP_FT,
            RiskLabel::Safe => SAFE_GAP_FT,
        };
        let gap = uniform(rng, [gap_range.0, gap_range.1]);
        let closing = uniform(rng, spec.closing_speed_ft);
        let front = rng.gen_bool(0.5);
        let xy = pass_track(&ego, x1, event, gap, closing, front);
        let kind = vehicle_kind(rng);
        let id = format!("veh_{:02}", slots[0]);
        meta.insert("key_vehicle".into(), json!(id));
        meta.insert("event_frame".into(), json!(event));
        meta.insert("key_position".into(), json!(if front { "front" } else { "rear" }));
        meta.insert("planned_gap_ft".into(), json!(gap));
        tracks.push(Track { id, kind, xy });
    }

    let mut background = slots.iter().skip(1);
    let window = spec.label_rule.window_start_frame(t_len);
    if n_veh >= 2 && rng.gen_bool(spec.pre_change_encounter_prob) {
        let gap = uniform(rng, [RISKY_GAP_FT.0, RISKY_GAP_FT.1]);
        let closing = uniform(rng, spec.closing_speed_ft);
        let front = rng.gen_bool(0.5);
        // Frames needed to reopen past the threshold before the window.
        let reopen = ((spec.label_rule.collision_threshold_ft + ENCOUNTER_MARGIN_FT - gap) / closing).ceil() as usize;
        if window > reopen {
            let event = rng.gen_range(0..window - reopen);
            let slot = *background.next().expect("n_veh >= 2");
            let id = format!("veh_{slot:02}");
            meta.insert("encounter_vehicle".into(), json!(id));
            meta.insert("encounter_frame".into(), json!(event));
            tracks.push(Track {
                id,
                kind: vehicle_kind(rng),
                xy: pass_track(&ego, x0, event, gap, closing, front),
            });
        }
    }

    for &slot in background {
        // Rejection-sample a lane and start offset that keeps clear of
        // everything placed so far; give up on this vehicle after 50 tries.
        for _ in 0..50 {
            let lane = rng.gen_range(-1i32..=1) as f64 * w;
            let y0 = rng.gen_range(-80.0..100.0);
            let v = ego_speed + uniform(rng, spec.traffic_speed_delta_ft);
            let xy: Vec<(f64, f64)> = (0..t_len).map(|t| (lane, y0 + v * t as f64)).collect();
            let clear = min_gap(&xy, &ego) > TRAFFIC_CLEARANCE_FT
                && tracks.iter().all(|o| min_gap(&xy, &o.xy) > TRAFFIC_CLEARANCE_FT);
            if clear {
                tracks.push(Track {
                    id: format!("veh_{slot:02}"),
                    kind: vehicle_kind(rng),
                    xy,
                });
                break;
            }
        }
    }

    for p in 0..n_ped {
        let x = (if rng.gen_bool(0.5) { -1.0 } else { 1.0 }) * rng.gen_range(PEDESTRIAN_MIN_X_FT..30.0);
        let y0 = rng.gen_range(-40.0..120.0);
        let v = rng.gen_range(-0.5..0.5);
        tracks.push(Track {
            id: format!("ped_{p}"),
            kind: ObjectKind::Pedestrian,
            xy: (0..t_len).map(|t| (x, y0 + v * t as f64)).collect(),
        });
    }

    let jitter = Normal::new(0.0, spec.noise_std_ft)
        .map_err(|e| Error::Config(format!("noise_std_ft: {e}")))?;
    let frames = (0..t_len)
        .map(|t| {
            let (ex, ey) = ego[t];
            let mut objects = vec![ObjectState::ego().with_lane_hint(lane_hint(ex, w))];
            for tr in &tracks {
                let (x, y) = tr.xy[t];
                let mut o = ObjectState::new(
                    tr.id.clone(),
                    tr.kind,
                    x - ex + jitter.sample(rng),
                    y - ey + jitter.sample(rng),
                );
                if tr.kind.is_vehicle() {
                    o = o.with_lane_hint(lane_hint(x, w));
                }
                objects.push(o);
            }
            Frame::new(objects)
        })
        .collect();

    meta.insert("intended".into(), json!(intended));
    meta.insert("start_lane".into(), json!(["left", "middle", "right"][(start_lane + 1) as usize]));
    meta.insert("direction".into(), json!(if step < 0 { "left" } else { "right" }));
    meta.insert("n_vehicles".into(), json!(tracks.iter().filter(|t| t.kind.is_vehicle()).count()));
    meta.insert("n_pedestrians".into(), json!(n_ped));
    if let Some(shift) = spec.domain_shift {
        meta.insert("domain_shift".into(), json!(shift));
    }
    let mut clip = ClipRecord {
        clip_id: clip_id.to_string(),
        label: intended,
        frames,
        meta,
    };
    clip.label = label_clip(&clip, &spec.label_rule);
    Ok(clip)
}

/// Per-clip generator stream; independent of thread count and clip order.
pub fn clip_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn accepted(clip: &ClipRecord, intended: RiskLabel, rule: &RiskLabelRule) -> bool {
    let start = rule.window_start_frame(clip.frames.len());
    clip.label == intended
        && (intended == RiskLabel::Risky
            || min_ego_distance_from(clip, start) > rule.collision_threshold_ft)
}

/// Generates `spec.n_clips` clips with exactly `round(n·risky_fraction)`
/// risky ones. Each clip is regenerated until its emergent label matches
/// the intended one.
pub fn generate_dataset(spec: &ScenarioSpec) -> Result<(Vec<ClipRecord>, Manifest)> {
    spec.validate()?;
    let n = spec.n_clips;
    let n_risky = spec.n_risky();
    let mut labels: Vec<RiskLabel> = (0..n)
        .map(|i| if i < n_risky { RiskLabel::Risky } else { RiskLabel::Safe })
        .collect();
    labels.shuffle(&mut clip_rng(spec.seed, usize::MAX - 1));
    let width = n.max(1).to_string().len();
    let results: Vec<Result<(ClipRecord, usize)>> = labels
        .par_iter()
        .enumerate()
        .map(|(i, &intended)| {
            let mut rng = clip_rng(spec.seed, i);
            let id = format!("clip_{i:0width$}");
            for attempt in 1..=MAX_ATTEMPTS_PER_CLIP {
                let clip = generate_clip(spec, intended, &id, &mut rng)?;
                if accepted(&clip, intended, &spec.effective().label_rule) {
                    return Ok((clip, attempt));
                }
            }
            Err(Error::Generation(format!(
                "clip {id}: no {intended:?} clip after {MAX_ATTEMPTS_PER_CLIP} attempts"
            )))
        })
        .collect();
    let mut clips = Vec::with_capacity(n);
    let mut attempts = 0;
    for r in results {
        let (c, a) = r?;
        attempts += a;
        clips.push(c);
    }
    let manifest = Manifest {
        seed: spec.seed,
        spec: spec.clone(),
        n_clips: n,
        n_risky,
        n_safe: n - n_risky,
        risky_fraction: if n == 0 { 0.0 } else { n_risky as f64 / n as f64 },
        attempts,
    };
    Ok((clips, manifest))
}

/// Sibling path of a dataset file holding its manifest.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    let stem = dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    dataset.with_file_name(format!("{stem}.manifest.json"))
}

/// Writes the clip JSONL and its manifest; returns the manifest path.
pub fn write_dataset(path: &Path, clips: &[ClipRecord], manifest: &Manifest) -> Result<PathBuf> {
    write_clips(path, clips)?;
    let mpath = manifest_path(path);
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
    Ok(mpath)
}

/// Convenience accessor for the generator metadata of a clip.
pub fn meta_str<'a>(clip: &'a ClipRecord, key: &str) -> Option<&'a str> {
    clip.meta.get(key).and_then(Value::as_str)
}
