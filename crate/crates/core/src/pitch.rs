//! Canonical pitch geometry: dimensions, the 26 regression keypoints, and the
//! line markings (17 straight segments and 3 arcs) in pitch-plane meters.
//!
//! The pitch frame has its origin on the center spot, `x` running along the
//! length toward the right goal and `y` across the width toward the top
//! touchline. The ground is the plane `z = 0`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PITCH_LENGTH_M: f64 = 105.0;
pub const PITCH_WIDTH_M: f64 = 68.0;
pub const PENALTY_AREA_WIDTH_M: f64 = 40.32;
pub const PENALTY_AREA_DEPTH_M: f64 = 16.5;
pub const GOAL_AREA_WIDTH_M: f64 = 18.32;
pub const GOAL_AREA_DEPTH_M: f64 = 5.5;
pub const PENALTY_MARK_DISTANCE_M: f64 = 11.0;
pub const CIRCLE_RADIUS_M: f64 = 9.15;
pub const LINE_WIDTH_M: f64 = 0.12;
/// Grass surrounding the playing area on every side.
pub const APRON_M: f64 = 5.0;

pub const KEYPOINT_COUNT: usize = 26;

/// A point on the ground plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct PitchPoint {
    pub x: f64,
    pub y: f64,
}

impl PitchPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &PitchPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for PitchPoint {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<PitchPoint> for [f64; 2] {
    fn from(p: PitchPoint) -> Self {
        [p.x, p.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: PitchPoint,
    pub b: PitchPoint,
}

impl Segment {
    pub fn length(&self) -> f64 {
        self.a.distance(&self.b)
    }

    pub fn point_at(&self, s: f64) -> PitchPoint {
        PitchPoint::new(self.a.x + s * (self.b.x - self.a.x), self.a.y + s * (self.b.y - self.a.y))
    }

    /// Euclidean distance from `p` to the closed segment.
    pub fn distance(&self, p: &PitchPoint) -> f64 {
        let (dx, dy) = (self.b.x - self.a.x, self.b.y - self.a.y);
        let len2 = dx * dx + dy * dy;
        let s = if len2 == 0.0 {
            0.0
        } else {
            (((p.x - self.a.x) * dx + (p.y - self.a.y) * dy) / len2).clamp(0.0, 1.0)
        };
        self.point_at(s).distance(p)
    }
}

/// Circular arc swept counter-clockwise from `start_angle` to `end_angle`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub center: PitchPoint,
    pub radius: f64,
    pub start_angle: f64,
    pub end_angle: f64,
}

impl Arc {
    pub fn sweep(&self) -> f64 {
        self.end_angle - self.start_angle
    }

    pub fn length(&self) -> f64 {
        self.radius * self.sweep()
    }

    pub fn point_at_angle(&self, angle: f64) -> PitchPoint {
        PitchPoint::new(
            self.center.x + self.radius * angle.cos(),
            self.center.y + self.radius * angle.sin(),
        )
    }

    /// `n`-segment polyline approximation, `n + 1` vertices including both ends.
    pub fn polyline(&self, n: usize) -> Vec<PitchPoint> {
        (0..=n)
            .map(|i| self.point_at_angle(self.start_angle + self.sweep() * i as f64 / n as f64))
            .collect()
    }

    /// Distance from `p` to the arc curve.
    pub fn distance(&self, p: &PitchPoint) -> f64 {
        let angle = (p.y - self.center.y).atan2(p.x - self.center.x);
        // bring the polar angle into [start, start + 2π)
        let rel = (angle - self.start_angle).rem_euclid(TAU);
        if rel <= self.sweep() {
            (p.distance(&self.center) - self.radius).abs()
        } else {
            let a = self.point_at_angle(self.start_angle);
            let b = self.point_at_angle(self.end_angle);
            p.distance(&a).min(p.distance(&b))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitchTemplate {
    pub length_m: f64,
    pub width_m: f64,
    pub keypoints: Vec<PitchPoint>,
    pub segments: Vec<Segment>,
    pub arcs: Vec<Arc>,
    pub line_width_m: f64,
}

const KEYPOINT_TABLE: [(f64, f64); KEYPOINT_COUNT] = [
    (-52.5, -34.0),
    (-52.5, 34.0),
    (52.5, 34.0),
    (52.5, -34.0),
    (0.0, 34.0),
    (0.0, -34.0),
    (0.0, 0.0),
    (0.0, 9.15),
    (-41.5, 0.0),
    (41.5, 0.0),
    (-52.5, 20.16),
    (-36.0, 20.16),
    (-36.0, -20.16),
    (-52.5, -20.16),
    (-52.5, 9.16),
    (-47.0, 9.16),
    (-47.0, -9.16),
    (-52.5, -9.16),
    (52.5, 20.16),
    (36.0, 20.16),
    (36.0, -20.16),
    (52.5, -20.16),
    (52.5, 9.16),
    (47.0, 9.16),
    (47.0, -9.16),
    (52.5, -9.16),
];

/// The fixed 105 × 68 m template every other module is built on.
pub fn standard_template() -> PitchTemplate {
    let hl = PITCH_LENGTH_M / 2.0;
    let hw = PITCH_WIDTH_M / 2.0;
    let p = PitchPoint::new;
    let seg = |a: PitchPoint, b: PitchPoint| Segment { a, b };

    let mut segments = vec![
        seg(p(-hl, -hw), p(hl, -hw)),
        seg(p(-hl, hw), p(hl, hw)),
        seg(p(-hl, -hw), p(-hl, hw)),
        seg(p(hl, -hw), p(hl, hw)),
        seg(p(0.0, -hw), p(0.0, hw)),
    ];
    // penalty area then goal area, left end first, then mirrored
    for side in [-1.0, 1.0] {
        for (half_width, depth) in [
            (PENALTY_AREA_WIDTH_M / 2.0, PENALTY_AREA_DEPTH_M),
            (GOAL_AREA_WIDTH_M / 2.0, GOAL_AREA_DEPTH_M),
        ] {
            let goal_x = side * hl;
            let front_x = side * (hl - depth);
            segments.push(seg(p(front_x, -half_width), p(front_x, half_width)));
            segments.push(seg(p(goal_x, half_width), p(front_x, half_width)));
            segments.push(seg(p(goal_x, -half_width), p(front_x, -half_width)));
        }
    }

    let spot_x = hl - PENALTY_MARK_DISTANCE_M;
    let half_sweep = ((PENALTY_AREA_DEPTH_M - PENALTY_MARK_DISTANCE_M) / CIRCLE_RADIUS_M).acos();
    let arcs = vec![
        Arc { center: p(0.0, 0.0), radius: CIRCLE_RADIUS_M, start_angle: 0.0, end_angle: TAU },
        Arc {
            center: p(-spot_x, 0.0),
            radius: CIRCLE_RADIUS_M,
            start_angle: -half_sweep,
            end_angle: half_sweep,
        },
        Arc {
            center: p(spot_x, 0.0),
            radius: CIRCLE_RADIUS_M,
            start_angle: PI - half_sweep,
            end_angle: PI + half_sweep,
        },
    ];

    PitchTemplate {
        length_m: PITCH_LENGTH_M,
        width_m: PITCH_WIDTH_M,
        keypoints: KEYPOINT_TABLE.iter().map(|&(x, y)| p(x, y)).collect(),
        segments,
        arcs,
        line_width_m: LINE_WIDTH_M,
    }
}

impl PitchTemplate {
    /// Keypoint by its fixed index; the index order is part of the dataset format.
    pub fn keypoint_position(&self, index: usize) -> Result<PitchPoint> {
        self.keypoints.get(index).copied().ok_or_else(|| {
            Error::Domain(format!("keypoint index {index} outside 0..{}", self.keypoints.len()))
        })
    }

    /// Points along every segment and arc, no further apart than `spacing_m`,
    /// endpoints included. Each primitive contributes `ceil(len / spacing) + 1`
    /// points; shared endpoints are not deduplicated.
    pub fn sample_markings(&self, spacing_m: f64) -> Result<Vec<PitchPoint>> {
        if !(spacing_m > 0.0) || !spacing_m.is_finite() {
            return Err(Error::Domain(format!("marking spacing must be positive, got {spacing_m}")));
        }
        let mut out = Vec::new();
        for s in &self.segments {
            let n = (s.length() / spacing_m).ceil().max(1.0) as usize;
            out.extend((0..=n).map(|i| s.point_at(i as f64 / n as f64)));
        }
        for a in &self.arcs {
            let n = (a.length() / spacing_m).ceil().max(1.0) as usize;
            out.extend(
                (0..=n).map(|i| a.point_at_angle(a.start_angle + a.sweep() * i as f64 / n as f64)),
            );
        }
        Ok(out)
    }

    /// Outer boundary of the playing area, counter-clockwise from the bottom-left corner.
    pub fn boundary(&self) -> [PitchPoint; 4] {
        let (hl, hw) = (self.length_m / 2.0, self.width_m / 2.0);
        [
            PitchPoint::new(-hl, -hw),
            PitchPoint::new(hl, -hw),
            PitchPoint::new(hl, hw),
            PitchPoint::new(-hl, hw),
        ]
    }

    /// Distance from `p` to the nearest marking centerline.
    pub fn distance_to_markings(&self, p: &PitchPoint) -> f64 {
        let segs = self.segments.iter().map(|s| s.distance(p));
        let arcs = self.arcs.iter().map(|a| a.distance(p));
        segs.chain(arcs).fold(f64::INFINITY, f64::min)
    }
}
