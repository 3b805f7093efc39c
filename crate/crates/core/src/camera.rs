//! Pinhole camera: pose sampling, ground projection, visibility and the exact
//! ground-plane homography used as annotation ground truth.
//!
//! World frame is z-up with the pitch on `z = 0`. The camera frame follows the
//! vision convention: `x` right, `y` down, `z` forward, so image `v` grows
//! downward.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Homography;
use crate::pitch::{standard_template, PitchPoint};
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
}

impl ImagePoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &ImagePoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

impl From<[f64; 2]> for ImagePoint {
    fn from([u, v]: [f64; 2]) -> Self {
        Self { u, v }
    }
}

impl From<ImagePoint> for [f64; 2] {
    fn from(p: ImagePoint) -> Self {
        [p.u, p.v]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal_px: f64,
    pub principal_point: [f64; 2],
    pub image_size: [u32; 2],
}

impl CameraIntrinsics {
    /// Centered principal point and a focal length giving the horizontal field of view.
    pub fn from_hfov(width: u32, height: u32, hfov_rad: f64) -> Self {
        Self {
            focal_px: width as f64 / 2.0 / (hfov_rad / 2.0).tan(),
            principal_point: [width as f64 / 2.0, height as f64 / 2.0],
            image_size: [width, height],
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let f = self.focal_px;
        let [u0, v0] = self.principal_point;
        Matrix3::new(f, 0.0, u0, 0.0, f, v0, 0.0, 0.0, 1.0)
    }
}

/// `yaw` is the heading of the optical axis, counter-clockwise from +x;
/// `pitch` tilts the axis below the horizontal (π/2 looks straight down);
/// `roll` turns the image about the axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: [f64; 3],
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl CameraPose {
    pub fn new(position: [f64; 3], yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { position, yaw, pitch, roll }
    }

    /// World-to-camera rotation; rows are the camera right, down and forward axes.
    pub fn rotation(&self) -> Matrix3<f64> {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let (sr, cr) = self.roll.sin_cos();
        let forward = Vector3::new(cp * cy, cp * sy, -sp);
        let right = Vector3::new(sy, -cy, 0.0);
        let down = forward.cross(&right);
        let r = right * cr + down * sr;
        let d = down * cr - right * sr;
        Matrix3::from_rows(&[r.transpose(), d.transpose(), forward.transpose()])
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

/// Result of projecting a ground point. `valid` is false for points at or
/// behind the camera; the coordinates are still reported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub point: ImagePoint,
    pub depth: f64,
    pub valid: bool,
}

impl CameraModel {
    pub fn width(&self) -> u32 {
        self.intrinsics.image_size[0]
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.image_size[1]
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.pose.rotation() * (world - self.pose.center())
    }

    /// Projects an arbitrary world point (not necessarily on the ground).
    pub fn project_world(&self, world: &Vector3<f64>) -> Projection {
        let c = self.to_camera(world);
        let f = self.intrinsics.focal_px;
        let [u0, v0] = self.intrinsics.principal_point;
        Projection {
            point: ImagePoint::new(f * c.x / c.z + u0, f * c.y / c.z + v0),
            depth: c.z,
            valid: c.z > 0.0,
        }
    }

    pub fn project(&self, p: &PitchPoint) -> Projection {
        self.project_world(&Vector3::new(p.x, p.y, 0.0))
    }

    /// `K · [r1 r2 t]`: maps homogeneous pitch coordinates to homogeneous pixels.
    pub fn ground_homography(&self) -> Result<Homography> {
        let z = self.pose.position[2];
        if !(z.abs() > 1e-12) {
            return Err(Error::SingularConfiguration(format!(
                "camera at height {z} lies in the ground plane"
            )));
        }
        let r = self.pose.rotation();
        let t = -(r * self.pose.center());
        let rt = Matrix3::from_columns(&[r.column(0).into_owned(), r.column(1).into_owned(), t]);
        Ok(Homography::from_matrix(self.intrinsics.matrix() * rt))
    }

    /// Ray from the camera center through the pixel, in world coordinates,
    /// scaled so its camera-frame forward component is 1.
    pub fn pixel_ray(&self, p: &ImagePoint) -> Vector3<f64> {
        let f = self.intrinsics.focal_px;
        let [u0, v0] = self.intrinsics.principal_point;
        let cam = Vector3::new((p.u - u0) / f, (p.v - v0) / f, 1.0);
        self.pose.rotation().transpose() * cam
    }

    /// Ground point seen at pixel `p`, or `None` above the horizon.
    pub fn back_project(&self, p: &ImagePoint) -> Option<PitchPoint> {
        let ray = self.pixel_ray(p);
        let z = self.pose.position[2];
        if ray.z >= 0.0 {
            return None;
        }
        let t = -z / ray.z;
        Some(PitchPoint::new(self.pose.position[0] + t * ray.x, self.pose.position[1] + t * ray.y))
    }

    pub fn visible(&self, p: &PitchPoint) -> bool {
        let pr = self.project(p);
        pr.valid
            && pr.point.u >= 0.0
            && pr.point.u < self.width() as f64
            && pr.point.v >= 0.0
            && pr.point.v < self.height() as f64
    }
}

/// Sampling ranges for randomized viewpoints. Every `[lo, hi]` pair is
/// sampled uniformly; angles are in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRange {
    pub x_m: [f64; 2],
    pub y_m: [f64; 2],
    /// Flip the sampled `y` (and the aim point) to the far side with
    /// probability ½. The pitch looks the same after a half turn about its
    /// center, so mirrored views make keypoint labels ambiguous.
    pub mirror_y: bool,
    pub z_m: [f64; 2],
    pub tilt_deg: [f64; 2],
    pub roll_deg: [f64; 2],
    pub hfov_deg: [f64; 2],
    /// The heading is chosen so the camera faces this pitch point.
    pub target_x_m: [f64; 2],
    pub target_y_m: [f64; 2],
    pub image_size: [u32; 2],
    /// Cameras that put any template keypoint this close to the camera plane
    /// are rejected; such points project arbitrarily far out of frame.
    pub min_keypoint_depth_m: f64,
}

impl Default for CameraRange {
    /// Broadcast-style viewpoints from the near touchline side.
    fn default() -> Self {
        Self {
            x_m: [-60.0, 60.0],
            y_m: [-60.0, -20.0],
            mirror_y: false,
            z_m: [8.0, 35.0],
            tilt_deg: [10.0, 45.0],
            roll_deg: [-3.0, 3.0],
            hfov_deg: [20.0, 70.0],
            target_x_m: [-52.5, 52.5],
            target_y_m: [-34.0, 34.0],
            image_size: [256, 256],
            min_keypoint_depth_m: 1.0,
        }
    }
}

pub const MAX_CAMERA_ATTEMPTS: usize = 1000;

impl CameraRange {
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("x_m", self.x_m),
            ("y_m", self.y_m),
            ("z_m", self.z_m),
            ("tilt_deg", self.tilt_deg),
            ("roll_deg", self.roll_deg),
            ("hfov_deg", self.hfov_deg),
            ("target_x_m", self.target_x_m),
            ("target_y_m", self.target_y_m),
        ];
        for (name, [lo, hi]) in pairs {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Domain(format!("camera range {name} = [{lo}, {hi}] is empty")));
            }
        }
        if self.z_m[0] <= 0.0 {
            return Err(Error::Domain("camera height must stay above the ground".into()));
        }
        if self.hfov_deg[0] <= 0.0 || self.hfov_deg[1] >= 180.0 {
            return Err(Error::Domain("field of view must lie in (0, 180) degrees".into()));
        }
        if self.image_size.contains(&0) {
            return Err(Error::Domain("image size must be positive".into()));
        }
        Ok(())
    }
}

fn sample_once(rng: &mut RandomStream, cfg: &CameraRange) -> CameraModel {
    let x = rng.uniform(cfg.x_m[0], cfg.x_m[1]);
    let mut y = rng.uniform(cfg.y_m[0], cfg.y_m[1]);
    let z = rng.uniform(cfg.z_m[0], cfg.z_m[1]);
    let tx = rng.uniform(cfg.target_x_m[0], cfg.target_x_m[1]);
    let mut ty = rng.uniform(cfg.target_y_m[0], cfg.target_y_m[1]);
    let tilt = rng.uniform(cfg.tilt_deg[0], cfg.tilt_deg[1]).to_radians();
    let roll = rng.uniform(cfg.roll_deg[0], cfg.roll_deg[1]).to_radians();
    let hfov = rng.uniform(cfg.hfov_deg[0], cfg.hfov_deg[1]).to_radians();
    if cfg.mirror_y && rng.bernoulli(0.5) {
        y = -y;
        ty = -ty;
    }
    let yaw = (ty - y).atan2(tx - x);
    CameraModel {
        intrinsics: CameraIntrinsics::from_hfov(cfg.image_size[0], cfg.image_size[1], hfov),
        pose: CameraPose::new([x, y, z], yaw, tilt, roll),
    }
}

fn acceptable(c: &CameraModel, min_depth: f64) -> bool {
    let center = c.project(&PitchPoint::new(0.0, 0.0));
    let (w, h) = (c.width() as f64, c.height() as f64);
    let centered = center.valid
        && center.point.u >= 0.1 * w
        && center.point.u <= 0.9 * w
        && center.point.v >= 0.1 * h
        && center.point.v <= 0.9 * h;
    centered && standard_template().keypoints.iter().all(|k| c.project(k).depth.abs() >= min_depth)
}

/// Draws a camera from `cfg`, resampling until the pitch center falls in the
/// central 80% of the frame.
pub fn sample_camera(rng: &mut RandomStream, cfg: &CameraRange) -> Result<CameraModel> {
    cfg.validate()?;
    for _ in 0..MAX_CAMERA_ATTEMPTS {
        let c = sample_once(rng, cfg);
        if acceptable(&c, cfg.min_keypoint_depth_m) {
            return Ok(c);
        }
    }
    Err(Error::UnsatisfiableRange { attempts: MAX_CAMERA_ATTEMPTS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn straight_down(z: f64) -> CameraModel {
        CameraModel {
            intrinsics: CameraIntrinsics::from_hfov(256, 256, 90f64.to_radians()),
            pose: CameraPose::new([0.0, 0.0, z], FRAC_PI_2, FRAC_PI_2, 0.0),
        }
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let c = straight_down(20.0);
        let pr = c.project(&PitchPoint::new(0.0, 0.0));
        assert!(pr.valid);
        assert!((pr.depth - 20.0).abs() < 1e-12);
        assert!((pr.point.u - 128.0).abs() < 1e-12 && (pr.point.v - 128.0).abs() < 1e-12);
    }

    #[test]
    fn straight_down_orientation() {
        let c = straight_down(20.0);
        let a = c.project(&PitchPoint::new(1.0, 0.0)).point;
        let b = c.project(&PitchPoint::new(-1.0, 0.0)).point;
        assert!((a.u + b.u - 256.0).abs() < 1e-9 && (a.v - b.v).abs() < 1e-9);
        // +x to the right, +y up the image
        assert!(a.u > 128.0);
        assert!(c.project(&PitchPoint::new(0.0, 1.0)).point.v < 128.0);
    }

    #[test]
    fn homography_maps_origin_to_principal_point() {
        let c = straight_down(20.0);
        let h = c.ground_homography().unwrap();
        let p = h.apply([0.0, 0.0]).unwrap();
        assert!((p[0] - 128.0).abs() < 1e-12 && (p[1] - 128.0).abs() < 1e-12);
        assert!(h.determinant().abs() > 0.0);
    }

    #[test]
    fn ground_plane_camera_is_singular() {
        let mut c = straight_down(20.0);
        c.pose.position[2] = 0.0;
        assert!(matches!(c.ground_homography(), Err(Error::SingularConfiguration(_))));
    }

    #[test]
    fn rotation_orthonormal() {
        let mut rng = RandomStream::from_seed(11);
        for _ in 0..100 {
            let pose = CameraPose::new(
                [0.0, 0.0, 10.0],
                rng.uniform(-3.2, 3.2),
                rng.uniform(-1.5, 1.6),
                rng.uniform(-0.3, 0.3),
            );
            let r = pose.rotation();
            let err = (r * r.transpose() - Matrix3::identity()).abs().max();
            assert!(err < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn visibility() {
        let c = straight_down(40.0);
        assert!(c.visible(&PitchPoint::new(0.0, 0.0)));
        // point behind a horizontal camera
        let level = CameraModel {
            intrinsics: c.intrinsics,
            pose: CameraPose::new([0.0, 0.0, 5.0], 0.0, 0.0, 0.0),
        };
        let behind = PitchPoint::new(-20.0, 0.0);
        assert!(!level.project(&behind).valid);
        assert!(!level.visible(&behind));
    }

    #[test]
    fn off_frame_projection_is_invisible() {
        // principal point shifted so that the center spot lands at (-5, 40)
        let mut c = straight_down(20.0);
        c.intrinsics.principal_point = [-5.0, 40.0];
        let p = PitchPoint::new(0.0, 0.0);
        let pr = c.project(&p);
        assert!((pr.point.u + 5.0).abs() < 1e-12 && (pr.point.v - 40.0).abs() < 1e-12);
        assert!(!c.visible(&p));
    }

    #[test]
    fn collapsed_range_gives_exact_camera() {
        let cfg = CameraRange {
            x_m: [5.0, 5.0],
            y_m: [-50.0, -50.0],
            mirror_y: false,
            z_m: [20.0, 20.0],
            tilt_deg: [25.0, 25.0],
            roll_deg: [1.0, 1.0],
            hfov_deg: [50.0, 50.0],
            target_x_m: [0.0, 0.0],
            target_y_m: [0.0, 0.0],
            image_size: [256, 256],
            min_keypoint_depth_m: 0.0,
        };
        let c = sample_camera(&mut RandomStream::from_seed(1), &cfg).unwrap();
        let expected = CameraModel {
            intrinsics: CameraIntrinsics::from_hfov(256, 256, 50f64.to_radians()),
            pose: CameraPose::new([5.0, -50.0, 20.0], 50f64.atan2(-5.0), 25f64.to_radians(), 1f64.to_radians()),
        };
        assert_eq!(c, expected);
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = CameraRange::default();
        let a = sample_camera(&mut RandomStream::from_seed(99), &cfg).unwrap();
        let b = sample_camera(&mut RandomStream::from_seed(99), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unsatisfiable_range() {
        let cfg = CameraRange {
            tilt_deg: [-80.0, -70.0],
            ..CameraRange::default()
        };
        assert!(matches!(
            sample_camera(&mut RandomStream::from_seed(2), &cfg),
            Err(Error::UnsatisfiableRange { attempts: 1000 })
        ));
    }

    #[test]
    fn empty_range_rejected() {
        let cfg = CameraRange { z_m: [10.0, 5.0], ..CameraRange::default() };
        assert!(matches!(sample_camera(&mut RandomStream::from_seed(2), &cfg), Err(Error::Domain(_))));
    }
}
