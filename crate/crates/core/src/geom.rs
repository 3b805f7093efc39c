//! Ground-plane homography fitting and the real-world geometry built on it:
//! player localization, camera footprint and the field culling polygon.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::ImagePoint;
use crate::error::{Error, Result};
use crate::pitch::{PitchPoint, PitchTemplate};

/// Smallest admissible homogeneous denominator, measured on the
/// unit-Frobenius-norm representative.
pub const HORIZON_TOLERANCE: f64 = 1e-12;
/// Upper bound on the condition number of the normalized design matrix.
pub const MAX_CONDITION: f64 = 1e12;
/// Players further than this outside the touchlines are flagged.
pub const FIELD_MARGIN_M: f64 = 10.0;
/// The camera footprint is cut where depth exceeds this multiple of the
/// nearest visible depth, which keeps it bounded when the horizon is in frame.
pub const FOOTPRINT_DEPTH_RATIO: f64 = 100.0;

/// Projective map of the plane, defined up to scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 9]", into = "[f64; 9]")]
pub struct Homography {
    m: Matrix3<f64>,
}

impl From<[f64; 9]> for Homography {
    fn from(h: [f64; 9]) -> Self {
        Self { m: Matrix3::from_row_slice(&h) }
    }
}

impl From<Homography> for [f64; 9] {
    fn from(h: Homography) -> Self {
        h.to_row_major()
    }
}

impl Homography {
    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        Self { m }
    }

    pub fn identity() -> Self {
        Self { m: Matrix3::identity() }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { m: self.m * factor }
    }

    pub fn determinant(&self) -> f64 {
        self.m.determinant()
    }

    /// Unit Frobenius norm with a positive bottom-right entry whenever that
    /// entry is distinguishable from zero.
    pub fn normalized(&self) -> Self {
        let mut m = self.m / self.m.norm();
        if m[(2, 2)] < -HORIZON_TOLERANCE {
            m = -m;
        }
        Self { m }
    }

    /// Representative whose homogeneous denominator is positive in front of
    /// the camera.
    ///
    /// A pitch-to-image map built as `s·K·[r1 r2 t]` for a camera above the
    /// ground has `det = -s³·f²·z`, so a negative determinant means `s > 0`
    /// and the third row evaluates to a positive multiple of depth.
    pub fn front_facing(&self) -> Self {
        let m = self.m / self.m.norm();
        if m.determinant() > 0.0 {
            Self { m: -m }
        } else {
            Self { m }
        }
    }

    /// Dehomogenized image of `p`.
    pub fn apply(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        let v = self.m * Vector3::new(p[0], p[1], 1.0);
        if (v.z / self.m.norm()).abs() <= HORIZON_TOLERANCE || !v.z.is_finite() {
            return Err(Error::AtInfinity);
        }
        Ok([v.x / v.z, v.y / v.z])
    }

    pub fn invert(&self) -> Result<Self> {
        let unit = self.m / self.m.norm();
        if unit.determinant().abs() <= HORIZON_TOLERANCE {
            return Err(Error::Degenerate("homography is singular".into()));
        }
        let inv = unit
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("homography is singular".into()))?;
        Ok(Self { m: inv }.normalized())
    }

    pub fn map_pitch(&self, p: &PitchPoint) -> Result<ImagePoint> {
        self.apply([p.x, p.y]).map(|[u, v]| ImagePoint::new(u, v))
    }
}

/// A pitch point paired with where it appears in the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub pitch: PitchPoint,
    pub image: ImagePoint,
    pub weight: f64,
}

impl Correspondence {
    pub fn new(pitch: PitchPoint, image: ImagePoint) -> Self {
        Self { pitch, image, weight: 1.0 }
    }
}

/// Similarity that moves the weighted centroid to the origin and scales the
/// weighted mean distance to √2. Returned as a 3×3 matrix.
fn hartley_transform(points: &[[f64; 2]], weights: &[f64]) -> Result<Matrix3<f64>> {
    let total: f64 = weights.iter().sum();
    let (mut cx, mut cy) = (0.0, 0.0);
    for (p, w) in points.iter().zip(weights) {
        cx += w * p[0];
        cy += w * p[1];
    }
    cx /= total;
    cy /= total;
    let mean_dist =
        points.iter().zip(weights).map(|(p, w)| w * (p[0] - cx).hypot(p[1] - cy)).sum::<f64>() / total;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return Err(Error::Degenerate("correspondences collapse to a single point".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform(t: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    // similarity: bottom row is (0, 0, 1)
    [t[(0, 0)] * p[0] + t[(0, 2)], t[(1, 1)] * p[1] + t[(1, 2)]]
}

/// Normalized weighted DLT estimate of the pitch-to-image homography.
pub fn estimate_homography(cs: &[Correspondence]) -> Result<Homography> {
    if cs.len() < 4 {
        return Err(Error::InsufficientData(cs.len()));
    }
    for c in cs {
        let vals = [c.pitch.x, c.pitch.y, c.image.u, c.image.v, c.weight];
        if vals.iter().any(|v| !v.is_finite()) || !(c.weight > 0.0) {
            return Err(Error::Domain(format!("invalid correspondence {c:?}")));
        }
    }
    let weights: Vec<f64> = cs.iter().map(|c| c.weight).collect();
    let src: Vec<[f64; 2]> = cs.iter().map(|c| [c.pitch.x, c.pitch.y]).collect();
    let dst: Vec<[f64; 2]> = cs.iter().map(|c| [c.image.u, c.image.v]).collect();
    let t_src = hartley_transform(&src, &weights)?;
    let t_dst = hartley_transform(&dst, &weights)?;

    // A square-or-taller design matrix keeps the full right singular basis.
    let rows = (2 * cs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, ((s, d), w)) in src.iter().zip(&dst).zip(&weights).enumerate() {
        let [x, y] = transform(&t_src, *s);
        let [u, v] = transform(&t_dst, *d);
        let sw = w.sqrt();
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = sw * r0[j];
            a[(2 * i + 1, j)] = sw * r1[j];
        }
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sigma = |k: usize| svd.singular_values[order[k]];
    // The solution is the null direction; it is unique only when the
    // remaining eight directions are well separated from it.
    let condition = sigma(0) / sigma(7);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Degenerate(format!(
            "design matrix condition number {condition:e} exceeds {MAX_CONDITION:e}"
        )));
    }
    let h = v_t.row(order[8]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("image points collapse".into()))?;
    Ok(Homography::from_matrix(t_dst_inv * hn * t_src).normalized())
}

/// Weighted squared distance between `h(src)` and `dst` over point pairs;
/// `None` when a point maps to the horizon.
fn reprojection_cost(h: &[f64; 9], pts: &[([f64; 2], [f64; 2], f64)]) -> Option<f64> {
    let mut cost = 0.0;
    for (s, d, w) in pts {
        let c = h[6] * s[0] + h[7] * s[1] + h[8];
        if c.abs() <= HORIZON_TOLERANCE {
            return None;
        }
        let u = (h[0] * s[0] + h[1] * s[1] + h[2]) / c;
        let v = (h[3] * s[0] + h[4] * s[1] + h[5]) / c;
        cost += w * ((u - d[0]).powi(2) + (v - d[1]).powi(2));
    }
    Some(cost)
}

/// Levenberg-Marquardt descent from `initial` on the weighted sum of squared
/// image distances. The result never has a higher cost than `initial`.
pub fn refine_homography(initial: &Homography, cs: &[Correspondence]) -> Result<Homography> {
    if cs.len() < 4 {
        return Err(Error::InsufficientData(cs.len()));
    }
    let weights: Vec<f64> = cs.iter().map(|c| c.weight).collect();
    let src: Vec<[f64; 2]> = cs.iter().map(|c| [c.pitch.x, c.pitch.y]).collect();
    let dst: Vec<[f64; 2]> = cs.iter().map(|c| [c.image.u, c.image.v]).collect();
    let t_src = hartley_transform(&src, &weights)?;
    let t_dst = hartley_transform(&dst, &weights)?;
    let t_src_inv = t_src.try_inverse().ok_or_else(|| Error::Degenerate("pitch points collapse".into()))?;
    let t_dst_inv = t_dst.try_inverse().ok_or_else(|| Error::Degenerate("image points collapse".into()))?;
    // t_dst is a similarity, so distances in its frame are image distances
    // times one constant and the minimizer is unchanged.
    let pts: Vec<([f64; 2], [f64; 2], f64)> =
        src.iter().zip(&dst).zip(&weights).map(|((s, d), &w)| (transform(&t_src, *s), transform(&t_dst, *d), w)).collect();
    let start = (t_dst * initial.matrix() * t_src_inv).normalize();
    let mut h: [f64; 9] = std::array::from_fn(|i| start[(i / 3, i % 3)]);
    let Some(mut cost) = reprojection_cost(&h, &pts) else {
        return Ok(*initial);
    };
    let mut lambda = 1e-3;
    for _ in 0..100 {
        let mut jtj = nalgebra::SMatrix::<f64, 9, 9>::zeros();
        let mut jtr = nalgebra::SVector::<f64, 9>::zeros();
        for (s, d, w) in &pts {
            let x = [s[0], s[1], 1.0];
            let c = h[6] * x[0] + h[7] * x[1] + h[8];
            let u = (h[0] * x[0] + h[1] * x[1] + h[2]) / c;
            let v = (h[3] * x[0] + h[4] * x[1] + h[5]) / c;
            let mut ju = nalgebra::SVector::<f64, 9>::zeros();
            let mut jv = nalgebra::SVector::<f64, 9>::zeros();
            for k in 0..3 {
                ju[k] = x[k] / c;
                ju[6 + k] = -u * x[k] / c;
                jv[3 + k] = x[k] / c;
                jv[6 + k] = -v * x[k] / c;
            }
            jtj += *w * (ju * ju.transpose() + jv * jv.transpose());
            jtr += *w * (ju * (u - d[0]) + jv * (v - d[1]));
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut damped = jtj;
            for k in 0..9 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|ch| ch.solve(&-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: [f64; 9] = std::array::from_fn(|k| h[k] + step[k]);
            let norm = trial.iter().map(|x| x * x).sum::<f64>().sqrt();
            trial.iter_mut().for_each(|x| *x /= norm);
            match reprojection_cost(&trial, &pts) {
                Some(c) if c < cost => {
                    let gain = (cost - c) / cost.max(f64::MIN_POSITIVE);
                    h = trial;
                    cost = c;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = gain > 1e-12;
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !improved {
            break;
        }
    }
    let hn = Matrix3::from_row_slice(&h);
    Ok(Homography::from_matrix(t_dst_inv * hn * t_src).normalized())
}

/// Normalized DLT followed by [`refine_homography`]: the estimator used on
/// measured keypoints.
pub fn fit_homography(cs: &[Correspondence]) -> Result<Homography> {
    refine_homography(&estimate_homography(cs)?, cs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlayerLocation {
    pub position: PitchPoint,
    /// Set when the position lies beyond the pitch plus [`FIELD_MARGIN_M`].
    pub out_of_field: bool,
}

/// Back-projects a player's foot point onto the pitch.
pub fn locate_player(pitch_to_image: &Homography, foot: &ImagePoint) -> Result<PlayerLocation> {
    let inv = pitch_to_image.invert()?;
    let [x, y] = inv.apply([foot.u, foot.v])?;
    let position = PitchPoint::new(x, y);
    let out_of_field = x.abs() > crate::pitch::PITCH_LENGTH_M / 2.0 + FIELD_MARGIN_M
        || y.abs() > crate::pitch::PITCH_WIDTH_M / 2.0 + FIELD_MARGIN_M;
    Ok(PlayerLocation { position, out_of_field })
}

/// Convex image-space polygon covering the visible part of the pitch.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchPolygon {
    vertices: Vec<ImagePoint>,
}

impl PitchPolygon {
    /// Accepts a convex polygon in either winding and stores it
    /// counter-clockwise (positive shoelace area in image coordinates).
    pub fn from_vertices(mut vertices: Vec<ImagePoint>) -> Result<Self> {
        let pts: Vec<[f64; 2]> = vertices.iter().map(|v| [v.u, v.v]).collect();
        let area = signed_area(&pts);
        if pts.len() < 3 || !area.is_finite() || area == 0.0 {
            return Err(Error::Degenerate(format!("{} vertices enclose no area", pts.len())));
        }
        let n = pts.len();
        let turns_agree = (0..n).all(|i| {
            let (a, b, c) = (pts[i], pts[(i + 1) % n], pts[(i + 2) % n]);
            let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
            cross * area.signum() >= -1e-9
        });
        if !turns_agree {
            return Err(Error::Degenerate("polygon is not convex".into()));
        }
        if area < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[ImagePoint] {
        &self.vertices
    }

    /// Point-in-polygon test (boundary counts as inside).
    pub fn contains(&self, p: &ImagePoint) -> bool {
        let pts: Vec<[f64; 2]> = self.vertices.iter().map(|v| [v.u, v.v]).collect();
        convex_contains(&pts, [p.u, p.v], 1e-9)
    }
}

/// Clip a polygon against the half-plane `a·x + b·y + c >= 0`.
pub(crate) fn clip_half_plane(poly: &[[f64; 2]], a: f64, b: f64, c: f64) -> Vec<[f64; 2]> {
    let side = |p: &[f64; 2]| a * p[0] + b * p[1] + c;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let cur = poly[i];
        let next = poly[(i + 1) % poly.len()];
        let (sc, sn) = (side(&cur), side(&next));
        if sc >= 0.0 {
            out.push(cur);
        }
        if (sc >= 0.0) != (sn >= 0.0) {
            let t = sc / (sc - sn);
            out.push([cur[0] + t * (next[0] - cur[0]), cur[1] + t * (next[1] - cur[1])]);
        }
    }
    out
}

pub(crate) fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        / 2.0
}

fn convex_contains(poly: &[[f64; 2]], p: [f64; 2], tol: f64) -> bool {
    if poly.len() < 3 {
        return false;
    }
    let orient = signed_area(poly).signum();
    (0..poly.len()).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let scale = (b[0] - a[0]).hypot(b[1] - a[1]).max(1.0);
        orient * cross >= -tol * scale
    })
}

/// Clip `subject` against every edge of the convex polygon `clip`.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let orient = signed_area(clip).signum();
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (p, q) = (clip[i], clip[(i + 1) % clip.len()]);
        // left of p→q for a counter-clockwise clip polygon
        let a = -(q[1] - p[1]) * orient;
        let b = (q[0] - p[0]) * orient;
        let c = -(a * p[0] + b * p[1]);
        out = clip_half_plane(&out, a, b, c);
    }
    out
}

/// Ground-plane polygon of terrain seen through the image rectangle.
///
/// The image rectangle is clipped against the horizon first; when the
/// horizon is in frame, the cut is placed where depth reaches
/// [`FOOTPRINT_DEPTH_RATIO`] times the nearest visible depth. Returns an
/// empty list when the whole frame lies above the horizon.
pub fn camera_footprint(pitch_to_image: &Homography, image_size: (u32, u32)) -> Result<Vec<PitchPoint>> {
    let front = pitch_to_image.front_facing();
    let inv = front
        .matrix()
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("homography is singular".into()))?;
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    let corners = [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]];
    // g·(u, v, 1) is proportional to 1 / depth
    let g = inv.row(2);
    let inv_depth = |p: &[f64; 2]| g[0] * p[0] + g[1] * p[1] + g[2];
    let nearest = corners.iter().map(inv_depth).fold(f64::NEG_INFINITY, f64::max);
    if !(nearest > 0.0) {
        return Ok(Vec::new());
    }
    let clipped = clip_half_plane(&corners, g[0], g[1], g[2] - nearest / FOOTPRINT_DEPTH_RATIO);
    let mut out = Vec::with_capacity(clipped.len());
    for p in &clipped {
        let v = inv * Vector3::new(p[0], p[1], 1.0);
        if v.z.abs() <= f64::MIN_POSITIVE {
            return Err(Error::AtInfinity);
        }
        out.push(PitchPoint::new(v.x / v.z, v.y / v.z));
    }
    Ok(out)
}

/// Image-space culling polygon of the pitch area, or `None` when no part of
/// the pitch is in frame.
pub fn pitch_mask_polygon(
    pitch_to_image: &Homography,
    template: &PitchTemplate,
    image_size: (u32, u32),
) -> Result<Option<PitchPolygon>> {
    let footprint: Vec<[f64; 2]> =
        camera_footprint(pitch_to_image, image_size)?.iter().map(|p| [p.x, p.y]).collect();
    if footprint.len() < 3 {
        return Ok(None);
    }
    let rect: Vec<[f64; 2]> = template.boundary().iter().map(|p| [p.x, p.y]).collect();
    let ground = clip_convex(&rect, &footprint);
    if ground.len() < 3 {
        return Ok(None);
    }
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    let mut image = Vec::with_capacity(ground.len());
    for p in &ground {
        let [u, v] = pitch_to_image.apply(*p)?;
        image.push([u.clamp(0.0, w), v.clamp(0.0, h)]);
    }
    image.dedup_by(|a, b| (a[0] - b[0]).hypot(a[1] - b[1]) < 1e-9);
    while image.len() > 1 && (image[0][0] - image[image.len() - 1][0]).hypot(image[0][1] - image[image.len() - 1][1]) < 1e-9 {
        image.pop();
    }
    if image.len() < 3 || signed_area(&image).abs() < 1e-9 {
        return Ok(None);
    }
    if signed_area(&image) < 0.0 {
        image.reverse();
    }
    Ok(Some(PitchPolygon { vertices: image.into_iter().map(|[u, v]| ImagePoint::new(u, v)).collect() }))
}
