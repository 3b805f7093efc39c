//! Keypoint metrics, overlay drawing, and evaluation of a predictor over a
//! dataset's test split.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::ImagePoint;
use crate::dataset::{AnnotationRecord, Dataset};
use crate::error::{Error, Result};
use crate::geom::{
    camera_footprint, fit_homography, locate_player, pitch_mask_polygon, Correspondence, Homography,
    PitchPolygon,
};
use crate::nn::{predict, Network};
use crate::pitch::{standard_template, PitchPoint, PitchTemplate};
use crate::raster::ImageBuffer;

pub const KEYPOINT_COLOR: [f32; 3] = [0.0, 1.0, 0.0];
pub const POLYGON_COLOR: [f32; 3] = [0.0, 1.0, 1.0];
pub const PLAYER_COLOR: [f32; 3] = [1.0, 0.0, 0.0];
pub const FOOTPRINT_COLOR: [f32; 3] = [1.0, 1.0, 0.0];

/// Denormalizes interleaved `(u/w, v/h)` pairs.
pub fn keypoints_from_norm(norm: &[f64], image_size: (u32, u32)) -> Vec<ImagePoint> {
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    norm.chunks_exact(2).map(|p| ImagePoint::new(p[0] * w, p[1] * h)).collect()
}

/// Mean pixel distance between corresponding keypoints of two normalized
/// vectors.
pub fn mean_keypoint_error(pred: &[f64], truth: &[f64], image_size: (u32, u32)) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() || pred.len() % 2 != 0 {
        return Err(Error::shape(
            "mean_keypoint_error",
            format!("prediction of length {} against truth of length {}", pred.len(), truth.len()),
        ));
    }
    let (a, b) = (keypoints_from_norm(pred, image_size), keypoints_from_norm(truth, image_size));
    Ok(a.iter().zip(&b).map(|(p, q)| p.distance(q)).sum::<f64>() / a.len() as f64)
}

/// Homography fitted to predicted keypoints, using those that land inside
/// the frame, or all of them when fewer than four do.
pub fn fit_from_keypoints(
    template: &PitchTemplate,
    keypoints: &[ImagePoint],
    image_size: (u32, u32),
) -> Result<Homography> {
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    let pairs: Vec<Correspondence> =
        template.keypoints.iter().zip(keypoints).map(|(p, k)| Correspondence::new(*p, *k)).collect();
    let inside: Vec<Correspondence> = pairs
        .iter()
        .filter(|c| (0.0..=w).contains(&c.image.u) && (0.0..=h).contains(&c.image.v))
        .copied()
        .collect();
    fit_homography(if inside.len() >= 4 { &inside } else { &pairs })
}

/// Everything derived from one image's predicted keypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub keypoints_norm: Vec<f64>,
    pub homography: Homography,
    pub pitch_polygon: Vec<ImagePoint>,
    pub footprint_m: Vec<PitchPoint>,
}

/// Predicts keypoints on `image` (resampled to the network input when its
/// size differs) and fits the pitch geometry in the image's own pixels.
pub fn infer(net: &Network, image: &ImageBuffer) -> Result<Inference> {
    let template = standard_template();
    let size = (image.width(), image.height());
    let [_, h, w] = net.input_shape();
    let keypoints_norm = predict(net, &image.resized(w as u32, h as u32))?;
    let homography = fit_from_keypoints(&template, &keypoints_from_norm(&keypoints_norm, size), size)?;
    let pitch_polygon = pitch_mask_polygon(&homography, &template, size)?.map(|p| p.vertices().to_vec()).unwrap_or_default();
    let footprint_m = camera_footprint(&homography, size)?;
    Ok(Inference { keypoints_norm, homography, pitch_polygon, footprint_m })
}

/// Optional layers drawn by [`render_overlay`].
#[derive(Debug, Clone, Default)]
pub struct Overlay<'a> {
    pub keypoints: &'a [ImagePoint],
    pub polygon: Option<&'a PitchPolygon>,
    /// Image-space outline of the visible ground.
    pub footprint: Option<&'a [ImagePoint]>,
    pub players: &'a [ImagePoint],
}

impl<'a> Overlay<'a> {
    /// Layers for an annotation: ground-truth keypoints, pitch polygon,
    /// footprint outline and player feet.
    pub fn annotation_layers(
        rec: &'a AnnotationRecord,
        polygon: Option<&'a PitchPolygon>,
        footprint: Option<&'a [ImagePoint]>,
        players: &'a [ImagePoint],
    ) -> Self {
        Self { keypoints: &rec.keypoints_px, polygon, footprint, players }
    }
}

struct Canvas {
    img: ImageBuffer,
}

impl Canvas {
    fn plot(&mut self, x: i64, y: i64, rgb: [f32; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.set(x as u32, y as u32, rgb);
        }
    }

    /// Segment clipped to the canvas, stepped one pixel at a time.
    fn line(&mut self, a: ImagePoint, b: ImagePoint, rgb: [f32; 3]) {
        let (w, h) = (self.img.width() as f64, self.img.height() as f64);
        let (dx, dy) = (b.u - a.u, b.v - a.v);
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for (p, q) in [(-dx, a.u), (dx, w - a.u), (-dy, a.v), (dy, h - a.v)] {
            if p == 0.0 {
                if q < 0.0 {
                    return;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
            }
        }
        if t0 > t1 || !t0.is_finite() || !t1.is_finite() {
            return;
        }
        let steps = ((t1 - t0) * dx.abs().max(dy.abs())).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = t0 + (t1 - t0) * s as f64 / steps as f64;
            self.plot((a.u + t * dx).floor() as i64, (a.v + t * dy).floor() as i64, rgb);
        }
    }

    fn outline(&mut self, pts: &[ImagePoint], rgb: [f32; 3]) {
        for i in 0..pts.len() {
            self.line(pts[i], pts[(i + 1) % pts.len()], rgb);
        }
    }
}

/// Draws the requested layers onto a copy of `img`: footprint (yellow),
/// pitch polygon (cyan), player feet (red discs), keypoints (green crosses).
/// Off-frame keypoints appear as hollow squares pinned to the border.
pub fn render_overlay(img: &ImageBuffer, layers: &Overlay<'_>) -> ImageBuffer {
    let mut c = Canvas { img: img.clone() };
    if let Some(f) = layers.footprint {
        c.outline(f, FOOTPRINT_COLOR);
    }
    if let Some(p) = layers.polygon {
        c.outline(p.vertices(), POLYGON_COLOR);
    }
    for p in layers.players {
        let (x, y) = (p.u.floor() as i64, p.v.floor() as i64);
        for dy in -3i64..=3 {
            for dx in -3i64..=3 {
                if dx * dx + dy * dy <= 9 {
                    c.plot(x + dx, y + dy, PLAYER_COLOR);
                }
            }
        }
    }
    let (w, h) = (img.width() as f64, img.height() as f64);
    for k in layers.keypoints {
        if !(k.u.is_finite() && k.v.is_finite()) {
            continue;
        }
        let in_frame = (0.0..w).contains(&k.u) && (0.0..h).contains(&k.v);
        let x = k.u.clamp(0.0, w - 1.0).floor() as i64;
        let y = k.v.clamp(0.0, h - 1.0).floor() as i64;
        if in_frame {
            for d in -3i64..=3 {
                c.plot(x + d, y, KEYPOINT_COLOR);
                c.plot(x, y + d, KEYPOINT_COLOR);
            }
        } else {
            for d in -2i64..=2 {
                for (px, py) in [(x + d, y - 2), (x + d, y + 2), (x - 2, y + d), (x + 2, y + d)] {
                    c.plot(px, py, KEYPOINT_COLOR);
                }
            }
        }
    }
    c.img
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

/// Linear-interpolation percentile of a sorted slice, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: percentile(&v, 0.5),
            p95: percentile(&v, 0.95),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub id: u64,
    pub mean_kp_error_px: f64,
    /// Mean distance between the fitted homography's keypoint projections
    /// and the true in-frame keypoints; `None` when no fit was possible.
    pub reproj_error_px: Option<f64>,
    /// Mean localization error over the image's players, through the fitted
    /// homography and the true foot points.
    pub player_error_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ImageEval>,
    pub keypoint_error_px: Summary,
    pub reprojection_error_px: Option<Summary>,
    pub player_error_m: Option<Summary>,
    pub failed_fits: usize,
}

fn evaluate_one(template: &PitchTemplate, rec: &AnnotationRecord, pred: &[f64]) -> Result<ImageEval> {
    let size = rec.image_size();
    let mean_kp_error_px = mean_keypoint_error(pred, &rec.keypoints_norm, size)?;
    let (reproj_error_px, player_error_m) = match fit_from_keypoints(template, &keypoints_from_norm(pred, size), size) {
        Ok(hfit) => {
            let mut errs = Vec::new();
            for ((k, truth), &vis) in template.keypoints.iter().zip(&rec.keypoints_px).zip(&rec.visibility) {
                if vis {
                    errs.push(hfit.map_pitch(k).map_or(f64::INFINITY, |p| p.distance(truth)));
                }
            }
            let reproj = (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64);
            let players: Vec<f64> = rec
                .players_gt
                .iter()
                .map(|p| locate_player(&hfit, &p.foot).map_or(f64::INFINITY, |l| l.position.distance(&p.position)))
                .collect();
            let player = (!players.is_empty()).then(|| players.iter().sum::<f64>() / players.len() as f64);
            (reproj, player)
        }
        Err(_) => (None, None),
    };
    Ok(ImageEval { id: rec.id, mean_kp_error_px, reproj_error_px, player_error_m })
}

/// Scores `predictor` on the given ids. Rows come back in id order.
pub fn evaluate_with<F>(ds: &Dataset, ids: impl IntoIterator<Item = u64>, predictor: F) -> Result<EvalReport>
where
    F: Fn(&ImageBuffer, &AnnotationRecord) -> Result<Vec<f64>> + Sync,
{
    let template = standard_template();
    let ids: Vec<u64> = ids.into_iter().collect();
    if ids.is_empty() {
        return Err(Error::InsufficientData(0));
    }
    let rows: Vec<ImageEval> = ids
        .par_iter()
        .map(|&id| {
            let rec = ds.record(id)?;
            let img = ds.load_image(id, true)?;
            evaluate_one(&template, rec, &predictor(&img, rec)?)
        })
        .collect::<Result<_>>()?;
    let kp: Vec<f64> = rows.iter().map(|r| r.mean_kp_error_px).collect();
    let reproj: Vec<f64> = rows.iter().filter_map(|r| r.reproj_error_px).collect();
    let players: Vec<f64> = rows.iter().filter_map(|r| r.player_error_m).collect();
    let failed_fits = rows.iter().filter(|r| r.reproj_error_px.is_none()).count();
    Ok(EvalReport {
        keypoint_error_px: Summary::of(&kp).expect("at least one row"),
        reprojection_error_px: Summary::of(&reproj),
        player_error_m: Summary::of(&players),
        failed_fits,
        rows,
    })
}

/// Evaluates saved weights on a dataset's test split.
pub fn evaluate(weights_path: &Path, dataset_dir: &Path) -> Result<EvalReport> {
    let net = crate::nn::load_weights(weights_path)?;
    let ds = Dataset::open(dataset_dir)?;
    let [_, h, w] = net.input_shape();
    let first = ds.record(ds.test_ids().start)?;
    if first.image_size() != (w as u32, h as u32) {
        return Err(Error::shape(
            "evaluate",
            format!("dataset images are {:?}, network expects {w}x{h}", first.image_size()),
        ));
    }
    evaluate_with(&ds, ds.test_ids(), |img, _| predict(&net, img))
}

/// One row per image: `id,mean_kp_error_px,reproj_error_px,player_error_m`,
/// with empty cells where a value does not exist.
pub fn write_report_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut text = String::from("id,mean_kp_error_px,reproj_error_px,player_error_m\n");
    for r in &report.rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.id,
            r.mean_kp_error_px,
            cell(r.reproj_error_px),
            cell(r.player_error_m)
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
