//! Deterministic software renderer for the synthetic pitch scenes.
//!
//! Every output sample is ray-cast: the ray through a sub-pixel either hits a
//! player billboard, a stand (stadium scenes), the ground plane, or escapes to
//! the background. Sub-samples are averaged with a box filter.

use std::io::Cursor;
use std::sync::Arc as Shared;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, ImagePoint};
use crate::dataset::AnnotationRecord;
use crate::error::{Error, Result};
use crate::pitch::{PitchPoint, PitchTemplate, Segment, APRON_M};
use crate::rng::RandomStream;

pub const ARC_POLYLINE_SEGMENTS: usize = 64;
pub const DEFAULT_SUPERSAMPLE: u32 = 2;
/// Ground samples closer to the camera plane than this are discarded.
pub const NEAR_CLIP_M: f64 = 0.01;
/// Half the shoulder width of a player billboard.
pub const PLAYER_RADIUS_M: f64 = 0.25;

/// RGB image with channel values in `[0, 1]`, stored row-major and interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(Error::shape(
                "ImageBuffer::from_raw",
                format!("{} values for {width}x{height}x3", data.len()),
            ));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access for in-place filters; callers keep values in `[0, 1]`.
    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn get(&self, x: u32, y: u32) -> [f32; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: [f32; 3]) {
        let o = self.offset(x, y);
        for c in 0..3 {
            self.data[o + c] = rgb[c].clamp(0.0, 1.0);
        }
    }

    /// Rec. 601 luma.
    pub fn luma(&self, x: u32, y: u32) -> f32 {
        let [r, g, b] = self.get(x, y);
        0.299 * r + 0.587 * g + 0.114 * b
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_rgb8(width: u32, height: u32, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width as usize * height as usize * 3 {
            return Err(Error::shape("ImageBuffer::from_rgb8", format!("{} bytes", bytes.len())));
        }
        Ok(Self { width, height, data: bytes.iter().map(|&b| b as f32 / 255.0).collect() })
    }

    /// 8-bit RGB PNG encoding.
    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        image::RgbImage::from_raw(self.width, self.height, self.to_rgb8())
            .expect("buffer length matches dimensions")
            .write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)
            .expect("in-memory PNG encoding");
        out
    }

    pub fn decode_png(bytes: &[u8]) -> std::result::Result<Self, image::ImageError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8();
        let (w, h) = img.dimensions();
        Ok(Self::from_rgb8(w, h, img.as_raw()).expect("decoded buffer matches its dimensions"))
    }

    /// Bilinear resample to `width × height`.
    pub fn resized(&self, width: u32, height: u32) -> Self {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let src = image::RgbImage::from_raw(self.width, self.height, self.to_rgb8()).expect("buffer length matches");
        let out = image::imageops::resize(&src, width, height, image::imageops::FilterType::Triangle);
        Self::from_rgb8(width, height, out.as_raw()).expect("resized buffer matches its dimensions")
    }

    /// Loads any supported image file and resizes it to `width × height`.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::format(path, e))?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_rgb8(w, h, img.as_raw())
    }

    pub fn load_resized(path: &std::path::Path, width: u32, height: u32) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::format(path, e))?
            .resize_exact(width, height, image::imageops::FilterType::Triangle)
            .to_rgb8();
        Self::from_rgb8(width, height, img.as_raw())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Flat,
    Background,
    Lighting,
    Players,
    Stadium,
    Artifacts,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackgroundSource {
    Solid([f32; 3]),
    /// Procedural color-noise quilt generated from the seed.
    Quilt { seed: u64 },
    Image(Shared<ImageBuffer>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Light {
    pub ambient: f64,
    pub directional: f64,
    /// Unit vector pointing toward the light.
    pub direction: [f64; 3],
}

impl Light {
    /// Plain albedo: no shading at all.
    pub const UNLIT: Light = Light { ambient: 1.0, directional: 0.0, direction: [0.0, 0.0, 1.0] };

    fn shade(&self, normal: &Vector3<f64>) -> f64 {
        let l = Vector3::from(self.direction);
        self.ambient + self.directional * normal.dot(&l).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Player {
    pub position: PitchPoint,
    pub color: [f32; 3],
    pub height_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub variant: Variant,
    pub background: BackgroundSource,
    pub light: Light,
    pub players: Vec<Player>,
    /// Draws the stand ring; set for the stadium variant.
    pub stadium: bool,
    pub crowd_enabled: bool,
    pub supersample: u32,
}

impl SceneConfig {
    pub fn flat() -> Self {
        Self {
            variant: Variant::Flat,
            background: BackgroundSource::Solid(BLANK_BACKGROUND),
            light: Light::UNLIT,
            players: Vec::new(),
            stadium: false,
            crowd_enabled: false,
            supersample: DEFAULT_SUPERSAMPLE,
        }
    }

    pub fn validate(&self, template: &PitchTemplate) -> Result<()> {
        if self.supersample < 1 {
            return Err(Error::Domain("supersample must be at least 1".into()));
        }
        let l = &self.light;
        if !(l.ambient >= 0.0 && l.ambient <= 1.0) || !(l.directional >= 0.0 && l.directional <= 2.0) {
            return Err(Error::Domain(format!("light out of range: {l:?}")));
        }
        if !(l.ambient + l.directional > 0.05) {
            return Err(Error::Domain("scene would be pitch-black".into()));
        }
        let norm = Vector3::from(l.direction).norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Domain("light direction must be a unit vector".into()));
        }
        let (hl, hw) = (template.length_m / 2.0, template.width_m / 2.0);
        for p in &self.players {
            if p.position.x.abs() > hl || p.position.y.abs() > hw || !(p.height_m > 0.0) {
                return Err(Error::Domain(format!("player outside the pitch: {p:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SceneSample {
    pub image: ImageBuffer,
    pub annotation: AnnotationRecord,
}

const BLANK_BACKGROUND: [f32; 3] = [0.12, 0.12, 0.12];
const GRASS: [f64; 3] = [0.20, 0.52, 0.18];
const LINE_PAINT: [f64; 3] = [0.95, 0.95, 0.95];
const SURROUND: [f64; 3] = [0.33, 0.27, 0.22];
const SEATS: [f64; 3] = [0.22, 0.24, 0.32];
const SKY_LOW: [f64; 3] = [0.75, 0.82, 0.90];
const SKY_HIGH: [f64; 3] = [0.35, 0.50, 0.75];
const STRIPE_WIDTH_M: f64 = 5.0;

// stand ring: inclined planes rising outward from a rectangle around the apron
const STAND_INNER_X: f64 = 62.0;
const STAND_INNER_Y: f64 = 44.0;
const STAND_SLOPE: f64 = 0.7;
const STAND_HEIGHT_M: f64 = 18.0;

/// Integer lattice hash to `[0, 1)`.
pub(crate) fn hash01(seed: u64, a: i64, b: i64) -> f64 {
    let mut z = seed
        ^ (a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (b as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothly interpolated lattice noise in `[0, 1)`.
pub(crate) fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (tx, ty) = (smooth(x - fx), smooth(y - fy));
    let v00 = hash01(seed, ix, iy);
    let v10 = hash01(seed, ix + 1, iy);
    let v01 = hash01(seed, ix, iy + 1);
    let v11 = hash01(seed, ix + 1, iy + 1);
    let top = v00 + (v10 - v00) * tx;
    let bottom = v01 + (v11 - v01) * tx;
    top + (bottom - top) * ty
}

/// Color-noise quilt: bilinear blend of random 32-pixel patches plus grain.
pub fn procedural_quilt(width: u32, height: u32, seed: u64) -> ImageBuffer {
    let mut img = ImageBuffer::new(width, height);
    const PATCH: f64 = 32.0;
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 / PATCH, y as f64 / PATCH);
            let mut rgb = [0f32; 3];
            for (c, v) in rgb.iter_mut().enumerate() {
                let base = value_noise(seed.wrapping_add(c as u64 * 7919), px, py);
                let grain = hash01(seed ^ 0x5151, x as i64, (y as i64) * 3 + c as i64) - 0.5;
                *v = (base + 0.15 * grain).clamp(0.0, 1.0) as f32;
            }
            img.set(x, y, rgb);
        }
    }
    img
}

/// Uniform grid over the grass area listing the marking segments that can
/// touch each cell.
struct MarkingIndex {
    segments: Vec<Segment>,
    cells: Vec<Vec<u16>>,
    nx: usize,
    ny: usize,
    half_width: f64,
}

const CELL_M: f64 = 1.0;

impl MarkingIndex {
    fn new(t: &PitchTemplate) -> Self {
        let mut segments = t.segments.clone();
        for arc in &t.arcs {
            let pts = arc.polyline(ARC_POLYLINE_SEGMENTS);
            segments.extend(pts.windows(2).map(|w| Segment { a: w[0], b: w[1] }));
        }
        let (ex, ey) = Self::extent(t);
        let nx = (2.0 * ex / CELL_M).ceil() as usize;
        let ny = (2.0 * ey / CELL_M).ceil() as usize;
        let half_width = t.line_width_m / 2.0;
        let reach = half_width + CELL_M * std::f64::consts::FRAC_1_SQRT_2 + 1e-9;
        let mut cells = vec![Vec::new(); nx * ny];
        for (si, s) in segments.iter().enumerate() {
            let lo_x = ((s.a.x.min(s.b.x) - reach + ex) / CELL_M).floor().max(0.0) as usize;
            let hi_x = (((s.a.x.max(s.b.x) + reach + ex) / CELL_M).floor() as usize).min(nx - 1);
            let lo_y = ((s.a.y.min(s.b.y) - reach + ey) / CELL_M).floor().max(0.0) as usize;
            let hi_y = (((s.a.y.max(s.b.y) + reach + ey) / CELL_M).floor() as usize).min(ny - 1);
            for cy in lo_y..=hi_y {
                for cx in lo_x..=hi_x {
                    let center = PitchPoint::new(
                        (cx as f64 + 0.5) * CELL_M - ex,
                        (cy as f64 + 0.5) * CELL_M - ey,
                    );
                    if s.distance(&center) <= reach {
                        cells[cy * nx + cx].push(si as u16);
                    }
                }
            }
        }
        Self { segments, cells, nx, ny, half_width }
    }

    fn extent(t: &PitchTemplate) -> (f64, f64) {
        (t.length_m / 2.0 + APRON_M, t.width_m / 2.0 + APRON_M)
    }

    fn on_marking(&self, p: &PitchPoint, ex: f64, ey: f64) -> bool {
        let cx = ((p.x + ex) / CELL_M).floor();
        let cy = ((p.y + ey) / CELL_M).floor();
        if cx < 0.0 || cy < 0.0 || cx as usize >= self.nx || cy as usize >= self.ny {
            return false;
        }
        self.cells[cy as usize * self.nx + cx as usize]
            .iter()
            .any(|&i| self.segments[i as usize].distance(p) <= self.half_width)
    }
}

/// Camera-facing capsule for one player, in image space.
#[derive(Debug, Clone, Copy)]
struct Billboard {
    bottom: [f64; 2],
    top: [f64; 2],
    radius: f64,
    foot_depth: f64,
    color: [f32; 3],
    up: [f64; 2],
    span: f64,
}

impl Billboard {
    fn new(c: &CameraModel, p: &Player) -> Option<Self> {
        let foot = c.project(&p.position);
        let head = c.project_world(&Vector3::new(p.position.x, p.position.y, p.height_m));
        if foot.depth <= NEAR_CLIP_M || head.depth <= NEAR_CLIP_M {
            return None;
        }
        let f = [foot.point.u, foot.point.v];
        let h = [head.point.u, head.point.v];
        let radius = c.intrinsics.focal_px * PLAYER_RADIUS_M / (0.5 * (foot.depth + head.depth));
        let (dx, dy) = (h[0] - f[0], h[1] - f[1]);
        let len = dx.hypot(dy);
        let up = if len > 1e-12 { [dx / len, dy / len] } else { [0.0, -1.0] };
        // The rounded bottom cap ends exactly on the foot point. Seen from
        // nearly overhead the body collapses to a disc over the foot.
        let (bottom, top) = if len > 2.0 * radius {
            ([f[0] + radius * up[0], f[1] + radius * up[1]], [h[0] - radius * up[0], h[1] - radius * up[1]])
        } else {
            let mid = [0.5 * (f[0] + h[0]), 0.5 * (f[1] + h[1])];
            (mid, mid)
        };
        Some(Self { bottom, top, radius, foot_depth: foot.depth, color: p.color, up, span: len })
    }

    /// `None` outside, otherwise the height fraction along the body (0 at the feet).
    fn hit(&self, u: f64, v: f64) -> Option<f64> {
        let (dx, dy) = (self.top[0] - self.bottom[0], self.top[1] - self.bottom[1]);
        let len2 = dx * dx + dy * dy;
        let s = if len2 > 0.0 {
            (((u - self.bottom[0]) * dx + (v - self.bottom[1]) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (px, py) = (self.bottom[0] + s * dx, self.bottom[1] + s * dy);
        if (u - px).powi(2) + (v - py).powi(2) > self.radius * self.radius {
            return None;
        }
        let along = (u - self.bottom[0]) * self.up[0] + (v - self.bottom[1]) * self.up[1] + self.radius;
        Some(if self.span > 0.0 { (along / self.span).clamp(0.0, 1.0) } else { 0.0 })
    }
}

fn billboards(c: &CameraModel, s: &SceneConfig) -> Vec<Billboard> {
    let mut out: Vec<Billboard> = s.players.iter().filter_map(|p| Billboard::new(c, p)).collect();
    // nearest first, so the first hit wins
    out.sort_by(|a, b| a.foot_depth.total_cmp(&b.foot_depth));
    out
}

/// Per-render constants shared by all samples.
struct Shader<'a> {
    scene: &'a SceneConfig,
    markings: MarkingIndex,
    billboards: Vec<Billboard>,
    grass_seed: u64,
    crowd_seed: u64,
    quilt: Option<ImageBuffer>,
    image_size: (u32, u32),
    origin: Vector3<f64>,
    ray_u: Vector3<f64>,
    ray_v: Vector3<f64>,
    ray_0: Vector3<f64>,
    extent: (f64, f64),
    toward_camera: Vector3<f64>,
}

impl<'a> Shader<'a> {
    fn new(t: &PitchTemplate, c: &CameraModel, s: &'a SceneConfig, rng: &mut RandomStream) -> Self {
        let grass_seed = rng.next_u64();
        let crowd_seed = rng.next_u64();
        let quilt = match s.background {
            BackgroundSource::Quilt { seed } => Some(procedural_quilt(c.width(), c.height(), seed)),
            _ => None,
        };
        let rt = c.pose.rotation().transpose();
        let f = c.intrinsics.focal_px;
        let [u0, v0] = c.intrinsics.principal_point;
        let ray_u: Vector3<f64> = rt.column(0) / f;
        let ray_v: Vector3<f64> = rt.column(1) / f;
        let ray_0: Vector3<f64> = rt.column(2) - ray_u * u0 - ray_v * v0;
        Self {
            scene: s,
            markings: MarkingIndex::new(t),
            billboards: billboards(c, s),
            grass_seed,
            crowd_seed,
            quilt,
            image_size: (c.width(), c.height()),
            origin: c.pose.center(),
            ray_u,
            ray_v,
            ray_0,
            extent: MarkingIndex::extent(t),
            toward_camera: -rt.column(2).into_owned(),
        }
    }

    fn background(&self, x: u32, y: u32) -> [f64; 3] {
        let px = match &self.scene.background {
            BackgroundSource::Solid(rgb) => *rgb,
            BackgroundSource::Quilt { .. } => self.quilt.as_ref().expect("quilt prepared").get(x, y),
            BackgroundSource::Image(img) => {
                let bx = x as u64 * img.width() as u64 / self.image_size.0 as u64;
                let by = y as u64 * img.height() as u64 / self.image_size.1 as u64;
                img.get(bx as u32, by as u32)
            }
        };
        [px[0] as f64, px[1] as f64, px[2] as f64]
    }

    fn lit(&self, albedo: [f64; 3], normal: &Vector3<f64>) -> [f64; 3] {
        let k = self.scene.light.shade(normal);
        albedo.map(|a| a * k)
    }

    fn grass(&self, p: &PitchPoint) -> [f64; 3] {
        if self.markings.on_marking(p, self.extent.0, self.extent.1) {
            return LINE_PAINT;
        }
        let stripe = ((p.x + self.extent.0) / STRIPE_WIDTH_M).floor() as i64 % 2 == 0;
        let coarse = value_noise(self.grass_seed, p.x / 2.0, p.y / 2.0);
        let fine = value_noise(self.grass_seed ^ 0xA5A5, p.x * 2.0, p.y * 2.0);
        let k = if stripe { 1.0 } else { 0.86 } * (0.82 + 0.25 * coarse + 0.08 * fine);
        GRASS.map(|g| g * k)
    }

    /// Nearest front-facing stand hit: (distance along ray, albedo, normal).
    fn stand_hit(&self, ray: &Vector3<f64>) -> Option<(f64, [f64; 3], Vector3<f64>)> {
        let run = STAND_HEIGHT_M / STAND_SLOPE;
        let sides = [
            (Vector3::new(1.0, 0.0, 0.0), STAND_INNER_X, STAND_INNER_Y),
            (Vector3::new(-1.0, 0.0, 0.0), STAND_INNER_X, STAND_INNER_Y),
            (Vector3::new(0.0, 1.0, 0.0), STAND_INNER_Y, STAND_INNER_X),
            (Vector3::new(0.0, -1.0, 0.0), STAND_INNER_Y, STAND_INNER_X),
        ];
        let o = &self.origin;
        let mut best: Option<(f64, [f64; 3], Vector3<f64>)> = None;
        for (out, inner, lateral_extent) in sides {
            let denom = ray.z - STAND_SLOPE * out.dot(ray);
            if denom >= 0.0 {
                continue; // seen from behind or parallel
            }
            let t = (STAND_SLOPE * (out.dot(o) - inner) - o.z) / denom;
            if t <= NEAR_CLIP_M || best.is_some_and(|b| b.0 <= t) {
                continue;
            }
            let hit = o + ray * t;
            let along = out.dot(&hit) - inner;
            let lateral = hit.x * out.y.abs() + hit.y * out.x.abs();
            if !(0.0..=run).contains(&along) || lateral.abs() > lateral_extent + run {
                continue;
            }
            let normal = Vector3::new(-STAND_SLOPE * out.x, -STAND_SLOPE * out.y, 1.0).normalize();
            let (row, seat) = ((along / 0.8).floor() as i64, (lateral / 0.6).floor() as i64);
            let albedo = if self.scene.crowd_enabled && hash01(self.crowd_seed, row, seat) < 0.75 {
                let h = |k: i64| 0.15 + 0.8 * hash01(self.crowd_seed ^ 0x0C0FFEE, row * 3 + k, seat);
                [h(0), h(1), h(2)]
            } else {
                let k = if row % 2 == 0 { 1.0 } else { 0.88 };
                SEATS.map(|c| c * k)
            };
            best = Some((t, albedo, normal));
        }
        best
    }

    fn sky(ray: &Vector3<f64>) -> [f64; 3] {
        let e = (ray.z / ray.norm()).clamp(0.0, 1.0);
        [0, 1, 2].map(|c| SKY_LOW[c] + (SKY_HIGH[c] - SKY_LOW[c]) * e)
    }

    fn sample(&self, u: f64, v: f64, x: u32, y: u32) -> [f64; 3] {
        for b in &self.billboards {
            if let Some(frac) = b.hit(u, v) {
                let c = b.color.map(f64::from);
                let albedo = if frac > 0.86 {
                    [0.85, 0.66, 0.52]
                } else if frac > 0.45 {
                    c
                } else {
                    c.map(|v| 0.45 * v)
                };
                return self.lit(albedo, &self.toward_camera);
            }
        }
        let ray = self.ray_0 + self.ray_u * u + self.ray_v * v;
        let up = Vector3::z();
        // ray has unit forward component, so the ray parameter is the depth
        let ground_t = if ray.z < 0.0 { -self.origin.z / ray.z } else { f64::INFINITY };
        let ground_t = if ground_t >= NEAR_CLIP_M { ground_t } else { f64::INFINITY };
        if self.scene.stadium {
            if let Some((t, albedo, normal)) = self.stand_hit(&ray) {
                if t < ground_t {
                    return self.lit(albedo, &normal);
                }
            }
        }
        if ground_t.is_finite() {
            let hit = self.origin + ray * ground_t;
            let p = PitchPoint::new(hit.x, hit.y);
            if p.x.abs() <= self.extent.0 && p.y.abs() <= self.extent.1 {
                return self.lit(self.grass(&p), &up);
            }
            if self.scene.stadium {
                return self.lit(SURROUND, &up);
            }
            return self.background(x, y);
        }
        if self.scene.stadium {
            Self::sky(&ray)
        } else {
            self.background(x, y)
        }
    }
}

/// Renders one scene and its exact annotation.
pub fn render(
    t: &PitchTemplate,
    c: &CameraModel,
    s: &SceneConfig,
    rng: &mut RandomStream,
) -> Result<SceneSample> {
    s.validate(t)?;
    let shader = Shader::new(t, c, s, rng);
    let (w, h) = (c.width(), c.height());
    let ss = s.supersample;
    let inv = 1.0 / (ss * ss) as f64;
    let mut image = ImageBuffer::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for sy in 0..ss {
                for sx in 0..ss {
                    let u = x as f64 + (sx as f64 + 0.5) / ss as f64;
                    let v = y as f64 + (sy as f64 + 0.5) / ss as f64;
                    let rgb = shader.sample(u, v, x, y);
                    for k in 0..3 {
                        acc[k] += rgb[k].clamp(0.0, 1.0);
                    }
                }
            }
            image.set(x, y, acc.map(|a| (a * inv) as f32));
        }
    }
    let annotation = AnnotationRecord::from_scene(t, c, &s.players)?;
    Ok(SceneSample { image, annotation })
}

/// Binary coverage of the player billboards, sampled at pixel centers.
pub fn render_players_only_mask(c: &CameraModel, s: &SceneConfig) -> ImageBuffer {
    let boards = billboards(c, s);
    let mut mask = ImageBuffer::new(c.width(), c.height());
    for y in 0..c.height() {
        for x in 0..c.width() {
            let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
            if boards.iter().any(|b| b.hit(u, v).is_some()) {
                mask.set(x, y, [1.0; 3]);
            }
        }
    }
    mask
}

/// Bottom-center of a single-player mask: the midpoint of the lowest covered
/// row, at that row's lower pixel edge.
pub fn mask_foot_point(mask: &ImageBuffer) -> Option<ImagePoint> {
    for y in (0..mask.height()).rev() {
        let xs: Vec<u32> = (0..mask.width()).filter(|&x| mask.get(x, y)[0] > 0.5).collect();
        if let (Some(first), Some(last)) = (xs.first(), xs.last()) {
            return Some(ImagePoint::new((*first + *last + 1) as f64 / 2.0, y as f64 + 1.0));
        }
    }
    None
}
