//! Dataset scenarios and the registry of scene variants that realize them.
//!
//! A [`Scenario`] is plain serializable configuration. The variant it names is
//! looked up in a [`VariantRegistry`] at generation time; each registered
//! [`SceneVariant`] turns a per-image random stream into a [`SceneConfig`] and
//! may post-process the rendered pixels.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc as Shared;

use serde::{Deserialize, Serialize};

use crate::augment::{apply_policy, AugmentPolicy};
use crate::camera::CameraRange;
use crate::error::{Error, Result};
use crate::pitch::{PitchPoint, PITCH_LENGTH_M, PITCH_WIDTH_M};
use crate::raster::{BackgroundSource, ImageBuffer, Light, Player, SceneConfig, Variant, DEFAULT_SUPERSAMPLE};
use crate::rng::RandomStream;

pub const DEFAULT_TRAIN_COUNT: usize = 3000;
pub const DEFAULT_TEST_COUNT: usize = 100;
pub const DEFAULT_MASTER_SEED: u64 = 20_190_601;

/// Per-image randomization ranges for everything except the camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneRanges {
    pub ambient: [f64; 2],
    pub directional: [f64; 2],
    /// Sun elevation above the horizon, degrees. Azimuth is uniform.
    pub light_elevation_deg: [f64; 2],
    pub player_count: [u32; 2],
    pub player_height_m: [f64; 2],
    pub crowd_probability: f64,
    /// Directory of background photographs; procedural quilts when unset.
    pub background_dir: Option<PathBuf>,
    pub supersample: u32,
}

impl Default for SceneRanges {
    fn default() -> Self {
        Self {
            ambient: [1.0, 1.0],
            directional: [0.0, 0.0],
            light_elevation_deg: [15.0, 75.0],
            player_count: [0, 0],
            player_height_m: [1.70, 1.95],
            crowd_probability: 0.0,
            background_dir: None,
            supersample: DEFAULT_SUPERSAMPLE,
        }
    }
}

impl SceneRanges {
    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, r: [f64; 2], lo: f64, hi: f64| {
            if r[0] <= r[1] && r[0] >= lo && r[1] <= hi {
                Ok(())
            } else {
                Err(Error::Domain(format!("scene range {name} = {r:?} must be ordered within [{lo}, {hi}]")))
            }
        };
        ordered("ambient", self.ambient, 0.0, 1.0)?;
        ordered("directional", self.directional, 0.0, 2.0)?;
        ordered("light_elevation_deg", self.light_elevation_deg, 0.0, 90.0)?;
        ordered("player_height_m", self.player_height_m, 0.5, 2.5)?;
        if self.player_count[0] > self.player_count[1] {
            return Err(Error::Domain(format!("player_count {:?} is empty", self.player_count)));
        }
        if !(0.0..=1.0).contains(&self.crowd_probability) {
            return Err(Error::Domain("crowd_probability must lie in [0, 1]".into()));
        }
        if self.ambient[0] + self.directional[0] <= 0.05 {
            return Err(Error::Domain("lighting ranges allow a pitch-black scene".into()));
        }
        if self.supersample == 0 {
            return Err(Error::Domain("supersample must be at least 1".into()));
        }
        Ok(())
    }
}

/// Complete description of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Registry key of the scene variant.
    pub variant: String,
    #[serde(default)]
    pub camera: CameraRange,
    #[serde(default)]
    pub scene: SceneRanges,
    /// Baked into every image at generation time when present.
    #[serde(default)]
    pub augment: Option<AugmentPolicy>,
    pub train_count: usize,
    pub test_count: usize,
    pub master_seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let safe = !self.name.is_empty()
            && !self.name.starts_with('.')
            && self.name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
        if !safe {
            return Err(Error::Domain(format!("scenario name {:?} is not filesystem-safe", self.name)));
        }
        if self.train_count == 0 || self.test_count == 0 {
            return Err(Error::Domain("train_count and test_count must be positive".into()));
        }
        self.camera.validate()?;
        self.scene.validate()?;
        if let Some(p) = &self.augment {
            p.validate()?;
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.train_count + self.test_count
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Scenario = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        s.validate()?;
        Ok(s)
    }
}

/// Shared read-only resources prepared once per dataset.
#[derive(Debug, Clone, Default)]
pub struct SceneAssets {
    pub backgrounds: Vec<Shared<ImageBuffer>>,
}

impl SceneAssets {
    /// Loads every decodable image in `scenario.scene.background_dir`, sorted
    /// by file name and resized to the output size.
    pub fn load(scenario: &Scenario) -> Result<Self> {
        let Some(dir) = &scenario.scene.background_dir else {
            return Ok(Self::default());
        };
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            })
            .collect();
        paths.sort();
        let [w, h] = scenario.camera.image_size;
        let backgrounds = paths
            .iter()
            .map(|p| ImageBuffer::load_resized(p, w, h).map(Shared::new))
            .collect::<Result<Vec<_>>>()?;
        if backgrounds.is_empty() {
            return Err(Error::format(dir, "background directory holds no PNG or JPEG images"));
        }
        Ok(Self { backgrounds })
    }
}

/// One family of scenes.
pub trait SceneVariant: Send + Sync {
    fn name(&self) -> &str;

    fn description(&self) -> &str;

    /// The built-in scenario for this variant.
    fn preset(&self) -> Scenario;

    fn sample_scene(&self, scenario: &Scenario, assets: &SceneAssets, rng: &mut RandomStream) -> Result<SceneConfig>;

    fn post_process(&self, image: ImageBuffer, scenario: &Scenario, rng: &mut RandomStream) -> Result<ImageBuffer> {
        match &scenario.augment {
            Some(policy) => apply_policy(&image, policy, rng),
            None => Ok(image),
        }
    }
}

/// Viewpoints behind one touchline, high and wide enough to take in most of
/// the pitch.
pub fn overview_camera() -> CameraRange {
    CameraRange {
        x_m: [-20.0, 20.0],
        y_m: [-75.0, -55.0],
        z_m: [25.0, 45.0],
        tilt_deg: [25.0, 38.0],
        roll_deg: [-2.0, 2.0],
        hfov_deg: [65.0, 85.0],
        target_x_m: [-10.0, 10.0],
        target_y_m: [-5.0, 5.0],
        ..CameraRange::default()
    }
}

fn base_scenario(name: &str, camera: CameraRange, scene: SceneRanges) -> Scenario {
    Scenario {
        name: name.to_string(),
        variant: name.to_string(),
        camera,
        scene,
        augment: None,
        train_count: DEFAULT_TRAIN_COUNT,
        test_count: DEFAULT_TEST_COUNT,
        master_seed: DEFAULT_MASTER_SEED,
    }
}

fn sample_light(r: &SceneRanges, rng: &mut RandomStream) -> Light {
    let ambient = rng.uniform(r.ambient[0], r.ambient[1]);
    let directional = rng.uniform(r.directional[0], r.directional[1]);
    let elevation = rng.uniform(r.light_elevation_deg[0], r.light_elevation_deg[1]).to_radians();
    let azimuth = rng.uniform(0.0, std::f64::consts::TAU);
    Light {
        ambient,
        directional,
        direction: [elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin()],
    }
}

fn sample_players(r: &SceneRanges, rng: &mut RandomStream) -> Vec<Player> {
    let n = rng.int_inclusive(r.player_count[0] as u64, r.player_count[1] as u64) as usize;
    if n == 0 {
        return Vec::new();
    }
    let mut kit = || [0.1 + 0.85 * rng.unit() as f32, 0.1 + 0.85 * rng.unit() as f32, 0.1 + 0.85 * rng.unit() as f32];
    let teams = [kit(), kit()];
    (0..n)
        .map(|i| Player {
            position: PitchPoint::new(
                rng.uniform(-PITCH_LENGTH_M / 2.0 + 1.0, PITCH_LENGTH_M / 2.0 - 1.0),
                rng.uniform(-PITCH_WIDTH_M / 2.0 + 1.0, PITCH_WIDTH_M / 2.0 - 1.0),
            ),
            color: teams[i % 2],
            height_m: rng.uniform(r.player_height_m[0], r.player_height_m[1]),
        })
        .collect()
}

fn sample_background(assets: &SceneAssets, rng: &mut RandomStream) -> BackgroundSource {
    if assets.backgrounds.is_empty() {
        BackgroundSource::Quilt { seed: rng.next_u64() }
    } else {
        BackgroundSource::Image(assets.backgrounds[rng.index(assets.backgrounds.len())].clone())
    }
}

fn scene_common(variant: Variant, r: &SceneRanges, rng: &mut RandomStream) -> SceneConfig {
    SceneConfig {
        variant,
        light: sample_light(r, rng),
        players: sample_players(r, rng),
        supersample: r.supersample,
        ..SceneConfig::flat()
    }
}

struct FlatPitch;

impl SceneVariant for FlatPitch {
    fn name(&self) -> &str {
        "flat"
    }

    fn description(&self) -> &str {
        "bare pitch over a blank background, unlit, no players"
    }

    fn preset(&self) -> Scenario {
        base_scenario("flat", overview_camera(), SceneRanges::default())
    }

    fn sample_scene(&self, s: &Scenario, _: &SceneAssets, rng: &mut RandomStream) -> Result<SceneConfig> {
        Ok(scene_common(Variant::Flat, &s.scene, rng))
    }
}

struct RandomBackgrounds;

impl SceneVariant for RandomBackgrounds {
    fn name(&self) -> &str {
        "backgrounds"
    }

    fn description(&self) -> &str {
        "pitch over random pictures (user directory or procedural quilts)"
    }

    fn preset(&self) -> Scenario {
        base_scenario("backgrounds", CameraRange::default(), SceneRanges::default())
    }

    fn sample_scene(&self, s: &Scenario, assets: &SceneAssets, rng: &mut RandomStream) -> Result<SceneConfig> {
        let mut scene = scene_common(Variant::Background, &s.scene, rng);
        scene.background = sample_background(assets, rng);
        Ok(scene)
    }
}

struct RandomLighting;

impl SceneVariant for RandomLighting {
    fn name(&self) -> &str {
        "lighting"
    }

    fn description(&self) -> &str {
        "random ambient and directional light, from bright to dim"
    }

    fn preset(&self) -> Scenario {
        let scene = SceneRanges { ambient: [0.15, 0.8], directional: [0.0, 1.2], ..SceneRanges::default() };
        base_scenario("lighting", CameraRange::default(), scene)
    }

    fn sample_scene(&self, s: &Scenario, _: &SceneAssets, rng: &mut RandomStream) -> Result<SceneConfig> {
        Ok(scene_common(Variant::Lighting, &s.scene, rng))
    }
}

struct PitchPlayers;

impl SceneVariant for PitchPlayers {
    fn name(&self) -> &str {
        "players"
    }

    fn description(&self) -> &str {
        "billboard players scattered over the pitch"
    }

    fn preset(&self) -> Scenario {
        let scene = SceneRanges { player_count: [8, 22], ..SceneRanges::default() };
        base_scenario("players", CameraRange::default(), scene)
    }

    fn sample_scene(&self, s: &Scenario, _: &SceneAssets, rng: &mut RandomStream) -> Result<SceneConfig> {
        Ok(scene_common(Variant::Players, &s.scene, rng))
    }
}

struct Stadium;

impl SceneVariant for Stadium {
    fn name(&self) -> &str {
        "stadium"
    }

    fn description(&self) -> &str {
        "stand ring with optional crowd under random lighting"
    }

    fn preset(&self) -> Scenario {
        let scene = SceneRanges {
            ambient: [0.3, 0.8],
            directional: [0.0, 1.0],
            crowd_probability: 0.5,
            ..SceneRanges::default()
        };
        base_scenario("stadium", CameraRange::default(), scene)
    }

    fn sample_scene(&self, s: &Scenario, _: &SceneAssets, rng: &mut RandomStream) -> Result<SceneConfig> {
        let mut scene = scene_common(Variant::Stadium, &s.scene, rng);
        scene.stadium = true;
        scene.crowd_enabled = rng.bernoulli(s.scene.crowd_probability);
        Ok(scene)
    }
}

struct Artifacts;

impl SceneVariant for Artifacts {
    fn name(&self) -> &str {
        "artifacts"
    }

    fn description(&self) -> &str {
        "noise, blur and texture overlays applied to every image"
    }

    fn preset(&self) -> Scenario {
        let mut s = base_scenario("artifacts", CameraRange::default(), SceneRanges::default());
        s.augment = Some(AugmentPolicy::always());
        s
    }

    fn sample_scene(&self, s: &Scenario, _: &SceneAssets, rng: &mut RandomStream) -> Result<SceneConfig> {
        Ok(scene_common(Variant::Artifacts, &s.scene, rng))
    }
}

/// Scene variants by name.
pub struct VariantRegistry {
    variants: BTreeMap<String, Shared<dyn SceneVariant>>,
}

impl VariantRegistry {
    pub fn empty() -> Self {
        Self { variants: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Shared::new(FlatPitch));
        r.register(Shared::new(RandomBackgrounds));
        r.register(Shared::new(RandomLighting));
        r.register(Shared::new(PitchPlayers));
        r.register(Shared::new(Stadium));
        r.register(Shared::new(Artifacts));
        r
    }

    /// Adds `variant`, replacing any previous entry with the same name.
    pub fn register(&mut self, variant: Shared<dyn SceneVariant>) {
        self.variants.insert(variant.name().to_string(), variant);
    }

    pub fn get(&self, name: &str) -> Result<&Shared<dyn SceneVariant>> {
        self.variants.get(name).ok_or_else(|| {
            Error::Domain(format!("unknown scene variant {name:?}; known: {}", self.names().join(", ")))
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.variants.keys().map(String::as_str).collect()
    }

    pub fn presets(&self) -> Vec<Scenario> {
        self.variants.values().map(|v| v.preset()).collect()
    }

    /// A registered preset name, or else a path to a scenario JSON file.
    pub fn resolve(&self, name_or_path: &str) -> Result<Scenario> {
        if let Some(v) = self.variants.get(name_or_path) {
            return Ok(v.preset());
        }
        let path = Path::new(name_or_path);
        if path.is_file() {
            let s = Scenario::from_json_file(path)?;
            self.get(&s.variant)?;
            return Ok(s);
        }
        Err(Error::Domain(format!(
            "{name_or_path:?} is neither a scenario preset ({}) nor a readable file",
            self.names().join(", ")
        )))
    }
}

impl Default for VariantRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}
