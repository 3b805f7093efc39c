//! Dataset files: `images/NNNNNN.png`, `annotations.jsonl` and
//! `manifest.json`.
//!
//! Image `id` belongs to the train split when `id < train_count` and to the
//! test split otherwise. Its random stream is derived from the master seed,
//! the split and the index within that split, so the two splits never share
//! a stream and generation order cannot affect the output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::{CameraModel, ImagePoint};
use crate::error::{Error, Result};
use crate::geom::Homography;
use crate::pitch::{standard_template, PitchPoint, PitchTemplate};
use crate::raster::{render, ImageBuffer, Player};
use crate::rng::{RandomStream, StreamDomain};
use crate::scenario::{SceneAssets, Scenario, VariantRegistry};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const IMAGES_DIR: &str = "images";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlayerTruth {
    pub position: PitchPoint,
    /// Projection of the ground contact point.
    pub foot: ImagePoint,
}

/// Ground truth for one image. Field order is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_path: String,
    pub keypoints_px: Vec<ImagePoint>,
    /// `(u0/w, v0/h, u1/w, v1/h, ...)`.
    pub keypoints_norm: Vec<f64>,
    pub visibility: Vec<bool>,
    pub camera: CameraModel,
    pub homography_gt: Homography,
    pub players_gt: Vec<PlayerTruth>,
    pub scenario: String,
}

impl AnnotationRecord {
    /// Annotation derived purely from geometry; `id`, `image_path` and
    /// `scenario` are left for the caller to fill.
    pub fn from_scene(t: &PitchTemplate, c: &CameraModel, players: &[Player]) -> Result<Self> {
        let (w, h) = (c.width() as f64, c.height() as f64);
        let keypoints_px: Vec<ImagePoint> = t.keypoints.iter().map(|k| c.project(k).point).collect();
        let keypoints_norm = keypoints_px.iter().flat_map(|p| [p.u / w, p.v / h]).collect();
        let visibility = t.keypoints.iter().map(|k| c.visible(k)).collect();
        let players_gt = players
            .iter()
            .map(|p| PlayerTruth { position: p.position, foot: c.project(&p.position).point })
            .collect();
        Ok(Self {
            id: 0,
            image_path: String::new(),
            keypoints_px,
            keypoints_norm,
            visibility,
            camera: c.clone(),
            homography_gt: c.ground_homography()?.normalized(),
            players_gt,
            scenario: String::new(),
        })
    }

    pub fn image_size(&self) -> (u32, u32) {
        (self.camera.width(), self.camera.height())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigestEntry {
    pub id: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub scenario: Scenario,
    pub master_seed: u64,
    pub train_count: usize,
    pub test_count: usize,
    pub digests: Vec<DigestEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn domain(self) -> StreamDomain {
        match self {
            Split::Train => StreamDomain::Train,
            Split::Test => StreamDomain::Test,
        }
    }
}

/// Split and index within the split for a global id.
pub fn split_of(id: u64, train_count: usize) -> (Split, u64) {
    if id < train_count as u64 {
        (Split::Train, id)
    } else {
        (Split::Test, id - train_count as u64)
    }
}

pub fn image_file_name(id: u64) -> String {
    format!("{IMAGES_DIR}/{id:06}.png")
}

/// SHA-256 over the PNG bytes, a newline, and the annotation line.
pub fn content_digest(png: &[u8], annotation_line: &str) -> String {
    let mut h = Sha256::new();
    h.update(png);
    h.update(b"\n");
    h.update(annotation_line.as_bytes());
    hex::encode(h.finalize())
}

/// Pixels and annotation of one image, before any file is written.
pub fn synthesize(
    scenario: &Scenario,
    registry: &VariantRegistry,
    assets: &SceneAssets,
    template: &PitchTemplate,
    id: u64,
) -> Result<(ImageBuffer, AnnotationRecord)> {
    let variant = registry.get(&scenario.variant)?;
    let (split, index) = split_of(id, scenario.train_count);
    let mut rng = RandomStream::derive(scenario.master_seed, split.domain(), index);
    let camera = crate::camera::sample_camera(&mut rng, &scenario.camera)?;
    let scene = variant.sample_scene(scenario, assets, &mut rng)?;
    let sample = render(template, &camera, &scene, &mut rng)?;
    let image = variant.post_process(sample.image, scenario, &mut rng)?;
    let mut annotation = sample.annotation;
    annotation.id = id;
    annotation.image_path = image_file_name(id);
    annotation.scenario = scenario.name.clone();
    Ok((image, annotation))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Renders the whole scenario into `out_dir`, in parallel over images.
pub fn generate_dataset(scenario: &Scenario, out_dir: &Path, registry: &VariantRegistry) -> Result<Manifest> {
    scenario.validate()?;
    registry.get(&scenario.variant)?;
    let images_dir = out_dir.join(IMAGES_DIR);
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let assets = SceneAssets::load(scenario)?;
    let template = standard_template();

    let rows = (0..scenario.total() as u64)
        .into_par_iter()
        .map(|id| {
            let (image, annotation) = synthesize(scenario, registry, &assets, &template, id)?;
            let png = image.encode_png();
            let line = serde_json::to_string(&annotation).expect("annotation serializes");
            write_file(&out_dir.join(&annotation.image_path), &png)?;
            Ok((DigestEntry { id, sha256: content_digest(&png, &line) }, line))
        })
        .collect::<Result<Vec<_>>>()?;

    let ann_path = out_dir.join(ANNOTATIONS_FILE);
    let mut ann = fs::File::create(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let mut text = String::new();
    for (_, line) in &rows {
        text.push_str(line);
        text.push('\n');
    }
    ann.write_all(text.as_bytes()).map_err(|e| Error::io(&ann_path, e))?;

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        scenario: scenario.clone(),
        master_seed: scenario.master_seed,
        train_count: scenario.train_count,
        test_count: scenario.test_count,
        digests: rows.into_iter().map(|(d, _)| d).collect(),
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&manifest_path, json.as_bytes())?;
    Ok(manifest)
}

/// An opened dataset directory. Annotations are held in memory; images are
/// read on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    dir: PathBuf,
    manifest: Manifest,
    records: Vec<AnnotationRecord>,
    lines: Vec<String>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&manifest_path, e))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::format(
                &manifest_path,
                format!("format_version {} (supported: {FORMAT_VERSION})", manifest.format_version),
            ));
        }
        let total = manifest.train_count + manifest.test_count;
        if manifest.digests.len() != total {
            return Err(Error::format(
                &manifest_path,
                format!("{} digests for {total} images", manifest.digests.len()),
            ));
        }

        let ann_path = dir.join(ANNOTATIONS_FILE);
        let text = fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
        let lines: Vec<String> = text.lines().map(str::to_owned).collect();
        let mut records = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            let rec: AnnotationRecord = serde_json::from_str(line)
                .map_err(|e| Error::Integrity { id: i as u64, reason: format!("unreadable annotation: {e}") })?;
            if rec.id != i as u64 || manifest.digests[i.min(total - 1)].id != i as u64 {
                return Err(Error::Integrity { id: i as u64, reason: format!("line holds id {}", rec.id) });
            }
            records.push(rec);
        }
        if records.len() != total {
            return Err(Error::Integrity {
                id: records.len() as u64,
                reason: format!("annotations file has {} of {total} records", records.len()),
            });
        }
        Ok(Self { dir: dir.to_path_buf(), manifest, records, lines })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    pub fn record(&self, id: u64) -> Result<&AnnotationRecord> {
        self.records
            .get(id as usize)
            .ok_or_else(|| Error::Domain(format!("image id {id} out of range 0..{}", self.records.len())))
    }

    pub fn train_ids(&self) -> std::ops::Range<u64> {
        0..self.manifest.train_count as u64
    }

    pub fn test_ids(&self) -> std::ops::Range<u64> {
        self.manifest.train_count as u64..self.len() as u64
    }

    /// Reads and decodes image `id`, checking its digest when `verify` is set.
    pub fn load_image(&self, id: u64, verify: bool) -> Result<ImageBuffer> {
        let rec = self.record(id)?;
        let path = self.dir.join(&rec.image_path);
        let png = fs::read(&path).map_err(|e| Error::Integrity { id, reason: format!("{}: {e}", path.display()) })?;
        if verify {
            let expected = &self.manifest.digests[id as usize].sha256;
            if content_digest(&png, &self.lines[id as usize]) != *expected {
                return Err(Error::Integrity { id, reason: "content digest mismatch".into() });
            }
        }
        let img = ImageBuffer::decode_png(&png).map_err(|e| Error::Integrity { id, reason: format!("bad PNG: {e}") })?;
        if (img.width(), img.height()) != rec.image_size() {
            return Err(Error::Integrity { id, reason: "image size differs from its camera".into() });
        }
        Ok(img)
    }

    /// Checks every digest; the first failure names its id.
    pub fn verify(&self) -> Result<()> {
        (0..self.len() as u64).into_par_iter().try_for_each(|id| self.load_image(id, true).map(|_| ()))
    }
}

/// Every `(image, annotation)` pair in id order.
pub fn load_dataset(dir: &Path, verify: bool) -> Result<Vec<(ImageBuffer, AnnotationRecord)>> {
    let ds = Dataset::open(dir)?;
    (0..ds.len() as u64)
        .map(|id| Ok((ds.load_image(id, verify)?, ds.records[id as usize].clone())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: &str, train: usize, test: usize) -> Scenario {
        let mut s = VariantRegistry::builtin().resolve(variant).unwrap();
        s.train_count = train;
        s.test_count = test;
        s.camera.image_size = [64, 64];
        s.scene.supersample = 1;
        s
    }

    #[test]
    fn split_assignment() {
        assert_eq!(split_of(0, 3), (Split::Train, 0));
        assert_eq!(split_of(2, 3), (Split::Train, 2));
        assert_eq!(split_of(3, 3), (Split::Test, 0));
        assert_eq!(image_file_name(42), "images/000042.png");
    }

    #[test]
    fn train_and_test_streams_differ() {
        let s = tiny("flat", 1, 1);
        let r = VariantRegistry::builtin();
        let t = standard_template();
        let a = synthesize(&s, &r, &SceneAssets::default(), &t, 0).unwrap();
        let b = synthesize(&s, &r, &SceneAssets::default(), &t, 1).unwrap();
        assert_ne!(a.1.camera, b.1.camera);
    }

    #[test]
    fn annotation_invariants() {
        let s = tiny("players", 4, 1);
        let r = VariantRegistry::builtin();
        let t = standard_template();
        for id in 0..5 {
            let (_, rec) = synthesize(&s, &r, &SceneAssets::default(), &t, id).unwrap();
            assert_eq!(rec.keypoints_px.len(), 26);
            assert_eq!(rec.keypoints_norm.len(), 52);
            for (i, k) in t.keypoints.iter().enumerate() {
                assert_eq!(rec.keypoints_norm[2 * i], rec.keypoints_px[i].u / 64.0);
                assert_eq!(rec.keypoints_norm[2 * i + 1], rec.keypoints_px[i].v / 64.0);
                assert_eq!(rec.visibility[i], rec.camera.visible(k));
            }
            assert!(!rec.players_gt.is_empty());
        }
    }

    #[test]
    fn generate_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = tiny("players", 5, 2);
        let m = generate_dataset(&s, dir.path(), &VariantRegistry::builtin()).unwrap();
        assert_eq!(m.digests.len(), 7);
        let written: Vec<AnnotationRecord> = fs::read_to_string(dir.path().join(ANNOTATIONS_FILE))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        let loaded = load_dataset(dir.path(), true).unwrap();
        assert_eq!(loaded.len(), 7);
        for ((img, rec), w) in loaded.iter().zip(&written) {
            assert_eq!(rec, w);
            assert_eq!(rec.keypoints_norm, w.keypoints_norm);
            assert_eq!((img.width(), img.height()), (64, 64));
        }
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.train_ids(), 0..5);
        assert_eq!(ds.test_ids(), 5..7);
    }

    #[test]
    fn annotation_keys_in_fixed_order() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&tiny("flat", 1, 1), dir.path(), &VariantRegistry::builtin()).unwrap();
        let line = fs::read_to_string(dir.path().join(ANNOTATIONS_FILE)).unwrap();
        let first = line.lines().next().unwrap();
        let keys = [
            "\"id\"",
            "\"image_path\"",
            "\"keypoints_px\"",
            "\"keypoints_norm\"",
            "\"visibility\"",
            "\"camera\"",
            "\"homography_gt\"",
            "\"players_gt\"",
            "\"scenario\"",
        ];
        let positions: Vec<usize> = keys.iter().map(|k| first.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{positions:?}");
    }

    #[test]
    fn tampered_png_names_its_id() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&tiny("flat", 3, 1), dir.path(), &VariantRegistry::builtin()).unwrap();
        let victim = dir.path().join(image_file_name(2));
        let mut bytes = fs::read(&victim).unwrap();
        let n = bytes.len();
        bytes[n / 2] ^= 0x40;
        fs::write(&victim, bytes).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        ds.load_image(1, true).unwrap();
        match ds.load_image(2, true) {
            Err(Error::Integrity { id: 2, .. }) => {}
            other => panic!("expected integrity error for id 2, got {other:?}"),
        }
        assert!(matches!(ds.verify(), Err(Error::Integrity { id: 2, .. })));
        assert!(matches!(load_dataset(dir.path(), true), Err(Error::Integrity { id: 2, .. })));
    }

    #[test]
    fn missing_image_names_its_id() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&tiny("flat", 2, 1), dir.path(), &VariantRegistry::builtin()).unwrap();
        fs::remove_file(dir.path().join(image_file_name(1))).unwrap();
        assert!(matches!(load_dataset(dir.path(), false), Err(Error::Integrity { id: 1, .. })));
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&tiny("flat", 1, 1), dir.path(), &VariantRegistry::builtin()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&p).unwrap().replacen("\"format_version\": 1", "\"format_version\": 7", 1);
        fs::write(&p, text).unwrap();
        let err = Dataset::open(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn regeneration_reproduces_digests() {
        let s = tiny("artifacts", 3, 2);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let r = VariantRegistry::builtin();
        assert_eq!(generate_dataset(&s, a.path(), &r).unwrap(), generate_dataset(&s, b.path(), &r).unwrap());
    }
}
