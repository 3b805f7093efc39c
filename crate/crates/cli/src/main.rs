use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use pitchforge::camera::ImagePoint;
use pitchforge::dataset::{generate_dataset, AnnotationRecord, Dataset};
use pitchforge::eval::{evaluate, infer, keypoints_from_norm, render_overlay, write_report_csv, Overlay};
use pitchforge::geom::{camera_footprint, locate_player, pitch_mask_polygon, Homography, PitchPolygon};
use pitchforge::nn::{load_weights, save_weights, train_with_progress, NetworkSpec, TrainConfig, TrainingSet};
use pitchforge::pitch::{standard_template, PitchPoint};
use pitchforge::raster::ImageBuffer;
use pitchforge::scenario::VariantRegistry;

const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "pitchforge", version, about = "Synthetic pitch images, keypoint regression and homography fitting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the registered scene variants.
    Scenarios,
    /// Render a dataset directory.
    Generate {
        /// Registered variant name or path to a scenario JSON file.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "train-count")]
        train_count: Option<usize>,
        #[arg(long = "test-count")]
        test_count: Option<usize>,
    },
    /// Train the keypoint regressor on a dataset's train split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, default_value_t = 50)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Loss curve CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Use only the first N training images.
        #[arg(long)]
        limit: Option<usize>,
        /// Apply the dataset scenario's augmentation policy while training.
        #[arg(long)]
        augment: bool,
    },
    /// Predict keypoints on one image and draw the fitted pitch.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        overlay: PathBuf,
        /// Write the result here instead of stdout.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Score weights on a dataset's test split.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Map player foot points in an image to pitch coordinates.
    Localize {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Foot pixel as `u,v`; repeatable.
        #[arg(long = "foot", required = true, value_parser = parse_point)]
        feet: Vec<ImagePoint>,
    },
    /// Draw a ground-truth annotation onto its image.
    Overlay {
        /// `annotations.jsonl` or a file holding one record.
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Record id; defaults to the record whose image file name matches.
        #[arg(long)]
        id: Option<u64>,
    },
}

fn parse_point(s: &str) -> Result<ImagePoint, String> {
    let (u, v) = s.split_once(',').ok_or_else(|| format!("expected u,v, got {s:?}"))?;
    let parse = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    let (u, v) = (parse(u)?, parse(v)?);
    if !(u.is_finite() && v.is_finite()) {
        return Err(format!("non-finite coordinate in {s:?}"));
    }
    Ok(ImagePoint::new(u, v))
}

/// Failure carrying the process exit code for its class.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = error.chain().find_map(|e| e.downcast_ref::<pitchforge::Error>()).map_or(1, |e| e.exit_code());
        Self { code: code as u8, error }
    }
}

impl From<pitchforge::Error> for Failure {
    fn from(e: pitchforge::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, error: anyhow!(msg.into()) }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Scenarios => {
            let reg = VariantRegistry::builtin();
            for name in reg.names() {
                println!("{name}\t{}", reg.get(name)?.description());
            }
            Ok(())
        }
        Command::Generate { scenario, out, seed, train_count, test_count } => {
            let reg = VariantRegistry::builtin();
            let mut sc = reg.resolve(&scenario)?;
            if let Some(s) = seed {
                sc.master_seed = s;
            }
            if let Some(n) = train_count {
                sc.train_count = n;
            }
            if let Some(n) = test_count {
                sc.test_count = n;
            }
            let m = generate_dataset(&sc, &out, &reg)?;
            println!(
                "{}: {} train + {} test images in {} (seed {})",
                sc.name,
                m.train_count,
                m.test_count,
                out.display(),
                m.master_seed
            );
            Ok(())
        }
        Command::Train { data, out, epochs, batch, lr, seed, curve, limit, augment } => {
            let ds = Dataset::open(&data)?;
            let mut ids = ds.train_ids();
            if let Some(n) = limit {
                ids.end = ids.end.min(ids.start + n as u64);
            }
            let set = TrainingSet::from_dataset(&ds, ids, true)?;
            let (w, h) = ds.record(0)?.image_size();
            let spec = NetworkSpec { input: [3, h as usize, w as usize], ..NetworkSpec::keypoint_regressor() };
            let policy = if augment {
                Some(ds.manifest().scenario.augment.clone().unwrap_or_default())
            } else {
                None
            };
            let cfg = TrainConfig { epochs, batch_size: batch, learning_rate: lr, seed, augment: policy, curve_path: curve };
            let outcome = train_with_progress(&spec, &set, &cfg, |epoch, loss| {
                eprintln!("epoch {:>4}  loss {loss:.6}", epoch + 1);
            })?;
            save_weights(&outcome.network, &out)?;
            if let Some(last) = outcome.loss_curve.last() {
                println!("trained {} epochs on {} images, final loss {last:.6}", epochs, set.len());
            }
            Ok(())
        }
        Command::Infer { weights, image, overlay, json } => {
            let net = load_weights(&weights)?;
            let img = ImageBuffer::load(&image)?;
            let inf = infer(&net, &img)?;
            let size = (img.width(), img.height());
            let kps = keypoints_from_norm(&inf.keypoints_norm, size);
            let polygon = (inf.pitch_polygon.len() >= 3).then(|| PitchPolygon::from_vertices(inf.pitch_polygon.clone())).transpose()?;
            let footprint = project_all(&inf.homography, &inf.footprint_m);
            let layers = Overlay { keypoints: &kps, polygon: polygon.as_ref(), footprint: Some(&footprint), players: &[] };
            write_png(&render_overlay(&img, &layers), &overlay)?;
            let text = serde_json::to_string_pretty(&inf).expect("inference serializes");
            match json {
                Some(p) => fs::write(&p, text + "\n").map_err(|e| pitchforge::Error::Io { path: p, source: e })?,
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::Eval { weights, data, report } => {
            let r = evaluate(&weights, &data)?;
            write_report_csv(&r, &report)?;
            let k = r.keypoint_error_px;
            println!("images: {}", r.rows.len());
            println!("keypoint error px: mean {:.3} median {:.3} p95 {:.3}", k.mean, k.median, k.p95);
            if let Some(s) = r.reprojection_error_px {
                println!("reprojection error px: mean {:.3} median {:.3} p95 {:.3}", s.mean, s.median, s.p95);
            }
            if let Some(s) = r.player_error_m {
                println!("player error m: mean {:.3} median {:.3} p95 {:.3}", s.mean, s.median, s.p95);
            }
            println!("failed fits: {}", r.failed_fits);
            Ok(())
        }
        Command::Localize { weights, image, feet } => {
            let net = load_weights(&weights)?;
            let img = ImageBuffer::load(&image)?;
            let inf = infer(&net, &img)?;
            for foot in feet {
                let loc = locate_player(&inf.homography, &foot)?;
                let row = serde_json::json!({
                    "foot": foot,
                    "position_m": loc.position,
                    "out_of_field": loc.out_of_field,
                });
                println!("{row}");
            }
            Ok(())
        }
        Command::Overlay { annotations, image, out, id } => {
            let rec = find_record(&annotations, &image, id)?;
            let img = ImageBuffer::load(&image)?;
            if (img.width(), img.height()) != rec.image_size() {
                return Err(usage(format!(
                    "image is {}x{}, record {} expects {:?}",
                    img.width(),
                    img.height(),
                    rec.id,
                    rec.image_size()
                )));
            }
            let template = standard_template();
            let size = rec.image_size();
            let polygon = pitch_mask_polygon(&rec.homography_gt, &template, size)?;
            let footprint = project_all(&rec.homography_gt, &camera_footprint(&rec.homography_gt, size)?);
            let feet: Vec<ImagePoint> = rec.players_gt.iter().map(|p| p.foot).collect();
            let layers = Overlay::annotation_layers(&rec, polygon.as_ref(), Some(&footprint), &feet);
            write_png(&render_overlay(&img, &layers), &out)
        }
    }
}

fn project_all(h: &Homography, pts: &[PitchPoint]) -> Vec<ImagePoint> {
    pts.iter().filter_map(|p| h.map_pitch(p).ok()).collect()
}

fn write_png(img: &ImageBuffer, path: &Path) -> Result<(), Failure> {
    fs::write(path, img.encode_png()).map_err(|e| pitchforge::Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

fn find_record(annotations: &Path, image: &Path, id: Option<u64>) -> Result<AnnotationRecord, Failure> {
    let text = fs::read_to_string(annotations)
        .map_err(|e| pitchforge::Error::Io { path: annotations.to_path_buf(), source: e })?;
    let mut records = Vec::new();
    let single = serde_json::from_str::<AnnotationRecord>(&text).ok();
    let lines = if single.is_some() { "" } else { text.as_str() };
    records.extend(single);
    for (n, line) in lines.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: AnnotationRecord = serde_json::from_str(line).map_err(|e| pitchforge::Error::Format {
            path: annotations.to_path_buf(),
            reason: format!("line {}: {e}", n + 1),
        })?;
        records.push(rec);
    }
    if let Some(id) = id {
        return records.into_iter().find(|r| r.id == id).ok_or_else(|| usage(format!("no record with id {id}")));
    }
    if records.len() == 1 {
        return Ok(records.remove(0));
    }
    let name = image.file_name().context("image path has no file name")?;
    records
        .into_iter()
        .find(|r| Path::new(&r.image_path).file_name() == Some(name))
        .ok_or_else(|| usage(format!("no record matches image {}; pass --id", image.display())))
}
