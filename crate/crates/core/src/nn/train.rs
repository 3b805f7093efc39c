use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::augment::{apply_policy, AugmentPolicy};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::raster::ImageBuffer;
use crate::rng::{RandomStream, StreamDomain};

use super::adam::{AdamConfig, AdamState};
use super::network::{Mode, Network, NetworkSpec};
use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Applied to each sample as it enters a batch.
    pub augment: Option<AugmentPolicy>,
    pub curve_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 500, batch_size: 50, learning_rate: 1e-3, seed: 0, augment: None, curve_path: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Domain("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Domain(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if let Some(p) = &self.augment {
            p.validate()?;
        }
        Ok(())
    }
}

/// Images kept as 8-bit RGB with their regression targets.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    size: (u32, u32),
    pixels: Vec<Vec<u8>>,
    targets: Vec<Vec<f64>>,
}

impl TrainingSet {
    pub fn new(width: u32, height: u32) -> Self {
        Self { size: (width, height), ..Self::default() }
    }

    pub fn push(&mut self, image: &ImageBuffer, target: Vec<f64>) -> Result<()> {
        if (image.width(), image.height()) != self.size {
            return Err(Error::shape(
                "TrainingSet::push",
                format!("{}x{} image in a {}x{} set", image.width(), image.height(), self.size.0, self.size.1),
            ));
        }
        self.pixels.push(image.to_rgb8());
        self.targets.push(target);
        Ok(())
    }

    /// Loads `ids` from an opened dataset with their normalized keypoints as
    /// targets.
    pub fn from_dataset(ds: &Dataset, ids: impl IntoIterator<Item = u64>, verify: bool) -> Result<Self> {
        let ids: Vec<u64> = ids.into_iter().collect();
        let first = ids.first().ok_or(Error::InsufficientData(0))?;
        let (w, h) = ds.record(*first)?.image_size();
        let images: Vec<ImageBuffer> = ids.par_iter().map(|&id| ds.load_image(id, verify)).collect::<Result<_>>()?;
        let mut set = Self::new(w, h);
        for (id, img) in ids.iter().zip(&images) {
            set.push(img, ds.record(*id)?.keypoints_norm.clone())?;
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn image(&self, i: usize) -> ImageBuffer {
        ImageBuffer::from_rgb8(self.size.0, self.size.1, &self.pixels[i]).expect("stored with matching size")
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i]
    }
}

/// Planar `[C, H, W]` layout of an interleaved RGB image.
pub fn image_to_chw(img: &ImageBuffer) -> Vec<f64> {
    let n = img.width() as usize * img.height() as usize;
    let mut out = vec![0.0; 3 * n];
    for (p, px) in img.data().chunks(3).enumerate() {
        for c in 0..3 {
            out[c * n + p] = px[c] as f64;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    /// Mean per-sample loss of each epoch.
    pub loss_curve: Vec<f64>,
}

pub fn train(spec: &NetworkSpec, data: &TrainingSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(spec, data, cfg, |_, _| {})
}

/// Minibatch Adam on the mean squared keypoint error. Every random choice
/// (initialization, shuffling, augmentation, dropout) comes from a stream
/// derived from `cfg.seed`, so the run is reproducible.
pub fn train_with_progress(
    spec: &NetworkSpec,
    data: &TrainingSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData(0));
    }
    let out_len = spec.output_len()?;
    let [c, h, w] = spec.input;
    if c != 3 || (w as u32, h as u32) != data.size {
        return Err(Error::shape("train", format!("{:?} images for network input {:?}", data.size, spec.input)));
    }
    if let Some(bad) = data.targets.iter().position(|t| t.len() != out_len) {
        return Err(Error::shape("train", format!("sample {bad}: target length {} vs {out_len}", data.targets[bad].len())));
    }

    let mut network = Network::new(spec, &mut RandomStream::derive(cfg.seed, StreamDomain::WeightInit, 0))?;
    let names = network.param_names();
    let shapes: Vec<Vec<usize>> = network.params().iter().map(|t| t.shape().to_vec()).collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
    let mut adam = AdamState::new(AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() }, &shape_refs);

    let n = data.len();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        RandomStream::derive(cfg.seed, StreamDomain::Shuffle, epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let bs = batch.len();
            let inputs: Vec<Vec<f64>> = batch
                .par_iter()
                .map(|&i| {
                    let img = data.image(i);
                    let img = match &cfg.augment {
                        Some(policy) => {
                            let key = (epoch * n + i) as u64;
                            apply_policy(&img, policy, &mut RandomStream::derive(cfg.seed, StreamDomain::Augment, key))?
                        }
                        None => img,
                    };
                    Ok(image_to_chw(&img))
                })
                .collect::<Result<_>>()?;
            let x = Tensor::new(&[bs, c, h, w], inputs.concat())?;
            let mut dropout = RandomStream::derive(cfg.seed, StreamDomain::Dropout, step);
            let (y, trace) = network.forward(x, Mode::Train(&mut dropout))?;

            let mut grad = vec![0.0; bs * out_len];
            let mut batch_loss = 0.0;
            for (k, &i) in batch.iter().enumerate() {
                let target = data.target(i);
                let pred = y.sample(k);
                let mut loss = 0.0;
                for j in 0..out_len {
                    let d = pred[j] - target[j];
                    loss += d * d;
                    grad[k * out_len + j] = 2.0 * d / (out_len * bs) as f64;
                }
                batch_loss += loss / out_len as f64;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { context: format!("non-finite loss at epoch {epoch}, batch {b}") });
            }
            let grads = network.backward(trace, Tensor::new(&[bs, out_len], grad)?)?;
            let grad_refs: Vec<&Tensor> = grads.iter().flat_map(|g| [&g.weights, &g.bias]).collect();
            adam.step(&mut network.params_mut(), &grad_refs, &names).map_err(|e| match e {
                Error::Divergence { context } => {
                    Error::Divergence { context: format!("{context} at epoch {epoch}, batch {b}") }
                }
                other => other,
            })?;
            epoch_loss += batch_loss;
            step += 1;
        }
        let mean = epoch_loss / n as f64;
        on_epoch(epoch, mean);
        curve.push(mean);
    }
    if let Some(path) = &cfg.curve_path {
        write_loss_curve(path, &curve)?;
    }
    Ok(TrainOutcome { network, loss_curve: curve })
}

/// CSV with header `epoch,mean_loss`; epochs numbered from 1.
pub fn write_loss_curve(path: &Path, curve: &[f64]) -> Result<()> {
    let mut text = String::from("epoch,mean_loss\n");
    for (i, l) in curve.iter().enumerate() {
        text.push_str(&format!("{},{l}\n", i + 1));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::LayerSpec;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            input: [3, 8, 8],
            layers: vec![
                LayerSpec::Conv { out_channels: 4, kernel: 3, stride: 1, pad: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool,
                LayerSpec::Flatten,
                LayerSpec::Dense { out: 16 },
                LayerSpec::Relu,
                LayerSpec::Dropout { p: 0.1 },
                LayerSpec::Dense { out: 2 },
            ],
        }
    }

    /// Bright square whose center is the target.
    fn toy_set(n: usize) -> TrainingSet {
        let mut set = TrainingSet::new(8, 8);
        let mut rng = RandomStream::from_seed(77);
        for _ in 0..n {
            let (cx, cy) = (rng.int_inclusive(1, 5) as u32, rng.int_inclusive(1, 5) as u32);
            let mut img = ImageBuffer::new(8, 8);
            for y in cy..cy + 2 {
                for x in cx..cx + 2 {
                    img.set(x, y, [1.0; 3]);
                }
            }
            set.push(&img, vec![(cx as f64 + 1.0) / 8.0, (cy as f64 + 1.0) / 8.0]).unwrap();
        }
        set
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig { epochs, batch_size: 8, learning_rate: 3e-3, seed: 5, ..TrainConfig::default() }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let out = train(&tiny_spec(), &toy_set(10), &cfg(0)).unwrap();
        assert!(out.loss_curve.is_empty());
        let init = Network::new(&tiny_spec(), &mut RandomStream::derive(5, StreamDomain::WeightInit, 0)).unwrap();
        assert_eq!(out.network, init);
    }

    #[test]
    fn loss_decreases_and_runs_repeat_exactly() {
        let data = toy_set(40);
        let a = train(&tiny_spec(), &data, &cfg(40)).unwrap();
        assert!(a.loss_curve.iter().all(|l| l.is_finite()));
        assert!(a.loss_curve[39] < 0.5 * a.loss_curve[0], "{:?}", a.loss_curve);
        let b = train(&tiny_spec(), &data, &cfg(40)).unwrap();
        assert_eq!(a.loss_curve, b.loss_curve);
        assert_eq!(a.network, b.network);
    }

    #[test]
    fn thread_count_does_not_change_training() {
        let data = toy_set(24);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train(&tiny_spec(), &data, &TrainConfig { augment: Some(AugmentPolicy::default()), ..cfg(3) }))
                .unwrap()
        };
        let (a, b) = (run(1), run(3));
        assert_eq!(a.loss_curve, b.loss_curve);
        assert_eq!(a.network, b.network);
    }

    #[test]
    fn curve_csv_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let out = train(&tiny_spec(), &toy_set(8), &TrainConfig { curve_path: Some(path.clone()), ..cfg(2) }).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,mean_loss");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2].split(',').nth(1).unwrap().parse::<f64>().unwrap(), out.loss_curve[1]);

        assert!(train(&tiny_spec(), &toy_set(8), &TrainConfig { batch_size: 0, ..cfg(1) }).is_err());
        assert!(matches!(train(&tiny_spec(), &TrainingSet::new(8, 8), &cfg(1)), Err(Error::InsufficientData(0))));
        assert!(train(&tiny_spec(), &TrainingSet::new(16, 8), &cfg(1)).is_err());
    }

    #[test]
    fn channel_planes() {
        let mut img = ImageBuffer::new(2, 1);
        img.set(1, 0, [0.2, 0.4, 0.6]);
        let chw = image_to_chw(&img);
        assert_eq!(chw.len(), 6);
        assert!((chw[1] - 0.2).abs() < 1e-7 && (chw[3] - 0.4).abs() < 1e-7 && (chw[5] - 0.6).abs() < 1e-7);
    }
}
