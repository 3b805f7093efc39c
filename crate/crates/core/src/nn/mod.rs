//! Convolutional keypoint regressor on `f64` tensors: layer primitives with
//! hand-written backward passes, Adam, minibatch training and a binary
//! weight format.

pub mod adam;
pub mod io;
pub mod network;
pub mod ops;
pub mod tensor;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use io::{load_weights, save_weights};
pub use network::{Layer, LayerSpec, Mode, Network, NetworkSpec, KEYPOINT_OUTPUTS};
pub use tensor::Tensor;
pub use train::{image_to_chw, train, train_with_progress, write_loss_curve, TrainConfig, TrainOutcome, TrainingSet};

use crate::error::{Error, Result};
use crate::raster::ImageBuffer;

/// Eval-mode output for one image: normalized keypoints `(u0, v0, u1, ...)`.
pub fn predict(net: &Network, image: &ImageBuffer) -> Result<Vec<f64>> {
    let [c, h, w] = net.input_shape();
    if c != 3 || (image.width() as usize, image.height() as usize) != (w, h) {
        return Err(Error::shape(
            "predict",
            format!("{}x{} RGB image for network input {:?}", image.width(), image.height(), [c, h, w]),
        ));
    }
    let x = Tensor::new(&[1, c, h, w], train::image_to_chw(image))?;
    Ok(net.predict_batch(x)?.into_data())
}
