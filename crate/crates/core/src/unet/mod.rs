//! A small U-Net: contracting and expanding convolutional paths joined by
//! skip connections, with hand-written gradients and an Adam trainer.

pub mod ops;
mod model;
mod tensor;
mod train;
pub mod weights;

pub use model::{backward, build_unet, forward, ModelWeights, Param, Tape, UNetSpec};
pub use tensor::Tensor4;
pub use train::{
    image_tensor, infer, mask_tensor, mean_loss, pixel_accuracy, predict_probabilities, train, TrainConfig,
    TrainReport, UNetSegmenter,
};
