//! Fine-tuning objectives, optimizer and training loops.

pub mod loss;
pub mod optimizer;
pub mod pretrain;
pub mod train;

pub use loss::{draw_pair, pair_loss, ssf_loss, LossParts, ModelPredictor, NoisePredictor, PairDraw, TermDraw};
pub use optimizer::Adam;
pub use pretrain::{pretrain_autoencoder, pretrain_base, PretrainConfig};
pub use train::{
    generate_prior_images, loss_window_means, selection_sequence, train_dreambooth, train_multi,
    train_multi_observed, train_single, train_single_observed, LossRow, MultiTrainConfig, Observer, TrainConfig,
    TrainMode, TrainOutcome, DEFAULT_LAMBDA, DEFAULT_LEARNING_RATE, DEFAULT_PRIOR_IMAGES, DEFAULT_STEPS,
};
