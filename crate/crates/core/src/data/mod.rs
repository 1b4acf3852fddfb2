//! Datasets, weight files and the demo trainer.

pub mod idx;
pub mod synthetic;
pub mod train;
pub mod weights;

pub use idx::{load_idx, load_images, load_labels, IdxData};
pub use synthetic::{synthetic_digits, write_fixture};
pub use train::{accuracy, train_logreg_plaintext, TrainConfig, TrainOutcome};
pub use weights::WeightsContainer;
