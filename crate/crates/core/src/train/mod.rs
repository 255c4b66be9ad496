//! Losses, mixup and the three training stages.

mod config;
mod data;
mod loss;
mod mixup;
mod stages;

pub use config::{Stage, TrainConfig};
pub(crate) use data::par_map;
pub use data::{load_bank_split, load_split, ClipData, FeatureSettings, SampleData, SplitData};
pub use loss::{classification_loss, clip_bce, clip_bce_loss, frame_bce, frame_bce_loss, total_loss, LossBreakdown};
pub use mixup::{mixup_pair, mixup_ratio, MixSample, MixupConfig, MixupMode};
pub use stages::{
    ignore_epochs, joint_finetune, pretrain_conditional, reference_crop_frames, train_detection, EpochHook,
    EpochRecord, StepRecord, TrainLog, TrainOutcome,
};
