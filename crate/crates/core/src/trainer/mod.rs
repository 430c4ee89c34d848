//! Desk-scale joint training demo: synthetic band segmentation under
//! intensity-domain shift, a minimal head, Adam with cosine annealing.

pub mod data;
mod experiment;
pub mod head;
pub mod loss;
pub mod optim;
mod train;

pub use data::{generate_dataset, standard_suite, DomainSpec, SyntheticSample};
pub use experiment::{
    ablation_csv, dice_table, metrics_csv, run_ablation, run_experiment, AblationRow,
    ExperimentResult, ExperimentSpec, ABLATION_ARMS,
};
pub use head::HeadModel;
pub use loss::{dice_bce_loss, dice_score};
pub use optim::{Adam, CosineAnnealing};
pub use train::{
    evaluate_ssdg, mean_dice, split_dataset, ssdg_advantage, train, DomainDice, EpochRecord,
    FeatureExtractor, SegmentationModel, SsdgReport, TrainConfig, TrainOutcome,
};
