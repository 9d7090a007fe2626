//! Published MedMNIST transfer tables, compiled into the crate.

use crate::data::GroundTruthTable;
use crate::rank::TauTable;

pub const SOURCE_DATASETS_AUC_CSV: &str = include_str!("../fixtures/source_datasets_auc.csv");
pub const ARCHITECTURES_AUC_CSV: &str = include_str!("../fixtures/architectures_auc.csv");
pub const TAU_DATASET_TRANSFERABILITY_CSV: &str =
    include_str!("../fixtures/tau_dataset_transferability.csv");
pub const TAU_MODEL_TRANSFERABILITY_CSV: &str =
    include_str!("../fixtures/tau_model_transferability.csv");

/// ResNet18 pre-trained on 15 source datasets, fine-tuned on 11 targets.
pub fn source_datasets_auc() -> GroundTruthTable {
    GroundTruthTable::from_csv_str(SOURCE_DATASETS_AUC_CSV).expect("shipped fixture parses")
}

/// Nine ImageNet-pretrained architectures, fine-tuned on 11 targets.
pub fn architectures_auc() -> GroundTruthTable {
    GroundTruthTable::from_csv_str(ARCHITECTURES_AUC_CSV).expect("shipped fixture parses")
}

/// Weighted Kendall tau per target of seven metrics for source-dataset selection.
pub fn tau_dataset_transferability() -> TauTable {
    TauTable::from_csv_str(TAU_DATASET_TRANSFERABILITY_CSV).expect("shipped fixture parses")
}

/// Weighted Kendall tau per target of seven metrics for architecture selection.
pub fn tau_model_transferability() -> TauTable {
    TauTable::from_csv_str(TAU_MODEL_TRANSFERABILITY_CSV).expect("shipped fixture parses")
}
