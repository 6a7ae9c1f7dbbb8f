//! Stacked generalization over base-learner class probabilities: base
//! selection, feature construction, KNN / random-forest / boosted-tree
//! meta-learners and cross-validated hyperparameter search.

mod features;
mod forest;
mod gbdt;
mod knn;
mod meta;
mod search;
mod stack;
mod tree;

pub use features::{select_base_learners, stack_features, StackedFeatures};
pub use forest::{ForestParams, RandomForest};
pub use gbdt::{Gbdt, GbdtParams};
pub use knn::Knn;
pub use meta::{MetaLearnerSpec, MetaModel};
pub use search::{
    cross_val_search, stratified_folds, CellScore, GridSpace, SearchGrid, SearchMode, SearchResult, SelectionMetric,
};
pub use stack::{build_stack_data, fit_and_evaluate, run_stack, BaseLearner, StackData, StackMode, StackOutcome};
