//! Crop recommendation from soil and weather readings, with global and
//! local explanations of every prediction.
//!
//! - [`data`]: CSV ingestion, validation, stratified splits, scaling.
//! - [`models`]: KNN, random forest, decision tree, SVM, gradient boosting
//!   and MLP classifiers plus grid search and persistence.
//! - [`evaluation`]: confusion matrices and macro-averaged reports.
//! - [`explain`]: permutation/gain importance, decision-path contributions,
//!   exact and kernel Shapley values, LIME rules and counterfactual search.

pub mod data;
pub mod evaluation;
pub mod explain;
pub mod models;
