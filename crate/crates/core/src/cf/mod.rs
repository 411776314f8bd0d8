//! Collaborative filtering: implicit rating matrix, alternating-least-squares
//! matrix factorization, and a user-kNN baseline.

mod als;
mod matrix;
mod nncf;

pub use als::{
    als_train, objective, predict, top_n, AlsParams, AlsTrace, FactorModel, MODEL_FORMAT,
};
pub use matrix::{build_rating_matrix, build_rating_matrix_with, Aggregation, RatingMatrix};
pub use nncf::nncf_scores;
