//! Conditional autoencoder: a ReLU network maps lagged characteristics to
//! factor loadings, factors are linear projections of characteristic-managed
//! portfolio returns, and both are fit jointly on the pricing loss.

mod model;
mod train;

pub use model::{factor_series, load_windows, save_windows, CaeEnsemble, CaeModel, DenseLayer};
pub use train::{
    flatten_params, init_model, pricing_loss, pricing_loss_gradient, pricing_r2, split_window, train, train_with_reports, unflatten_params,
    CaeConfig, Optimizer, PricingLoss, TrainReport,
};
