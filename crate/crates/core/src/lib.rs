//! Blind estimation of fine-scale DEM measurement-error variance and
//! spatial-correlation width.
//!
//! Error-free terrain inside a patch is modelled as fractional Brownian
//! motion; measurement error as correlated Gaussian noise whose variance and
//! correlation width depend on observable predictors (stacking number, mean
//! elevation). Homogeneous "noise informative" patch groups are found via a
//! CRLB-based homogeneity index, each group yields one ML estimate of one
//! error parameter with its lower-bound SD, and a robust heteroscedastic
//! regression fits candidate bivariate models to those estimates.
//!
//! Modules:
//! - [`raster`]: tile I/O, downsampling, patch extraction and filtering
//! - [`covmodel`]: increment covariance, derivatives, synthetic sampling
//! - [`likelihood`]: log-likelihood, Fisher information, CRLBs, estimators
//! - [`pipeline`]: homogeneity indexing, grouping, iteration to convergence
//! - [`regression`]: candidate models, robust WLS, model selection
//! - [`simulate`]: synthetic DEM/QA tile generation with known ground truth

pub mod covmodel;
pub mod likelihood;
pub mod optim;
pub mod pipeline;
pub mod raster;
pub mod regression;
pub mod simulate;
