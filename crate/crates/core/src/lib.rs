//! Intensity estimation for non-homogeneous Poisson processes by measure
//! transport.
//!
//! The process density on a rectangular domain is modelled as the pullback of
//! a standard normal through a composition of increasing triangular maps
//! (neural autoregressive flows by default). The integrated intensity is
//! estimated by the observed count, so `lambda(x) = n * rho(x)`.
//!
//! Modules:
//! - [`diffkit`]: reverse-mode differentiation used to train the maps.
//! - [`flow`]: triangular layers, their composition and the log density.
//! - [`estimate`]: the maximum-likelihood fit and the fitted intensity.
//! - [`simulate`]: map inversion, sampling, and thinning for test intensities.
//! - [`bootstrap`]: nonparametric bootstrap standard-error and exceedance surfaces.
//! - [`evalkit`]: KDE baseline, L2 distance, PIT/KS goodness of fit.
//! - [`io`] and [`cli`]: CSV and model archives, and the `nhpp` command line.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod cli;
pub mod diffkit;
pub mod domain;
pub mod estimate;
pub mod evalkit;
pub mod flow;
pub mod grid;
pub mod io;
pub mod rng;
pub mod simulate;

pub use domain::{DomainBounds, PointPattern};
pub use estimate::{fit, FitConfig, FittedIntensity};
pub use flow::{SublayerKind, TransportStack};
