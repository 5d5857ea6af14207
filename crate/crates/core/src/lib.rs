//! Adaptive exact selection of sparse functional-ANOVA components in the
//! Gaussian sequence model.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod extremal;
pub mod lattice;
pub mod numeric;
pub mod quadrature;
pub mod risk_lab;
pub mod rng;
pub mod selector;
pub mod signal_bank;

pub use error::{Error, Result};
pub use extremal::{CalibrationMode, GridSpec, OrderGrid, Regime, WeightProfile};
pub use lattice::{DimensionSpec, FrequencyIndex, LatticePoints, Subset, SubsetMode};
pub use quadrature::QuadratureSpec;
pub use risk_lab::{EnumerationMode, RegimeVerdict, RiskReport, SweepRow, Verdict};
pub use selector::{Engine, EpsHatRule, Observation, SelectionResult, SelectorConfig, SelectorOptions, TruncationMode};
pub use signal_bank::{CoefficientTable, ComponentSpec, PatternMode, SparsityPattern};
