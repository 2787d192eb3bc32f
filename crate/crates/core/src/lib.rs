//! Sensitivity analysis for matched-pair instrumental variable studies.
//!
//! Inference targets the effect ratio `lambda`, the ratio of the average
//! effect of encouragement on outcomes to its average effect on exposure.
//! Tests are studentized and remain valid when individual effects are
//! heterogeneous. Hidden bias of magnitude `gamma` is handled by a worst-case
//! reference distribution.
//!
//! ```
//! use ivsens::prelude::*;
//!
//! let pairs = vec![
//!     MatchedPair::encouraged_first("a", [1.0, 0.0], [5.0, 1.0]),
//!     MatchedPair::encouraged_first("b", [1.0, 0.0], [4.0, 2.0]),
//!     MatchedPair::encouraged_first("c", [1.0, 1.0], [3.0, 2.5]),
//!     MatchedPair::encouraged_first("d", [1.0, 0.0], [6.0, 0.5]),
//! ];
//! let data = PairedDataset::new(pairs, vec![]).unwrap();
//! assert_eq!(effect_ratio_estimate(&data).unwrap(), 4.0);
//!
//! let q = build_q_intercept(data.len()).unwrap();
//! let params = SensitivityParams::new(1.0, 0.05, 999, 7).unwrap();
//! let res = sens_test(&data, 0.0, &params, &q, Side::Greater).unwrap();
//! assert!(res.p_bound > 0.0 && res.p_bound <= 1.0);
//! ```

pub mod adjusted;
pub mod design;
pub mod error;
pub mod io;
pub mod mcnemar;
pub mod model;
pub mod omnibus;
pub mod pairing;
pub mod quadrature;
pub mod reference;
pub mod sim;
pub mod variance;

pub use error::{Error, Result};

/// The commonly used types and functions.
pub mod prelude {
    pub use crate::adjusted::{adjusted_diffs, gamma_shift, AdjustedDiffs};
    pub use crate::design::{abs_moment, design_sensitivity, table5, MixtureSpec, NoiseFamily};
    pub use crate::error::{Error, Result};
    pub use crate::mcnemar::{check_equivalence, mcnemar_decompose, mcnemar_sens_p};
    pub use crate::model::{effect_ratio_estimate, MatchedPair, PairedDataset, SensitivityParams};
    pub use crate::omnibus::{omnibus_test, prop_dose_p, OmnibusConfig, OmnibusResult};
    pub use crate::pairing::{mahalanobis_matrix, pair_pairs, DistanceMatrix, PairingEngine, PairsOfPairs};
    pub use crate::reference::{
        reference_exact, sens_interval, sens_test, sens_test_exact, sensitivity_value, Engine, Reference, SensInterval,
        SensResult, SensValue, Side,
    };
    pub use crate::variance::{build_q, build_q_intercept, build_q_pop, build_q_regression, se_q, DesignKind, QDesign};
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/effect-ratio.md")]
    struct EffectRatio;
    #[doc = include_str!("../../../book/src/sensitivity.md")]
    struct Sensitivity;
    #[doc = include_str!("../../../book/src/standard-errors.md")]
    struct StandardErrors;
    #[doc = include_str!("../../../book/src/binary-outcomes.md")]
    struct BinaryOutcomes;
    #[doc = include_str!("../../../book/src/omnibus.md")]
    struct Omnibus;
    #[doc = include_str!("../../../book/src/design-sensitivity.md")]
    struct DesignSensitivity;
    #[doc = include_str!("../../../book/src/simulation.md")]
    struct Simulation;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
