//! Matching-based comparison estimators of the ATT.

mod matching;
mod propensity;

pub use matching::{
    att_from_matches, match_cem, match_kernel, match_nn, silverman_bandwidth, sturges_bins,
    CemBins, MatchMethod, MatchResult, TreatedMatch,
};
pub use propensity::{fit_propensity, PropensityModel};
