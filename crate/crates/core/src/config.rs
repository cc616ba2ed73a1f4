use serde::{Deserialize, Serialize};

use crate::claims::{unit_interval, DomainError};
use crate::retrieval::DEFAULT_BUDGET;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LcsMode {
    /// Step assertions compared against the rule engine.
    #[default]
    Rules,
    /// The chat provider grades the trace.
    Provider,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub retrieval_budget: usize,
    pub seed: u64,
    /// sigmoid of the mean claim weight instead of the sum
    pub kas_mean_normalized: bool,
    pub lcs_mode: LcsMode,
    pub template_version: String,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            lambda: 0.75,
            retrieval_budget: DEFAULT_BUDGET,
            seed: 0,
            kas_mean_normalized: false,
            lcs_mode: LcsMode::Rules,
            template_version: crate::egdr::DEFAULT_TEMPLATE_VERSION.to_string(),
        }
    }
}

impl ScoringConfig {
    /// The configuration whose arithmetic matches the single worked example
    /// (KAS 0.582, LCS 0, DCS 0.291).
    pub fn worked_example() -> Self {
        Self { lambda: 0.5, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        unit_interval("alpha", self.alpha)?;
        unit_interval("lambda", self.lambda)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ScoringConfig::default();
        assert_eq!((c.alpha, c.lambda, c.retrieval_budget), (0.5, 0.75, 32));
        assert_eq!(ScoringConfig::worked_example().lambda, 0.5);
        assert!(c.validate().is_ok());
        assert!(ScoringConfig { alpha: 1.5, ..c.clone() }.validate().is_err());
        assert!(ScoringConfig { lambda: f64::NAN, ..c }.validate().is_err());
    }
}
