use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::certificate::{YearRange, DEFAULT_WIDTH, DEFAULT_YEAR_BASE, DEFAULT_YEAR_STATES};

/// Hyperparameters fixing every array shape of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of codes; logits have this many columns.
    pub vocab_size: usize,
    /// Grid width W.
    pub width: usize,
    pub d_model: usize,
    pub stage_widths: [usize; 3],
    pub block_counts: [usize; 3],
    pub temporal_dilations: Vec<usize>,
    pub temporal_kernel: usize,
    pub dropout_rate: f64,
    pub head_width: usize,
    pub year_base: u16,
    pub year_states: usize,
    pub ln_eps: f64,
}

impl ModelConfig {
    /// The full-size architecture.
    pub fn paper(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            width: DEFAULT_WIDTH,
            d_model: 512,
            stage_widths: [512, 1024, 1536],
            block_counts: [3, 5, 2],
            temporal_dilations: vec![1, 2],
            temporal_kernel: 3,
            dropout_rate: 0.1,
            head_width: 512,
            year_base: DEFAULT_YEAR_BASE,
            year_states: DEFAULT_YEAR_STATES,
            ln_eps: 1e-6,
        }
    }

    /// Laptop-sized default.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            width: 12,
            d_model: 64,
            stage_widths: [64, 128, 192],
            block_counts: [1, 2, 1],
            head_width: 64,
            ..ModelConfig::paper(vocab_size)
        }
    }

    /// Smallest configuration with every block present, for gradient checks.
    /// Width 7 is the narrowest grid that survives both pooling stages.
    pub fn toy() -> Self {
        ModelConfig {
            width: 7,
            d_model: 8,
            stage_widths: [8, 16, 24],
            block_counts: [1, 1, 1],
            head_width: 8,
            ..ModelConfig::paper(12)
        }
    }

    pub fn years(&self) -> YearRange {
        YearRange {
            base: self.year_base,
            states: self.year_states,
        }
    }

    /// Grid width after the two pooling stages.
    pub fn pooled_widths(&self) -> (usize, usize) {
        let p = |w: usize| (w.saturating_sub(3)) / 2 + 1;
        (p(self.width), p(p(self.width)))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.head_width != self.d_model {
            return fail(format!(
                "head_width ({}) must equal d_model ({}) for the tied output projection",
                self.head_width, self.d_model
            ));
        }
        if self.vocab_size == 0 || self.year_states == 0 {
            return fail("vocab_size and year_states must be positive".into());
        }
        if self.width < 7 {
            return fail(format!("width {} is too small for two pooling stages (need >= 7)", self.width));
        }
        let [s1, s2, s3] = self.stage_widths;
        if s1 != self.d_model {
            return fail(format!("first stage width {s1} must equal d_model {}", self.d_model));
        }
        if s2 < s1 || s3 < s2 {
            return fail(format!("stage widths {:?} must be nondecreasing", self.stage_widths));
        }
        if s1 % 4 != 0 || s2 % 4 != 0 || s3 % 8 != 0 {
            return fail(format!(
                "stage widths {:?} must split into branches (multiples of 4, 4 and 8)",
                self.stage_widths
            ));
        }
        if self.temporal_kernel == 0 || self.temporal_dilations.contains(&0) {
            return fail("temporal kernel and dilations must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} must lie in [0, 1)", self.dropout_rate));
        }
        if !(self.ln_eps > 0.0) {
            return fail("ln_eps must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::paper(7404).validate().unwrap();
        ModelConfig::desk(200).validate().unwrap();
        ModelConfig::toy().validate().unwrap();
        assert_eq!(ModelConfig::paper(7404).pooled_widths(), (9, 4));
        assert_eq!(ModelConfig::desk(200).pooled_widths(), (5, 2));
        assert_eq!(ModelConfig::toy().pooled_widths(), (3, 1));
    }

    #[test]
    fn untied_head_rejected() {
        let mut c = ModelConfig::desk(200);
        c.head_width = 32;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("head_width"), "{err}");
        let mut c = ModelConfig::desk(200);
        c.stage_widths = [64, 128, 100];
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.width = 6;
        assert!(c.validate().is_err());
    }
}
