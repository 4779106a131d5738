use crate::error::{invalid, Result};

use super::StftConfig;

/// Frequency bands with their own prediction order `L`, plus the prediction
/// delay `D` shared by all bands.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPlan {
    /// Ascending band edges in Hz. A bin exactly on an edge belongs to the upper band.
    pub transition_freqs: Vec<f64>,
    /// Prediction order per band, `transition_freqs.len() + 1` entries.
    pub orders: Vec<usize>,
    pub delay: usize,
}

impl Default for BandPlan {
    fn default() -> Self {
        Self {
            transition_freqs: vec![800.0, 2000.0],
            orders: vec![12, 8, 6],
            delay: 1,
        }
    }
}

impl BandPlan {
    pub fn new(transition_freqs: Vec<f64>, orders: Vec<usize>, delay: usize) -> Result<Self> {
        let plan = Self { transition_freqs, orders, delay };
        plan.validate()?;
        Ok(plan)
    }

    /// Same band edges with every order set to zero (plain beamformer).
    pub fn beamformer_only(&self) -> Self {
        Self {
            orders: vec![0; self.orders.len()],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.orders.len() != self.transition_freqs.len() + 1 {
            return Err(invalid(format!(
                "{} orders need {} transition frequencies, got {}",
                self.orders.len(),
                self.orders.len().saturating_sub(1),
                self.transition_freqs.len()
            )));
        }
        if self.delay < 1 {
            return Err(invalid("prediction delay must be at least 1"));
        }
        if self.transition_freqs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("transition frequencies must be strictly increasing"));
        }
        for &l in &self.orders {
            if l != 0 && l <= self.delay {
                return Err(invalid(format!(
                    "prediction order {l} must exceed the delay {} (or be 0)",
                    self.delay
                )));
            }
        }
        Ok(())
    }

    /// Prediction order of the band containing bin `k`.
    pub fn band_order(&self, k: usize, config: &StftConfig) -> usize {
        let f = config.bin_freq(k);
        let band = self.transition_freqs.iter().take_while(|&&t| f >= t).count();
        self.orders[band]
    }
}
