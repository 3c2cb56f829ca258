use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// PE-array configuration, clock/power constants and overhead parameters.
///
/// Every field has a default, so a TOML file may list only what it overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcceleratorSpec {
    pub k1: u32,
    pub k2: u32,
    pub k3: u32,
    pub k4: u32,
    pub clock_hz: f64,
    pub power_w: f64,
    pub word_bytes: u32,
    pub dram_words_per_cycle: f64,
    pub bram_bytes: u64,
    pub lut_budget: u64,
    pub luts_per_mac: u64,
    pub dsp_budget: u64,
    /// Softmax unit latency per attention row; `None` means one cycle per head-dim lane (Dh).
    pub softmax_row_fill_cycles: Option<u64>,
    /// LayerNorm statistics throughput in elements per cycle.
    pub ln_elems_per_cycle: f64,
    /// Fixed LayerNorm cost per token; overrides `ln_elems_per_cycle` when set.
    pub ln_cycles_per_token: Option<u64>,
    /// Idle cycles between consecutive pool phases.
    pub phase_drain_cycles: u64,
    /// Start the output projection on PE blocks 1-3 while blocks 4-5 finish the last head.
    pub overlap_projection: bool,
}

impl Default for AcceleratorSpec {
    fn default() -> Self {
        Self {
            k1: 16,
            k2: 6,
            k3: 8,
            k4: 4,
            clock_hz: 150e6,
            power_w: 0.88,
            word_bytes: 4,
            dram_words_per_cycle: 1.0,
            bram_bytes: 645_120,
            lut_budget: 53_200,
            luts_per_mac: 90,
            dsp_budget: 220,
            softmax_row_fill_cycles: None,
            ln_elems_per_cycle: DEFAULT_LN_ELEMS_PER_CYCLE,
            ln_cycles_per_token: None,
            phase_drain_cycles: 0,
            overlap_projection: false,
        }
    }
}

/// Calibrated once against the ViT-B/16 @ 256x256 frame rate and frozen.
pub const DEFAULT_LN_ELEMS_PER_CYCLE: f64 = 2.18;

impl AcceleratorSpec {
    pub fn with_config(k1: u32, k2: u32, k3: u32, k4: u32) -> Self {
        Self {
            k1,
            k2,
            k3,
            k4,
            ..Self::default()
        }
    }

    /// Spec with every overhead parameter disabled.
    pub fn zero_overhead(mut self) -> Self {
        self.softmax_row_fill_cycles = Some(0);
        self.ln_cycles_per_token = Some(0);
        self.phase_drain_cycles = 0;
        self
    }

    pub fn config(&self) -> [u32; 4] {
        [self.k1, self.k2, self.k3, self.k4]
    }

    /// Total MAC units `U = 3·k1·k2 + 2·k3·k4`.
    pub fn mac_units(&self) -> u64 {
        3 * self.engine1_block() + 2 * self.engine2_block()
    }

    pub fn engine1_block(&self) -> u64 {
        self.k1 as u64 * self.k2 as u64
    }

    pub fn engine2_block(&self) -> u64 {
        self.k3 as u64 * self.k4 as u64
    }

    /// Units per half of the pool in the fused MLP; an odd leftover unit idles.
    pub fn mlp_half(&self) -> u64 {
        self.mac_units() / 2
    }

    pub fn dram_bytes_per_cycle(&self) -> f64 {
        self.dram_words_per_cycle * self.word_bytes as f64
    }

    /// Cycles to move `bytes` over DRAM, or `None` when bandwidth is zero.
    pub fn fetch_cycles(&self, bytes: u64) -> Option<u64> {
        let bw = self.dram_bytes_per_cycle();
        if bytes == 0 {
            Some(0)
        } else if bw > 0.0 {
            Some((bytes as f64 / bw).ceil() as u64)
        } else {
            None
        }
    }

    pub fn softmax_fill(&self, head_dim: u64) -> u64 {
        self.softmax_row_fill_cycles.unwrap_or(head_dim)
    }

    /// LayerNorm statistics pass over an `n × d` activation.
    pub fn ln_cycles(&self, n: u64, d: u64) -> u64 {
        match self.ln_cycles_per_token {
            Some(c) => c * n,
            None if self.ln_elems_per_cycle > 0.0 => {
                ((n * d) as f64 / self.ln_elems_per_cycle).ceil() as u64
            }
            None => 0,
        }
    }

    pub fn lut_usage(&self) -> u64 {
        self.mac_units() * self.luts_per_mac
    }

    pub fn validate(&self) -> Result<()> {
        if self.config().contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "PE dims must be positive: {:?}",
                self.config()
            )));
        }
        if !(self.clock_hz.is_finite() && self.clock_hz > 0.0) {
            return Err(Error::InvalidSpec("clock_hz must be positive".into()));
        }
        if !(self.power_w.is_finite() && self.power_w >= 0.0) {
            return Err(Error::InvalidSpec("power_w must be non-negative".into()));
        }
        if self.word_bytes == 0 {
            return Err(Error::InvalidSpec("word_bytes must be positive".into()));
        }
        if !(self.dram_words_per_cycle.is_finite() && self.dram_words_per_cycle >= 0.0) {
            return Err(Error::InvalidSpec(
                "dram_words_per_cycle must be non-negative".into(),
            ));
        }
        if !(self.ln_elems_per_cycle.is_finite() && self.ln_elems_per_cycle >= 0.0) {
            return Err(Error::InvalidSpec(
                "ln_elems_per_cycle must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load_toml(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_units() {
        let s = AcceleratorSpec::default();
        assert_eq!(s.mac_units(), 352);
        assert_eq!(s.mlp_half(), 176);
        assert_eq!(s.fetch_cycles(768), Some(192));
        assert_eq!(s.fetch_cycles(769), Some(193));
    }

    #[test]
    fn zero_bandwidth() {
        let s = AcceleratorSpec {
            dram_words_per_cycle: 0.0,
            ..Default::default()
        };
        assert_eq!(s.fetch_cycles(1), None);
        assert_eq!(s.fetch_cycles(0), Some(0));
    }

    #[test]
    fn toml_partial_override() {
        let s = AcceleratorSpec::from_toml_str("k1 = 8\nphase_drain_cycles = 4\n").unwrap();
        assert_eq!((s.k1, s.k2, s.phase_drain_cycles), (8, 6, 4));
        assert!(AcceleratorSpec::from_toml_str("k9 = 1").is_err());
        assert!(AcceleratorSpec::from_toml_str("k1 = 0").is_err());
    }

    #[test]
    fn ln_cost() {
        let s = AcceleratorSpec::default();
        // ceil(256·768 / 2.18)
        assert_eq!(s.ln_cycles(256, 768), 90_188);
        let two = AcceleratorSpec {
            ln_elems_per_cycle: 2.0,
            ..s.clone()
        };
        assert_eq!(two.ln_cycles(256, 768), 98_304);
        let t = AcceleratorSpec {
            ln_cycles_per_token: Some(3),
            ..s
        };
        assert_eq!(t.ln_cycles(10, 768), 30);
    }
}
