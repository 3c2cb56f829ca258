//! Design-space exploration over PE block shapes `(k1, k2, k3, k4)` under
//! FPGA LUT and BRAM budgets.

use std::cmp::Ordering;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataflow::{plan_buffers, AcceleratorSpec};
use crate::error::{Error, Result};
use crate::modelzoo::{build_workload, ImageDims, ModelSpec, StageGeom};
use crate::perfmodel::analyze;

/// Environment variable capping the worker pool of [`search_optimal`].
pub const THREADS_ENV: &str = "VITA_SIM_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourceBudget {
    pub lut_budget: u64,
    /// Informational: DSP slices are not used for int8 MACs.
    pub dsp_budget: u64,
    pub bram_bytes: u64,
    pub luts_per_mac: u64,
    /// Fraction of LUTs held back for control logic, softmax and LayerNorm.
    pub control_lut_reserve: f64,
}

impl Default for ResourceBudget {
    fn default() -> Self {
        Self::zc7020()
    }
}

impl ResourceBudget {
    pub fn zc7020() -> Self {
        Self {
            lut_budget: 53_200,
            dsp_budget: 220,
            bram_bytes: 645_120,
            luts_per_mac: 90,
            control_lut_reserve: 0.25,
        }
    }

    pub fn zcu102() -> Self {
        Self {
            lut_budget: 274_080,
            dsp_budget: 2_520,
            bram_bytes: 4 * 1024 * 1024,
            luts_per_mac: 90,
            control_lut_reserve: 0.25,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "zc7020" => Ok(Self::zc7020()),
            "zcu102" => Ok(Self::zcu102()),
            _ => Err(Error::Parse(format!(
                "unknown budget preset `{name}` (expected zc7020 or zcu102)"
            ))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let b: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lut_budget == 0 || self.bram_bytes == 0 || self.luts_per_mac == 0 {
            return Err(Error::InvalidSpec("budget fields must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.control_lut_reserve) {
            return Err(Error::InvalidSpec(
                "control_lut_reserve must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Largest MAC-unit count the LUT budget admits.
    pub fn max_mac_units(&self) -> u64 {
        ((1.0 - self.control_lut_reserve) * self.lut_budget as f64 / self.luts_per_mac as f64)
            .floor() as u64
    }

    /// `base` with this budget's resource fields.
    pub fn apply(&self, base: &AcceleratorSpec) -> AcceleratorSpec {
        AcceleratorSpec {
            lut_budget: self.lut_budget,
            dsp_budget: self.dsp_budget,
            bram_bytes: self.bram_bytes,
            luts_per_mac: self.luts_per_mac,
            ..base.clone()
        }
    }
}

/// Inclusive search bounds per block dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigBounds {
    pub k1: (u32, u32),
    pub k2: (u32, u32),
    pub k3: (u32, u32),
    pub k4: (u32, u32),
}

impl Default for ConfigBounds {
    fn default() -> Self {
        Self {
            k1: (1, 64),
            k2: (1, 16),
            k3: (1, 64),
            k4: (1, 16),
        }
    }
}

impl ConfigBounds {
    pub fn uniform(lo: u32, hi: u32) -> Self {
        Self {
            k1: (lo, hi),
            k2: (lo, hi),
            k3: (lo, hi),
            k4: (lo, hi),
        }
    }
}

pub fn mac_units(config: [u32; 4]) -> u64 {
    let [k1, k2, k3, k4] = config.map(u64::from);
    3 * k1 * k2 + 2 * k3 * k4
}

/// Every configuration inside `bounds` whose MAC units fit the LUT budget
/// after the control reserve, provided the model's buffers fit the BRAM budget.
pub fn enumerate_configs(
    budget: &ResourceBudget,
    bounds: &ConfigBounds,
    stages: &[StageGeom],
    base: &AcceleratorSpec,
) -> Result<Vec<[u32; 4]>> {
    budget.validate()?;
    let spec = budget.apply(base);
    if !plan_buffers(stages, &spec).fits() {
        return Err(Error::NoFeasibleConfig);
    }
    let cap = budget.max_mac_units();
    let range = |(lo, hi): (u32, u32)| lo.max(1)..=hi;
    let mut out = Vec::new();
    for k1 in range(bounds.k1) {
        for k2 in range(bounds.k2) {
            let e1 = 3 * k1 as u64 * k2 as u64;
            if e1 >= cap {
                break;
            }
            for k3 in range(bounds.k3) {
                for k4 in range(bounds.k4) {
                    if e1 + 2 * k3 as u64 * k4 as u64 > cap {
                        break;
                    }
                    out.push([k1, k2, k3, k4]);
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::NoFeasibleConfig);
    }
    Ok(out)
}

/// `|D/(k1·k2) − N/(k3·k4)|` as an exact rational.
pub fn balance_residual(config: [u32; 4], dim: u64, tokens: u64) -> Ratio<u64> {
    let [k1, k2, k3, k4] = config.map(u64::from);
    let a = Ratio::new(dim, k1 * k2);
    let b = Ratio::new(tokens, k3 * k4);
    if a >= b {
        a - b
    } else {
        b - a
    }
}

/// Zero balance residual and no tiling padding on either engine.
pub fn is_balanced_exact(config: [u32; 4], g: &StageGeom) -> bool {
    let [k1, k2, k3, k4] = config.map(u64::from);
    let nw = g.attn_tokens();
    balance_residual(config, g.dim, nw) == Ratio::from_integer(0)
        && g.tokens.is_multiple_of(k1)
        && g.dim.is_multiple_of(k2)
        && nw.is_multiple_of(k3)
        && nw.is_multiple_of(k4)
        && g.head_dim.is_multiple_of(k3)
        && g.head_dim.is_multiple_of(k4)
}

/// Floorplan compactness tie-break: widest row of engine 1 plus engine 2,
/// treating the three QKV blocks and the two attention blocks as laid side by side.
pub fn layout_score(config: [u32; 4]) -> u32 {
    let [k1, k2, k3, k4] = config;
    k1.max(3 * k2) + k3.max(2 * k4)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub config: [u32; 4],
    pub mac_units: u64,
    pub total_cycles: u64,
    pub hue: f64,
    pub fps: f64,
    pub bram_peak_bytes: u64,
    /// Rendered `p/q` for serialization; see [`Candidate::residual`].
    pub balance_residual: String,
    pub balance_exact: bool,
    pub layout_score: u32,
    #[serde(skip)]
    residual: Ratio<u64>,
}

impl Candidate {
    pub fn residual(&self) -> Ratio<u64> {
        self.residual
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DseResult {
    pub model: String,
    pub image: String,
    pub budget: ResourceBudget,
    pub evaluated: usize,
    pub ranked: Vec<Candidate>,
}

impl DseResult {
    pub fn top(&self) -> &Candidate {
        &self.ranked[0]
    }

    /// One row per candidate, in rank order.
    pub fn write_csv<W: std::io::Write>(&self, w: W, top: Option<usize>) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "rank",
            "k1",
            "k2",
            "k3",
            "k4",
            "mac_units",
            "total_cycles",
            "hue",
            "fps",
            "bram_peak_bytes",
            "balance_residual",
            "balance_exact",
        ])
        .map_err(Error::from)?;
        for (i, c) in self
            .ranked
            .iter()
            .take(top.unwrap_or(usize::MAX))
            .enumerate()
        {
            let [k1, k2, k3, k4] = c.config;
            out.write_record([
                (i + 1).to_string(),
                k1.to_string(),
                k2.to_string(),
                k3.to_string(),
                k4.to_string(),
                c.mac_units.to_string(),
                c.total_cycles.to_string(),
                format!("{:.6}", c.hue),
                format!("{:.6}", c.fps),
                c.bram_peak_bytes.to_string(),
                c.balance_residual.clone(),
                c.balance_exact.to_string(),
            ])
            .map_err(Error::from)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Rank order: balanced-and-padding-free first, then fewer cycles, higher
/// HUE, more MAC units, smaller layout score, lexicographic configuration.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.balance_exact
        .cmp(&a.balance_exact)
        .then(a.total_cycles.cmp(&b.total_cycles))
        .then(b.hue.total_cmp(&a.hue))
        .then(b.mac_units.cmp(&a.mac_units))
        .then(a.layout_score.cmp(&b.layout_score))
        .then(a.config.cmp(&b.config))
}

/// Worker count: explicit request, else `VITA_SIM_THREADS`, else rayon's default.
pub fn worker_threads(requested: Option<usize>) -> Option<usize> {
    requested.filter(|&n| n > 0).or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
    })
}

/// Score every feasible configuration with the analytical model and rank them.
pub fn search_optimal(
    model: &ModelSpec,
    image: &ImageDims,
    budget: &ResourceBudget,
    bounds: &ConfigBounds,
    base: &AcceleratorSpec,
    threads: Option<usize>,
) -> Result<DseResult> {
    let workload = build_workload(model, image)?;
    let configs = enumerate_configs(budget, bounds, &workload.stages, base)?;
    let spec0 = budget.apply(base);
    let first = &workload.stages[0];
    let evaluate = |&config: &[u32; 4]| -> Result<Candidate> {
        let [k1, k2, k3, k4] = config;
        let spec = AcceleratorSpec {
            k1,
            k2,
            k3,
            k4,
            ..spec0.clone()
        };
        let r = analyze(&workload, &spec)?;
        let residual = balance_residual(config, first.dim, first.attn_tokens());
        Ok(Candidate {
            config,
            mac_units: r.mac_units,
            total_cycles: r.total_cycles,
            hue: r.hue,
            fps: r.fps,
            bram_peak_bytes: r.bram_peak_bytes,
            balance_residual: residual.to_string(),
            balance_exact: workload.stages.iter().all(|g| is_balanced_exact(config, g)),
            layout_score: layout_score(config),
            residual,
        })
    };
    let run = || configs.par_iter().map(evaluate).collect::<Result<Vec<_>>>();
    let mut ranked = match worker_threads(threads) {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidSpec(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    ranked.sort_by(rank_order);
    Ok(DseResult {
        model: model.name.clone(),
        image: image.to_string(),
        budget: budget.clone(),
        evaluated: configs.len(),
        ranked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelzoo::{builtin_model, stage_geometry};

    fn stages(name: &str, side: u32) -> Vec<StageGeom> {
        stage_geometry(&builtin_model(name).unwrap(), &ImageDims::square(side)).unwrap()
    }

    #[test]
    fn zc7020_admits_443_units() {
        assert_eq!(ResourceBudget::zc7020().max_mac_units(), 443);
    }

    #[test]
    fn residual_examples() {
        assert_eq!(
            balance_residual([16, 6, 8, 4], 768, 256),
            Ratio::from_integer(0)
        );
        assert_eq!(
            balance_residual([1, 1, 1, 1], 50, 50),
            Ratio::from_integer(0)
        );
        assert_eq!(balance_residual([16, 6, 8, 4], 192, 196), Ratio::new(33, 8));
    }

    #[test]
    fn tiny_lut_budget_is_infeasible() {
        let b = ResourceBudget {
            lut_budget: 100,
            ..ResourceBudget::zc7020()
        };
        let r = enumerate_configs(
            &b,
            &ConfigBounds::default(),
            &stages("vit_b16", 256),
            &AcceleratorSpec::default(),
        );
        assert!(matches!(r, Err(Error::NoFeasibleConfig)));
    }

    #[test]
    fn small_bounds_enumerate_at_most_sixteen() {
        let r = enumerate_configs(
            &ResourceBudget::zc7020(),
            &ConfigBounds::uniform(1, 2),
            &stages("vit_b16", 256),
            &AcceleratorSpec::default(),
        )
        .unwrap();
        assert_eq!(r.len(), 16);
    }

    #[test]
    fn chosen_config_is_feasible_and_exact() {
        let g = stages("vit_b16", 256);
        let all = enumerate_configs(
            &ResourceBudget::zc7020(),
            &ConfigBounds::default(),
            &g,
            &AcceleratorSpec::default(),
        )
        .unwrap();
        assert!(all.contains(&[16, 6, 8, 4]));
        assert!(is_balanced_exact([16, 6, 8, 4], &g[0]));
        assert_eq!(layout_score([16, 6, 8, 4]), 26);
    }

    #[test]
    fn single_candidate_wins() {
        let b = ConfigBounds {
            k1: (16, 16),
            k2: (6, 6),
            k3: (8, 8),
            k4: (4, 4),
        };
        let r = search_optimal(
            &builtin_model("deit_t").unwrap(),
            &ImageDims::square(224),
            &ResourceBudget::zc7020(),
            &b,
            &AcceleratorSpec::default(),
            Some(1),
        )
        .unwrap();
        assert_eq!(r.ranked.len(), 1);
        assert_eq!(r.top().config, [16, 6, 8, 4]);
    }
}
