use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::SgMode;
use crate::decoder::DynamicAttentionWeights;
use crate::encoder::AttentionMap;
use crate::error::{Error, Result};

/// How the caption and scene-graph objectives are mixed.
///
/// Textual form: `baseline`, `linear_int(A)` or `alternative(LO,HI,PERIOD)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AlphaMode {
    Baseline,
    LinearInt(f64),
    /// `low` for the first `period` epochs (scene-graph-heavy phase), then
    /// `high` for the next `period`, alternating.
    Alternative { low: f64, high: f64, period: usize },
}

impl AlphaMode {
    /// Shorthand `Alternative(h)`: low = 1 - h, high = h, period 10. The
    /// complement is rounded to 12 decimals so 0.9 pairs with exactly 0.1.
    pub fn alternative(high: f64) -> Self {
        AlphaMode::Alternative {
            low: ((1.0 - high) * 1e12).round() / 1e12,
            high,
            period: 10,
        }
    }

    pub fn uses_scene_graph(&self) -> bool {
        !matches!(self, AlphaMode::Baseline)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |a: f64| (0.0..=1.0).contains(&a);
        match *self {
            AlphaMode::Baseline => Ok(()),
            AlphaMode::LinearInt(a) if unit(a) => Ok(()),
            AlphaMode::LinearInt(a) => Err(Error::config(format!("alpha {a} outside [0, 1]"))),
            AlphaMode::Alternative { low, high, period } => {
                if !unit(low) || !unit(high) {
                    Err(Error::config("alternative alphas must lie in [0, 1]"))
                } else if low > high {
                    Err(Error::config("alternative requires low <= high"))
                } else if period == 0 {
                    Err(Error::config("alternative period must be >= 1"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

impl fmt::Display for AlphaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaMode::Baseline => write!(f, "baseline"),
            AlphaMode::LinearInt(a) => write!(f, "linear_int({a})"),
            AlphaMode::Alternative { low, high, period } => write!(f, "alternative({low},{high},{period})"),
        }
    }
}

impl FromStr for AlphaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::config(format!("cannot parse alpha mode `{s}`"));
        if s == "baseline" {
            return Ok(AlphaMode::Baseline);
        }
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let args: Vec<&str> = rest.strip_suffix(')').ok_or_else(bad)?.split(',').map(str::trim).collect();
        let num = |i: usize| args[i].parse::<f64>().map_err(|_| bad());
        let mode = match (name.trim(), args.len()) {
            ("linear_int", 1) => AlphaMode::LinearInt(num(0)?),
            ("alternative", 1) => AlphaMode::alternative(num(0)?),
            ("alternative", 3) => AlphaMode::Alternative {
                low: num(0)?,
                high: num(1)?,
                period: args[2].parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        mode.validate()?;
        Ok(mode)
    }
}

impl TryFrom<String> for AlphaMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AlphaMode> for String {
    fn from(m: AlphaMode) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_l1: f64,
    pub lambda_ent: f64,
    pub alpha_mode: AlphaMode,
    pub sg_mode: SgMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_l1: 2.5e-3,
            lambda_ent: 1e-4,
            alpha_mode: AlphaMode::Baseline,
            sg_mode: SgMode::All,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_l1 >= 0.0) || !(self.lambda_ent >= 0.0) {
            return Err(Error::config("regulariser weights must be non-negative"));
        }
        self.alpha_mode.validate()
    }
}

/// One branch's terms: task loss, L1 of the spatial attention, entropy of
/// the stream weights.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BranchTerms {
    pub loss: f64,
    pub l1: f64,
    pub ent: f64,
}

/// Mean absolute spatial attention over both maps and mean entropy of the
/// per-step stream weights.
pub fn regularizers(attn_a: &AttentionMap, attn_b: &AttentionMap, dyn_weights: &[DynamicAttentionWeights]) -> (f64, f64) {
    let n = attn_a.weights.len() + attn_b.weights.len();
    let l1 = if n == 0 {
        0.0
    } else {
        attn_a.weights.iter().chain(&attn_b.weights).map(|w| w.abs()).sum::<f64>() / n as f64
    };
    let ent = if dyn_weights.is_empty() {
        0.0
    } else {
        dyn_weights.iter().map(DynamicAttentionWeights::entropy).sum::<f64>() / dyn_weights.len() as f64
    };
    (l1, ent)
}

fn branch(t: BranchTerms, cfg: &LossConfig) -> f64 {
    t.loss + cfg.lambda_l1 * t.l1 - cfg.lambda_ent * t.ent
}

/// `L_cap + lambda_l1 * L1 - lambda_ent * L_ent`.
pub fn baseline_loss(l_cap: f64, l1: f64, l_ent: f64, cfg: &LossConfig) -> Result<f64> {
    if cfg.lambda_l1 < 0.0 || cfg.lambda_ent < 0.0 {
        return Err(Error::config("regulariser weights must be non-negative"));
    }
    Ok(branch(
        BranchTerms {
            loss: l_cap,
            l1,
            ent: l_ent,
        },
        cfg,
    ))
}

/// `alpha * cap_branch + (1 - alpha) * sgr_branch`, each branch carrying its
/// own L1 and entropy terms.
pub fn combined_loss(cap: BranchTerms, sgr: BranchTerms, alpha: f64, cfg: &LossConfig) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha {alpha} outside [0, 1]")));
    }
    let c = baseline_loss(cap.loss, cap.l1, cap.ent, cfg)?;
    if alpha == 1.0 {
        return Ok(c);
    }
    Ok(alpha * c + (1.0 - alpha) * branch(sgr, cfg))
}

/// Mixing weight for `epoch`; baseline counts as alpha = 1.
pub fn alpha_schedule(epoch: usize, mode: &AlphaMode) -> f64 {
    match *mode {
        AlphaMode::Baseline => 1.0,
        AlphaMode::LinearInt(a) => a,
        AlphaMode::Alternative { low, high, period } => {
            if (epoch / period.max(1)) % 2 == 0 {
                low
            } else {
                high
            }
        }
    }
}

/// Step decay: `initial * factor^(epoch / step_epochs)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub factor: f64,
    pub step_epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 0.01,
            factor: 0.1,
            step_epochs: 20,
        }
    }
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        self.initial * self.factor.powi((epoch / self.step_epochs.max(1)) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0) || !(self.factor > 0.0 && self.factor <= 1.0) || self.step_epochs == 0 {
            return Err(Error::config("learning rate schedule needs initial > 0, factor in (0, 1], step >= 1"));
        }
        Ok(())
    }
}

/// The default step decay evaluated at `epoch`.
pub fn lr_schedule(epoch: usize) -> f64 {
    LrSchedule::default().at(epoch)
}
