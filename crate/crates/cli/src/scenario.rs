//! Strength and neural-delay scenarios applied to a model definition.
//!
//! Scales are set, not multiplied: applying `GlobalWeakness { scale: 0.7 }`
//! twice still leaves every muscle at 0.7 of its nominal strength.

use std::fmt;
use std::str::FromStr;

use msk_balance::muscle::{DEFAULT_TAU_ACT, DEFAULT_TAU_DEACT};
use msk_balance::plant::{ModelDef, Side};
use msk_balance::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    Baseline,
    GlobalWeakness { scale: f64 },
    UnilateralWeakness { side: Side, scale: f64 },
    NeuralDelay { factor: f64 },
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Scenario::Baseline => Ok(()),
            Scenario::GlobalWeakness { scale } | Scenario::UnilateralWeakness { scale, .. } => {
                if (0.0..=1.0).contains(&scale) {
                    Ok(())
                } else {
                    Err(Error::Config(format!("strength scale must lie in [0, 1], got {scale}")))
                }
            }
            Scenario::NeuralDelay { factor } => {
                if factor > 0.0 && factor.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config(format!("delay factor must be positive, got {factor}")))
                }
            }
        }
    }

    /// True when the scenario breaks left/right symmetry.
    pub fn is_unilateral(&self) -> bool {
        matches!(self, Scenario::UnilateralWeakness { .. })
    }
}

/// Parses `baseline`, `global:<scale>`, `unilateral:<side>:<scale>` and
/// `delay:<factor>`.
impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| {
            t.parse::<f64>().map_err(|_| Error::Config(format!("scenario `{s}`: `{t}` is not a number")))
        };
        let scenario = match parts.as_slice() {
            ["baseline"] => Scenario::Baseline,
            ["global", scale] => Scenario::GlobalWeakness { scale: num(scale)? },
            ["unilateral", side, scale] => Scenario::UnilateralWeakness { side: side.parse()?, scale: num(scale)? },
            ["delay", factor] => Scenario::NeuralDelay { factor: num(factor)? },
            _ => {
                return Err(Error::Config(format!(
                    "unknown scenario `{s}` (expected baseline, global:<scale>, unilateral:<side>:<scale> or delay:<factor>)"
                )))
            }
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Baseline => write!(f, "baseline"),
            Scenario::GlobalWeakness { scale } => write!(f, "global:{scale}"),
            Scenario::UnilateralWeakness { side, scale } => {
                let side = if *side == Side::Left { "left" } else { "right" };
                write!(f, "unilateral:{side}:{scale}")
            }
            Scenario::NeuralDelay { factor } => write!(f, "delay:{factor}"),
        }
    }
}

pub fn apply_scenario(def: &ModelDef, scenario: &Scenario) -> Result<ModelDef> {
    scenario.validate()?;
    let mut out = def.clone();
    match *scenario {
        Scenario::Baseline => {}
        Scenario::GlobalWeakness { scale } => {
            for m in &mut out.muscles {
                m.params.strength_scale = scale;
            }
        }
        Scenario::UnilateralWeakness { side, scale } => {
            let mut hit = 0;
            for m in out.muscles.iter_mut().filter(|m| m.side == Some(side)) {
                m.params.strength_scale = scale;
                hit += 1;
            }
            if hit == 0 {
                return Err(Error::Config(format!("model `{}` has no muscles on the {side:?} side", def.name)));
            }
        }
        Scenario::NeuralDelay { factor } => {
            for m in &mut out.muscles {
                m.params.tau_act = factor * DEFAULT_TAU_ACT;
                m.params.tau_deact = factor * DEFAULT_TAU_DEACT;
            }
        }
    }
    Ok(out)
}
