use serde::{Deserialize, Serialize};

use crate::error::{FryError, Result};

/// Totox at or above this value means the oil must be replaced.
pub const TOTOX_THRESHOLD: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OilClass {
    Good,
    Replace,
}

impl OilClass {
    /// Segmentation label of oil pixels of this class (0 is background).
    pub fn label(self) -> u8 {
        match self {
            OilClass::Good => 1,
            OilClass::Replace => 2,
        }
    }

    pub fn from_label(label: u8) -> Option<Self> {
        match label {
            1 => Some(OilClass::Good),
            2 => Some(OilClass::Replace),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OilClass::Good => "good",
            OilClass::Replace => "replace",
        }
    }
}

pub fn derive_totox(pv: f64, p_av: f64) -> Result<f64> {
    if !(pv >= 0.0 && p_av >= 0.0) {
        return Err(FryError::Validation(format!(
            "oxidation indices must be non-negative (pv={pv}, p_av={p_av})"
        )));
    }
    Ok(2.0 * pv + p_av)
}

pub fn classify_totox(totox: f64) -> OilClass {
    if totox < TOTOX_THRESHOLD {
        OilClass::Good
    } else {
        OilClass::Replace
    }
}

/// Per-video oxidation ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChemicalState {
    /// Peroxide value, meq O2/kg.
    pub pv: f64,
    /// p-anisidine value.
    pub p_av: f64,
    pub totox: f64,
    pub temp_f: f64,
}

impl ChemicalState {
    pub fn new(pv: f64, p_av: f64, temp_f: f64) -> Result<Self> {
        Ok(Self {
            pv,
            p_av,
            totox: derive_totox(pv, p_av)?,
            temp_f,
        })
    }

    pub fn class(&self) -> OilClass {
        classify_totox(self.totox)
    }

    /// Regression targets in [`Target`] order.
    pub fn targets(&self) -> [f64; 4] {
        [self.pv, self.p_av, self.totox, self.temp_f]
    }

    /// True when the stored Totox equals the recomputed identity bit for bit.
    pub fn totox_consistent(&self) -> bool {
        self.totox == 2.0 * self.pv + self.p_av
    }
}

/// Regression targets, in the fixed order used by every per-target array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Pv,
    PAv,
    Totox,
    TempF,
}

impl Target {
    pub const ALL: [Target; 4] = [Target::Pv, Target::PAv, Target::Totox, Target::TempF];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Pv => "pv",
            Target::PAv => "p_av",
            Target::Totox => "totox",
            Target::TempF => "temp_f",
        }
    }
}
