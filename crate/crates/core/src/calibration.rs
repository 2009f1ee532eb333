//! Frozen constants: the sample-size constants per tester kind and the
//! variance-bound constants. The defaults are embedded from
//! `calibration/constants.json` and were produced by the sweep in
//! [`crate::sweep`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observables::KindTag;

const BUILTIN: &str = include_str!("../calibration/constants.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub version: u32,
    /// `T = ceil(C * scale(theta, d, gamma))`.
    pub sample_constants: BTreeMap<KindTag, f64>,
    /// `Var <= K * (sum of bound terms)`.
    pub variance_constants: BTreeMap<KindTag, f64>,
    /// Free-form description of how each constant was fitted.
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl Calibration {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("embedded calibration is valid")
    }

    /// Every constant equal to one.
    pub fn unit() -> Self {
        let ones: BTreeMap<KindTag, f64> = KindTag::ALL.iter().map(|&k| (k, 1.0)).collect();
        Calibration { version: 1, sample_constants: ones.clone(), variance_constants: ones, provenance: BTreeMap::new() }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cal: Calibration = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        for (field, map) in [("sample_constants", &cal.sample_constants), ("variance_constants", &cal.variance_constants)] {
            for k in KindTag::ALL {
                match map.get(&k) {
                    None => return Err(Error::Parse(format!("field `{}`: missing {}", field, k))),
                    Some(v) if !(v.is_finite() && *v > 0.0) => {
                        return Err(Error::Parse(format!("field `{}`: {} must be positive and finite, got {}", field, k, v)))
                    }
                    _ => {}
                }
            }
        }
        Ok(cal)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn sample_constant(&self, kind: KindTag) -> f64 {
        self.sample_constants[&kind]
    }

    pub fn variance_constant(&self, kind: KindTag) -> f64 {
        self.variance_constants[&kind]
    }
}
