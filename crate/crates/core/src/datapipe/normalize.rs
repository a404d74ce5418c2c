use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

pub const IMPERVIOUSNESS: &str = "imperviousness";
pub const ELEVATION: &str = "elevation";
pub const T2M: &str = "t2m";
pub const PRECIP: &str = "precip";
pub const HUMIDITY: &str = "q";
pub const U10: &str = "u10";
pub const V10: &str = "v10";
/// Prediction target: air temperature at 2 m.
pub const TARGET: &str = "t_a";

/// Meteorological variables in the order they enter the network.
pub const MET_VARIABLES: [&str; 5] = [T2M, PRECIP, HUMIDITY, U10, V10];

/// Linear map of `[min, max]` onto `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormRange {
    pub min: f64,
    pub max: f64,
}

impl NormRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || max <= min {
            bail!(Data, "degenerate normalization range [{min}, {max}]");
        }
        Ok(Self { min, max })
    }

    /// Exact min/max of `values`; fails unless at least two distinct values occur.
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            if !v.is_finite() {
                bail!(Data, "non-finite value {v} in normalization input");
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Self::new(lo, hi)
    }

    #[inline]
    pub fn normalize(&self, x: f64) -> f64 {
        2.0 * (x - self.min) / (self.max - self.min) - 1.0
    }

    #[inline]
    pub fn denormalize(&self, xn: f64) -> f64 {
        (xn + 1.0) / 2.0 * (self.max - self.min) + self.min
    }
}

/// Per-variable normalization ranges, fitted on training data only.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationManifest {
    pub variables: BTreeMap<String, NormRange>,
}

impl NormalizationManifest {
    /// Fits one range per named variable.
    pub fn fit<I, V>(per_variable: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, V)>,
        V: IntoIterator<Item = f64>,
    {
        let mut variables = BTreeMap::new();
        for (name, values) in per_variable {
            let range = NormRange::fit(values).map_err(|e| {
                crate::Error::Data(format!("variable {name:?}: {e}"))
            })?;
            variables.insert(name, range);
        }
        Ok(Self { variables })
    }

    pub fn get(&self, name: &str) -> Result<&NormRange> {
        match self.variables.get(name) {
            Some(r) => Ok(r),
            None => bail!(Config, "normalization manifest has no entry for {name:?}"),
        }
    }

    pub fn insert(&mut self, name: &str, range: NormRange) {
        self.variables.insert(name.to_string(), range);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fit_takes_exact_extremes() {
        let r = NormRange::fit([0.0, 40.0, 12.5]).unwrap();
        assert_eq!((r.min, r.max), (0.0, 40.0));
        assert!(NormRange::fit([3.0, 3.0]).is_err());
        assert!(NormRange::fit([]).is_err());
    }

    #[test]
    fn endpoints_and_midpoint() {
        let r = NormRange::new(0.0, 40.0).unwrap();
        assert_eq!(r.normalize(0.0), -1.0);
        assert_eq!(r.normalize(40.0), 1.0);
        assert_eq!(r.normalize(20.0), 0.0);
        assert_eq!(r.normalize(50.0), 1.5);
        assert!((r.denormalize(1.5) - 50.0).abs() < 1e-9);
        assert_eq!(r.denormalize(-1.0), 0.0);
        assert_eq!(r.denormalize(1.0), 40.0);
    }

    #[test]
    fn manifest_lookup_and_determinism() {
        let data = || vec![(TARGET.to_string(), vec![10.0, 30.0]), (T2M.to_string(), vec![1.0, 2.0])];
        let a = NormalizationManifest::fit(data()).unwrap();
        assert_eq!(a, NormalizationManifest::fit(data()).unwrap());
        assert_eq!(a.get(TARGET).unwrap().max, 30.0);
        assert!(matches!(a.get("ndvi"), Err(crate::Error::Config(_))));
    }

    proptest! {
        #[test]
        fn round_trip_within_1e9(min in -1e3f64..1e3, span in 1e-3f64..1e3, x in -1e4f64..1e4) {
            let r = NormRange::new(min, min + span).unwrap();
            prop_assert!((r.denormalize(r.normalize(x)) - x).abs() <= 1e-9);
        }
    }
}
