use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uhinet::datapipe::{
    make_patches, normalize_met_rows, NormalizationManifest, PatchIndex, RasterGrid, SpatialLayers, Units,
};
use uhinet::unet::{predict_denormalized, Checkpoint, UNetModel};
use uhinet::{Error, Result};

/// Daily range (°C) of the synthetic diurnal cycle used for hotspot requests.
pub const DIURNAL_AMPLITUDE: f64 = 10.0;
/// Hour of the synthetic cycle's temperature maximum.
pub const DIURNAL_PEAK_HOUR: f64 = 15.0;

/// The checkpoint a service process answers from. Immutable once loaded.
#[derive(Debug)]
pub struct LoadedModel {
    pub model: UNetModel<f32>,
    pub manifest: NormalizationManifest,
    /// Hex SHA-256 of the checkpoint file.
    pub checkpoint_id: String,
}

impl LoadedModel {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ckpt = Checkpoint::from_bytes(bytes)?;
        let Some(manifest) = ckpt.manifest else {
            return Err(Error::Config("checkpoint carries no normalization manifest".into()));
        };
        let checkpoint_id = Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self {
            model: ckpt.model,
            manifest,
            checkpoint_id,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn input_size(&self) -> usize {
        self.model.config().input_size
    }

    pub fn met_timesteps(&self) -> usize {
        self.model.config().met_timesteps
    }

    /// Denormalized °C grid for one patch of layers and a raw met window.
    pub fn predict(&self, layers: &SpatialLayers, met: &[[f64; 5]]) -> Result<RasterGrid> {
        let s = self.input_size();
        if layers.width() != s || layers.height() != s {
            return Err(Error::Dimension(format!("layers must be {s}x{s}")));
        }
        let patch: PatchIndex = make_patches(s, s, s)?.remove(0);
        let spatial = layers.patch_tensor(&patch, &self.manifest)?;
        let met = normalize_met_rows(met, &self.manifest)?;
        predict_denormalized(&self.model, &spatial, &met, &self.manifest)
    }

    /// Predictions for the 24 hours of [`diurnal_day`] built from `met`.
    pub fn diurnal_stack(&self, layers: &SpatialLayers, met: &[[f64; 5]]) -> Result<Vec<RasterGrid>> {
        let day = diurnal_day(met)?;
        let t = self.met_timesteps();
        (0..24)
            .map(|h| {
                let window: Vec<[f64; 5]> = (0..t).map(|k| day[(h + 24 * t - (t - 1 - k)) % 24]).collect();
                self.predict(layers, &window)
            })
            .collect()
    }
}

/// A synthetic day around a met window: 2 m temperature follows a cosine
/// with [`DIURNAL_AMPLITUDE`] peaking at [`DIURNAL_PEAK_HOUR`] about the
/// window's mean; the other variables stay at their window means. Windows
/// reaching before 00:00 wrap into the same day.
pub fn diurnal_day(met: &[[f64; 5]]) -> Result<[[f64; 5]; 24]> {
    if met.is_empty() {
        return Err(Error::Data("met window is empty".into()));
    }
    let n = met.len() as f64;
    let mut mean = [0.0; 5];
    for row in met {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut day = [mean; 24];
    for (h, row) in day.iter_mut().enumerate() {
        let phase = 2.0 * std::f64::consts::PI * (h as f64 - DIURNAL_PEAK_HOUR) / 24.0;
        row[0] = mean[0] + 0.5 * DIURNAL_AMPLITUDE * phase.cos();
    }
    Ok(day)
}

/// Three 32×32 layers as row-major nested arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layers {
    pub imperviousness: Vec<Vec<f64>>,
    pub elevation: Vec<Vec<f64>>,
    pub landcover: Vec<Vec<f64>>,
}

pub fn grid_rows(grid: &RasterGrid) -> Vec<Vec<f64>> {
    grid.values().chunks(grid.width).map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

fn rows_to_grid(rows: &[Vec<f64>], units: Units) -> Result<RasterGrid> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(Error::Dimension("ragged rows".into()));
    }
    RasterGrid::new(w, h, units, rows.iter().flatten().map(|&v| v as f32).collect())
}

impl Layers {
    /// Copies a `size`-pixel window of full-domain layers.
    pub fn from_window(layers: &SpatialLayers, patch: &PatchIndex) -> Result<Self> {
        let win = |g: &RasterGrid| g.window(patch.row0, patch.col0, patch.size, patch.size).map(|w| grid_rows(&w));
        Ok(Self {
            imperviousness: win(&layers.imperviousness)?,
            elevation: win(&layers.elevation)?,
            landcover: win(&layers.landcover)?,
        })
    }

    pub fn to_spatial(&self) -> Result<SpatialLayers> {
        SpatialLayers::new(
            rows_to_grid(&self.imperviousness, Units::Fraction)?,
            rows_to_grid(&self.elevation, Units::Meters)?,
            rows_to_grid(&self.landcover, Units::Category)?,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSource {
    pub patch_id: usize,
    pub date: chrono::NaiveDate,
    pub hour: u32,
}

/// Reference scenario served at `/baseline`, written by the train stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baseline {
    pub name: String,
    pub layers: Layers,
    /// Raw met rows `[t2m, precip, q, u10, v10]`, oldest first.
    pub met: Vec<Vec<f64>>,
    pub source: BaselineSource,
}

impl Baseline {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diurnal_day_has_requested_shape() {
        let met = [[20.0, 0.1, 9.0, 1.0, -1.0], [22.0, 0.1, 9.0, 1.0, -1.0], [24.0, 0.4, 12.0, 1.0, -1.0]];
        let day = diurnal_day(&met).unwrap();
        let t: Vec<f64> = day.iter().map(|r| r[0]).collect();
        let max = t.iter().cloned().fold(f64::MIN, f64::max);
        let min = t.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - min - DIURNAL_AMPLITUDE).abs() < 1e-9);
        assert_eq!(t.iter().position(|&v| v == max), Some(15));
        assert!((t.iter().sum::<f64>() / 24.0 - 22.0).abs() < 1e-9);
        assert!(day.iter().all(|r| (r[1] - 0.2).abs() < 1e-12 && (r[2] - 10.0).abs() < 1e-12));
        assert!(diurnal_day(&[]).is_err());
    }
}
