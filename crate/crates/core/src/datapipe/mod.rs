//! Rasters, normalization, patch tiling and training-example assembly.

mod met;
mod normalize;
mod patches;
mod raster;
pub mod synth;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use met::{MetRow, MetSeries, CSV_HEADER as MET_CSV_HEADER, TIMESTAMP_FORMAT};
pub use normalize::{
    NormRange, NormalizationManifest, ELEVATION, HUMIDITY, IMPERVIOUSNESS, MET_VARIABLES, PRECIP,
    T2M, TARGET, U10, V10,
};
pub use patches::{make_patches, patches_in, split_patches, PatchIndex, Split, SplitSpec, PATCH_SIZE};
pub use raster::{LandCover, RasterGrid, Units, DEFAULT_NODATA};
pub use synth::{SynthWorld, SynthWorldConfig};

use crate::error::{bail, Result};
use crate::numerics::Tensor;

/// Number of spatial input channels: imperviousness, elevation, land cover.
pub const SPATIAL_CHANNELS: usize = 3;
/// Met hours fed per example (h-2, h-1, h).
pub const MET_TIMESTEPS: usize = 3;

/// Static per-pixel predictors covering the whole domain.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialLayers {
    pub imperviousness: RasterGrid,
    pub elevation: RasterGrid,
    pub landcover: RasterGrid,
}

impl SpatialLayers {
    pub fn new(imperviousness: RasterGrid, elevation: RasterGrid, landcover: RasterGrid) -> Result<Self> {
        if !imperviousness.same_shape(&elevation) || !imperviousness.same_shape(&landcover) {
            bail!(Dimension, "spatial layers differ in shape");
        }
        Ok(Self {
            imperviousness,
            elevation,
            landcover,
        })
    }

    pub fn width(&self) -> usize {
        self.elevation.width
    }

    pub fn height(&self) -> usize {
        self.elevation.height
    }

    /// Normalized `size x size x 3` input tensor for one patch window.
    pub fn patch_tensor(&self, patch: &PatchIndex, manifest: &NormalizationManifest) -> Result<Tensor<f32>> {
        let imp = manifest.get(IMPERVIOUSNESS)?;
        let elev = manifest.get(ELEVATION)?;
        let s = patch.size;
        let mut data = Vec::with_capacity(s * s * SPATIAL_CHANNELS);
        for y in patch.row0..patch.row0 + s {
            for x in patch.col0..patch.col0 + s {
                let (Some(i), Some(e), Some(c)) = (
                    self.imperviousness.get(x, y),
                    self.elevation.get(x, y),
                    self.landcover.get(x, y),
                ) else {
                    bail!(Data, "spatial layers have no data at pixel ({x}, {y})");
                };
                let Some(lc) = LandCover::from_code(c) else {
                    bail!(Data, "unknown land-cover code {c} at pixel ({x}, {y})");
                };
                data.push(imp.normalize(i as f64) as f32);
                data.push(elev.normalize(e as f64) as f32);
                data.push(lc.anchor());
            }
        }
        Tensor::new(vec![s, s, SPATIAL_CHANNELS], data)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.imperviousness.write_grd1(dir.join("imperviousness.grd"))?;
        self.elevation.write_grd1(dir.join("elevation.grd"))?;
        self.landcover.write_grd1(dir.join("landcover.grd"))
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        Self::new(
            RasterGrid::read_grd1(dir.join("imperviousness.grd"))?,
            RasterGrid::read_grd1(dir.join("elevation.grd"))?,
            RasterGrid::read_grd1(dir.join("landcover.grd"))?,
        )
    }
}

/// Supplies the full-domain target temperature field (°C) for a day-hour.
pub trait TargetSource {
    fn target_grid(&self, date: NaiveDate, hour: u32) -> Result<RasterGrid>;
}

/// Target grids stored as `<root>/YYYY-MM-DD/hHH.grd`.
#[derive(Clone, Debug)]
pub struct GridDirSource {
    pub root: PathBuf,
}

impl GridDirSource {
    pub fn path(root: &Path, date: NaiveDate, hour: u32) -> PathBuf {
        root.join(date.format("%Y-%m-%d").to_string())
            .join(format!("h{hour:02}.grd"))
    }
}

impl TargetSource for GridDirSource {
    fn target_grid(&self, date: NaiveDate, hour: u32) -> Result<RasterGrid> {
        let path = Self::path(&self.root, date, hour);
        if !path.exists() {
            bail!(Data, "missing target grid for {date} {hour:02}:00 ({})", path.display());
        }
        RasterGrid::read_grd1(path)
    }
}

/// Normalized met window of `timesteps` hours ending at `hour`, shaped `[timesteps, 5]`.
pub fn met_window(
    met: &MetSeries,
    date: NaiveDate,
    hour: u32,
    timesteps: usize,
    manifest: &NormalizationManifest,
) -> Result<Tensor<f32>> {
    let rows: Vec<[f64; 5]> = met.window(date, hour, timesteps)?.iter().map(|r| r.vector()).collect();
    normalize_met_rows(&rows, manifest)
}

/// Normalizes raw `[t2m, precip, q, u10, v10]` rows into a `[rows, 5]` tensor.
pub fn normalize_met_rows(rows: &[[f64; 5]], manifest: &NormalizationManifest) -> Result<Tensor<f32>> {
    let ranges = MET_VARIABLES
        .iter()
        .map(|v| manifest.get(v).copied())
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(rows.len() * MET_VARIABLES.len());
    for row in rows {
        for (v, r) in row.iter().zip(&ranges) {
            data.push(r.normalize(*v) as f32);
        }
    }
    Tensor::new(vec![rows.len(), MET_VARIABLES.len()], data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub patch_id: usize,
    pub date: NaiveDate,
    pub hour: u32,
    /// `[32, 32, 3]`, shared by every example of the same patch.
    pub spatial: Arc<Tensor<f32>>,
    /// `[3, 5]`.
    pub met: Tensor<f32>,
    /// `[32, 32, 1]`, normalized.
    pub target: Tensor<f32>,
}

fn target_window(grid: &RasterGrid, patch: &PatchIndex, range: &NormRange, date: NaiveDate, hour: u32) -> Result<Tensor<f32>> {
    let s = patch.size;
    let mut data = Vec::with_capacity(s * s);
    for y in patch.row0..patch.row0 + s {
        for x in patch.col0..patch.col0 + s {
            let Some(v) = grid.get(x, y) else {
                bail!(Data, "target for {date} {hour:02}:00 has no data at ({x}, {y})");
            };
            data.push(range.normalize(v as f64) as f32);
        }
    }
    Tensor::new(vec![s, s, 1], data)
}

/// Builds one example per (patch, day, hour), ordered by day, hour, then
/// patch; shuffled deterministically when `shuffle_seed` is given.
pub fn assemble_examples(
    patches: &[PatchIndex],
    layers: &SpatialLayers,
    met: &MetSeries,
    targets: &dyn TargetSource,
    days: &[NaiveDate],
    manifest: &NormalizationManifest,
    shuffle_seed: Option<u64>,
) -> Result<Vec<TrainingExample>> {
    let target_range = *manifest.get(TARGET)?;
    let spatial = patches
        .iter()
        .map(|p| layers.patch_tensor(p, manifest).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(patches.len() * days.len() * 24);
    for &date in days {
        for hour in 0..24 {
            let window = met_window(met, date, hour, MET_TIMESTEPS, manifest)?;
            let grid = targets.target_grid(date, hour)?;
            if grid.width != layers.width() || grid.height != layers.height() {
                bail!(Dimension, "target grid for {date} {hour:02}:00 does not match the domain");
            }
            for (p, sp) in patches.iter().zip(&spatial) {
                out.push(TrainingExample {
                    patch_id: p.id,
                    date,
                    hour,
                    spatial: Arc::clone(sp),
                    met: window.clone(),
                    target: target_window(&grid, p, &target_range, date, hour)?,
                });
            }
        }
    }
    if let Some(seed) = shuffle_seed {
        out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(out)
}

/// Fits the manifest: spatial layers and the target over `train_patches`
/// only; met variables over the full series.
pub fn fit_training_manifest(
    layers: &SpatialLayers,
    met: &MetSeries,
    targets: &dyn TargetSource,
    train_patches: &[PatchIndex],
    days: &[NaiveDate],
) -> Result<NormalizationManifest> {
    if train_patches.is_empty() {
        bail!(Data, "no training patches to fit normalization on");
    }
    let patch_values = |grid: &RasterGrid| -> Vec<f64> {
        train_patches
            .iter()
            .flat_map(|p| {
                (p.row0..p.row0 + p.size).flat_map(move |y| (p.col0..p.col0 + p.size).map(move |x| (x, y)))
            })
            .filter_map(|(x, y)| grid.get(x, y).map(f64::from))
            .collect()
    };
    let mut target = Vec::new();
    for &date in days {
        for hour in 0..24 {
            target.extend(patch_values(&targets.target_grid(date, hour)?));
        }
    }
    let mut vars: Vec<(String, Vec<f64>)> = vec![
        (IMPERVIOUSNESS.into(), patch_values(&layers.imperviousness)),
        (ELEVATION.into(), patch_values(&layers.elevation)),
        (TARGET.into(), target),
    ];
    for (k, name) in MET_VARIABLES.iter().enumerate() {
        vars.push((name.to_string(), met.rows().iter().map(|r| r.vector()[k]).collect()));
    }
    NormalizationManifest::fit(vars)
}

/// Hourly grids indexed `stack[day][hour]`, as produced by the predict stage.
pub type HourlyStack = [Vec<RasterGrid>];

/// Checks that every day has 24 grids of one shape; returns `(width, height)`.
pub fn check_hourly_stack(stack: &HourlyStack) -> Result<(usize, usize)> {
    let Some(first) = stack.first().and_then(|d| d.first()) else {
        bail!(Data, "hourly stack is empty");
    };
    for (d, day) in stack.iter().enumerate() {
        if day.len() != 24 {
            bail!(Data, "day {d} of the stack has {} hourly grids, need 24", day.len());
        }
        if let Some(h) = day.iter().position(|g| !g.same_shape(first)) {
            bail!(Dimension, "grid at day {d} hour {h} differs in shape from the first grid");
        }
    }
    Ok((first.width, first.height))
}
