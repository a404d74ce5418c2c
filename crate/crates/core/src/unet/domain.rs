use super::UNetModel;
use crate::datapipe::{make_patches, NormalizationManifest, PatchIndex, RasterGrid, SpatialLayers, Units, TARGET};
use crate::error::{bail, Result};
use crate::numerics::Tensor;

/// Full-domain inference by tiling the domain with non-overlapping
/// network-sized patches. The normalized spatial batch is built once and
/// reused for every met window.
#[derive(Clone, Debug)]
pub struct DomainPredictor {
    patches: Vec<PatchIndex>,
    spatial: Tensor<f32>,
    width: usize,
    height: usize,
    cell_size: f64,
}

impl DomainPredictor {
    pub fn new(layers: &SpatialLayers, size: usize, manifest: &NormalizationManifest) -> Result<Self> {
        let (width, height) = (layers.width(), layers.height());
        if width % size != 0 || height % size != 0 {
            bail!(Dimension, "domain {width}x{height} is not tiled by {size}x{size} patches");
        }
        let patches = make_patches(width, height, size)?;
        let mut data = Vec::with_capacity(width * height * 3);
        for p in &patches {
            data.extend_from_slice(layers.patch_tensor(p, manifest)?.data());
        }
        let spatial = Tensor::new(vec![patches.len(), size, size, 3], data)?;
        Ok(Self {
            patches,
            spatial,
            width,
            height,
            cell_size: layers.imperviousness.cell_size,
        })
    }

    pub fn patches(&self) -> &[PatchIndex] {
        &self.patches
    }

    /// Denormalized °C field for one normalized `[T, 5]` met window.
    pub fn predict(&self, model: &UNetModel<f32>, met: &Tensor<f32>, manifest: &NormalizationManifest) -> Result<RasterGrid> {
        let range = *manifest.get(TARGET)?;
        let n = self.patches.len();
        let mut shape = vec![n];
        shape.extend_from_slice(met.shape());
        let met_batch = Tensor::new(shape, met.data().repeat(n))?;
        let out = model.predict(&self.spatial, &met_batch)?;
        let s = model.config().input_size;
        if out.len() != n * s * s || self.patches.first().is_some_and(|p| p.size != s) {
            bail!(Dimension, "model input size {s} does not match the patch tiling");
        }
        let mut grid = RasterGrid::filled(self.width, self.height, Units::DegC, 0.0).with_cell_size(self.cell_size)?;
        for (p, tile) in self.patches.iter().zip(out.data().chunks_exact(s * s)) {
            for (r, row) in tile.chunks_exact(s).enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    grid.set(p.col0 + c, p.row0 + r, range.denormalize(v as f64) as f32);
                }
            }
        }
        Ok(grid)
    }
}
