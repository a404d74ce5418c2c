//! PPM heatmaps with a fixed color scale shared by every grid of one call.

use std::path::Path;

use serde::{Deserialize, Serialize};
use uhinet::datapipe::RasterGrid;
use uhinet::{Error, Result};

const STOPS: [[f64; 3]; 3] = [[49.0, 54.0, 149.0], [247.0, 247.0, 247.0], [165.0, 0.0, 38.0]];
pub const NODATA_RGB: [u8; 3] = [0, 0, 0];

/// Contents of the JSON sidecar written next to each image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotSidecar {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub min: f64,
    pub max: f64,
    pub colormap: String,
    pub nodata_rgb: [u8; 3],
}

/// Blue-white-red ramp; `t` is clamped to [0, 1].
pub fn color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * 2.0;
    let (a, b, f) = if t <= 1.0 { (STOPS[0], STOPS[1], t) } else { (STOPS[1], STOPS[2], t - 1.0) };
    [0, 1, 2].map(|i| (a[i] + (b[i] - a[i]) * f).round() as u8)
}

pub fn ppm_bytes(grid: &RasterGrid, min: f64, max: f64) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", grid.width, grid.height).into_bytes();
    for y in 0..grid.height {
        for x in 0..grid.width {
            let rgb = match grid.get(x, y) {
                Some(v) if max > min => color((v as f64 - min) / (max - min)),
                Some(_) => color(0.5),
                None => NODATA_RGB,
            };
            out.extend_from_slice(&rgb);
        }
    }
    out
}

/// Writes `<name>.ppm` and `<name>.json` for each grid, scaled to the
/// min/max over all valid values of all grids.
pub fn emit_plots(grids: &[(String, &RasterGrid)], out_dir: &Path) -> Result<Vec<PlotSidecar>> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for (name, g) in grids {
        let mut any = false;
        for v in g.valid_values() {
            min = min.min(v as f64);
            max = max.max(v as f64);
            any = true;
        }
        if !any {
            return Err(Error::Data(format!("plot {name}: grid has no valid values")));
        }
    }
    std::fs::create_dir_all(out_dir)?;
    grids
        .iter()
        .map(|(name, g)| {
            let image = format!("{name}.ppm");
            std::fs::write(out_dir.join(&image), ppm_bytes(g, min, max))?;
            let sidecar = PlotSidecar {
                image,
                width: g.width,
                height: g.height,
                min,
                max,
                colormap: "blue-white-red".into(),
                nodata_rgb: NODATA_RGB,
            };
            std::fs::write(out_dir.join(format!("{name}.json")), serde_json::to_vec_pretty(&sidecar)?)?;
            Ok(sidecar)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use uhinet::datapipe::Units;

    #[test]
    fn shape_and_constant_color() {
        let dir = tempfile::tempdir().unwrap();
        let g = RasterGrid::filled(32, 32, Units::DegC, 21.0);
        let s = emit_plots(&[("flat".into(), &g)], dir.path()).unwrap();
        assert_eq!((s[0].min, s[0].max), (21.0, 21.0));
        let bytes = std::fs::read(dir.path().join("flat.ppm")).unwrap();
        let header = b"P6\n32 32\n255\n";
        assert!(bytes.starts_with(header));
        let body = &bytes[header.len()..];
        assert_eq!(body.len(), 32 * 32 * 3);
        assert!(body.chunks(3).all(|p| p == body[..3].as_ref()));
    }

    #[test]
    fn shared_scale_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let a = RasterGrid::new(2, 1, Units::DegC, vec![0.0, 10.0]).unwrap();
        let b = RasterGrid::new(2, 1, Units::DegC, vec![20.0, 5.0]).unwrap();
        let s = emit_plots(&[("a".into(), &a), ("b".into(), &b)], dir.path()).unwrap();
        assert!(s.iter().all(|p| p.min == 0.0 && p.max == 20.0));
        assert_eq!(&ppm_bytes(&a, 0.0, 20.0)[11..], &[49, 54, 149, 247, 247, 247]);
        let mut empty = RasterGrid::filled(2, 2, Units::DegC, 1.0);
        for i in 0..2 {
            for j in 0..2 {
                empty.set_nodata(i, j);
            }
        }
        assert!(emit_plots(&[("e".into(), &empty)], dir.path()).is_err());
    }
}
