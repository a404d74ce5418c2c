use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

/// Default sentinel written for masked cells.
pub const DEFAULT_NODATA: f32 = -9999.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    #[serde(rename = "degC")]
    DegC,
    #[serde(rename = "m")]
    Meters,
    #[serde(rename = "fraction")]
    Fraction,
    #[serde(rename = "category")]
    Category,
    #[serde(rename = "percent")]
    Percent,
}

/// Land-cover classes of the synthetic world, stored as category codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandCover {
    Water = 0,
    Vegetation = 1,
    Urban = 2,
    Industrial = 3,
}

impl LandCover {
    pub const ALL: [LandCover; 4] = [
        LandCover::Water,
        LandCover::Vegetation,
        LandCover::Urban,
        LandCover::Industrial,
    ];

    pub fn code(self) -> f32 {
        self as u8 as f32
    }

    pub fn from_code(code: f32) -> Option<Self> {
        Self::ALL.into_iter().find(|lc| lc.code() == code)
    }

    /// Fixed position of the class in normalized input space.
    pub fn anchor(self) -> f32 {
        match self {
            LandCover::Water => -1.0,
            LandCover::Vegetation => -0.33,
            LandCover::Urban => 0.33,
            LandCover::Industrial => 1.0,
        }
    }
}

/// A `height x width` scalar field at fixed cell size, stored row-major.
///
/// Cells equal to the `nodata` sentinel are masked.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterGrid {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    /// Map coordinates (meters) of the top-left corner.
    pub origin: (f64, f64),
    pub units: Units,
    pub nodata: Option<f32>,
    values: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Grd1Header {
    magic: String,
    width: usize,
    height: usize,
    cell_size_m: f64,
    units: Units,
    nodata: Option<f32>,
}

impl RasterGrid {
    pub fn new(width: usize, height: usize, units: Units, values: Vec<f32>) -> Result<Self> {
        if width * height != values.len() {
            bail!(
                Dimension,
                "{width}x{height} grid needs {} values, got {}",
                width * height,
                values.len()
            );
        }
        Ok(Self {
            width,
            height,
            cell_size: 100.0,
            origin: (0.0, 0.0),
            units,
            nodata: Some(DEFAULT_NODATA),
            values,
        })
    }

    pub fn filled(width: usize, height: usize, units: Units, value: f32) -> Self {
        Self::new(width, height, units, vec![value; width * height]).expect("sized")
    }

    pub fn with_cell_size(mut self, cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            bail!(Parameter, "cell size must be positive, got {cell_size}");
        }
        self.cell_size = cell_size;
        Ok(self)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn is_nodata_value(&self, v: f32) -> bool {
        match self.nodata {
            Some(nd) if nd.is_nan() => v.is_nan(),
            Some(nd) => v == nd,
            None => false,
        }
    }

    /// Value at column `x`, row `y`; `None` when masked or out of bounds.
    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let v = self.values[self.index(x, y)];
        (!self.is_nodata_value(v)).then_some(v)
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        let i = self.index(x, y);
        self.values[i] = v;
    }

    /// Masks a cell, installing the default sentinel if the grid has none.
    pub fn set_nodata(&mut self, x: usize, y: usize) {
        let nd = *self.nodata.get_or_insert(DEFAULT_NODATA);
        self.set(x, y, nd);
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f32> + '_ {
        self.values.iter().copied().filter(|&v| !self.is_nodata_value(v))
    }

    /// Copy of the `h x w` window whose top-left cell is (`col0`, `row0`).
    pub fn window(&self, row0: usize, col0: usize, h: usize, w: usize) -> Result<Self> {
        if row0 + h > self.height || col0 + w > self.width {
            bail!(
                Dimension,
                "window {h}x{w} at ({row0},{col0}) exceeds {}x{} grid",
                self.height,
                self.width
            );
        }
        let mut values = Vec::with_capacity(h * w);
        for y in row0..row0 + h {
            let start = self.index(col0, y);
            values.extend_from_slice(&self.values[start..start + w]);
        }
        Ok(Self {
            width: w,
            height: h,
            cell_size: self.cell_size,
            origin: (
                self.origin.0 + col0 as f64 * self.cell_size,
                self.origin.1 - row0 as f64 * self.cell_size,
            ),
            units: self.units,
            nodata: self.nodata,
            values,
        })
    }

    /// Writes `other` into this grid with its top-left cell at (`col0`, `row0`).
    pub fn paste(&mut self, row0: usize, col0: usize, other: &RasterGrid) -> Result<()> {
        if row0 + other.height > self.height || col0 + other.width > self.width {
            bail!(Dimension, "pasted grid exceeds target bounds");
        }
        for y in 0..other.height {
            for x in 0..other.width {
                let v = match other.get(x, y) {
                    Some(v) => v,
                    None => {
                        self.set_nodata(col0 + x, row0 + y);
                        continue;
                    }
                };
                self.set(col0 + x, row0 + y, v);
            }
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &RasterGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// GRD1 encoding: one JSON header line, then little-endian `f32` cells.
    pub fn to_grd1_bytes(&self) -> Vec<u8> {
        let header = Grd1Header {
            magic: "GRD1".into(),
            width: self.width,
            height: self.height,
            cell_size_m: self.cell_size,
            units: self.units,
            nodata: self.nodata,
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.reserve(self.values.len() * 4);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_grd1_reader(reader: impl Read) -> Result<Self> {
        let mut reader = BufReader::new(reader);
        let mut line = Vec::new();
        reader.read_until(b'\n', &mut line)?;
        if line.last() != Some(&b'\n') {
            bail!(Format, "GRD1 header line is not terminated");
        }
        let header: Grd1Header = serde_json::from_slice(&line[..line.len() - 1])
            .map_err(|e| Error::Format(format!("bad GRD1 header: {e}")))?;
        if header.magic != "GRD1" {
            bail!(Format, "bad magic {:?}, expected GRD1", header.magic);
        }
        let n = header.width * header.height;
        let mut body = Vec::with_capacity(n * 4);
        reader.read_to_end(&mut body)?;
        if body.len() != n * 4 {
            bail!(
                Format,
                "GRD1 body has {} bytes, header declares {}",
                body.len(),
                n * 4
            );
        }
        let values = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mut grid = Self::new(header.width, header.height, header.units, values)?;
        grid.nodata = header.nodata;
        grid.with_cell_size(header.cell_size_m)
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_grd1(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_grd1_bytes())?;
        Ok(())
    }

    pub fn read_grd1(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path)
            .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
        Self::from_grd1_reader(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_count_must_match() {
        assert!(RasterGrid::new(2, 3, Units::DegC, vec![0.0; 5]).is_err());
        assert!(RasterGrid::filled(2, 2, Units::DegC, 0.0).with_cell_size(0.0).is_err());
    }

    #[test]
    fn grd1_header_layout_is_fixed() {
        let g = RasterGrid::new(2, 1, Units::DegC, vec![1.5, -2.0]).unwrap();
        let bytes = g.to_grd1_bytes();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&bytes[..nl]).unwrap(),
            r#"{"magic":"GRD1","width":2,"height":1,"cell_size_m":100.0,"units":"degC","nodata":-9999.0}"#
        );
        assert_eq!(&bytes[nl + 1..nl + 5], &1.5f32.to_le_bytes());
        assert_eq!(bytes.len(), nl + 1 + 8);
        let back = RasterGrid::from_grd1_reader(&bytes[..]).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn truncated_grd1_is_format_error() {
        let g = RasterGrid::filled(4, 4, Units::Meters, 3.0);
        let bytes = g.to_grd1_bytes();
        let err = RasterGrid::from_grd1_reader(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        let err = RasterGrid::from_grd1_reader(&b"{\"magic\":\"GRD2\"}\n"[..]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn nodata_cells_are_masked() {
        let mut g = RasterGrid::filled(3, 3, Units::DegC, 20.0);
        g.set_nodata(1, 2);
        assert_eq!(g.get(1, 2), None);
        assert_eq!(g.get(0, 0), Some(20.0));
        assert_eq!(g.get(3, 0), None);
        assert_eq!(g.valid_values().count(), 8);
    }

    #[test]
    fn window_and_paste_are_inverse() {
        let vals: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let g = RasterGrid::new(4, 4, Units::Meters, vals).unwrap();
        let w = g.window(1, 2, 2, 2).unwrap();
        assert_eq!(w.values(), &[6.0, 7.0, 10.0, 11.0]);
        assert_eq!(w.origin, (200.0, -100.0));
        let mut blank = RasterGrid::filled(4, 4, Units::Meters, 0.0);
        blank.paste(1, 2, &w).unwrap();
        assert_eq!(blank.get(3, 2), Some(11.0));
        assert!(g.window(3, 3, 2, 2).is_err());
    }

    #[test]
    fn landcover_codes_round_trip() {
        for lc in LandCover::ALL {
            assert_eq!(LandCover::from_code(lc.code()), Some(lc));
        }
        assert_eq!(LandCover::from_code(7.0), None);
    }
}
