//! Relative temperature index: how much warmer a pixel is than the mean of
//! its 3×3 neighbourhood, as a percentage of its own temperature, taken as
//! the median over days for each hour.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datapipe::{check_hourly_stack, HourlyStack, RasterGrid, Units, DEFAULT_NODATA};
use crate::error::{bail, Result};

/// Pixels whose temperature magnitude falls below this (°C) are masked.
pub const DEFAULT_EPSILON: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct TrelMap {
    pub hour: u32,
    /// Percentages; masked pixels hold the grid's nodata value.
    pub grid: RasterGrid,
    /// Days that contributed to each pixel, row-major.
    pub day_count: Vec<u32>,
}

/// Mean of the valid in-bounds neighbours of `(x, y)`, centre excluded.
/// `None` when no neighbour is valid (e.g. a 1×1 grid).
pub fn neighborhood_mean(grid: &RasterGrid, x: usize, y: usize) -> Option<f64> {
    let mut sum = 0.0f64;
    let mut n = 0u32;
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx < 0 || ny < 0 || nx >= grid.width as i64 || ny >= grid.height as i64 {
                continue;
            }
            if let Some(v) = grid.get(nx as usize, ny as usize) {
                sum += v as f64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Median with the mean of the middle pair for even counts.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        (values[m - 1] + values[m]) / 2.0
    })
}

/// Index for one hour from that hour's grid on each day.
pub fn trel_hour(day_grids: &[&RasterGrid], hour: u32, epsilon: f64) -> Result<TrelMap> {
    let Some(first) = day_grids.first() else {
        bail!(Data, "no grids for hour {hour}");
    };
    if !(epsilon >= 0.0) {
        bail!(Parameter, "epsilon must be non-negative, got {epsilon}");
    }
    if day_grids.iter().any(|g| !g.same_shape(first)) {
        bail!(Dimension, "grids for hour {hour} differ in shape");
    }
    let (w, h) = (first.width, first.height);
    let mut out = RasterGrid::filled(w, h, Units::Percent, DEFAULT_NODATA);
    out.cell_size = first.cell_size;
    out.origin = first.origin;
    out.nodata = Some(DEFAULT_NODATA);
    let mut day_count = vec![0u32; w * h];
    let mut samples = Vec::with_capacity(day_grids.len());
    for y in 0..h {
        for x in 0..w {
            samples.clear();
            let mut masked = false;
            for g in day_grids {
                let (Some(t), Some(mean)) = (g.get(x, y), neighborhood_mean(g, x, y)) else {
                    continue;
                };
                let t = t as f64;
                if t.abs() < epsilon {
                    masked = true;
                }
                samples.push(100.0 * (t - mean) / t);
            }
            day_count[y * w + x] = samples.len() as u32;
            if masked {
                continue;
            }
            if let Some(m) = median(&mut samples) {
                out.set(x, y, m as f32);
            }
        }
    }
    Ok(TrelMap {
        hour,
        grid: out,
        day_count,
    })
}

/// One map per hour of the day over a `days × 24` stack.
pub fn trel_daily_cycle(stack: &HourlyStack, epsilon: f64) -> Result<Vec<TrelMap>> {
    check_hourly_stack(stack)?;
    (0..24)
        .map(|h| {
            let grids: Vec<&RasterGrid> = stack.iter().map(|day| &day[h]).collect();
            trel_hour(&grids, h as u32, epsilon)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HourFile {
    pub hour: u32,
    pub file: String,
}

/// Contents of the hotspot `index.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrelIndex {
    pub hours: Vec<HourFile>,
    pub epsilon: f64,
    pub day_count: usize,
}

pub fn trel_file_name(hour: u32) -> String {
    format!("trel_h{hour:02}.grd")
}

/// Writes `trel_hHH.grd` per map and `index.json` into `dir`.
pub fn write_trel_maps(dir: &Path, maps: &[TrelMap], epsilon: f64, day_count: usize) -> Result<TrelIndex> {
    std::fs::create_dir_all(dir)?;
    let mut hours = Vec::with_capacity(maps.len());
    for m in maps {
        let file = trel_file_name(m.hour);
        m.grid.write_grd1(dir.join(&file))?;
        hours.push(HourFile { hour: m.hour, file });
    }
    let index = TrelIndex {
        hours,
        epsilon,
        day_count,
    };
    std::fs::write(dir.join("index.json"), serde_json::to_vec_pretty(&index)?)?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(w: usize, h: usize, v: Vec<f32>) -> RasterGrid {
        RasterGrid::new(w, h, Units::DegC, v).unwrap()
    }

    fn uniform_stack(days: usize, w: usize, v: f32) -> Vec<Vec<RasterGrid>> {
        vec![vec![RasterGrid::filled(w, w, Units::DegC, v); 24]; days]
    }

    /// Direct transcription of the index definition.
    fn brute_force(stack: &[Vec<RasterGrid>], eps: f64) -> Vec<Vec<Option<f32>>> {
        let (w, h) = (stack[0][0].width, stack[0][0].height);
        let mut out = Vec::new();
        for hour in 0..24 {
            let mut maps = vec![None; w * h];
            for y in 0..h {
                for x in 0..w {
                    let mut r = Vec::new();
                    let mut bad = false;
                    for day in stack {
                        let g = &day[hour];
                        let t = g.values()[y * w + x] as f64;
                        let mut s = 0.0;
                        let mut n = 0;
                        for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                            for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                                if (xx, yy) != (x, y) {
                                    s += g.values()[yy * w + xx] as f64;
                                    n += 1;
                                }
                            }
                        }
                        bad |= t.abs() < eps;
                        r.push(100.0 * (t - s / n as f64) / t);
                    }
                    r.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let k = r.len();
                    let med = if k % 2 == 1 { r[k / 2] } else { (r[k / 2 - 1] + r[k / 2]) / 2.0 };
                    maps[y * w + x] = (!bad).then_some(med as f32);
                }
            }
            out.push(maps);
        }
        out
    }

    #[test]
    fn neighborhood_examples() {
        let g = grid(3, 3, vec![1., 1., 1., 1., 9., 1., 1., 1., 1.]);
        assert_eq!(neighborhood_mean(&g, 1, 1), Some(1.0));
        assert_eq!(neighborhood_mean(&g, 0, 0), Some((1.0 + 1.0 + 9.0) / 3.0));
        let c = RasterGrid::filled(5, 5, Units::DegC, 4.5);
        assert_eq!(neighborhood_mean(&c, 2, 3), Some(4.5));
        assert_eq!(neighborhood_mean(&RasterGrid::filled(1, 1, Units::DegC, 1.0), 0, 0), None);
    }

    #[test]
    fn single_day_warm_centre() {
        let g = grid(3, 3, vec![27., 27., 27., 27., 30., 27., 27., 27., 27.]);
        let m = trel_hour(&[&g], 14, DEFAULT_EPSILON).unwrap();
        assert!((m.grid.get(1, 1).unwrap() - 10.0).abs() < 1e-5);
        assert_eq!(m.day_count, vec![1; 9]);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&mut [10.0, 40.0, 10.0]), Some(10.0));
        assert_eq!(median(&mut [1.0, 4.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn uniform_stacks_give_zero_maps() {
        let maps = trel_daily_cycle(&uniform_stack(3, 6, 21.5), DEFAULT_EPSILON).unwrap();
        assert_eq!(maps.len(), 24);
        for m in maps {
            assert!(m.grid.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn planted_warm_pixel() {
        let mut stack = uniform_stack(4, 7, 30.0);
        for day in &mut stack {
            for g in day {
                g.set(3, 2, 33.0);
            }
        }
        for m in trel_daily_cycle(&stack, DEFAULT_EPSILON).unwrap() {
            let v = m.grid.get(3, 2).unwrap() as f64;
            assert!((v - 100.0 * 3.0 / 33.0).abs() < 1e-5, "{v}");
            assert!(m.grid.get(2, 2).unwrap() < 0.0);
        }
    }

    #[test]
    fn near_zero_pixels_are_masked() {
        let mut g = RasterGrid::filled(3, 3, Units::DegC, 5.0);
        g.set(0, 0, 0.2);
        let m = trel_hour(&[&g, &RasterGrid::filled(3, 3, Units::DegC, 5.0)], 0, 0.5).unwrap();
        assert_eq!(m.grid.get(0, 0), None);
        assert!(m.grid.get(1, 1).is_some());
    }

    #[test]
    fn errors() {
        let a = RasterGrid::filled(3, 3, Units::DegC, 5.0);
        let b = RasterGrid::filled(4, 3, Units::DegC, 5.0);
        assert!(matches!(trel_hour(&[&a, &b], 0, 0.5), Err(crate::Error::Dimension(_))));
        let mut ragged = uniform_stack(2, 3, 5.0);
        ragged[1].pop();
        assert!(matches!(trel_daily_cycle(&ragged, 0.5), Err(crate::Error::Data(_))));
    }

    #[test]
    fn matches_brute_force_on_random_stacks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..50 {
            let days = 1 + case % 4;
            let stack: Vec<Vec<RasterGrid>> = (0..days)
                .map(|_| {
                    (0..24)
                        .map(|_| grid(8, 8, (0..64).map(|_| rng.random_range(-2.0f32..40.0)).collect()))
                        .collect()
                })
                .collect();
            let maps = trel_daily_cycle(&stack, DEFAULT_EPSILON).unwrap();
            let oracle = brute_force(&stack, DEFAULT_EPSILON);
            for (m, o) in maps.iter().zip(&oracle) {
                for y in 0..8 {
                    for x in 0..8 {
                        assert_eq!(m.grid.get(x, y), o[y * 8 + x], "case {case} hour {} ({x},{y})", m.hour);
                    }
                }
            }
        }
    }

    #[test]
    fn writes_index_and_grids() {
        let dir = tempfile::tempdir().unwrap();
        let maps = trel_daily_cycle(&uniform_stack(2, 4, 10.0), DEFAULT_EPSILON).unwrap();
        let index = write_trel_maps(dir.path(), &maps, DEFAULT_EPSILON, 2).unwrap();
        assert_eq!(index.hours.len(), 24);
        let back = RasterGrid::read_grd1(dir.path().join(&index.hours[5].file)).unwrap();
        assert_eq!(back, maps[5].grid);
        let json: TrelIndex = serde_json::from_slice(&std::fs::read(dir.path().join("index.json")).unwrap()).unwrap();
        assert_eq!(json, index);
    }

    proptest! {
        #[test]
        fn day_order_does_not_matter(vals in prop::collection::vec(5.0f32..35.0, 3 * 16), rot in 0usize..3) {
            let grids: Vec<RasterGrid> = vals.chunks(16).map(|c| grid(4, 4, c.to_vec())).collect();
            let a: Vec<&RasterGrid> = grids.iter().collect();
            let mut b = a.clone();
            b.rotate_left(rot);
            prop_assert_eq!(trel_hour(&a, 0, 0.5).unwrap(), trel_hour(&b, 0, 0.5).unwrap());
        }

        #[test]
        fn sign_follows_local_contrast(bg in 1.0f32..30.0, delta in -5.0f32..5.0) {
            prop_assume!(delta.abs() > 1e-3 && bg + delta > 0.5);
            let mut g = RasterGrid::filled(3, 3, Units::DegC, bg);
            g.set(1, 1, bg + delta);
            let v = trel_hour(&[&g], 0, 0.5).unwrap().grid.get(1, 1).unwrap();
            prop_assert_eq!(v > 0.0, delta > 0.0);
        }
    }
}
