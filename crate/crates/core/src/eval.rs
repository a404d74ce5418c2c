//! Regression metrics, station time series and hourly aggregate maps.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::datapipe::{check_hourly_stack, HourlyStack, PatchIndex, RasterGrid, TIMESTAMP_FORMAT};
use crate::error::{bail, Error, Result};

pub const DEFAULT_MAPE_EPSILON: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// `None` when the observed series is constant.
    pub pearson: Option<f64>,
    pub rmse: f64,
    pub mae: f64,
    /// Percent; `None` when every observed value fell under the guard.
    pub mape: Option<f64>,
    pub n: usize,
    /// MAPE terms skipped because `|observed| < mape_epsilon`.
    pub excluded: usize,
}

impl MetricsRecord {
    pub fn pearson(&self) -> Result<f64> {
        self.pearson
            .ok_or_else(|| Error::Data("Pearson correlation undefined for a constant observed series".into()))
    }
}

/// Pearson (population moments), RMSE, MAE and MAPE of `predicted` against `observed`.
pub fn regression_metrics(observed: &[f64], predicted: &[f64], mape_epsilon: f64) -> Result<MetricsRecord> {
    if observed.len() != predicted.len() {
        bail!(Dimension, "observed has {} values, predicted {}", observed.len(), predicted.len());
    }
    let n = observed.len();
    if n < 2 {
        bail!(Data, "need at least 2 paired values, got {n}");
    }
    if observed.iter().chain(predicted).any(|v| !v.is_finite()) {
        bail!(Data, "series contain non-finite values");
    }
    let nf = n as f64;
    let mean_o = observed.iter().sum::<f64>() / nf;
    let mean_p = predicted.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    let (mut se, mut ae, mut pe) = (0.0, 0.0, 0.0);
    let mut excluded = 0;
    for (&o, &p) in observed.iter().zip(predicted) {
        let (dx, dy) = (o - mean_o, p - mean_p);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
        let e = p - o;
        se += e * e;
        ae += e.abs();
        if o.abs() < mape_epsilon {
            excluded += 1;
        } else {
            pe += (e / o).abs();
        }
    }
    let pearson = if sxx > 0.0 && syy > 0.0 {
        Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
    } else if sxx > 0.0 {
        // A constant prediction has no linear association.
        Some(0.0)
    } else {
        None
    };
    Ok(MetricsRecord {
        pearson,
        rmse: (se / nf).sqrt(),
        mae: ae / nf,
        mape: (excluded < n).then(|| 100.0 * pe / (n - excluded) as f64),
        n,
        excluded,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationSpec {
    pub name: String,
    pub x: usize,
    pub y: usize,
    /// CSV of `timestamp,t_a` hourly measurements, relative to `stations.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series_file: Option<String>,
}

pub fn load_stations(path: &Path) -> Result<Vec<StationSpec>> {
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let stations: Vec<StationSpec> =
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut names: Vec<&str> = stations.iter().map(|s| s.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        bail!(Config, "station names in {} are not unique", path.display());
    }
    Ok(stations)
}

/// Series at the station pixel ordered by (day, hour).
pub fn extract_station_series(stack: &HourlyStack, station: &StationSpec) -> Result<Vec<f64>> {
    let (w, h) = check_hourly_stack(stack)?;
    if station.x >= w || station.y >= h {
        bail!(Config, "station {} at ({}, {}) lies outside the {w}x{h} grid", station.name, station.x, station.y);
    }
    let mut out = Vec::with_capacity(stack.len() * 24);
    for (d, day) in stack.iter().enumerate() {
        for (hour, g) in day.iter().enumerate() {
            match g.get(station.x, station.y) {
                Some(v) => out.push(v as f64),
                None => bail!(Data, "station {} pixel is nodata at day {d} hour {hour}", station.name),
            }
        }
    }
    Ok(out)
}

/// Pixelwise mean over days for each hour; pixels with no valid day stay nodata.
pub fn hourly_aggregate(stack: &HourlyStack) -> Result<Vec<RasterGrid>> {
    check_hourly_stack(stack)?;
    let first = &stack[0][0];
    (0..24)
        .map(|h| {
            let mut out = first.clone();
            for i in 0..first.len() {
                let (mut sum, mut n) = (0.0f64, 0u32);
                for day in stack {
                    let g = &day[h];
                    let v = g.values()[i];
                    if !g.is_nodata_value(v) {
                        sum += v as f64;
                        n += 1;
                    }
                }
                out.values_mut()[i] = if n > 0 {
                    (sum / n as f64) as f32
                } else {
                    out.nodata.get_or_insert(crate::datapipe::DEFAULT_NODATA).to_owned()
                };
            }
            Ok(out)
        })
        .collect()
}

/// Reads a `timestamp,t_a` CSV and aligns it to `dates × 24` hours;
/// hours without a measurement are NaN.
pub fn read_station_series(reader: impl Read, dates: &[NaiveDate]) -> Result<Vec<f64>> {
    #[derive(Deserialize)]
    struct Row {
        timestamp: String,
        t_a: f64,
    }
    let slot: BTreeMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let mut out = vec![f64::NAN; dates.len() * 24];
    let mut matched = 0;
    for row in csv::Reader::from_reader(reader).deserialize::<Row>() {
        let row = row.map_err(|e| Error::Format(format!("station series: {e}")))?;
        let ts = NaiveDateTime::parse_from_str(&row.timestamp, TIMESTAMP_FORMAT)
            .map_err(|e| Error::Format(format!("bad timestamp {:?}: {e}", row.timestamp)))?;
        if ts.minute() != 0 || ts.second() != 0 {
            bail!(Data, "station timestamp {ts} is not on the hour");
        }
        if let Some(&d) = slot.get(&ts.date()) {
            out[d * 24 + ts.hour() as usize] = row.t_a;
            matched += 1;
        }
    }
    if matched == 0 && !dates.is_empty() {
        bail!(Data, "station series shares no hour with the predicted period");
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchMetrics {
    pub patch_id: usize,
    pub metrics: MetricsRecord,
}

/// Metrics of `predicted` against `reference` over every pixel and hour of
/// each patch window.
pub fn patch_metrics(
    reference: &HourlyStack,
    predicted: &HourlyStack,
    patches: &[PatchIndex],
) -> Result<Vec<PatchMetrics>> {
    let shape = check_hourly_stack(reference)?;
    if check_hourly_stack(predicted)? != shape || reference.len() != predicted.len() {
        bail!(Data, "reference and predicted stacks are not aligned");
    }
    patches
        .iter()
        .map(|p| {
            if p.row0 + p.size > shape.1 || p.col0 + p.size > shape.0 {
                bail!(Config, "patch {} lies outside the grid", p.id);
            }
            let (mut o, mut q) = (Vec::new(), Vec::new());
            for (rd, pd) in reference.iter().zip(predicted) {
                for (rg, pg) in rd.iter().zip(pd) {
                    for y in p.row0..p.row0 + p.size {
                        for x in p.col0..p.col0 + p.size {
                            if let (Some(a), Some(b)) = (rg.get(x, y), pg.get(x, y)) {
                                o.push(a as f64);
                                q.push(b as f64);
                            }
                        }
                    }
                }
            }
            Ok(PatchMetrics {
                patch_id: p.id,
                metrics: regression_metrics(&o, &q, DEFAULT_MAPE_EPSILON)?,
            })
        })
        .collect()
}

pub const COMPARISON_A_B: &str = "A-vs-B";
pub const COMPARISON_A_REAL: &str = "A-vs-real";
pub const COMPARISON_B_REAL: &str = "B-vs-real";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub station: String,
    pub comparison: String,
    pub pearson: Option<f64>,
    pub rmse: f64,
    pub mae: f64,
    pub mape: Option<f64>,
    pub n: usize,
    pub excluded_mape_terms: usize,
}

fn row(station: &str, comparison: &str, reference: &[f64], other: &[f64]) -> Result<ReportRow> {
    let (o, p): (Vec<f64>, Vec<f64>) = reference
        .iter()
        .zip(other)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .unzip();
    let m = regression_metrics(&o, &p, DEFAULT_MAPE_EPSILON)?;
    Ok(ReportRow {
        station: station.to_string(),
        comparison: comparison.to_string(),
        pearson: m.pearson,
        rmse: m.rmse,
        mae: m.mae,
        mape: m.mape,
        n: m.n,
        excluded_mape_terms: m.excluded,
    })
}

/// Metric rows per station (sorted by name) and available comparison.
///
/// `B` is the reference in `A-vs-B`; `real` maps station names to series
/// aligned with the stacks, NaN marking missing hours.
pub fn station_report(
    stations: &[StationSpec],
    a: &HourlyStack,
    b: Option<&HourlyStack>,
    real: &BTreeMap<String, Vec<f64>>,
) -> Result<Vec<ReportRow>> {
    if let Some(b) = b {
        if b.len() != a.len() {
            bail!(Data, "stacks cover {} and {} days", a.len(), b.len());
        }
    }
    let mut sorted: Vec<&StationSpec> = stations.iter().collect();
    sorted.sort_by(|x, y| x.name.cmp(&y.name));
    let mut rows = Vec::new();
    for s in sorted {
        let sa = extract_station_series(a, s)?;
        let sb = b.map(|b| extract_station_series(b, s)).transpose()?;
        if let Some(sb) = &sb {
            rows.push(row(&s.name, COMPARISON_A_B, sb, &sa)?);
        }
        if let Some(r) = real.get(&s.name) {
            if r.len() != sa.len() {
                bail!(Data, "real series for {} has {} hours, predictions {}", s.name, r.len(), sa.len());
            }
            rows.push(row(&s.name, COMPARISON_A_REAL, r, &sa)?);
            if let Some(sb) = &sb {
                rows.push(row(&s.name, COMPARISON_B_REAL, r, sb)?);
            }
        }
    }
    Ok(rows)
}

pub const REPORT_HEADER: [&str; 8] =
    ["station", "comparison", "pearson", "rmse", "mae", "mape", "n", "excluded_mape_terms"];

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

pub fn write_report_csv(rows: &[ReportRow], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(REPORT_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.station.clone(),
            r.comparison.clone(),
            opt(r.pearson),
            r.rmse.to_string(),
            r.mae.to_string(),
            opt(r.mape),
            r.n.to_string(),
            r.excluded_mape_terms.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Markdown table with one column group per comparison, laid out as
/// `Station | Pearson | RMSE | MAE | MAPE` blocks.
pub fn format_report_table(rows: &[ReportRow]) -> String {
    let mut comparisons: Vec<&str> = Vec::new();
    for r in rows {
        if !comparisons.contains(&r.comparison.as_str()) {
            comparisons.push(&r.comparison);
        }
    }
    let mut out = String::new();
    for c in comparisons {
        out.push_str(&format!("### {c}\n\n| Station | Pearson | RMSE | MAE | MAPE |\n|---|---|---|---|---|\n"));
        for r in rows.iter().filter(|r| r.comparison == c) {
            let f = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.2}"));
            out.push_str(&format!(
                "| {} | {} | {:.2} | {:.2} | {} |\n",
                r.station,
                f(r.pearson),
                r.rmse,
                r.mae,
                f(r.mape)
            ));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::Units;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(o: &[f64], p: &[f64]) -> (f64, f64, f64, f64) {
        let n = o.len() as f64;
        let mo = o.iter().sum::<f64>() / n;
        let mp = p.iter().sum::<f64>() / n;
        let cov: f64 = (0..o.len()).map(|i| (o[i] - mo) * (p[i] - mp)).sum::<f64>() / n;
        let so = ((0..o.len()).map(|i| (o[i] - mo).powi(2)).sum::<f64>() / n).sqrt();
        let sp = ((0..o.len()).map(|i| (p[i] - mp).powi(2)).sum::<f64>() / n).sqrt();
        let rmse = ((0..o.len()).map(|i| (o[i] - p[i]).powi(2)).sum::<f64>() / n).sqrt();
        let mae = (0..o.len()).map(|i| (o[i] - p[i]).abs()).sum::<f64>() / n;
        let mape = 100.0 * (0..o.len()).map(|i| ((o[i] - p[i]) / o[i]).abs()).sum::<f64>() / n;
        (cov / (so * sp), rmse, mae, mape)
    }

    #[test]
    fn worked_examples() {
        let m = regression_metrics(&[10.0, 20.0], &[12.0, 18.0], DEFAULT_MAPE_EPSILON).unwrap();
        assert!((m.rmse - 2.0).abs() < 1e-12 && (m.mae - 2.0).abs() < 1e-12);
        assert!((m.mape.unwrap() - 15.0).abs() < 1e-12);
        let x = [1.0, 5.0, 2.5, 7.0];
        let m = regression_metrics(&x, &x, DEFAULT_MAPE_EPSILON).unwrap();
        assert_eq!((m.pearson, m.rmse, m.mae, m.mape), (Some(1.0), 0.0, 0.0, Some(0.0)));
        let neg = [-1.0, 2.0, -3.0, 2.0];
        let m = regression_metrics(&neg.map(|v: f64| -v), &neg, DEFAULT_MAPE_EPSILON).unwrap();
        assert!((m.pearson.unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_observed_keeps_other_metrics() {
        let m = regression_metrics(&[3.0, 3.0, 3.0], &[1.0, 2.0, 3.0], DEFAULT_MAPE_EPSILON).unwrap();
        assert!(m.pearson().is_err());
        assert!((m.mae - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mape_guard_counts_exclusions() {
        let m = regression_metrics(&[0.0, 10.0, 20.0], &[1.0, 12.0, 18.0], DEFAULT_MAPE_EPSILON).unwrap();
        assert_eq!(m.excluded, 1);
        assert!((m.mape.unwrap() - 15.0).abs() < 1e-12);
        assert!(regression_metrics(&[1.0], &[1.0], 1e-6).is_err());
        assert!(regression_metrics(&[1.0, 2.0], &[1.0], 1e-6).is_err());
    }

    #[test]
    fn matches_naive_formulas_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let n = rng.random_range(2..200);
            let o: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..40.0)).collect();
            let p: Vec<f64> = o.iter().map(|v| v + rng.random_range(-3.0..3.0)).collect();
            let m = regression_metrics(&o, &p, DEFAULT_MAPE_EPSILON).unwrap();
            let (r, rmse, mae, mape) = naive(&o, &p);
            assert!((m.pearson.unwrap() - r).abs() < 1e-12);
            assert!((m.rmse - rmse).abs() < 1e-12);
            assert!((m.mae - mae).abs() < 1e-12);
            assert!((m.mape.unwrap() - mape).abs() < 1e-12);
            assert!(m.rmse >= m.mae);
        }
    }

    fn stack(days: usize, w: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Vec<Vec<RasterGrid>> {
        let mut out = Vec::new();
        for d in 0..days {
            let mut day = Vec::new();
            for h in 0..24 {
                let v = (0..w * w).map(|i| f(d, h, i)).collect();
                day.push(RasterGrid::new(w, w, Units::DegC, v).unwrap());
            }
            out.push(day);
        }
        out
    }

    fn station(name: &str, x: usize, y: usize) -> StationSpec {
        StationSpec { name: name.into(), x, y, series_file: None }
    }

    #[test]
    fn station_series_index_law() {
        let s = stack(2, 4, |d, h, i| if d == 1 && h == 14 && i == 4 * 2 + 1 { 99.0 } else { 5.0 });
        let series = extract_station_series(&s, &station("a", 1, 2)).unwrap();
        assert_eq!(series.len(), 48);
        assert_eq!(series.iter().position(|&v| v == 99.0), Some(38));
        assert!(matches!(extract_station_series(&s, &station("b", 4, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn hourly_aggregate_examples() {
        let one = stack(1, 3, |_, h, i| (h * 10 + i) as f32);
        assert_eq!(hourly_aggregate(&one).unwrap(), one[0]);
        let two = stack(2, 3, |d, _, _| if d == 0 { 10.0 } else { 20.0 });
        assert!(hourly_aggregate(&two).unwrap().iter().all(|g| g.values().iter().all(|&v| v == 15.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = stack(5, 4, |_, _, _| rng.random_range(0.0..30.0));
        let agg = hourly_aggregate(&r).unwrap();
        for h in 0..24 {
            for i in 0..16 {
                let mut s = 0.0f64;
                for d in 0..5 {
                    s += r[d][h].values()[i] as f64;
                }
                assert_eq!(agg[h].values()[i], (s / 5.0) as f32);
            }
        }
        let mut ragged = two.clone();
        ragged[0].truncate(20);
        assert!(matches!(hourly_aggregate(&ragged), Err(Error::Data(_))));
    }

    #[test]
    fn report_rows_and_layout() {
        let a = stack(2, 8, |d, h, i| (d * 3 + h + i) as f32 + 1.0);
        let stations: Vec<_> = (0..7).map(|k| station(&format!("st{k}"), k, k)).collect();
        let mut real = BTreeMap::new();
        for s in &stations {
            let mut r = extract_station_series(&a, s).unwrap();
            r.iter_mut().for_each(|v| *v += 0.5);
            r[3] = f64::NAN;
            real.insert(s.name.clone(), r);
        }
        let rows = station_report(&stations, &a, Some(&a), &BTreeMap::new()).unwrap();
        assert_eq!(rows.len(), 7);
        for r in &rows {
            assert_eq!((r.pearson, r.rmse, r.mae, r.mape), (Some(1.0), 0.0, 0.0, Some(0.0)));
        }
        let rows = station_report(&stations, &a, None, &real).unwrap();
        assert_eq!(rows.len(), 7);
        assert!(rows.iter().all(|r| r.n == 47 && (r.mae - 0.5).abs() < 1e-9));
        assert_eq!(station_report(&stations, &a, Some(&a), &real).unwrap().len(), 21);
        let short = stack(1, 8, |_, _, _| 1.0);
        assert!(matches!(station_report(&stations, &a, Some(&short), &real), Err(Error::Data(_))));

        let mut csv = Vec::new();
        write_report_csv(&rows, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("station,comparison,pearson,rmse,mae,mape,n,excluded_mape_terms\n"));
        assert!(format_report_table(&rows).contains("| Station | Pearson | RMSE | MAE | MAPE |"));
    }

    #[test]
    fn station_csv_alignment() {
        let dates = [NaiveDate::from_ymd_opt(2020, 7, 1).unwrap(), NaiveDate::from_ymd_opt(2020, 7, 2).unwrap()];
        let csv = "timestamp,t_a\n2020-07-02T14:00:00,31.5\n2020-06-30T10:00:00,20\n";
        let s = read_station_series(csv.as_bytes(), &dates).unwrap();
        assert_eq!(s[38], 31.5);
        assert_eq!(s.iter().filter(|v| v.is_finite()).count(), 1);
        assert!(read_station_series("timestamp,t_a\n2020-06-30T10:00:00,20\n".as_bytes(), &dates).is_err());
    }

    #[test]
    fn patch_metrics_cover_windows() {
        let truth = stack(1, 4, |_, h, i| (h * 16 + i) as f32 + 1.0);
        let pred = stack(1, 4, |_, h, i| (h * 16 + i) as f32 + if i < 8 { 1.0 } else { 3.0 });
        let patches = crate::datapipe::make_patches(4, 4, 2).unwrap();
        let m = patch_metrics(&truth, &pred, &patches).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m[0].metrics.n, 4 * 24);
        assert!(m[0].metrics.mae.abs() < 1e-12);
        assert!((m[3].metrics.mae - 2.0).abs() < 1e-12);
        assert!(patch_metrics(&truth, &truth[..0], &patches).is_err());
    }

    proptest! {
        #[test]
        fn pearson_affine_invariant(
            o in prop::collection::vec(-20.0f64..40.0, 3..50),
            noise in prop::collection::vec(-5.0f64..5.0, 50),
            a in 0.1f64..10.0,
            b in -50.0f64..50.0,
        ) {
            let p: Vec<f64> = o.iter().zip(&noise).map(|(x, e)| x + e).collect();
            let base = regression_metrics(&o, &p, 1e-6).unwrap();
            prop_assume!(base.pearson.is_some());
            let t: Vec<f64> = p.iter().map(|v| a * v + b).collect();
            let moved = regression_metrics(&o, &t, 1e-6).unwrap();
            prop_assert!((base.pearson.unwrap() - moved.pearson.unwrap()).abs() < 1e-12);
        }

        #[test]
        fn rmse_at_least_mae(o in prop::collection::vec(-20.0f64..40.0, 2..60), p in prop::collection::vec(-20.0f64..40.0, 60)) {
            let m = regression_metrics(&o, &p[..o.len()], 1e-6).unwrap();
            prop_assert!(m.rmse + 1e-12 >= m.mae && m.mae >= 0.0);
        }

        #[test]
        fn aggregate_commutes_with_day_order(vals in prop::collection::vec(0.0f32..30.0, 3), rot in 0usize..3) {
            let s = stack(3, 2, |d, h, i| vals[d] + (h + i) as f32);
            let mut r = s.clone();
            r.rotate_left(rot);
            prop_assert_eq!(hourly_aggregate(&s).unwrap(), hourly_aggregate(&r).unwrap());
        }
    }
}
