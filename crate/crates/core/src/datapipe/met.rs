use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};

use crate::error::{bail, Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";
pub const CSV_HEADER: [&str; 6] = ["timestamp", "t2m_degC", "precip_mmph", "q_gkg", "u10_ms", "v10_ms"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetRow {
    pub timestamp: NaiveDateTime,
    pub t2m: f64,
    pub precip: f64,
    pub q: f64,
    pub u10: f64,
    pub v10: f64,
}

impl MetRow {
    /// Values in network order: t2m, precip, q, u10, v10.
    pub fn vector(&self) -> [f64; 5] {
        [self.t2m, self.precip, self.q, self.u10, self.v10]
    }
}

/// Hourly meteorological series with on-the-hour, strictly increasing stamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetSeries {
    rows: Vec<MetRow>,
}

impl MetSeries {
    pub fn new(rows: Vec<MetRow>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.timestamp.minute() != 0 || r.timestamp.second() != 0 {
                bail!(Data, "timestamp {} is not on the hour", r.timestamp);
            }
            if r.vector().iter().any(|v| !v.is_finite()) {
                bail!(Data, "non-finite value at {}", r.timestamp);
            }
            if i > 0 {
                let prev = rows[i - 1].timestamp;
                if r.timestamp <= prev {
                    bail!(Data, "timestamps not increasing at {}", r.timestamp);
                }
                if r.timestamp.date() == prev.date() && r.timestamp - prev != Duration::hours(1) {
                    bail!(Data, "gap within day between {prev} and {}", r.timestamp);
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[MetRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row_at(&self, ts: NaiveDateTime) -> Option<&MetRow> {
        self.rows
            .binary_search_by_key(&ts, |r| r.timestamp)
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn day_rows(&self, date: NaiveDate) -> &[MetRow] {
        let start = self.rows.partition_point(|r| r.timestamp.date() < date);
        let end = self.rows.partition_point(|r| r.timestamp.date() <= date);
        &self.rows[start..end]
    }

    /// Distinct calendar dates, ascending.
    pub fn dates(&self) -> Vec<NaiveDate> {
        let mut out: Vec<NaiveDate> = self.rows.iter().map(|r| r.timestamp.date()).collect();
        out.dedup();
        out
    }

    /// Rows for hours `hour - len + 1 ..= hour` of `date`, reaching into the
    /// previous day when needed.
    pub fn window(&self, date: NaiveDate, hour: u32, len: usize) -> Result<Vec<&MetRow>> {
        if hour > 23 {
            bail!(Parameter, "hour {hour} outside 0..=23");
        }
        let end = date.and_hms_opt(hour, 0, 0).expect("valid hour");
        (0..len)
            .rev()
            .map(|back| {
                let ts = end - Duration::hours(back as i64);
                self.row_at(ts)
                    .ok_or_else(|| Error::Data(format!("met series has no row for {ts}")))
            })
            .collect()
    }

    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        if headers.iter().ne(CSV_HEADER.iter().copied()) {
            bail!(Format, "unexpected met CSV header {:?}", headers);
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let ts = NaiveDateTime::parse_from_str(&rec[0], TIMESTAMP_FORMAT)
                .map_err(|e| Error::Format(format!("bad timestamp {:?}: {e}", &rec[0])))?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("bad number {:?} at {ts}", &rec[i])))
            };
            rows.push(MetRow {
                timestamp: ts,
                t2m: num(1)?,
                precip: num(2)?,
                q: num(3)?,
                u10: num(4)?,
                v10: num(5)?,
            });
        }
        Self::new(rows)
    }

    pub fn to_csv_writer(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            let ts = r.timestamp.format(TIMESTAMP_FORMAT).to_string();
            let mut rec = vec![ts];
            rec.extend(r.vector().iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path)
            .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
        Self::from_csv_reader(f)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_csv_writer(std::fs::File::create(path)?)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("met CSV: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(d: u32, h: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2020, 7, d).unwrap().and_hms_opt(h, 0, 0).unwrap()
    }

    fn row(d: u32, h: u32) -> MetRow {
        MetRow {
            timestamp: ts(d, h),
            t2m: 20.0 + h as f64 * 0.1,
            precip: 0.0,
            q: 11.0,
            u10: -1.72,
            v10: 0.0,
        }
    }

    fn two_days() -> MetSeries {
        MetSeries::new((1..=2).flat_map(|d| (0..24).map(move |h| row(d, h))).collect()).unwrap()
    }

    #[test]
    fn rejects_gaps_and_disorder() {
        assert!(MetSeries::new(vec![row(1, 0), row(1, 2)]).is_err());
        assert!(MetSeries::new(vec![row(1, 3), row(1, 2)]).is_err());
        // A gap between days is allowed.
        assert!(MetSeries::new(vec![row(1, 23), row(3, 0)]).is_ok());
    }

    #[test]
    fn hour_zero_window_reaches_previous_day() {
        let s = two_days();
        let w = s.window(NaiveDate::from_ymd_opt(2020, 7, 2).unwrap(), 0, 3).unwrap();
        let stamps: Vec<_> = w.iter().map(|r| r.timestamp).collect();
        assert_eq!(stamps, [ts(1, 22), ts(1, 23), ts(2, 0)]);
        let err = s.window(NaiveDate::from_ymd_opt(2020, 7, 1).unwrap(), 1, 3).unwrap_err();
        assert!(err.to_string().contains("2020-06-30 23:00:00"));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let s = two_days();
        let mut buf = Vec::new();
        s.to_csv_writer(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp,t2m_degC,precip_mmph,q_gkg,u10_ms,v10_ms\n2020-07-01T00:00:00,"));
        assert_eq!(MetSeries::from_csv_reader(&buf[..]).unwrap(), s);
        assert_eq!(s.dates().len(), 2);
        assert_eq!(s.day_rows(NaiveDate::from_ymd_opt(2020, 7, 2).unwrap()).len(), 24);
    }

    #[test]
    fn bad_csv_header_is_format_error() {
        let err = MetSeries::from_csv_reader(&b"time,t\n"[..]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }
}
