//! Deterministic synthetic city used in place of reanalysis and
//! urban-climate model output.
//!
//! Terrain, land cover and daily weather are drawn from seeded ChaCha
//! streams. The hourly air temperature of every pixel then follows a closed
//! form (see [`oracle_temperature`]), so any model trained on the world can
//! be scored against an exact reference.

use std::f64::consts::PI;

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::met::{MetRow, MetSeries};
use super::patches::PATCH_SIZE;
use super::raster::{LandCover, RasterGrid, Units};
use super::SpatialLayers;
use crate::error::{bail, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthWorldConfig {
    pub width: usize,
    pub height: usize,
    pub cell_size_m: f64,
    pub seed: u64,
    /// Temperature drop per meter of elevation (°C/m).
    pub lapse_rate: f64,
    pub a_day: f64,
    pub a_night: f64,
    pub c_veg: f64,
    pub lambda_sea: f64,
    pub noise_sigma: f64,
    pub t_sea: f64,
    pub start_date: NaiveDate,
    pub day_count: usize,
    pub max_elevation_m: f64,
    /// Mean sea width as a fraction of the domain width (western edge).
    pub sea_fraction: f64,
    pub sea_decay_m: f64,
    pub urban_blobs: usize,
    /// Upper bound on the number of target-type days written as oracle files.
    pub oracle_max_days: usize,
}

impl Default for SynthWorldConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            cell_size_m: 100.0,
            seed: 0,
            lapse_rate: 0.0065,
            a_day: 3.0,
            a_night: 2.0,
            c_veg: 1.0,
            lambda_sea: 0.5,
            noise_sigma: 0.1,
            t_sea: 20.0,
            start_date: NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"),
            day_count: 365,
            max_elevation_m: 1000.0,
            sea_fraction: 0.15,
            sea_decay_m: 500.0,
            urban_blobs: 6,
            oracle_max_days: 20,
        }
    }
}

impl SynthWorldConfig {
    pub fn validate(&self) -> Result<()> {
        let constants = [
            self.cell_size_m,
            self.lapse_rate,
            self.a_day,
            self.a_night,
            self.c_veg,
            self.lambda_sea,
            self.noise_sigma,
            self.t_sea,
            self.max_elevation_m,
            self.sea_fraction,
            self.sea_decay_m,
        ];
        if constants.iter().any(|c| !c.is_finite()) {
            bail!(Config, "synthetic world constants must be finite");
        }
        if self.day_count < 1 {
            bail!(Config, "day_count must be at least 1");
        }
        if self.width < PATCH_SIZE
            || self.height < PATCH_SIZE
            || self.width % PATCH_SIZE != 0
            || self.height % PATCH_SIZE != 0
        {
            bail!(
                Config,
                "domain {}x{} must be a positive multiple of {PATCH_SIZE}",
                self.width,
                self.height
            );
        }
        if self.cell_size_m <= 0.0 || self.sea_decay_m <= 0.0 || self.noise_sigma < 0.0 {
            bail!(Config, "cell size and sea decay must be positive, noise non-negative");
        }
        if !(0.0..0.5).contains(&self.sea_fraction) {
            bail!(Config, "sea_fraction must lie in [0, 0.5)");
        }
        Ok(())
    }
}

/// Prototype of one planted weather type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeatherTypeSpec {
    pub name: &'static str,
    /// Daily thermal amplitude (°C).
    pub amplitude: f64,
    /// Daily precipitation total (mm).
    pub precip_mm: f64,
    /// Specific humidity (g/kg).
    pub humidity: f64,
    /// Daily-mean wind speed (m/s).
    pub speed: f64,
    /// Meteorological direction the wind blows from (degrees).
    pub direction_deg: f64,
    /// Offset added to the seasonal mean temperature (°C).
    pub t_offset: f64,
    /// Relative occurrence weight per calendar month, January first.
    pub month_weights: [f64; 12],
}

/// Index of the dry, summer-only, weak-easterly type.
pub const TARGET_WEATHER_TYPE: usize = 3;

#[rustfmt::skip]
pub const WEATHER_TYPES: [WeatherTypeSpec; 12] = [
    WeatherTypeSpec { name: "winter-north-dry", amplitude: 5.0, precip_mm: 0.5, humidity: 4.0, speed: 5.0, direction_deg: 0.0, t_offset: -1.0,
        month_weights: [3.0, 3.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 3.0] },
    WeatherTypeSpec { name: "winter-west-rain", amplitude: 3.0, precip_mm: 18.0, humidity: 5.5, speed: 8.0, direction_deg: 270.0, t_offset: 0.0,
        month_weights: [3.0, 3.0, 2.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 3.0, 3.0] },
    WeatherTypeSpec { name: "winter-south-foehn", amplitude: 9.0, precip_mm: 0.2, humidity: 5.0, speed: 6.0, direction_deg: 180.0, t_offset: 3.0,
        month_weights: [2.0, 2.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 2.0] },
    WeatherTypeSpec { name: "summer-east-dry", amplitude: 11.0, precip_mm: 0.0, humidity: 11.0, speed: 1.72, direction_deg: 90.0, t_offset: 4.0,
        month_weights: [0.0, 0.0, 0.0, 0.0, 0.0, 4.0, 5.0, 5.0, 3.0, 0.0, 0.0, 0.0] },
    WeatherTypeSpec { name: "summer-storm", amplitude: 6.0, precip_mm: 14.0, humidity: 13.5, speed: 3.5, direction_deg: 200.0, t_offset: -1.0,
        month_weights: [0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 2.0, 2.0, 2.0, 0.0, 0.0, 0.0] },
    WeatherTypeSpec { name: "summer-north-breeze", amplitude: 6.5, precip_mm: 1.0, humidity: 9.0, speed: 4.5, direction_deg: 0.0, t_offset: 0.0,
        month_weights: [0.0, 0.0, 0.0, 1.0, 2.0, 2.0, 2.0, 2.0, 2.0, 1.0, 0.0, 0.0] },
    WeatherTypeSpec { name: "spring-west-showers", amplitude: 5.0, precip_mm: 8.0, humidity: 7.5, speed: 6.0, direction_deg: 270.0, t_offset: -0.5,
        month_weights: [0.0, 0.0, 2.0, 3.0, 3.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0] },
    WeatherTypeSpec { name: "spring-east-dry", amplitude: 10.0, precip_mm: 0.1, humidity: 6.0, speed: 3.5, direction_deg: 100.0, t_offset: 1.0,
        month_weights: [0.0, 1.0, 2.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0, 2.0, 1.0, 0.0] },
    WeatherTypeSpec { name: "autumn-south-mild", amplitude: 7.0, precip_mm: 2.5, humidity: 9.0, speed: 4.0, direction_deg: 180.0, t_offset: 1.0,
        month_weights: [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 3.0, 2.0, 0.0] },
    WeatherTypeSpec { name: "autumn-north-rain", amplitude: 3.5, precip_mm: 22.0, humidity: 8.5, speed: 5.0, direction_deg: 10.0, t_offset: -1.0,
        month_weights: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 1.0] },
    WeatherTypeSpec { name: "calm-fog", amplitude: 2.0, precip_mm: 0.3, humidity: 8.0, speed: 0.8, direction_deg: 160.0, t_offset: 0.0,
        month_weights: [2.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 2.0] },
    WeatherTypeSpec { name: "west-gale", amplitude: 4.0, precip_mm: 6.0, humidity: 6.5, speed: 12.0, direction_deg: 260.0, t_offset: -2.0,
        month_weights: [2.0, 2.0, 2.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0] },
];

/// Realized weather of one day.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayWeather {
    pub date: NaiveDate,
    pub weather_type: usize,
    pub t_mean: f64,
    pub amplitude: f64,
    pub precip_mm: f64,
    pub humidity: f64,
    pub speed: f64,
    pub direction_deg: f64,
}

impl DayWeather {
    pub fn t_base(&self, hour: u32) -> f64 {
        t_base(self.t_mean, self.amplitude, hour as f64)
    }
}

/// Shortwave proxy: zero at night, peaking at 12:00.
pub fn radiation(hour: f64) -> f64 {
    (PI * (hour - 6.0) / 12.0).sin().max(0.0)
}

/// Background temperature with its maximum at 15:00.
pub fn t_base(t_mean: f64, amplitude: f64, hour: f64) -> f64 {
    t_mean + 0.5 * amplitude * (2.0 * PI * (hour - 15.0) / 24.0).cos()
}

/// Per-pixel inputs of the oracle formula.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OraclePixel {
    pub elevation: f64,
    pub imperviousness: f64,
    pub vegetation: bool,
    pub sea_proximity: f64,
}

/// Noise-free oracle temperature of one pixel.
pub fn oracle_temperature(cfg: &SynthWorldConfig, px: OraclePixel, t_base: f64, hour: f64) -> f64 {
    let rad = radiation(hour);
    t_base - cfg.lapse_rate * px.elevation
        + (cfg.a_day * rad + cfg.a_night * (1.0 - rad)) * px.imperviousness
        - if px.vegetation { cfg.c_veg } else { 0.0 }
        + cfg.lambda_sea * px.sea_proximity * (cfg.t_sea - t_base)
}

const STREAM_TERRAIN: u64 = 0;
const STREAM_WEATHER: u64 = 1;
const STREAM_NOISE_BASE: u64 = 16;

pub struct SynthWorld {
    pub config: SynthWorldConfig,
    pub layers: SpatialLayers,
    /// Proximity to the sea in (0, 1], 1 on water.
    pub sea_proximity: Vec<f32>,
    pub met: MetSeries,
    pub days: Vec<DayWeather>,
}

impl SynthWorld {
    pub fn generate(config: SynthWorldConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(STREAM_TERRAIN);
        let (layers, sea_proximity) = terrain(&config, &mut rng)?;
        rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(STREAM_WEATHER);
        let days = weather(&config, &mut rng);
        let met = met_series(&days)?;
        Ok(Self {
            config,
            layers,
            sea_proximity,
            met,
            days,
        })
    }

    pub fn day(&self, date: NaiveDate) -> Option<&DayWeather> {
        let idx = (date - self.config.start_date).num_days();
        usize::try_from(idx).ok().and_then(|i| self.days.get(i))
    }

    /// Days whose planted type is [`TARGET_WEATHER_TYPE`].
    pub fn target_type_days(&self) -> Vec<NaiveDate> {
        self.days
            .iter()
            .filter(|d| d.weather_type == TARGET_WEATHER_TYPE)
            .map(|d| d.date)
            .collect()
    }

    pub fn pixel(&self, x: usize, y: usize) -> OraclePixel {
        let i = self.layers.elevation.index(x, y);
        OraclePixel {
            elevation: self.layers.elevation.values()[i] as f64,
            imperviousness: self.layers.imperviousness.values()[i] as f64,
            vegetation: self.layers.landcover.values()[i] == LandCover::Vegetation.code(),
            sea_proximity: self.sea_proximity[i] as f64,
        }
    }

    /// Oracle air temperature field (°C) for one day-hour, noise included.
    pub fn oracle_grid(&self, date: NaiveDate, hour: u32) -> Result<RasterGrid> {
        let Some(day) = self.day(date) else {
            bail!(Data, "{date} is outside the synthetic period");
        };
        if hour > 23 {
            bail!(Parameter, "hour {hour} outside 0..=23");
        }
        let day_idx = (date - self.config.start_date).num_days() as u64;
        let mut noise = ChaCha8Rng::seed_from_u64(self.config.seed);
        noise.set_stream(STREAM_NOISE_BASE + day_idx * 24 + hour as u64);
        let tb = day.t_base(hour);
        let (w, h) = (self.config.width, self.config.height);
        let mut values = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let mut t = oracle_temperature(&self.config, self.pixel(x, y), tb, hour as f64);
                if self.config.noise_sigma > 0.0 {
                    let z: f64 = noise.sample(StandardNormal);
                    t += self.config.noise_sigma * z;
                }
                values.push(t as f32);
            }
        }
        RasterGrid::new(w, h, Units::DegC, values)?.with_cell_size(self.config.cell_size_m)
    }
}

impl super::TargetSource for SynthWorld {
    fn target_grid(&self, date: NaiveDate, hour: u32) -> Result<RasterGrid> {
        self.oracle_grid(date, hour)
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Bilinearly interpolated lattice noise in [0, 1) with lattice spacing `cell`.
fn value_noise(w: usize, h: usize, cell: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let lw = w / cell + 2;
    let lh = h / cell + 2;
    let lattice: Vec<f64> = (0..lw * lh).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let gy = y / cell;
        let ty = smoothstep((y % cell) as f64 / cell as f64);
        for x in 0..w {
            let gx = x / cell;
            let tx = smoothstep((x % cell) as f64 / cell as f64);
            let at = |r: usize, c: usize| lattice[r * lw + c];
            let top = at(gy, gx) * (1.0 - tx) + at(gy, gx + 1) * tx;
            let bottom = at(gy + 1, gx) * (1.0 - tx) + at(gy + 1, gx + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

fn box_blur(v: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for y in 0..h {
        for x in 0..w {
            let (mut sum, mut n) = (0.0, 0.0);
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    sum += v[yy * w + xx];
                    n += 1.0;
                }
            }
            out[y * w + x] = sum / n;
        }
    }
    out
}

fn coast_column(cfg: &SynthWorldConfig, row: usize) -> f64 {
    let w = cfg.width as f64;
    let wobble = 0.012 * w * (2.0 * PI * row as f64 / 97.0).sin()
        + 0.008 * w * (2.0 * PI * row as f64 / 41.0).sin();
    (cfg.sea_fraction * w + if cfg.sea_fraction > 0.0 { wobble } else { 0.0 }).round()
}

fn terrain(cfg: &SynthWorldConfig, rng: &mut ChaCha8Rng) -> Result<(SpatialLayers, Vec<f32>)> {
    let (w, h) = (cfg.width, cfg.height);
    let n = w * h;

    let mut ridges = vec![0.0; n];
    let mut cell = (w.max(h) / 4).max(2);
    let mut amp = 1.0;
    while cell >= 2 && amp > 0.1 {
        let octave = value_noise(w, h, cell, rng);
        for (r, v) in ridges.iter_mut().zip(octave) {
            *r += amp * (1.0 - (2.0 * v - 1.0).abs());
        }
        cell /= 2;
        amp *= 0.5;
    }
    let ridges = box_blur(&ridges, w, h);

    let mut is_sea = vec![false; n];
    let mut sea_proximity = vec![1.0f32; n];
    let mut raw_elev = vec![0.0; n];
    for y in 0..h {
        let coast = coast_column(cfg, y);
        for x in 0..w {
            let i = y * w + x;
            let inland = x as f64 - coast;
            if inland < 0.0 {
                is_sea[i] = true;
                continue;
            }
            let dist_m = (inland + 1.0) * cfg.cell_size_m;
            sea_proximity[i] = (-dist_m / cfg.sea_decay_m).exp() as f32;
            let ramp = smoothstep(inland / (0.35 * w as f64));
            raw_elev[i] = ridges[i] * (0.1 + 0.9 * ramp);
        }
    }
    let land: Vec<f64> = (0..n).filter(|&i| !is_sea[i]).map(|i| raw_elev[i]).collect();
    if land.is_empty() {
        bail!(Config, "synthetic domain has no land");
    }
    let lo = land.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = land.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    let elevation: Vec<f64> = (0..n)
        .map(|i| {
            if is_sea[i] {
                0.0
            } else {
                (raw_elev[i] - lo) / span * cfg.max_elevation_m
            }
        })
        .collect();

    // Urban blobs sit in the lowest third of the land.
    let mut sorted = land.clone();
    sorted.sort_by(f64::total_cmp);
    let valley = (sorted[sorted.len() * 35 / 100] - lo) / span * cfg.max_elevation_m;
    let min_sep = 0.1 * w.min(h) as f64;
    let mut blobs: Vec<(f64, f64, f64, f64, bool)> = Vec::new();
    let mut tries = 0;
    while blobs.len() < cfg.urban_blobs && tries < 5000 {
        tries += 1;
        let x = rng.random_range(0..w);
        let y = rng.random_range(0..h);
        let i = y * w + x;
        let far_enough = blobs
            .iter()
            .all(|b| ((b.0 - x as f64).powi(2) + (b.1 - y as f64).powi(2)).sqrt() >= min_sep);
        if is_sea[i] || elevation[i] > valley || !far_enough {
            continue;
        }
        let sigma = w.min(h) as f64 * rng.random_range(0.025..0.05);
        let peak = rng.random_range(0.85..1.0);
        let industrial = blobs.len() % 3 == 2;
        blobs.push((x as f64, y as f64, sigma, peak, industrial));
    }
    let texture = value_noise(w, h, 4.min(w / 2).max(2), rng);

    let mut imperv = vec![0.0f32; n];
    let mut landcover = vec![LandCover::Water.code(); n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if is_sea[i] {
                continue;
            }
            let mut total = 0.0;
            let mut strongest = (0.0, false);
            for &(bx, by, sigma, peak, industrial) in &blobs {
                let d2 = (bx - x as f64).powi(2) + (by - y as f64).powi(2);
                let v = peak * (-d2 / (2.0 * sigma * sigma)).exp();
                total += v;
                if v > strongest.0 {
                    strongest = (v, industrial);
                }
            }
            let mut v = total.min(1.0) * (0.9 + 0.1 * texture[i]);
            if v < 0.02 {
                v = 0.0;
            }
            imperv[i] = v as f32;
            landcover[i] = if v >= 0.3 {
                if strongest.1 {
                    LandCover::Industrial.code()
                } else {
                    LandCover::Urban.code()
                }
            } else {
                LandCover::Vegetation.code()
            };
        }
    }

    let grid = |units, values: Vec<f32>| -> Result<RasterGrid> {
        RasterGrid::new(w, h, units, values)?.with_cell_size(cfg.cell_size_m)
    };
    let layers = SpatialLayers {
        imperviousness: grid(Units::Fraction, imperv)?,
        elevation: grid(Units::Meters, elevation.iter().map(|&e| e as f32).collect())?,
        landcover: grid(Units::Category, landcover)?,
    };
    Ok((layers, sea_proximity))
}

fn weather(cfg: &SynthWorldConfig, rng: &mut ChaCha8Rng) -> Vec<DayWeather> {
    (0..cfg.day_count)
        .map(|k| {
            let date = cfg.start_date + Duration::days(k as i64);
            let month = date.month0() as usize;
            let total: f64 = WEATHER_TYPES.iter().map(|t| t.month_weights[month]).sum();
            let mut pick = rng.random::<f64>() * total;
            let mut weather_type = 0;
            for (i, t) in WEATHER_TYPES.iter().enumerate() {
                let wgt = t.month_weights[month];
                if wgt > 0.0 {
                    weather_type = i;
                    if pick < wgt {
                        break;
                    }
                    pick -= wgt;
                }
            }
            let spec = &WEATHER_TYPES[weather_type];
            let mut z = || -> f64 { rng.sample(StandardNormal) };
            let doy = date.ordinal() as f64;
            let t_mean = 14.0 + 8.0 * (2.0 * PI * (doy - 105.0) / 365.25).sin() + spec.t_offset + 0.8 * z();
            let amplitude = (spec.amplitude * (1.0 + 0.06 * z())).max(0.0);
            let precip_mm = if spec.precip_mm > 0.0 {
                spec.precip_mm * (0.25 * z()).exp()
            } else {
                0.0
            };
            let humidity = (spec.humidity + 0.4 * z()).max(0.5);
            let speed = (spec.speed * (1.0 + 0.08 * z())).abs();
            let direction_deg = (spec.direction_deg + 12.0 * z()).rem_euclid(360.0);
            DayWeather {
                date,
                weather_type,
                t_mean,
                amplitude,
                precip_mm,
                humidity,
                speed,
                direction_deg,
            }
        })
        .collect()
}

fn met_series(days: &[DayWeather]) -> Result<MetSeries> {
    let mut rows = Vec::with_capacity(days.len() * 24);
    for d in days {
        let theta = d.direction_deg.to_radians();
        for hour in 0..24u32 {
            let phase = (2.0 * PI * (hour as f64 - 9.0) / 24.0).sin();
            let s = d.speed * (1.0 + 0.2 * phase);
            rows.push(MetRow {
                timestamp: d.date.and_hms_opt(hour, 0, 0).expect("valid hour"),
                t2m: d.t_base(hour),
                precip: d.precip_mm / 24.0,
                q: d.humidity + 0.3 * phase,
                u10: -s * theta.sin(),
                v10: -s * theta.cos(),
            });
        }
    }
    MetSeries::new(rows)
}
