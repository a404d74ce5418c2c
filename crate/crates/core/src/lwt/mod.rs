//! Local weather types: daily synoptic features, k-means clustering and
//! selection of the summer type used for training.

mod kmeans;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

pub use kmeans::{adjusted_rand_index, kmeans, KMeansParams, KMeansResult};

use crate::datapipe::MetSeries;
use crate::error::{bail, Result};

pub const DEFAULT_K: usize = 12;
/// June through September.
pub const SUMMER_MONTHS: [u32; 4] = [6, 7, 8, 9];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sector {
    N,
    E,
    S,
    W,
}

impl Sector {
    pub const ALL: [Sector; 4] = [Sector::N, Sector::E, Sector::S, Sector::W];

    fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self as usize] = 1.0;
        v
    }
}

/// Half-open sectors: [315, 45) N, [45, 135) E, [135, 225) S, [225, 315) W.
pub fn classify_wind_direction(deg: f64) -> Result<Sector> {
    if !deg.is_finite() {
        bail!(Parameter, "wind direction must be finite, got {deg}");
    }
    let mut d = deg.rem_euclid(360.0);
    if d >= 360.0 {
        d -= 360.0;
    }
    Ok(if !(45.0..315.0).contains(&d) {
        Sector::N
    } else if d < 135.0 {
        Sector::E
    } else if d < 225.0 {
        Sector::S
    } else {
        Sector::W
    })
}

/// Direction the wind blows from, in degrees clockwise from north.
pub fn wind_direction_deg(u: f64, v: f64) -> f64 {
    let d = (-u).atan2(-v).to_degrees().rem_euclid(360.0);
    if d >= 360.0 {
        d - 360.0
    } else {
        d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyFeatures {
    pub date: NaiveDate,
    /// Max minus min of hourly 2 m temperature (°C).
    pub amplitude: f64,
    /// Daily precipitation total (mm).
    pub precip_mm: f64,
    /// Mean specific humidity (g/kg).
    pub humidity: f64,
    /// Speed of the daily-mean wind vector (m/s).
    pub wind_speed: f64,
    pub wind_direction_deg: f64,
    pub sector: Sector,
}

impl DailyFeatures {
    pub fn numeric(&self) -> [f64; 4] {
        [self.amplitude, self.precip_mm, self.humidity, self.wind_speed]
    }
}

pub fn daily_metrics(met: &MetSeries, date: NaiveDate) -> Result<DailyFeatures> {
    let rows = met.day_rows(date);
    if rows.len() != 24 {
        bail!(Data, "{date} has {} hourly rows, need 24", rows.len());
    }
    let n = rows.len() as f64;
    let tmax = rows.iter().map(|r| r.t2m).fold(f64::NEG_INFINITY, f64::max);
    let tmin = rows.iter().map(|r| r.t2m).fold(f64::INFINITY, f64::min);
    let u = rows.iter().map(|r| r.u10).sum::<f64>() / n;
    let v = rows.iter().map(|r| r.v10).sum::<f64>() / n;
    let dir = wind_direction_deg(u, v);
    Ok(DailyFeatures {
        date,
        amplitude: tmax - tmin,
        precip_mm: rows.iter().map(|r| r.precip).sum(),
        humidity: rows.iter().map(|r| r.q).sum::<f64>() / n,
        wind_speed: u.hypot(v),
        wind_direction_deg: dir,
        sector: classify_wind_direction(dir)?,
    })
}

/// Features for every calendar day in the series.
pub fn daily_features(met: &MetSeries) -> Result<Vec<DailyFeatures>> {
    met.dates().into_iter().map(|d| daily_metrics(met, d)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Centroids {
    /// Z-scored numeric features followed by the sector one-hot.
    pub standardized: Vec<Vec<f64>>,
    /// Same centroids in physical units; sector columns are member fractions.
    pub raw: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayAssignment {
    pub date: NaiveDate,
    pub cluster: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LwtAssignment {
    pub k: usize,
    pub feature_names: Vec<String>,
    pub centroids: Centroids,
    pub assignments: Vec<DayAssignment>,
    pub feature_mean: [f64; 4],
    pub feature_std: [f64; 4],
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
}

impl LwtAssignment {
    pub fn labels(&self) -> Vec<usize> {
        self.assignments.iter().map(|a| a.cluster).collect()
    }

    pub fn cluster_of(&self, date: NaiveDate) -> Option<usize> {
        self.assignments
            .binary_search_by_key(&date, |a| a.date)
            .ok()
            .map(|i| self.assignments[i].cluster)
    }
}

/// Z-scores the numeric features (population std; constant columns map to 0)
/// and appends the sector one-hot.
fn standardize(features: &[DailyFeatures]) -> ([f64; 4], [f64; 4], Vec<Vec<f64>>) {
    let n = features.len() as f64;
    let mut mean = [0.0; 4];
    let mut std = [0.0; 4];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f.numeric()) {
            *m += v / n;
        }
    }
    for f in features {
        for ((s, v), m) in std.iter_mut().zip(f.numeric()).zip(mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut std {
        *s = s.sqrt();
    }
    let points = features
        .iter()
        .map(|f| {
            let mut p: Vec<f64> = f
                .numeric()
                .iter()
                .zip(mean.iter().zip(&std))
                .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
                .collect();
            p.extend(f.sector.one_hot());
            p
        })
        .collect();
    (mean, std, points)
}

pub fn cluster_lwt(features: &[DailyFeatures], params: &KMeansParams) -> Result<LwtAssignment> {
    if params.k < 1 || params.k > features.len() {
        bail!(Parameter, "k = {} must be in 1..={}", params.k, features.len());
    }
    let mut features = features.to_vec();
    features.sort_by_key(|f| f.date);
    if features.windows(2).any(|w| w[0].date == w[1].date) {
        bail!(Data, "duplicate dates in daily features");
    }
    let (mean, std, points) = standardize(&features);
    let result = kmeans(&points, params)?;

    let mut raw = vec![vec![0.0; 8]; params.k];
    let mut counts = vec![0usize; params.k];
    for (f, &l) in features.iter().zip(&result.labels) {
        counts[l] += 1;
        for (acc, v) in raw[l].iter_mut().zip(f.numeric().into_iter().chain(f.sector.one_hot())) {
            *acc += v;
        }
    }
    for (row, &c) in raw.iter_mut().zip(&counts) {
        if c > 0 {
            row.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    Ok(LwtAssignment {
        k: params.k,
        feature_names: ["amplitude", "precip_mm", "humidity", "wind_speed", "sector_n", "sector_e", "sector_s", "sector_w"]
            .map(String::from)
            .to_vec(),
        centroids: Centroids {
            standardized: result.centroids,
            raw,
        },
        assignments: features
            .iter()
            .zip(&result.labels)
            .map(|(f, &cluster)| DayAssignment { date: f.date, cluster })
            .collect(),
        feature_mean: mean,
        feature_std: std,
        wcss_history: result.wcss_history,
        iterations: result.iterations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterScore {
    pub cluster: usize,
    pub members: usize,
    pub summer_members: usize,
    /// Fraction of the cluster's days falling in summer months.
    pub summer_share: f64,
    /// Mean daily precipitation of the cluster (mm).
    pub mean_precip_mm: f64,
    /// `summer_share / (1 + mean_precip_mm)`.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionCriteria {
    /// `"score"` or `"override"`.
    pub mode: String,
    pub summer_months: Vec<u32>,
    pub period: Option<(NaiveDate, NaiveDate)>,
    pub scores: Vec<ClusterScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetLwtSelection {
    pub cluster_id: usize,
    pub days: Vec<NaiveDate>,
    pub criteria: SelectionCriteria,
}

fn is_summer(d: NaiveDate) -> bool {
    SUMMER_MONTHS.contains(&d.month())
}

/// Picks the cluster maximizing `summer_share / (1 + mean precipitation)`
/// (or `override_cluster`), then keeps its summer days inside `period`.
pub fn select_target_lwt(
    assignment: &LwtAssignment,
    features: &[DailyFeatures],
    period: Option<(NaiveDate, NaiveDate)>,
    override_cluster: Option<usize>,
) -> Result<TargetLwtSelection> {
    let precip: std::collections::HashMap<NaiveDate, f64> =
        features.iter().map(|f| (f.date, f.precip_mm)).collect();
    let mut scores: Vec<ClusterScore> = (0..assignment.k)
        .map(|cluster| ClusterScore {
            cluster,
            members: 0,
            summer_members: 0,
            summer_share: 0.0,
            mean_precip_mm: 0.0,
            score: 0.0,
        })
        .collect();
    for a in &assignment.assignments {
        let Some(p) = precip.get(&a.date) else {
            bail!(Data, "no daily features for assigned day {}", a.date);
        };
        let s = &mut scores[a.cluster];
        s.members += 1;
        s.mean_precip_mm += p;
        if is_summer(a.date) {
            s.summer_members += 1;
        }
    }
    for s in &mut scores {
        if s.members > 0 {
            s.mean_precip_mm /= s.members as f64;
            s.summer_share = s.summer_members as f64 / s.members as f64;
            s.score = s.summer_share / (1.0 + s.mean_precip_mm);
        }
    }
    let (mode, cluster_id) = match override_cluster {
        Some(id) if id >= assignment.k => bail!(Parameter, "override cluster {id} outside 0..{}", assignment.k),
        Some(id) => ("override", id),
        None => {
            if scores.iter().all(|s| s.summer_members == 0) {
                bail!(Selection, "no cluster contains a summer day");
            }
            let best = scores
                .iter()
                .max_by(|a, b| {
                    a.score
                        .total_cmp(&b.score)
                        .then(a.summer_members.cmp(&b.summer_members))
                        .then(b.cluster.cmp(&a.cluster))
                })
                .expect("k >= 1");
            ("score", best.cluster)
        }
    };
    let in_period = |d: NaiveDate| period.is_none_or(|(from, to)| from <= d && d <= to);
    let days = assignment
        .assignments
        .iter()
        .filter(|a| a.cluster == cluster_id && is_summer(a.date) && in_period(a.date))
        .map(|a| a.date)
        .collect();
    Ok(TargetLwtSelection {
        cluster_id,
        days,
        criteria: SelectionCriteria {
            mode: mode.into(),
            summer_months: SUMMER_MONTHS.to_vec(),
            period,
            scores,
        },
    })
}

/// Contents of `lwt.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LwtReport {
    pub k: usize,
    pub feature_names: Vec<String>,
    pub centroids: Centroids,
    pub assignments: Vec<DayAssignment>,
    pub selection: TargetLwtSelection,
}

impl LwtReport {
    pub fn new(assignment: LwtAssignment, selection: TargetLwtSelection) -> Self {
        Self {
            k: assignment.k,
            feature_names: assignment.feature_names,
            centroids: assignment.centroids,
            assignments: assignment.assignments,
            selection,
        }
    }
}
