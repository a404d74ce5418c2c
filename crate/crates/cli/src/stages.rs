//! One function per subcommand. Each reads its inputs from files, writes
//! its outputs under the given root and depends on nothing else but its
//! configuration and seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use uhinet::datapipe::synth::DayWeather;
use uhinet::datapipe::*;
use uhinet::eval::{
    format_report_table, load_stations, patch_metrics, read_station_series, station_report, write_report_csv,
    StationSpec,
};
use uhinet::hotspot::{trel_daily_cycle, write_trel_maps};
use uhinet::lwt::{cluster_lwt, daily_features, select_target_lwt, KMeansParams, LwtReport};
use uhinet::unet::{build_unet, save_checkpoint, DomainPredictor, Trainer, UNetConfig};
use uhinet::{Error, Result};
use uhinet_service::{AppState, Baseline, BaselineSource, Layers, LoadedModel, ScenarioStore};

use crate::plots::emit_plots;

/// RNG stream for the station measurement noise of the synthetic world.
const STATION_STREAM: u64 = 9;
const STATION_COUNT: usize = 7;
const STATION_NOISE_SIGMA: f64 = 0.3;
/// Hours rendered as aggregate and hotspot plots.
pub const PLOT_HOURS: [usize; 2] = [5, 14];

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Config from an optional JSON file, defaults otherwise; unknown keys are rejected.
fn load_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let bytes = std::fs::read(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn log_resolved<T: Serialize>(stage: &str, cfg: &T) -> Result<()> {
    log::info!("{stage} resolved config: {}", serde_json::to_string(cfg)?);
    Ok(())
}

/// Paths inside a synth output directory.
pub struct DataDir(pub PathBuf);

impl DataDir {
    pub fn spatial(&self) -> PathBuf {
        self.0.join("spatial")
    }
    pub fn met(&self) -> PathBuf {
        self.0.join("met.csv")
    }
    pub fn oracle(&self) -> PathBuf {
        self.0.join("oracle")
    }
    pub fn weather(&self) -> PathBuf {
        self.0.join("weather.json")
    }
    pub fn stations(&self) -> PathBuf {
        self.0.join("stations.json")
    }
}

#[derive(Serialize, Deserialize)]
struct OracleIndex {
    days: Vec<NaiveDate>,
}

/// Station pixels drawn on land, in a fixed order.
fn pick_stations(world: &SynthWorld, rng: &mut ChaCha8Rng) -> Vec<StationSpec> {
    let (w, h) = (world.layers.width(), world.layers.height());
    let mut out: Vec<StationSpec> = Vec::new();
    let mut attempts = 0;
    while out.len() < STATION_COUNT && attempts < 100_000 {
        attempts += 1;
        let (x, y) = (rng.random_range(0..w), rng.random_range(0..h));
        let water = world.layers.landcover.get(x, y) == Some(LandCover::Water.code());
        if water || out.iter().any(|s| s.x == x && s.y == y) {
            continue;
        }
        out.push(StationSpec {
            name: format!("S{}", out.len() + 1),
            x,
            y,
            series_file: Some(format!("stations/S{}.csv", out.len() + 1)),
        });
    }
    out
}

pub fn synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: SynthWorldConfig = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    log_resolved("synth", &cfg)?;
    let world = SynthWorld::generate(cfg.clone())?;
    let data = DataDir(out.to_path_buf());
    write_json(&out.join("synth.json"), &cfg)?;
    world.layers.write_dir(&data.spatial())?;
    world.met.write_csv(data.met())?;
    write_json(&data.weather(), &world.days)?;

    let days: Vec<NaiveDate> = world.target_type_days().into_iter().take(cfg.oracle_max_days).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STATION_STREAM);
    let stations = pick_stations(&world, &mut rng);
    let noise = Normal::new(0.0, STATION_NOISE_SIGMA).expect("valid sigma");
    let mut series: Vec<String> = vec!["timestamp,t_a\n".to_string(); stations.len()];
    for &date in &days {
        for hour in 0..24 {
            let grid = world.oracle_grid(date, hour)?;
            let path = GridDirSource::path(&data.oracle(), date, hour);
            std::fs::create_dir_all(path.parent().expect("dated directory"))?;
            grid.write_grd1(&path)?;
            let stamp = date.and_hms_opt(hour, 0, 0).expect("valid hour").format(TIMESTAMP_FORMAT);
            for (s, text) in stations.iter().zip(series.iter_mut()) {
                let v = grid.get(s.x, s.y).expect("oracle grids are complete") as f64 + noise.sample(&mut rng);
                text.push_str(&format!("{stamp},{v:.3}\n"));
            }
        }
    }
    write_json(&data.oracle().join("index.json"), &OracleIndex { days: days.clone() })?;
    std::fs::create_dir_all(out.join("stations"))?;
    for (s, text) in stations.iter().zip(&series) {
        std::fs::write(out.join(s.series_file.as_deref().expect("set above")), text)?;
    }
    write_json(&data.stations(), &stations)?;
    log::info!(
        "synth: {}x{} domain, {} days of met, {} oracle days, {} stations",
        cfg.width,
        cfg.height,
        world.days.len(),
        days.len(),
        stations.len()
    );
    Ok(())
}

/// Ground-truth weather types written by `synth`.
pub fn read_weather(data: &Path) -> Result<Vec<DayWeather>> {
    read_json(&DataDir(data.to_path_buf()).weather())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LwtConfig {
    pub k: usize,
    pub seed: u64,
    pub n_init: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Inclusive date range for the selected days.
    pub period: Option<(NaiveDate, NaiveDate)>,
    pub override_cluster: Option<usize>,
}

impl Default for LwtConfig {
    fn default() -> Self {
        let p = KMeansParams::new(uhinet::lwt::DEFAULT_K, 0);
        Self {
            k: p.k,
            seed: p.seed,
            n_init: p.n_init,
            max_iter: p.max_iter,
            tol: p.tol,
            period: None,
            override_cluster: None,
        }
    }
}

pub fn lwt(data: &Path, config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: LwtConfig = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    log_resolved("lwt", &cfg)?;
    let met = MetSeries::read_csv(DataDir(data.to_path_buf()).met())?;
    let features = daily_features(&met)?;
    let params = KMeansParams {
        k: cfg.k,
        max_iter: cfg.max_iter,
        tol: cfg.tol,
        n_init: cfg.n_init,
        seed: cfg.seed,
    };
    let assignment = cluster_lwt(&features, &params)?;
    let selection = select_target_lwt(&assignment, &features, cfg.period, cfg.override_cluster)?;
    log::info!(
        "lwt: {} days in {} clusters; cluster {} selected with {} summer days",
        features.len(),
        cfg.k,
        selection.cluster_id,
        selection.days.len()
    );
    write_json(out, &LwtReport::new(assignment, selection))
}

/// A day list: either an `lwt.json` report or a bare array of dates.
#[derive(Deserialize)]
#[serde(untagged)]
enum DaysFile {
    Report(Box<LwtReport>),
    Dates(Vec<NaiveDate>),
}

pub fn read_days(path: &Path) -> Result<Vec<NaiveDate>> {
    Ok(match read_json::<DaysFile>(path)? {
        DaysFile::Report(r) => r.selection.days,
        DaysFile::Dates(d) => d,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: UNetConfig,
    pub split: SplitSpec,
    /// Training uses the first `max_days` selected days with oracle grids.
    pub max_days: usize,
    /// Hour of the met window stored in `baseline.json`.
    pub baseline_hour: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: UNetConfig::default(),
            split: SplitSpec::default(),
            max_days: 16,
            baseline_hour: 14,
        }
    }
}

impl TrainConfig {
    fn apply_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        if let SplitSpec::Random { seed: s, .. } = &mut self.split {
            *s = seed;
        }
    }
}

/// Inputs shared by the train stage and library callers.
pub struct TrainingData {
    pub layers: SpatialLayers,
    pub met: MetSeries,
    pub targets: GridDirSource,
    pub days: Vec<NaiveDate>,
    pub patches: Vec<PatchIndex>,
}

impl TrainingData {
    pub fn load(data: &Path, days: &[NaiveDate], cfg: &TrainConfig) -> Result<Self> {
        let dir = DataDir(data.to_path_buf());
        let layers = SpatialLayers::read_dir(&dir.spatial())?;
        let met = MetSeries::read_csv(dir.met())?;
        let targets = GridDirSource { root: dir.oracle() };
        let mut usable = Vec::new();
        for &d in days {
            if usable.len() == cfg.max_days {
                break;
            }
            if GridDirSource::path(&targets.root, d, 0).exists() {
                usable.push(d);
            } else {
                log::info!("train: skipping {d}, no oracle grids");
            }
        }
        if usable.is_empty() {
            return Err(Error::Data("none of the selected days has oracle grids".into()));
        }
        let size = cfg.model.input_size;
        let patches = split_patches(&make_patches(layers.width(), layers.height(), size)?, &cfg.split)?;
        Ok(Self {
            layers,
            met,
            targets,
            days: usable,
            patches,
        })
    }

    pub fn split(&self, split: Split) -> Vec<PatchIndex> {
        patches_in(&self.patches, split)
    }
}

#[derive(Serialize)]
struct SplitFile<'a> {
    patch_size: usize,
    patches: &'a [PatchIndex],
}

#[derive(Deserialize)]
struct SplitFileOwned {
    #[allow(dead_code)]
    patch_size: usize,
    patches: Vec<PatchIndex>,
}

pub fn read_split(path: &Path) -> Result<Vec<PatchIndex>> {
    Ok(read_json::<SplitFileOwned>(path)?.patches)
}

pub fn train(data: &Path, days: &Path, config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: TrainConfig = load_config(config)?;
    if let Some(s) = seed {
        cfg.apply_seed(s);
    }
    cfg.model.validate()?;
    log_resolved("train", &cfg)?;
    let td = TrainingData::load(data, &read_days(days)?, &cfg)?;
    let (train_p, val_p, test_p) = (td.split(Split::Train), td.split(Split::Val), td.split(Split::Test));
    let manifest = fit_training_manifest(&td.layers, &td.met, &td.targets, &train_p, &td.days)?;
    let assemble = |p: &[PatchIndex]| assemble_examples(p, &td.layers, &td.met, &td.targets, &td.days, &manifest, None);
    let train_set = assemble(&train_p)?;
    let val_set = if val_p.is_empty() { Vec::new() } else { assemble(&val_p)? };
    log::info!(
        "train: {} days, {} train / {} val / {} test patches, {} training examples",
        td.days.len(),
        train_p.len(),
        val_p.len(),
        test_p.len(),
        train_set.len()
    );
    std::fs::create_dir_all(out)?;
    let model = build_unet(cfg.model.clone(), &mut ChaCha8Rng::seed_from_u64(cfg.model.seed))?;
    let mut trainer = Trainer::new(model);
    let mut last_good = trainer.checkpoint(Some(manifest.clone()));
    while trainer.epoch < cfg.model.epochs {
        if let Err(e) = trainer.run_epoch(&train_set, &val_set) {
            save_checkpoint(&last_good, out.join("model.last_good.ckpt"))?;
            write_json(&out.join("history.json"), &trainer.history)?;
            return Err(e);
        }
        last_good = trainer.checkpoint(Some(manifest.clone()));
    }
    save_checkpoint(&last_good, out.join("model.ckpt"))?;
    write_json(&out.join("history.json"), &trainer.history)?;
    write_json(&out.join("manifest.json"), &manifest)?;
    write_json(&out.join("days.json"), &td.days)?;
    write_json(&out.join("train_config.json"), &cfg)?;
    write_json(
        &out.join("split.json"),
        &SplitFile {
            patch_size: cfg.model.input_size,
            patches: &td.patches,
        },
    )?;
    let base_patch = test_p.first().or(train_p.first()).expect("training patches exist");
    let date = td.days[0];
    let met = td
        .met
        .window(date, cfg.baseline_hour, cfg.model.met_timesteps)?
        .iter()
        .map(|r| r.vector().to_vec())
        .collect();
    let baseline = Baseline {
        name: format!("patch {} on {date} at {:02}:00", base_patch.id, cfg.baseline_hour),
        layers: Layers::from_window(&td.layers, base_patch)?,
        met,
        source: BaselineSource {
            patch_id: base_patch.id,
            date,
            hour: cfg.baseline_hour,
        },
    };
    write_json(&out.join("baseline.json"), &baseline)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictIndex {
    pub checkpoint_id: String,
    pub days: Vec<NaiveDate>,
    pub width: usize,
    pub height: usize,
}

pub fn predict(ckpt: &Path, data: &Path, days: &Path, out: &Path, max_days: Option<usize>) -> Result<()> {
    let loaded = LoadedModel::load(ckpt)?;
    let dir = DataDir(data.to_path_buf());
    let layers = SpatialLayers::read_dir(&dir.spatial())?;
    let met = MetSeries::read_csv(dir.met())?;
    let mut days = read_days(days)?;
    if let Some(n) = max_days {
        days.truncate(n);
    }
    if days.is_empty() {
        return Err(Error::Data("no days to predict".into()));
    }
    let cfg = loaded.model.config();
    let predictor = DomainPredictor::new(&layers, cfg.input_size, &loaded.manifest)?;
    for &date in &days {
        for hour in 0..24 {
            let window = met_window(&met, date, hour, cfg.met_timesteps, &loaded.manifest)?;
            let grid = predictor.predict(&loaded.model, &window, &loaded.manifest)?;
            let path = GridDirSource::path(out, date, hour);
            std::fs::create_dir_all(path.parent().expect("dated directory"))?;
            grid.write_grd1(&path)?;
        }
        log::debug!("predict: {date} done");
    }
    log::info!("predict: {} days x 24 h written to {}", days.len(), out.display());
    write_json(
        &out.join("index.json"),
        &PredictIndex {
            checkpoint_id: loaded.checkpoint_id.clone(),
            days,
            width: layers.width(),
            height: layers.height(),
        },
    )
}

/// `stack[day][hour]` read from a `YYYY-MM-DD/hHH.grd` tree.
pub fn read_stack(root: &Path, days: &[NaiveDate]) -> Result<Vec<Vec<RasterGrid>>> {
    let src = GridDirSource { root: root.to_path_buf() };
    days.iter()
        .map(|&d| (0..24).map(|h| src.target_grid(d, h)).collect())
        .collect()
}

pub fn read_pred_index(pred: &Path) -> Result<PredictIndex> {
    read_json(&pred.join("index.json"))
}

pub fn eval(pred: &Path, truth: &Path, stations: &Path, out: &Path, split: Option<&Path>) -> Result<()> {
    let index = read_pred_index(pred)?;
    let a = read_stack(pred, &index.days)?;
    let b = read_stack(truth, &index.days)?;
    let specs = load_stations(stations)?;
    let base = stations.parent().unwrap_or(Path::new("."));
    let mut real = BTreeMap::new();
    for s in &specs {
        if let Some(f) = &s.series_file {
            let file = std::fs::File::open(base.join(f))
                .map_err(|e| Error::Data(format!("cannot read station series {f}: {e}")))?;
            real.insert(s.name.clone(), read_station_series(file, &index.days)?);
        }
    }
    let rows = station_report(&specs, &a, Some(&b), &real)?;
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    write_report_csv(&rows, std::fs::File::create(out)?)?;
    std::fs::write(out.with_extension("md"), format_report_table(&rows))?;
    if let Some(split) = split {
        let test = patches_in(&read_split(split)?, Split::Test);
        let metrics = patch_metrics(&b, &a, &test)?;
        let mut text = String::from("patch_id,pearson,rmse,mae,mape,n\n");
        for m in &metrics {
            let r = &m.metrics;
            let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
            text.push_str(&format!("{},{},{},{},{},{}\n", m.patch_id, opt(r.pearson), r.rmse, r.mae, opt(r.mape), r.n));
        }
        std::fs::write(dir.join("patch_metrics.csv"), text)?;
    }
    let agg = uhinet::eval::hourly_aggregate(&a)?;
    let grids: Vec<(String, &RasterGrid)> = PLOT_HOURS.iter().map(|&h| (format!("aggregate_h{h:02}"), &agg[h])).collect();
    emit_plots(&grids, &dir.join("plots"))?;
    log::info!("eval: {} rows written to {}", rows.len(), out.display());
    Ok(())
}

pub fn hotspot(pred: &Path, out: &Path, epsilon: f64) -> Result<()> {
    let index = read_pred_index(pred)?;
    let stack = read_stack(pred, &index.days)?;
    let maps = trel_daily_cycle(&stack, epsilon)?;
    write_trel_maps(out, &maps, epsilon, index.days.len())?;
    let grids: Vec<(String, &RasterGrid)> = PLOT_HOURS.iter().map(|&h| (format!("trel_h{h:02}"), &maps[h].grid)).collect();
    emit_plots(&grids, &out.join("plots"))?;
    log::info!("hotspot: 24 maps over {} days written to {}", index.days.len(), out.display());
    Ok(())
}

pub fn serve(port: u16, ckpt: Option<&Path>, store: &Path, baseline: Option<&Path>) -> Result<()> {
    let model = ckpt.map(LoadedModel::load).transpose()?.map(Arc::new);
    if model.is_none() {
        log::warn!("serve: no checkpoint given; prediction routes answer 503");
    }
    let default_baseline = ckpt.and_then(|c| c.parent()).map(|d| d.join("baseline.json")).filter(|p| p.exists());
    let baseline = baseline
        .map(Path::to_path_buf)
        .or(default_baseline)
        .map(|p| Baseline::load(&p))
        .transpose()?
        .map(Arc::new);
    let state = AppState {
        model,
        baseline,
        store: Arc::new(ScenarioStore::open(store)?),
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(uhinet_service::serve(([0, 0, 0, 0], port).into(), state))?;
    Ok(())
}
