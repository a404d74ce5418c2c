use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::model::Layers;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: u64,
    pub name: String,
    pub layers: Layers,
    pub met: Vec<Vec<f64>>,
    /// RFC 3339 UTC with microseconds.
    pub created: String,
    pub modified: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub id: u64,
    pub name: String,
    pub created: String,
    pub modified: String,
}

/// Client-supplied scenario content.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioInput {
    pub name: String,
    pub layers: Layers,
    pub met: Vec<Vec<f64>>,
}

#[derive(Debug)]
pub enum StoreError {
    NotFound(u64),
    /// The caller's `modified` stamp is not the stored one.
    Conflict { current: String },
    Io(std::io::Error),
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e)
    }
}

impl std::fmt::Display for StoreError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StoreError::NotFound(id) => write!(f, "scenario {id} not found"),
            StoreError::Conflict { current } => write!(f, "scenario was modified at {current}"),
            StoreError::Io(e) => write!(f, "scenario store i/o: {e}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StoreMeta {
    next_id: u64,
}

struct WriterState {
    next_id: u64,
    last_stamp: DateTime<Utc>,
}

type Snapshot = Arc<BTreeMap<u64, Arc<Scenario>>>;

/// One JSON document per scenario under a directory. Writers are
/// serialized; readers take the current immutable snapshot.
pub struct ScenarioStore {
    dir: PathBuf,
    snapshot: RwLock<Snapshot>,
    writer: Mutex<WriterState>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(tmp, path)
}

fn stamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Micros, true)
}

impl ScenarioStore {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let invalid = |p: &Path, e: serde_json::Error| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", p.display()))
        };
        let mut map = BTreeMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            let is_scenario = path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("scenario-") && n.ends_with(".json"));
            if is_scenario {
                let s: Scenario = serde_json::from_slice(&std::fs::read(&path)?).map_err(|e| invalid(&path, e))?;
                map.insert(s.id, Arc::new(s));
            }
        }
        let meta_path = dir.join("store.json");
        let stored_next = if meta_path.exists() {
            let meta: StoreMeta =
                serde_json::from_slice(&std::fs::read(&meta_path)?).map_err(|e| invalid(&meta_path, e))?;
            meta.next_id
        } else {
            1
        };
        let next_id = stored_next.max(map.keys().next_back().map_or(1, |k| k + 1));
        Ok(Self {
            dir,
            snapshot: RwLock::new(Arc::new(map)),
            writer: Mutex::new(WriterState {
                next_id,
                last_stamp: DateTime::<Utc>::MIN_UTC,
            }),
        })
    }

    fn current(&self) -> Snapshot {
        Arc::clone(&self.snapshot.read().expect("store lock poisoned"))
    }

    pub fn list(&self) -> Vec<ScenarioSummary> {
        self.current()
            .values()
            .map(|s| ScenarioSummary {
                id: s.id,
                name: s.name.clone(),
                created: s.created.clone(),
                modified: s.modified.clone(),
            })
            .collect()
    }

    pub fn get(&self, id: u64) -> Option<Arc<Scenario>> {
        self.current().get(&id).cloned()
    }

    fn path(&self, id: u64) -> PathBuf {
        self.dir.join(format!("scenario-{id:08}.json"))
    }

    /// Strictly increasing microsecond timestamps.
    fn next_stamp(w: &mut WriterState) -> String {
        let now = Utc::now();
        let t = if now > w.last_stamp { now } else { w.last_stamp + Duration::microseconds(1) };
        w.last_stamp = t;
        stamp(t)
    }

    fn publish(&self, map: BTreeMap<u64, Arc<Scenario>>) {
        *self.snapshot.write().expect("store lock poisoned") = Arc::new(map);
    }

    pub fn create(&self, input: ScenarioInput) -> Result<Arc<Scenario>, StoreError> {
        let mut w = self.writer.lock().expect("store lock poisoned");
        let id = w.next_id;
        let now = Self::next_stamp(&mut w);
        let s = Arc::new(Scenario {
            id,
            name: input.name,
            layers: input.layers,
            met: input.met,
            created: now.clone(),
            modified: now,
        });
        write_atomic(&self.dir.join("store.json"), &serde_json::to_vec(&StoreMeta { next_id: id + 1 }).expect("serializable"))?;
        write_atomic(&self.path(id), &serde_json::to_vec_pretty(&*s).expect("serializable"))?;
        w.next_id = id + 1;
        let mut map = (*self.current()).clone();
        map.insert(id, Arc::clone(&s));
        self.publish(map);
        Ok(s)
    }

    /// Replaces a scenario if `expected_modified` is its current stamp.
    pub fn update(&self, id: u64, input: ScenarioInput, expected_modified: &str) -> Result<Arc<Scenario>, StoreError> {
        let mut w = self.writer.lock().expect("store lock poisoned");
        let Some(old) = self.get(id) else {
            return Err(StoreError::NotFound(id));
        };
        if old.modified != expected_modified {
            return Err(StoreError::Conflict {
                current: old.modified.clone(),
            });
        }
        let s = Arc::new(Scenario {
            id,
            name: input.name,
            layers: input.layers,
            met: input.met,
            created: old.created.clone(),
            modified: Self::next_stamp(&mut w),
        });
        write_atomic(&self.path(id), &serde_json::to_vec_pretty(&*s).expect("serializable"))?;
        let mut map = (*self.current()).clone();
        map.insert(id, Arc::clone(&s));
        self.publish(map);
        Ok(s)
    }

    pub fn delete(&self, id: u64) -> Result<(), StoreError> {
        let _w = self.writer.lock().expect("store lock poisoned");
        if self.get(id).is_none() {
            return Err(StoreError::NotFound(id));
        }
        std::fs::remove_file(self.path(id))?;
        let mut map = (*self.current()).clone();
        map.remove(&id);
        self.publish(map);
        Ok(())
    }
}
