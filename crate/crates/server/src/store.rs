//! In-memory story sessions with optional JSON snapshots on disk.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use plugblend_core::{LinePlan, PipelineParams, SketchSet, Story};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub revision: u64,
    pub sketch: SketchSet,
    pub plan: LinePlan,
    #[serde(default)]
    pub story: Option<Story>,
    #[serde(default)]
    pub params: PipelineParams,
}

/// One session: the authoritative state behind a fair lock, plus a copy
/// published after every mutation so reads never wait on a generation.
pub struct Slot {
    state: Arc<Mutex<Session>>,
    published: RwLock<Session>,
    generating: AtomicBool,
}

impl Slot {
    fn new(session: Session) -> Self {
        Self {
            published: RwLock::new(session.clone()),
            state: Arc::new(Mutex::new(session)),
            generating: AtomicBool::new(false),
        }
    }

    pub fn state(&self) -> Arc<Mutex<Session>> {
        self.state.clone()
    }

    pub fn snapshot(&self) -> Session {
        self.published
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .clone()
    }

    pub fn is_generating(&self) -> bool {
        self.generating.load(Ordering::SeqCst)
    }

    pub fn set_generating(&self, on: bool) {
        self.generating.store(on, Ordering::SeqCst);
    }

    fn publish(&self, session: &Session) {
        *self.published.write().unwrap_or_else(|p| p.into_inner()) = session.clone();
    }
}

pub struct SessionStore {
    slots: RwLock<HashMap<String, Arc<Slot>>>,
    persist: Option<PathBuf>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self {
            slots: RwLock::new(HashMap::new()),
            persist: None,
        }
    }

    /// Loads every `*.json` snapshot in `dir`, creating the directory if needed.
    pub fn persistent(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut slots = HashMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            match std::fs::read_to_string(&path)
                .map_err(|e| e.to_string())
                .and_then(|t| serde_json::from_str::<Session>(&t).map_err(|e| e.to_string()))
            {
                Ok(s) => {
                    slots.insert(s.id.clone(), Arc::new(Slot::new(s)));
                }
                Err(e) => log::warn!("skipping snapshot {}: {e}", path.display()),
            }
        }
        log::info!("restored {} sessions from {}", slots.len(), dir.display());
        Ok(Self {
            slots: RwLock::new(slots),
            persist: Some(dir),
        })
    }

    pub fn get(&self, id: &str) -> Option<Arc<Slot>> {
        self.slots
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
    }

    pub fn insert(&self, session: Session) -> Arc<Slot> {
        self.write_snapshot(&session);
        let slot = Arc::new(Slot::new(session.clone()));
        self.slots
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(session.id, slot.clone());
        slot
    }

    pub fn len(&self) -> usize {
        self.slots.read().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bumps the revision, publishes the new state and snapshots it.
    pub fn commit(&self, slot: &Slot, session: &mut Session) {
        session.revision += 1;
        slot.publish(session);
        self.write_snapshot(session);
    }

    fn write_snapshot(&self, session: &Session) {
        let Some(dir) = &self.persist else { return };
        if let Err(e) = write_atomic(dir, session) {
            log::warn!("could not persist session {}: {e}", session.id);
        }
    }
}

fn write_atomic(dir: &Path, session: &Session) -> std::io::Result<()> {
    let body = serde_json::to_vec_pretty(session).map_err(std::io::Error::other)?;
    let tmp = dir.join(format!("{}.json.tmp", session.id));
    std::fs::write(&tmp, body)?;
    std::fs::rename(tmp, dir.join(format!("{}.json", session.id)))
}
