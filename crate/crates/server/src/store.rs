//! One JSON file per session.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use hsrf_core::rf::RfSession;

use crate::ApiError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    /// Seconds since the Unix epoch.
    pub created: u64,
    /// Corpus directory the session was started on.
    pub corpus: PathBuf,
    pub session: RfSession,
}

impl SessionRecord {
    pub fn new(id: String, corpus: PathBuf, session: RfSession) -> Self {
        let created = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self { id, created, corpus, session }
    }
}

pub(crate) fn session_id(seq: u64) -> String {
    format!("s{seq:06}")
}

pub(crate) fn sequence(id: &str) -> Option<u64> {
    id.strip_prefix('s')?.parse().ok()
}

#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn open(dir: &Path) -> Result<Self, ApiError> {
        fs::create_dir_all(dir).map_err(|e| ApiError::Internal(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    /// Writes through a temporary file so a crash never leaves half a
    /// record behind.
    pub fn save(&self, record: &SessionRecord) -> Result<(), ApiError> {
        let path = self.path(&record.id);
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string(record).map_err(|e| ApiError::Internal(e.to_string()))?;
        fs::write(&tmp, text)
            .and_then(|()| fs::rename(&tmp, &path))
            .map_err(|e| ApiError::Internal(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load_all(&self) -> Result<Vec<SessionRecord>, ApiError> {
        let read_err = |e: std::io::Error| ApiError::Internal(format!("cannot read {}: {e}", self.dir.display()));
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(read_err)? {
            let path = entry.map_err(read_err)?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(read_err)?;
            let record: SessionRecord = serde_json::from_str(&text)
                .map_err(|e| ApiError::Internal(format!("corrupt session record {}: {e}", path.display())))?;
            out.push(record);
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hsrf_core::rf::SessionConfig;
    use hsrf_core::{DissimKind, DissimTable};

    fn session() -> RfSession {
        let v = vec![0.0, 0.3, 0.8, 0.3, 0.0, 0.4, 0.8, 0.4, 0.0];
        let table = DissimTable::from_values(DissimKind::Spectral, 3, v).unwrap();
        RfSession::start(&table, 2, SessionConfig { scope: 1, ..SessionConfig::default() }, None).unwrap()
    }

    #[test]
    fn ids_round_trip() {
        assert_eq!(session_id(42), "s000042");
        assert_eq!(sequence(&session_id(42)), Some(42));
        assert_eq!(sequence("x12"), None);
        assert_eq!(sequence("sabc"), None);
    }

    #[test]
    fn save_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(&dir.path().join("s")).unwrap();
        let b = SessionRecord::new(session_id(2), "c".into(), session());
        let a = SessionRecord::new(session_id(1), "c".into(), session());
        store.save(&b).unwrap();
        store.save(&a).unwrap();
        fs::write(dir.path().join("s").join("notes.txt"), "ignored").unwrap();
        assert_eq!(store.load_all().unwrap(), vec![a.clone(), b]);
        let mut later = a.clone();
        later.session.stop();
        store.save(&later).unwrap();
        assert!(store.load_all().unwrap()[0].session.is_stopped());
        fs::write(dir.path().join("s").join("s000003.json"), "{").unwrap();
        assert!(matches!(store.load_all(), Err(ApiError::Internal(_))));
    }
}
