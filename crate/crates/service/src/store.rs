//! Session snapshots as one JSON file per session.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::session::DialogueSession;

#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(SessionStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> Result<PathBuf> {
        if !valid_id(id) {
            bail!("invalid session id `{id}`");
        }
        Ok(self.dir.join(format!("{id}.json")))
    }

    /// Writes through a temporary file so a crash never leaves a torn
    /// snapshot.
    pub fn save(&self, session: &DialogueSession) -> Result<()> {
        let path = self.path(&session.session_id)?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(session)?)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }

    pub fn load(&self, id: &str) -> Result<Option<DialogueSession>> {
        let path = self.path(id)?;
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path)?;
        let s = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(Some(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_cannot_escape_the_directory() {
        assert!(valid_id("a1-b_2"));
        assert!(!valid_id("../x"));
        assert!(!valid_id(""));
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        assert!(store.load("../../etc/passwd").is_err());
        assert!(store.load("absent").unwrap().is_none());
    }
}
