//! Atomic file writes and the registry of in-flight temporary files that an
//! interrupt handler removes before exiting.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::error::{ForgeError, Result};

static IN_FLIGHT: Mutex<BTreeSet<PathBuf>> = Mutex::new(BTreeSet::new());
static COUNTER: AtomicU64 = AtomicU64::new(0);

fn temp_path(dest: &Path) -> PathBuf {
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let name = dest.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    dest.with_file_name(format!(".{}.{}.{}.tmp", name, std::process::id(), n))
}

/// Removes every temporary file still being written. Returns how many.
pub fn remove_in_flight() -> usize {
    let mut set = IN_FLIGHT.lock().unwrap_or_else(|e| e.into_inner());
    let n = set.len();
    for p in set.iter() {
        let _ = fs::remove_file(p);
    }
    set.clear();
    n
}

pub fn create_dir_all(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ForgeError::io(dir, e))
}

/// Writes through `fill` into a temporary sibling of `dest`, then renames it
/// into place. On error the temporary file is removed.
pub fn write_atomic<F>(dest: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    if let Some(parent) = dest.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir_all(parent)?;
    }
    let tmp = temp_path(dest);
    IN_FLIGHT.lock().unwrap_or_else(|e| e.into_inner()).insert(tmp.clone());
    let result = (|| {
        let file = File::create(&tmp).map_err(|e| ForgeError::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        fill(&mut w)?;
        let file = w.into_inner().map_err(|e| ForgeError::io(&tmp, e.into_error()))?;
        file.sync_all().map_err(|e| ForgeError::io(&tmp, e))?;
        fs::rename(&tmp, dest).map_err(|e| ForgeError::io(dest, e))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    IN_FLIGHT.lock().unwrap_or_else(|e| e.into_inner()).remove(&tmp);
    result
}

pub fn write_bytes(dest: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(dest, |w| w.write_all(bytes).map_err(|e| ForgeError::io(dest, e)))
}

pub fn write_json<T: Serialize + ?Sized>(dest: &Path, value: &T) -> Result<()> {
    write_atomic(dest, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| ForgeError::Internal(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| ForgeError::io(dest, e))
    })
}

/// One compact JSON document per line.
pub fn write_jsonl<T: Serialize>(dest: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    write_atomic(dest, |w| {
        for item in items {
            serde_json::to_writer(&mut *w, &item).map_err(|e| ForgeError::Internal(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| ForgeError::io(dest, e))?;
        }
        Ok(())
    })
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| ForgeError::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| ForgeError::validation(format!("{}: {}", path.display(), e)))
}

/// Parses a JSONL file, naming the 1-based line of the first bad record.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| ForgeError::validation(format!("{}: line {}: {}", path.display(), i + 1, e)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_cleans_up() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.json");
        write_json(&p, &[1, 2, 3]).unwrap();
        write_bytes(&p, b"new").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"new");
        let err = write_atomic(&p, |_| Err(ForgeError::validation("nope")));
        assert!(err.is_err());
        assert_eq!(fs::read(&p).unwrap(), b"new");
        let names: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
        assert_eq!(remove_in_flight(), 0);
    }

    #[test]
    fn jsonl_errors_name_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        fs::write(&p, "1\n2\nthree\n").unwrap();
        let err = read_jsonl::<u32>(&p).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{}", err);
    }
}
