use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::os::unix::net::UnixListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde_json::{json, Map};
use sha2::{Digest, Sha256};

use super::{Aggregator, IngestOutcome, LocalEvent};

/// Feeds every line of a JSON-lines file. Returns per-outcome counts
/// (accepted, duplicate, filtered); malformed lines land in the stats.
pub fn replay_file(agg: &Aggregator, path: &Path) -> io::Result<(u64, u64, u64)> {
    let f = fs::File::open(path)?;
    let mut counts = (0, 0, 0);
    for line in BufReader::new(f).lines() {
        match agg.ingest_line(&line?) {
            Some(IngestOutcome::Accepted) => counts.0 += 1,
            Some(IngestOutcome::Duplicate) => counts.1 += 1,
            Some(IngestOutcome::Filtered) => counts.2 += 1,
            None => {}
        }
    }
    Ok(counts)
}

fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct FileState {
    mtime_ns: u128,
    len: u64,
}

/// Polling directory monitor. Files present at start form the baseline and
/// are not reported. Each change becomes a `created`, `modified` or
/// `deleted` event whose id is derived from the path and file state, so a
/// change seen twice yields the same id.
pub struct DirWatcher {
    dir: PathBuf,
    known: HashMap<PathBuf, FileState>,
    duplicate_factor: u32,
}

impl DirWatcher {
    pub fn new(dir: impl Into<PathBuf>, duplicate_factor: u32) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut w = Self {
            dir,
            known: HashMap::new(),
            duplicate_factor: duplicate_factor.max(1),
        };
        w.known = w.snapshot()?;
        Ok(w)
    }

    fn snapshot(&self) -> io::Result<HashMap<PathBuf, FileState>> {
        let mut out = HashMap::new();
        for ent in fs::read_dir(&self.dir)? {
            let ent = ent?;
            let Ok(meta) = ent.metadata() else { continue };
            if !meta.is_file() {
                continue;
            }
            let mtime_ns = meta
                .modified()
                .ok()
                .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
                .map_or(0, |d| d.as_nanos());
            out.insert(
                ent.path(),
                FileState {
                    mtime_ns,
                    len: meta.len(),
                },
            );
        }
        Ok(out)
    }

    fn event(kind: &str, path: &Path, st: FileState) -> LocalEvent {
        let mut h = Sha256::new();
        h.update(kind.as_bytes());
        h.update([0]);
        h.update(path.as_os_str().as_encoded_bytes());
        h.update([0]);
        h.update(st.mtime_ns.to_le_bytes());
        h.update(st.len.to_le_bytes());
        let id = hex::encode(&h.finalize()[..16]);
        let mut attrs = Map::new();
        attrs.insert("size".into(), json!(st.len));
        if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            attrs.insert("name".into(), json!(name));
        }
        LocalEvent {
            event_id: id,
            event_type: kind.into(),
            subject: path.to_string_lossy().into_owned(),
            attrs,
            observed_ts: now_ms(),
        }
    }

    /// Compares the directory with the last snapshot. Events come out in a
    /// stable order (by path), each repeated `duplicate_factor` times.
    pub fn poll(&mut self) -> io::Result<Vec<LocalEvent>> {
        let now = self.snapshot()?;
        let mut changes = Vec::new();
        for (p, st) in &now {
            match self.known.get(p) {
                None => changes.push(Self::event("created", p, *st)),
                Some(old) if old != st => changes.push(Self::event("modified", p, *st)),
                _ => {}
            }
        }
        for (p, st) in &self.known {
            if !now.contains_key(p) {
                changes.push(Self::event("deleted", p, *st));
            }
        }
        changes.sort_by(|a, b| {
            a.subject
                .cmp(&b.subject)
                .then(a.event_type.cmp(&b.event_type))
        });
        self.known = now;
        let mut out = Vec::with_capacity(changes.len() * self.duplicate_factor as usize);
        for ev in changes {
            for _ in 0..self.duplicate_factor {
                out.push(ev.clone());
            }
        }
        Ok(out)
    }

    /// Polls every `poll` until `stop` is set, ingesting all events.
    pub fn run(mut self, agg: &Aggregator, poll: Duration, stop: &AtomicBool) -> io::Result<()> {
        while !stop.load(Ordering::Acquire) {
            for ev in self.poll()? {
                agg.ingest(ev);
            }
            std::thread::sleep(poll);
        }
        Ok(())
    }
}

/// Unix-socket listener; each connection sends JSON lines.
pub struct SocketSource {
    path: PathBuf,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl SocketSource {
    pub fn start(path: impl Into<PathBuf>, agg: Arc<Aggregator>) -> io::Result<Self> {
        let path = path.into();
        let _ = fs::remove_file(&path);
        let listener = UnixListener::bind(&path)?;
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let handle = std::thread::Builder::new()
            .name("agg-socket".into())
            .spawn(move || {
                let mut conns: Vec<JoinHandle<()>> = Vec::new();
                while !flag.load(Ordering::Acquire) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let _ = stream.set_nonblocking(false);
                            let _ = stream.set_read_timeout(Some(Duration::from_millis(200)));
                            let (agg, flag) = (Arc::clone(&agg), Arc::clone(&flag));
                            conns.push(std::thread::spawn(move || {
                                let mut r = BufReader::new(stream);
                                let mut line = String::new();
                                loop {
                                    match r.read_line(&mut line) {
                                        Ok(0) => break,
                                        Ok(_) => {
                                            agg.ingest_line(&line);
                                            line.clear();
                                        }
                                        Err(e)
                                            if matches!(
                                                e.kind(),
                                                io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                                            ) =>
                                        {
                                            // partial line stays buffered in `line`
                                            if flag.load(Ordering::Acquire) {
                                                break;
                                            }
                                        }
                                        Err(_) => break,
                                    }
                                }
                            }));
                        }
                        Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                            std::thread::sleep(Duration::from_millis(20));
                        }
                        Err(e) => {
                            log::warn!("socket accept failed: {e}");
                            std::thread::sleep(Duration::from_millis(100));
                        }
                    }
                }
                for c in conns {
                    let _ = c.join();
                }
            })?;
        Ok(Self {
            path,
            stop,
            handle: Some(handle),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
        let _ = fs::remove_file(&self.path);
    }
}

impl Drop for SocketSource {
    fn drop(&mut self) {
        self.stop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn watcher_reports_changes_with_stable_ids() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("old"), "x").unwrap();
        let mut w = DirWatcher::new(dir.path(), 3).unwrap();
        assert!(w.poll().unwrap().is_empty());
        fs::write(dir.path().join("a"), "hello").unwrap();
        let evs = w.poll().unwrap();
        assert_eq!(evs.len(), 3);
        assert!(evs
            .iter()
            .all(|e| e.event_type == "created" && e.event_id == evs[0].event_id));
        assert!(w.poll().unwrap().is_empty());
        fs::remove_file(dir.path().join("old")).unwrap();
        let evs = w.poll().unwrap();
        assert_eq!(evs[0].event_type, "deleted");
        assert!(evs[0].subject.ends_with("old"));
    }
}
