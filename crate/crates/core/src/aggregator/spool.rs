use std::collections::VecDeque;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::broker::segment::{encode_frame, scan_frames};
use crate::broker::Record;

/// One spooled batch: a file of broker frames.
#[derive(Debug)]
struct Entry {
    seq: u64,
    path: PathBuf,
    bytes: u64,
    records: usize,
}

/// Disk-backed FIFO of batches, bounded by total bytes. When full, the
/// oldest batches are dropped.
#[derive(Debug)]
pub struct Spool {
    dir: PathBuf,
    max_bytes: u64,
    entries: VecDeque<Entry>,
    bytes: u64,
    next_seq: u64,
    pub dropped_batches: u64,
    pub dropped_records: u64,
}

impl Spool {
    /// Opens the spool, recovering batches left by a previous run. Torn or
    /// corrupt tails are cut at the last valid frame.
    pub fn open(dir: impl Into<PathBuf>, max_bytes: u64) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut found = Vec::new();
        for ent in fs::read_dir(&dir)? {
            let path = ent?.path();
            let Some(seq) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".spool"))
                .and_then(|n| n.parse::<u64>().ok())
            else {
                continue;
            };
            found.push((seq, path));
        }
        found.sort();
        let mut spool = Self {
            dir,
            max_bytes,
            entries: VecDeque::new(),
            bytes: 0,
            next_seq: found.last().map_or(0, |(s, _)| s + 1),
            dropped_batches: 0,
            dropped_records: 0,
        };
        for (seq, path) in found {
            let buf = fs::read(&path)?;
            let (recs, valid) = scan_frames(&buf);
            if recs.is_empty() {
                fs::remove_file(&path)?;
                continue;
            }
            if valid < buf.len() {
                log::warn!(
                    "spool {}: dropping {} corrupt tail bytes",
                    path.display(),
                    buf.len() - valid
                );
                fs::write(&path, &buf[..valid])?;
            }
            spool.bytes += valid as u64;
            spool.entries.push_back(Entry {
                seq,
                path,
                bytes: valid as u64,
                records: recs.len(),
            });
        }
        Ok(spool)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn batches(&self) -> usize {
        self.entries.len()
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn records(&self) -> usize {
        self.entries.iter().map(|e| e.records).sum()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Appends a batch of (key, value, timestamp) triples as a new file.
    pub fn push(&mut self, batch: &[(Vec<u8>, Vec<u8>, i64)]) -> io::Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for (i, (k, v, ts)) in batch.iter().enumerate() {
            encode_frame(i as u64, *ts, k, v, &mut buf);
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let path = self.dir.join(format!("{seq:020}.spool"));
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&buf)?;
            f.sync_data()?;
        }
        fs::rename(&tmp, &path)?;
        self.bytes += buf.len() as u64;
        self.entries.push_back(Entry {
            seq,
            path,
            bytes: buf.len() as u64,
            records: batch.len(),
        });
        while self.bytes > self.max_bytes && self.entries.len() > 1 {
            self.drop_oldest()?;
        }
        if self.bytes > self.max_bytes {
            // a single batch larger than the whole budget
            self.drop_oldest()?;
        }
        Ok(())
    }

    fn drop_oldest(&mut self) -> io::Result<()> {
        if let Some(e) = self.entries.pop_front() {
            fs::remove_file(&e.path)?;
            self.bytes -= e.bytes;
            self.dropped_batches += 1;
            self.dropped_records += e.records as u64;
            log::warn!(
                "spool full: dropped batch {} ({} records)",
                e.seq,
                e.records
            );
        }
        Ok(())
    }

    /// Reads the oldest batch without removing it.
    pub fn front(&self) -> io::Result<Option<Vec<Record>>> {
        let Some(e) = self.entries.front() else {
            return Ok(None);
        };
        let buf = fs::read(&e.path)?;
        Ok(Some(
            scan_frames(&buf).0.into_iter().map(|(r, _, _)| r).collect(),
        ))
    }

    pub fn pop_front(&mut self) -> io::Result<()> {
        if let Some(e) = self.entries.pop_front() {
            self.bytes -= e.bytes;
            fs::remove_file(&e.path)?;
        }
        Ok(())
    }
}
