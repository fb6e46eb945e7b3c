//! Segmented append-only partition log with a dense in-memory index.

use std::collections::VecDeque;
use std::fs::{self, File, OpenOptions};
use std::io;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use super::segment::{self, encode_frame, scan_frames};
use super::Record;

pub const DEFAULT_SEGMENT_BYTES: u64 = 64 * 1024 * 1024;
const START_CHECKPOINT: &str = "log-start";

#[derive(Debug, Clone, Copy)]
pub struct LogConfig {
    pub segment_bytes: u64,
    pub fsync: bool,
}

impl Default for LogConfig {
    fn default() -> Self {
        Self {
            segment_bytes: DEFAULT_SEGMENT_BYTES,
            fsync: false,
        }
    }
}

#[derive(Debug)]
struct Segment {
    base: u64,
    path: PathBuf,
    file: File,
    size: u64,
}

#[derive(Debug, Clone, Copy)]
struct IndexEntry {
    timestamp: i64,
    segment_base: u64,
    position: u64,
    len: u32,
}

#[derive(Debug)]
pub struct PartitionLog {
    dir: PathBuf,
    config: LogConfig,
    segments: Vec<Segment>,
    /// Entries for offsets `[start_offset, next_offset)`.
    index: VecDeque<IndexEntry>,
    start_offset: u64,
    next_offset: u64,
    last_timestamp: i64,
    scratch: Vec<u8>,
}

fn segment_path(dir: &Path, base: u64) -> PathBuf {
    dir.join(format!("{base:020}.log"))
}

impl PartitionLog {
    /// Opens (or creates) the log in `dir`, recovering from torn or corrupt
    /// tails by truncating at the first bad frame.
    pub fn open(dir: impl Into<PathBuf>, config: LogConfig) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut bases: Vec<u64> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".log")?.parse::<u64>().ok()
            })
            .collect();
        bases.sort_unstable();

        let checkpoint = fs::read_to_string(dir.join(START_CHECKPOINT))
            .ok()
            .and_then(|s| s.trim().parse::<u64>().ok());

        let mut log = Self {
            dir: dir.clone(),
            config,
            segments: Vec::new(),
            index: VecDeque::new(),
            start_offset: 0,
            next_offset: 0,
            last_timestamp: i64::MIN,
            scratch: Vec::new(),
        };

        let mut all_entries: Vec<(u64, IndexEntry)> = Vec::new();
        let mut expected: Option<u64> = None;
        let mut corrupt = false;
        for base in bases {
            let path = segment_path(&dir, base);
            if corrupt {
                fs::remove_file(&path)?;
                continue;
            }
            let data = fs::read(&path)?;
            let (frames, _) = scan_frames(&data);
            let mut keep = 0usize;
            let mut next = expected.unwrap_or(base).max(base);
            if expected.is_some_and(|e| e != base) {
                // gap between segments: the previous one was truncated
                corrupt = true;
                fs::remove_file(&path)?;
                continue;
            }
            for (rec, pos, len) in &frames {
                if rec.offset != next {
                    break;
                }
                all_entries.push((
                    rec.offset,
                    IndexEntry {
                        timestamp: rec.timestamp,
                        segment_base: base,
                        position: *pos,
                        len: *len,
                    },
                ));
                keep = (*pos + *len as u64) as usize;
                next += 1;
            }
            let file = OpenOptions::new().read(true).write(true).open(&path)?;
            if keep < data.len() {
                file.set_len(keep as u64)?;
                corrupt = true;
            }
            log.segments.push(Segment {
                base,
                path,
                file,
                size: keep as u64,
            });
            expected = Some(next);
        }

        let first_base = log.segments.first().map(|s| s.base).unwrap_or(0);
        log.next_offset = expected.unwrap_or(0);
        log.start_offset = checkpoint.unwrap_or(0).max(first_base);
        log.next_offset = log.next_offset.max(log.start_offset);
        for (offset, entry) in all_entries {
            if offset >= log.start_offset {
                log.last_timestamp = log.last_timestamp.max(entry.timestamp);
                log.index.push_back(entry);
            }
        }
        if log.segments.is_empty() {
            log.new_segment(log.next_offset)?;
        }
        Ok(log)
    }

    fn new_segment(&mut self, base: u64) -> io::Result<()> {
        let path = segment_path(&self.dir, base);
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(&path)?;
        self.segments.push(Segment {
            base,
            path,
            file,
            size: 0,
        });
        Ok(())
    }

    pub fn start_offset(&self) -> u64 {
        self.start_offset
    }

    /// Next offset to be assigned.
    pub fn end_offset(&self) -> u64 {
        self.next_offset
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn last_timestamp(&self) -> Option<i64> {
        self.index.back().map(|e| e.timestamp)
    }

    pub fn size_bytes(&self) -> u64 {
        self.segments.iter().map(|s| s.size).sum()
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    fn write_frame(
        &mut self,
        offset: u64,
        timestamp: i64,
        key: &[u8],
        value: &[u8],
    ) -> io::Result<()> {
        let frame_len = segment::frame_len(key.len(), value.len()) as u64;
        let roll = {
            let active = self.segments.last().expect("active segment");
            active.size > 0 && active.size + frame_len > self.config.segment_bytes
        };
        if roll {
            self.new_segment(offset)?;
        }
        self.scratch.clear();
        encode_frame(offset, timestamp, key, value, &mut self.scratch);
        let active = self.segments.last_mut().expect("active segment");
        let position = active.size;
        active.file.write_all_at(&self.scratch, position)?;
        if self.config.fsync {
            active.file.sync_data()?;
        }
        active.size += frame_len;
        self.index.push_back(IndexEntry {
            timestamp,
            segment_base: active.base,
            position,
            len: frame_len as u32,
        });
        self.next_offset = offset + 1;
        self.last_timestamp = self.last_timestamp.max(timestamp);
        Ok(())
    }

    /// Leader append. The timestamp is clamped so timestamps stay
    /// non-decreasing in offset order.
    pub fn append(&mut self, timestamp: i64, key: &[u8], value: &[u8]) -> io::Result<(u64, i64)> {
        let ts = timestamp.max(self.last_timestamp);
        let offset = self.next_offset;
        self.write_frame(offset, ts, key, value)?;
        Ok((offset, ts))
    }

    /// Follower append of a record copied from the leader.
    pub fn append_replica(&mut self, record: &Record) -> io::Result<()> {
        if record.offset != self.next_offset {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!(
                    "replica append at offset {} but log end is {}",
                    record.offset, self.next_offset
                ),
            ));
        }
        self.write_frame(record.offset, record.timestamp, &record.key, &record.value)
    }

    pub fn sync(&self) -> io::Result<()> {
        if let Some(s) = self.segments.last() {
            s.file.sync_data()?;
        }
        Ok(())
    }

    fn segment_for(&self, base: u64) -> &Segment {
        let idx = self
            .segments
            .binary_search_by_key(&base, |s| s.base)
            .expect("index refers to live segment");
        &self.segments[idx]
    }

    /// Reads records from `from` up to (exclusive) `upto`, returning at most
    /// `max_records` and at most `max_bytes` of key+value payload, except that
    /// the first record is always returned if one exists.
    pub fn read(
        &self,
        from: u64,
        upto: u64,
        max_records: usize,
        max_bytes: usize,
    ) -> io::Result<Vec<Record>> {
        let upto = upto.min(self.next_offset);
        if from < self.start_offset || from >= upto || max_records == 0 {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        let mut payload = 0usize;
        let mut i = (from - self.start_offset) as usize;
        let end = (upto - self.start_offset) as usize;
        let mut buf = Vec::new();
        while i < end && out.len() < max_records {
            // contiguous run inside one segment
            let seg_base = self.index[i].segment_base;
            let run_start = i;
            let mut j = i;
            let mut run_bytes = 0u64;
            while j < end
                && self.index[j].segment_base == seg_base
                && (out.len() + (j - run_start)) < max_records
                && run_bytes < 4 * 1024 * 1024
            {
                run_bytes += self.index[j].len as u64;
                j += 1;
            }
            let first = self.index[run_start];
            let seg = self.segment_for(seg_base);
            buf.resize(run_bytes as usize, 0);
            seg.file.read_exact_at(&mut buf, first.position)?;
            let mut pos = 0usize;
            for _ in run_start..j {
                let (rec, used) = segment::decode_frame(&buf[pos..]).map_err(|e| {
                    io::Error::new(io::ErrorKind::InvalidData, format!("corrupt frame: {e:?}"))
                })?;
                pos += used;
                let len = rec.payload_len();
                if !out.is_empty() && payload + len > max_bytes {
                    return Ok(out);
                }
                payload += len;
                out.push(rec);
                if out.len() >= max_records {
                    return Ok(out);
                }
            }
            i = j;
        }
        Ok(out)
    }

    /// Lowest retained offset whose timestamp is `>= target`.
    pub fn offset_for_timestamp(&self, target: i64) -> Option<u64> {
        let idx = self.index.partition_point(|e| e.timestamp < target);
        if idx < self.index.len() {
            Some(self.start_offset + idx as u64)
        } else {
            None
        }
    }

    fn persist_start(&self) -> io::Result<()> {
        let tmp = self.dir.join(format!("{START_CHECKPOINT}.tmp"));
        fs::write(&tmp, self.start_offset.to_string())?;
        fs::rename(&tmp, self.dir.join(START_CHECKPOINT))
    }

    /// Moves the log start forward to `new_start`, deleting whole segments
    /// that fall entirely below it. Returns the number of records dropped.
    pub fn advance_start(&mut self, new_start: u64) -> io::Result<u64> {
        let new_start = new_start.min(self.next_offset);
        if new_start <= self.start_offset {
            return Ok(0);
        }
        let dropped = new_start - self.start_offset;
        for _ in 0..dropped {
            self.index.pop_front();
        }
        self.start_offset = new_start;
        while self.segments.len() > 1 && self.segments[1].base <= new_start {
            let seg = self.segments.remove(0);
            drop(seg.file);
            fs::remove_file(&seg.path)?;
        }
        self.persist_start()?;
        Ok(dropped)
    }

    /// Purges every record with `timestamp < cutoff` from the front.
    pub fn purge_before(&mut self, cutoff: i64) -> io::Result<u64> {
        let idx = self.index.partition_point(|e| e.timestamp < cutoff);
        self.advance_start(self.start_offset + idx as u64)
    }

    /// Removes records at and beyond `offset` (follower divergence repair).
    pub fn truncate_to(&mut self, offset: u64) -> io::Result<()> {
        if offset >= self.next_offset {
            return Ok(());
        }
        if offset <= self.start_offset {
            return self.reset_to(offset);
        }
        let keep = (offset - self.start_offset) as usize;
        let first_dropped = self.index[keep];
        self.index.truncate(keep);
        while let Some(last) = self.segments.last() {
            if last.base > first_dropped.segment_base {
                let seg = self.segments.pop().unwrap();
                drop(seg.file);
                fs::remove_file(&seg.path)?;
            } else {
                break;
            }
        }
        let active = self.segments.last_mut().expect("segment");
        active.file.set_len(first_dropped.position)?;
        active.size = first_dropped.position;
        self.next_offset = offset;
        self.last_timestamp = self.index.back().map(|e| e.timestamp).unwrap_or(i64::MIN);
        Ok(())
    }

    /// Discards all content and restarts the log empty at `offset`.
    pub fn reset_to(&mut self, offset: u64) -> io::Result<()> {
        for seg in self.segments.drain(..) {
            drop(seg.file);
            fs::remove_file(&seg.path)?;
        }
        self.index.clear();
        self.start_offset = offset;
        self.next_offset = offset;
        self.last_timestamp = i64::MIN;
        self.new_segment(offset)?;
        self.persist_start()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> LogConfig {
        LogConfig {
            segment_bytes: 256,
            fsync: false,
        }
    }

    #[test]
    fn first_append_is_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = PartitionLog::open(dir.path(), LogConfig::default()).unwrap();
        assert_eq!(log.append(5, b"k", b"v").unwrap(), (0, 5));
        assert_eq!(log.append(3, b"k", b"v").unwrap(), (1, 5));
        assert_eq!(log.end_offset(), 2);
    }

    #[test]
    fn reads_respect_bounds_and_first_record_rule() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = PartitionLog::open(dir.path(), small()).unwrap();
        for i in 0..10u64 {
            log.append(i as i64, b"", &[i as u8; 40]).unwrap();
        }
        assert!(log.segment_count() > 1);
        let got: Vec<u64> = log
            .read(3, 10, 4, usize::MAX)
            .unwrap()
            .iter()
            .map(|r| r.offset)
            .collect();
        assert_eq!(got, vec![3, 4, 5, 6]);
        // byte cap smaller than one record still yields one record
        assert_eq!(log.read(0, 10, 100, 1).unwrap().len(), 1);
        assert_eq!(log.read(0, 10, 100, 80).unwrap().len(), 2);
        // upper bound is exclusive
        assert_eq!(log.read(8, 9, 100, usize::MAX).unwrap().len(), 1);
        assert!(log.read(10, 10, 100, usize::MAX).unwrap().is_empty());
    }

    #[test]
    fn reopen_recovers_and_truncates_corrupt_tail() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut log = PartitionLog::open(dir.path(), LogConfig::default()).unwrap();
            for i in 0..5u64 {
                log.append(i as i64, b"k", b"value").unwrap();
            }
        }
        let seg = segment_path(dir.path(), 0);
        let mut bytes = fs::read(&seg).unwrap();
        let frame = segment::frame_len(1, 5);
        bytes[3 * frame + 12] ^= 0x55;
        fs::write(&seg, &bytes).unwrap();
        let mut log = PartitionLog::open(dir.path(), LogConfig::default()).unwrap();
        assert_eq!(log.end_offset(), 3);
        assert_eq!(fs::metadata(&seg).unwrap().len(), (3 * frame) as u64);
        assert_eq!(log.append(10, b"k", b"new").unwrap().0, 3);
        let recs = log.read(0, 10, 10, usize::MAX).unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[3].value, b"new");
    }

    #[test]
    fn purge_advances_start_and_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut log = PartitionLog::open(dir.path(), small()).unwrap();
            for i in 0..10u64 {
                log.append(i as i64 * 100, b"", &[0; 40]).unwrap();
            }
            assert_eq!(log.purge_before(450).unwrap(), 5);
            assert_eq!(log.start_offset(), 5);
            assert_eq!(log.purge_before(100).unwrap(), 0);
            assert_eq!(log.offset_for_timestamp(450), Some(5));
            assert_eq!(log.offset_for_timestamp(601), Some(7));
            assert_eq!(log.offset_for_timestamp(5000), None);
        }
        let log = PartitionLog::open(dir.path(), small()).unwrap();
        assert_eq!(log.start_offset(), 5);
        assert_eq!(log.end_offset(), 10);
        let recs = log.read(5, 10, 100, usize::MAX).unwrap();
        assert_eq!(recs.first().unwrap().offset, 5);
        assert!(log.read(4, 10, 100, usize::MAX).unwrap().is_empty());
    }

    #[test]
    fn purging_everything_keeps_offsets_monotone() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = PartitionLog::open(dir.path(), small()).unwrap();
        for i in 0..6u64 {
            log.append(i as i64, b"", &[0; 40]).unwrap();
        }
        log.purge_before(1000).unwrap();
        assert_eq!(log.start_offset(), 6);
        assert_eq!(log.append(2000, b"", b"x").unwrap().0, 6);
        drop(log);
        let log = PartitionLog::open(dir.path(), small()).unwrap();
        assert_eq!((log.start_offset(), log.end_offset()), (6, 7));
    }

    #[test]
    fn truncate_then_append_reuses_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = PartitionLog::open(dir.path(), small()).unwrap();
        for i in 0..10u64 {
            log.append(i as i64, b"", &[i as u8; 40]).unwrap();
        }
        log.truncate_to(4).unwrap();
        assert_eq!(log.end_offset(), 4);
        log.append_replica(&Record {
            offset: 4,
            timestamp: 99,
            key: vec![],
            value: b"z".to_vec(),
        })
        .unwrap();
        drop(log);
        let log = PartitionLog::open(dir.path(), small()).unwrap();
        let recs = log.read(0, 100, 100, usize::MAX).unwrap();
        assert_eq!(recs.len(), 5);
        assert_eq!(recs[4].value, b"z");
    }

    #[test]
    fn replica_append_rejects_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = PartitionLog::open(dir.path(), LogConfig::default()).unwrap();
        let rec = Record {
            offset: 3,
            timestamp: 0,
            key: vec![],
            value: vec![],
        };
        assert!(log.append_replica(&rec).is_err());
    }
}
