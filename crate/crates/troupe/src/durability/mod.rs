//! Redo logging of committed writes and crash recovery.
//!
//! Log format: a stream of length-prefixed binary frames, little-endian,
//! CRC32-checksummed: `[len: u32][crc32(payload): u32][payload]`. A
//! committed transaction appends its write records contiguously followed
//! by a commit marker, all under the single appender lock. Writes touching
//! nondurable actors never reach the log. Recovery replays committed
//! transactions in tid order, truncates a torn or uncommitted tail, and
//! refuses to start on mid-stream corruption.

use crate::addr::ActorAddress;
use crate::error::{EngineError, Result};
use crate::security::Frame;
use crate::txn::{DetachTrigger, Delivery, DetachedSpec};
use crate::value::{Tuple, Value};
use parking_lot::Mutex;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum FlushPolicy {
    /// fsync before every commit returns.
    PerCommit,
    /// Background flush+fsync every N milliseconds; commits do not wait.
    GroupMillis(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LogOp {
    Insert,
    Update,
    Delete,
}

/// Post-image of one committed write on a durable actor.
#[derive(Debug, Clone)]
pub(crate) struct WriteImage {
    pub actor: ActorAddress,
    pub relation: String,
    pub op: LogOp,
    pub rec_id: u64,
    pub tuple: Option<Tuple>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub tids_replayed: u64,
    pub truncated_tail_bytes: u64,
    pub detached_specs_restored: u64,
}

const TAG_WRITE: u8 = 1;
const TAG_COMMIT: u8 = 2;
const TAG_SPEC: u8 = 3;
const TAG_SPEC_DONE: u8 = 4;

const MAX_FRAME: u32 = 64 << 20;

// ---- encoding helpers ----

fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u16(buf, s.len() as u16);
    buf.extend_from_slice(s.as_bytes());
}

fn put_value(buf: &mut Vec<u8>, v: &Value) {
    match v {
        Value::Int(x) => {
            buf.push(0);
            put_u64(buf, *x as u64);
        }
        Value::Float(x) => {
            buf.push(1);
            put_u64(buf, x.to_bits());
        }
        Value::Str(s) => {
            buf.push(2);
            put_u32(buf, s.len() as u32);
            buf.extend_from_slice(s.as_bytes());
        }
        Value::Timestamp(x) => {
            buf.push(3);
            put_u64(buf, *x as u64);
        }
        Value::Bool(b) => {
            buf.push(4);
            buf.push(*b as u8);
        }
        Value::Unit => buf.push(5),
        Value::Tuple(vs) => {
            buf.push(6);
            put_u16(buf, vs.len() as u16);
            for v in vs {
                put_value(buf, v);
            }
        }
        Value::List(vs) => {
            buf.push(7);
            put_u32(buf, vs.len() as u32);
            for v in vs {
                put_value(buf, v);
            }
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(EngineError::CorruptLog("frame payload underrun".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| EngineError::CorruptLog("invalid utf8 in log".into()))
    }

    fn value(&mut self) -> Result<Value> {
        Ok(match self.u8()? {
            0 => Value::Int(self.u64()? as i64),
            1 => Value::Float(f64::from_bits(self.u64()?)),
            2 => {
                let n = self.u32()? as usize;
                Value::Str(
                    String::from_utf8(self.take(n)?.to_vec())
                        .map_err(|_| EngineError::CorruptLog("invalid utf8 in log".into()))?,
                )
            }
            3 => Value::Timestamp(self.u64()? as i64),
            4 => Value::Bool(self.u8()? != 0),
            5 => Value::Unit,
            6 => {
                let n = self.u16()? as usize;
                let mut vs = Vec::with_capacity(n);
                for _ in 0..n {
                    vs.push(self.value()?);
                }
                Value::Tuple(vs)
            }
            7 => {
                let n = self.u32()? as usize;
                let mut vs = Vec::with_capacity(n);
                for _ in 0..n {
                    vs.push(self.value()?);
                }
                Value::List(vs)
            }
            t => {
                return Err(EngineError::CorruptLog(format!(
                    "unknown value tag {t} in log"
                )))
            }
        })
    }
}

fn encode_frame(out: &mut Vec<u8>, payload: &[u8]) {
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out.extend_from_slice(payload);
}

fn encode_write(tid: u64, w: &WriteImage) -> Vec<u8> {
    let mut p = Vec::with_capacity(64);
    p.push(TAG_WRITE);
    put_u64(&mut p, tid);
    put_str(&mut p, &w.actor.type_name);
    put_str(&mut p, &w.actor.actor_name);
    put_str(&mut p, &w.relation);
    p.push(match w.op {
        LogOp::Insert => 0,
        LogOp::Update => 1,
        LogOp::Delete => 2,
    });
    put_u64(&mut p, w.rec_id);
    match &w.tuple {
        Some(t) => {
            p.push(1);
            put_u16(&mut p, t.len() as u16);
            for v in t {
                put_value(&mut p, v);
            }
        }
        None => p.push(0),
    }
    p
}

fn encode_spec(tid: u64, s: &DetachedSpec) -> Vec<u8> {
    let mut p = Vec::with_capacity(64);
    p.push(TAG_SPEC);
    put_u64(&mut p, tid);
    put_u64(&mut p, s.id);
    put_str(&mut p, &s.target.type_name);
    put_str(&mut p, &s.target.actor_name);
    put_str(&mut p, &s.method);
    p.push(match s.trigger {
        DetachTrigger::OnCommit => 0,
        DetachTrigger::OnAbort => 1,
        DetachTrigger::OnAny => 2,
    });
    p.push(match s.delivery {
        Delivery::ExactlyOnce => 0,
        Delivery::AtMostOnce => 1,
        Delivery::AtLeastOnce => 2,
    });
    match &s.origin {
        Frame::External => p.push(0),
        Frame::Actor {
            type_name,
            method,
            actor_name,
        } => {
            p.push(1);
            put_str(&mut p, type_name);
            put_str(&mut p, method);
            put_str(&mut p, actor_name);
        }
    }
    put_u16(&mut p, s.args.len() as u16);
    for v in &s.args {
        put_value(&mut p, v);
    }
    p
}

/// Single-appender redo log. Commit threads serialize their entry and
/// append under the lock; the flush policy decides when bytes are synced.
pub struct Wal {
    path: PathBuf,
    policy: FlushPolicy,
    file: Mutex<Option<BufWriter<File>>>,
}

impl Wal {
    pub(crate) fn open(path: &Path, policy: FlushPolicy) -> Result<Wal> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(Wal {
            path: path.to_path_buf(),
            policy,
            file: Mutex::new(Some(BufWriter::new(file))),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub(crate) fn policy(&self) -> FlushPolicy {
        self.policy
    }

    /// Append one committed transaction: write records, detached specs,
    /// optional executed-spec marker, then the commit marker.
    pub(crate) fn append_commit(
        &self,
        tid: u64,
        writes: &[WriteImage],
        specs: &[DetachedSpec],
        spec_done: Option<u64>,
    ) -> Result<()> {
        let mut bytes = Vec::with_capacity(128 + writes.len() * 96);
        for w in writes {
            encode_frame(&mut bytes, &encode_write(tid, w));
        }
        for s in specs {
            encode_frame(&mut bytes, &encode_spec(tid, s));
        }
        if let Some(spec_id) = spec_done {
            let mut p = Vec::with_capacity(17);
            p.push(TAG_SPEC_DONE);
            put_u64(&mut p, tid);
            put_u64(&mut p, spec_id);
            encode_frame(&mut bytes, &p);
        }
        let mut p = Vec::with_capacity(17);
        p.push(TAG_COMMIT);
        put_u64(&mut p, tid);
        put_u32(&mut p, writes.len() as u32);
        put_u32(&mut p, specs.len() as u32);
        encode_frame(&mut bytes, &p);

        let mut guard = self.file.lock();
        let writer = guard
            .as_mut()
            .ok_or_else(|| EngineError::Io("log writer closed".into()))?;
        writer.write_all(&bytes)?;
        if self.policy == FlushPolicy::PerCommit {
            writer.flush()?;
            writer.get_ref().sync_data()?;
        }
        Ok(())
    }

    /// Group-policy background flush.
    pub(crate) fn flush_sync(&self) -> Result<()> {
        let mut guard = self.file.lock();
        if let Some(writer) = guard.as_mut() {
            writer.flush()?;
            writer.get_ref().sync_data()?;
        }
        Ok(())
    }

    /// Drop the appender without flushing buffered bytes, as a crash would.
    /// Closing the fd does not write the BufWriter's buffer, so buffered
    /// group-policy bytes are lost exactly like volatile state.
    pub(crate) fn crash(&self) {
        let mut guard = self.file.lock();
        if let Some(writer) = guard.take() {
            let (_file, _lost_buffer) = writer.into_parts();
        }
    }
}

/// One committed transaction recovered from the log.
#[derive(Debug)]
pub(crate) struct LoggedTxn {
    pub tid: u64,
    pub writes: Vec<WriteImage>,
    pub specs: Vec<DetachedSpec>,
    pub dones: Vec<u64>,
}

#[derive(Debug)]
pub(crate) struct LogScan {
    /// Committed transactions in tid order.
    pub txns: Vec<LoggedTxn>,
    /// Offset after the last frame of the last committed transaction.
    pub keep_offset: u64,
    pub file_len: u64,
}

enum FrameBody {
    Write(u64, WriteImage),
    Commit(u64),
    Spec(u64, DetachedSpec),
    SpecDone(u64, u64),
}

fn decode_frame(payload: &[u8]) -> Result<FrameBody> {
    let mut c = Cursor {
        buf: payload,
        pos: 0,
    };
    match c.u8()? {
        TAG_WRITE => {
            let tid = c.u64()?;
            let type_name = c.str()?;
            let actor_name = c.str()?;
            let relation = c.str()?;
            let op = match c.u8()? {
                0 => LogOp::Insert,
                1 => LogOp::Update,
                2 => LogOp::Delete,
                o => return Err(EngineError::CorruptLog(format!("bad write op {o}"))),
            };
            let rec_id = c.u64()?;
            let tuple = if c.u8()? == 1 {
                let n = c.u16()? as usize;
                let mut t = Vec::with_capacity(n);
                for _ in 0..n {
                    t.push(c.value()?);
                }
                Some(t)
            } else {
                None
            };
            Ok(FrameBody::Write(
                tid,
                WriteImage {
                    actor: ActorAddress {
                        type_name,
                        actor_name,
                    },
                    relation,
                    op,
                    rec_id,
                    tuple,
                },
            ))
        }
        TAG_COMMIT => {
            let tid = c.u64()?;
            let _nw = c.u32()?;
            let _ns = c.u32()?;
            Ok(FrameBody::Commit(tid))
        }
        TAG_SPEC => {
            let tid = c.u64()?;
            let id = c.u64()?;
            let type_name = c.str()?;
            let actor_name = c.str()?;
            let method = c.str()?;
            let trigger = match c.u8()? {
                0 => DetachTrigger::OnCommit,
                1 => DetachTrigger::OnAbort,
                2 => DetachTrigger::OnAny,
                o => return Err(EngineError::CorruptLog(format!("bad trigger {o}"))),
            };
            let delivery = match c.u8()? {
                0 => Delivery::ExactlyOnce,
                1 => Delivery::AtMostOnce,
                2 => Delivery::AtLeastOnce,
                o => return Err(EngineError::CorruptLog(format!("bad delivery {o}"))),
            };
            let origin = match c.u8()? {
                0 => Frame::External,
                1 => {
                    let type_name = c.str()?;
                    let method = c.str()?;
                    let actor_name = c.str()?;
                    Frame::Actor {
                        type_name,
                        method,
                        actor_name,
                    }
                }
                o => return Err(EngineError::CorruptLog(format!("bad frame kind {o}"))),
            };
            let n = c.u16()? as usize;
            let mut args = Vec::with_capacity(n);
            for _ in 0..n {
                args.push(c.value()?);
            }
            Ok(FrameBody::Spec(
                tid,
                DetachedSpec {
                    id,
                    target: ActorAddress {
                        type_name,
                        actor_name,
                    },
                    method,
                    args,
                    trigger,
                    delivery,
                    origin,
                },
            ))
        }
        TAG_SPEC_DONE => {
            let tid = c.u64()?;
            let spec_id = c.u64()?;
            Ok(FrameBody::SpecDone(tid, spec_id))
        }
        t => Err(EngineError::CorruptLog(format!("unknown frame tag {t}"))),
    }
}

/// Scan the log: parse frames, group by tid, keep committed groups.
/// A torn or uncommitted tail is tolerated and reported via `keep_offset`;
/// corruption followed by more readable data refuses recovery.
pub(crate) fn scan_log(path: &Path) -> Result<LogScan> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let file_len = bytes.len() as u64;

    struct Pending {
        first_offset: u64,
        txn: LoggedTxn,
        committed: bool,
    }
    let mut groups: Vec<Pending> = Vec::new();
    let mut pos: usize = 0;

    let find = |groups: &mut Vec<Pending>, tid: u64, offset: u64| -> usize {
        if let Some(i) = groups.iter().position(|g| g.txn.tid == tid) {
            i
        } else {
            groups.push(Pending {
                first_offset: offset,
                txn: LoggedTxn {
                    tid,
                    writes: Vec::new(),
                    specs: Vec::new(),
                    dones: Vec::new(),
                },
                committed: false,
            });
            groups.len() - 1
        }
    };

    loop {
        if pos == bytes.len() {
            break; // clean end
        }
        let remaining = bytes.len() - pos;
        if remaining < 8 {
            break; // torn length/crc prefix
        }
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
        let crc = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap());
        if len > MAX_FRAME || (len as usize) > remaining - 8 {
            break; // frame extends past EOF: torn tail
        }
        let payload = &bytes[pos + 8..pos + 8 + len as usize];
        let frame_end = pos + 8 + len as usize;
        if crc32fast::hash(payload) != crc {
            if frame_end == bytes.len() {
                break; // torn final frame
            }
            return Err(EngineError::CorruptLog(format!(
                "checksum mismatch at offset {pos} with {} bytes following",
                bytes.len() - frame_end
            )));
        }
        let body = decode_frame(payload)?;
        let offset = pos as u64;
        match body {
            FrameBody::Write(tid, w) => {
                let i = find(&mut groups, tid, offset);
                groups[i].txn.writes.push(w);
            }
            FrameBody::Spec(tid, s) => {
                let i = find(&mut groups, tid, offset);
                groups[i].txn.specs.push(s);
            }
            FrameBody::SpecDone(tid, spec_id) => {
                let i = find(&mut groups, tid, offset);
                groups[i].txn.dones.push(spec_id);
            }
            FrameBody::Commit(tid) => {
                let i = find(&mut groups, tid, offset);
                groups[i].committed = true;
            }
        }
        pos = frame_end;
    }

    // Only a trailing uncommitted group is legal: the appender writes each
    // transaction's frames contiguously, so committed data after an
    // uncommitted group cannot happen in an intact log.
    let keep_offset = groups
        .iter()
        .filter(|g| !g.committed)
        .map(|g| g.first_offset)
        .min()
        .unwrap_or(pos as u64);
    if groups
        .iter()
        .any(|g| g.committed && g.first_offset > keep_offset)
    {
        return Err(EngineError::CorruptLog(
            "committed transaction after an uncommitted group".into(),
        ));
    }
    let mut txns: Vec<LoggedTxn> = groups
        .into_iter()
        .filter(|g| g.committed)
        .map(|g| g.txn)
        .collect();
    txns.sort_by_key(|t| t.tid);
    Ok(LogScan {
        txns,
        keep_offset,
        file_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addr::addr;

    fn image(q: i64) -> WriteImage {
        WriteImage {
            actor: addr("Store_Section", "100"),
            relation: "inventory".into(),
            op: LogOp::Update,
            rec_id: 3,
            tuple: Some(vec![Value::Int(7), Value::Float(1.5), Value::Int(q)]),
        }
    }

    #[test]
    fn round_trip_commit_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log");
        let wal = Wal::open(&path, FlushPolicy::PerCommit).unwrap();
        wal.append_commit(1, &[image(10)], &[], None).unwrap();
        wal.append_commit(2, &[image(20), image(30)], &[], Some(9))
            .unwrap();
        let scan = scan_log(&path).unwrap();
        assert_eq!(scan.txns.len(), 2);
        assert_eq!(scan.txns[0].tid, 1);
        assert_eq!(scan.txns[1].writes.len(), 2);
        assert_eq!(scan.txns[1].dones, vec![9]);
        assert_eq!(scan.keep_offset, scan.file_len);
    }

    #[test]
    fn torn_tail_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log");
        let wal = Wal::open(&path, FlushPolicy::PerCommit).unwrap();
        wal.append_commit(1, &[image(10)], &[], None).unwrap();
        let full = std::fs::metadata(&path).unwrap().len();
        wal.append_commit(2, &[image(20)], &[], None).unwrap();
        let end = std::fs::metadata(&path).unwrap().len();
        // chop the second entry mid-frame
        let f = OpenOptions::new().write(true).open(&path).unwrap();
        f.set_len(full + (end - full) / 2).unwrap();
        drop(f);
        let scan = scan_log(&path).unwrap();
        assert_eq!(scan.txns.len(), 1);
        assert_eq!(scan.keep_offset, full);
    }

    #[test]
    fn mid_stream_corruption_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log");
        let wal = Wal::open(&path, FlushPolicy::PerCommit).unwrap();
        wal.append_commit(1, &[image(10)], &[], None).unwrap();
        wal.append_commit(2, &[image(20)], &[], None).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[10] ^= 0xff; // inside the first frame's payload
        std::fs::write(&path, &bytes).unwrap();
        let err = scan_log(&path).unwrap_err();
        assert!(matches!(err, EngineError::CorruptLog(_)));
    }

    #[test]
    fn empty_log_scans_clean() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log");
        Wal::open(&path, FlushPolicy::PerCommit).unwrap();
        let scan = scan_log(&path).unwrap();
        assert!(scan.txns.is_empty());
        assert_eq!(scan.keep_offset, 0);
    }

    #[test]
    fn crash_discards_buffered_group_writes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log");
        let wal = Wal::open(&path, FlushPolicy::GroupMillis(10_000)).unwrap();
        wal.append_commit(1, &[image(10)], &[], None).unwrap();
        wal.crash();
        let scan = scan_log(&path).unwrap();
        assert!(scan.txns.is_empty(), "unflushed group writes are lost");
    }
}
