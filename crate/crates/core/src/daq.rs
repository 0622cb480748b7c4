//! Acquisition layer: the 73-byte wire frame, log files, replay, a bounded
//! drop-oldest stream, and baseline subtraction.
//!
//! Frame layout (little-endian):
//!
//! | bytes  | field                        |
//! |--------|------------------------------|
//! | 0..2   | magic `AA 55`                |
//! | 2      | version (1)                  |
//! | 3..7   | seq, u32                     |
//! | 7..11  | timestamp_us, u32 (wraps)    |
//! | 11..71 | 15 × f32 µT                  |
//! | 71..73 | CRC-16/CCITT-FALSE of 2..71  |

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crc::{Crc, CRC_16_IBM_3740};
use thiserror::Error;

use crate::magnetics::{SensorReading, CHANNELS};

pub const FRAME_LEN: usize = 73;
pub const MAGIC: [u8; 2] = [0xAA, 0x55];
pub const FRAME_VERSION: u8 = 1;
pub const LOG_TAG: &[u8; 8] = b"ANYSKLOG";
pub const LOG_VERSION: u32 = 1;
pub const LOG_HEADER_LEN: usize = 8 + 4 + 8;
pub const DEFAULT_BASELINE_WINDOW: usize = 100;
pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;

const PAYLOAD_START: usize = 11;
const CRC_START: usize = 71;

/// CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor.
const CCITT_FALSE: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("frame truncated: {0} of 73 bytes")]
    Truncated(usize),
    #[error("bad magic {0:02x} {1:02x}")]
    BadMagic(u8, u8),
    #[error("crc mismatch: stored {stored:04x}, computed {computed:04x}")]
    BadCrc { stored: u16, computed: u16 },
    #[error("unsupported frame version {0}")]
    BadVersion(u8),
}

#[derive(Debug, Error)]
pub enum DaqError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error("invalid reading: {0}")]
    InvalidReading(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn frame_crc(bytes: &[u8]) -> u16 {
    CCITT_FALSE.checksum(bytes)
}

/// Serializes `reading` as one wire frame. Values are narrowed to f32 and the
/// timestamp is reduced modulo 2³².
pub fn encode_frame(reading: &SensorReading, seq: u32) -> [u8; FRAME_LEN] {
    let mut out = [0u8; FRAME_LEN];
    out[0..2].copy_from_slice(&MAGIC);
    out[2] = FRAME_VERSION;
    out[3..7].copy_from_slice(&seq.to_le_bytes());
    out[7..11].copy_from_slice(&(reading.timestamp_us as u32).to_le_bytes());
    for (k, v) in reading.values.iter().enumerate() {
        let at = PAYLOAD_START + 4 * k;
        out[at..at + 4].copy_from_slice(&(*v as f32).to_le_bytes());
    }
    let crc = frame_crc(&out[2..CRC_START]);
    out[CRC_START..].copy_from_slice(&crc.to_le_bytes());
    out
}

/// Parses the first 73 bytes of `bytes`. The returned timestamp is the raw
/// 32-bit counter.
pub fn decode_frame(bytes: &[u8]) -> Result<(SensorReading, u32), DecodeError> {
    if bytes.len() < FRAME_LEN {
        return Err(DecodeError::Truncated(bytes.len()));
    }
    let b = &bytes[..FRAME_LEN];
    if b[0..2] != MAGIC {
        return Err(DecodeError::BadMagic(b[0], b[1]));
    }
    let stored = u16::from_le_bytes([b[CRC_START], b[CRC_START + 1]]);
    let computed = frame_crc(&b[2..CRC_START]);
    if stored != computed {
        return Err(DecodeError::BadCrc { stored, computed });
    }
    if b[2] != FRAME_VERSION {
        return Err(DecodeError::BadVersion(b[2]));
    }
    let word = |at: usize| [b[at], b[at + 1], b[at + 2], b[at + 3]];
    let seq = u32::from_le_bytes(word(3));
    let ts = u32::from_le_bytes(word(7));
    let mut values = [0.0; CHANNELS];
    for (k, v) in values.iter_mut().enumerate() {
        *v = f32::from_le_bytes(word(PAYLOAD_START + 4 * k)) as f64;
    }
    Ok((SensorReading::new(ts as u64, values), seq))
}

/// Recovers a 64-bit timeline from wrapping 32-bit timestamps, assuming
/// consecutive frames are less than 2³¹ µs apart.
#[derive(Debug, Clone, Default)]
pub struct TimestampUnwrapper {
    last: Option<u64>,
}

impl TimestampUnwrapper {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn unwrap(&mut self, raw: u32) -> u64 {
        let next = match self.last {
            None => raw as u64,
            Some(prev) => {
                let delta = raw.wrapping_sub(prev as u32) as i32 as i64;
                (prev as i64 + delta) as u64
            }
        };
        self.last = Some(next);
        next
    }
}

/// An in-memory log: frames with strictly increasing sequence numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct LogFile {
    frames: Vec<[u8; FRAME_LEN]>,
}

impl LogFile {
    /// Encodes `readings` with sequence numbers `0, 1, …`.
    pub fn from_readings(readings: &[SensorReading]) -> Result<Self, DaqError> {
        let mut frames = Vec::with_capacity(readings.len());
        for (i, r) in readings.iter().enumerate() {
            if !r.is_finite() {
                return Err(DaqError::InvalidReading(format!("frame {i} has non-finite values")));
            }
            let seq = u32::try_from(i).map_err(|_| DaqError::InvalidReading("more than 2^32 frames".into()))?;
            frames.push(encode_frame(r, seq));
        }
        Ok(Self { frames })
    }

    /// Wraps already encoded frames, checking each one and the sequence order.
    pub fn from_frames(frames: Vec<[u8; FRAME_LEN]>) -> Result<Self, DaqError> {
        let mut prev: Option<u32> = None;
        for (i, f) in frames.iter().enumerate() {
            let (_, seq) = decode_frame(f)?;
            if prev.is_some_and(|p| seq <= p) {
                return Err(DaqError::CorruptLog(format!("sequence not increasing at frame {i}")));
            }
            prev = Some(seq);
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[[u8; FRAME_LEN]] {
        &self.frames
    }

    /// Decoded readings with unwrapped timestamps.
    pub fn readings(&self) -> Vec<SensorReading> {
        replay(self, false).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(LOG_HEADER_LEN + FRAME_LEN * self.frames.len());
        out.extend_from_slice(LOG_TAG);
        out.extend_from_slice(&LOG_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.frames.len() as u64).to_le_bytes());
        for f in &self.frames {
            out.extend_from_slice(f);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DaqError> {
        if bytes.len() < LOG_HEADER_LEN {
            return Err(DaqError::CorruptLog("header truncated".into()));
        }
        if &bytes[0..8] != LOG_TAG {
            return Err(DaqError::CorruptLog("bad format tag".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != LOG_VERSION {
            return Err(DaqError::CorruptLog(format!("unsupported log version {version}")));
        }
        let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let body = &bytes[LOG_HEADER_LEN..];
        if body.len() % FRAME_LEN != 0 || (body.len() / FRAME_LEN) as u64 != count {
            return Err(DaqError::CorruptLog(format!("header says {count} frames, body holds {} bytes", body.len())));
        }
        let frames = body.chunks_exact(FRAME_LEN).map(|c| c.try_into().expect("frame sized chunk")).collect();
        Self::from_frames(frames).map_err(|e| match e {
            DaqError::Decode(d) => DaqError::CorruptLog(d.to_string()),
            other => other,
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), DaqError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, DaqError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), DaqError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DaqError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Frames of a log in order, optionally paced by their timestamps.
pub struct Replay<'a> {
    frames: std::slice::Iter<'a, [u8; FRAME_LEN]>,
    clock: TimestampUnwrapper,
    realtime: Option<(Instant, u64)>,
    paced: bool,
}

pub fn replay(log: &LogFile, realtime: bool) -> Replay<'_> {
    Replay { frames: log.frames.iter(), clock: TimestampUnwrapper::new(), realtime: None, paced: realtime }
}

impl Iterator for Replay<'_> {
    type Item = SensorReading;

    fn next(&mut self) -> Option<SensorReading> {
        let frame = self.frames.next()?;
        let (mut reading, _) = decode_frame(frame).expect("log frames are validated on construction");
        reading.timestamp_us = self.clock.unwrap(reading.timestamp_us as u32);
        if self.paced {
            let (start, t0) = *self.realtime.get_or_insert((Instant::now(), reading.timestamp_us));
            let due = start + Duration::from_micros(reading.timestamp_us - t0);
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        Some(reading)
    }
}

struct QueueState<T> {
    items: VecDeque<T>,
    dropped: u64,
    closed: bool,
}

/// Bounded FIFO shared by one producer and one consumer. A push into a full
/// queue evicts the oldest item and counts it as dropped.
pub struct BoundedQueue<T> {
    capacity: usize,
    state: Mutex<QueueState<T>>,
    ready: Condvar,
}

impl<T> BoundedQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self {
            capacity,
            state: Mutex::new(QueueState { items: VecDeque::with_capacity(capacity), dropped: 0, closed: false }),
            ready: Condvar::new(),
        }
    }

    pub fn push(&self, item: T) {
        let mut s = self.state.lock().expect("queue lock");
        if s.items.len() == self.capacity {
            s.items.pop_front();
            s.dropped += 1;
        }
        s.items.push_back(item);
        self.ready.notify_one();
    }

    pub fn try_pop(&self) -> Option<T> {
        self.state.lock().expect("queue lock").items.pop_front()
    }

    /// Blocks until an item arrives or the queue is closed and drained.
    pub fn pop(&self) -> Option<T> {
        let mut s = self.state.lock().expect("queue lock");
        loop {
            if let Some(item) = s.items.pop_front() {
                return Some(item);
            }
            if s.closed {
                return None;
            }
            s = self.ready.wait(s).expect("queue lock");
        }
    }

    pub fn close(&self) {
        self.state.lock().expect("queue lock").closed = true;
        self.ready.notify_all();
    }

    pub fn dropped(&self) -> u64 {
        self.state.lock().expect("queue lock").dropped
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("queue lock").items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Consumer end of a replay running on its own thread.
pub struct ReplayStream {
    queue: Arc<BoundedQueue<SensorReading>>,
    producer: Option<JoinHandle<()>>,
}

impl ReplayStream {
    pub fn spawn(log: LogFile, realtime: bool, capacity: usize) -> Self {
        let queue = Arc::new(BoundedQueue::new(capacity));
        let q = Arc::clone(&queue);
        let producer = std::thread::spawn(move || {
            for r in replay(&log, realtime) {
                q.push(r);
            }
            q.close();
        });
        Self { queue, producer: Some(producer) }
    }

    pub fn recv(&self) -> Option<SensorReading> {
        self.queue.pop()
    }

    pub fn dropped(&self) -> u64 {
        self.queue.dropped()
    }

    /// Waits for the producer to finish; the queue keeps its contents.
    pub fn join(&mut self) {
        if let Some(h) = self.producer.take() {
            h.join().expect("replay producer panicked");
        }
    }
}

impl Iterator for ReplayStream {
    type Item = SensorReading;

    fn next(&mut self) -> Option<SensorReading> {
        self.recv()
    }
}

impl Drop for ReplayStream {
    fn drop(&mut self) {
        self.join();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineOutput {
    pub reading: SensorReading,
    pub armed: bool,
}

/// Running zeroing: the first `window` frames build the per-channel mean and
/// pass through unchanged; later frames have the mean subtracted.
#[derive(Debug, Clone)]
pub struct BaselineSubtractor {
    window: usize,
    seen: usize,
    sum: [f64; CHANNELS],
    mean: Option<[f64; CHANNELS]>,
}

impl BaselineSubtractor {
    pub fn new(window: usize) -> Self {
        assert!(window >= 1, "baseline window must be at least one frame");
        Self { window, seen: 0, sum: [0.0; CHANNELS], mean: None }
    }

    pub fn is_armed(&self) -> bool {
        self.mean.is_some()
    }

    pub fn mean(&self) -> Option<&[f64; CHANNELS]> {
        self.mean.as_ref()
    }

    pub fn process(&mut self, r: &SensorReading) -> BaselineOutput {
        if let Some(mean) = &self.mean {
            let mut out = *r;
            for (v, m) in out.values.iter_mut().zip(mean) {
                *v -= m;
            }
            return BaselineOutput { reading: out, armed: true };
        }
        for (s, v) in self.sum.iter_mut().zip(&r.values) {
            *s += v;
        }
        self.seen += 1;
        if self.seen == self.window {
            let n = self.window as f64;
            self.mean = Some(self.sum.map(|s| s / n));
        }
        BaselineOutput { reading: *r, armed: false }
    }
}

pub fn baseline_subtract(readings: &[SensorReading], window: usize) -> Vec<BaselineOutput> {
    let mut b = BaselineSubtractor::new(window);
    readings.iter().map(|r| b.process(r)).collect()
}

/// `v` with 9 significant digits, shortest of fixed or exponent notation.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let m = if mantissa.contains('.') { mantissa.trim_end_matches('0').trim_end_matches('.') } else { mantissa };
        format!("{m}e{exp}")
    }
}

pub fn csv_header() -> String {
    let mut h = String::from("timestamp_us");
    for s in 0..CHANNELS / 3 {
        for axis in ["x", "y", "z"] {
            h.push_str(&format!(",b{s}{axis}"));
        }
    }
    h
}

pub fn to_csv(readings: &[SensorReading]) -> String {
    let mut out = csv_header();
    out.push('\n');
    for r in readings {
        out.push_str(&r.timestamp_us.to_string());
        for v in &r.values {
            out.push(',');
            out.push_str(&format_sig9(*v));
        }
        out.push('\n');
    }
    out
}

pub fn from_csv(text: &str) -> Result<Vec<SensorReading>, DaqError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == csv_header() => {}
        _ => return Err(DaqError::Csv("missing or unexpected header".into())),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != CHANNELS + 1 {
                return Err(DaqError::Csv(format!("row {}: expected {} fields", i + 1, CHANNELS + 1)));
            }
            let ts = fields[0].parse().map_err(|_| DaqError::Csv(format!("row {}: bad timestamp", i + 1)))?;
            let mut values = [0.0; CHANNELS];
            for (v, f) in values.iter_mut().zip(&fields[1..]) {
                *v = f.parse().map_err(|_| DaqError::Csv(format!("row {}: bad value {f:?}", i + 1)))?;
            }
            Ok(SensorReading::new(ts, values))
        })
        .collect()
}
