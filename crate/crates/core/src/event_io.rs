//! Event data types, the CSV and binary event file formats, count-based
//! slicing and polarity accumulation into event frames.
//!
//! CSV files start with the header `t_us,x,y,p` and hold one event per line
//! with `p` in `{1,-1}`. Binary files start with a 16-byte header (`EVGS`,
//! `u16` width, `u16` height, `f64` threshold) followed by packed 13-byte
//! little-endian records `(u64 t_us, u16 x, u16 y, i8 p)`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use crate::error::{EvgsError, Result};

pub const CSV_HEADER: &str = "t_us,x,y,p";
pub const BINARY_MAGIC: &[u8; 4] = b"EVGS";
const BINARY_HEADER_LEN: usize = 16;
const BINARY_RECORD_LEN: usize = 13;

/// One polarity tick. `t` is in microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: i64,
    pub x: u16,
    pub y: u16,
    pub p: i8,
}

impl Event {
    pub fn new(t: i64, x: u16, y: u16, p: i8) -> Self {
        Self { t, x, y, p }
    }
}

/// Sensor geometry and contrast threshold; the metadata a CSV file lacks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorInfo {
    pub width: u16,
    pub height: u16,
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Binary,
}

impl EventFormat {
    /// `.csv` is CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EventFormat::Csv,
            _ => EventFormat::Binary,
        }
    }
}

/// A validated, time-sorted event stream.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    width: u16,
    height: u16,
    threshold: f64,
}

impl EventStream {
    pub fn new(events: Vec<Event>, width: u16, height: u16, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(EvgsError::arg(format!("threshold must be positive, got {threshold}")));
        }
        for (i, e) in events.iter().enumerate() {
            validate_event(e, i + 1, width, height)?;
            if i > 0 && events[i - 1].t > e.t {
                return Err(EvgsError::Ordering {
                    line: i + 1,
                    prev: events[i - 1].t as u64,
                    next: e.t as u64,
                });
            }
        }
        Ok(Self {
            events,
            width,
            height,
            threshold,
        })
    }

    pub fn empty(sensor: SensorInfo) -> Self {
        Self {
            events: Vec::new(),
            width: sensor.width,
            height: sensor.height,
            threshold: sensor.threshold,
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width as usize
    }

    pub fn height(&self) -> usize {
        self.height as usize
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn sensor(&self) -> SensorInfo {
        SensorInfo {
            width: self.width,
            height: self.height,
            threshold: self.threshold,
        }
    }

    /// Exclusive lower bound used for a window that starts at the first event.
    pub fn start_bound(&self) -> Option<i64> {
        self.events.first().map(|e| e.t - 1)
    }

    pub fn end_time(&self) -> Option<i64> {
        self.events.last().map(|e| e.t)
    }

    /// Index range of events with `t1 < t <= t2`.
    pub fn index_range(&self, t1: i64, t2: i64) -> Range<usize> {
        let start = self.events.partition_point(|e| e.t <= t1);
        let end = self.events.partition_point(|e| e.t <= t2);
        start..end.max(start)
    }

    /// Events with `t <= t_max`.
    pub fn truncated(&self, t_max: i64) -> EventStream {
        let end = self.events.partition_point(|e| e.t <= t_max);
        EventStream {
            events: self.events[..end].to_vec(),
            ..*self
        }
    }
}

fn validate_event(e: &Event, line: usize, width: u16, height: u16) -> Result<()> {
    if e.p != 1 && e.p != -1 {
        return Err(EvgsError::Polarity {
            line,
            value: e.p as i64,
        });
    }
    if e.x >= width || e.y >= height {
        return Err(EvgsError::OutOfSensor {
            line,
            x: e.x as u32,
            y: e.y as u32,
            width: width as u32,
            height: height as u32,
        });
    }
    if e.t < 0 {
        return Err(EvgsError::Parse {
            line,
            message: format!("negative timestamp {}", e.t),
        });
    }
    Ok(())
}

/// Per-pixel accumulated log-intensity change over `(t1, t2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventFrame {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub t1: i64,
    pub t2: i64,
}

impl EventFrame {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// A count-based window: events `range` of the stream, supervising `(t1, t2]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventWindow {
    pub t1: i64,
    pub t2: i64,
    pub range: Range<usize>,
}

/// Reads a stream. CSV input needs `sensor`; binary input carries its own
/// header and ignores it.
pub fn parse_events(reader: impl Read, format: EventFormat, sensor: Option<SensorInfo>) -> Result<EventStream> {
    match format {
        EventFormat::Csv => {
            let sensor = sensor.ok_or_else(|| EvgsError::arg("CSV events need sensor width, height and threshold"))?;
            parse_csv(reader, sensor)
        }
        EventFormat::Binary => parse_binary(reader),
    }
}

fn parse_csv(reader: impl Read, sensor: SensorInfo) -> Result<EventStream> {
    let reader = BufReader::new(reader);
    let mut events = Vec::new();
    let mut prev_t = None;
    let mut saw_header = false;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if !saw_header {
            if line.trim() != CSV_HEADER {
                return Err(EvgsError::Parse {
                    line: lineno,
                    message: format!("expected header `{CSV_HEADER}`, found `{line}`"),
                });
            }
            saw_header = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(EvgsError::Parse {
                line: lineno,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let bad = |what: &str, v: &str| EvgsError::Parse {
            line: lineno,
            message: format!("bad {what} `{v}`"),
        };
        let t: i64 = fields[0].parse().map_err(|_| bad("timestamp", fields[0]))?;
        let x: u16 = fields[1].parse().map_err(|_| bad("x", fields[1]))?;
        let y: u16 = fields[2].parse().map_err(|_| bad("y", fields[2]))?;
        let p: i64 = fields[3].parse().map_err(|_| bad("polarity", fields[3]))?;
        if p != 1 && p != -1 {
            return Err(EvgsError::Polarity { line: lineno, value: p });
        }
        let event = Event::new(t, x, y, p as i8);
        validate_event(&event, lineno, sensor.width, sensor.height)?;
        if let Some(prev) = prev_t {
            if t < prev {
                return Err(EvgsError::Ordering {
                    line: lineno,
                    prev: prev as u64,
                    next: t as u64,
                });
            }
        }
        prev_t = Some(t);
        events.push(event);
    }
    if !saw_header {
        return Err(EvgsError::Parse {
            line: 1,
            message: "missing header".into(),
        });
    }
    EventStream::new(events, sensor.width, sensor.height, sensor.threshold)
}

fn parse_binary(mut reader: impl Read) -> Result<EventStream> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() < BINARY_HEADER_LEN || &bytes[..4] != BINARY_MAGIC {
        return Err(EvgsError::Parse {
            line: 0,
            message: "missing EVGS header".into(),
        });
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]);
    let height = u16::from_le_bytes([bytes[6], bytes[7]]);
    let threshold = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[BINARY_HEADER_LEN..];
    if body.len() % BINARY_RECORD_LEN != 0 {
        return Err(EvgsError::Parse {
            line: body.len() / BINARY_RECORD_LEN + 1,
            message: format!("truncated record ({} trailing bytes)", body.len() % BINARY_RECORD_LEN),
        });
    }
    let mut events = Vec::with_capacity(body.len() / BINARY_RECORD_LEN);
    for (i, rec) in body.chunks_exact(BINARY_RECORD_LEN).enumerate() {
        let record = i + 1;
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let t = i64::try_from(t).map_err(|_| EvgsError::Parse {
            line: record,
            message: format!("timestamp {t} out of range"),
        })?;
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        let p = rec[12] as i8;
        events.push(Event::new(t, x, y, p));
    }
    EventStream::new(events, width, height, threshold)
}

/// Serialises a stream; the CSV form drops sensor metadata.
pub fn write_events(stream: &EventStream, format: EventFormat, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    match format {
        EventFormat::Csv => {
            writeln!(w, "{CSV_HEADER}")?;
            for e in stream.events() {
                writeln!(w, "{},{},{},{}", e.t, e.x, e.y, e.p)?;
            }
        }
        EventFormat::Binary => {
            w.write_all(BINARY_MAGIC)?;
            w.write_all(&stream.width.to_le_bytes())?;
            w.write_all(&stream.height.to_le_bytes())?;
            w.write_all(&stream.threshold.to_le_bytes())?;
            for e in stream.events() {
                w.write_all(&(e.t as u64).to_le_bytes())?;
                w.write_all(&e.x.to_le_bytes())?;
                w.write_all(&e.y.to_le_bytes())?;
                w.write_all(&[e.p as u8])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_events_file(path: &Path, sensor: Option<SensorInfo>) -> Result<EventStream> {
    let file = File::open(path).map_err(|e| EvgsError::io(path, e))?;
    parse_events(BufReader::new(file), EventFormat::from_path(path), sensor)
}

pub fn write_events_file(stream: &EventStream, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| EvgsError::io(path, e))?;
    write_events(stream, EventFormat::from_path(path), file)
}

/// Consecutive windows of exactly `k` events; a short remainder is dropped.
pub fn slice_by_count(stream: &EventStream, k: usize) -> Result<Vec<EventWindow>> {
    if k == 0 {
        return Err(EvgsError::arg("k must be at least 1"));
    }
    let events = stream.events();
    let n_windows = events.len() / k;
    Ok((0..n_windows).map(|w| window_at(stream, w * k, k)).collect())
}

/// The window covering events `start..start + k`.
pub(crate) fn window_at(stream: &EventStream, start: usize, k: usize) -> EventWindow {
    let events = stream.events();
    let t1 = if start == 0 {
        events[0].t - 1
    } else {
        events[start - 1].t
    };
    EventWindow {
        t1,
        t2: events[start + k - 1].t,
        range: start..start + k,
    }
}

/// Fixed-duration windows of `dt` microseconds over the stream's span.
/// Only used to pace simulator frames; training slices by count.
pub fn slice_by_time(stream: &EventStream, dt: i64) -> Result<Vec<EventWindow>> {
    if dt <= 0 {
        return Err(EvgsError::arg("dt must be positive"));
    }
    let (Some(start), Some(end)) = (stream.start_bound(), stream.end_time()) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    let mut t1 = start;
    while t1 < end {
        let t2 = (t1 + dt).min(end);
        out.push(EventWindow {
            t1,
            t2,
            range: stream.index_range(t1, t2),
        });
        t1 = t2;
    }
    Ok(out)
}

/// Sums `p * threshold` per pixel over events with `t1 < t <= t2`.
pub fn accumulate_frame(stream: &EventStream, t1: i64, t2: i64) -> Result<EventFrame> {
    if t1 >= t2 {
        return Err(EvgsError::arg(format!(
            "window bounds must satisfy t1 < t2 ({t1} >= {t2})"
        )));
    }
    let range = stream.index_range(t1, t2);
    Ok(accumulate_events(stream, &stream.events()[range], t1, t2))
}

/// Accumulates an explicit slice of events. Counts are summed as integers and
/// scaled once, so every value is an exact multiple of the threshold.
pub fn accumulate_events(stream: &EventStream, events: &[Event], t1: i64, t2: i64) -> EventFrame {
    let (w, h) = (stream.width(), stream.height());
    let mut counts = vec![0i64; w * h];
    for e in events {
        counts[e.y as usize * w + e.x as usize] += e.p as i64;
    }
    EventFrame {
        width: w,
        height: h,
        values: counts.into_iter().map(|c| c as f64 * stream.threshold).collect(),
        t1,
        t2,
    }
}
