//! Canonical recording CSV and frame replay.
//!
//! ```text
//! #popa-recording v1
//! #subject=<id>,session=<id>
//! timestamp_ms,s00,s01,...,s15
//! 0,512,498,...
//! ```
//!
//! Data rows are 17 base-10 integers, LF endings, no quoting.

use std::fmt::Write as _;
use std::io::BufRead;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::{CANONICAL_SESSION_FRAMES, MAX_READING, SENSOR_COUNT};

pub const RECORDING_MAGIC: &str = "#popa-recording v1";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: sensor s{sensor:02} reading {value} outside 0..=1023")]
    OutOfRange { line: usize, sensor: usize, value: i64 },
    #[error("line {line}: timestamp {timestamp_ms} does not increase on previous {previous_ms}")]
    NonMonotonicTimestamp { line: usize, timestamp_ms: u64, previous_ms: u64 },
    #[error("line {line}: bad header: expected {expected}")]
    BadHeader { line: usize, expected: String },
    #[error("invalid label {0:?}: must be nonempty and free of ',', '=', '#' and whitespace")]
    InvalidLabel(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl IngestError {
    /// 1-based line the error refers to, when there is one.
    pub fn line(&self) -> Option<usize> {
        match self {
            IngestError::MalformedRow { line, .. }
            | IngestError::OutOfRange { line, .. }
            | IngestError::NonMonotonicTimestamp { line, .. }
            | IngestError::BadHeader { line, .. } => Some(*line),
            IngestError::InvalidLabel(_) | IngestError::Io(_) => None,
        }
    }
}

/// One 0.5 s snapshot of all sixteen sensors, in raw ADC counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SensorFrame {
    timestamp_ms: u64,
    readings: [u16; SENSOR_COUNT],
}

impl SensorFrame {
    /// Fails with the offending sensor index if any reading exceeds 1023.
    pub fn new(timestamp_ms: u64, readings: [u16; SENSOR_COUNT]) -> Result<Self, usize> {
        match readings.iter().position(|&r| r > MAX_READING) {
            Some(sensor) => Err(sensor),
            None => Ok(SensorFrame { timestamp_ms, readings }),
        }
    }

    /// All sensors at zero: an empty chair.
    pub fn vacant(timestamp_ms: u64) -> Self {
        SensorFrame { timestamp_ms, readings: [0; SENSOR_COUNT] }
    }

    pub fn timestamp_ms(&self) -> u64 {
        self.timestamp_ms
    }

    pub fn readings(&self) -> &[u16; SENSOR_COUNT] {
        &self.readings
    }

    pub fn total(&self) -> u32 {
        self.readings.iter().map(|&r| u32::from(r)).sum()
    }

    /// Same readings, different timestamp.
    pub fn retimed(&self, timestamp_ms: u64) -> Self {
        SensorFrame { timestamp_ms, readings: self.readings }
    }
}

/// Checks a subject or session label for use in headers and file names.
pub fn validate_label(label: &str) -> Result<(), IngestError> {
    let bad = label.is_empty()
        || label.chars().any(|c| c == ',' || c == '=' || c == '#' || c.is_whitespace() || c.is_control());
    if bad {
        Err(IngestError::InvalidLabel(label.to_string()))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionRecording {
    subject_id: String,
    session_id: String,
    frames: Vec<SensorFrame>,
}

impl SessionRecording {
    pub fn new(
        subject_id: impl Into<String>,
        session_id: impl Into<String>,
        frames: Vec<SensorFrame>,
    ) -> Result<Self, IngestError> {
        let subject_id = subject_id.into();
        let session_id = session_id.into();
        validate_label(&subject_id)?;
        validate_label(&session_id)?;
        for (i, pair) in frames.windows(2).enumerate() {
            if pair[1].timestamp_ms <= pair[0].timestamp_ms {
                return Err(IngestError::NonMonotonicTimestamp {
                    // header occupies lines 1-3, frame i+1 sits on line i+5
                    line: i + 5,
                    timestamp_ms: pair[1].timestamp_ms,
                    previous_ms: pair[0].timestamp_ms,
                });
            }
        }
        Ok(SessionRecording { subject_id, session_id, frames })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn frames(&self) -> &[SensorFrame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<SensorFrame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// A full 10-minute capture. Other lengths are legal but flagged.
    pub fn is_canonical(&self) -> bool {
        self.frames.len() == CANONICAL_SESSION_FRAMES
    }

    /// The first `n` frames (or all of them) under the same labels.
    pub fn truncated(&self, n: usize) -> SessionRecording {
        SessionRecording {
            subject_id: self.subject_id.clone(),
            session_id: self.session_id.clone(),
            frames: self.frames[..n.min(self.frames.len())].to_vec(),
        }
    }

    pub fn with_session_id(mut self, session_id: impl Into<String>) -> Result<Self, IngestError> {
        let session_id = session_id.into();
        validate_label(&session_id)?;
        self.session_id = session_id;
        Ok(self)
    }
}

fn column_header() -> String {
    let mut s = String::from("timestamp_ms");
    for i in 0..SENSOR_COUNT {
        let _ = write!(s, ",s{i:02}");
    }
    s
}

/// Parses a canonical recording. Line numbers in errors are 1-based.
pub fn parse_csv<R: BufRead>(reader: R) -> Result<SessionRecording, IngestError> {
    let mut lines = reader.lines();
    let mut next_line = |n: usize, expected: &str| -> Result<String, IngestError> {
        match lines.next() {
            Some(line) => Ok(line?),
            None => Err(IngestError::BadHeader { line: n, expected: expected.to_string() }),
        }
    };

    let magic = next_line(1, RECORDING_MAGIC)?;
    if magic.trim_end_matches('\r') != RECORDING_MAGIC {
        return Err(IngestError::BadHeader { line: 1, expected: RECORDING_MAGIC.to_string() });
    }
    let meta_expected = "#subject=<id>,session=<id>";
    let meta = next_line(2, meta_expected)?;
    let (subject_id, session_id) = meta
        .trim_end_matches('\r')
        .strip_prefix("#subject=")
        .and_then(|rest| rest.split_once(",session="))
        .ok_or_else(|| IngestError::BadHeader { line: 2, expected: meta_expected.to_string() })?;
    let (subject_id, session_id) = (subject_id.to_string(), session_id.to_string());
    validate_label(&subject_id)?;
    validate_label(&session_id)?;
    let header = column_header();
    let cols = next_line(3, &header)?;
    if cols.trim_end_matches('\r') != header {
        return Err(IngestError::BadHeader { line: 3, expected: header });
    }

    let mut frames: Vec<SensorFrame> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 4;
        let line = line?;
        let frame = parse_row(line.trim_end_matches('\r'), line_no)?;
        if let Some(prev) = frames.last() {
            if frame.timestamp_ms <= prev.timestamp_ms {
                return Err(IngestError::NonMonotonicTimestamp {
                    line: line_no,
                    timestamp_ms: frame.timestamp_ms,
                    previous_ms: prev.timestamp_ms,
                });
            }
        }
        frames.push(frame);
    }
    Ok(SessionRecording { subject_id, session_id, frames })
}

pub fn parse_csv_str(text: &str) -> Result<SessionRecording, IngestError> {
    parse_csv(text.as_bytes())
}

fn parse_row(line: &str, line_no: usize) -> Result<SensorFrame, IngestError> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != SENSOR_COUNT + 1 {
        return Err(IngestError::MalformedRow {
            line: line_no,
            reason: format!("expected {} columns, found {}", SENSOR_COUNT + 1, fields.len()),
        });
    }
    let int = |field: &str| -> Result<i64, IngestError> {
        field.parse::<i64>().map_err(|_| IngestError::MalformedRow {
            line: line_no,
            reason: format!("not an integer: {field:?}"),
        })
    };
    let ts = int(fields[0])?;
    if ts < 0 {
        return Err(IngestError::MalformedRow {
            line: line_no,
            reason: format!("negative timestamp {ts}"),
        });
    }
    let mut readings = [0u16; SENSOR_COUNT];
    for (sensor, field) in fields[1..].iter().enumerate() {
        let value = int(field)?;
        if !(0..=i64::from(MAX_READING)).contains(&value) {
            return Err(IngestError::OutOfRange { line: line_no, sensor, value });
        }
        readings[sensor] = value as u16;
    }
    Ok(SensorFrame { timestamp_ms: ts as u64, readings })
}

/// Serializes a recording; `parse_csv` inverts this exactly.
pub fn write_csv(recording: &SessionRecording) -> String {
    let mut out = String::with_capacity(80 + recording.frames.len() * 80);
    out.push_str(RECORDING_MAGIC);
    out.push('\n');
    let _ = writeln!(out, "#subject={},session={}", recording.subject_id, recording.session_id);
    out.push_str(&column_header());
    out.push('\n');
    for frame in &recording.frames {
        let _ = write!(out, "{}", frame.timestamp_ms);
        for r in frame.readings {
            let _ = write!(out, ",{r}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pace {
    AsFast,
    /// Sleep so that wall-clock gaps match timestamp gaps.
    RealTime,
}

/// Frame iterator over a recording.
pub struct Replay<'a> {
    frames: std::slice::Iter<'a, SensorFrame>,
    pace: Pace,
    origin: Option<(Instant, u64)>,
}

pub fn replay(recording: &SessionRecording, pace: Pace) -> Replay<'_> {
    Replay { frames: recording.frames.iter(), pace, origin: None }
}

impl<'a> Iterator for Replay<'a> {
    type Item = &'a SensorFrame;

    fn next(&mut self) -> Option<Self::Item> {
        let frame = self.frames.next()?;
        if self.pace == Pace::RealTime {
            match self.origin {
                None => self.origin = Some((Instant::now(), frame.timestamp_ms)),
                Some((start, t0)) => {
                    let due = start + Duration::from_millis(frame.timestamp_ms - t0);
                    let now = Instant::now();
                    if due > now {
                        thread::sleep(due - now);
                    }
                }
            }
        }
        Some(frame)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.frames.size_hint()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::FRAME_PERIOD_MS;

    fn header(subject: &str, session: &str) -> String {
        format!("{RECORDING_MAGIC}\n#subject={subject},session={session}\n{}\n", column_header())
    }

    fn row(ts: u64, value: u32) -> String {
        let mut s = ts.to_string();
        for _ in 0..SENSOR_COUNT {
            s.push_str(&format!(",{value}"));
        }
        s.push('\n');
        s
    }

    fn uniform_recording(n: usize) -> SessionRecording {
        let frames = (0..n)
            .map(|i| SensorFrame::new(i as u64 * FRAME_PERIOD_MS, [i as u16 % 1024; SENSOR_COUNT]).unwrap())
            .collect();
        SessionRecording::new("s01", "1", frames).unwrap()
    }

    #[test]
    fn zero_row_parses() {
        let text = header("alice", "a") + &row(0, 0);
        let rec = parse_csv_str(&text).unwrap();
        assert_eq!(rec.subject_id(), "alice");
        assert_eq!(rec.session_id(), "a");
        assert_eq!(rec.len(), 1);
        assert_eq!(rec.frames()[0].readings(), &[0; SENSOR_COUNT]);
        assert!(!rec.is_canonical());
    }

    #[test]
    fn canonical_session_parses() {
        let mut text = header("s", "1");
        for i in 0..1200 {
            text.push_str(&row(i * 500, 300));
        }
        let rec = parse_csv_str(&text).unwrap();
        assert_eq!(rec.len(), 1200);
        assert!(rec.is_canonical());
    }

    #[test]
    fn reading_1024_is_out_of_range() {
        let text = header("s", "1") + &row(0, 5) + &row(500, 1024);
        match parse_csv_str(&text) {
            Err(IngestError::OutOfRange { line, sensor, value }) => {
                assert_eq!((line, sensor, value), (5, 0, 1024));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_non_monotonic_rows() {
        let short = header("s", "1") + "0,1,2\n";
        assert!(matches!(parse_csv_str(&short), Err(IngestError::MalformedRow { line: 4, .. })));
        let junk = header("s", "1") + &row(0, 1).replace(",1,", ",x,");
        assert!(matches!(parse_csv_str(&junk), Err(IngestError::MalformedRow { line: 4, .. })));
        let back = header("s", "1") + &row(500, 1) + &row(500, 1);
        assert!(matches!(
            parse_csv_str(&back),
            Err(IngestError::NonMonotonicTimestamp { line: 5, .. })
        ));
        let neg = header("s", "1") + &row(0, 1).replacen("0,", "-5,", 1);
        assert!(matches!(parse_csv_str(&neg), Err(IngestError::MalformedRow { line: 4, .. })));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(parse_csv_str(""), Err(IngestError::BadHeader { line: 1, .. })));
        let v2 = header("s", "1").replace("v1", "v2");
        assert!(matches!(parse_csv_str(&v2), Err(IngestError::BadHeader { line: 1, .. })));
        let meta = header("s", "1").replace("#subject=s,", "#subj=s,");
        assert!(matches!(parse_csv_str(&meta), Err(IngestError::BadHeader { line: 2, .. })));
        let cols = header("s", "1").replace("s15", "s16");
        assert!(matches!(parse_csv_str(&cols), Err(IngestError::BadHeader { line: 3, .. })));
    }

    #[test]
    fn empty_recording_writes_header_only() {
        let rec = SessionRecording::new("x", "y", vec![]).unwrap();
        let text = write_csv(&rec);
        assert_eq!(text.lines().count(), 3);
        assert_eq!(parse_csv_str(&text).unwrap(), rec);
    }

    #[test]
    fn labels_are_validated() {
        assert!(SessionRecording::new("a,b", "1", vec![]).is_err());
        assert!(SessionRecording::new("", "1", vec![]).is_err());
        assert!(SessionRecording::new("a", "x=y", vec![]).is_err());
    }

    #[test]
    fn new_rejects_out_of_order_frames() {
        let frames = vec![SensorFrame::vacant(10), SensorFrame::vacant(5)];
        assert!(matches!(
            SessionRecording::new("a", "b", frames),
            Err(IngestError::NonMonotonicTimestamp { .. })
        ));
        assert_eq!(SensorFrame::new(0, [1024; SENSOR_COUNT]), Err(0));
    }

    #[test]
    fn replay_as_fast_preserves_order() {
        let rec = uniform_recording(3);
        let out: Vec<_> = replay(&rec, Pace::AsFast).copied().collect();
        assert_eq!(out, rec.frames());

        let full = uniform_recording(1200);
        let out: Vec<_> = replay(&full, Pace::AsFast).collect();
        assert_eq!(out.len(), 1200);
        assert_eq!(out.last().unwrap().timestamp_ms(), 599_500);
    }

    #[test]
    fn replay_real_time_honors_gaps() {
        let rec = uniform_recording(4);
        let start = Instant::now();
        let n = replay(&rec, Pace::RealTime).count();
        assert_eq!(n, 4);
        assert!(start.elapsed() >= Duration::from_millis(1500));
    }
}
