//! Timestamp records and their CSV and binary file formats.
//!
//! CSV: header `channel,time_ps`, then one `channel,time` line per record.
//! Binary: flat 16-byte records, byte 0 the channel, bytes 1–7 zero,
//! bytes 8–15 the time in ps as little-endian u64. No header.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use thiserror::Error;

use crate::time::Time;

pub const CSV_HEADER: &str = "channel,time_ps";
pub const RECORD_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimestampRecord {
    pub channel: u8,
    pub time: Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Binary,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Binary => "bin",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "binary" | "bin" => Ok(Format::Binary),
            other => Err(format!("unknown timestamp format `{other}` (expected csv or binary)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum TimestampError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("byte offset {offset}: {message}")]
    MalformedRecord { offset: usize, message: String },
    #[error("truncated binary file: {len} bytes is not a multiple of {RECORD_BYTES} (partial record at offset {offset})")]
    Truncated { len: usize, offset: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Non-fatal findings while reading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadWarning {
    /// A record earlier than the previous one on the same channel.
    NonMonotonic { index: usize, channel: u8 },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReadOutcome {
    pub records: Vec<TimestampRecord>,
    pub warnings: Vec<ReadWarning>,
}

fn check_monotonic(records: &[TimestampRecord]) -> Vec<ReadWarning> {
    let mut last = [None::<Time>; 256];
    let mut warnings = Vec::new();
    for (index, r) in records.iter().enumerate() {
        let slot = &mut last[r.channel as usize];
        if slot.is_some_and(|prev| r.time < prev) {
            warnings.push(ReadWarning::NonMonotonic {
                index,
                channel: r.channel,
            });
        }
        *slot = Some(r.time);
    }
    warnings
}

pub fn write_csv<W: Write>(records: &[TimestampRecord], sink: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(sink);
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{},{}", r.channel, r.time.ps())?;
    }
    w.flush()
}

pub fn read_csv<R: Read>(source: R) -> Result<ReadOutcome, TimestampError> {
    let reader = BufReader::new(source);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || (idx == 0 && trimmed == CSV_HEADER) {
            continue;
        }
        let malformed = |message: String| TimestampError::Malformed {
            line: lineno,
            message,
        };
        let (ch, t) = trimmed
            .split_once(',')
            .ok_or_else(|| malformed(format!("expected `channel,time_ps`, got `{trimmed}`")))?;
        let channel = ch
            .trim()
            .parse::<u8>()
            .map_err(|e| malformed(format!("bad channel `{ch}`: {e}")))?;
        let time = t
            .trim()
            .parse::<u64>()
            .map_err(|e| malformed(format!("bad time `{t}`: {e}")))?;
        records.push(TimestampRecord {
            channel,
            time: Time(time),
        });
    }
    let warnings = check_monotonic(&records);
    Ok(ReadOutcome { records, warnings })
}

pub fn encode_record(r: &TimestampRecord) -> [u8; RECORD_BYTES] {
    let mut buf = [0u8; RECORD_BYTES];
    buf[0] = r.channel;
    buf[8..].copy_from_slice(&r.time.ps().to_le_bytes());
    buf
}

pub fn decode_record(buf: &[u8], offset: usize) -> Result<TimestampRecord, TimestampError> {
    debug_assert_eq!(buf.len(), RECORD_BYTES);
    if buf[1..8].iter().any(|b| *b != 0) {
        return Err(TimestampError::MalformedRecord {
            offset,
            message: "reserved bytes 1-7 are not zero".into(),
        });
    }
    let mut t = [0u8; 8];
    t.copy_from_slice(&buf[8..]);
    Ok(TimestampRecord {
        channel: buf[0],
        time: Time(u64::from_le_bytes(t)),
    })
}

pub fn write_binary<W: Write>(records: &[TimestampRecord], sink: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(sink);
    for r in records {
        w.write_all(&encode_record(r))?;
    }
    w.flush()
}

pub fn read_binary<R: Read>(mut source: R) -> Result<ReadOutcome, TimestampError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(TimestampError::Truncated {
            len: bytes.len(),
            offset: bytes.len() - bytes.len() % RECORD_BYTES,
        });
    }
    let records = bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(k, chunk)| decode_record(chunk, k * RECORD_BYTES))
        .collect::<Result<Vec<_>, _>>()?;
    let warnings = check_monotonic(&records);
    Ok(ReadOutcome { records, warnings })
}

pub fn write_timestamps<W: Write>(
    records: &[TimestampRecord],
    format: Format,
    sink: W,
) -> std::io::Result<()> {
    match format {
        Format::Csv => write_csv(records, sink),
        Format::Binary => write_binary(records, sink),
    }
}

pub fn read_timestamps<R: Read>(format: Format, source: R) -> Result<ReadOutcome, TimestampError> {
    match format {
        Format::Csv => read_csv(source),
        Format::Binary => read_binary(source),
    }
}

/// Splits records into per-channel time streams, preserving order.
pub fn partition_channels(records: &[TimestampRecord]) -> std::collections::BTreeMap<u8, Vec<Time>> {
    let mut out: std::collections::BTreeMap<u8, Vec<Time>> = Default::default();
    for r in records {
        out.entry(r.channel).or_default().push(r.time);
    }
    out
}
