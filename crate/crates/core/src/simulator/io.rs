//! Event stream files.
//!
//! CSV: header `t,x,y,p,t_prev`, times with 9 decimals, `p` in {-1, 1}.
//!
//! Binary (little endian): a 16-byte header `EVBLURB\0`, `u16` version,
//! `u16` width, `u16` height, `u16` reserved; then 21-byte records
//! `f64 t, u16 x, u16 y, i8 p, f64 t_prev`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::event_core::{Event, Pixel, Polarity};

use super::{EventStream, StreamHeader};

pub const BINARY_MAGIC: [u8; 8] = *b"EVBLURB\0";
pub const BINARY_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;
const RECORD_LEN: usize = 21;
const CSV_HEADER: &str = "t,x,y,p,t_prev";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Binary,
}

impl FromStr for EventFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "bin" | "binary" => Ok(Self::Binary),
            other => Err(Error::invalid(format!("unknown event format `{other}`"))),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

pub fn write_events(path: &Path, stream: &EventStream, format: EventFormat) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    match format {
        EventFormat::Csv => write_csv(&mut w, stream),
        EventFormat::Binary => write_binary(&mut w, stream),
    }
    .and_then(|_| w.flush())
    .map_err(io_err(path))
}

fn write_csv<W: Write>(w: &mut W, stream: &EventStream) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for e in &stream.events {
        writeln!(
            w,
            "{:.9},{},{},{},{:.9}",
            e.t_curr,
            e.pixel.x,
            e.pixel.y,
            e.polarity.as_i8(),
            e.t_prev
        )?;
    }
    Ok(())
}

fn write_binary<W: Write>(w: &mut W, stream: &EventStream) -> std::io::Result<()> {
    let mut header = [0u8; HEADER_LEN];
    header[..8].copy_from_slice(&BINARY_MAGIC);
    header[8..10].copy_from_slice(&BINARY_VERSION.to_le_bytes());
    header[10..12].copy_from_slice(&stream.header.width.to_le_bytes());
    header[12..14].copy_from_slice(&stream.header.height.to_le_bytes());
    w.write_all(&header)?;
    let mut rec = [0u8; RECORD_LEN];
    for e in &stream.events {
        rec[0..8].copy_from_slice(&e.t_curr.to_le_bytes());
        rec[8..10].copy_from_slice(&e.pixel.x.to_le_bytes());
        rec[10..12].copy_from_slice(&e.pixel.y.to_le_bytes());
        rec[12] = e.polarity.as_i8() as u8;
        rec[13..21].copy_from_slice(&e.t_prev.to_le_bytes());
        w.write_all(&rec)?;
    }
    Ok(())
}

/// Reads a stream written by [`write_events`]; the format is detected from
/// the leading bytes. CSV files carry no header, so resolution is inferred
/// from the largest coordinates and the fingerprint is 0.
pub fn read_events(path: &Path) -> Result<EventStream> {
    let mut file = File::open(path).map_err(io_err(path))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(io_err(path))?;
    if bytes.starts_with(&BINARY_MAGIC) {
        parse_binary(&bytes)
    } else {
        parse_csv(BufReader::new(bytes.as_slice()))
    }
}

fn span(events: &[Event]) -> (f64, f64) {
    let t_start = events.iter().map(|e| e.t_prev).fold(f64::INFINITY, f64::min);
    let t_end = events.iter().map(|e| e.t_curr).fold(f64::NEG_INFINITY, f64::max);
    if events.is_empty() {
        (0.0, 0.0)
    } else {
        (t_start.min(t_end), t_end - t_start.min(t_end))
    }
}

fn parse_binary(bytes: &[u8]) -> Result<EventStream> {
    let bad = |offset: usize, message: &str| Error::ParseOffset { offset: offset as u64, message: message.into() };
    if bytes.len() < HEADER_LEN {
        return Err(bad(bytes.len(), "truncated header"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u16_at(8);
    if version != BINARY_VERSION {
        return Err(bad(8, &format!("unsupported version {version}")));
    }
    let (width, height) = (u16_at(10), u16_at(12));
    let body = bytes.len() - HEADER_LEN;
    if !body.is_multiple_of(RECORD_LEN) {
        let last = HEADER_LEN + body / RECORD_LEN * RECORD_LEN;
        return Err(bad(last, "truncated record"));
    }
    let mut events = Vec::with_capacity(body / RECORD_LEN);
    for o in (HEADER_LEN..bytes.len()).step_by(RECORD_LEN) {
        let p = bytes[o + 12] as i8;
        let polarity = Polarity::from_i8(p).ok_or_else(|| bad(o + 12, &format!("polarity {p}")))?;
        let (t_curr, t_prev) = (f64_at(o), f64_at(o + 13));
        if !t_curr.is_finite() || !t_prev.is_finite() {
            return Err(bad(o, "non-finite timestamp"));
        }
        events.push(Event { pixel: Pixel::new(u16_at(o + 8), u16_at(o + 10)), polarity, t_prev, t_curr });
    }
    let (t_start, duration) = span(&events);
    Ok(EventStream { header: StreamHeader { width, height, t_start, duration, fingerprint: 0 }, events })
}

fn parse_csv<R: BufRead>(reader: R) -> Result<EventStream> {
    let mut events = Vec::new();
    let (mut max_x, mut max_y) = (None::<u16>, None::<u16>);
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let bad = |message: String| Error::ParseLine { line: lineno, message };
        let line = line.map_err(|e| bad(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if lineno == 1 {
            if line != CSV_HEADER {
                return Err(bad(format!("expected header `{CSV_HEADER}`")));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", fields.len())));
        }
        let time = |s: &str, name: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("bad {name} `{s}`")))
        };
        let coord = |s: &str, name: &str| s.parse::<u16>().map_err(|_| bad(format!("bad {name} `{s}`")));
        let t_curr = time(fields[0], "t")?;
        let x = coord(fields[1], "x")?;
        let y = coord(fields[2], "y")?;
        let polarity = fields[3]
            .parse::<i8>()
            .ok()
            .and_then(Polarity::from_i8)
            .ok_or_else(|| bad(format!("bad polarity `{}`", fields[3])))?;
        let t_prev = time(fields[4], "t_prev")?;
        max_x = max_x.max(Some(x));
        max_y = max_y.max(Some(y));
        events.push(Event { pixel: Pixel::new(x, y), polarity, t_prev, t_curr });
    }
    let dim = |m: Option<u16>| m.map_or(0, |v| v.saturating_add(1));
    let (t_start, duration) = span(&events);
    let header = StreamHeader { width: dim(max_x), height: dim(max_y), t_start, duration, fingerprint: 0 };
    Ok(EventStream { header, events })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_stream() -> EventStream {
        let events = vec![
            Event { pixel: Pixel::new(1, 2), polarity: Polarity::Positive, t_prev: 0.0, t_curr: 0.001 },
            Event { pixel: Pixel::new(3, 0), polarity: Polarity::Negative, t_prev: 0.0005, t_curr: 0.0025 },
        ];
        EventStream {
            header: StreamHeader { width: 4, height: 3, t_start: 0.0, duration: 0.0025, fingerprint: 0 },
            events,
        }
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        let s = sample_stream();
        write_events(&p, &s, EventFormat::Binary).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 16 + 2 * 21);
        let r = read_events(&p).unwrap();
        assert_eq!(r.events, s.events);
        assert_eq!((r.header.width, r.header.height), (4, 3));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let s = sample_stream();
        write_events(&p, &s, EventFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t,x,y,p,t_prev\n0.001000000,1,2,1,0.000000000\n"));
        let r = read_events(&p).unwrap();
        assert_eq!(r.events, s.events);
    }

    #[test]
    fn parse_errors_locate_the_problem() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "t,x,y,p,t_prev\n0.1,1,1,1,0\n0.2,1,1,0,0.1\n").unwrap();
        match read_events(&p) {
            Err(Error::ParseLine { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let b = dir.path().join("bad.bin");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&BINARY_MAGIC);
        bytes.extend_from_slice(&[1, 0, 4, 0, 4, 0, 0, 0]);
        bytes.extend_from_slice(&[0u8; 21]);
        bytes.extend_from_slice(&[0u8; 5]);
        std::fs::write(&b, &bytes).unwrap();
        match read_events(&b) {
            Err(Error::ParseOffset { offset, .. }) => assert_eq!(offset, 37),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn format_names() {
        assert_eq!("csv".parse::<EventFormat>().unwrap(), EventFormat::Csv);
        assert_eq!("BIN".parse::<EventFormat>().unwrap(), EventFormat::Binary);
        assert!("json".parse::<EventFormat>().is_err());
    }
}
