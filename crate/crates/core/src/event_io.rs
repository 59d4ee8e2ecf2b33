//! Event file formats.
//!
//! CSV: header `neuron,time_ms,label`, one event per line.
//!
//! Binary (little-endian): magic `SLYR`, version `u16 = 1`, neuron count `u32`,
//! event count `u64`, then per event neuron `u32`, time `f64`, label `i32`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::{SpikeEvent, SpikeTrain};

pub const CSV_HEADER: &str = "neuron,time_ms,label";
pub const BINARY_MAGIC: &[u8; 4] = b"SLYR";
pub const BINARY_VERSION: u16 = 1;

const BINARY_HEADER_LEN: usize = 4 + 2 + 4 + 8;
const BINARY_EVENT_LEN: usize = 4 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledEvent {
    pub neuron: u32,
    pub time_ms: f64,
    pub label: i32,
}

/// Raw contents of an event file, in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpikeTrainSet {
    pub neuron_count: u32,
    pub events: Vec<LabeledEvent>,
}

impl SpikeTrainSet {
    pub fn from_train(train: &SpikeTrain, label: i32) -> Self {
        Self {
            neuron_count: train.neuron_count() as u32,
            events: train
                .events()
                .iter()
                .map(|e| LabeledEvent {
                    neuron: e.neuron as u32,
                    time_ms: e.time_ms,
                    label,
                })
                .collect(),
        }
    }

    /// Converts to a train over `neuron_count` neurons, dropping labels.
    pub fn to_train(&self, neuron_count: usize) -> Result<SpikeTrain> {
        let events = self
            .events
            .iter()
            .map(|e| SpikeEvent {
                neuron: e.neuron as usize,
                time_ms: e.time_ms,
            })
            .collect();
        SpikeTrain::new(neuron_count, events)
    }

    /// The label shared by every event, if there is exactly one.
    pub fn common_label(&self) -> Option<i32> {
        let first = self.events.first()?.label;
        self.events.iter().all(|e| e.label == first).then_some(first)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Binary,
}

impl EventFormat {
    /// `.bin` and `.slyr` are binary; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("slyr") => EventFormat::Binary,
            _ => EventFormat::Csv,
        }
    }
}

pub fn read_events(path: impl AsRef<Path>) -> Result<SpikeTrainSet> {
    let path = path.as_ref();
    match EventFormat::from_path(path) {
        EventFormat::Csv => read_csv(BufReader::new(fs::File::open(path)?)),
        EventFormat::Binary => decode_binary(&fs::read(path)?),
    }
}

pub fn write_events(path: impl AsRef<Path>, set: &SpikeTrainSet) -> Result<()> {
    let path = path.as_ref();
    match EventFormat::from_path(path) {
        EventFormat::Csv => {
            let mut w = BufWriter::new(fs::File::create(path)?);
            write_csv(&mut w, set)?;
            w.flush()?;
        }
        EventFormat::Binary => fs::write(path, encode_binary(set))?,
    }
    Ok(())
}

/// The CSV format carries no neuron count; it is inferred as `max(neuron) + 1`.
pub fn read_csv<R: BufRead>(reader: R) -> Result<SpikeTrainSet> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(Error::parse("line 1", "missing header")),
    };
    if header.trim() != CSV_HEADER {
        return Err(Error::parse("line 1", format!("expected header {CSV_HEADER:?}, got {header:?}")));
    }
    let mut set = SpikeTrainSet::default();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let lineno = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let event = parse_csv_line(&line).map_err(|msg| Error::parse(format!("line {lineno}"), msg))?;
        set.neuron_count = set.neuron_count.max(event.neuron + 1);
        set.events.push(event);
    }
    Ok(set)
}

fn parse_csv_line(line: &str) -> Result<LabeledEvent, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 3 {
        return Err(format!("expected 3 fields, got {}", fields.len()));
    }
    let neuron = fields[0]
        .parse::<u32>()
        .map_err(|e| format!("bad neuron {:?}: {e}", fields[0]))?;
    let time_ms = fields[1]
        .parse::<f64>()
        .map_err(|e| format!("bad time {:?}: {e}", fields[1]))?;
    if !time_ms.is_finite() {
        return Err(format!("non-finite time {time_ms}"));
    }
    let label = fields[2]
        .parse::<i32>()
        .map_err(|e| format!("bad label {:?}: {e}", fields[2]))?;
    Ok(LabeledEvent { neuron, time_ms, label })
}

pub fn write_csv<W: Write>(w: &mut W, set: &SpikeTrainSet) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for e in &set.events {
        // `{}` on f64 prints the shortest representation that parses back exactly.
        writeln!(w, "{},{},{}", e.neuron, e.time_ms, e.label)?;
    }
    Ok(())
}

pub fn encode_binary(set: &SpikeTrainSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(BINARY_HEADER_LEN + set.events.len() * BINARY_EVENT_LEN);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&set.neuron_count.to_le_bytes());
    out.extend_from_slice(&(set.events.len() as u64).to_le_bytes());
    for e in &set.events {
        out.extend_from_slice(&e.neuron.to_le_bytes());
        out.extend_from_slice(&e.time_ms.to_le_bytes());
        out.extend_from_slice(&e.label.to_le_bytes());
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<SpikeTrainSet> {
    if bytes.len() < BINARY_HEADER_LEN {
        return Err(Error::parse(
            format!("offset {}", bytes.len()),
            format!("truncated header ({} of {BINARY_HEADER_LEN} bytes)", bytes.len()),
        ));
    }
    if &bytes[0..4] != BINARY_MAGIC {
        return Err(Error::parse("offset 0", format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != BINARY_VERSION {
        return Err(Error::parse("offset 4", format!("unsupported version {version}")));
    }
    let neuron_count = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let event_count = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
    let body = &bytes[BINARY_HEADER_LEN..];
    let expected = (event_count as u128) * BINARY_EVENT_LEN as u128;
    if (body.len() as u128) != expected {
        return Err(Error::parse(
            format!("offset {}", bytes.len()),
            format!(
                "{event_count} events need {expected} body bytes, found {}",
                body.len()
            ),
        ));
    }
    let events = body
        .chunks_exact(BINARY_EVENT_LEN)
        .map(|chunk| LabeledEvent {
            neuron: u32::from_le_bytes(chunk[0..4].try_into().unwrap()),
            time_ms: f64::from_le_bytes(chunk[4..12].try_into().unwrap()),
            label: i32::from_le_bytes(chunk[12..16].try_into().unwrap()),
        })
        .collect();
    Ok(SpikeTrainSet { neuron_count, events })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_line_definition() {
        let set = read_csv(format!("{CSV_HEADER}\n3,12.5,1\n").as_bytes()).unwrap();
        assert_eq!(
            set.events,
            vec![LabeledEvent {
                neuron: 3,
                time_ms: 12.5,
                label: 1
            }]
        );
        assert_eq!(set.neuron_count, 4);
    }

    #[test]
    fn empty_files_with_header() {
        let set = read_csv(format!("{CSV_HEADER}\n").as_bytes()).unwrap();
        assert!(set.events.is_empty());
        let set = decode_binary(&encode_binary(&SpikeTrainSet::default())).unwrap();
        assert!(set.events.is_empty());
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let err = read_csv(format!("{CSV_HEADER}\n1,2.0,0\n1,abc,0\n").as_bytes()).unwrap_err();
        match err {
            Error::Parse { location, .. } => assert_eq!(location, "line 3"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_csv("time,neuron\n".as_bytes()).is_err());
        assert!(read_csv("".as_bytes()).is_err());
        assert!(read_csv(format!("{CSV_HEADER}\n1,2.0\n").as_bytes()).is_err());
    }

    #[test]
    fn binary_errors() {
        let set = SpikeTrainSet {
            neuron_count: 2,
            events: vec![LabeledEvent {
                neuron: 1,
                time_ms: 0.5,
                label: -1,
            }],
        };
        let bytes = encode_binary(&set);
        assert_eq!(bytes.len(), 18 + 16);
        assert!(decode_binary(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_binary(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_binary(&bad), Err(Error::Parse { .. })));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(decode_binary(&bad).is_err());
    }

    #[test]
    fn common_label() {
        let mut set = SpikeTrainSet::default();
        assert_eq!(set.common_label(), None);
        set.events.push(LabeledEvent { neuron: 0, time_ms: 1.0, label: 4 });
        set.events.push(LabeledEvent { neuron: 1, time_ms: 2.0, label: 4 });
        assert_eq!(set.common_label(), Some(4));
        set.events.push(LabeledEvent { neuron: 1, time_ms: 3.0, label: 2 });
        assert_eq!(set.common_label(), None);
    }
}
