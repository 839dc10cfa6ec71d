//! DAVIS 240C event ingestion.
//!
//! Text events are `t x y p` lines with `t` in decimal seconds. In memory an
//! [`Event`] keeps the full microsecond timestamp; the hardware-facing
//! [`PackedWord42`] keeps only the low 25 bits of it.
//!
//! Packed layout (bit 41 is the most significant used bit):
//!
//! ```text
//!  41                17 16      9 8       1  0
//! +--------------------+---------+---------+---+
//! | t_us mod 2^25      |    x    |    y    | p |
//! +--------------------+---------+---------+---+
//! ```

mod ev42;
mod raster;
mod synth;

use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ev42::{read_ev42, write_ev42, EV42_MAGIC, EV42_VERSION, RECORD_BYTES};
pub use raster::{encode_raster, PolarityMode, RasterError, RasterSpec, Roi, SpikeRaster};
pub use synth::{Quadrant, QuadrantWorkload, Workload};

/// Sensor columns (x in `0..240`).
pub const SENSOR_WIDTH: u16 = 240;
/// Sensor rows (y in `0..180`).
pub const SENSOR_HEIGHT: u16 = 180;

pub const TIMESTAMP_BITS: u32 = 25;
pub const TIMESTAMP_MASK: u64 = (1 << TIMESTAMP_BITS) - 1;
pub const WORD_BITS: u32 = 42;
pub const WORD_MASK: u64 = (1 << WORD_BITS) - 1;

const T_SHIFT: u32 = 17;
const X_SHIFT: u32 = 9;
const Y_SHIFT: u32 = 1;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("expected 4 fields `t x y p`, found {found}")]
    FieldCount { found: usize },
    #[error("invalid {field} token `{token}`")]
    BadToken { field: &'static str, token: String },
    #[error("x = {0} outside sensor columns 0..=239")]
    ColumnOutOfRange(i64),
    #[error("y = {0} outside sensor rows 0..=179")]
    RowOutOfRange(i64),
    #[error("negative timestamp {0} s")]
    NegativeTimestamp(f64),
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<EventError>,
    },
    #[error("line {line}: timestamp regression ({previous_us} us followed by {current_us} us)")]
    TimestampRegression {
        line: usize,
        previous_us: u64,
        current_us: u64,
    },
    #[error("packed word {0:#x} has bits set above bit 41")]
    HighBits(u64),
    #[error("packed word decodes to invalid pixel column {0}")]
    InvalidColumn(u16),
    #[error("packed word decodes to invalid pixel row {0}")]
    InvalidRow(u16),
    #[error("not an ev42 stream (bad magic)")]
    BadMagic,
    #[error("unsupported ev42 version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated ev42 record at byte offset {offset}")]
    TruncatedRecord { offset: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EventError {
    fn at_line(self, line: usize) -> Self {
        EventError::AtLine {
            line,
            source: Box::new(self),
        }
    }

    /// Line number for parse errors, if known.
    pub fn line(&self) -> Option<usize> {
        match self {
            EventError::AtLine { line, .. } | EventError::TimestampRegression { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Off = 0,
    On = 1,
}

impl Polarity {
    pub fn bit(self) -> u64 {
        self as u64
    }

    pub fn from_bit(bit: u64) -> Self {
        if bit & 1 == 1 {
            Polarity::On
        } else {
            Polarity::Off
        }
    }
}

/// One DVS event. Construct with [`Event::new`] to get bounds checking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub t_us: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(t_us: u64, x: u16, y: u16, polarity: Polarity) -> Result<Self, EventError> {
        if x >= SENSOR_WIDTH {
            return Err(EventError::ColumnOutOfRange(x as i64));
        }
        if y >= SENSOR_HEIGHT {
            return Err(EventError::RowOutOfRange(y as i64));
        }
        Ok(Self { t_us, x, y, polarity })
    }

    pub fn is_valid(&self) -> bool {
        self.x < SENSOR_WIDTH && self.y < SENSOR_HEIGHT
    }
}

/// Canonical text rendering: `t x y p` with `t` as seconds with six decimals.
impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{:06} {} {} {}",
            self.t_us / 1_000_000,
            self.t_us % 1_000_000,
            self.x,
            self.y,
            self.polarity.bit()
        )
    }
}

/// Parses one `t x y p` line. Errors carry no line number; see
/// [`read_event_stream`] for positioned errors.
pub fn parse_event_line(line: &str) -> Result<Event, EventError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(EventError::FieldCount { found: fields.len() });
    }
    let bad = |field: &'static str, token: &str| EventError::BadToken {
        field,
        token: token.to_string(),
    };

    let t: f64 = fields[0].parse().map_err(|_| bad("t", fields[0]))?;
    if !t.is_finite() {
        return Err(bad("t", fields[0]));
    }
    if t < 0.0 {
        return Err(EventError::NegativeTimestamp(t));
    }
    let x: i64 = fields[1].parse().map_err(|_| bad("x", fields[1]))?;
    let y: i64 = fields[2].parse().map_err(|_| bad("y", fields[2]))?;
    let polarity = match fields[3] {
        "0" => Polarity::Off,
        "1" => Polarity::On,
        other => return Err(bad("p", other)),
    };
    if !(0..SENSOR_WIDTH as i64).contains(&x) {
        return Err(EventError::ColumnOutOfRange(x));
    }
    if !(0..SENSOR_HEIGHT as i64).contains(&y) {
        return Err(EventError::RowOutOfRange(y));
    }
    let t_us = (t * 1e6).round() as u64;
    Ok(Event {
        t_us,
        x: x as u16,
        y: y as u16,
        polarity,
    })
}

/// Reads a line-oriented event stream, verifying that timestamps never go
/// backwards. Blank lines are skipped. Line numbers in errors are 1-based.
pub fn read_event_stream<R: BufRead>(source: R) -> Result<Vec<Event>, EventError> {
    let mut events = Vec::new();
    let mut previous: Option<u64> = None;
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let number = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let event = parse_event_line(&line).map_err(|e| e.at_line(number))?;
        if let Some(prev) = previous {
            if event.t_us < prev {
                return Err(EventError::TimestampRegression {
                    line: number,
                    previous_us: prev,
                    current_us: event.t_us,
                });
            }
        }
        previous = Some(event.t_us);
        events.push(event);
    }
    Ok(events)
}

/// Renders events in the canonical text format, one per line.
pub fn write_event_text<W: std::io::Write>(mut out: W, events: &[Event]) -> std::io::Result<()> {
    for e in events {
        writeln!(out, "{e}")?;
    }
    Ok(())
}

/// A 42-bit hardware interface word stored in the low bits of a `u64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PackedWord42(u64);

impl PackedWord42 {
    /// Wraps a raw value; high bits are checked when unpacking.
    pub const fn from_raw(word: u64) -> Self {
        Self(word)
    }

    pub const fn raw(self) -> u64 {
        self.0
    }
}

impl fmt::LowerHex for PackedWord42 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerHex::fmt(&self.0, f)
    }
}

pub fn pack_event(e: &Event) -> PackedWord42 {
    debug_assert!(e.is_valid());
    let t = e.t_us & TIMESTAMP_MASK;
    PackedWord42(
        (t << T_SHIFT) | ((e.x as u64 & 0xFF) << X_SHIFT) | ((e.y as u64 & 0xFF) << Y_SHIFT) | e.polarity.bit(),
    )
}

/// Inverse of [`pack_event`]; the returned timestamp is the wrapped one.
pub fn unpack_event(w: PackedWord42) -> Result<Event, EventError> {
    let word = w.0;
    if word & !WORD_MASK != 0 {
        return Err(EventError::HighBits(word));
    }
    let x = ((word >> X_SHIFT) & 0xFF) as u16;
    let y = ((word >> Y_SHIFT) & 0xFF) as u16;
    if x >= SENSOR_WIDTH {
        return Err(EventError::InvalidColumn(x));
    }
    if y >= SENSOR_HEIGHT {
        return Err(EventError::InvalidRow(y));
    }
    Ok(Event {
        t_us: word >> T_SHIFT,
        x,
        y,
        polarity: Polarity::from_bit(word),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Bit-assembly oracle written against the layout table, independent of
    /// the shift constants above.
    fn oracle_pack(t: u64, x: u64, y: u64, p: u64) -> u64 {
        let mut word = 0u64;
        for bit in 0..25 {
            word |= ((t >> bit) & 1) << (17 + bit);
        }
        for bit in 0..8 {
            word |= ((x >> bit) & 1) << (9 + bit);
            word |= ((y >> bit) & 1) << (1 + bit);
        }
        word | (p & 1)
    }

    #[test]
    fn parse_dataset_line() {
        let e = parse_event_line("0.003811 96 133 0").unwrap();
        assert_eq!(e, Event::new(3811, 96, 133, Polarity::Off).unwrap());
    }

    #[test]
    fn parse_zero_line() {
        let e = parse_event_line("0 0 0 1").unwrap();
        assert_eq!(e, Event::new(0, 0, 0, Polarity::On).unwrap());
    }

    #[test]
    fn parse_rejects_bad_lines() {
        assert!(matches!(
            parse_event_line("0.1 240 10 0"),
            Err(EventError::ColumnOutOfRange(240))
        ));
        assert!(matches!(
            parse_event_line("0.1 10 180 0"),
            Err(EventError::RowOutOfRange(180))
        ));
        assert!(matches!(
            parse_event_line("0.1 10 10"),
            Err(EventError::FieldCount { found: 3 })
        ));
        assert!(matches!(
            parse_event_line("abc 10 10 1"),
            Err(EventError::BadToken { field: "t", .. })
        ));
        assert!(matches!(
            parse_event_line("0.1 10 10 2"),
            Err(EventError::BadToken { field: "p", .. })
        ));
        assert!(matches!(
            parse_event_line("-0.5 10 10 1"),
            Err(EventError::NegativeTimestamp(_))
        ));
        assert!(matches!(
            parse_event_line("NaN 10 10 1"),
            Err(EventError::BadToken { field: "t", .. })
        ));
    }

    #[test]
    fn stream_empty_and_passthrough() {
        assert!(read_event_stream("".as_bytes()).unwrap().is_empty());
        let text = "0.000001 1 2 1\n0.000002 3 4 0\n0.000002 5 6 1\n";
        let events = read_event_stream(text.as_bytes()).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(events[0].x, 1);
        assert_eq!(events[2].x, 5);
    }

    #[test]
    fn stream_regression_reports_line() {
        let err = read_event_stream("0.2 1 1 1\n0.1 1 1 1\n".as_bytes()).unwrap_err();
        match err {
            EventError::TimestampRegression {
                line,
                previous_us,
                current_us,
            } => {
                assert_eq!(line, 2);
                assert_eq!(previous_us, 200_000);
                assert_eq!(current_us, 100_000);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stream_malformed_line_reports_position() {
        let err = read_event_stream("0.1 1 1 1\n0.2 1 1\n0.3 1 1 1\n".as_bytes()).unwrap_err();
        assert_eq!(err.line(), Some(2));
    }

    #[test]
    fn pack_known_words() {
        let e = Event::new(1000, 3, 5, Polarity::On).unwrap();
        assert_eq!(oracle_pack(1000, 3, 5, 1), 0x07D0_060B);
        assert_eq!(pack_event(&e).raw(), 0x07D0_060B);
        assert_eq!(pack_event(&Event::new(0, 0, 0, Polarity::Off).unwrap()).raw(), 0);
        let wrapped = Event::new(1 << 25, 0, 0, Polarity::Off).unwrap();
        assert_eq!(pack_event(&wrapped).raw(), 0);
    }

    #[test]
    fn unpack_known_words() {
        let e = unpack_event(PackedWord42::from_raw(0x07D0_060B)).unwrap();
        assert_eq!(e, Event::new(1000, 3, 5, Polarity::On).unwrap());
        let z = unpack_event(PackedWord42::from_raw(0)).unwrap();
        assert_eq!(z, Event::new(0, 0, 0, Polarity::Off).unwrap());
    }

    #[test]
    fn unpack_rejects_invalid_words() {
        let x255 = PackedWord42::from_raw(oracle_pack(0, 255, 0, 0));
        assert!(matches!(unpack_event(x255), Err(EventError::InvalidColumn(255))));
        let y200 = PackedWord42::from_raw(oracle_pack(0, 0, 200, 0));
        assert!(matches!(unpack_event(y200), Err(EventError::InvalidRow(200))));
        let high = PackedWord42::from_raw(1 << 42);
        assert!(matches!(unpack_event(high), Err(EventError::HighBits(_))));
    }

    fn any_event() -> impl Strategy<Value = Event> {
        (0u64..(1 << 25), 0u16..240, 0u16..180, any::<bool>()).prop_map(|(t, x, y, p)| Event {
            t_us: t,
            x,
            y,
            polarity: if p { Polarity::On } else { Polarity::Off },
        })
    }

    proptest! {
        #[test]
        fn pack_roundtrip(e in any_event()) {
            let w = pack_event(&e);
            prop_assert_eq!(w.raw() & !WORD_MASK, 0);
            prop_assert_eq!(w.raw(), oracle_pack(e.t_us, e.x as u64, e.y as u64, e.polarity.bit()));
            prop_assert_eq!(unpack_event(w).unwrap(), e);
        }

        #[test]
        fn pack_wraps_large_timestamps(t in any::<u64>(), x in 0u16..240, y in 0u16..180) {
            let e = Event { t_us: t, x, y, polarity: Polarity::On };
            let back = unpack_event(pack_event(&e)).unwrap();
            prop_assert_eq!(back.t_us, t % (1 << 25));
        }

        #[test]
        fn text_rendering_roundtrip(t in 0u64..10_000_000_000, x in 0u16..240, y in 0u16..180, p in any::<bool>()) {
            let e = Event { t_us: t, x, y, polarity: Polarity::from_bit(p as u64) };
            prop_assert_eq!(parse_event_line(&e.to_string()).unwrap(), e);
        }
    }
}
