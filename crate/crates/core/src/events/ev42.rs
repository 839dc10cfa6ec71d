//! `.ev42` binary container: `b"EV42"`, one version byte, then one 6-byte
//! little-endian record per event holding a [`PackedWord42`] (top 6 bits of
//! each record are zero).

use std::io::{Read, Write};

use super::{pack_event, unpack_event, Event, EventError, PackedWord42, TIMESTAMP_MASK};

pub const EV42_MAGIC: [u8; 4] = *b"EV42";
pub const EV42_VERSION: u8 = 1;
pub const RECORD_BYTES: usize = 6;

pub fn write_ev42<W: Write>(mut out: W, events: &[Event]) -> Result<(), EventError> {
    out.write_all(&EV42_MAGIC)?;
    out.write_all(&[EV42_VERSION])?;
    for e in events {
        let bytes = pack_event(e).raw().to_le_bytes();
        out.write_all(&bytes[..RECORD_BYTES])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads an `.ev42` stream. Packed timestamps wrap every 2^25 us; since
/// streams are written in time order, each backwards jump is taken as one
/// wrap and the full timestamp is reconstructed. This is exact as long as
/// consecutive events are less than ~33.5 s apart.
pub fn read_ev42<R: Read>(mut input: R) -> Result<Vec<Event>, EventError> {
    let mut header = [0u8; 5];
    input.read_exact(&mut header).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => EventError::BadMagic,
        _ => EventError::Io(e),
    })?;
    if header[..4] != EV42_MAGIC {
        return Err(EventError::BadMagic);
    }
    if header[4] != EV42_VERSION {
        return Err(EventError::UnsupportedVersion(header[4]));
    }

    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() % RECORD_BYTES != 0 {
        let whole = body.len() / RECORD_BYTES * RECORD_BYTES;
        return Err(EventError::TruncatedRecord {
            offset: header.len() + whole,
        });
    }

    let mut events = Vec::with_capacity(body.len() / RECORD_BYTES);
    let mut epoch = 0u64;
    let mut last_wrapped = 0u64;
    for record in body.chunks_exact(RECORD_BYTES) {
        let mut raw = [0u8; 8];
        raw[..RECORD_BYTES].copy_from_slice(record);
        let mut e = unpack_event(PackedWord42::from_raw(u64::from_le_bytes(raw)))?;
        if e.t_us < last_wrapped {
            epoch += TIMESTAMP_MASK + 1;
        }
        last_wrapped = e.t_us;
        e.t_us += epoch;
        events.push(e);
    }
    Ok(events)
}
