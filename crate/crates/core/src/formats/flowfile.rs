//! Flow container.
//!
//! Layout: magic `SFLO`, then u32 LE `width`, `height`, `count`, `flags`
//! (bit 0 set when values are normalized to `[-1,1]`), then for each field the
//! `u` plane followed by the `v` plane, row-major little-endian f32.

use std::io::{Read, Write};

use crate::flow::{FlowField, FlowSequence};
use crate::{Error, Result};

pub const FLOW_MAGIC: &[u8; 4] = b"SFLO";

pub fn write_flow(seq: &FlowSequence, mut sink: impl Write) -> Result<()> {
    let (w, h) = seq.fields.first().map_or((0, 0), |f| (f.width, f.height));
    if seq.fields.iter().any(|f| f.width != w || f.height != h) {
        return Err(Error::Contract("flow fields differ in size".into()));
    }
    let mut head = Vec::with_capacity(20);
    head.extend_from_slice(FLOW_MAGIC);
    for v in [w as u32, h as u32, seq.fields.len() as u32, seq.normalized as u32] {
        head.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&head)?;
    let mut buf = Vec::with_capacity(w * h * 8);
    for f in &seq.fields {
        buf.clear();
        for x in f.u.iter().chain(&f.v) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        sink.write_all(&buf)?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_flow(mut src: impl Read) -> Result<FlowSequence> {
    let eof = |e: std::io::Error| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated flow container".into()),
        _ => Error::Io(e),
    };
    let mut head = [0u8; 20];
    src.read_exact(&mut head).map_err(eof)?;
    if &head[..4] != FLOW_MAGIC {
        return Err(Error::Format("not a flow container (bad magic)".into()));
    }
    let word = |i: usize| u32::from_le_bytes(head[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    let (w, h, count, flags) = (word(0) as usize, word(1) as usize, word(2), word(3));
    let mut fields = Vec::with_capacity(count.min(4096) as usize);
    let mut buf = vec![0u8; w * h * 8];
    for _ in 0..count {
        src.read_exact(&mut buf).map_err(eof)?;
        let vals: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let (u, v) = vals.split_at(w * h);
        fields.push(FlowField { width: w, height: h, u: u.to_vec(), v: v.to_vec() });
    }
    Ok(FlowSequence { fields, normalized: flags & 1 == 1 })
}
