//! Framed request/response protocol for out-of-process engines.
//!
//! Every message is one frame: a big-endian `u32` payload length followed by
//! the payload. Integers are big-endian throughout.
//!
//! ```text
//! request  = id:u64 op:u8 seed:u64 fields
//! response = id:u64 status:u8 fields        ; status 0 = ok, 1 = error
//! fields   = count:u16 field*
//! field    = name_len:u16 name:utf8 kind:u8 len:u32 data   ; kind 0 = utf8 text, 1 = png
//! ```
//!
//! Error responses carry text fields `class` and `message`.

use std::io::{self, Read, Write};

use thiserror::Error;

/// Upper bound on accepted frame payloads.
pub const MAX_FRAME: u32 = 256 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum WireError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(u64),
    #[error("malformed frame: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Op {
    Detect = 1,
    Pose = 2,
    ControlInpaint = 3,
    InstructionEdit = 4,
}

impl TryFrom<u8> for Op {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self, WireError> {
        Ok(match v {
            1 => Op::Detect,
            2 => Op::Pose,
            3 => Op::ControlInpaint,
            4 => Op::InstructionEdit,
            other => return Err(WireError::Malformed(format!("unknown op {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldValue {
    Text(String),
    Png(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Fields(pub Vec<(String, FieldValue)>);

impl Fields {
    pub fn text(mut self, name: &str, value: impl Into<String>) -> Self {
        self.0.push((name.to_string(), FieldValue::Text(value.into())));
        self
    }

    pub fn png(mut self, name: &str, bytes: Vec<u8>) -> Self {
        self.0.push((name.to_string(), FieldValue::Png(bytes)));
        self
    }

    pub fn get_text(&self, name: &str) -> Option<&str> {
        self.0.iter().find_map(|(n, v)| match v {
            FieldValue::Text(t) if n == name => Some(t.as_str()),
            _ => None,
        })
    }

    pub fn get_png(&self, name: &str) -> Option<&[u8]> {
        self.0.iter().find_map(|(n, v)| match v {
            FieldValue::Png(b) if n == name => Some(b.as_slice()),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub id: u64,
    pub op: Op,
    pub seed: u64,
    pub fields: Fields,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub id: u64,
    pub ok: bool,
    pub fields: Fields,
}

impl Response {
    pub fn error(id: u64, class: &str, message: &str) -> Self {
        Self {
            id,
            ok: false,
            fields: Fields::default().text("class", class).text("message", message),
        }
    }
}

pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> Result<(), WireError> {
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|l| *l <= MAX_FRAME)
        .ok_or(WireError::TooLarge(payload.len() as u64))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame(r: &mut impl Read) -> Result<Vec<u8>, WireError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME {
        return Err(WireError::TooLarge(len as u64));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn put_fields(out: &mut Vec<u8>, fields: &Fields) -> Result<(), WireError> {
    let count = u16::try_from(fields.0.len())
        .map_err(|_| WireError::Malformed("too many fields".into()))?;
    out.extend_from_slice(&count.to_be_bytes());
    for (name, value) in &fields.0 {
        let name_len = u16::try_from(name.len())
            .map_err(|_| WireError::Malformed("field name too long".into()))?;
        out.extend_from_slice(&name_len.to_be_bytes());
        out.extend_from_slice(name.as_bytes());
        let (kind, data) = match value {
            FieldValue::Text(t) => (0u8, t.as_bytes()),
            FieldValue::Png(b) => (1u8, b.as_slice()),
        };
        out.push(kind);
        let len = u32::try_from(data.len()).map_err(|_| WireError::TooLarge(data.len() as u64))?;
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(data);
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| WireError::Malformed("truncated payload".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn utf8(&mut self, n: usize) -> Result<String, WireError> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| WireError::Malformed("text field is not UTF-8".into()))
    }

    fn fields(&mut self) -> Result<Fields, WireError> {
        let count = self.u16()?;
        let mut fields = Fields::default();
        for _ in 0..count {
            let name_len = self.u16()? as usize;
            let name = self.utf8(name_len)?;
            let kind = self.u8()?;
            let len = self.u32()? as usize;
            let value = match kind {
                0 => FieldValue::Text(self.utf8(len)?),
                1 => FieldValue::Png(self.take(len)?.to_vec()),
                other => return Err(WireError::Malformed(format!("unknown field kind {other}"))),
            };
            fields.0.push((name, value));
        }
        Ok(fields)
    }

    fn finish(&self) -> Result<(), WireError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(WireError::Malformed("trailing bytes".into()))
        }
    }
}

impl Request {
    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.id.to_be_bytes());
        out.push(self.op as u8);
        out.extend_from_slice(&self.seed.to_be_bytes());
        put_fields(&mut out, &self.fields)?;
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        let mut c = Cursor { buf, pos: 0 };
        let req = Request {
            id: c.u64()?,
            op: Op::try_from(c.u8()?)?,
            seed: c.u64()?,
            fields: c.fields()?,
        };
        c.finish()?;
        Ok(req)
    }
}

impl Response {
    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.id.to_be_bytes());
        out.push(if self.ok { 0 } else { 1 });
        put_fields(&mut out, &self.fields)?;
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        let mut c = Cursor { buf, pos: 0 };
        let id = c.u64()?;
        let ok = match c.u8()? {
            0 => true,
            1 => false,
            other => return Err(WireError::Malformed(format!("unknown status {other}"))),
        };
        let resp = Response {
            id,
            ok,
            fields: c.fields()?,
        };
        c.finish()?;
        Ok(resp)
    }
}
