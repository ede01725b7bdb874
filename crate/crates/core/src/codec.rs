//! Little-endian framing shared by the weight container and feature cache.
//!
//! Both formats are `magic[4] | version u32 | body | crc32 u32`, where the
//! CRC covers every byte before it.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("truncated input while reading {context}")]
    Truncated { context: &'static str },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("invalid payload: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut buf = Vec::with_capacity(1 << 16);
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&version.to_le_bytes());
        Self { buf }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// `u16` byte length followed by UTF-8 bytes.
    pub fn str16(&mut self, s: &str) -> Result<(), FormatError> {
        let len = u16::try_from(s.len())
            .map_err(|_| FormatError::Invalid(format!("string of {} bytes exceeds u16 length", s.len())))?;
        self.u16(len);
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }

    pub fn f32s(&mut self, values: &[f32]) {
        self.buf.reserve(values.len() * 4);
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic, checksum and version, returning a reader over the body.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4], version: u32) -> Result<Self, FormatError> {
        if bytes.len() < 4 {
            return Err(FormatError::Truncated { context: "magic" });
        }
        if &bytes[..4] != magic {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
            });
        }
        if bytes.len() < 12 {
            return Err(FormatError::Truncated { context: "header" });
        }
        let (payload, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(FormatError::Checksum { stored, computed });
        }
        let found = u32::from_le_bytes(payload[4..8].try_into().expect("4 bytes"));
        if found != version {
            return Err(FormatError::Version {
                found,
                supported: version,
            });
        }
        Ok(Self { buf: payload, pos: 8 })
    }

    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(FormatError::Truncated { context })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self, context: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, context)?[0])
    }

    pub fn u16(&mut self, context: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, context)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self, context: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().expect("4 bytes")))
    }

    pub fn str16(&mut self, context: &'static str) -> Result<String, FormatError> {
        let len = self.u16(context)? as usize;
        let raw = self.take(len, context)?;
        String::from_utf8(raw.to_vec()).map_err(|e| FormatError::Invalid(format!("{context}: {e}")))
    }

    pub fn f32s(&mut self, n: usize, context: &'static str) -> Result<Vec<f32>, FormatError> {
        let bytes = n.checked_mul(4).ok_or(FormatError::Truncated { context })?;
        let raw = self.take(bytes, context)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn finish(self) -> Result<(), FormatError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framing_round_trip() {
        let mut w = Writer::new(b"TEST", 3);
        w.u8(7);
        w.str16("héllo").unwrap();
        w.f32s(&[1.5, -0.0, f32::MIN_POSITIVE]);
        let bytes = w.finish();
        let mut r = Reader::open(&bytes, b"TEST", 3).unwrap();
        assert_eq!(r.u8("a").unwrap(), 7);
        assert_eq!(r.str16("b").unwrap(), "héllo");
        let f = r.f32s(3, "c").unwrap();
        assert_eq!(f[1].to_bits(), (-0.0f32).to_bits());
        r.finish().unwrap();
    }

    #[test]
    fn detects_each_corruption() {
        let mut w = Writer::new(b"TEST", 1);
        w.u32(42);
        let bytes = w.finish();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Reader::open(&bad, b"TEST", 1), Err(FormatError::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[8] ^= 1;
        assert!(matches!(Reader::open(&bad, b"TEST", 1), Err(FormatError::Checksum { .. })));
        assert!(matches!(Reader::open(&bytes, b"TEST", 2), Err(FormatError::Version { found: 1, .. })));
        assert!(matches!(Reader::open(&bytes[..6], b"TEST", 1), Err(FormatError::Truncated { .. })));
    }
}
