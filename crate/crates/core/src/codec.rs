//! Little-endian f64 stream used for archive section payloads. Integers are
//! stored as exactly-representable f64 values.

use crate::{Error, Result};

const MAX_EXACT: f64 = 9_007_199_254_740_992.0; // 2^53

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn usize(&mut self, v: usize) -> &mut Self {
        assert!((v as f64) < MAX_EXACT, "integer {v} not exactly representable");
        self.f64(v as f64)
    }

    pub fn u64_bits(&mut self, v: u64) -> &mut Self {
        // seeds use the full 64 bits, so store the raw bit pattern
        self.f64(f64::from_bits(v))
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.f64(if v { 1.0 } else { 0.0 })
    }

    /// Length-prefixed slice.
    pub fn slice(&mut self, values: &[f64]) -> &mut Self {
        self.usize(values.len());
        for &v in values {
            self.f64(v);
        }
        self
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
    section: &'a str,
}

impl<'a> Decoder<'a> {
    pub fn new(section: &'a str, data: &'a [u8]) -> Self {
        Self { data, pos: 0, section }
    }

    pub fn section(&self) -> &str {
        self.section
    }

    pub fn error(&self, reason: impl Into<String>) -> Error {
        Error::archive(self.section, reason)
    }

    pub fn f64(&mut self) -> Result<f64> {
        let end = self.pos + 8;
        let bytes = self
            .data
            .get(self.pos..end)
            .ok_or_else(|| self.error(format!("payload ends early at byte {}", self.pos)))?;
        self.pos = end;
        Ok(f64::from_le_bytes(bytes.try_into().expect("8-byte slice")))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let v = self.f64()?;
        if !((0.0..MAX_EXACT).contains(&v) && v.fract() == 0.0) {
            return Err(self.error(format!("expected a non-negative integer, found {v}")));
        }
        Ok(v as usize)
    }

    pub fn u64_bits(&mut self) -> Result<u64> {
        Ok(self.f64()?.to_bits())
    }

    pub fn bool(&mut self) -> Result<bool> {
        match self.f64()? {
            0.0 => Ok(false),
            1.0 => Ok(true),
            v => Err(self.error(format!("expected a flag, found {v}"))),
        }
    }

    pub fn slice(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        if n > (self.data.len() - self.pos) / 8 {
            return Err(self.error(format!("slice length {n} exceeds payload")));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(self.error(format!("{} trailing bytes after payload", self.data.len() - self.pos)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut e = Encoder::new();
        e.f64(-0.0)
            .usize(42)
            .u64_bits(u64::MAX)
            .bool(true)
            .slice(&[f64::INFINITY, 1e-300]);
        let bytes = e.into_bytes();
        let mut d = Decoder::new("t", &bytes);
        assert_eq!(d.f64().unwrap().to_bits(), (-0.0f64).to_bits());
        assert_eq!(d.usize().unwrap(), 42);
        assert_eq!(d.u64_bits().unwrap(), u64::MAX);
        assert!(d.bool().unwrap());
        assert_eq!(d.slice().unwrap(), vec![f64::INFINITY, 1e-300]);
        d.finish().unwrap();
    }

    #[test]
    fn truncation_names_section() {
        let mut e = Encoder::new();
        e.f64(1.0);
        let bytes = e.into_bytes();
        let mut d = Decoder::new("gbdt", &bytes[..5]);
        let err = d.f64().unwrap_err();
        assert!(err.to_string().contains("gbdt"));
    }
}
