//! Code streams as arrays of little-endian u16.

use std::fs;
use std::path::Path;

use super::codes::Code;
use crate::error::{OmniError, Result};

pub fn write_codes(codes: &[Code]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(codes.len() * 2);
    for c in codes {
        let v = u16::try_from(c.0).map_err(|_| OmniError::OutOfRange {
            what: "code for u16 stream",
            value: c.0 as usize,
            limit: 1 << 16,
        })?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_codes(bytes: &[u8]) -> Result<Vec<Code>> {
    if bytes.len() % 2 != 0 {
        return Err(OmniError::InvalidArgument("code stream has odd byte length".into()));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|b| Code(u16::from_le_bytes([b[0], b[1]]) as u32))
        .collect())
}

pub fn write_codes_file(path: &Path, codes: &[Code]) -> Result<()> {
    fs::write(path, write_codes(codes)?)?;
    Ok(())
}

pub fn read_codes_file(path: &Path) -> Result<Vec<Code>> {
    read_codes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_little_endian() {
        let bytes = write_codes(&[Code(1), Code(6560)]).unwrap();
        assert_eq!(bytes, vec![1, 0, 0xA0, 0x19]);
        assert_eq!(read_codes(&bytes).unwrap(), vec![Code(1), Code(6560)]);
        assert!(read_codes(&[1]).is_err());
        assert!(write_codes(&[Code(70000)]).is_err());
    }
}
