//! Compressed-image file format.
//!
//! Layout (all integers little-endian u32, documented in docs/FORMATS.md):
//! magic "CWIC", version, coded dims, original dims, code channels n,
//! importance levels L, quantizer levels T, 16-byte model digest, the two
//! payload lengths, then the importance payload followed by the code
//! payload.  The importance payload comes first because the mask decoded
//! from it determines how many code symbols follow.

use crate::{Error, Result};

pub const BITSTREAM_MAGIC: [u8; 4] = *b"CWIC";
pub const BITSTREAM_VERSION: u32 = 1;
/// Fixed byte count in front of the payloads.
pub const HEADER_LEN: usize = 60;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitstreamHeader {
    /// Image dims after padding to a multiple of 8.
    pub coded_height: u32,
    pub coded_width: u32,
    /// Dims the decoder crops back to.
    pub orig_height: u32,
    pub orig_width: u32,
    pub code_channels: u32,
    pub importance_levels: u32,
    pub quant_levels: u32,
    pub model_digest: [u8; 16],
    pub importance_len: u32,
    pub code_len: u32,
}

impl BitstreamHeader {
    pub fn validate(&self) -> Result<()> {
        if self.coded_height == 0 || self.coded_width == 0 {
            return Err(Error::corrupt("zero coded dims"));
        }
        if self.coded_height % 8 != 0 || self.coded_width % 8 != 0 {
            return Err(Error::corrupt(format!(
                "coded dims {}x{} not divisible by 8",
                self.coded_height, self.coded_width
            )));
        }
        if self.orig_height == 0
            || self.orig_width == 0
            || self.orig_height > self.coded_height
            || self.orig_width > self.coded_width
        {
            return Err(Error::corrupt("original dims outside the coded extent"));
        }
        if self.coded_height - self.orig_height >= 8 || self.coded_width - self.orig_width >= 8 {
            return Err(Error::corrupt("padding exceeds one code block"));
        }
        if self.importance_levels < 2 {
            return Err(Error::corrupt("importance levels below 2"));
        }
        if self.code_channels == 0 || self.code_channels % self.importance_levels != 0 {
            return Err(Error::corrupt(format!(
                "code channels {} not a multiple of importance levels {}",
                self.code_channels, self.importance_levels
            )));
        }
        if self.quant_levels < 2 {
            return Err(Error::corrupt("quantizer levels below 2"));
        }
        Ok(())
    }
}

pub fn write_bitstream(
    header: &BitstreamHeader,
    importance_payload: &[u8],
    code_payload: &[u8],
) -> Result<Vec<u8>> {
    header.validate()?;
    if header.importance_len as usize != importance_payload.len()
        || header.code_len as usize != code_payload.len()
    {
        return Err(Error::config("declared payload lengths do not match the payloads"));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + importance_payload.len() + code_payload.len());
    out.extend_from_slice(&BITSTREAM_MAGIC);
    for v in [
        BITSTREAM_VERSION,
        header.coded_height,
        header.coded_width,
        header.orig_height,
        header.orig_width,
        header.code_channels,
        header.importance_levels,
        header.quant_levels,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&header.model_digest);
    out.extend_from_slice(&header.importance_len.to_le_bytes());
    out.extend_from_slice(&header.code_len.to_le_bytes());
    debug_assert_eq!(out.len(), HEADER_LEN);
    out.extend_from_slice(importance_payload);
    out.extend_from_slice(code_payload);
    Ok(out)
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    let end = *pos + 4;
    if end > bytes.len() {
        return Err(Error::corrupt("stream truncated inside the header"));
    }
    let v = u32::from_le_bytes(bytes[*pos..end].try_into().expect("4-byte slice"));
    *pos = end;
    Ok(v)
}

pub fn read_bitstream(bytes: &[u8]) -> Result<(BitstreamHeader, Vec<u8>, Vec<u8>)> {
    if bytes.len() < 4 || bytes[..4] != BITSTREAM_MAGIC {
        return Err(Error::corrupt("not a CWIC stream"));
    }
    let mut pos = 4;
    let version = read_u32(bytes, &mut pos)?;
    if version != BITSTREAM_VERSION {
        return Err(Error::corrupt(format!(
            "unsupported version {version}, expected {BITSTREAM_VERSION}"
        )));
    }
    let coded_height = read_u32(bytes, &mut pos)?;
    let coded_width = read_u32(bytes, &mut pos)?;
    let orig_height = read_u32(bytes, &mut pos)?;
    let orig_width = read_u32(bytes, &mut pos)?;
    let code_channels = read_u32(bytes, &mut pos)?;
    let importance_levels = read_u32(bytes, &mut pos)?;
    let quant_levels = read_u32(bytes, &mut pos)?;
    if pos + 16 > bytes.len() {
        return Err(Error::corrupt("stream truncated inside the header"));
    }
    let model_digest: [u8; 16] = bytes[pos..pos + 16].try_into().expect("16-byte slice");
    pos += 16;
    let importance_len = read_u32(bytes, &mut pos)?;
    let code_len = read_u32(bytes, &mut pos)?;
    let header = BitstreamHeader {
        coded_height,
        coded_width,
        orig_height,
        orig_width,
        code_channels,
        importance_levels,
        quant_levels,
        model_digest,
        importance_len,
        code_len,
    };
    header.validate()?;
    let need = (importance_len as usize)
        .checked_add(code_len as usize)
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::corrupt("payload lengths overflow"))?;
    if bytes.len() < need {
        return Err(Error::corrupt(format!(
            "stream has {} bytes, header declares {need}",
            bytes.len()
        )));
    }
    if bytes.len() > need {
        return Err(Error::corrupt(format!(
            "{} trailing bytes after the declared payloads",
            bytes.len() - need
        )));
    }
    let importance = bytes[pos..pos + importance_len as usize].to_vec();
    pos += importance_len as usize;
    let code = bytes[pos..pos + code_len as usize].to_vec();
    Ok((header, importance, code))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_header(imp_len: u32, code_len: u32) -> BitstreamHeader {
        BitstreamHeader {
            coded_height: 32,
            coded_width: 32,
            orig_height: 30,
            orig_width: 27,
            code_channels: 8,
            importance_levels: 4,
            quant_levels: 4,
            model_digest: [7; 16],
            importance_len: imp_len,
            code_len,
        }
    }

    #[test]
    fn round_trip_is_structural_identity() {
        let header = sample_header(3, 5);
        let bytes = write_bitstream(&header, &[1, 2, 3], &[4, 5, 6, 7, 8]).unwrap();
        let (h, imp, code) = read_bitstream(&bytes).unwrap();
        assert_eq!(h, header);
        assert_eq!(imp, vec![1, 2, 3]);
        assert_eq!(code, vec![4, 5, 6, 7, 8]);
    }

    #[test]
    fn header_occupies_the_documented_byte_count() {
        let bytes = write_bitstream(&sample_header(0, 0), &[], &[]).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(HEADER_LEN, 4 + 8 * 4 + 16 + 2 * 4);
    }

    #[test]
    fn writes_are_deterministic() {
        let a = write_bitstream(&sample_header(2, 2), &[9, 9], &[8, 8]).unwrap();
        let b = write_bitstream(&sample_header(2, 2), &[9, 9], &[8, 8]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_magic_is_reported() {
        let mut bytes = write_bitstream(&sample_header(0, 0), &[], &[]).unwrap();
        bytes[0] = b'X';
        let msg = read_bitstream(&bytes).unwrap_err().to_string();
        assert!(msg.contains("not a CWIC stream"), "{msg}");
    }

    #[test]
    fn future_version_is_rejected() {
        let mut bytes = write_bitstream(&sample_header(0, 0), &[], &[]).unwrap();
        bytes[4] = 9;
        let msg = read_bitstream(&bytes).unwrap_err().to_string();
        assert!(msg.contains("unsupported version"), "{msg}");
    }

    #[test]
    fn truncation_at_every_boundary_errors_without_panic() {
        let bytes = write_bitstream(&sample_header(3, 5), &[1, 2, 3], &[4, 5, 6, 7, 8]).unwrap();
        for cut in 0..bytes.len() {
            assert!(read_bitstream(&bytes[..cut]).is_err(), "cut {cut} parsed");
        }
        assert!(read_bitstream(&bytes).is_ok());
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let mut bytes = write_bitstream(&sample_header(1, 1), &[1], &[2]).unwrap();
        bytes.push(0);
        assert!(read_bitstream(&bytes).is_err());
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let mut h = sample_header(0, 0);
        h.coded_height = 30;
        assert!(write_bitstream(&h, &[], &[]).is_err());
        let mut h = sample_header(0, 0);
        h.orig_height = 40;
        assert!(write_bitstream(&h, &[], &[]).is_err());
        let mut h = sample_header(0, 0);
        h.code_channels = 9;
        assert!(write_bitstream(&h, &[], &[]).is_err());
        let mut h = sample_header(0, 0);
        h.orig_height = 16;
        assert!(write_bitstream(&h, &[], &[]).is_err(), "padding wider than one block");
    }

    #[test]
    fn mismatched_payload_length_is_rejected_at_write() {
        assert!(write_bitstream(&sample_header(4, 0), &[1], &[]).is_err());
    }
}
