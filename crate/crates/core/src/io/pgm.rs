use std::io::{Read, Write};

use super::read_all;
use crate::error::{Error, Result};
use crate::types::Frame;

/// Sample depth for binary (P5) PGM output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn maxval(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

/// Writes a P5 PGM, quantizing `[0, 1]` to the full range of `depth`.
pub fn write_pgm(frame: &Frame, depth: BitDepth, mut w: impl Write) -> Result<u64> {
    let maxval = depth.maxval();
    let mut buf = format!("P5\n{} {}\n{}\n", frame.width(), frame.height(), maxval).into_bytes();
    for &v in frame.data() {
        let q = (v * maxval as f64).round() as u32;
        match depth {
            BitDepth::Eight => buf.push(q as u8),
            BitDepth::Sixteen => buf.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    w.write_all(&buf)?;
    Ok(buf.len() as u64)
}

/// Reads a P5 PGM (8- or 16-bit) and normalizes by its maxval.
pub fn read_pgm(r: impl Read) -> Result<Frame> {
    let bytes = read_all(r)?;
    let mut pos = 0;
    let next_token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::format("PGM", "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = next_token(&mut pos)?;
    if magic != "P5" {
        return Err(Error::BadMagic { expected: "P5", found: magic.into_bytes() });
    }
    let num = |pos: &mut usize, what: &str| -> Result<usize> {
        next_token(pos)?.parse::<usize>().map_err(|e| Error::format("PGM", format!("bad {what}: {e}")))
    };
    let width = num(&mut pos, "width")?;
    let height = num(&mut pos, "height")?;
    let maxval = num(&mut pos, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format("PGM", format!("maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let sample = if maxval < 256 { 1 } else { 2 };
    let need = width * height * sample;
    if bytes.len() < pos + need {
        return Err(Error::Truncated { offset: bytes.len() as u64 });
    }
    let raster = &bytes[pos..pos + need];
    let scale = maxval as f64;
    let data: Vec<f64> = if sample == 1 {
        raster.iter().map(|&b| b as f64 / scale).collect()
    } else {
        raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale).collect()
    };
    if data.iter().any(|&v| v > 1.0) {
        return Err(Error::format("PGM", "sample exceeds maxval"));
    }
    Frame::new(width, height, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_divides_by_255() {
        let bytes = b"P5\n# comment\n2 1\n255\n\x00\xff";
        let f = read_pgm(&bytes[..]).unwrap();
        assert_eq!(f.data(), &[0.0, 1.0]);
    }

    #[test]
    fn sixteen_bit_round_trip_of_8bit_values() {
        let f = Frame::from_fn(4, 3, |x, y| ((x * 37 + y * 11) % 256) as f64 / 255.0).unwrap();
        for depth in [BitDepth::Eight, BitDepth::Sixteen] {
            let mut buf = Vec::new();
            write_pgm(&f, depth, &mut buf).unwrap();
            let back = read_pgm(&buf[..]).unwrap();
            for (a, b) in f.data().iter().zip(back.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn truncated_raster() {
        assert!(read_pgm(&b"P5 2 2 255\n\x00\x00"[..]).is_err());
        assert!(read_pgm(&b"P2 2 2 255\n"[..]).is_err());
    }
}
