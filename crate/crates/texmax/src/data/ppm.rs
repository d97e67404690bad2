//! Binary PPM (P6, maxval 255) codec. The only image format the toolchain
//! reads or writes; everything else converts externally.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

struct HeaderParser<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> HeaderParser<'a> {
    /// Skips netpbm whitespace and `#` comments.
    fn skip_separators(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::format(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(start, format!("unparseable {what}")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor3> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        let magic = bytes.get(..2).map(|m| String::from_utf8_lossy(m).into_owned());
        return Err(Error::format(
            0,
            match magic {
                Some(m) if m.starts_with('P') => format!("unsupported netpbm magic {m:?}, only P6 is supported"),
                _ => "not a PPM file (missing P6 magic)".to_string(),
            },
        ));
    }
    let mut p = HeaderParser { buf: bytes, pos: 2 };
    let width = p.number("width")?;
    let height = p.number("height")?;
    let maxval = p.number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(p.pos, format!("maxval must be 255, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(p.pos, "zero image dimension".to_string()));
    }
    // exactly one whitespace byte separates header and payload
    if p.pos >= bytes.len() || !bytes[p.pos].is_ascii_whitespace() {
        return Err(Error::format(p.pos, "missing whitespace before pixel data".to_string()));
    }
    p.pos += 1;
    let need = width * height * 3;
    let payload = &bytes[p.pos..];
    if payload.len() < need {
        return Err(Error::format(
            bytes.len(),
            format!("pixel payload truncated: need {need} bytes, have {}", payload.len()),
        ));
    }
    if payload.len() > need {
        return Err(Error::format(
            p.pos + need,
            format!("{} trailing bytes after pixel data", payload.len() - need),
        ));
    }
    let values = payload.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor3::new(height, width, 3, values)
}

pub fn encode_ppm(image: &Tensor3) -> Result<Vec<u8>> {
    if image.channels() != 3 {
        return Err(Error::config(format!(
            "PPM encoding requires 3 channels, got {}",
            image.channels()
        )));
    }
    image.check_finite()?;
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(
        image
            .values()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    Ok(out)
}

pub fn load_ppm(path: &Path) -> Result<Tensor3> {
    decode_ppm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_ppm(image: &Tensor3, path: &Path) -> Result<()> {
    super::write_atomic(path, &encode_ppm(image)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_red_pixel() {
        let bytes = b"P6\n1 1\n255\n\xff\x00\x00";
        let t = decode_ppm(bytes).unwrap();
        assert_eq!(t.shape(), (1, 1, 3));
        assert_eq!(t.values(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn canonical_round_trip_is_byte_exact() {
        let mut bytes = b"P6\n3 2\n255\n".to_vec();
        bytes.extend((0u8..18).map(|i| i * 13));
        let decoded = decode_ppm(&bytes).unwrap();
        assert_eq!(encode_ppm(&decoded).unwrap(), bytes);
    }

    #[test]
    fn p5_and_p3_rejected() {
        assert!(decode_ppm(b"P5\n1 1\n255\n\x00").is_err());
        assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
    }

    #[test]
    fn wrong_maxval_rejected() {
        assert!(decode_ppm(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00").is_err());
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let err = decode_ppm(b"P6\n2 2\n255\n\x00\x00\x00").unwrap_err();
        match err {
            crate::error::Error::Format { message, .. } => {
                assert!(message.contains("truncated"), "{message}")
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let bytes = b"P6\n# a comment\n1 1\n255\n\x10\x20\x30";
        let t = decode_ppm(bytes).unwrap();
        assert!((t.values()[0] - 16.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn values_clamp_on_encode() {
        let t = Tensor3::new(1, 1, 3, vec![-0.5, 0.5, 1.5]).unwrap();
        let bytes = encode_ppm(&t).unwrap();
        let payload = &bytes[bytes.len() - 3..];
        assert_eq!(payload, &[0u8, 128, 255]);
    }
}
