//! TXHD head/model file.
//!
//! Layout, all integers little-endian:
//!   magic "TXHD" | version u32 | head type u8 (0=softmax, 1=phrase)
//!   | count u32 (K classes or P phrases)
//!   | name table: per entry u32 byte length + UTF-8 bytes
//! softmax: tap_count u32 | per tap: dim u32, f32 weights [K][dim], f32 bias [K]
//! phrase:  dim u32 | f32 weights [P][dim] | f32 bias [P]

use std::path::Path;

use crate::error::{Error, Result};

use super::{PhraseModel, SoftmaxHead, TapHead};

const MAGIC: &[u8; 4] = b"TXHD";
const VERSION: u32 = 1;
const KIND_SOFTMAX: u8 = 0;
const KIND_PHRASE: u8 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(self.pos, format!("file truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.take(4 * n, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        if len > 1 << 20 {
            return Err(Error::format(self.pos - 4, format!("implausible {what} length {len}")));
        }
        let start = self.pos;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::format(start, format!("{what} is not valid UTF-8")))
    }
}

fn write_header(out: &mut Vec<u8>, kind: u8, names: &[String]) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind);
    out.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for name in names {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
}

fn read_header<'a>(buf: &'a [u8], expect_kind: u8) -> Result<(Reader<'a>, Vec<String>)> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"TXHD\"")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let kind = r.u8("head type")?;
    if kind != expect_kind {
        return Err(Error::format(
            8,
            format!("head type {kind} does not match expected {expect_kind}"),
        ));
    }
    let count = r.u32("name count")? as usize;
    let mut names = Vec::with_capacity(count);
    for i in 0..count {
        names.push(r.string(&format!("name {i}"))?);
    }
    Ok((r, names))
}

fn write_f32s(out: &mut Vec<u8>, vals: &[f64]) {
    for &v in vals {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn heads_to_bytes(head: &SoftmaxHead) -> Result<Vec<u8>> {
    head.validate()?;
    let mut out = Vec::new();
    write_header(&mut out, KIND_SOFTMAX, &head.class_names);
    out.extend_from_slice(&(head.taps.len() as u32).to_le_bytes());
    for tap in &head.taps {
        out.extend_from_slice(&(tap.dim as u32).to_le_bytes());
        write_f32s(&mut out, &tap.weights);
        write_f32s(&mut out, &tap.bias);
    }
    Ok(out)
}

pub fn heads_from_bytes(buf: &[u8]) -> Result<SoftmaxHead> {
    let (mut r, class_names) = read_header(buf, KIND_SOFTMAX)?;
    let k = class_names.len();
    let tap_count = r.u32("tap count")? as usize;
    let mut taps = Vec::with_capacity(tap_count);
    for t in 0..tap_count {
        let dim = r.u32(&format!("tap {t} dim"))? as usize;
        let weights = r.f32_vec(k * dim, &format!("tap {t} weights"))?;
        let bias = r.f32_vec(k, &format!("tap {t} bias"))?;
        taps.push(TapHead { dim, weights, bias });
    }
    if r.pos != buf.len() {
        return Err(Error::format(r.pos, "trailing bytes after head payload".to_string()));
    }
    let head = SoftmaxHead { class_names, taps };
    head.validate()?;
    Ok(head)
}

pub fn phrases_to_bytes(model: &PhraseModel) -> Result<Vec<u8>> {
    model.validate()?;
    let mut out = Vec::new();
    write_header(&mut out, KIND_PHRASE, &model.phrases);
    out.extend_from_slice(&(model.dim as u32).to_le_bytes());
    write_f32s(&mut out, &model.weights);
    write_f32s(&mut out, &model.bias);
    Ok(out)
}

pub fn phrases_from_bytes(buf: &[u8]) -> Result<PhraseModel> {
    let (mut r, phrases) = read_header(buf, KIND_PHRASE)?;
    let p = phrases.len();
    let dim = r.u32("dim")? as usize;
    let weights = r.f32_vec(p * dim, "phrase weights")?;
    let bias = r.f32_vec(p, "phrase bias")?;
    if r.pos != buf.len() {
        return Err(Error::format(r.pos, "trailing bytes after phrase payload".to_string()));
    }
    let model = PhraseModel {
        phrases,
        dim,
        weights,
        bias,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_heads(head: &SoftmaxHead, path: &Path) -> Result<()> {
    crate::data::write_atomic(path, &heads_to_bytes(head)?)
}

pub fn load_heads(path: &Path) -> Result<SoftmaxHead> {
    heads_from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_phrases(model: &PhraseModel, path: &Path) -> Result<()> {
    crate::data::write_atomic(path, &phrases_to_bytes(model)?)
}

pub fn load_phrases(path: &Path) -> Result<PhraseModel> {
    phrases_from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_head() -> SoftmaxHead {
        SoftmaxHead {
            class_names: vec!["stripes".into(), "dots".into()],
            taps: vec![
                TapHead {
                    dim: 3,
                    weights: vec![0.5, -0.25, 1.0, 0.125, 2.0, -1.5],
                    bias: vec![0.0625, -0.5],
                },
                TapHead {
                    dim: 2,
                    weights: vec![1.0, 2.0, 3.0, 4.0],
                    bias: vec![0.5, 0.25],
                },
            ],
        }
    }

    #[test]
    fn softmax_round_trip() {
        let head = sample_head();
        let bytes = heads_to_bytes(&head).unwrap();
        let loaded = heads_from_bytes(&bytes).unwrap();
        // sample weights are all f32-exact
        assert_eq!(head, loaded);
    }

    #[test]
    fn phrase_round_trip() {
        let model = PhraseModel {
            phrases: vec!["vertical lines".into(), "striped".into()],
            dim: 3,
            weights: vec![0.5, 1.0, -2.0, 0.25, 0.75, -0.125],
            bias: vec![0.5, -1.0],
        };
        let bytes = phrases_to_bytes(&model).unwrap();
        assert_eq!(phrases_from_bytes(&bytes).unwrap(), model);
    }

    #[test]
    fn kind_mismatch_rejected() {
        let bytes = heads_to_bytes(&sample_head()).unwrap();
        let err = phrases_from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 8, .. }));
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = heads_to_bytes(&sample_head()).unwrap();
        let err = heads_from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }
}
