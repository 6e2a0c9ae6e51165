//! PFM (portable float map) reader/writer.
//!
//! Header: `PF` (3 channels) or `Pf` (1 channel), width, height, scale.
//! A negative scale marks little-endian payloads. Rows are stored
//! bottom-to-top per the original format; this codec converts to the
//! crate's top-left row-major layout on load and back on save. Written
//! files always use scale -1.0 (little-endian).

use std::fs;
use std::path::Path;

use super::ImageF;
use crate::error::{Error, Result};

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::PfmParse {
            offset: self.pos,
            msg: msg.into(),
        })
    }

    /// Reads one whitespace-delimited ASCII token.
    fn token(&mut self) -> Result<&'a str> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return self.fail("unexpected end of header");
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::PfmParse {
                offset: start,
                msg: "non-utf8 header token".into(),
            })
    }
}

pub fn load_pfm(path: impl AsRef<Path>) -> Result<ImageF> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<ImageF> {
    let mut cur = Cursor { bytes, pos: 0 };

    let channels = match cur.token()? {
        "PF" => 3usize,
        "Pf" => 1usize,
        other => {
            return Err(Error::PfmParse {
                offset: 0,
                msg: format!("bad magic {other:?}, expected PF or Pf"),
            })
        }
    };

    let width_tok = cur.token()?;
    let width: i64 = width_tok
        .parse()
        .map_err(|_| Error::PfmParse {
            offset: cur.pos,
            msg: format!("bad width {width_tok:?}"),
        })?;
    let height_tok = cur.token()?;
    let height: i64 = height_tok
        .parse()
        .map_err(|_| Error::PfmParse {
            offset: cur.pos,
            msg: format!("bad height {height_tok:?}"),
        })?;
    if width <= 0 || height <= 0 {
        return cur.fail(format!("non-positive dimensions {width}x{height}"));
    }
    let scale_tok = cur.token()?;
    let scale: f64 = scale_tok
        .parse()
        .map_err(|_| Error::PfmParse {
            offset: cur.pos,
            msg: format!("bad scale {scale_tok:?}"),
        })?;
    if scale == 0.0 || !scale.is_finite() {
        return cur.fail(format!("invalid scale {scale}"));
    }
    let little_endian = scale < 0.0;

    // Exactly one whitespace byte separates the header from the payload.
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return cur.fail("missing separator before payload");
    }
    cur.pos += 1;

    let (width, height) = (width as usize, height as usize);
    let count = width * height * channels;
    let need = count * 4;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(Error::PfmParse {
            offset: bytes.len(),
            msg: format!(
                "truncated payload: need {need} bytes, have {}",
                payload.len()
            ),
        });
    }

    // PFM rows run bottom-to-top; flip into top-left origin.
    let row_len = width * channels;
    let mut data = vec![0.0f64; count];
    for file_row in 0..height {
        let out_row = height - 1 - file_row;
        let src = &payload[file_row * row_len * 4..(file_row + 1) * row_len * 4];
        let dst = &mut data[out_row * row_len..(out_row + 1) * row_len];
        for (i, chunk) in src.chunks_exact(4).enumerate() {
            let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            dst[i] = v as f64;
        }
    }

    ImageF::new(width, height, channels, data)
}

pub fn save_pfm(image: &ImageF, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pfm(image);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_pfm(image: &ImageF) -> Vec<u8> {
    let magic = if image.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", image.width, image.height).into_bytes();
    let row_len = image.width * image.channels;
    for file_row in 0..image.height {
        let src_row = image.height - 1 - file_row;
        for v in &image.data[src_row * row_len..(src_row + 1) * row_len] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}
