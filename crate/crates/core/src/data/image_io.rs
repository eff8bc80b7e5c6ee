//! Binary PPM (P6) images and PGM (P5) masks, 8-bit only.

use std::path::Path;

use mxt_tensor::{Real, Tensor};

use crate::error::{Error, Result};

/// `floor(v·255 + 0.5)` clamped to [0, 255].
pub fn quantize(v: Real) -> u8 {
    let q = (v as f64 * 255.0 + 0.5).floor();
    q.clamp(0.0, 255.0) as u8
}

struct Header {
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.starts_with(b"\x89PNG") {
        return Err(Error::Unsupported(
            "PNG input is not supported (no decoder in this build); convert to binary PPM (P6) or PGM (P5)".into(),
        ));
    }
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("expected magic `{}`", String::from_utf8_lossy(magic)),
        });
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, slot) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        if i == 0 && pos == 2 {
            return Err(Error::Parse {
                offset: pos,
                msg: "expected whitespace after magic".into(),
            });
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse {
                offset: pos,
                msg: "expected a decimal number in header".into(),
            });
        }
        *slot = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                offset: start,
                msg: "header number out of range".into(),
            })?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(Error::Parse {
                offset: pos,
                msg: "expected one whitespace byte before pixel data".into(),
            })
        }
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Unsupported(format!(
            "maxval {maxval}: only 8-bit files with maxval 255 are supported"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::Parse {
            offset: 2,
            msg: format!("empty image {width}x{height}"),
        });
    }
    Ok(Header {
        width,
        height,
        data_start: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8]> {
    let need = h.width * h.height * channels;
    let have = bytes.len() - h.data_start;
    if have < need {
        return Err(Error::Parse {
            offset: bytes.len(),
            msg: format!("pixel data truncated: need {need} bytes, have {have}"),
        });
    }
    if have > need {
        return Err(Error::Parse {
            offset: h.data_start + need,
            msg: format!("{} trailing bytes", have - need),
        });
    }
    Ok(&bytes[h.data_start..])
}

/// P6 bytes → (3,H,W) in [0,1].
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let h = parse_header(bytes, b"P6")?;
    let px = payload(bytes, &h, 3)?;
    let n = h.width * h.height;
    let mut data = vec![0.0; 3 * n];
    for (i, rgb) in px.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * n + i] = rgb[c] as Real / 255.0;
        }
    }
    Ok(Tensor::new(data, &[3, h.height, h.width])?)
}

/// (3,H,W) → P6 bytes.
pub fn encode_ppm(img: &Tensor) -> Result<Vec<u8>> {
    if img.rank() != 3 || img.dim(0) != 3 {
        return Err(Error::Data(format!(
            "PPM output needs a (3,H,W) image, got {:?}",
            img.shape()
        )));
    }
    let (hh, ww) = (img.dim(1), img.dim(2));
    let n = hh * ww;
    let mut out = format!("P6\n{ww} {hh}\n255\n").into_bytes();
    let d = img.data();
    out.reserve(3 * n);
    for i in 0..n {
        for c in 0..3 {
            out.push(quantize(d[c * n + i]));
        }
    }
    Ok(out)
}

/// P5 bytes → (1,H,W) with values v/255.
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    let h = parse_header(bytes, b"P5")?;
    let px = payload(bytes, &h, 1)?;
    let data = px.iter().map(|&v| v as Real / 255.0).collect();
    Ok(Tensor::new(data, &[1, h.height, h.width])?)
}

/// (1,H,W) → P5 bytes.
pub fn encode_pgm(mask: &Tensor) -> Result<Vec<u8>> {
    if mask.rank() != 3 || mask.dim(0) != 1 {
        return Err(Error::Data(format!(
            "PGM output needs a (1,H,W) map, got {:?}",
            mask.shape()
        )));
    }
    let mut out = format!("P5\n{} {}\n255\n", mask.dim(2), mask.dim(1)).into_bytes();
    out.extend(mask.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { offset, msg } => Error::Parse {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        Error::Unsupported(m) => Error::Unsupported(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    with_path(path, decode_ppm(&bytes))
}

pub fn write_image(path: &Path, img: &Tensor) -> Result<()> {
    Ok(std::fs::write(path, encode_ppm(img)?)?)
}

/// Reads a PGM mask and binarizes it (values above 127 are holes).
pub fn read_mask(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    let m = with_path(path, decode_pgm(&bytes))?;
    let data = m
        .data()
        .iter()
        .map(|&v| if v > 0.5 { 1.0 } else { 0.0 })
        .collect();
    Ok(Tensor::new(data, m.shape())?)
}

pub fn write_mask(path: &Path, mask: &Tensor) -> Result<()> {
    Ok(std::fs::write(path, encode_pgm(mask)?)?)
}
