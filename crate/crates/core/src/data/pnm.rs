//! 8-bit binary PGM (`P5`) and PPM (`P6`) frames. ASCII `P2`/`P3` are read
//! too; output is always binary.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::compute::Tensor;
use crate::error::{Error, Result};

/// Frame as a `(channels, height, width)` tensor of byte values `0..=255`.
pub type Frame = Tensor<f32>;

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::Data("not a PNM file (missing `P` magic)".into()));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Data("truncated PNM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Data("malformed PNM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Data("PNM header value out of range".into()))?;
    }
    // exactly one whitespace byte separates the header from binary data
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Data("malformed PNM header".into()));
    }
    Ok(Header {
        magic,
        width: fields[0],
        height: fields[1],
        maxval: fields[2],
        data_start: pos + 1,
    })
}

/// Decodes PNM bytes into a `(c, h, w)` frame.
pub fn decode_pnm(bytes: &[u8]) -> Result<Frame> {
    let hdr = parse_header(bytes)?;
    let channels = match &hdr.magic {
        b"P5" | b"P2" => 1,
        b"P6" | b"P3" => 3,
        m => {
            return Err(Error::Data(format!(
                "unsupported PNM type {}",
                String::from_utf8_lossy(m)
            )))
        }
    };
    if hdr.maxval != 255 {
        return Err(Error::Data(format!(
            "unsupported bit depth: maxval {} (only 8-bit, maxval 255)",
            hdr.maxval
        )));
    }
    if hdr.width == 0 || hdr.height == 0 {
        return Err(Error::Data("PNM image has zero size".into()));
    }
    let n = hdr.width * hdr.height * channels;
    let samples: Vec<u8> = if hdr.magic[1] == b'5' || hdr.magic[1] == b'6' {
        let body = &bytes[hdr.data_start.min(bytes.len())..];
        if body.len() < n {
            return Err(Error::Data(format!(
                "PNM pixel data truncated: {} of {} bytes",
                body.len(),
                n
            )));
        }
        body[..n].to_vec()
    } else {
        let text = std::str::from_utf8(&bytes[hdr.data_start.min(bytes.len())..])
            .map_err(|_| Error::Data("ASCII PNM body is not text".into()))?;
        let vals: Vec<u8> = text
            .split_ascii_whitespace()
            .take(n)
            .map(|s| {
                s.parse::<u8>()
                    .map_err(|_| Error::Data(format!("bad ASCII sample `{s}`")))
            })
            .collect::<Result<_>>()?;
        if vals.len() < n {
            return Err(Error::Data("ASCII PNM pixel data truncated".into()));
        }
        vals
    };
    // interleaved RGB -> planar
    let plane = hdr.width * hdr.height;
    let mut data = vec![0f32; n];
    for (i, &v) in samples.iter().enumerate() {
        data[(i % channels) * plane + i / channels] = v as f32;
    }
    Tensor::new(vec![channels, hdr.height, hdr.width], data)
}

pub fn read_pnm(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path)?;
    decode_pnm(&bytes).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Encodes a `(1|3, h, w)` frame as binary PGM/PPM. Values are rounded half
/// up and clamped to `0..=255`.
pub fn encode_pnm(frame: &Frame) -> Result<Vec<u8>> {
    let (c, h, w) = match frame.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::Shape(format!("frame must be (c, h, w), got {s:?}"))),
    };
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => {
            return Err(Error::Shape(format!(
                "PNM frames need 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    out.reserve(plane * c);
    for i in 0..plane {
        for ch in 0..c {
            out.push(to_byte(frame.data()[ch * plane + i]));
        }
    }
    Ok(out)
}

pub fn write_pnm(path: &Path, frame: &Frame) -> Result<()> {
    let bytes = encode_pnm(frame)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Round half up, clamp to the byte range.
pub fn to_byte(v: f32) -> u8 {
    (v as f64 + 0.5).floor().clamp(0.0, 255.0) as u8
}
