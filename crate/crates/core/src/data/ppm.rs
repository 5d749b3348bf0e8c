//! Binary PPM (`P6`, maxval 255) codec. Bytes map to `v / 255`.

use std::fs;
use std::path::Path;

use crate::error::{Error, PpmError, Result};
use crate::tensor::Tensor;

struct Header {
    width: usize,
    height: usize,
    payload_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PpmError> {
    let malformed = |m: &str| PpmError::MalformedHeader(m.to_string());
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(malformed("missing P6 magic"));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // whitespace and comments before each field
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(malformed("header ends early")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("number out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(malformed("missing whitespace after maxval")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(malformed("zero image dimension"));
    }
    if maxval != 255 {
        return Err(PpmError::UnsupportedMaxval(maxval));
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        payload_start: pos,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let header = parse_header(bytes)?;
    let (h, w) = (header.height, header.width);
    let expected = 3 * h * w;
    let payload = &bytes[header.payload_start..];
    if payload.len() < expected {
        return Err(PpmError::TruncatedPayload {
            expected,
            found: payload.len(),
        }
        .into());
    }
    let plane = h * w;
    let mut data = vec![0.0f32; expected];
    for (i, px) in payload[..expected].chunks_exact(3).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * plane + i] = f32::from(v) / 255.0;
        }
    }
    Tensor::new([1, 3, h, w], data)
}

/// Clamps to [0, 1] and rounds half up to the nearest byte.
pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let [n, c, h, w] = image.shape();
    if n != 1 || c != 3 {
        return Err(Error::invalid(
            "write_image",
            format!("expected 1x3xHxW, got {:?}", image.shape()),
        ));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let data = image.data();
    out.reserve(3 * plane);
    for i in 0..plane {
        for ch in 0..3 {
            out.push(to_byte(data[ch * plane + i]));
        }
    }
    Ok(out)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

pub fn write_image(image: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}
