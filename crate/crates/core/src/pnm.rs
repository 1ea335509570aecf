//! Binary PGM (P5) and PPM (P6) encoding.

use crate::error::{Error, Result};

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::Dimension(format!("PGM {width}x{height} needs {} bytes, got {}", width * height, pixels.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

/// `pixels` is interleaved RGB.
pub fn encode_ppm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != 3 * width * height {
        return Err(Error::Dimension(format!("PPM {width}x{height} needs {} bytes, got {}", 3 * width * height, pixels.len())));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn unit_to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a channel-major `3 x H x W` image with values in `[0, 1]`.
pub fn chw_to_ppm(image: &[f32], height: usize, width: usize) -> Result<Vec<u8>> {
    let plane = height * width;
    if image.len() != 3 * plane {
        return Err(Error::Dimension(format!("expected 3x{height}x{width} image, got {} values", image.len())));
    }
    let mut rgb = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for c in 0..3 {
            rgb.push(unit_to_byte(image[c * plane + p]));
        }
    }
    encode_ppm(width, height, &rgb)
}

/// Parses a P5 or P6 file into `(magic, width, height, pixel bytes)`.
pub fn decode_pnm(bytes: &[u8]) -> Result<(String, usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PNM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let magic = fields[0].clone();
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(Error::Format(format!("unsupported PNM magic {magic}"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PNM field {s:?}")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Format("only 8-bit PNM is supported".into()));
    }
    let data = bytes.get(pos..).unwrap_or_default();
    if data.len() != channels * w * h {
        return Err(Error::Format("PNM payload size mismatch".into()));
    }
    Ok((magic, w, h, data.to_vec()))
}
