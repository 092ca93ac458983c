//! Binary PPM (P6) color images and PFM float maps.

use std::fs;
use std::path::Path;

use crate::image::Image;

use super::{io_err, SceneError};

/// Byte value of a color channel: `round(255 v)` clamped to `[0, 255]`.
pub fn to_byte(v: f64) -> u8 {
    (255.0 * v).round().clamp(0.0, 255.0) as u8
}

pub fn encode_ppm(img: &Image) -> Result<Vec<u8>, SceneError> {
    if img.channels != 3 {
        return Err(SceneError::Format(format!("PPM needs 3 channels, got {}", img.channels)));
    }
    if img.data.iter().any(|v| !v.is_finite()) {
        return Err(SceneError::NonFinite);
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| to_byte(v)));
    Ok(out)
}

pub fn write_image(img: &Image, path: &Path) -> Result<(), SceneError> {
    let bytes = encode_ppm(img)?;
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Splits off `n` whitespace-separated header tokens, skipping `#` comments;
/// returns the tokens and the offset just past the single whitespace byte
/// that ends the header.
fn header_tokens(bytes: &[u8], n: usize) -> Result<(Vec<String>, usize), SceneError> {
    let mut tokens = Vec::with_capacity(n);
    let mut i = 0;
    while tokens.len() < n {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(SceneError::Format("truncated header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return Err(SceneError::Format("missing pixel data".into()));
    }
    Ok((tokens, i + 1))
}

fn parse_dim(s: &str) -> Result<usize, SceneError> {
    s.parse()
        .map_err(|_| SceneError::Format(format!("bad dimension {s:?}")))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image, SceneError> {
    let (t, off) = header_tokens(bytes, 4)?;
    if t[0] != "P6" {
        return Err(SceneError::Format(format!("not a P6 file (magic {:?})", t[0])));
    }
    let (w, h) = (parse_dim(&t[1])?, parse_dim(&t[2])?);
    if t[3] != "255" {
        return Err(SceneError::Format(format!("unsupported max value {}", t[3])));
    }
    let body = &bytes[off..];
    if body.len() != w * h * 3 {
        return Err(SceneError::Format(format!("expected {} pixel bytes, found {}", w * h * 3, body.len())));
    }
    Ok(Image {
        width: w,
        height: h,
        channels: 3,
        data: body.iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

pub fn read_image(path: &Path) -> Result<Image, SceneError> {
    decode_ppm(&fs::read(path).map_err(|e| io_err(path, e))?)
}

/// PFM with scale -1 (little endian); rows stored bottom to top. One channel
/// gives `Pf`, three give `PF`. Values go through `f32`.
pub fn encode_pfm(img: &Image) -> Result<Vec<u8>, SceneError> {
    let magic = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(SceneError::Format(format!("PFM needs 1 or 3 channels, got {c}"))),
    };
    if img.data.iter().any(|v| !v.is_finite()) {
        return Err(SceneError::NonFinite);
    }
    let mut out = format!("{magic}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = img.width * img.channels;
    for y in (0..img.height).rev() {
        for v in &img.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Image, SceneError> {
    let (t, off) = header_tokens(bytes, 4)?;
    let channels = match t[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        m => return Err(SceneError::Format(format!("not a PFM file (magic {m:?})"))),
    };
    let (w, h) = (parse_dim(&t[1])?, parse_dim(&t[2])?);
    let scale: f64 = t[3]
        .parse()
        .map_err(|_| SceneError::Format(format!("bad scale {:?}", t[3])))?;
    let little = scale < 0.0;
    let body = &bytes[off..];
    let n = w * h * channels;
    if body.len() != 4 * n {
        return Err(SceneError::Format(format!("expected {} data bytes, found {}", 4 * n, body.len())));
    }
    let row = w * channels;
    let mut data = vec![0.0; n];
    for (k, chunk) in body.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (file_row, col) = (k / row, k % row);
        data[(h - 1 - file_row) * row + col] = v as f64;
    }
    Ok(Image {
        width: w,
        height: h,
        channels,
        data,
    })
}

pub fn write_depth(img: &Image, path: &Path) -> Result<(), SceneError> {
    let bytes = encode_pfm(img)?;
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn read_depth(path: &Path) -> Result<Image, SceneError> {
    decode_pfm(&fs::read(path).map_err(|e| io_err(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_pixel_ppm() {
        let bytes = encode_ppm(&Image::filled(1, 1, 3, 1.0)).unwrap();
        assert_eq!(bytes, b"P6\n1 1\n255\n\xff\xff\xff");
    }

    #[test]
    fn ppm_round_trip_is_quantized() {
        let img = Image::from_fn(5, 3, 3, |x, y, c| ((x * 7 + y * 3 + c) % 11) as f64 / 10.0);
        let back = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        assert_eq!(encode_ppm(&back).unwrap(), encode_ppm(&img).unwrap());
    }

    #[test]
    fn ppm_rounding_and_clamping() {
        let img = Image::from_data(1, 1, 3, vec![-0.2, 0.5, 1.7]).unwrap();
        let bytes = encode_ppm(&img).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
    }

    #[test]
    fn pfm_round_trip_is_exact() {
        let img = Image::from_fn(4, 3, 1, |x, y, _| (x as f32 * 0.1 - y as f32 * 3.7) as f64);
        let bytes = encode_pfm(&img).unwrap();
        assert!(bytes.starts_with(b"Pf\n4 3\n-1.0\n"));
        assert_eq!(decode_pfm(&bytes).unwrap(), img);
        let rgb = Image::from_fn(2, 2, 3, |x, y, c| (x + 2 * y + 4 * c) as f64 * 0.25);
        assert_eq!(decode_pfm(&encode_pfm(&rgb).unwrap()).unwrap(), rgb);
    }

    #[test]
    fn pfm_rows_are_bottom_up() {
        let img = Image::from_data(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let bytes = encode_pfm(&img).unwrap();
        let off = bytes.len() - 8;
        assert_eq!(&bytes[off..off + 4], &2f32.to_le_bytes());
    }

    #[test]
    fn non_finite_pixels_are_rejected() {
        let img = Image::from_data(1, 1, 1, vec![f64::NAN]).unwrap();
        assert!(matches!(encode_pfm(&img), Err(SceneError::NonFinite)));
        let rgb = Image::from_data(1, 1, 3, vec![0.0, f64::INFINITY, 0.0]).unwrap();
        assert!(matches!(encode_ppm(&rgb), Err(SceneError::NonFinite)));
    }

    #[test]
    fn malformed_headers() {
        assert!(decode_ppm(b"P5\n1 1\n255\n\x00").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00\x00\x00").is_err());
        assert!(decode_pfm(b"Pf\n1 1\n").is_err());
        assert!(decode_ppm(b"P6\n# comment\n1 1\n255\n\x01\x02\x03").is_ok());
    }
}
