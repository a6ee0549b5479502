//! Grayscale image files: binary PGM (P5) as the required bit-exact
//! format, 8-bit grayscale PNG as a convenience.

use std::path::Path;

use crate::error::{Error, Result};
use crate::render::GrayRaster;

/// Encode as binary PGM, maxval 255.
pub fn encode_pgm(img: &GrayRaster) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", img.width, img.height);
    let mut bytes = Vec::with_capacity(header.len() + img.pixels.len());
    bytes.extend_from_slice(header.as_bytes());
    bytes.extend_from_slice(&img.pixels);
    bytes
}

/// Parse binary PGM. Accepts whitespace and `#` comments in the header and
/// any maxval up to 255 (values are used raw).
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayRaster> {
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(Error::ImageFormat("not a binary PGM (missing P5 magic)".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Skip whitespace and comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(Error::ImageFormat("malformed PGM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::ImageFormat("malformed PGM header".into()))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::ImageFormat(format!("unsupported PGM maxval {maxval}")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::ImageFormat("malformed PGM header".into()));
    }
    pos += 1;
    let expected = width * height;
    let data = &bytes[pos..];
    if data.len() != expected {
        return Err(Error::ImageFormat(format!(
            "PGM pixel payload is {} bytes, expected {expected}",
            data.len()
        )));
    }
    Ok(GrayRaster { width: width as u32, height: height as u32, pixels: data.to_vec() })
}

pub fn write_pgm(img: &GrayRaster, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pgm(img))?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<GrayRaster> {
    parse_pgm(&std::fs::read(path)?)
}

pub fn write_png(img: &GrayRaster, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut encoder = png::Encoder::new(std::io::BufWriter::new(file), img.width, img.height);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer =
        encoder.write_header().map_err(|e| Error::ImageFormat(e.to_string()))?;
    writer
        .write_image_data(&img.pixels)
        .map_err(|e| Error::ImageFormat(e.to_string()))?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<GrayRaster> {
    let file = std::fs::File::open(path)?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| Error::ImageFormat(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::ImageFormat(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::ImageFormat(
            "only 8-bit grayscale PNG is supported".into(),
        ));
    }
    buf.truncate(info.buffer_size());
    Ok(GrayRaster { width: info.width, height: info.height, pixels: buf })
}

/// Load a grayscale image, dispatching on the file's magic bytes.
pub fn read_gray_image(path: &Path) -> Result<GrayRaster> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"P5") {
        parse_pgm(&bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        // Re-read through the PNG decoder for streaming.
        read_png(path)
    } else {
        Err(Error::ImageFormat(format!(
            "{}: neither binary PGM nor PNG",
            path.display()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GrayRaster {
        GrayRaster { width: 3, height: 2, pixels: vec![0, 255, 10, 20, 30, 40] }
    }

    #[test]
    fn pgm_roundtrip_is_bit_exact() {
        let img = sample();
        let bytes = encode_pgm(&img);
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        let back = parse_pgm(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(encode_pgm(&back), bytes);
    }

    #[test]
    fn pgm_accepts_comments() {
        let mut bytes = b"P5\n# rendered edges\n3 2 # dims\n255\n".to_vec();
        bytes.extend_from_slice(&sample().pixels);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!(img, sample());
    }

    #[test]
    fn pgm_rejects_short_payload() {
        let bytes = b"P5\n4 4\n255\nabc".to_vec();
        assert!(matches!(parse_pgm(&bytes), Err(Error::ImageFormat(_))));
    }

    #[test]
    fn png_roundtrip() {
        let dir = std::env::temp_dir().join(format!("fieldcal-png-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.png");
        write_png(&sample(), &path).unwrap();
        let back = read_gray_image(&path).unwrap();
        assert_eq!(back, sample());
        std::fs::remove_dir_all(&dir).ok();
    }
}
