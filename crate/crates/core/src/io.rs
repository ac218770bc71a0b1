//! 8-bit grayscale image files (PNG and binary PGM).
//!
//! Loading maps byte `v` to `v / 255`; saving maps `t` to
//! `floor(clamp(t, 0, 1) * 255 + 0.5)`, so byte-representable images round
//! trip exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, WppError};
use crate::image::Image;

pub fn byte_to_intensity(v: u8) -> f64 {
    v as f64 / 255.0
}

pub fn intensity_to_byte(t: f64) -> u8 {
    (t.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn format_err(path: &Path, reason: impl Into<String>) -> WppError {
    WppError::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn is_pgm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| WppError::io(path, e))?;
    if bytes.starts_with(b"P5") {
        decode_pgm(path, &bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(path)
    } else {
        Err(format_err(path, "neither PNG nor binary PGM (P5)"))
    }
}

fn decode_png(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| WppError::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| format_err(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| format_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| format_err(path, e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(format_err(
            path,
            format!("expected 8-bit grayscale, found {:?} {:?}", info.color_type, info.bit_depth),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        data.extend(row[..w].iter().map(|&v| byte_to_intensity(v)));
    }
    Image::from_vec(h, w, data)
}

fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(format_err(path, "truncated PGM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(path, "malformed PGM header"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(format_err(path, format!("PGM maxval {maxval}, only 255 is supported")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err(path, "malformed PGM header"));
    }
    pos += 1;
    let pixels = bytes
        .get(pos..pos + w * h)
        .ok_or_else(|| format_err(path, "truncated PGM pixel data"))?;
    Image::from_vec(h, w, pixels.iter().map(|&v| byte_to_intensity(v)).collect())
}

/// Writes PGM for a `.pgm` extension and PNG otherwise.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.as_slice().iter().map(|&t| intensity_to_byte(t)).collect();
    let file = File::create(path).map_err(|e| WppError::io(path, e))?;
    let mut w = BufWriter::new(file);
    if is_pgm(path) {
        write!(w, "P5\n{} {}\n255\n", img.cols(), img.rows()).map_err(|e| WppError::io(path, e))?;
        w.write_all(&bytes).map_err(|e| WppError::io(path, e))?;
        w.flush().map_err(|e| WppError::io(path, e))?;
        return Ok(());
    }
    let mut enc = png::Encoder::new(w, img.cols() as u32, img.rows() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| format_err(path, e.to_string()))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| format_err(path, e.to_string()))?;
    writer.finish().map_err(|e| format_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping() {
        assert_eq!(intensity_to_byte(byte_to_intensity(128)), 128);
        assert_eq!(intensity_to_byte(1.3), 255);
        assert_eq!(intensity_to_byte(-0.2), 0);
        assert_eq!(intensity_to_byte(0.5), 128);
        for v in 0..=255u8 {
            assert_eq!(intensity_to_byte(byte_to_intensity(v)), v);
        }
    }

    #[test]
    fn round_trip_png_and_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(7, 5, |i, j| byte_to_intensity((i * 37 + j * 11) as u8));
        for name in ["a.png", "a.pgm"] {
            let p = dir.path().join(name);
            save_image(&img, &p).unwrap();
            assert_eq!(load_image(&p).unwrap(), img);
        }
    }

    #[test]
    fn truncated_and_unknown_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pgm");
        std::fs::write(&p, b"P5\n4 4\n255\n\x01\x02").unwrap();
        assert!(matches!(load_image(&p), Err(WppError::Format { .. })));
        let q = dir.path().join("x.bin");
        std::fs::write(&q, b"hello").unwrap();
        assert!(matches!(load_image(&q), Err(WppError::Format { .. })));
        assert!(matches!(load_image(dir.path().join("missing.png")), Err(WppError::Io { .. })));
    }

    #[test]
    fn pgm_header_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        std::fs::write(&p, b"P5\n# made by hand\n2 1\n255\n\x00\xff").unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.to_rows(), vec![vec![0.0, 1.0]]);
    }
}
