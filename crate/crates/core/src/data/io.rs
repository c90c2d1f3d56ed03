//! 8-bit image files: PNG, plus binary PPM/PGM as a minimal fallback.
//!
//! Loading maps bytes by `v / 255`; saving clamps and rounds half up, so a
//! save/load cycle of any 8-bit image is exact.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imgcore::Image;

fn file_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::ImageFile {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// `round(v·255)` with halves rounded up, clamped to `[0, 255]`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor().min(255.0) as u8
}

fn to_bytes(img: &Image) -> Vec<u8> {
    img.data().iter().map(|&v| quantize(v)).collect()
}

fn from_bytes(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Image> {
    let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(height, width, channels, data)
}

fn is_ppm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("ppm" | "pgm" | "pnm")
    )
}

/// Encodes as an 8-bit RGB or grayscale PNG.
pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let color = match img.channels() {
        3 => png::ColorType::Rgb,
        1 => png::ColorType::Grayscale,
        c => return Err(Error::Channels(c)),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Shape(format!("png encode: {e}")))?;
        writer
            .write_image_data(&to_bytes(img))
            .map_err(|e| Error::Shape(format!("png encode: {e}")))?;
    }
    Ok(out)
}

/// Decodes an 8-bit PNG. RGBA drops alpha, gray-alpha drops alpha,
/// palette and low-bit gray are expanded. 16-bit files are rejected.
pub fn decode_png(bytes: &[u8], path: &Path) -> Result<Image> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(|e| file_err(path, e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(file_err(path, format!("unsupported bit depth {depth:?}")));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| file_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| file_err(path, e.to_string()))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let buf = &buf[..info.buffer_size()];
    let (src_ch, keep) = match color {
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        other => return Err(file_err(path, format!("unsupported color type {other:?}"))),
    };
    let bytes: Vec<u8> = buf
        .chunks_exact(src_ch)
        .flat_map(|px| px[..keep].iter().copied())
        .collect();
    from_bytes(h, w, keep, &bytes).map_err(|e| file_err(path, e.to_string()))
}

/// Binary PPM (`P6`) for RGB, PGM (`P5`) for one channel.
pub fn encode_pnm(img: &Image) -> Result<Vec<u8>> {
    let magic = match img.channels() {
        3 => "P6",
        1 => "P5",
        c => return Err(Error::Channels(c)),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(to_bytes(img));
    Ok(out)
}

pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Image> {
    // header: magic, width, height, maxval separated by whitespace, with
    // `#` comments, then exactly one whitespace byte before the raster
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(file_err(path, "truncated PNM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    i += 1;
    let channels = match fields[0].as_str() {
        "P6" => 3,
        "P5" => 1,
        m => return Err(file_err(path, format!("unsupported PNM variant {m}"))),
    };
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| file_err(path, format!("bad PNM header field `{s}`")))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(file_err(path, format!("unsupported bit depth (maxval {maxval})")));
    }
    let need = w * h * channels;
    let raster = bytes.get(i..i + need).ok_or_else(|| {
        file_err(path, format!("truncated raster: need {need} bytes, have {}", bytes.len().saturating_sub(i)))
    })?;
    from_bytes(h, w, channels, raster).map_err(|e| file_err(path, e.to_string()))
}

/// Loads a PNG, or a PPM/PGM when the extension says so.
pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| file_err(path, e.to_string()))?;
    if is_ppm(path) {
        decode_pnm(&bytes, path)
    } else {
        decode_png(&bytes, path)
    }
}

/// Saves as PNG, or PPM/PGM by extension.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let bytes = if is_ppm(path) { encode_pnm(img)? } else { encode_png(img)? };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).map_err(|e| file_err(path, e.to_string()))
}
