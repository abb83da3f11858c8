//! Image files.
//!
//! Two formats:
//!
//! * **Raw tensor (`.nbt`)**: one ASCII header line `NBT1 <height> <width> <channels>\n`
//!   followed by `height * width * channels` little-endian `f64` values in
//!   row-major `(h, w, c)` order. Lossless.
//! * **PNG**: 8-bit grayscale (1 channel) or RGB (3 channels), for viewing.
//!   Export quantizes with `round(255 * v)`; import maps byte `b` to `b / 255`
//!   rounded through `f32`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::{Image, Shape};

pub const RAW_MAGIC: &str = "NBT1";

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad raw tensor header: {0}")]
    BadHeader(String),
    #[error("raw tensor truncated: expected {expected} bytes of data, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("png decode error: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("png encode error: {0}")]
    PngEncode(#[from] png::EncodingError),
    #[error("unsupported image layout: {0}")]
    Unsupported(String),
}

pub fn write_raw<W: Write>(mut w: W, img: &Image) -> Result<(), ImageIoError> {
    let s = img.shape();
    writeln!(w, "{RAW_MAGIC} {} {} {}", s.height, s.width, s.channels)?;
    let mut buf = Vec::with_capacity(img.len() * 8);
    for &v in img.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_raw<R: BufRead>(mut r: R) -> Result<Image, ImageIoError> {
    let mut header = String::new();
    r.read_line(&mut header)?;
    let fields: Vec<&str> = header.trim_end_matches('\n').split(' ').collect();
    if fields.len() != 4 || fields[0] != RAW_MAGIC {
        return Err(ImageIoError::BadHeader(header.trim_end().to_string()));
    }
    let dims: Vec<usize> = fields[1..]
        .iter()
        .map(|f| f.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| ImageIoError::BadHeader(format!("{}: {e}", header.trim_end())))?;
    let shape = Shape::new(dims[0], dims[1], dims[2]);
    let expected = shape.len() * 8;
    let mut bytes = Vec::with_capacity(expected);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != expected {
        return Err(ImageIoError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Image::new(shape, data).expect("length checked"))
}

pub fn save_raw(path: impl AsRef<Path>, img: &Image) -> Result<(), ImageIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_raw(&mut w, img)?;
    w.flush()?;
    Ok(())
}

pub fn load_raw(path: impl AsRef<Path>) -> Result<Image, ImageIoError> {
    read_raw(BufReader::new(File::open(path)?))
}

pub fn save_png(path: impl AsRef<Path>, img: &Image) -> Result<(), ImageIoError> {
    let s = img.shape();
    let color = match s.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(ImageIoError::Unsupported(format!("{c} channels"))),
    };
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, s.width as u32, s.height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    writer.write_image_data(&bytes)?;
    Ok(())
}

pub fn load_png(path: impl AsRef<Path>) -> Result<Image, ImageIoError> {
    let mut dec = png::Decoder::new(BufReader::new(File::open(path)?));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    let (in_ch, out_ch) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        other => return Err(ImageIoError::Unsupported(format!("{other:?}"))),
    };
    let shape = Shape::new(info.height as usize, info.width as usize, out_ch);
    let mut data = Vec::with_capacity(shape.len());
    for row in buf[..info.line_size * info.height as usize].chunks_exact(info.line_size) {
        for px in row[..info.width as usize * in_ch].chunks_exact(in_ch) {
            for &b in &px[..out_ch] {
                data.push(f64::from(f32::from(b) / 255.0));
            }
        }
    }
    Ok(Image::new(shape, data).expect("decoded length"))
}

/// Loads `.nbt` raw tensors or `.png` files by extension.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageIoError> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => load_png(path),
        _ => load_raw(path),
    }
}
