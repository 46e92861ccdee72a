//! Deterministic 8-bit RGB PNG encoding.

use std::path::Path;

use thiserror::Error;
use think3d_core::Image;

#[derive(Debug, Error)]
pub enum PngError {
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unsupported PNG layout: {0}")]
    Layout(String),
    #[error("write {path}: {source}")]
    Write { path: String, source: std::io::Error },
}

pub fn encode_png(image: &Image) -> Result<Vec<u8>, PngError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width, image.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Balanced);
        let mut w = enc.write_header()?;
        w.write_image_data(&image.data)?;
        w.finish()?;
    }
    Ok(out)
}

pub fn write_png(image: &Image, path: &Path) -> Result<(), PngError> {
    let bytes = encode_png(image)?;
    std::fs::write(path, bytes).map_err(|source| PngError::Write { path: path.display().to_string(), source })
}

/// Decodes 8-bit RGB or RGBA PNGs; alpha is dropped.
pub fn decode_png(bytes: &[u8]) -> Result<Image, PngError> {
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| PngError::Layout("image too large".into()))?];
    let info = reader.next_frame(&mut buf)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(PngError::Layout(format!("bit depth {:?}", info.bit_depth)));
    }
    let px = (info.width * info.height) as usize;
    let data = match info.color_type {
        png::ColorType::Rgb => buf[..px * 3].to_vec(),
        png::ColorType::Rgba => buf[..px * 4].chunks_exact(4).flat_map(|c| [c[0], c[1], c[2]]).collect(),
        png::ColorType::Grayscale => buf[..px].iter().flat_map(|&g| [g, g, g]).collect(),
        other => return Err(PngError::Layout(format!("color type {other:?}"))),
    };
    Ok(Image { width: info.width, height: info.height, data })
}
