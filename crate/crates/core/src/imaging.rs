//! PNG encode/decode and crop/paste helpers shared by the pipeline and the mocks.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};

pub type ImageResult<T> = Result<T, image::ImageError>;

pub fn encode_png(img: &RgbImage) -> ImageResult<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> ImageResult<RgbImage> {
    Ok(image::load_from_memory_with_format(bytes, ImageFormat::Png)?.into_rgb8())
}

/// Width and height of an encoded PNG without keeping the pixels.
pub fn png_dimensions(bytes: &[u8]) -> ImageResult<(u32, u32)> {
    Ok(decode_png(bytes)?.dimensions())
}

pub fn open_rgb(path: &Path) -> ImageResult<RgbImage> {
    Ok(image::open(path)?.into_rgb8())
}

pub fn crop(img: &RgbImage, x: u32, y: u32, w: u32, h: u32) -> RgbImage {
    image::imageops::crop_imm(img, x, y, w, h).to_image()
}

pub fn paste(dst: &mut RgbImage, src: &RgbImage, x: u32, y: u32) {
    image::imageops::replace(dst, src, x as i64, y as i64);
}
