use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::codecs::png::PngEncoder;
use image::{ImageEncoder, ImageFormat, RgbImage};

use super::record::Codec;

const JPEG_QUALITY: u8 = 90;

pub fn encode_tile(tile: &RgbImage, codec: Codec) -> Result<Vec<u8>, String> {
    let (w, h) = tile.dimensions();
    match codec {
        Codec::Raw => Ok(tile.as_raw().clone()),
        Codec::Png => {
            let mut out = Vec::new();
            PngEncoder::new(&mut out)
                .write_image(tile.as_raw(), w, h, image::ExtendedColorType::Rgb8)
                .map_err(|e| e.to_string())?;
            Ok(out)
        }
        Codec::Jpeg => {
            let mut out = Vec::new();
            JpegEncoder::new_with_quality(&mut out, JPEG_QUALITY)
                .write_image(tile.as_raw(), w, h, image::ExtendedColorType::Rgb8)
                .map_err(|e| e.to_string())?;
            Ok(out)
        }
    }
}

/// Decode a chunk, checking that it has the dimensions the slide record
/// implies for its position in the tile grid.
pub fn decode_tile(bytes: &[u8], codec: Codec, width: u32, height: u32) -> Result<RgbImage, String> {
    let image = match codec {
        Codec::Raw => {
            let want = width as usize * height as usize * 3;
            if bytes.len() != want {
                return Err(format!("raw chunk has {} bytes, expected {want}", bytes.len()));
            }
            RgbImage::from_raw(width, height, bytes.to_vec()).ok_or("raw buffer size mismatch")?
        }
        Codec::Png | Codec::Jpeg => {
            let format = if codec == Codec::Png { ImageFormat::Png } else { ImageFormat::Jpeg };
            image::load(Cursor::new(bytes), format)
                .map_err(|e| e.to_string())?
                .into_rgb8()
        }
    };
    if image.dimensions() != (width, height) {
        return Err(format!(
            "decoded tile is {}x{}, expected {width}x{height}",
            image.width(),
            image.height()
        ));
    }
    Ok(image)
}
