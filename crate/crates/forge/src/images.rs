//! PNG decoding and encoding plus letterbox resizing, bridging the `image`
//! crate and the core raster type.

use std::io::Cursor;
use std::path::Path;

use forge_core::dataset::Letterbox;
use forge_core::image::RgbImage;
use forge_core::BBox;
use image::imageops::{self, FilterType};
use image::ImageFormat;

use crate::error::{ForgeError, Result};
use crate::fsutil;

fn to_buffer(img: &RgbImage) -> image::RgbImage {
    image::RgbImage::from_raw(img.width(), img.height(), img.as_raw().to_vec()).expect("consistent raster size")
}

fn from_buffer(buf: image::RgbImage) -> RgbImage {
    let (w, h) = buf.dimensions();
    RgbImage::from_raw(w, h, buf.into_raw()).expect("consistent raster size")
}

pub fn decode_rgb(bytes: &[u8], source: &Path) -> Result<RgbImage> {
    let img = image::load_from_memory(bytes).map_err(|e| ForgeError::corrupt(source, e.to_string()))?;
    Ok(from_buffer(img.to_rgb8()))
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    decode_rgb(&fsutil::read_bytes(path)?, path)
}

/// Width and height from the header, without decoding pixels.
pub fn dimensions(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|e| match e {
        image::ImageError::IoError(io) => ForgeError::io(path, io),
        other => ForgeError::corrupt(path, other.to_string()),
    })
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    to_buffer(img)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| ForgeError::Internal(format!("png encoding failed: {}", e)))?;
    Ok(out.into_inner())
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    fsutil::write_bytes(path, &encode_png(img)?)
}

/// Pads to a centered square with black, then resizes to `tile`×`tile`.
pub fn letterbox(img: &RgbImage, tile: u32) -> RgbImage {
    let lb = Letterbox::new(img.width(), img.height(), tile);
    let mut square = RgbImage::new(lb.side, lb.side);
    square.blit(img, lb.pad_x, lb.pad_y).expect("image fits its own square");
    if lb.side == tile {
        return square;
    }
    from_buffer(imageops::resize(&to_buffer(&square), tile, tile, FilterType::Triangle))
}

/// Crop of `bbox` from the image at `path`, letterboxed to `tile`.
pub fn object_tile(path: &Path, bbox: BBox, tile: u32) -> Result<RgbImage> {
    let img = load_rgb(path)?;
    let crop = img
        .crop(bbox)
        .map_err(|e| ForgeError::validation(format!("{}: {}", path.display(), e)))?;
    Ok(letterbox(&crop, tile))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact() {
        let mut img = RgbImage::new(7, 5);
        for y in 0..5 {
            for x in 0..7 {
                img.put_pixel(x, y, [x as u8 * 30, y as u8 * 40, 200]);
            }
        }
        let bytes = encode_png(&img).unwrap();
        assert_eq!(decode_rgb(&bytes, Path::new("mem")).unwrap(), img);
        assert_eq!(encode_png(&img).unwrap(), bytes);
    }

    #[test]
    fn letterbox_pads_wide_images() {
        let img = RgbImage::filled(8, 4, [255, 0, 0]);
        let out = letterbox(&img, 8);
        assert_eq!(out.dimensions(), (8, 8));
        assert_eq!(out.pixel(0, 0), [0, 0, 0]);
        assert_eq!(out.pixel(0, 2), [255, 0, 0]);
        assert_eq!(out.pixel(7, 5), [255, 0, 0]);
        assert_eq!(out.pixel(7, 7), [0, 0, 0]);
        assert_eq!(letterbox(&img, 16).dimensions(), (16, 16));
    }

    #[test]
    fn garbage_is_corrupt() {
        assert_eq!(decode_rgb(b"not a png", Path::new("x.png")).unwrap_err().exit_code(), 2);
    }
}
