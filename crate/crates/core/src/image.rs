//! Minimal interleaved 8-bit RGB raster.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::features::BBox;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize * 3],
        }
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        let want = width as usize * height as usize * 3;
        if data.len() != want {
            return Err(Error::Format(format!(
                "{}x{} RGB image needs {} bytes, got {}",
                width,
                height,
                want,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn put_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Exact sub-image covered by `bbox`.
    pub fn crop(&self, bbox: BBox) -> Result<RgbImage> {
        if !bbox.fits_within(self.width, self.height) {
            return Err(Error::invalid(format!(
                "bbox [{}, {}, {}, {}] outside {}x{} image",
                bbox.x, bbox.y, bbox.w, bbox.h, self.width, self.height
            )));
        }
        let mut out = Vec::with_capacity(bbox.area() as usize * 3);
        for y in bbox.y..bbox.y + bbox.h {
            let start = self.offset(bbox.x, y);
            out.extend_from_slice(&self.data[start..start + bbox.w as usize * 3]);
        }
        Ok(RgbImage {
            width: bbox.w,
            height: bbox.h,
            data: out,
        })
    }

    /// Copies `src` with its top-left corner at `(x, y)`. The source must fit.
    pub fn blit(&mut self, src: &RgbImage, x: u32, y: u32) -> Result<()> {
        if x as u64 + src.width as u64 > self.width as u64 || y as u64 + src.height as u64 > self.height as u64 {
            return Err(Error::invalid(format!(
                "{}x{} tile at ({}, {}) overflows {}x{} canvas",
                src.width, src.height, x, y, self.width, self.height
            )));
        }
        let row_bytes = src.width as usize * 3;
        for sy in 0..src.height {
            let d = self.offset(x, y + sy);
            let s = src.offset(0, sy);
            self.data[d..d + row_bytes].copy_from_slice(&src.data[s..s + row_bytes]);
        }
        Ok(())
    }
}
