//! Raw image tensors.

use crate::error::{Error, Result};

/// Borrowed `H×W×3` unsigned-byte image, row-major, channels interleaved.
#[derive(Debug, Clone, Copy)]
pub struct ImageView<'a> {
    height: usize,
    width: usize,
    data: &'a [u8],
}

impl<'a> ImageView<'a> {
    pub fn new(height: usize, width: usize, data: &'a [u8]) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(Error::ImageShape(format!(
                "{height}x{width}x3 does not match {} bytes",
                data.len()
            )));
        }
        Ok(ImageView {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &'a [u8] {
        self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * 3 + c]
    }
}

/// Owned counterpart of [`ImageView`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        ImageView::new(height, width, &data)?;
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Image {
            height,
            width,
            data,
        }
    }

    pub fn view(&self) -> ImageView<'_> {
        ImageView {
            height: self.height,
            width: self.width,
            data: &self.data,
        }
    }
}

/// Augmented image, planar `3×S×S` in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct AugImage {
    pub size: usize,
    pub data: Vec<f32>,
}

impl AugImage {
    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.size + y) * self.size + x]
    }

    /// Little-endian bytes, the input to batch checksums.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}
