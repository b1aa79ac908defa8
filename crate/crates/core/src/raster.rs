//! 8-bit raster images and PNG codec.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("unsupported png layout: {0}")]
    Unsupported(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channels {
    Gray,
    Rgb,
}

impl Channels {
    pub fn count(self) -> usize {
        match self {
            Channels::Gray => 1,
            Channels::Rgb => 3,
        }
    }
}

/// Row-major interleaved 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    channels: Channels,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: Channels, fill: u8) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![fill; width * height * channels.count()],
        }
    }

    pub fn from_raw(width: usize, height: usize, channels: Channels, data: Vec<u8>) -> Option<Self> {
        (data.len() == width * height * channels.count()).then_some(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, fill: u8) -> Self {
        Self::new(width, height, Channels::Gray, fill)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, Channels) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels.count() + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        let n = self.channels.count();
        self.data[(y * self.width + x) * n + c] = v;
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Self {
        let n = self.channels.count();
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let src = (y * self.width + (self.width - 1 - x)) * n;
                let dst = (y * self.width + x) * n;
                out.data[dst..dst + n].copy_from_slice(&self.data[src..src + n]);
            }
        }
        out
    }

    /// Largest per-sample absolute difference. `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Image) -> Option<u8> {
        if self.dims() != other.dims() {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a.abs_diff(*b))
                .max()
                .unwrap_or(0),
        )
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, RasterError> {
        let mut buf = Vec::new();
        self.write_png(&mut buf)?;
        Ok(buf)
    }

    pub fn write_png<W: Write>(&self, w: W) -> Result<(), RasterError> {
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(match self.channels {
            Channels::Gray => png::ColorType::Grayscale,
            Channels::Rgb => png::ColorType::Rgb,
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&self.data)?;
        writer.finish()?;
        Ok(())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, RasterError> {
        Self::read_png(Cursor::new(bytes))
    }

    pub fn read_png<R: Read + std::io::BufRead + std::io::Seek>(r: R) -> Result<Self, RasterError> {
        let mut dec = png::Decoder::new(r);
        dec.set_transformations(png::Transformations::EXPAND);
        let mut reader = dec.read_info()?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf)?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(RasterError::Unsupported(format!("bit depth {:?}", info.bit_depth)));
        }
        let channels = match info.color_type {
            png::ColorType::Grayscale => Channels::Gray,
            png::ColorType::Rgb => Channels::Rgb,
            other => return Err(RasterError::Unsupported(format!("color type {other:?}"))),
        };
        buf.truncate(info.buffer_size());
        Ok(Image {
            width: info.width as usize,
            height: info.height as usize,
            channels,
            data: buf,
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        let f = std::fs::File::create(path)?;
        self.write_png(std::io::BufWriter::new(f))
    }

    pub fn load_png(path: &Path) -> Result<Self, RasterError> {
        let f = std::fs::File::open(path)?;
        Self::read_png(std::io::BufReader::new(f))
    }
}
