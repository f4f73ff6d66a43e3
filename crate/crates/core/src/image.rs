//! Float images on the [0, 255] intensity scale, binary flame masks, and
//! their on-disk formats (PPM P6, PBM P4 and the lossless `FIM1` dump).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved float image. Channel count is 1 or 3.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u32) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: u32, height: u32, channels: u32, value: f32) -> Self {
        assert!(channels == 1 || channels == 3, "images have 1 or 3 channels");
        Image {
            width,
            height,
            channels,
            data: vec![value; (width * height * channels) as usize],
        }
    }

    pub fn from_data(width: u32, height: u32, channels: u32, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Usage(format!("unsupported channel count {channels}")));
        }
        if data.len() != (width * height * channels) as usize {
            return Err(Error::Usage(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("image intensities must be finite and >= 0".into()));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32, c: u32) -> usize {
        ((y * self.width + x) * self.channels + c) as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u32) -> f32 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: u32, v: f32) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Single-channel copy of channel `c`.
    pub fn channel(&self, c: u32) -> Image {
        assert!(c < self.channels);
        let data = self
            .data
            .chunks_exact(self.channels as usize)
            .map(|px| px[c as usize])
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Interleave three single-channel images.
    pub fn merge_rgb(r: &Image, g: &Image, b: &Image) -> Result<Image> {
        if r.channels != 1 || !r.same_shape(g) || !r.same_shape(b) {
            return Err(Error::Usage("merge_rgb needs three equal single-channel images".into()));
        }
        let mut out = Image::new(r.width, r.height, 3);
        for (i, px) in out.data.chunks_exact_mut(3).enumerate() {
            px[0] = r.data[i];
            px[1] = g.data[i];
            px[2] = b.data[i];
        }
        Ok(out)
    }

    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        Image::merge_rgb(self, self, self).expect("same shape")
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Rect {
    pub fn full(width: u32, height: u32) -> Self {
        Rect {
            x0: 0,
            y0: 0,
            x1: width - 1,
            y1: height - 1,
        }
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0 + 1
    }

    pub fn area(&self) -> usize {
        self.width() as usize * self.height() as usize
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.x0 <= self.x1 && self.y0 <= self.y1 && self.x1 < width && self.y1 < height
    }
}

/// One flag per pixel; set means "flame".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlameMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl FlameMask {
    pub fn new(width: u32, height: u32) -> Self {
        FlameMask {
            width,
            height,
            bits: vec![false; (width * height) as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        FlameMask {
            width,
            height,
            bits: vec![true; (width * height) as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }
}

// ----- PPM / PBM --------------------------------------------------------------

fn quantize(v: f32) -> u8 {
    // round half up after clamping
    (v.clamp(0.0, 255.0) + 0.5).floor().min(255.0) as u8
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let rgb = img.to_rgb();
    let mut out = format!("P6\n{} {}\n255\n", rgb.width, rgb.height).into_bytes();
    out.extend(rgb.data.iter().map(|&v| quantize(v)));
    out
}

pub fn write_ppm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

/// Parses a netpbm header, returning the header fields and the offset of the
/// first raster byte.
fn parse_netpbm_header(bytes: &[u8], magic: &str, fields: usize) -> Result<(Vec<u32>, usize)> {
    let ctx = "netpbm header";
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        return Err(Error::format(ctx, format!("expected magic {magic}")));
    }
    let mut pos = 2;
    let mut values = Vec::with_capacity(fields);
    while values.len() < fields {
        // skip whitespace and comments
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(ctx, "truncated header"));
        }
        let s = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        values.push(s.parse().map_err(|_| Error::format(ctx, "bad number"))?);
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(ctx, "missing raster separator"));
    }
    Ok((values, pos + 1))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let (hdr, start) = parse_netpbm_header(bytes, "P6", 3)?;
    let (w, h, maxval) = (hdr[0], hdr[1], hdr[2]);
    if maxval != 255 {
        return Err(Error::format(
            "ppm",
            format!("only 8-bit PPM supported (maxval {maxval})"),
        ));
    }
    let n = (w * h * 3) as usize;
    if bytes.len() < start + n {
        return Err(Error::format("ppm", "truncated raster"));
    }
    let data = bytes[start..start + n].iter().map(|&b| b as f32).collect();
    Image::from_data(w, h, 3, data)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

pub fn encode_pbm(mask: &FlameMask) -> Vec<u8> {
    let mut out = format!("P4\n{} {}\n", mask.width, mask.height).into_bytes();
    let row_bytes = mask.width.div_ceil(8) as usize;
    for y in 0..mask.height {
        let mut row = vec![0u8; row_bytes];
        for x in 0..mask.width {
            if mask.get(x, y) {
                row[(x / 8) as usize] |= 0x80 >> (x % 8);
            }
        }
        out.extend(row);
    }
    out
}

pub fn decode_pbm(bytes: &[u8]) -> Result<FlameMask> {
    let (hdr, start) = parse_netpbm_header(bytes, "P4", 2)?;
    let (w, h) = (hdr[0], hdr[1]);
    let row_bytes = w.div_ceil(8) as usize;
    if bytes.len() < start + row_bytes * h as usize {
        return Err(Error::format("pbm", "truncated raster"));
    }
    let mut mask = FlameMask::new(w, h);
    for y in 0..h {
        let row = &bytes[start + y as usize * row_bytes..];
        for x in 0..w {
            mask.set(x, y, row[(x / 8) as usize] & (0x80 >> (x % 8)) != 0);
        }
    }
    Ok(mask)
}

pub fn write_pbm(path: impl AsRef<Path>, mask: &FlameMask) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pbm(mask)).map_err(|e| Error::io(path, e))
}

// ----- FIM1 float dump --------------------------------------------------------
//
// Little-endian: magic "FIM1"; u32 version = 1; u32 channels; u32 width;
// u32 height; then width*height*channels f32 values, pixel-interleaved,
// rows top to bottom.

const FIM_MAGIC: &[u8; 4] = b"FIM1";

pub fn encode_fim(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + img.data.len() * 4);
    out.extend_from_slice(FIM_MAGIC);
    for v in [1, img.channels, img.width, img.height] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_fim(bytes: &[u8]) -> Result<Image> {
    let ctx = "fim";
    if bytes.len() < 20 || &bytes[..4] != FIM_MAGIC {
        return Err(Error::format(ctx, "bad magic"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let (version, channels, width, height) = (u32_at(4), u32_at(8), u32_at(12), u32_at(16));
    if version != 1 {
        return Err(Error::format(ctx, format!("unsupported version {version}")));
    }
    let n = width as usize * height as usize * channels as usize;
    if bytes.len() != 20 + 4 * n {
        return Err(Error::format(ctx, "payload length mismatch"));
    }
    let data = bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Image::from_data(width, height, channels, data).map_err(|e| Error::format(ctx, e.to_string()))
}

pub fn write_fim(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_fim(img)).map_err(|e| Error::io(path, e))
}

pub fn read_fim(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fim(&bytes)
}

/// Reads either a PPM or an FIM1 dump, deciding by magic bytes.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(FIM_MAGIC) {
        decode_fim(&bytes)
    } else {
        decode_ppm(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ppm_rounds_half_up_and_clamps() {
        let img = Image::from_data(2, 1, 3, vec![0.5, 1.49, 254.5, 300.0, 0.0, 2.5]).unwrap();
        let bytes = encode_ppm(&img);
        assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(&bytes[11..], &[1, 1, 255, 255, 0, 3]);
    }

    #[test]
    fn grayscale_ppm_is_replicated() {
        let img = Image::from_data(1, 1, 1, vec![7.0]).unwrap();
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        assert_eq!(back.data, vec![7.0, 7.0, 7.0]);
    }

    #[test]
    fn ppm_header_comments() {
        let bytes = b"P6\n# hello\n1 1\n255\n\x01\x02\x03";
        assert_eq!(decode_ppm(bytes).unwrap().data, vec![1.0, 2.0, 3.0]);
        assert!(decode_ppm(b"P6\n1 1\n255\n\x01").is_err());
        assert!(decode_ppm(b"P5\n1 1\n255\n\x01").is_err());
    }

    #[test]
    fn fim_rejects_bad_payload() {
        let img = Image::filled(3, 2, 1, 4.0);
        let mut bytes = encode_fim(&img);
        bytes.pop();
        assert!(decode_fim(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn fim_round_trip(w in 1u32..8, h in 1u32..8, rgb in any::<bool>(), seed in any::<u64>()) {
            let c = if rgb { 3 } else { 1 };
            let n = (w * h * c) as usize;
            let data: Vec<f32> = (0..n).map(|i| ((seed as usize ^ i.wrapping_mul(7919)) % 25600) as f32 / 100.0).collect();
            let img = Image::from_data(w, h, c, data).unwrap();
            prop_assert_eq!(decode_fim(&encode_fim(&img)).unwrap(), img);
        }

        #[test]
        fn pbm_round_trip(w in 1u32..20, h in 1u32..6, bits in prop::collection::vec(any::<bool>(), 120)) {
            let mut m = FlameMask::new(w, h);
            for (i, b) in m.bits.iter_mut().enumerate() { *b = bits[i % bits.len()]; }
            prop_assert_eq!(decode_pbm(&encode_pbm(&m)).unwrap(), m);
        }
    }
}
