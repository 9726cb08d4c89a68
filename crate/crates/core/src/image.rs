//! Float images in `[0, 1]`, interleaved `H×W×C`, plus defect masks.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::shape(
                "image",
                format!("{width}x{height}x{channels}"),
            ));
        }
        if data.len() != width * height * channels {
            return Err(Error::shape(
                "image",
                format!(
                    "{width}x{height}x{channels} needs {} values, got {}",
                    width * height * channels,
                    data.len()
                ),
            ));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Edge-clamped lookup.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, c: usize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y, c)
    }

    pub fn clamp01(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// `[1, C, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut out = vec![0.0; w * h * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[(ch * h + y) * w + x] = self.data[(y * w + x) * c + ch];
                }
            }
        }
        Tensor::new(vec![1, c, h, w], out).expect("extents are non-zero")
    }

    /// Reads sample `index` of a `[N, C, H, W]` tensor.
    pub fn from_tensor(t: &Tensor, index: usize) -> Result<Image> {
        let (n, c, h, w) = t.dims4("image")?;
        if index >= n {
            return Err(Error::shape("image", format!("sample {index} of {n}")));
        }
        let base = index * c * h * w;
        let mut data = vec![0.0; c * h * w];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data[(y * w + x) * c + ch] = t.data()[base + (ch * h + y) * w + x];
                }
            }
        }
        Image::new(w, h, c, data)
    }

    /// Crop of the window starting at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Image> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::shape(
                "crop",
                format!(
                    "{width}x{height}+{x0}+{y0} outside {}x{}",
                    self.width, self.height
                ),
            ));
        }
        let mut data = Vec::with_capacity(width * height * self.channels);
        for y in y0..y0 + height {
            let row = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[row..row + width * self.channels]);
        }
        Image::new(width, height, self.channels, data)
    }

    /// Pads right/bottom edges by mirror reflection.
    pub fn pad_reflect(&self, width: usize, height: usize) -> Image {
        let reflect = |i: usize, n: usize| -> usize {
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let m = i % period;
            if m < n {
                m
            } else {
                period - m
            }
        };
        let mut out = Image::filled(width, height, self.channels, 0.0);
        for y in 0..height {
            for x in 0..width {
                for c in 0..self.channels {
                    let v = self.get(reflect(x, self.width), reflect(y, self.height), c);
                    out.set(x, y, c, v);
                }
            }
        }
        out
    }

    /// Channel 0 as a single-channel image, or the channel mean for colour input.
    pub fn luminance(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks(self.channels)
            .map(|p| p.iter().sum::<f64>() / self.channels as f64)
            .collect();
        Image::new(self.width, self.height, 1, data).expect("same extents")
    }
}

/// Structured-defect map: 1 marks pixels to inpaint.
///
/// `alpha` is the feathered compositing weight; `binary` is always
/// `alpha > 0.5`.
#[derive(Clone, Debug, PartialEq)]
pub struct DefectMask {
    width: usize,
    height: usize,
    alpha: Vec<f64>,
    binary: Vec<u8>,
}

pub const MASK_THRESHOLD: f64 = 0.5;

impl DefectMask {
    pub fn empty(width: usize, height: usize) -> Self {
        DefectMask {
            width,
            height,
            alpha: vec![0.0; width * height],
            binary: vec![0; width * height],
        }
    }

    pub fn from_alpha(width: usize, height: usize, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != width * height {
            return Err(Error::shape(
                "mask",
                format!("{width}x{height} vs {}", alpha.len()),
            ));
        }
        if let Some(v) = alpha.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Parameter(format!("mask alpha {v} outside [0, 1]")));
        }
        let binary = alpha
            .iter()
            .map(|&a| u8::from(a > MASK_THRESHOLD))
            .collect();
        Ok(DefectMask {
            width,
            height,
            alpha,
            binary,
        })
    }

    /// Hard mask; alpha equals the binary map.
    pub fn from_binary(width: usize, height: usize, binary: &[bool]) -> Result<Self> {
        let alpha = binary.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Self::from_alpha(width, height, alpha)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn binary(&self) -> &[u8] {
        &self.binary
    }

    pub fn is_set(&self, x: usize, y: usize) -> bool {
        self.binary[y * self.width + x] == 1
    }

    pub fn count(&self) -> usize {
        self.binary.iter().map(|&b| b as usize).sum()
    }

    /// Pixelwise maximum of alphas.
    pub fn merge(&mut self, other: &DefectMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::shape("mask merge", "extent mismatch"));
        }
        for i in 0..self.alpha.len() {
            self.alpha[i] = self.alpha[i].max(other.alpha[i]);
            self.binary[i] = u8::from(self.alpha[i] > MASK_THRESHOLD);
        }
        Ok(())
    }

    /// `[1, 1, H, W]` tensor of the binary map.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.binary.iter().map(|&b| b as f64).collect();
        Tensor::new(vec![1, 1, self.height, self.width], data).expect("extents are non-zero")
    }

    /// Max-pools the binary map by `factor`: any defect pixel marks its cell.
    pub fn downscale_max(&self, factor: usize) -> Result<DefectMask> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::shape(
                "mask downscale",
                format!("{}x{} by {factor}", self.width, self.height),
            ));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let mut cells = vec![false; w * h];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_set(x, y) {
                    cells[(y / factor) * w + x / factor] = true;
                }
            }
        }
        DefectMask::from_binary(w, h, &cells)
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<DefectMask> {
        let img = Image::new(self.width, self.height, 1, self.alpha.clone())?
            .crop(x0, y0, width, height)?;
        DefectMask::from_alpha(width, height, img.data().to_vec())
    }

    pub fn pad_reflect(&self, width: usize, height: usize) -> DefectMask {
        let img = Image::new(self.width, self.height, 1, self.alpha.clone())
            .expect("mask extents")
            .pad_reflect(width, height);
        DefectMask::from_alpha(width, height, img.data().to_vec()).expect("alpha stays in range")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_preserves_layout() {
        let data: Vec<f64> = (0..24).map(|v| v as f64 / 24.0).collect();
        let img = Image::new(4, 2, 3, data).unwrap();
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[1, 3, 2, 4]);
        assert_eq!(t.data()[4], img.get(0, 1, 0));
        assert_eq!(Image::from_tensor(&t, 0).unwrap(), img);
    }

    #[test]
    fn mask_binary_follows_alpha_threshold() {
        let m = DefectMask::from_alpha(3, 1, vec![0.2, 0.5, 0.51]).unwrap();
        assert_eq!(m.binary(), &[0, 0, 1]);
        assert!(DefectMask::from_alpha(1, 1, vec![1.5]).is_err());
    }

    #[test]
    fn downscale_marks_any_defect_cell() {
        let mut bits = vec![false; 64];
        bits[9] = true; // (1, 1)
        let m = DefectMask::from_binary(8, 8, &bits).unwrap();
        let d = m.downscale_max(4).unwrap();
        assert_eq!(d.binary(), &[1, 0, 0, 0]);
    }

    #[test]
    fn pad_reflect_then_crop_is_identity() {
        let data: Vec<f64> = (0..30).map(|v| v as f64 / 30.0).collect();
        let img = Image::new(5, 6, 1, data).unwrap();
        let padded = img.pad_reflect(8, 8);
        assert_eq!(padded.get(5, 0, 0), img.get(3, 0, 0));
        assert_eq!(padded.crop(0, 0, 5, 6).unwrap(), img);
    }
}
