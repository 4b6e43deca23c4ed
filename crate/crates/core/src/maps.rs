//! Per-pixel maps exchanged between the network, the label forge and the
//! benchmark.

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Sample depth used when a prediction is written to disk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BitDepth {
    Eight,
    #[default]
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

/// Contour probability map with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContourPrediction {
    width: usize,
    height: usize,
    values: Vec<f32>,
    pub bit_depth: BitDepth,
}

impl ContourPrediction {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape("prediction", format!("{width}x{height} map with {} values", values.len())));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("prediction", format!("value {bad} outside [0, 1]")));
        }
        Ok(ContourPrediction { width, height, values, bit_depth: BitDepth::Sixteen })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        ContourPrediction { width, height, values: vec![0.0; width * height], bit_depth: BitDepth::Sixteen }
    }

    /// Takes the single plane of a `1×1×H×W` tensor.
    pub fn from_tensor<T: Element>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.n() != 1 || s.c() != 1 {
            return Err(Error::shape("prediction", format!("expected 1x1xHxW, got {s}")));
        }
        Self::new(s.w(), s.h(), t.data().iter().map(|v| v.as_f64() as f32).collect())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, self.height, self.width), self.values.clone()).expect("consistent extents")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Integer samples at the given depth (round to nearest).
    pub fn to_samples(&self, depth: BitDepth) -> Vec<u16> {
        let m = depth.max_value() as f32;
        self.values.iter().map(|&v| (v * m).round() as u16).collect()
    }

    pub fn from_samples(width: usize, height: usize, samples: &[u16], depth: BitDepth) -> Result<Self> {
        let m = depth.max_value();
        if let Some(bad) = samples.iter().find(|&&s| u32::from(s) > m) {
            return Err(Error::Format(format!("sample {bad} exceeds maxval {m}")));
        }
        let mut p = Self::new(width, height, samples.iter().map(|&s| s as f32 / m as f32).collect())?;
        p.bit_depth = depth;
        Ok(p)
    }

    /// Snaps every value to the grid of the given depth.
    pub fn quantized(&self, depth: BitDepth) -> Self {
        Self::from_samples(self.width, self.height, &self.to_samples(depth), depth).expect("in range")
    }

    /// Pixels with value `>= threshold`.
    pub fn binarize(&self, threshold: f32) -> LabelMap {
        let pixels = self.values.iter().map(|&v| u8::from(v >= threshold)).collect();
        LabelMap { width: self.width, height: self.height, pixels, provenance: Provenance::Unknown }
    }
}

/// Where a label map came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Provenance {
    MaskDerived,
    Enriched,
    Annotator(u32),
    Synthetic,
    #[default]
    Unknown,
}

/// Binary contour ground truth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    pub provenance: Provenance,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::shape("label", format!("{width}x{height} map with {} pixels", pixels.len())));
        }
        if let Some(bad) = pixels.iter().find(|&&p| p > 1) {
            return Err(Error::invalid("label", format!("value {bad} is not binary")));
        }
        Ok(LabelMap { width, height, pixels, provenance: Provenance::Unknown })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        LabelMap { width, height, pixels: vec![0; width * height], provenance: Provenance::Unknown }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.pixels[y * self.width + x] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 0).count()
    }

    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pixels.iter().enumerate().filter(|(_, &p)| p != 0).map(|(i, _)| (i % self.width, i / self.width))
    }

    pub fn same_extent(&self, width: usize, height: usize) -> bool {
        self.width == width && self.height == height
    }

    pub fn to_values<T: Element>(&self) -> Vec<T> {
        self.pixels.iter().map(|&p| if p != 0 { T::one() } else { T::zero() }).collect()
    }

    pub fn to_prediction(&self) -> ContourPrediction {
        ContourPrediction::new(self.width, self.height, self.pixels.iter().map(|&p| f32::from(p)).collect())
            .expect("binary values are in range")
    }
}
