use crate::error::{invalid, Result};
use crate::nets::image_shape;
use crate::tensor::Tensor;

/// An RGB image `[3, 32, 32]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image(Tensor);

impl Image {
    pub fn new(t: Tensor) -> Result<Self> {
        t.expect_shape(&image_shape())?;
        if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid!("image values must lie in [0, 1]"));
        }
        Ok(Self(t))
    }

    /// Clamps every value into `[0, 1]`; non-finite values become 0.
    pub fn from_clamped(t: Tensor) -> Result<Self> {
        t.expect_shape(&image_shape())?;
        Ok(Self(t.map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 })))
    }

    pub fn black() -> Self {
        Self(Tensor::zeros(&image_shape()))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.0.data()[(c * 32 + y) * 32 + x]
    }

    /// Quantizes to 8-bit, interleaved RGB in row-major pixel order.
    pub fn to_rgb8(&self) -> alloc::vec::Vec<u8> {
        let d = self.0.data();
        let mut out = alloc::vec::Vec::with_capacity(d.len());
        for p in 0..32 * 32 {
            for c in 0..3 {
                out.push(libm::round(d[c * 1024 + p] * 255.0) as u8);
            }
        }
        out
    }

    pub fn from_rgb8(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 3 * 32 * 32 {
            return Err(invalid!("expected {} RGB bytes, got {}", 3 * 32 * 32, bytes.len()));
        }
        let t = Tensor::from_fn(&image_shape(), |i| {
            let (c, p) = (i / 1024, i % 1024);
            f64::from(bytes[p * 3 + c]) / 255.0
        });
        Ok(Self(t))
    }

    /// Rounds every value to the nearest multiple of 1/255, the state an
    /// 8-bit file holds.
    pub fn quantized(&self) -> Self {
        Self(self.0.map(|v| libm::round(v * 255.0) / 255.0))
    }

    pub fn mean_squared_error(&self, other: &Image) -> f64 {
        crate::kernels::mean_squared(self.0.data(), other.0.data())
    }
}
