//! Dense float images used by the renderer, the loss stack and the sampler.

/// Row-major image with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

/// Single-channel non-negative map (LoG responses, sampling probabilities).
pub type ScalarMap = Image;

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for row in 0..height {
            for col in 0..width {
                for c in 0..channels {
                    data.push(f(row, col, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Self {
        Self {
            width,
            height,
            channels: 3,
            data: rgb.iter().map(|&v| v as f64 / 255.0).collect(),
        }
    }

    pub fn from_depth(width: usize, height: usize, depth: &[f32]) -> Self {
        Self {
            width,
            height,
            channels: 1,
            data: depth.iter().map(|&v| v as f64).collect(),
        }
    }

    /// Quantizes to 8 bits per channel, clamping to `[0, 1]`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn same_shape(&self, o: &Image) -> bool {
        self.width == o.width && self.height == o.height && self.channels == o.channels
    }

    pub fn get(&self, row: usize, col: usize, c: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + c]
    }

    pub fn set(&mut self, row: usize, col: usize, c: usize, v: f64) {
        self.data[(row * self.width + col) * self.channels + c] = v;
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}
