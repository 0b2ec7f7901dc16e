/// Floating-point RGBA raster with straight (non-premultiplied) color after
/// compositing over the background.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderImage {
    width: usize,
    height: usize,
    data: Vec<[f64; 4]>,
}

impl RenderImage {
    pub fn new(width: usize, height: usize, fill: [f64; 4]) -> Self {
        RenderImage {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub(crate) fn from_data(width: usize, height: usize, data: Vec<[f64; 4]>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        RenderImage { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 4] {
        self.data[y * self.width + x]
    }

    pub fn pixels(&self) -> &[[f64; 4]] {
        &self.data
    }

    pub fn rgb(&self) -> Vec<[f64; 3]> {
        self.data.iter().map(|p| [p[0], p[1], p[2]]).collect()
    }

    /// Quantized RGBA bytes, row-major.
    pub fn to_rgba8(&self) -> Vec<u8> {
        self.data.iter().flat_map(|p| p.map(quantize)).collect()
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().flat_map(|p| [quantize(p[0]), quantize(p[1]), quantize(p[2])]).collect()
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
