//! Real 2D FFT on a half spectrum.
//!
//! Spectra are stored column-major over the non-negative column frequencies:
//! entry `(r, c)` lives at `c * height + r` for `c in 0..width / 2 + 1`.

use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Fft2 {
    height: usize,
    width: usize,
    half: usize,
    row_fwd: Arc<dyn RealToComplex<f64>>,
    row_inv: Arc<dyn ComplexToReal<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("height", &self.height).field("width", &self.width).finish()
    }
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        let mut rp = RealFftPlanner::<f64>::new();
        let mut cp = FftPlanner::<f64>::new();
        Self {
            height,
            width,
            half: width / 2 + 1,
            row_fwd: rp.plan_fft_forward(width),
            row_inv: rp.plan_fft_inverse(width),
            col_fwd: cp.plan_fft_forward(height),
            col_inv: cp.plan_fft_inverse(height),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of stored spectrum columns.
    pub fn half_width(&self) -> usize {
        self.half
    }

    pub fn spectrum_len(&self) -> usize {
        self.half * self.height
    }

    /// Forward transform of a row-major `height × width` image.
    pub fn forward(&self, image: &[f64], spec: &mut [Complex64]) {
        let (h, w, hw) = (self.height, self.width, self.half);
        debug_assert_eq!(image.len(), h * w);
        debug_assert_eq!(spec.len(), hw * h);
        let mut row = self.row_fwd.make_input_vec();
        let mut row_spec = self.row_fwd.make_output_vec();
        let mut scratch = self.row_fwd.make_scratch_vec();
        for r in 0..h {
            row.copy_from_slice(&image[r * w..(r + 1) * w]);
            self.row_fwd
                .process_with_scratch(&mut row, &mut row_spec, &mut scratch)
                .expect("row buffers sized by planner");
            for (c, v) in row_spec.iter().enumerate() {
                spec[c * h + r] = *v;
            }
        }
        let mut cscratch = vec![Complex64::default(); self.col_fwd.get_inplace_scratch_len()];
        self.col_fwd.process_with_scratch(spec, &mut cscratch);
    }

    /// Inverse transform, normalized so that `inverse(forward(x)) == x`.
    /// The spectrum buffer is used as workspace and left modified.
    pub fn inverse(&self, spec: &mut [Complex64], image: &mut [f64]) {
        let (h, w, hw) = (self.height, self.width, self.half);
        debug_assert_eq!(image.len(), h * w);
        let mut cscratch = vec![Complex64::default(); self.col_inv.get_inplace_scratch_len()];
        self.col_inv.process_with_scratch(spec, &mut cscratch);
        let mut row_spec = self.row_inv.make_input_vec();
        let mut row = self.row_inv.make_output_vec();
        let mut scratch = self.row_inv.make_scratch_vec();
        let scale = 1.0 / (h * w) as f64;
        for r in 0..h {
            for (c, v) in row_spec.iter_mut().enumerate() {
                *v = spec[c * h + r];
            }
            row_spec[0].im = 0.0;
            if w % 2 == 0 {
                row_spec[hw - 1].im = 0.0;
            }
            self.row_inv
                .process_with_scratch(&mut row_spec, &mut row, &mut scratch)
                .expect("row buffers sized by planner");
            for (dst, v) in image[r * w..(r + 1) * w].iter_mut().zip(&row) {
                *dst = v * scale;
            }
        }
    }
}

/// Signed DFT frequency of bin `k` out of `n`, in cycles per sample.
#[inline]
pub fn fftfreq(k: usize, n: usize) -> f64 {
    let k = if k <= (n - 1) / 2 { k as isize } else { k as isize - n as isize };
    k as f64 / n as f64
}
