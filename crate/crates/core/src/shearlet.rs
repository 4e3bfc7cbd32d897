//! Cone-adapted shearlet frame built directly on the canvas frequency grid,
//! with FFT-based analysis and synthesis transforms.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::fft::{fftfreq, Fft2};
use crate::io::save_plane_png;
use crate::plane::Plane;

/// Half-width of the angular transition that splits the out-of-cone arc
/// between the two outermost shears of every scale.
const OUTER_TRANSITION: f64 = 1.5;

/// Width of the smooth roll-off of the cone support window beyond slopes [0, 1].
const CONE_MARGIN: f64 = 0.1;

/// Number of scales needed for sampling interval `tau`: `ceil(log2 tau)`.
pub fn scale_count(tau: usize) -> Result<usize> {
    if tau < 2 {
        return Err(invalid(format!("scale_count needs tau >= 2, got {tau}")));
    }
    Ok((usize::BITS - (tau - 1).leading_zeros()) as usize)
}

/// Number of filters of a `xi`-scale system: `2^(xi+1) + xi - 1`.
pub fn shearlet_count(xi: usize) -> Result<usize> {
    if xi < 1 || xi > 24 {
        return Err(invalid(format!("shearlet_count needs 1 <= xi <= 24, got {xi}")));
    }
    Ok((1usize << (xi + 1)) + xi - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    Lowpass,
    Directional { scale: usize, shear: i64 },
}

/// Smooth step on [0, 1] with four vanishing derivatives at both ends.
#[inline]
fn meyer(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x.powi(4) * (35.0 - 84.0 * x + 70.0 * x * x - 20.0 * x.powi(3))
}

/// Lowpass profile: 1 below `a`, 0 above `2a`.
#[inline]
fn lowpass_profile(rho: f64, a: f64) -> f64 {
    (FRAC_PI_2 * meyer((rho - a) / a)).cos()
}

/// Pseudo-angle in [-2, 2): the EPI slope `-f_r / f_c` inside the horizontal
/// cone, continued through the vertical cone so that a full turn spans 4.
#[inline]
fn pseudo_angle(fr: f64, fc: f64) -> f64 {
    if fr == 0.0 && fc == 0.0 {
        return 0.0;
    }
    if fr.abs() <= fc.abs() {
        -fr / fc
    } else {
        let s = -fc / fr;
        if s > 0.0 {
            2.0 - s
        } else {
            -2.0 - s
        }
    }
}

/// Angular window of one shear: rises around `lo`, falls around `hi`.
#[derive(Clone, Copy, Debug)]
struct Wedge {
    lo: f64,
    lo_half: f64,
    hi: f64,
    hi_half: f64,
}

impl Wedge {
    fn eval(&self, t: f64) -> f64 {
        let start = self.lo - self.lo_half;
        let t = (t - start).rem_euclid(4.0) + start;
        let up = (FRAC_PI_2 * meyer((t - start) / (2.0 * self.lo_half))).sin();
        let down = (FRAC_PI_2 * meyer((t - (self.hi - self.hi_half)) / (2.0 * self.hi_half))).cos();
        up * down
    }
}

fn wedges(scale: usize) -> Vec<Wedge> {
    let count = (1usize << (scale + 1)) + 1;
    let step = 1.0 / (1u64 << (scale + 1)) as f64;
    (0..count)
        .map(|i| {
            let center = i as f64 * step;
            let (lo, lo_half) = if i == 0 {
                (center - OUTER_TRANSITION, OUTER_TRANSITION)
            } else {
                (center - step / 2.0, step / 2.0)
            };
            let (hi, hi_half) = if i == count - 1 {
                (center + OUTER_TRANSITION, OUTER_TRANSITION)
            } else {
                (center + step / 2.0, step / 2.0)
            };
            Wedge { lo, lo_half, hi, hi_half }
        })
        .collect()
}

/// Raw (unnormalized) responses of all filters at one frequency.
fn raw_responses(fr: f64, fc: f64, xi: usize, wedge_table: &[Vec<Wedge>], out: &mut Vec<f64>) {
    out.clear();
    let rho = fr.abs().max(fc.abs());
    let t = pseudo_angle(fr, fc);
    let base = 0.5f64.powi(xi as i32 + 2);
    let low = |j: usize| if j == xi { 1.0 } else { lowpass_profile(rho, base * (1u64 << j) as f64) };
    out.push(low(0));
    for (j, ws) in wedge_table.iter().enumerate() {
        let (l0, l1) = (low(j), low(j + 1));
        let band = (l1 * l1 - l0 * l0).max(0.0).sqrt();
        out.extend(ws.iter().map(|w| band * w.eval(t)));
    }
}

fn cone_response(fr: f64, fc: f64) -> f64 {
    if fr == 0.0 && fc == 0.0 {
        return 1.0;
    }
    let t = pseudo_angle(fr, fc);
    let outside = if t < 0.0 { -t } else if t > 1.0 { t - 1.0 } else { 0.0 };
    (FRAC_PI_2 * meyer(outside / CONE_MARGIN)).cos()
}

/// The η real, even frequency responses of a Parseval shearlet frame.
#[derive(Debug)]
pub struct ShearletSystem {
    height: usize,
    width: usize,
    xi: usize,
    gamma: usize,
    layout: Vec<FilterKind>,
    /// One half-spectrum per filter, in the layout of [`Fft2`].
    filters: Vec<Vec<f64>>,
    /// Support window of slopes [0, 1] (plus DC), same layout.
    cone: Vec<f64>,
    fft: Fft2,
}

/// Real coefficients of every filter, channel-major (`t`, row, column).
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientStack {
    height: usize,
    width: usize,
    count: usize,
    data: Vec<f64>,
}

impl CoefficientStack {
    pub fn zeros(height: usize, width: usize, count: usize) -> Self {
        Self { height, width, count, data: vec![0.0; height * width * count] }
    }

    pub fn from_vec(height: usize, width: usize, count: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * count {
            return Err(invalid("coefficient buffer length does not match its shape"));
        }
        Ok(Self { height, width, count, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, t: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn channel_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn dot(&self, other: &CoefficientStack) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

impl ShearletSystem {
    pub fn new(height: usize, width: usize, xi: usize, gamma: usize) -> Result<Self> {
        let eta = shearlet_count(xi)?;
        let min_side = 1usize << (xi + 2);
        if height < min_side || width < min_side {
            return Err(invalid(format!(
                "canvas {height}x{width} too small for {xi} scales (need at least {min_side} per side)"
            )));
        }
        if gamma % 2 == 0 {
            return Err(invalid(format!("filter support gamma must be odd, got {gamma}")));
        }
        let fft = Fft2::new(height, width);
        let half = fft.half_width();

        let wedge_table: Vec<Vec<Wedge>> = (0..xi).map(wedges).collect();
        let mut layout = vec![FilterKind::Lowpass];
        for (j, ws) in wedge_table.iter().enumerate() {
            let offset = 1i64 << j;
            layout.extend((0..ws.len()).map(|i| FilterKind::Directional { scale: j, shear: i as i64 - offset }));
        }
        debug_assert_eq!(layout.len(), eta);

        let n = half * height;
        let mut filters = vec![vec![0.0; n]; eta];
        let mut cone = vec![0.0; n];
        let nyq_r = height % 2 == 0;
        let nyq_c = width % 2 == 0;
        let (mut a, mut b) = (Vec::with_capacity(eta), Vec::with_capacity(eta));
        for c in 0..half {
            let fc = c as f64 / width as f64;
            let fc_alt = if nyq_c && 2 * c == width { -fc } else { fc };
            for r in 0..height {
                let fr = fftfreq(r, height);
                let fr_alt = if nyq_r && 2 * r == height { -fr } else { fr };
                raw_responses(fr, fc, xi, &wedge_table, &mut a);
                raw_responses(fr_alt, fc_alt, xi, &wedge_table, &mut b);
                let idx = c * height + r;
                let mut total = 0.0;
                for (t, (x, y)) in a.iter().zip(&b).enumerate() {
                    let v = ((x * x + y * y) / 2.0).sqrt();
                    filters[t][idx] = v;
                    total += v * v;
                }
                let norm = total.sqrt();
                for f in filters.iter_mut() {
                    f[idx] /= norm;
                }
                let (ca, cb) = (cone_response(fr, fc), cone_response(fr_alt, fc_alt));
                cone[idx] = ((ca * ca + cb * cb) / 2.0).sqrt();
            }
        }
        // Columns 0 and width/2 hold both k and -k; keep them exactly even.
        let mut self_mirrored = vec![0];
        if nyq_c {
            self_mirrored.push(width / 2);
        }
        for &c in &self_mirrored {
            for r in 1..height {
                let m = height - r;
                if m <= r {
                    continue;
                }
                let (i, j) = (c * height + r, c * height + m);
                for f in filters.iter_mut().chain(std::iter::once(&mut cone)) {
                    let v = ((f[i] * f[i] + f[j] * f[j]) / 2.0).sqrt();
                    f[i] = v;
                    f[j] = v;
                }
            }
        }
        for &c in &self_mirrored {
            for r in 0..height {
                let idx = c * height + r;
                let norm = filters.iter().map(|f| f[idx] * f[idx]).sum::<f64>().sqrt();
                for f in filters.iter_mut() {
                    f[idx] /= norm;
                }
            }
        }
        Ok(Self { height, width, xi, gamma, layout, filters, cone, fft })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scales(&self) -> usize {
        self.xi
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn count(&self) -> usize {
        self.filters.len()
    }

    pub fn layout(&self) -> &[FilterKind] {
        &self.layout
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    /// Half-spectrum response of filter `t`.
    pub fn filter(&self, t: usize) -> &[f64] {
        &self.filters[t]
    }

    pub fn cone_window(&self) -> &[f64] {
        &self.cone
    }

    /// Response of filter `t` at full-grid bin `(r, c)`.
    pub fn response(&self, t: usize, r: usize, c: usize) -> f64 {
        let (h, w) = (self.height, self.width);
        let half = self.fft.half_width();
        if c < half {
            self.filters[t][c * h + r]
        } else {
            self.filters[t][(w - c) * h + (h - r) % h]
        }
    }

    fn check_image(&self, image: &Plane) -> Result<()> {
        image.check_shape(self.height, self.width, "shearlet transform input")
    }

    fn spectrum(&self, image: &[f64]) -> Vec<Complex64> {
        let mut spec = vec![Complex64::default(); self.fft.spectrum_len()];
        self.fft.forward(image, &mut spec);
        spec
    }

    /// `SH x`: one forward FFT and η filtered inverse FFTs.
    pub fn analysis(&self, image: &Plane) -> Result<CoefficientStack> {
        self.check_image(image)?;
        Ok(self.analyze(image, false))
    }

    /// `SH* c`: η forward FFTs, a filtered sum and one inverse FFT.
    pub fn synthesis(&self, coeffs: &CoefficientStack) -> Result<Plane> {
        self.check_stack(coeffs)?;
        Ok(self.synthesize(coeffs, false))
    }

    pub(crate) fn check_stack(&self, coeffs: &CoefficientStack) -> Result<()> {
        if (coeffs.height, coeffs.width, coeffs.count) != (self.height, self.width, self.count()) {
            return Err(invalid(format!(
                "coefficient stack {}x{}x{} does not match system {}x{}x{}",
                coeffs.height,
                coeffs.width,
                coeffs.count,
                self.height,
                self.width,
                self.count()
            )));
        }
        Ok(())
    }

    /// Analysis, optionally restricted to the cone support window.
    pub(crate) fn analyze(&self, image: &Plane, restrict: bool) -> CoefficientStack {
        let spec = self.spectrum(image.data());
        let n = self.height * self.width;
        let mut out = CoefficientStack::zeros(self.height, self.width, self.count());
        out.data.par_chunks_mut(n).zip(self.filters.par_iter()).for_each(|(dst, filt)| {
            let mut s: Vec<Complex64> = if restrict {
                spec.iter().zip(filt).zip(&self.cone).map(|((v, f), w)| v * (f * w)).collect()
            } else {
                spec.iter().zip(filt).map(|(v, f)| v * f).collect()
            };
            self.fft.inverse(&mut s, dst);
        });
        out
    }

    /// Synthesis, optionally restricted to the cone support window.
    pub(crate) fn synthesize(&self, coeffs: &CoefficientStack, restrict: bool) -> Plane {
        const GROUP: usize = 4;
        let n = self.height * self.width;
        let len = self.fft.spectrum_len();
        let partials: Vec<Vec<Complex64>> = coeffs
            .data
            .par_chunks(n * GROUP)
            .zip(self.filters.par_chunks(GROUP))
            .map(|(chans, filts)| {
                let mut acc = vec![Complex64::default(); len];
                let mut spec = vec![Complex64::default(); len];
                for (chan, filt) in chans.chunks(n).zip(filts) {
                    self.fft.forward(chan, &mut spec);
                    for ((a, s), f) in acc.iter_mut().zip(&spec).zip(filt) {
                        *a += s * f;
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![Complex64::default(); len];
        for p in &partials {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        if restrict {
            for (t, w) in total.iter_mut().zip(&self.cone) {
                *t *= w;
            }
        }
        let mut out = Plane::zeros(self.height, self.width);
        self.fft.inverse(&mut total, out.data_mut());
        out
    }

    /// Writes each filter's magnitude response (DC centered) as a grayscale PNG.
    pub fn dump_filters(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(crate::error::io_err(dir))?;
        let (h, w) = (self.height, self.width);
        for (t, kind) in self.layout.iter().enumerate() {
            let plane = Plane::from_fn(h, w, |r, c| self.response(t, (r + h / 2) % h, (c + w / 2) % w));
            let name = match kind {
                FilterKind::Lowpass => format!("filter_{t}_j0_k0.png"),
                FilterKind::Directional { scale, shear } => format!("filter_{t}_j{scale}_k{shear}.png"),
            };
            save_plane_png(&dir.join(name), &plane, 0.0, 1.0)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_examples() {
        assert_eq!(scale_count(16).unwrap(), 4);
        assert_eq!(scale_count(17).unwrap(), 5);
        assert_eq!(scale_count(2).unwrap(), 1);
        assert_eq!(scale_count(9).unwrap(), 4);
        assert!(scale_count(1).is_err());
        assert_eq!(shearlet_count(4).unwrap(), 35);
        assert_eq!(shearlet_count(5).unwrap(), 68);
        assert_eq!(shearlet_count(1).unwrap(), 4);
        assert!(shearlet_count(0).is_err());
    }

    #[test]
    fn count_matches_per_scale_sum() {
        for xi in 1..8 {
            let sum: usize = 1 + (0..xi).map(|j| (1usize << (j + 1)) + 1).sum::<usize>();
            assert_eq!(shearlet_count(xi).unwrap(), sum);
        }
    }

    #[test]
    fn angular_partition_of_unity() {
        for j in 0..4 {
            let ws = wedges(j);
            for i in 0..4000 {
                let t = -2.0 + i as f64 * 0.001;
                let s: f64 = ws.iter().map(|w| w.eval(t).powi(2)).sum();
                assert!((s - 1.0).abs() < 1e-12, "scale {j} t {t}: {s}");
            }
        }
    }

    #[test]
    fn rejects_small_canvas_and_even_gamma() {
        assert!(ShearletSystem::new(32, 128, 4, 127).is_err());
        assert!(ShearletSystem::new(64, 64, 4, 128).is_err());
    }

    #[test]
    fn per_scale_layout() {
        let sys = ShearletSystem::new(64, 64, 4, 127).unwrap();
        assert_eq!(sys.count(), 35);
        assert_eq!(sys.layout()[0], FilterKind::Lowpass);
        for j in 0..4 {
            let shears: Vec<i64> = sys
                .layout()
                .iter()
                .filter_map(|k| match k {
                    FilterKind::Directional { scale, shear } if *scale == j => Some(*shear),
                    _ => None,
                })
                .collect();
            let bound = 1i64 << j;
            assert_eq!(shears, (-bound..=bound).collect::<Vec<_>>());
        }
    }
}
