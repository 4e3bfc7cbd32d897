//! Cubic B-spline row interpolation and Keys cubic resampling.

const POLE: f64 = -0.267_949_192_431_122_7; // sqrt(3) - 2
const PREFILTER_TOLERANCE: f64 = 1e-14;

/// Interpolating cubic B-spline through the samples of one row.
#[derive(Clone, Debug)]
pub struct CubicSpline {
    coeffs: Vec<f64>,
}

impl CubicSpline {
    /// Computes spline coefficients under mirror-symmetric boundary extension.
    pub fn new(samples: &[f64]) -> Self {
        let n = samples.len();
        let mut c = samples.to_vec();
        if n < 2 {
            return Self { coeffs: c };
        }
        let z = POLE;
        let lambda = (1.0 - z) * (1.0 - 1.0 / z);
        c.iter_mut().for_each(|v| *v *= lambda);

        let horizon = (PREFILTER_TOLERANCE.ln() / z.abs().ln()).ceil() as usize;
        c[0] = if horizon < n {
            let mut zn = z;
            let mut sum = c[0];
            for v in &c[1..horizon] {
                sum += zn * v;
                zn *= z;
            }
            sum
        } else {
            let iz = 1.0 / z;
            let mut zn = z;
            let mut z2n = z.powi(n as i32 - 1);
            let mut sum = c[0] + z2n * c[n - 1];
            z2n *= z2n * iz;
            for v in &c[1..n - 1] {
                sum += (zn + z2n) * v;
                zn *= z;
                z2n *= iz;
            }
            sum / (1.0 - zn * zn)
        };
        for k in 1..n {
            c[k] += z * c[k - 1];
        }
        c[n - 1] = (z / (z * z - 1.0)) * (z * c[n - 2] + c[n - 1]);
        for k in (0..n - 1).rev() {
            c[k] = z * (c[k + 1] - c[k]);
        }
        Self { coeffs: c }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Value at `x`; zero outside `[0, len - 1]`.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.coeffs.len();
        const EDGE: f64 = 1e-9;
        if n == 0 || x < -EDGE || x > (n - 1) as f64 + EDGE {
            return 0.0;
        }
        if n == 1 {
            return self.coeffs[0];
        }
        let x = x.clamp(0.0, (n - 1) as f64);
        let base = x.floor() as isize;
        let last = (n - 1) as isize;
        let mirror = |k: isize| -> usize {
            let period = 2 * last;
            let mut k = k.rem_euclid(period);
            if k > last {
                k = period - k;
            }
            k as usize
        };
        let mut sum = 0.0;
        for k in base - 1..=base + 2 {
            sum += self.coeffs[mirror(k)] * bspline3(x - k as f64);
        }
        sum
    }
}

#[inline]
fn bspline3(t: f64) -> f64 {
    let a = t.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + 0.5 * a * a * a
    } else if a < 2.0 {
        let b = 2.0 - a;
        b * b * b / 6.0
    } else {
        0.0
    }
}

/// Keys cubic convolution kernel with `a = -0.5`.
#[inline]
pub fn keys_cubic(t: f64) -> f64 {
    const A: f64 = -0.5;
    let x = t.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-sample taps for resampling `src_len` samples to `dst_len`.
///
/// Downscaling stretches the kernel by the scale factor; weights are
/// renormalized so constants are preserved at the borders.
pub fn resample_taps(src_len: usize, dst_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src_len as f64 / dst_len as f64;
    let support = scale.max(1.0);
    (0..dst_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale - 0.5;
            let lo = (center - 2.0 * support).floor() as isize;
            let hi = (center + 2.0 * support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for k in lo..=hi {
                let w = keys_cubic((k as f64 - center) / support);
                if w == 0.0 {
                    continue;
                }
                let idx = k.clamp(0, src_len as isize - 1) as usize;
                match taps.iter_mut().find(|t| t.0 == idx) {
                    Some(t) => t.1 += w,
                    None => taps.push((idx, w)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}
