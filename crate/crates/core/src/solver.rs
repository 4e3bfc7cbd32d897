//! Iterative hard-thresholding reconstruction of decimated canvases with
//! double over-relaxation and a lowpass initial estimate.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::LineMask;
use crate::plane::Plane;
use crate::shearlet::{CoefficientStack, ShearletSystem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Linear,
    Exponential,
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "lin" => Ok(Schedule::Linear),
            "exponential" | "exp" => Ok(Schedule::Exponential),
            other => Err(invalid(format!("unknown threshold schedule `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub iterations: usize,
    /// Decay constant of the exponential schedule.
    pub alpha: f64,
    pub schedule: Schedule,
    pub lambda_min: f64,
    /// Step length of the data-consistency update on measured rows.
    pub relaxation: f64,
    pub dore: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            alpha: 20.0,
            schedule: Schedule::Linear,
            lambda_min: 0.0,
            relaxation: 4.0,
            dore: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("solver needs at least one iteration"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid(format!("schedule decay alpha must be positive, got {}", self.alpha)));
        }
        if !(self.lambda_min >= 0.0 && self.lambda_min.is_finite()) {
            return Err(invalid(format!("lambda_min must be non-negative, got {}", self.lambda_min)));
        }
        if !(self.relaxation > 0.0 && self.relaxation.is_finite()) {
            return Err(invalid(format!("relaxation must be positive, got {}", self.relaxation)));
        }
        Ok(())
    }
}

/// Zeroes directional coefficients with `|c| <= lambda`; the lowpass channel is kept.
pub fn hard_threshold(coeffs: &CoefficientStack, lambda: f64) -> Result<CoefficientStack> {
    let mut out = coeffs.clone();
    hard_threshold_in_place(&mut out, lambda)?;
    Ok(out)
}

pub fn hard_threshold_in_place(coeffs: &mut CoefficientStack, lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) {
        return Err(invalid(format!("threshold must be non-negative, got {lambda}")));
    }
    let n = coeffs.height() * coeffs.width();
    for v in &mut coeffs.data_mut()[n..] {
        if v.abs() <= lambda {
            *v = 0.0;
        }
    }
    Ok(())
}

/// Threshold for iteration `k` of `cfg.iterations`.
pub fn threshold_schedule(k: usize, cfg: &SolverConfig, lambda_max: f64) -> Result<f64> {
    let big_k = cfg.iterations;
    if k >= big_k {
        return Err(invalid(format!("iteration {k} outside schedule of {big_k}")));
    }
    if big_k == 1 {
        return Ok(cfg.lambda_min);
    }
    Ok(match cfg.schedule {
        Schedule::Linear => {
            let s = k as f64 / (big_k - 1) as f64;
            lambda_max * (1.0 - s) + cfg.lambda_min * s
        }
        Schedule::Exponential => (lambda_max * (-cfg.alpha * k as f64 / big_k as f64).exp()).max(cfg.lambda_min),
    })
}

/// Lowpass component of the decimated canvas, scaled by the line spacing.
pub fn lowpass_init(sys: &ShearletSystem, measured: &Plane, spacing: usize) -> Result<Plane> {
    let mut c = sys.analysis(measured)?;
    let n = c.height() * c.width();
    c.data_mut()[n..].fill(0.0);
    let mut x = sys.synthesize(&c, false);
    let s = spacing as f64;
    x.data_mut().iter_mut().for_each(|v| *v *= s);
    Ok(x)
}

/// `<r(a), r(b)>` where `r(w) = mask ⊙ (w - measured)`, optionally with `b` absent.
fn masked_dot(mask: &LineMask, measured: &Plane, a: &Plane, b: Option<&Plane>) -> f64 {
    let mut sum = 0.0;
    for &r in mask.active_rows() {
        let m = measured.row(r);
        let ra = a.row(r);
        match b {
            Some(b) => {
                for ((x, y), d) in ra.iter().zip(b.row(r)).zip(m) {
                    sum += (x - d) * (y - d);
                }
            }
            None => {
                for (x, d) in ra.iter().zip(m) {
                    sum += (x - d) * (x - d);
                }
            }
        }
    }
    sum
}

pub fn masked_residual(mask: &LineMask, measured: &Plane, w: &Plane) -> f64 {
    masked_dot(mask, measured, w, None).sqrt()
}

/// Step along `p - q` minimizing the masked residual, clamped to `[0, 1]`.
fn line_search(mask: &LineMask, measured: &Plane, p: &Plane, q: &Plane) -> f64 {
    // r(p) - r(q) = mask ⊙ (p - q)
    let (mut num, mut den) = (0.0, 0.0);
    for &r in mask.active_rows() {
        for ((pv, qv), d) in p.row(r).iter().zip(q.row(r)).zip(measured.row(r)) {
            let diff = pv - qv;
            num += (pv - d) * diff;
            den += diff * diff;
        }
    }
    if den < 1e-20 {
        0.0
    } else {
        (-num / den).clamp(0.0, 1.0)
    }
}

fn extrapolate(p: &Plane, q: &Plane, step: f64) -> Plane {
    let mut out = p.clone();
    if step != 0.0 {
        for (o, v) in out.data_mut().iter_mut().zip(q.data()) {
            *o += step * (*o - v);
        }
    }
    out
}

/// Double over-relaxation of the thresholded iterate `z` along the last two
/// iterates, kept only if it does not increase the masked residual.
pub fn dore_step(z: &Plane, x_prev: &Plane, x_prev2: &Plane, mask: &LineMask, measured: &Plane) -> Result<Plane> {
    for (p, name) in [(x_prev, "x_prev"), (x_prev2, "x_prev2"), (measured, "measured")] {
        p.check_shape(z.height(), z.width(), name)?;
    }
    if mask.shape() != z.shape() {
        return Err(invalid("mask shape does not match iterate"));
    }
    let a = line_search(mask, measured, z, x_prev);
    let u = extrapolate(z, x_prev, a);
    let b = line_search(mask, measured, &u, x_prev2);
    let v = extrapolate(&u, x_prev2, b);
    if masked_dot(mask, measured, &v, None) <= masked_dot(mask, measured, z, None) {
        Ok(v)
    } else {
        Ok(z.clone())
    }
}

/// Per-iteration trace of [`st_reconstruct_traced`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lambda: f64,
    pub masked_residual: f64,
}

pub fn st_reconstruct(sys: &ShearletSystem, measured: &Plane, mask: &LineMask, cfg: &SolverConfig) -> Result<Plane> {
    st_reconstruct_traced(sys, measured, mask, cfg, |_, _| {})
}

/// Like [`st_reconstruct`], calling `observe` after every iteration with its
/// record and the current estimate (before measurement re-imposition).
pub fn st_reconstruct_traced(
    sys: &ShearletSystem,
    measured: &Plane,
    mask: &LineMask,
    cfg: &SolverConfig,
    mut observe: impl FnMut(&IterationRecord, &Plane),
) -> Result<Plane> {
    cfg.validate()?;
    measured.check_shape(sys.height(), sys.width(), "measured canvas")?;
    if mask.shape() != measured.shape() {
        return Err(invalid("mask shape does not match canvas"));
    }
    let rows = mask.active_rows();
    if rows.is_empty() {
        return Err(invalid("mask has no active rows"));
    }
    let measured = mask.apply(measured)?;
    let spacing = if rows.len() > 1 { rows[1] - rows[0] } else { 1 };

    let relax = |x: &Plane| -> Plane {
        let mut y = x.clone();
        for &r in rows {
            for (v, d) in y.row_mut(r).iter_mut().zip(measured.row(r)) {
                *v += cfg.relaxation * (d - *v);
            }
        }
        y
    };

    let x0 = lowpass_init(sys, &measured, spacing)?;
    let c0 = sys.analyze(&relax(&x0), true);
    let n = sys.height() * sys.width();
    let lambda_max = c0.data()[n..].iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut x = x0.clone();
    let mut x_prev = x0;
    for k in 0..cfg.iterations {
        let lambda = threshold_schedule(k, cfg, lambda_max)?;
        let mut c = sys.analyze(&relax(&x), true);
        hard_threshold_in_place(&mut c, lambda)?;
        let z = sys.synthesize(&c, true);
        let next = if cfg.dore { dore_step(&z, &x, &x_prev, mask, &measured)? } else { z };
        if next.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite estimate at iteration {k}")));
        }
        let record = IterationRecord { iteration: k, lambda, masked_residual: masked_residual(mask, &measured, &next) };
        observe(&record, &next);
        x_prev = std::mem::replace(&mut x, next);
    }
    for &r in rows {
        x.row_mut(r).copy_from_slice(measured.row(r));
    }
    Ok(x)
}

/// Writes the trace as CSV lines `iteration,lambda,masked_residual`.
pub fn write_residual_log(path: &std::path::Path, records: &[IterationRecord]) -> Result<()> {
    let mut text = String::from("iteration,lambda,masked_residual\n");
    for r in records {
        text.push_str(&format!("{},{:e},{:e}\n", r.iteration, r.lambda, r.masked_residual));
    }
    std::fs::write(path, text).map_err(crate::error::io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize) -> SolverConfig {
        SolverConfig { iterations: k, lambda_min: 0.1, ..SolverConfig::default() }
    }

    #[test]
    fn threshold_examples() {
        let mut c = CoefficientStack::zeros(1, 1, 2);
        c.data_mut().copy_from_slice(&[0.01, 0.5]);
        assert_eq!(hard_threshold(&c, 0.6).unwrap().data(), &[0.01, 0.0]);
        assert_eq!(hard_threshold(&c, 0.4).unwrap().data(), &[0.01, 0.5]);
        assert_eq!(hard_threshold(&c, 0.0).unwrap(), c);
        assert!(hard_threshold(&c, -1.0).is_err());
    }

    #[test]
    fn linear_schedule_endpoints() {
        let c = cfg(101);
        assert_eq!(threshold_schedule(0, &c, 2.0).unwrap(), 2.0);
        assert!((threshold_schedule(100, &c, 2.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((threshold_schedule(50, &c, 2.0).unwrap() - 1.05).abs() < 1e-12);
        assert!(threshold_schedule(101, &c, 2.0).is_err());
        assert_eq!(threshold_schedule(0, &cfg(1), 2.0).unwrap(), 0.1);
    }

    #[test]
    fn exponential_schedule_is_floored() {
        let c = SolverConfig { schedule: Schedule::Exponential, ..cfg(100) };
        assert_eq!(threshold_schedule(0, &c, 2.0).unwrap(), 2.0);
        assert_eq!(threshold_schedule(99, &c, 2.0).unwrap(), 0.1);
        let v = threshold_schedule(5, &c, 2.0).unwrap();
        assert!((v - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn dore_toy_example() {
        let mask = LineMask::new(1, 2, vec![0]).unwrap();
        let measured = Plane::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let z = Plane::from_vec(1, 2, vec![0.5, 0.0]).unwrap();
        let zero = Plane::zeros(1, 2);
        let v = dore_step(&z, &zero, &zero, &mask, &measured).unwrap();
        assert_eq!(v.data(), &[1.0, 0.0]);
        let same = dore_step(&z, &z, &z, &mask, &measured).unwrap();
        assert_eq!(same, z);
    }
}
