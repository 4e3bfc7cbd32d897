//! Light field and EPI containers, sub-light-field splitting and PSNR evaluation.

use crate::error::{invalid, Error, Result};
use crate::plane::Plane;

/// A multi-channel image stored as one plane per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    planes: Vec<Plane>,
}

impl Image {
    pub fn new(planes: Vec<Plane>) -> Result<Self> {
        let first = planes.first().ok_or_else(|| invalid("image needs at least one channel"))?;
        let shape = first.shape();
        if planes.iter().any(|p| p.shape() != shape) {
            return Err(invalid("image channels differ in shape"));
        }
        Ok(Self { planes })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { planes: vec![Plane::zeros(height, width); channels.max(1)] }
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn plane(&self, ch: usize) -> &Plane {
        &self.planes[ch]
    }

    pub fn plane_mut(&mut self, ch: usize) -> &mut Plane {
        &mut self.planes[ch]
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn into_planes(self) -> Vec<Plane> {
        self.planes
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.channels() == other.channels()
            && self.height() == other.height()
            && self.width() == other.width()
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.planes
            .iter()
            .zip(&other.planes)
            .fold(0.0, |m, (a, b)| f64::max(m, a.max_abs_diff(b)))
    }
}

/// A horizontal-parallax light field: `n` views sharing one resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct LightField3D {
    views: Vec<Image>,
}

impl LightField3D {
    pub fn new(views: Vec<Image>) -> Result<Self> {
        let first = views.first().ok_or_else(|| invalid("light field needs at least one view"))?;
        if views.iter().any(|v| !v.same_shape(first)) {
            return Err(invalid("light field views differ in shape"));
        }
        Ok(Self { views })
    }

    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    /// Rows per view (l).
    pub fn height(&self) -> usize {
        self.views[0].height()
    }

    /// Columns per view (m).
    pub fn width(&self) -> usize {
        self.views[0].width()
    }

    pub fn channels(&self) -> usize {
        self.views[0].channels()
    }

    pub fn view(&self, i: usize) -> &Image {
        &self.views[i]
    }

    pub fn views(&self) -> &[Image] {
        &self.views
    }

    pub fn into_views(self) -> Vec<Image> {
        self.views
    }

    /// The light field made of the listed views, in order.
    pub fn select(&self, indices: &[usize]) -> Result<LightField3D> {
        let mut views = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.views.len() {
                return Err(Error::Index { index: i, limit: self.views.len() });
            }
            views.push(self.views[i].clone());
        }
        LightField3D::new(views)
    }
}

/// One horizontal EPI: row `i` of every channel is a scanline of view `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Epi {
    channels: Vec<Plane>,
}

impl Epi {
    pub fn new(channels: Vec<Plane>) -> Result<Self> {
        Image::new(channels).map(|img| Self { channels: img.into_planes() })
    }

    pub fn view_count(&self) -> usize {
        self.channels[0].height()
    }

    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, ch: usize) -> &Plane {
        &self.channels[ch]
    }

    pub fn channels(&self) -> &[Plane] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Plane> {
        self.channels
    }
}

/// Scene disparity bounds in pixels between adjacent views.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DisparityConfig {
    pub d_min: f64,
    pub d_max: f64,
}

impl DisparityConfig {
    pub fn new(d_min: f64, d_max: f64) -> Result<Self> {
        if !(d_min.is_finite() && d_max.is_finite()) || d_max < d_min {
            return Err(invalid(format!("disparity bounds [{d_min}, {d_max}] are not an interval")));
        }
        Ok(Self { d_min, d_max })
    }

    pub fn d_range(&self) -> f64 {
        self.d_max - self.d_min
    }
}

/// Number of views in the dense light field: `(n - 1) * tau + 1`.
pub fn dense_view_count(n: usize, tau: usize) -> Result<usize> {
    if n == 0 || tau == 0 {
        return Err(invalid(format!("dense_view_count needs n, tau >= 1 (got {n}, {tau})")));
    }
    Ok((n - 1) * tau + 1)
}

pub fn extract_epi(lf: &LightField3D, row: usize) -> Result<Epi> {
    if row >= lf.height() {
        return Err(Error::Index { index: row, limit: lf.height() });
    }
    let (n, m) = (lf.view_count(), lf.width());
    let channels = (0..lf.channels())
        .map(|ch| {
            let mut p = Plane::zeros(n, m);
            for (i, view) in lf.views().iter().enumerate() {
                p.row_mut(i).copy_from_slice(view.plane(ch).row(row));
            }
            p
        })
        .collect();
    Ok(Epi { channels })
}

pub fn extract_all_epis(lf: &LightField3D) -> Vec<Epi> {
    (0..lf.height()).map(|r| extract_epi(lf, r).expect("row in range")).collect()
}

/// Inverse of extracting every EPI: EPI `j` becomes scanline `j` of each view.
pub fn assemble_lf(epis: &[Epi]) -> Result<LightField3D> {
    let first = epis.first().ok_or_else(|| invalid("cannot assemble a light field from zero EPIs"))?;
    let (n, m, chans) = (first.view_count(), first.width(), first.channel_count());
    if epis
        .iter()
        .any(|e| e.view_count() != n || e.width() != m || e.channel_count() != chans)
    {
        return Err(invalid("EPIs differ in shape"));
    }
    let l = epis.len();
    let views = (0..n)
        .map(|i| {
            let planes = (0..chans)
                .map(|ch| {
                    let mut p = Plane::zeros(l, m);
                    for (j, epi) in epis.iter().enumerate() {
                        p.row_mut(j).copy_from_slice(epi.channel(ch).row(i));
                    }
                    p
                })
                .collect();
            Image { planes }
        })
        .collect();
    Ok(LightField3D { views })
}

/// Overlapping view triples `(2i, 2i+1, 2i+2)` for an odd view count `n >= 3`.
pub fn split_sub_sslf(n: usize) -> Result<Vec<[usize; 3]>> {
    if n < 3 || n % 2 == 0 {
        return Err(invalid(format!("sub-light-field split needs odd n >= 3, got {n}")));
    }
    Ok((0..n / 2).map(|i| [2 * i, 2 * i + 1, 2 * i + 2]).collect())
}

/// Tolerance for deciding that two shared boundary views agree.
const MERGE_TOLERANCE: f64 = 1e-6;

/// Concatenates dense sub-results, dropping each shared leading view after the first.
pub fn merge_sub_dslf(subs: Vec<LightField3D>, tau: usize) -> Result<LightField3D> {
    if subs.is_empty() {
        return Err(invalid("nothing to merge"));
    }
    let expected = 2 * tau + 1;
    for (i, s) in subs.iter().enumerate() {
        if s.view_count() != expected {
            return Err(invalid(format!(
                "sub-result {i} has {} views, expected {expected}",
                s.view_count()
            )));
        }
    }
    for i in 1..subs.len() {
        let prev = subs[i - 1].view(expected - 1);
        let head = subs[i].view(0);
        if !prev.same_shape(head) {
            return Err(invalid(format!("sub-result {i} differs in view shape")));
        }
        let diff = prev.max_abs_diff(head);
        if diff > MERGE_TOLERANCE {
            return Err(Error::Consistency(format!(
                "boundary view between sub-results {} and {i} differs by {diff:e}",
                i - 1
            )));
        }
    }
    let mut views = Vec::with_capacity(subs.len() * 2 * tau + 1);
    for (i, s) in subs.into_iter().enumerate() {
        let skip = usize::from(i > 0);
        views.extend(s.into_views().into_iter().skip(skip));
    }
    LightField3D::new(views)
}

/// Peak signal-to-noise ratio in dB with peak 1; `+inf` for identical inputs.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(invalid("psnr operands differ in shape"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (pa, pb) in a.planes().iter().zip(b.planes()) {
        for (x, y) in pa.data().iter().zip(pb.data()) {
            sum += (x - y) * (x - y);
        }
        count += pa.data().len();
    }
    let mse = sum / count as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// `(view index, psnr)` for every synthesized view.
    pub per_view: Vec<(usize, f64)>,
    pub min_psnr: f64,
    pub avg_psnr: f64,
}

/// Per-view PSNR over views not listed in `input_views`.
pub fn evaluate(dslf: &LightField3D, gt: &LightField3D, input_views: &[usize]) -> Result<EvalReport> {
    if dslf.view_count() != gt.view_count() {
        return Err(invalid(format!(
            "view count mismatch: {} vs {}",
            dslf.view_count(),
            gt.view_count()
        )));
    }
    let mut per_view = Vec::new();
    for i in 0..gt.view_count() {
        if input_views.contains(&i) {
            continue;
        }
        per_view.push((i, psnr(dslf.view(i), gt.view(i))?));
    }
    if per_view.is_empty() {
        return Err(invalid("every view is excluded from evaluation"));
    }
    let min_psnr = per_view.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let avg_psnr = if per_view.iter().any(|p| p.1 == f64::INFINITY) {
        f64::INFINITY
    } else {
        per_view.iter().map(|p| p.1).sum::<f64>() / per_view.len() as f64
    };
    Ok(EvalReport { per_view, min_psnr, avg_psnr })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lf_from(n: usize, l: usize, m: usize, f: impl Fn(usize, usize, usize, usize) -> f64) -> LightField3D {
        let views = (0..n)
            .map(|i| {
                Image::new((0..3).map(|ch| Plane::from_fn(l, m, |r, c| f(i, ch, r, c))).collect()).unwrap()
            })
            .collect();
        LightField3D::new(views).unwrap()
    }

    #[test]
    fn dense_count_examples() {
        assert_eq!(dense_view_count(13, 16).unwrap(), 193);
        assert_eq!(dense_view_count(1, 16).unwrap(), 1);
        assert_eq!(dense_view_count(3, 16).unwrap(), 33);
        assert!(dense_view_count(0, 16).is_err());
        assert!(dense_view_count(3, 0).is_err());
    }

    #[test]
    fn identical_views_give_identical_epi_rows() {
        let lf = lf_from(4, 5, 6, |_, ch, r, c| (ch * 31 + r * 7 + c) as f64 / 100.0);
        let epi = extract_epi(&lf, 2).unwrap();
        for ch in 0..3 {
            for i in 1..4 {
                assert_eq!(epi.channel(ch).row(i), epi.channel(ch).row(0));
            }
        }
        assert!(extract_epi(&lf, 5).is_err());
    }

    #[test]
    fn single_epi_assembles_to_height_one() {
        let epi = Epi::new(vec![Plane::from_fn(3, 4, |r, c| (r + c) as f64); 3]).unwrap();
        let lf = assemble_lf(&[epi]).unwrap();
        assert_eq!((lf.view_count(), lf.height(), lf.width()), (3, 1, 4));
        assert!(assemble_lf(&[]).is_err());
    }

    #[test]
    fn split_examples() {
        let t = split_sub_sslf(13).unwrap();
        assert_eq!(t.len(), 6);
        assert_eq!(t[0], [0, 1, 2]);
        assert_eq!(t[5], [10, 11, 12]);
        assert_eq!(split_sub_sslf(3).unwrap(), vec![[0, 1, 2]]);
        assert_eq!(split_sub_sslf(7).unwrap().len(), 3);
        assert!(split_sub_sslf(4).is_err());
        assert!(split_sub_sslf(1).is_err());
    }

    #[test]
    fn merge_counts() {
        let sub = lf_from(33, 2, 3, |i, _, _, _| (i % 2) as f64 * 0.0 + 0.25);
        let merged = merge_sub_dslf(vec![sub.clone(); 6], 16).unwrap();
        assert_eq!(merged.view_count(), 193);
        let merged = merge_sub_dslf(vec![sub.clone(); 3], 16).unwrap();
        assert_eq!(merged.view_count(), 97);
        assert_eq!(merge_sub_dslf(vec![sub.clone()], 16).unwrap(), sub);
    }

    #[test]
    fn merge_rejects_mismatched_boundary() {
        let a = lf_from(5, 2, 3, |i, _, _, _| i as f64 / 10.0);
        assert!(matches!(merge_sub_dslf(vec![a.clone(), a], 2), Err(Error::Consistency(_))));
    }

    #[test]
    fn psnr_examples() {
        let a = Image::zeros(4, 5, 3);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = Image::new(vec![Plane::filled(4, 5, 0.1); 3]).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-12);
        let c = Image::new(vec![Plane::filled(4, 5, 0.5); 3]).unwrap();
        assert!((psnr(&a, &c).unwrap() - 6.020599913279624).abs() < 1e-12);
        assert!(psnr(&a, &Image::zeros(4, 4, 3)).is_err());
    }

    #[test]
    fn evaluate_examples() {
        let gt = lf_from(5, 3, 4, |i, ch, r, c| ((i + ch + r + c) % 7) as f64 / 10.0);
        let rep = evaluate(&gt, &gt, &[0, 4]).unwrap();
        assert_eq!(rep.min_psnr, f64::INFINITY);
        assert_eq!(rep.avg_psnr, f64::INFINITY);
        assert_eq!(rep.per_view.len(), 3);

        let shifted = lf_from(5, 3, 4, |i, ch, r, c| {
            let v = ((i + ch + r + c) % 7) as f64 / 10.0;
            if i == 0 || i == 4 { v } else { v + 0.1 }
        });
        let rep = evaluate(&shifted, &gt, &[0, 4]).unwrap();
        assert!((rep.min_psnr - 20.0).abs() < 1e-9);
        assert!((rep.avg_psnr - 20.0).abs() < 1e-9);
        assert!(evaluate(&gt, &gt, &[0, 1, 2, 3, 4]).is_err());
    }
}
