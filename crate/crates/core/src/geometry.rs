//! Pre-shearing of EPIs onto padded processing canvases, cropping, line masks,
//! decimation and the inverse post-shearing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::interp::CubicSpline;
use crate::lightfield::{DisparityConfig, Epi};
use crate::plane::Plane;

/// Canvas height used for training and inference.
pub const CANVAS_HEIGHT: usize = 128;
/// Row of the first EPI line on the canvas.
pub const FIRST_LINE_ROW: usize = 16;
/// Canvas sides must be multiples of this (four 2x poolings).
pub const ALIGN: usize = 16;

pub fn round_up(v: usize, to: usize) -> usize {
    v.div_ceil(to) * to
}

/// Equally spaced canvas rows that hold EPI lines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineLayout {
    pub top: usize,
    pub count: usize,
    pub spacing: usize,
}

impl LineLayout {
    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.count).map(move |i| self.top + i * self.spacing)
    }

    pub fn last(&self) -> usize {
        self.top + (self.count - 1) * self.spacing
    }

    pub fn contains(&self, row: usize) -> bool {
        row >= self.top && row <= self.last() && (row - self.top) % self.spacing == 0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropOffsets {
    pub left: usize,
    pub right: usize,
    pub top: usize,
}

/// Placement of a sheared EPI on its canvas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShearGeometry {
    pub height: usize,
    pub width: usize,
    pub lines: LineLayout,
    /// Horizontal shift in pixels per line step of `lines.spacing` rows.
    pub phi: f64,
    /// Columns of padding left of source column 0 before any crop.
    pub pad_left: usize,
    pub source_width: usize,
    pub crop: CropOffsets,
}

impl ShearGeometry {
    pub fn shear_per_row(&self) -> f64 {
        self.phi / self.lines.spacing as f64
    }

    /// Canvas column that shows source column `x` on canvas row `row`.
    pub fn canvas_column(&self, row: usize, x: f64) -> f64 {
        let u = row as f64 - self.lines.top as f64;
        x - self.crop.left as f64 + self.pad_left as f64 - u * self.shear_per_row()
    }
}

/// One or more channels of an EPI laid out on a processing canvas.
#[derive(Clone, Debug, PartialEq)]
pub struct ShearedEpi {
    pub channels: Vec<Plane>,
    pub geometry: ShearGeometry,
}

impl ShearedEpi {
    pub fn new(channels: Vec<Plane>, geometry: ShearGeometry) -> Result<Self> {
        if channels.is_empty() {
            return Err(invalid("sheared EPI needs at least one channel"));
        }
        for c in &channels {
            c.check_shape(geometry.height, geometry.width, "sheared EPI channel")?;
        }
        Ok(Self { channels, geometry })
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    /// Single-channel view sharing this geometry.
    pub fn channel(&self, ch: usize) -> ShearedEpi {
        ShearedEpi { channels: vec![self.channels[ch].clone()], geometry: self.geometry.clone() }
    }
}

/// The chosen shear and the interval of admissible shears.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhiChoice {
    pub phi: f64,
    pub admissible: (f64, f64),
}

/// Picks `phi = d_min`, valid when the disparity range fits in `budget`.
pub fn choose_phi(d: &DisparityConfig, budget: f64) -> Result<PhiChoice> {
    let range = d.d_range();
    if range > budget {
        return Err(Error::DisparityBudget { d_range: range, budget });
    }
    Ok(PhiChoice { phi: d.d_min, admissible: (d.d_min - (budget - range), d.d_min) })
}

/// Horizontal padding needed to keep every sheared line on the canvas.
pub fn shear_extent(views: usize, phi: f64) -> usize {
    let span = (views.saturating_sub(1)) as f64 * phi.abs();
    (span - 1e-9).ceil().max(0.0) as usize
}

/// Border crop that removes all columns touched by the shear padding.
pub fn default_border_margin(views: usize, phi: f64) -> usize {
    round_up(shear_extent(views, phi), ALIGN)
}

/// Shifts line `i` by `i * phi`, places it at row `top + i * spacing` of a
/// zero canvas of height `canvas_h`, padding the width to a multiple of 16.
pub fn preshear_pad(epi: &Epi, phi: f64, spacing: usize, canvas_h: usize, top: usize) -> Result<ShearedEpi> {
    let n = epi.view_count();
    let m = epi.width();
    if spacing == 0 || !phi.is_finite() {
        return Err(invalid("preshear needs a positive spacing and a finite shift"));
    }
    if canvas_h % ALIGN != 0 || top + (n - 1) * spacing >= canvas_h {
        return Err(invalid(format!(
            "{n} lines at spacing {spacing} from row {top} do not fit a {canvas_h}-row canvas"
        )));
    }
    let extent = shear_extent(n, phi);
    let width = round_up(m + extent, ALIGN);
    let slack = width - m - extent;
    let pad_left = if phi >= 0.0 { extent + slack / 2 } else { slack / 2 };
    let geometry = ShearGeometry {
        height: canvas_h,
        width,
        lines: LineLayout { top, count: n, spacing },
        phi,
        pad_left,
        source_width: m,
        crop: CropOffsets::default(),
    };
    let channels = epi
        .channels()
        .iter()
        .map(|src| {
            let mut canvas = Plane::zeros(canvas_h, width);
            for i in 0..n {
                let spline = CubicSpline::new(src.row(i));
                let row = top + i * spacing;
                let offset = i as f64 * phi - pad_left as f64;
                for (c, v) in canvas.row_mut(row).iter_mut().enumerate() {
                    *v = spline.eval(c as f64 + offset);
                }
            }
            canvas
        })
        .collect();
    ShearedEpi::new(channels, geometry)
}

fn crop_columns(se: &ShearedEpi, left: usize, width: usize) -> Result<ShearedEpi> {
    let channels = se.channels.iter().map(|c| c.crop_columns(left, width)).collect::<Result<Vec<_>>>()?;
    let mut geometry = se.geometry.clone();
    geometry.crop.left += left;
    geometry.crop.right += se.width() - width - left;
    geometry.width = width;
    Ok(ShearedEpi { channels, geometry })
}

/// Removes `margin` columns from both sides.
pub fn border_crop(se: &ShearedEpi, margin: usize) -> Result<ShearedEpi> {
    let w = se.width();
    if 2 * margin >= w {
        return Err(invalid(format!("border margin {margin} too large for width {w}")));
    }
    if (w - 2 * margin) % ALIGN != 0 {
        return Err(invalid(format!("border crop of {margin} leaves width {} not a multiple of {ALIGN}", w - 2 * margin)));
    }
    crop_columns(se, margin, w - 2 * margin)
}

/// Full-height crop of `width` columns at a uniformly drawn offset.
pub fn random_crop<R: Rng + ?Sized>(se: &ShearedEpi, width: usize, rng: &mut R) -> Result<ShearedEpi> {
    let w = se.width();
    if width == 0 || width > w || width % ALIGN != 0 {
        return Err(invalid(format!("random crop width {width} invalid for canvas width {w}")));
    }
    let left = rng.gen_range(0..=w - width);
    crop_columns(se, left, width)
}

/// A set of whole active canvas rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineMask {
    height: usize,
    width: usize,
    rows: Vec<usize>,
}

impl LineMask {
    pub fn new(height: usize, width: usize, mut rows: Vec<usize>) -> Result<Self> {
        rows.sort_unstable();
        rows.dedup();
        if rows.iter().any(|&r| r >= height) {
            return Err(invalid("mask row outside canvas"));
        }
        Ok(Self { height, width, rows })
    }

    pub fn all_rows(height: usize, width: usize) -> Self {
        Self { height, width, rows: (0..height).collect() }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn active_rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn contains(&self, row: usize) -> bool {
        self.rows.binary_search(&row).is_ok()
    }

    pub fn to_plane(&self) -> Plane {
        let mut p = Plane::zeros(self.height, self.width);
        for &r in &self.rows {
            p.row_mut(r).fill(1.0);
        }
        p
    }

    /// Zeroes every row outside the mask.
    pub fn apply(&self, plane: &Plane) -> Result<Plane> {
        plane.check_shape(self.height, self.width, "masked plane")?;
        let mut out = Plane::zeros(self.height, self.width);
        for &r in &self.rows {
            out.row_mut(r).copy_from_slice(plane.row(r));
        }
        Ok(out)
    }

    pub fn intersect(&self, other: &LineMask) -> LineMask {
        let rows = self.rows.iter().copied().filter(|r| other.contains(*r)).collect();
        LineMask { height: self.height, width: self.width, rows }
    }
}

/// First, middle and last lines: the known views of a decimated canvas.
pub fn make_input_mask(geometry: &ShearGeometry) -> Result<LineMask> {
    let l = geometry.lines;
    if l.count < 3 || l.count % 2 == 0 {
        return Err(invalid(format!("{} lines have no well-defined middle line", l.count)));
    }
    let rows = vec![l.top, l.top + (l.count / 2) * l.spacing, l.last()];
    LineMask::new(geometry.height, geometry.width, rows)
}

/// Every line row: the support of the training loss.
pub fn make_eval_mask(geometry: &ShearGeometry) -> LineMask {
    LineMask { height: geometry.height, width: geometry.width, rows: geometry.lines.rows().collect() }
}

/// Keeps the masked rows; the surviving lines become the new line layout.
pub fn decimate(se: &ShearedEpi, mask: &LineMask) -> Result<ShearedEpi> {
    if mask.shape() != (se.height(), se.width()) {
        return Err(invalid("mask shape does not match canvas"));
    }
    let kept: Vec<usize> = se.geometry.lines.rows().filter(|r| mask.contains(*r)).collect();
    let Some(&top) = kept.first() else {
        return Err(invalid("mask keeps none of the canvas lines"));
    };
    let spacing = if kept.len() > 1 { kept[1] - kept[0] } else { se.geometry.lines.spacing };
    if kept.windows(2).any(|w| w[1] - w[0] != spacing) {
        return Err(invalid("mask keeps lines that are not equally spaced"));
    }
    let channels = se.channels.iter().map(|c| mask.apply(c)).collect::<Result<Vec<_>>>()?;
    let mut geometry = se.geometry.clone();
    geometry.phi = se.geometry.shear_per_row() * spacing as f64;
    geometry.lines = LineLayout { top, count: kept.len(), spacing };
    Ok(ShearedEpi { channels, geometry })
}

/// Undoes the shear for every canvas row between the first and last line,
/// returning the dense EPI over the original source columns.
pub fn postshear(dense: &Plane, geometry: &ShearGeometry) -> Result<Plane> {
    dense.check_shape(geometry.height, geometry.width, "post-shear canvas")?;
    let lines = geometry.lines;
    if lines.count == 0 || lines.last() >= geometry.height {
        return Err(invalid("line layout does not fit the canvas"));
    }
    let rows = lines.last() - lines.top + 1;
    let mut out = Plane::zeros(rows, geometry.source_width);
    for u in 0..rows {
        let r = lines.top + u;
        let spline = CubicSpline::new(dense.row(r));
        for (x, v) in out.row_mut(u).iter_mut().enumerate() {
            *v = spline.eval(geometry.canvas_column(r, x as f64));
        }
    }
    Ok(out)
}
