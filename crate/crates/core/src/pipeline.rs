//! End-to-end reconstruction of a densely sampled light field, evaluation
//! helpers and the ST/DRST timing benchmark.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::drst::drst_reconstruct;
use crate::error::{invalid, io_err, Error, Result};
use crate::geometry::{choose_phi, make_eval_mask, postshear, preshear_pad, CANVAS_HEIGHT, FIRST_LINE_ROW};
use crate::interp::{resample_taps, CubicSpline};
use crate::io::{list_views, load_image, save_plane_png};
use crate::lightfield::{assemble_lf, extract_epi, merge_sub_dslf, split_sub_sslf, DisparityConfig, Epi, Image, LightField3D};
use crate::nn::{ChannelPlan, NetParams};
use crate::plane::Plane;
use crate::shearlet::ShearletSystem;
use crate::solver::{st_reconstruct_traced, write_residual_log, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    St,
    Drst,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "st" => Ok(Method::St),
            "drst" => Ok(Method::Drst),
            other => Err(invalid(format!("unknown method `{other}` (expected st or drst)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub tau: usize,
    pub gamma: usize,
    pub disparity: Option<DisparityConfig>,
    pub solver: SolverConfig,
    pub checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: u64,
    /// Directory receiving canvases and solver logs of selected EPIs.
    pub dump_intermediates: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::St,
            tau: 16,
            gamma: 127,
            disparity: None,
            solver: SolverConfig::default(),
            checkpoint: None,
            input: None,
            output: None,
            seed: 0,
            dump_intermediates: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| invalid(format!("config key `{key}`: cannot parse `{value}`")))
}

impl RunConfig {
    /// Shearlet scale count for the sampling interval.
    pub fn scales(&self) -> usize {
        (self.tau.max(2) as f64).log2().ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(9..=16).contains(&self.tau) {
            return Err(invalid(format!("tau must lie in (8, 16] for the four-scale system, got {}", self.tau)));
        }
        if self.gamma % 2 == 0 {
            return Err(invalid(format!("gamma must be odd, got {}", self.gamma)));
        }
        if let Some(d) = &self.disparity {
            choose_phi(d, self.tau as f64)?;
        }
        self.solver.validate()
    }

    /// Sets one `key = value` entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "method" => self.method = v.parse()?,
            "tau" => self.tau = parse_value(key, v)?,
            "gamma" => self.gamma = parse_value(key, v)?,
            "d_min" | "d_max" => {
                let x: f64 = parse_value(key, v)?;
                let (lo, hi) = match self.disparity {
                    Some(d) => (d.d_min, d.d_max),
                    None => (x, x),
                };
                let (lo, hi) = if key.trim() == "d_min" { (x, hi.max(x)) } else { (lo.min(x), x) };
                self.disparity = Some(DisparityConfig::new(lo, hi)?);
            }
            "st_iterations" => self.solver.iterations = parse_value(key, v)?,
            "st_alpha" => self.solver.alpha = parse_value(key, v)?,
            "st_schedule" => self.solver.schedule = v.parse()?,
            "st_lambda_min" => self.solver.lambda_min = parse_value(key, v)?,
            "st_relaxation" => self.solver.relaxation = parse_value(key, v)?,
            "st_dore" => self.solver.dore = parse_value(key, v)?,
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "input" => self.input = Some(PathBuf::from(v)),
            "output" => self.output = Some(PathBuf::from(v)),
            "seed" => self.seed = parse_value(key, v)?,
            "dump_intermediates" => self.dump_intermediates = Some(PathBuf::from(v)),
            other => return Err(invalid(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a config text: one `key = value` per line, `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("config line {}: expected `key = value`", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }
}

/// The reconstruction applied to each sheared canvas.
#[derive(Clone, Copy, Debug)]
pub enum Engine<'a> {
    St(&'a SolverConfig),
    Drst(&'a NetParams<f32>),
}

fn engine_for<'a>(cfg: &'a RunConfig, params: Option<&'a NetParams<f32>>) -> Result<Engine<'a>> {
    match cfg.method {
        Method::St => Ok(Engine::St(&cfg.solver)),
        Method::Drst => params.map(Engine::Drst).ok_or_else(|| {
            invalid(match &cfg.checkpoint {
                Some(p) => format!("DRST needs network weights; checkpoint {} was not loaded", p.display()),
                None => "DRST needs a checkpoint".to_string(),
            })
        }),
    }
}

/// Columns added to each side of an EPI before shearing, so the zero
/// padding sits away from the picture and its ringing is cropped off.
pub const EDGE_EXTENSION: usize = 16;

/// Canvas width used for `views` lines of `width` pixels sheared by `phi`.
pub fn canvas_width(width: usize, views: usize, phi: f64) -> usize {
    crate::geometry::round_up(
        width + 2 * EDGE_EXTENSION + crate::geometry::shear_extent(views, phi),
        crate::geometry::ALIGN,
    )
}

/// Extends every line by `e` columns per side. A position outside line `i`
/// is read from the nearest line `j` that saw the same scene point under
/// shear `phi` (at `x - (i - j) * phi`); if none did, the edge is replicated.
fn shear_extend(epi: &Epi, e: usize, phi: f64) -> Result<Epi> {
    let (n, m) = (epi.view_count(), epi.width());
    let last = (m - 1) as f64;
    let channels = epi
        .channels()
        .iter()
        .map(|p| {
            let splines: Vec<CubicSpline> = (0..n).map(|i| CubicSpline::new(p.row(i))).collect();
            Plane::from_fn(n, m + 2 * e, |i, c| {
                let x = c as isize - e as isize;
                if (0..m as isize).contains(&x) {
                    return p.get(i, x as usize);
                }
                let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                order.sort_by_key(|&j| j.abs_diff(i));
                for j in order {
                    let pos = x as f64 - (i as f64 - j as f64) * phi;
                    if (0.0..=last).contains(&pos) {
                        return splines[j].eval(pos);
                    }
                }
                p.get(i, x.clamp(0, m as isize - 1) as usize)
            })
        })
        .collect();
    Epi::new(channels)
}

struct Dump<'a> {
    dir: &'a Path,
    tag: String,
}

/// Densifies one colour EPI of three views: every channel is extended at its borders,
/// presheared, reconstructed on a 128-row canvas and postsheared; input rows
/// are copied back verbatim.
fn densify_epi(
    sys: &ShearletSystem,
    epi: &Epi,
    phi: f64,
    tau: usize,
    engine: Engine<'_>,
    dump: Option<Dump<'_>>,
) -> Result<Epi> {
    let m = epi.width();
    let se = preshear_pad(&shear_extend(epi, EDGE_EXTENSION, phi)?, phi, tau, CANVAS_HEIGHT, FIRST_LINE_ROW)?;
    let mask = make_eval_mask(&se.geometry);
    let mut dense = Vec::with_capacity(se.channels.len());
    for (ch, canvas) in se.channels.iter().enumerate() {
        let mut log = Vec::new();
        let recon = match engine {
            Engine::St(solver) => {
                st_reconstruct_traced(sys, canvas, &mask, solver, |rec, _| log.push(rec.clone()))?
            }
            Engine::Drst(params) => drst_reconstruct(sys, params, canvas)?,
        };
        if let Some(d) = &dump {
            let stem = format!("{}_ch{ch}", d.tag);
            save_plane_png(&d.dir.join(format!("{stem}_input.png")), canvas, 0.0, 1.0)?;
            save_plane_png(&d.dir.join(format!("{stem}_recon.png")), &recon, 0.0, 1.0)?;
            if !log.is_empty() {
                write_residual_log(&d.dir.join(format!("{stem}_residual.csv")), &log)?;
            }
        }
        let mut out = postshear(&recon, &se.geometry)?.crop_columns(EDGE_EXTENSION, m)?;
        for i in 0..epi.view_count() {
            out.row_mut(i * tau).copy_from_slice(epi.channel(ch).row(i));
        }
        dense.push(out);
    }
    Epi::new(dense)
}

/// Reconstructs `(n - 1) * tau + 1` views from `n` views (odd `n >= 3`).
pub fn reconstruct_dslf(sslf: &LightField3D, cfg: &RunConfig, params: Option<&NetParams<f32>>) -> Result<LightField3D> {
    cfg.validate()?;
    let n = sslf.view_count();
    let triples = split_sub_sslf(n)?;
    let d = cfg.disparity.ok_or_else(|| invalid("reconstruction needs d_min and d_max"))?;
    let phi = choose_phi(&d, cfg.tau as f64)?.phi;
    let engine = engine_for(cfg, params)?;
    let width = canvas_width(sslf.width(), 3, phi);
    let sys = ShearletSystem::new(CANVAS_HEIGHT, width, cfg.scales(), cfg.gamma)?;
    if let Engine::Drst(p) = engine {
        if p.plan.io != sys.count() {
            return Err(invalid(format!("checkpoint has {} channels, system has {}", p.plan.io, sys.count())));
        }
    }
    if let Some(dir) = &cfg.dump_intermediates {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let rows = sslf.height();
    let jobs: Vec<(usize, usize)> = (0..triples.len()).flat_map(|t| (0..rows).map(move |y| (t, y))).collect();
    let epis = jobs
        .par_iter()
        .map(|&(t, y)| {
            let sub = sslf.select(&triples[t])?;
            let epi = extract_epi(&sub, y)?;
            let dump = cfg
                .dump_intermediates
                .as_deref()
                .filter(|_| y == rows / 2)
                .map(|dir| Dump { dir, tag: format!("triple{t}_row{y}") });
            densify_epi(&sys, &epi, phi, cfg.tau, engine, dump)
        })
        .collect::<Result<Vec<_>>>()?;
    let subs = epis.chunks(rows).map(assemble_lf).collect::<Result<Vec<_>>>()?;
    merge_sub_dslf(subs, cfg.tau)
}

/// Views `0, delta, 2 * delta, ...` of a ground-truth light field.
pub fn subsample_for_eval(gt: &LightField3D, delta: usize) -> Result<LightField3D> {
    let n = gt.view_count();
    if delta == 0 || (n - 1) % delta != 0 {
        return Err(invalid(format!("{n} views cannot be subsampled at rate {delta}")));
    }
    let idx: Vec<usize> = (0..n).step_by(delta).collect();
    gt.select(&idx)
}

/// Pixel rectangle inside a source image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropBox {
    pub left: usize,
    pub top: usize,
    pub width: usize,
    pub height: usize,
}

impl CropBox {
    /// Largest centred box with aspect `aw:ah` inside `width x height`.
    pub fn centered_aspect(width: usize, height: usize, aw: usize, ah: usize) -> Result<Self> {
        if aw == 0 || ah == 0 || width == 0 || height == 0 {
            return Err(invalid("aspect and image sizes must be positive"));
        }
        let (w, h) = if width * ah >= height * aw { (height * aw / ah, height) } else { (width, width * ah / aw) };
        Ok(Self { left: (width - w) / 2, top: (height - h) / 2, width: w, height: h })
    }
}

/// How to crop each view before resizing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropSpec {
    Aspect(usize, usize),
    Box(CropBox),
}

fn resample_axis(plane: &Plane, taps: &[Vec<(usize, f64)>], horizontal: bool) -> Plane {
    let (h, w) = plane.shape();
    if horizontal {
        Plane::from_fn(h, taps.len(), |r, c| taps[c].iter().map(|&(k, wt)| wt * plane.get(r, k)).sum())
    } else {
        Plane::from_fn(taps.len(), w, |r, c| taps[r].iter().map(|&(k, wt)| wt * plane.get(k, c)).sum())
    }
}

/// Crops and resizes an image with the separable cubic kernel.
pub fn crop_resize(img: &Image, crop: CropBox, target_w: usize, target_h: usize) -> Result<Image> {
    if crop.width == 0
        || crop.height == 0
        || crop.left + crop.width > img.width()
        || crop.top + crop.height > img.height()
    {
        return Err(invalid(format!(
            "crop box {}x{}+{}+{} outside {}x{} image",
            crop.width,
            crop.height,
            crop.left,
            crop.top,
            img.width(),
            img.height()
        )));
    }
    if target_w == 0 || target_h == 0 {
        return Err(invalid("resize target must be positive"));
    }
    let tx = resample_taps(crop.width, target_w);
    let ty = resample_taps(crop.height, target_h);
    let planes = img
        .planes()
        .iter()
        .map(|p| {
            let cut = Plane::from_fn(crop.height, crop.width, |r, c| p.get(r + crop.top, c + crop.left));
            resample_axis(&resample_axis(&cut, &tx, true), &ty, false)
        })
        .collect();
    Image::new(planes)
}

/// Loads every view in `dir`, crops it and resizes it to `target`.
pub fn prep_eval_data(dir: &Path, crop: CropSpec, target: (usize, usize)) -> Result<LightField3D> {
    let views = list_views(dir)?
        .par_iter()
        .map(|p| {
            let img = load_image(p)?;
            let b = match crop {
                CropSpec::Aspect(aw, ah) => CropBox::centered_aspect(img.width(), img.height(), aw, ah)?,
                CropSpec::Box(b) => b,
            };
            crop_resize(&img, b, target.0, target.1)
        })
        .collect::<Result<Vec<_>>>()?;
    LightField3D::new(views)
}

/// Timings of the published implementation on its own hardware.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceTiming {
    pub width: usize,
    pub views: usize,
    pub st_ms: f64,
    pub drst_ms: f64,
    pub speedup: f64,
}

pub const REFERENCE_TIMINGS: [ReferenceTiming; 2] = [
    ReferenceTiming { width: 1280, views: 13, st_ms: 1529.1, drst_ms: 640.5, speedup: 2.4 },
    ReferenceTiming { width: 960, views: 7, st_ms: f64::NAN, drst_ms: f64::NAN, speedup: 4.7 },
];

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub width: usize,
    pub views: usize,
    pub repeats: usize,
    /// Median milliseconds per colour EPI.
    pub st_ms: f64,
    pub drst_ms: f64,
    pub speedup: f64,
}

impl BenchReport {
    pub fn lines(&self) -> Vec<String> {
        let mut out = vec![format!(
            "measured {}x{}x3: ST {:.1} ms, DRST {:.1} ms, speedup {:.2}x (median of {})",
            self.width, self.views, self.st_ms, self.drst_ms, self.speedup, self.repeats
        )];
        for r in REFERENCE_TIMINGS {
            if r.st_ms.is_nan() {
                out.push(format!("reference {}x{}x3: speedup {:.1}x", r.width, r.views, r.speedup));
            } else {
                out.push(format!(
                    "reference {}x{}x3: ST {:.1} ms, DRST {:.1} ms, speedup {:.1}x",
                    r.width, r.views, r.st_ms, r.drst_ms, r.speedup
                ));
            }
        }
        out
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn bench_epi(views: usize, width: usize, seed: u64) -> Result<Epi> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64)> =
        (0..8).map(|_| (rng.gen_range(0.005..0.08), rng.gen_range(0.0..6.283), rng.gen_range(0.02..0.08))).collect();
    let channels = (0..3)
        .map(|ch| {
            Plane::from_fn(views, width, |v, x| {
                let x = x as f64 + 2.0 * v as f64 + 37.0 * ch as f64;
                0.5 + waves.iter().map(|(f, p, a)| a * (std::f64::consts::TAU * f * x + p).cos()).sum::<f64>()
            })
        })
        .collect();
    Epi::new(channels)
}

/// Median wall clock per colour EPI of `views` views and `width` pixels for
/// ST and single-pass DRST; one warm-up run of each is discarded.
pub fn bench(
    width: usize,
    views: usize,
    repeats: usize,
    cfg: &RunConfig,
    params: Option<&NetParams<f32>>,
) -> Result<BenchReport> {
    cfg.validate()?;
    if repeats == 0 {
        return Err(invalid("bench needs at least one repeat"));
    }
    let triples = split_sub_sslf(views)?;
    let epi = bench_epi(views, width, cfg.seed)?;
    let phi = 0.0;
    let sys = ShearletSystem::new(CANVAS_HEIGHT, canvas_width(width, 3, phi), cfg.scales(), cfg.gamma)?;
    let fresh;
    let params = match params {
        Some(p) => p,
        None => {
            fresh = NetParams::<f32>::init(&ChannelPlan::standard(sys.count()), cfg.seed)?;
            &fresh
        }
    };
    let run = |engine: Engine<'_>| -> Result<f64> {
        let start = Instant::now();
        for t in &triples {
            let sub = Epi::new(
                epi.channels()
                    .iter()
                    .map(|c| Plane::from_fn(3, width, |r, x| c.get(t[r], x)))
                    .collect(),
            )?;
            densify_epi(&sys, &sub, phi, cfg.tau, engine, None)?;
        }
        Ok(start.elapsed().as_secs_f64() * 1e3)
    };
    let mut st_solver = cfg.solver.clone();
    st_solver.iterations = 100;
    let mut st = Vec::with_capacity(repeats);
    let mut drst = Vec::with_capacity(repeats);
    run(Engine::Drst(params))?;
    for _ in 0..repeats {
        drst.push(run(Engine::Drst(params))?);
    }
    run(Engine::St(&st_solver))?;
    for _ in 0..repeats {
        st.push(run(Engine::St(&st_solver))?);
    }
    let (st_ms, drst_ms) = (median(st), median(drst));
    Ok(BenchReport { width, views, repeats, st_ms, drst_ms, speedup: st_ms / drst_ms })
}
