//! Brute-force render oracle shared by the integration tests.
#![allow(dead_code)]

pub mod gradcheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shearlf::{Epi, Image, LightField3D, Plane};

/// Smooth random 1D texture: a sum of cosines with frequencies in
/// [0.005, 0.08] cycles/px, centred on 0.5 and bounded inside [0, 1].
#[derive(Clone, Debug)]
pub struct Texture {
    waves: Vec<(f64, f64, f64)>,
}

impl Texture {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 12;
        let waves = (0..n)
            .map(|_| {
                let f = rng.gen_range(0.005..0.08);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                let amp = rng.gen_range(0.3..1.0) / (n as f64).sqrt() * 0.35;
                (f, phase, amp)
            })
            .collect();
        Self { waves }
    }

    pub fn at(&self, x: f64) -> f64 {
        0.5 + self
            .waves
            .iter()
            .map(|(f, p, a)| a * (std::f64::consts::TAU * f * x + p).cos())
            .sum::<f64>()
    }
}

/// Dense sheared canvas: row `r` shows the texture shifted by `slope * (r - top)`.
pub fn render_canvas(height: usize, width: usize, slope: f64, top: usize, tex: &Texture) -> Plane {
    Plane::from_fn(height, width, |r, c| tex.at(c as f64 - slope * (r as f64 - top as f64)))
}

/// Lambertian light field of one fronto-parallel textured plane: view `v`
/// sees the scene shifted by `v * disparity` pixels, and every scanline uses
/// its own texture.
pub fn render_light_field(views: usize, rows: usize, cols: usize, disparity: f64, seed: u64) -> LightField3D {
    let textures: Vec<[Texture; 3]> = (0..rows)
        .map(|r| {
            let s = seed * 1000 + r as u64 * 3;
            [Texture::new(s), Texture::new(s + 1), Texture::new(s + 2)]
        })
        .collect();
    let images = (0..views)
        .map(|v| {
            let planes = (0..3)
                .map(|ch| Plane::from_fn(rows, cols, |r, c| textures[r][ch].at(c as f64 - v as f64 * disparity)))
                .collect();
            Image::new(planes).unwrap()
        })
        .collect();
    LightField3D::new(images).unwrap()
}

pub fn single_channel_epi(plane: Plane) -> Epi {
    Epi::new(vec![plane]).unwrap()
}

/// PSNR (peak 1) over the given rows and column range.
pub fn region_psnr(a: &Plane, b: &Plane, rows: &[usize], cols: std::ops::Range<usize>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for &r in rows {
        for c in cols.clone() {
            let d = a.get(r, c) - b.get(r, c);
            sum += d * d;
            n += 1;
        }
    }
    -10.0 * (sum / n as f64).log10()
}

pub fn random_plane(height: usize, width: usize, seed: u64) -> Plane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Plane::from_fn(height, width, |_, _| rng.gen_range(-1.0..1.0))
}
