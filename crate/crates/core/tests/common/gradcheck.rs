//! Central finite-difference gradient checks for the network pieces, shared
//! by the gradient tests and the acceptance run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shearlf::drst::{drst_loss, drst_loss_and_grad, drst_reconstruct};
use shearlf::geometry::LineMask;
use shearlf::nn::*;
use shearlf::{Plane, ShearletSystem};

const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-4;

/// Largest relative error found by one check.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: &'static str,
    pub max_rel: f64,
    pub checked: usize,
}

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Compares `analytic[i]` with the central difference of `f` along the
/// scalar `slot(state, i)` for every `i`.
fn fd<S: Clone>(
    base: &S,
    analytic: &[f64],
    slot: impl Fn(&mut S, usize) -> &mut f64,
    f: impl Fn(&S) -> f64,
) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let mut plus = base.clone();
        *slot(&mut plus, i) += STEP;
        let mut minus = base.clone();
        *slot(&mut minus, i) -= STEP;
        let n = (f(&plus) - f(&minus)) / (2.0 * STEP);
        worst = worst.max(rel(*a, n));
    }
    (worst, analytic.len())
}

fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero so no perturbation crosses a kink.
fn kink_free_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn pairing(y: &Tensor4<f64>, g: &Tensor4<f64>) -> f64 {
    y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
}

fn random_conv(c_in: usize, c_out: usize, k: usize, rng: &mut ChaCha8Rng) -> Conv<f64> {
    let mut c = Conv::zeros(c_in, c_out, k);
    c.weight.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
    c.bias.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
    c
}

fn merge(parts: &[(f64, usize)], name: &'static str) -> GradReport {
    GradReport {
        name,
        max_rel: parts.iter().map(|p| p.0).fold(0.0, f64::max),
        checked: parts.iter().map(|p| p.1).sum(),
    }
}

pub fn conv_check(k: usize) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(10 + k as u64);
    let x = random_tensor([2, 4, 8, 8], &mut rng);
    let conv = random_conv(4, 3, k, &mut rng);
    let g = random_tensor([2, 3, 8, 8], &mut rng);
    let (dx, grad) = conv2d_backward(&x, &conv, &g, true).unwrap();
    let loss_x = |x: &Tensor4<f64>| pairing(&conv2d_forward(x, &conv).unwrap(), &g);
    let loss_c = |c: &Conv<f64>| pairing(&conv2d_forward(&x, c).unwrap(), &g);
    let parts = [
        fd(&x, dx.unwrap().data(), |s, i| &mut s.data_mut()[i], loss_x),
        fd(&conv, &grad.weight, |s, i| &mut s.weight[i], loss_c),
        fd(&conv, &grad.bias, |s, i| &mut s.bias[i], loss_c),
    ];
    merge(&parts, if k == 1 { "conv 1x1" } else { "conv 3x3" })
}

pub fn leaky_check() -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let x = kink_free_tensor([2, 3, 6, 6], &mut rng);
    let g = random_tensor([2, 3, 6, 6], &mut rng);
    let dx = leaky_relu_backward(&x, &g);
    let part = fd(&x, dx.data(), |s, i| &mut s.data_mut()[i], |x| pairing(&leaky_relu(x), &g));
    merge(&[part], "leaky relu")
}

pub fn pool_check() -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    // A shuffled ramp: distinct values at least 1e-3 apart, so no ties flip.
    let shape = [2, 3, 8, 8];
    let len = shape.iter().product::<usize>();
    let mut vals: Vec<f64> = (0..len).map(|i| i as f64 * 1e-3).collect();
    for i in (1..len).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    let x = Tensor4::from_vec(shape, vals).unwrap();
    let (y, arg) = maxpool2(&x).unwrap();
    let g = random_tensor(y.shape(), &mut rng);
    let dx = maxpool2_backward(&g, &arg, shape);
    let part = fd(&x, dx.data(), |s, i| &mut s.data_mut()[i], |x| pairing(&maxpool2(x).unwrap().0, &g));
    merge(&[part], "max pool")
}

pub fn upsample_check() -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let x = random_tensor([2, 3, 4, 5], &mut rng);
    let g = random_tensor([2, 3, 8, 10], &mut rng);
    let dx = upsample_nearest2_backward(&g);
    let part = fd(&x, dx.data(), |s, i| &mut s.data_mut()[i], |x| pairing(&upsample_nearest2(x), &g));
    merge(&[part], "upsample")
}

pub fn concat_check() -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let a = random_tensor([2, 2, 4, 4], &mut rng);
    let b = random_tensor([2, 3, 4, 4], &mut rng);
    let g = random_tensor([2, 5, 4, 4], &mut rng);
    let (da, db) = split_channels(&g, 2).unwrap();
    let parts = [
        fd(&a, da.data(), |s, i| &mut s.data_mut()[i], |a| pairing(&concat_channels(a, &b).unwrap(), &g)),
        fd(&b, db.data(), |s, i| &mut s.data_mut()[i], |b| pairing(&concat_channels(&a, b).unwrap(), &g)),
    ];
    merge(&parts, "concat")
}

fn flat_slot(p: &mut NetParams<f64>, mut i: usize) -> &mut f64 {
    for t in p.tensors_mut() {
        if i < t.len() {
            return &mut t[i];
        }
        i -= t.len();
    }
    panic!("parameter index out of range")
}

fn flat(p: &NetParams<f64>) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.2.iter().copied()).collect()
}

/// Tiny-plan parameters with every layer, including the last, randomized.
fn random_params(io: usize, seed: u64) -> NetParams<f64> {
    let mut p = NetParams::<f64>::init(&ChannelPlan::tiny(io), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    p
}

pub fn unet_check() -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let p = random_params(3, 61);
    let x = random_tensor([1, 3, 16, 16], &mut rng);
    let g = random_tensor([1, 3, 16, 16], &mut rng);
    let mut cache = None;
    unet_forward(&p, &x, Some(&mut cache)).unwrap();
    let (grads, dx) = unet_backward(&p, cache.as_ref().unwrap(), &g, true).unwrap();
    let parts = [
        fd(&p, &flat(&grads), flat_slot, |p| pairing(&unet_forward(p, &x, None).unwrap(), &g)),
        fd(&x, dx.unwrap().data(), |s, i| &mut s.data_mut()[i], |x| pairing(&unet_forward(&p, x, None).unwrap(), &g)),
    ];
    merge(&parts, "tiny U-Net")
}

pub fn l1_check() -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let pred = Plane::from_fn(8, 12, |_, _| rng.gen_range(-1.0..1.0));
    let target = Plane::from_fn(8, 12, |r, c| {
        let off = rng.gen_range(0.05..0.5);
        pred.get(r, c) + if rng.gen_bool(0.5) { off } else { -off }
    });
    let mask = LineMask::new(8, 12, vec![0, 3, 4, 7]).unwrap();
    let (_, grad) = masked_l1_loss(&pred, &target, &mask).unwrap();
    let part = fd(&pred, grad.data(), |s, i| &mut s.data_mut()[i], |p| masked_l1_loss(p, &target, &mask).unwrap().0);
    merge(&[part], "masked L1")
}

/// Loss through analysis, network, synthesis and masked L1 on a 16x16 system.
pub fn end_to_end_check() -> GradReport {
    let sys = ShearletSystem::new(16, 16, 1, 127).unwrap();
    let p = random_params(sys.count(), 80);
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mask = LineMask::new(16, 16, vec![2, 5, 9, 13]).unwrap();
    let input = Plane::from_fn(16, 16, |r, _| if [2, 9].contains(&r) { rng.gen_range(0.0..1.0) } else { 0.0 });
    let pred = drst_reconstruct(&sys, &p, &input).unwrap();
    let target = Plane::from_fn(16, 16, |r, c| {
        let off = rng.gen_range(0.2..0.6);
        pred.get(r, c) + if rng.gen_bool(0.5) { off } else { -off }
    });
    let (_, grads) = drst_loss_and_grad(&sys, &p, &input, &target, &mask).unwrap();
    let part = fd(&p, &flat(&grads), flat_slot, |p| drst_loss(&sys, p, &input, &target, &mask).unwrap());
    merge(&[part], "analysis-network-synthesis")
}

pub fn all_checks() -> Vec<GradReport> {
    vec![
        conv_check(3),
        conv_check(1),
        leaky_check(),
        pool_check(),
        upsample_check(),
        concat_check(),
        unet_check(),
        l1_check(),
        end_to_end_check(),
    ]
}
