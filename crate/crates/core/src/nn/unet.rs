//! Four-level encoder-decoder predicting a residual on shearlet coefficients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::layers::*;
use crate::nn::{Scalar, Tensor4};

pub const LAYER_NAMES: [&str; 9] = ["enc1", "enc2", "enc3", "enc4", "dec1", "dec2", "dec3", "dec4", "final"];

/// Channel widths of the encoder and decoder hierarchies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelPlan {
    /// Input and output channels (one per shearlet filter).
    pub io: usize,
    pub encoder: [usize; 4],
    pub decoder: [usize; 4],
}

impl ChannelPlan {
    pub fn standard(io: usize) -> Self {
        Self { io, encoder: [64, 128, 256, 512], decoder: [256, 128, 64, 64] }
    }

    /// The smallest interesting plan, used for gradient checks.
    pub fn tiny(io: usize) -> Self {
        Self { io, encoder: [2, 3, 4, 5], decoder: [4, 3, 2, 2] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.io == 0 || self.encoder.contains(&0) || self.decoder.contains(&0) {
            return Err(invalid("channel plan widths must be positive"));
        }
        Ok(())
    }

    /// `(c_in, c_out, kernel)` of each layer, in [`LAYER_NAMES`] order.
    pub fn layer_shapes(&self) -> [(usize, usize, usize); 9] {
        let [e1, e2, e3, e4] = self.encoder;
        let [d1, d2, d3, d4] = self.decoder;
        [
            (self.io, e1, 3),
            (e1, e2, 3),
            (e2, e3, 3),
            (e3, e4, 3),
            (e4, d1, 3),
            (e3 + d1, d2, 3),
            (e2 + d2, d3, 3),
            (e1 + d3, d4, 3),
            (d4, self.io, 1),
        ]
    }

    /// Closed-form trainable parameter count.
    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|&(ci, co, k)| k * k * ci * co + co).sum()
    }

    /// Flat list of plan entries, as stored in checkpoints.
    pub fn to_entries(&self) -> Vec<u32> {
        std::iter::once(self.io).chain(self.encoder).chain(self.decoder).map(|v| v as u32).collect()
    }

    pub fn from_entries(e: &[u32]) -> Result<Self> {
        if e.len() != 9 {
            return Err(invalid(format!("channel plan needs 9 entries, got {}", e.len())));
        }
        let u = |i: usize| e[i] as usize;
        let plan = Self { io: u(0), encoder: [u(1), u(2), u(3), u(4)], decoder: [u(5), u(6), u(7), u(8)] };
        plan.validate()?;
        Ok(plan)
    }
}

/// All trainable tensors of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams<T> {
    pub plan: ChannelPlan,
    pub layers: Vec<Conv<T>>,
}

impl<T: Scalar> NetParams<T> {
    pub fn zeros(plan: &ChannelPlan) -> Self {
        let layers = plan.layer_shapes().iter().map(|&(ci, co, k)| Conv::zeros(ci, co, k)).collect();
        Self { plan: plan.clone(), layers }
    }

    /// He-uniform weights, zero biases and a zero final layer.
    pub fn init(plan: &ChannelPlan, seed: u64) -> Result<Self> {
        plan.validate()?;
        let mut p = Self::zeros(plan);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = p.layers.len() - 1;
        for conv in &mut p.layers[..last] {
            let bound = (6.0 / (conv.c_in * conv.k * conv.k) as f64).sqrt();
            for w in &mut conv.weight {
                *w = T::from_f64(rng.gen_range(-bound..bound));
            }
        }
        Ok(p)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Conv::parameter_count).sum()
    }

    /// `(name, dims, values)` of every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (name, conv) in LAYER_NAMES.iter().zip(&self.layers) {
            out.push((format!("{name}.weight"), vec![conv.c_out, conv.c_in, conv.k, conv.k], conv.weight.as_slice()));
            out.push((format!("{name}.bias"), vec![conv.c_out], conv.bias.as_slice()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for conv in &mut self.layers {
            out.push(conv.weight.as_mut_slice());
            out.push(conv.bias.as_mut_slice());
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> NetParams<U> {
        let layers = self
            .layers
            .iter()
            .map(|c| Conv {
                c_in: c.c_in,
                c_out: c.c_out,
                k: c.k,
                weight: c.weight.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                bias: c.bias.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            })
            .collect();
        NetParams { plan: self.plan.clone(), layers }
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &NetParams<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += *y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += *y);
        }
    }
}

/// Intermediate values kept by a forward pass for the backward pass.
#[derive(Debug)]
pub struct UNetCache<T> {
    input: Tensor4<T>,
    pre: Vec<Tensor4<T>>,
    pooled: Vec<Tensor4<T>>,
    argmax: Vec<Vec<u8>>,
    pool_shapes: Vec<[usize; 4]>,
    concat: Vec<Tensor4<T>>,
    last_up: Tensor4<T>,
}

fn check_input<T: Scalar>(p: &NetParams<T>, x: &Tensor4<T>) -> Result<()> {
    if x.channels() != p.plan.io {
        return Err(invalid(format!("network expects {} channels, got {}", p.plan.io, x.channels())));
    }
    if x.height() % 16 != 0 || x.width() % 16 != 0 {
        return Err(invalid(format!("network input {}x{} is not a multiple of 16", x.height(), x.width())));
    }
    Ok(())
}

/// Runs the network; with `cache` set, keeps what [`unet_backward`] needs.
pub fn unet_forward<T: Scalar>(p: &NetParams<T>, x: &Tensor4<T>, cache: Option<&mut Option<UNetCache<T>>>) -> Result<Tensor4<T>> {
    check_input(p, x)?;
    let keep = cache.is_some();
    let mut pre = Vec::new();
    let mut pooled = Vec::new();
    let mut argmax = Vec::new();
    let mut pool_shapes = Vec::new();
    let mut concat = Vec::new();

    let mut h = x.clone();
    for conv in &p.layers[..4] {
        let z = conv2d_forward(&h, conv)?;
        let a = leaky_relu(&z);
        let (pl, arg) = maxpool2(&a)?;
        pool_shapes.push(a.shape());
        if keep {
            pre.push(z);
            argmax.push(arg);
        }
        pooled.push(pl.clone());
        h = pl;
    }
    for (i, conv) in p.layers[4..8].iter().enumerate() {
        let input = if i == 0 { h } else { concat_channels(&pooled[3 - i], &h)? };
        let z = conv2d_forward(&input, conv)?;
        let a = leaky_relu(&z);
        h = upsample_nearest2(&a);
        if keep {
            pre.push(z);
            if i > 0 {
                concat.push(input);
            }
        }
    }
    let out = conv2d_forward(&h, &p.layers[8])?;
    if let Some(slot) = cache {
        *slot = Some(UNetCache { input: x.clone(), pre, pooled, argmax, pool_shapes, concat, last_up: h });
    }
    Ok(out)
}

/// Gradients of all parameters (and optionally the input) given `d out`.
pub fn unet_backward<T: Scalar>(
    p: &NetParams<T>,
    cache: &UNetCache<T>,
    dout: &Tensor4<T>,
    want_dx: bool,
) -> Result<(NetParams<T>, Option<Tensor4<T>>)> {
    let mut grads = NetParams::zeros(&p.plan);
    let set = |grads: &mut NetParams<T>, i: usize, g: ConvGrad<T>| {
        grads.layers[i].weight = g.weight;
        grads.layers[i].bias = g.bias;
    };

    let (dh, g) = conv2d_backward(&cache.last_up, &p.layers[8], dout, true)?;
    set(&mut grads, 8, g);
    let mut dh = dh.expect("requested");
    let mut skip_grads: Vec<Option<Tensor4<T>>> = vec![None, None, None];
    for i in (0..4).rev() {
        let layer = 4 + i;
        let da = upsample_nearest2_backward(&dh);
        let dz = leaky_relu_backward(&cache.pre[layer], &da);
        let input = if i == 0 { &cache.pooled[3] } else { &cache.concat[i - 1] };
        let (din, g) = conv2d_backward(input, &p.layers[layer], &dz, true)?;
        set(&mut grads, layer, g);
        let din = din.expect("requested");
        if i == 0 {
            dh = din;
        } else {
            let skip_ch = cache.pooled[3 - i].channels();
            let (dskip, dup) = split_channels(&din, skip_ch)?;
            skip_grads[3 - i] = Some(dskip);
            dh = dup;
        }
    }
    // dh is now the gradient w.r.t. pooled[3]
    let mut dx = None;
    for i in (0..4).rev() {
        if i < 3 {
            if let Some(s) = skip_grads[i].take() {
                dh.data_mut().iter_mut().zip(s.data()).for_each(|(a, b)| *a += *b);
            }
        }
        let da = maxpool2_backward(&dh, &cache.argmax[i], cache.pool_shapes[i]);
        let dz = leaky_relu_backward(&cache.pre[i], &da);
        let input = if i == 0 { &cache.input } else { &cache.pooled[i - 1] };
        let need = i > 0 || want_dx;
        let (din, g) = conv2d_backward(input, &p.layers[i], &dz, need)?;
        set(&mut grads, i, g);
        if i > 0 {
            dh = din.expect("requested");
        } else {
            dx = din;
        }
    }
    Ok((grads, dx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_plan_count() {
        let plan = ChannelPlan::standard(35);
        assert_eq!(plan.parameter_count(), 3_562_851);
        let p = NetParams::<f32>::zeros(&plan);
        assert_eq!(p.parameter_count(), plan.parameter_count());
    }

    #[test]
    fn output_shape_matches_input() {
        let plan = ChannelPlan::tiny(4);
        let p = NetParams::<f64>::init(&plan, 1).unwrap();
        let x = Tensor4::from_fn([2, 4, 32, 48], |i| (i as f64 * 0.01).cos());
        let y = unet_forward(&p, &x, None).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|v| *v == 0.0));
        assert!(unet_forward(&p, &Tensor4::zeros([1, 4, 24, 32]), None).is_err());
    }

    #[test]
    fn plan_entries_roundtrip() {
        let plan = ChannelPlan::standard(35);
        assert_eq!(ChannelPlan::from_entries(&plan.to_entries()).unwrap(), plan);
    }
}
