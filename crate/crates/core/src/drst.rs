//! Single-pass learned reconstruction: a residual on shearlet coefficients.

use crate::error::{invalid, Result};
use crate::geometry::LineMask;
use crate::nn::{masked_l1_loss, unet_backward, unet_forward, NetParams, Scalar, Tensor4};
use crate::plane::Plane;
use crate::shearlet::{CoefficientStack, ShearletSystem};

fn to_tensor<T: Scalar>(c: &CoefficientStack) -> Tensor4<T> {
    let data = c.data().iter().map(|v| T::from_f64(*v)).collect();
    Tensor4::from_vec([1, c.count(), c.height(), c.width()], data).expect("stack shape is valid")
}

fn add_residual<T: Scalar>(c: &mut CoefficientStack, r: &Tensor4<T>) {
    for (a, b) in c.data_mut().iter_mut().zip(r.data()) {
        *a += b.to_f64();
    }
}

fn check_plan<T: Scalar>(sys: &ShearletSystem, params: &NetParams<T>) -> Result<()> {
    if params.plan.io != sys.count() {
        return Err(invalid(format!(
            "network has {} channels but the shearlet system has {} filters",
            params.plan.io,
            sys.count()
        )));
    }
    Ok(())
}

/// `SH*(SH x + R(SH x))` for a decimated canvas `x`.
pub fn drst_reconstruct<T: Scalar>(sys: &ShearletSystem, params: &NetParams<T>, measured: &Plane) -> Result<Plane> {
    check_plan(sys, params)?;
    let mut c = sys.analysis(measured)?;
    let r = unet_forward(params, &to_tensor::<T>(&c), None)?;
    add_residual(&mut c, &r);
    sys.synthesis(&c)
}

/// Training loss on one canvas and its gradient w.r.t. every parameter.
///
/// The loss is the masked L1 distance between the reconstruction of `input`
/// and `target`; the synthesis backward is the analysis transform.
pub fn drst_loss_and_grad<T: Scalar>(
    sys: &ShearletSystem,
    params: &NetParams<T>,
    input: &Plane,
    target: &Plane,
    mask: &LineMask,
) -> Result<(f64, NetParams<T>)> {
    check_plan(sys, params)?;
    drst_loss_and_grad_coeffs(sys, params, &sys.analysis(input)?, target, mask)
}

/// [`drst_loss_and_grad`] starting from the analysis coefficients of the input.
pub fn drst_loss_and_grad_coeffs<T: Scalar>(
    sys: &ShearletSystem,
    params: &NetParams<T>,
    coeffs: &CoefficientStack,
    target: &Plane,
    mask: &LineMask,
) -> Result<(f64, NetParams<T>)> {
    check_plan(sys, params)?;
    let mut c = coeffs.clone();
    let mut cache = None;
    let r = unet_forward(params, &to_tensor::<T>(&c), Some(&mut cache))?;
    add_residual(&mut c, &r);
    let pred = sys.synthesis(&c)?;
    let (loss, dpred) = masked_l1_loss(&pred, target, mask)?;
    let dc = sys.analysis(&dpred)?;
    let cache = cache.expect("forward keeps a cache when asked");
    let (grads, _) = unet_backward(params, &cache, &to_tensor::<T>(&dc), false)?;
    Ok((loss, grads))
}

/// Loss only (no gradient), for monitoring.
pub fn drst_loss<T: Scalar>(
    sys: &ShearletSystem,
    params: &NetParams<T>,
    input: &Plane,
    target: &Plane,
    mask: &LineMask,
) -> Result<f64> {
    let pred = drst_reconstruct(sys, params, input)?;
    Ok(masked_l1_loss(&pred, target, mask)?.0)
}
