use crate::error::{invalid, Result};
use crate::geometry::LineMask;
use crate::plane::Plane;

/// Sum of `|target - pred|` over masked rows, and its gradient w.r.t. `pred`.
pub fn masked_l1_loss(pred: &Plane, target: &Plane, mask: &LineMask) -> Result<(f64, Plane)> {
    if pred.shape() != target.shape() || mask.shape() != pred.shape() {
        return Err(invalid("masked L1: shape mismatch"));
    }
    let mut grad = Plane::zeros(pred.height(), pred.width());
    let mut loss = 0.0;
    for &r in mask.active_rows() {
        for ((g, p), t) in grad.row_mut(r).iter_mut().zip(pred.row(r)).zip(target.row(r)) {
            let d = t - p;
            loss += d.abs();
            *g = if d > 0.0 {
                -1.0
            } else if d < 0.0 {
                1.0
            } else {
                0.0
            };
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let mask = LineMask::new(2, 2, vec![0]).unwrap();
        let target = Plane::from_vec(2, 2, vec![1.0, 0.0, 5.0, 5.0]).unwrap();
        let (l, _) = masked_l1_loss(&Plane::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap(), &target, &mask).unwrap();
        assert_eq!(l, 0.0);
        let (l, g) = masked_l1_loss(&Plane::zeros(2, 2), &target, &mask).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g.data(), &[-1.0, 0.0, 0.0, 0.0]);
        assert!(masked_l1_loss(&Plane::zeros(2, 3), &target, &mask).is_err());
    }
}
