//! Central finite-difference checks for double-precision tensor functions.

use tch::{Kind, Tensor};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-6;

/// Gradient of scalar `f` at `x` through autograd.
pub fn analytic_grad(x: &Tensor, f: impl Fn(&Tensor) -> Tensor) -> Tensor {
    let x = x.detach().copy().set_requires_grad(true);
    let y = f(&x);
    Tensor::run_backward(&[y], &[&x], false, false)
        .pop()
        .expect("one input")
}

/// Gradient of scalar `f` at `x` by central differences, one element at a time.
pub fn numerical_grad(x: &Tensor, f: impl Fn(&Tensor) -> Tensor) -> Tensor {
    assert_eq!(x.kind(), Kind::Double, "finite differences need f64 inputs");
    let base = x.detach().copy();
    let flat = Vec::<f64>::try_from(base.view([-1])).expect("f64 tensor");
    let shape = base.size();
    let mut grad = vec![0.0; flat.len()];
    tch::no_grad(|| {
        for (i, g) in grad.iter_mut().enumerate() {
            let mut plus = flat.clone();
            plus[i] += FD_STEP;
            let mut minus = flat.clone();
            minus[i] -= FD_STEP;
            let fp = f(&Tensor::from_slice(&plus).view(shape.as_slice())).double_value(&[]);
            let fm = f(&Tensor::from_slice(&minus).view(shape.as_slice())).double_value(&[]);
            *g = (fp - fm) / (2.0 * FD_STEP);
        }
    });
    Tensor::from_slice(&grad).view(shape.as_slice())
}

/// Largest elementwise relative disagreement between two gradients, with
/// magnitudes below `1e-6` treated as `1e-6`.
pub fn relative_error(analytic: &Tensor, numerical: &Tensor) -> f64 {
    let a = Vec::<f64>::try_from(analytic.to_kind(Kind::Double).view([-1])).expect("tensor");
    let n = Vec::<f64>::try_from(numerical.to_kind(Kind::Double).view([-1])).expect("tensor");
    a.iter()
        .zip(&n)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub fn max_relative_error(x: &Tensor, f: impl Fn(&Tensor) -> Tensor) -> f64 {
    let a = analytic_grad(x, &f);
    let n = numerical_grad(x, &f);
    relative_error(&a, &n)
}
