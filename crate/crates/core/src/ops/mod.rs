//! Pure tensor kernels. These carry no autodiff state; [`crate::autodiff`]
//! records them and calls the matching `*_backward` functions.

pub mod conv;
pub mod resize;

pub use conv::{conv2d, conv2d_transpose, same_padding};
pub use resize::bilinear_resize;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the forward output `y`.
    /// ReLU's subgradient at zero is zero.
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
        }
    }
}

pub fn pointwise<T: Scalar>(input: &Tensor<T>, act: Activation) -> Tensor<T> {
    input.map(|x| act.apply(x))
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, "add", |x, y| x + y)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, "sub", |x, y| x - y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, "mul", |x, y| x * y)
}

/// Channel-wise concatenation, `a`'s channels first.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ([n, ca, h, w], [nb, cb, hb, wb]) = (a.shape(), b.shape());
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (pa, pb) = (ca * h * w, cb * h * w);
    let mut data = Vec::with_capacity(a.len() + b.len());
    for i in 0..n {
        data.extend_from_slice(&a.data()[i * pa..(i + 1) * pa]);
        data.extend_from_slice(&b.data()[i * pb..(i + 1) * pb]);
    }
    Tensor::new([n, ca + cb, h, w], data)
}
