//! Elementwise activation functions and their derivatives.

use crate::tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Elu { alpha: f64 },
    Tanh,
    Sigmoid,
    /// Identity on the positive range, `tanh` on the negative range.
    /// Continuous at 0 with both one-sided derivatives equal to 1, and
    /// bounded below by -1.
    ModifiedRelu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Elu { alpha } => {
                if x > 0.0 {
                    x
                } else {
                    alpha * (x.exp() - 1.0)
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::ModifiedRelu => {
                if x > 0.0 {
                    x
                } else {
                    x.tanh()
                }
            }
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Elu { alpha } => {
                if x > 0.0 {
                    1.0
                } else {
                    alpha * x.exp()
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
            Activation::ModifiedRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    let t = x.tanh();
                    1.0 - t * t
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "leaky_relu" => Ok(Activation::LeakyRelu { slope: 0.01 }),
            "elu" => Ok(Activation::Elu { alpha: 1.0 }),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "modified_relu" => Ok(Activation::ModifiedRelu),
            other => Err(format!("unknown activation '{other}'")),
        }
    }
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    x.map(|v| T::from_f64(kind.apply(v.as_f64())))
}

pub fn activation_backward<T: Scalar>(dy: &Tensor<T>, x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    dy.zip(x, |g, v| g * T::from_f64(kind.derivative(v.as_f64())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modified_relu_branches() {
        let a = Activation::ModifiedRelu;
        assert_eq!(a.apply(0.5), 0.5);
        assert_eq!(a.apply(0.0), 0.0);
        // tanh(-0.5) = -0.46211715...
        assert!((a.apply(-0.5) - (-0.4621171572600098)).abs() < 1e-12);
        // both one-sided derivatives are 1 at the origin
        assert_eq!(a.derivative(0.0), 1.0);
        assert_eq!(a.derivative(1e-12), 1.0);
        // bounded below by -1
        assert!(a.apply(-1e6) >= -1.0);
    }

    #[test]
    fn sigmoid_midpoint() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
    }

    #[test]
    fn elu_continuous_at_zero() {
        let a = Activation::Elu { alpha: 1.0 };
        assert!((a.apply(-1e-9) - 0.0).abs() < 1e-8);
        assert_eq!(a.apply(0.0), 0.0);
    }
}
