use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::scalar::Scalar;

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Identity,
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Tanh,
    ];

    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the input `x` and the output `y = apply(x)`.
    pub fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "none" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::validation("activation", format!("unknown kind `{other}`"))),
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_at_zero() {
        let y = Activation::Tanh.apply(0.0_f64);
        assert_eq!(y, 0.0);
        assert_eq!(Activation::Tanh.derivative(0.0, y), 1.0);
    }

    #[test]
    fn relu_negative_is_dead() {
        let y = Activation::Relu.apply(-1.0_f64);
        assert_eq!(y, 0.0);
        assert_eq!(Activation::Relu.derivative(-1.0, y), 0.0);
    }

    #[test]
    fn tanh_saturates_at_ten() {
        let y = Activation::Tanh.apply(10.0_f64);
        let d = Activation::Tanh.derivative(10.0, y);
        // 1 - tanh(10)^2 = 4 / (e^10 + e^-10)^2 ≈ 8.2e-9
        let expected = 4.0 / (10.0_f64.exp() + (-10.0_f64).exp()).powi(2);
        assert!((d - expected).abs() < 1e-15);
        assert!(d < 1e-7);
    }

    #[test]
    fn saturation_ordering() {
        // tanh flattens before sigmoid, relu never does
        for &x in &[3.0_f64, 5.0, 10.0] {
            let t = Activation::Tanh.derivative(x, Activation::Tanh.apply(x));
            let s = Activation::Sigmoid.derivative(x, Activation::Sigmoid.apply(x));
            let r = Activation::Relu.derivative(x, Activation::Relu.apply(x));
            assert!(t < s && s < r, "x={x}: {t} {s} {r}");
        }
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(Activation::Sigmoid.apply(-1000.0_f64), 0.0);
        assert_eq!(Activation::Sigmoid.apply(1000.0_f64), 1.0);
    }

    #[test]
    fn parses_names() {
        assert_eq!("Tanh".parse::<Activation>().unwrap(), Activation::Tanh);
        assert!("gelu".parse::<Activation>().is_err());
    }
}
