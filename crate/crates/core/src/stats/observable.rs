//! Named observables `φ(x, g)` with a declared growth constant `C`,
//! `|φ(u)| <= C (1 + |u|)` for `u = (x, g)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::norm_sq;
use crate::sampler::GradientTable;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Observable {
    Const(f64),
    /// `x_i`.
    Coord(usize),
    /// `|x|`.
    Norm,
    /// `min(|x|^2, cap)`.
    CappedSquare(f64),
    /// `1 / (1 + exp((x_0 - threshold) / width))`, a smoothed `1{x_0 <= threshold}`.
    SmoothStep { threshold: f64, width: f64 },
}

impl Observable {
    pub fn growth(&self) -> f64 {
        match *self {
            Observable::Const(c) => c.abs(),
            Observable::Coord(_) | Observable::Norm | Observable::SmoothStep { .. } => 1.0,
            // min(t^2, cap) <= sqrt(cap) t
            Observable::CappedSquare(cap) => cap.sqrt(),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], _table: &GradientTable) -> f64 {
        match *self {
            Observable::Const(c) => c,
            Observable::Coord(i) => x[i],
            Observable::Norm => norm_sq(x).sqrt(),
            Observable::CappedSquare(cap) => norm_sq(x).min(cap),
            Observable::SmoothStep { threshold, width } => 1.0 / (1.0 + ((x[0] - threshold) / width).exp()),
        }
    }

    /// Rejects observables that do not fit the problem dimension.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match *self {
            Observable::Coord(i) if i >= dim => Err(invalid(format!("coordinate {i} out of range for d = {dim}"))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Observable::Const(c) => write!(f, "const:{c}"),
            Observable::Coord(i) => write!(f, "x{i}"),
            Observable::Norm => write!(f, "norm"),
            Observable::CappedSquare(cap) => write!(f, "capsq:{cap}"),
            Observable::SmoothStep { threshold, width } => write!(f, "step:{threshold}:{width}"),
        }
    }
}

impl FromStr for Observable {
    type Err = Error;

    /// `const:C`, `x` / `xI`, `norm`, `capsq:CAP`, `step:A:W`.
    fn from_str(s: &str) -> Result<Self> {
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| invalid(format!("bad number {v:?} in observable {s:?}")))
        };
        let parts: Vec<&str> = s.split(':').collect();
        let obs = match parts.as_slice() {
            ["const", c] => Observable::Const(num(c)?),
            ["x"] => Observable::Coord(0),
            ["norm"] => Observable::Norm,
            ["capsq", cap] => {
                let cap = num(cap)?;
                if cap <= 0.0 {
                    return Err(invalid("capsq needs a positive cap"));
                }
                Observable::CappedSquare(cap)
            }
            ["step", a, w] => {
                let width = num(w)?;
                if width <= 0.0 {
                    return Err(invalid("step needs a positive width"));
                }
                Observable::SmoothStep {
                    threshold: num(a)?,
                    width,
                }
            }
            [c] if c.len() > 1 && c.starts_with('x') => match c[1..].parse::<usize>() {
                Ok(i) => Observable::Coord(i),
                Err(_) => return Err(invalid(format!("unregistered observable {s:?}"))),
            },
            _ => return Err(invalid(format!("unregistered observable {s:?}"))),
        };
        Ok(obs)
    }
}

impl TryFrom<String> for Observable {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Observable> for String {
    fn from(o: Observable) -> String {
        o.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        for name in ["const:2.5", "x0", "x3", "norm", "capsq:100", "step:0.5:0.1"] {
            let o: Observable = name.parse().unwrap();
            assert_eq!(o.to_string(), name);
        }
        assert_eq!("x".parse::<Observable>().unwrap(), Observable::Coord(0));
        for bad in ["cube", "capsq:-1", "step:1", "xq", "const:nan"] {
            assert!(matches!(bad.parse::<Observable>(), Err(Error::InvalidArgument(_))), "{bad}");
        }
    }

    #[test]
    fn growth_holds_on_a_grid() {
        let t = GradientTable::zeros(1, 1);
        for name in ["const:-3", "x0", "norm", "capsq:100", "step:0:0.1"] {
            let o: Observable = name.parse().unwrap();
            for i in -400..=400 {
                let x = i as f64 * 0.05;
                assert!(o.eval(&[x], &t).abs() <= o.growth() * (1.0 + x.abs()) + 1e-12, "{name} at {x}");
            }
        }
    }
}
