use std::fmt;

use serde::{Deserialize, Serialize};

/// The nonlinearity multiplying the noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SigmaSpec {
    Constant { c: f64 },
    /// Hyperbolic Anderson model, `σ(u) = λu`.
    Linear { lambda: f64 },
    Affine { a: f64, b: f64 },
    /// `σ(u) = a·sin(u)`.
    Sine { a: f64 },
}

impl SigmaSpec {
    pub const ZERO: SigmaSpec = SigmaSpec::Constant { c: 0.0 };
    pub const ONE: SigmaSpec = SigmaSpec::Constant { c: 1.0 };
    pub const IDENTITY: SigmaSpec = SigmaSpec::Linear { lambda: 1.0 };

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            SigmaSpec::Constant { c } => c,
            SigmaSpec::Linear { lambda } => lambda * u,
            SigmaSpec::Affine { a, b } => a * u + b,
            SigmaSpec::Sine { a } => a * u.sin(),
        }
    }

    pub fn lipschitz_bound(&self) -> f64 {
        match *self {
            SigmaSpec::Constant { .. } => 0.0,
            SigmaSpec::Linear { lambda } => lambda.abs(),
            SigmaSpec::Affine { a, .. } => a.abs(),
            SigmaSpec::Sine { a } => a.abs(),
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match *self {
            SigmaSpec::Constant { c } => Some(c),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        match *self {
            SigmaSpec::Constant { c } => c.is_finite(),
            SigmaSpec::Linear { lambda } => lambda.is_finite(),
            SigmaSpec::Affine { a, b } => a.is_finite() && b.is_finite(),
            SigmaSpec::Sine { a } => a.is_finite(),
        }
    }
}

impl fmt::Display for SigmaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SigmaSpec::Constant { c } => write!(f, "constant({c})"),
            SigmaSpec::Linear { lambda } => write!(f, "linear({lambda})"),
            SigmaSpec::Affine { a, b } => write!(f, "affine({a},{b})"),
            SigmaSpec::Sine { a } => write!(f, "sine({a})"),
        }
    }
}

impl std::str::FromStr for SigmaSpec {
    type Err = String;

    /// Parses `constant(c)`, `linear(λ)`, `affine(a,b)` or `sine(a)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, rest) = s
            .split_once('(')
            .ok_or_else(|| format!("expected name(args), got '{s}'"))?;
        let args = rest
            .strip_suffix(')')
            .ok_or_else(|| format!("missing ')' in '{s}'"))?;
        let nums = args
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|e| format!("bad number '{a}': {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        let arity = |k: usize| {
            if nums.len() == k {
                Ok(())
            } else {
                Err(format!("{name} takes {k} argument(s), got {}", nums.len()))
            }
        };
        match name.trim() {
            "constant" => arity(1).map(|_| SigmaSpec::Constant { c: nums[0] }),
            "linear" => arity(1).map(|_| SigmaSpec::Linear { lambda: nums[0] }),
            "affine" => arity(2).map(|_| SigmaSpec::Affine { a: nums[0], b: nums[1] }),
            "sine" => arity(1).map(|_| SigmaSpec::Sine { a: nums[0] }),
            other => Err(format!("unknown sigma '{other}'")),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn parse_and_display_agree() {
        for s in ["constant(1)", "linear(0.5)", "affine(2,-1)", "sine(1)"] {
            let sigma: SigmaSpec = s.parse().unwrap();
            assert_eq!(sigma.to_string(), s);
        }
        assert!("linear(1,2)".parse::<SigmaSpec>().is_err());
        assert!("cubic(1)".parse::<SigmaSpec>().is_err());
    }

    proptest! {
        #[test]
        fn lipschitz_bound_holds(u in -50.0f64..50.0, v in -50.0f64..50.0, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            for sigma in [
                SigmaSpec::Constant { c: a },
                SigmaSpec::Linear { lambda: a },
                SigmaSpec::Affine { a, b },
                SigmaSpec::Sine { a },
            ] {
                let lhs = (sigma.eval(u) - sigma.eval(v)).abs();
                prop_assert!(lhs <= sigma.lipschitz_bound() * (u - v).abs() + 1e-12);
            }
        }
    }
}
