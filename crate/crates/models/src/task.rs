use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a model predicts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum Task {
    /// Conditional mean, squared loss.
    Regression,
    /// Conditional `alpha`-quantile, pinball loss.
    Quantile { alpha: f64 },
    /// Below / near / above normal, cross-entropy.
    Tercile,
}

impl Task {
    pub fn quantile(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("quantile level {alpha} outside (0, 1)")));
        }
        Ok(Task::Quantile { alpha })
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            Task::Quantile { alpha } => Some(*alpha),
            _ => None,
        }
    }
}

impl FromStr for Task {
    type Err = Error;
    /// `regression`, `tercile`, `quantile` (α = 0.9) or `quantile:0.5`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Task::Regression),
            "tercile" => Ok(Task::Tercile),
            "quantile" => Task::quantile(0.9),
            other => match other.strip_prefix("quantile:").map(str::parse::<f64>) {
                Some(Ok(alpha)) => Task::quantile(alpha),
                _ => Err(Error::Config(format!("unknown task '{other}'"))),
            },
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Regression => f.write_str("regression"),
            Task::Quantile { alpha } => write!(f, "quantile:{alpha}"),
            Task::Tercile => f.write_str("tercile"),
        }
    }
}

/// Pinball loss `ρ_α(z)` of a residual `z = y - ŷ`.
pub fn pinball_loss(z: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("quantile level {alpha} outside (0, 1)")));
    }
    Ok(pinball(z, alpha))
}

/// Unchecked [`pinball_loss`].
#[inline]
pub fn pinball(z: f64, alpha: f64) -> f64 {
    if z >= 0.0 {
        alpha * z
    } else {
        (alpha - 1.0) * z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball_loss(0.0, 0.3).unwrap(), 0.0);
        assert!((pinball_loss(2.0, 0.9).unwrap() - 1.8).abs() < 1e-15);
        assert!((pinball_loss(-2.0, 0.9).unwrap() - 0.2).abs() < 1e-15);
        assert!(pinball_loss(1.0, 1.0).is_err());
        assert!(pinball_loss(1.0, 0.0).is_err());
    }

    #[test]
    fn task_parsing() {
        assert_eq!("quantile:0.5".parse::<Task>().unwrap(), Task::Quantile { alpha: 0.5 });
        assert_eq!("quantile".parse::<Task>().unwrap().alpha(), Some(0.9));
        assert!("quantile:1.5".parse::<Task>().is_err());
        assert_eq!(Task::Tercile.to_string().parse::<Task>().unwrap(), Task::Tercile);
    }

    proptest! {
        #[test]
        fn pinball_is_convex(z1 in -100.0f64..100.0, z2 in -100.0f64..100.0, lambda in 0.0f64..=1.0, alpha in 0.01f64..0.99) {
            let mid = pinball(lambda * z1 + (1.0 - lambda) * z2, alpha);
            let chord = lambda * pinball(z1, alpha) + (1.0 - lambda) * pinball(z2, alpha);
            prop_assert!(mid <= chord + 1e-9 * (1.0 + chord.abs()));
        }
    }
}
