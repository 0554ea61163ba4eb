//! Basis functions on the 24-hour circle, `s` in day fractions `[0, 1)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::MINUTES_PER_DAY;

/// Largest supported basis size.
pub const MAX_BASIS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum BasisKind {
    /// Cubic B-splines on `K` equally spaced knots, wrapped around midnight.
    /// They sum to one at every `s`.
    #[default]
    PeriodicBSpline,
    /// `1, cos 2πs, sin 2πs, cos 4πs, ...` truncated to `K` terms.
    Fourier,
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BasisKind::PeriodicBSpline => "periodic-bspline",
            BasisKind::Fourier => "fourier",
        })
    }
}

impl FromStr for BasisKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "periodic-bspline" | "bspline" => Ok(BasisKind::PeriodicBSpline),
            "fourier" => Ok(BasisKind::Fourier),
            other => Err(format!("unknown basis {other:?} (expected periodic-bspline or fourier)")),
        }
    }
}

/// Centred cardinal cubic B-spline, support `[-2, 2]`.
pub fn cubic_bspline(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + 0.5 * a * a * a
    } else if a < 2.0 {
        let t = 2.0 - a;
        t * t * t / 6.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Basis {
    pub kind: BasisKind,
    pub k: usize,
}

impl Basis {
    pub fn new(kind: BasisKind, k: usize) -> Result<Self, String> {
        if k == 0 || k > MAX_BASIS {
            return Err(format!("basis size K must be in 1..={MAX_BASIS}, got {k}"));
        }
        Ok(Self { kind, k })
    }

    /// `φ_index(s)` for `s` in day fractions.
    pub fn value(&self, index: usize, s: f64) -> f64 {
        match self.kind {
            BasisKind::PeriodicBSpline => {
                let k = self.k as f64;
                let x = s * k - index as f64;
                // Sum the periodic images that can reach x; enough for any K >= 1.
                (-3..=3).map(|m| cubic_bspline(x + m as f64 * k)).sum()
            }
            BasisKind::Fourier => {
                if index == 0 {
                    return 1.0;
                }
                let freq = index.div_ceil(2) as f64;
                let arg = 2.0 * std::f64::consts::PI * freq * s;
                if index % 2 == 1 {
                    arg.cos()
                } else {
                    arg.sin()
                }
            }
        }
    }

    /// Row `k` holds `φ_k` at each minute start `m / 1440`.
    pub fn minute_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.k)
            .map(|k| {
                (0..MINUTES_PER_DAY)
                    .map(|m| self.value(k, m as f64 / MINUTES_PER_DAY as f64))
                    .collect()
            })
            .collect()
    }
}

/// `Σ_m X(m) φ_k(m/1440) / 1440` for each `k`: the periodic trapezoid rule
/// on the minute grid, `s` measured in days.
pub fn project(profile: &[f64], matrix: &[Vec<f64>]) -> Vec<f64> {
    let ds = 1.0 / MINUTES_PER_DAY as f64;
    matrix
        .iter()
        .map(|phi| phi.iter().zip(profile).map(|(p, x)| p * x).sum::<f64>() * ds)
        .collect()
}
