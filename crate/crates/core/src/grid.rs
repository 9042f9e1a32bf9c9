//! The relaxation-time axis on which every distribution lives.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Placement of grid points between the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Log,
    Linear,
}

impl std::fmt::Display for Spacing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Spacing::Log => "log",
            Spacing::Linear => "linear",
        })
    }
}

/// A strictly increasing set of T2 values in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct T2Grid {
    values: Vec<f64>,
    spacing: Spacing,
    bounds: (f64, f64),
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    values: Vec<f64>,
    spacing: Spacing,
    bounds: (f64, f64),
}

impl From<T2Grid> for GridRepr {
    fn from(g: T2Grid) -> Self {
        GridRepr {
            values: g.values,
            spacing: g.spacing,
            bounds: g.bounds,
        }
    }
}

impl TryFrom<GridRepr> for T2Grid {
    type Error = Error;

    fn try_from(r: GridRepr) -> Result<Self> {
        let grid = T2Grid {
            values: r.values,
            spacing: r.spacing,
            bounds: r.bounds,
        };
        grid.validate()?;
        Ok(grid)
    }
}

impl T2Grid {
    /// Build a grid of `n_points` values spanning `[t2_min, t2_max]` inclusive.
    pub fn new(t2_min: f64, t2_max: f64, n_points: usize, spacing: Spacing) -> Result<Self> {
        if !(t2_min.is_finite() && t2_max.is_finite() && t2_min > 0.0 && t2_min < t2_max) {
            return Err(param(format!(
                "grid bounds must satisfy 0 < t2_min < t2_max, got ({t2_min}, {t2_max})"
            )));
        }
        if n_points < 2 {
            return Err(param(format!("grid needs at least 2 points, got {n_points}")));
        }
        let last = (n_points - 1) as f64;
        let mut values: Vec<f64> = match spacing {
            Spacing::Log => {
                let (lo, hi) = (t2_min.log10(), t2_max.log10());
                (0..n_points)
                    .map(|i| 10f64.powf(lo + i as f64 * (hi - lo) / last))
                    .collect()
            }
            Spacing::Linear => (0..n_points)
                .map(|i| t2_min + i as f64 * (t2_max - t2_min) / last)
                .collect(),
        };
        values[0] = t2_min;
        values[n_points - 1] = t2_max;
        let grid = T2Grid {
            values,
            spacing,
            bounds: (t2_min, t2_max),
        };
        grid.validate()?;
        Ok(grid)
    }

    /// 60 log-spaced points over 1–2000 ms.
    pub fn default_log() -> Self {
        T2Grid::new(1.0, 2000.0, 60, Spacing::Log).expect("default grid is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let v = &self.values;
        if v.len() < 2 {
            return Err(Error::Validation("grid needs at least 2 points".into()));
        }
        if v.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
            return Err(Error::Validation("grid values must be finite and positive".into()));
        }
        if v.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("grid values must be strictly increasing".into()));
        }
        if self.spacing == Spacing::Log {
            let r0 = v[1] / v[0];
            if v.windows(2).any(|w| ((w[1] / w[0]) / r0 - 1.0).abs() > 1e-12) {
                return Err(Error::Validation("log grid ratio is not constant".into()));
            }
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    /// Compact identifier, e.g. `log:1:2000:60`.
    pub fn id(&self) -> String {
        format!(
            "{}:{}:{}:{}",
            self.spacing,
            self.bounds.0,
            self.bounds.1,
            self.values.len()
        )
    }

    /// Boundaries of the cell owned by each grid point.
    ///
    /// Interior boundaries sit at the midpoint between neighbours (geometric
    /// for log grids, arithmetic for linear ones); the outer boundaries mirror
    /// the first and last interior boundary.
    pub fn cell_edges(&self) -> Vec<f64> {
        let v = &self.values;
        let n = v.len();
        let mid = |a: f64, b: f64| match self.spacing {
            Spacing::Log => (a * b).sqrt(),
            Spacing::Linear => 0.5 * (a + b),
        };
        let mut edges = Vec::with_capacity(n + 1);
        let first_inner = mid(v[0], v[1]);
        edges.push(match self.spacing {
            Spacing::Log => v[0] * v[0] / first_inner,
            Spacing::Linear => 2.0 * v[0] - first_inner,
        });
        for w in v.windows(2) {
            edges.push(mid(w[0], w[1]));
        }
        let last_inner = edges[n - 1];
        edges.push(match self.spacing {
            Spacing::Log => v[n - 1] * v[n - 1] / last_inner,
            Spacing::Linear => 2.0 * v[n - 1] - last_inner,
        });
        edges
    }

    /// Index of the grid point nearest to `t2_ms` (in log distance for log grids).
    pub fn nearest_index(&self, t2_ms: f64) -> usize {
        let key = |x: f64| match self.spacing {
            Spacing::Log => x.ln(),
            Spacing::Linear => x,
        };
        let target = key(t2_ms);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &v) in self.values.iter().enumerate() {
            let d = (key(v) - target).abs();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}
