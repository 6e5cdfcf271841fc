use serde::{Deserialize, Serialize};

/// Weights of the auxiliary reconstruction terms in the multitask loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_depth: f64,
    pub lambda_coords: f64,
    pub lambda_edges: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::uniform(0.5)
    }
}

impl LossWeights {
    pub fn uniform(lambda: f64) -> Self {
        Self {
            lambda_depth: lambda,
            lambda_coords: lambda,
            lambda_edges: lambda,
        }
    }

    pub fn zero() -> Self {
        Self::uniform(0.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.lambda_depth, self.lambda_coords, self.lambda_edges]
            .iter()
            .all(|l| l.is_finite() && *l >= 0.0)
    }
}

/// Per-term values of one multitask loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub classification: f64,
    pub depth: f64,
    pub coords: f64,
    pub edges: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `classification + λd·depth + λr·coords + λe·edges`.
    pub fn recompute(&self, w: &LossWeights) -> f64 {
        self.classification
            + w.lambda_depth * self.depth
            + w.lambda_coords * self.coords
            + w.lambda_edges * self.edges
    }

    /// Whether `total` agrees with the weighted parts to relative `tol`.
    pub fn is_consistent(&self, w: &LossWeights, tol: f64) -> bool {
        let r = self.recompute(w);
        (self.total - r).abs() <= tol * r.abs().max(self.total.abs()).max(1e-12)
    }

    pub(crate) fn accumulate(&mut self, other: &LossBreakdown) {
        self.classification += other.classification;
        self.depth += other.depth;
        self.coords += other.coords;
        self.edges += other.edges;
        self.total += other.total;
    }

    pub(crate) fn scaled(&self, s: f64) -> LossBreakdown {
        LossBreakdown {
            classification: self.classification * s,
            depth: self.depth * s,
            coords: self.coords * s,
            edges: self.edges * s,
            total: self.total * s,
        }
    }
}
