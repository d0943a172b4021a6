use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::labels::ClassLabels;

/// Structure of the sample-coupling matrix `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingMode {
    /// `G = I_n`; DCCA collapses to CCA.
    Identity,
    /// `G[a, b] = 1` iff samples `a` and `b` share a class.
    #[default]
    ClassBlocks,
}

/// Lazily represented `n x n` coupling matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    mode: CouplingMode,
    labels: ClassLabels,
}

impl CouplingMatrix {
    pub fn new(mode: CouplingMode, labels: ClassLabels) -> Self {
        Self { mode, labels }
    }

    pub fn mode(&self) -> CouplingMode {
        self.mode
    }

    pub fn labels(&self) -> &ClassLabels {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Dense `G`. Quadratic in the sample count; for tests and small data.
    pub fn materialize(&self) -> Array2<f64> {
        let n = self.n();
        match self.mode {
            CouplingMode::Identity => Array2::eye(n),
            CouplingMode::ClassBlocks => {
                let ids = self.labels.ids();
                Array2::from_shape_fn((n, n), |(a, b)| f64::from(u8::from(ids[a] == ids[b])))
            }
        }
    }
}
