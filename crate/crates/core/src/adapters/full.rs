use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

/// Full fine-tuning baseline: every entry of the weight is trainable and
/// updates accumulate across sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullFtWeights {
    pub w: Matrix,
}

impl FullFtWeights {
    pub fn new(w: Matrix) -> Self {
        FullFtWeights { w }
    }
}
