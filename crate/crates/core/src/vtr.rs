//! Visual-token reduction for multi-frame captioning: keep every token of
//! the middle frame and only the classification token of the other frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionMode {
    /// Full middle frame plus `[CLS]` of every other frame: `k + p` tokens.
    MiddleOnly,
    /// Full first, middle and last frames plus `[CLS]` of the rest:
    /// `k + 3p` tokens. Needs `k >= 3`.
    MiddleFirstLast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedTokens {
    /// Row-major `M × d`.
    pub tokens: Vec<f64>,
    pub width: usize,
    /// `(frame, token_index)` each output row was copied from.
    pub provenance: Vec<(usize, usize)>,
}

impl ReducedTokens {
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.tokens[i * self.width..(i + 1) * self.width]
    }
}

/// 0-based middle frame; for even `k` the later of the two central frames.
pub fn middle_frame(k: usize) -> usize {
    k / 2
}

/// Output layout: full frames first in ascending frame order, then the
/// `[CLS]` token (index 0) of each remaining frame in ascending order.
pub fn reduce_tokens(grid: &TokenGrid, mode: ReductionMode) -> Result<ReducedTokens> {
    let k = grid.frames();
    let p = grid.patches();
    let mid = middle_frame(k);
    let full: Vec<usize> = match mode {
        ReductionMode::MiddleOnly => vec![mid],
        ReductionMode::MiddleFirstLast => {
            if k < 3 {
                return Err(Error::invalid(format!(
                    "middle_first_last needs at least 3 frames, got {k}"
                )));
            }
            vec![0, mid, k - 1]
        }
    };

    let mut provenance = Vec::with_capacity(k - full.len() + full.len() * (p + 1));
    for &f in &full {
        provenance.extend((0..=p).map(|t| (f, t)));
    }
    provenance.extend((0..k).filter(|f| !full.contains(f)).map(|f| (f, 0)));

    let d = grid.width();
    let mut tokens = Vec::with_capacity(provenance.len() * d);
    for &(f, t) in &provenance {
        tokens.extend_from_slice(grid.token(f, t));
    }
    Ok(ReducedTokens {
        tokens,
        width: d,
        provenance,
    })
}

/// Number of tokens [`reduce_tokens`] produces, without building them.
pub fn reduced_len(k: usize, p: usize, mode: ReductionMode) -> usize {
    match mode {
        ReductionMode::MiddleOnly => k + p,
        ReductionMode::MiddleFirstLast => k + 3 * p,
    }
}

/// `w * l_gen + (1 - w) * l_match` for `w` in `[0, 1]`.
pub fn combine_losses(w: f64, l_gen: f64, l_match: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid(format!("loss weight {w} outside [0,1]")));
    }
    Ok(w * l_gen + (1.0 - w) * l_match)
}

/// On-disk grid form used for golden tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFile {
    pub k: usize,
    pub p: usize,
    pub d: usize,
    /// `values[frame][token][channel]`
    pub values: Vec<Vec<Vec<f64>>>,
}

impl GridFile {
    pub fn into_grid(self) -> Result<TokenGrid> {
        if self.values.len() != self.k
            || self
                .values
                .iter()
                .any(|f| f.len() != self.p + 1 || f.iter().any(|t| t.len() != self.d))
        {
            return Err(Error::invalid(format!(
                "grid values do not have shape {}x{}x{}",
                self.k,
                self.p + 1,
                self.d
            )));
        }
        let flat = self.values.into_iter().flatten().flatten().collect();
        TokenGrid::new(self.k, self.p, self.d, flat)
    }

    pub fn from_grid(grid: &TokenGrid) -> Self {
        let (k, p, d) = (grid.frames(), grid.patches(), grid.width());
        GridFile {
            k,
            p,
            d,
            values: (0..k)
                .map(|f| (0..=p).map(|t| grid.token(f, t).to_vec()).collect())
                .collect(),
        }
    }
}
