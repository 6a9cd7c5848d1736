//! Model indices, the augmented indicator encoding and parameter layouts.

use serde::{Deserialize, Serialize};

use crate::design::DesignBundle;

/// Per-covariate effect codes: 0 excluded, 1 linear, 2 linear plus spline.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelIndex {
    pub gamma: Vec<u8>,
}

impl ModelIndex {
    pub fn new(gamma: Vec<u8>) -> Self {
        debug_assert!(gamma.iter().all(|&g| g <= 2));
        ModelIndex { gamma }
    }

    pub fn null(p: usize) -> Self {
        ModelIndex { gamma: vec![0; p] }
    }

    pub fn p(&self) -> usize {
        self.gamma.len()
    }

    /// Number of covariates with any effect.
    pub fn p_gamma(&self) -> usize {
        self.gamma.iter().filter(|&&g| g != 0).count()
    }

    /// Number of covariates with a non-linear effect.
    pub fn s_gamma(&self) -> usize {
        self.gamma.iter().filter(|&&g| g == 2).count()
    }

    /// Decodes the `2p` augmented indicators: `γ_j = 2` whenever the
    /// non-linear indicator is set, otherwise the linear one.
    pub fn from_augmented(gt: &[bool]) -> Self {
        let p = gt.len() / 2;
        ModelIndex { gamma: (0..p).map(|j| if gt[j + p] { 2 } else { gt[j] as u8 }).collect() }
    }

    pub fn to_augmented(&self) -> Vec<bool> {
        let p = self.p();
        let mut gt = vec![false; 2 * p];
        for (j, &g) in self.gamma.iter().enumerate() {
            gt[j] = g >= 1;
            gt[j + p] = g == 2;
        }
        gt
    }

    /// Compact label such as `"0120"`.
    pub fn label(&self) -> String {
        self.gamma.iter().map(|g| char::from(b'0' + g)).collect()
    }
}

impl std::fmt::Display for ModelIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// Likelihood backends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    AftNormal,
    AftLaplace,
    Probit,
    Cox,
}

impl Backend {
    /// Whether the parameter vector ends in the log-precision `ρ`.
    pub fn has_scale(self) -> bool {
        matches!(self, Backend::AftNormal | Backend::AftLaplace)
    }

    pub fn has_intercept(self) -> bool {
        !matches!(self, Backend::Cox)
    }
}

/// A prior group of consecutive coefficients.
#[derive(Clone, Debug, PartialEq)]
pub enum Group {
    Intercept { at: usize },
    Linear { covariate: usize, at: usize },
    Spline { covariate: usize, start: usize, len: usize },
}

/// Which design columns a model uses, in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub cols: Vec<usize>,
    pub groups: Vec<Group>,
    pub has_scale: bool,
}

impl Layout {
    pub fn new(gamma: &ModelIndex, design: &DesignBundle, backend: Backend, level: usize) -> Self {
        let mut cols = Vec::new();
        let mut groups = Vec::new();
        if backend.has_intercept() {
            groups.push(Group::Intercept { at: 0 });
            cols.push(0);
        }
        for (j, &g) in gamma.gamma.iter().enumerate() {
            if g >= 1 {
                groups.push(Group::Linear { covariate: j, at: cols.len() });
                cols.push(DesignBundle::linear_id(j));
            }
        }
        for (j, &g) in gamma.gamma.iter().enumerate() {
            if g == 2 {
                let ids = design.nonlinear_ids(j, level);
                groups.push(Group::Spline { covariate: j, start: cols.len(), len: ids.len() });
                cols.extend(ids);
            }
        }
        Layout { cols, groups, has_scale: backend.has_scale() }
    }

    /// Number of regression coefficients (excluding `ρ`).
    pub fn k(&self) -> usize {
        self.cols.len()
    }

    /// Full parameter dimension `d_γ`.
    pub fn dim(&self) -> usize {
        self.cols.len() + self.has_scale as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn augmented_roundtrip() {
        let m = ModelIndex::new(vec![0, 1, 2, 0]);
        let gt = m.to_augmented();
        assert_eq!(gt, vec![false, true, true, false, false, false, true, false]);
        assert_eq!(ModelIndex::from_augmented(&gt), m);
        assert_eq!((m.p_gamma(), m.s_gamma()), (2, 1));
        assert_eq!(m.label(), "0120");
    }
}
