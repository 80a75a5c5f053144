use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Maps raw environment states to network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureMap {
    /// `(x - offset) * scale`, per dimension.
    Affine { offset: Vec<f64>, scale: Vec<f64> },
    /// One-hot over grid cells for states `[row, col]`.
    GridOneHot { width: usize, height: usize },
    /// One-hot over table indices for states `[index]`.
    IndexOneHot { n: usize },
    /// Affine map of the state followed by, for every disc `(x, y, r)`, the clearance
    /// from the position `state[0..2]` to the disc rim and the unit bearing towards it.
    AffineDiscs { offset: Vec<f64>, scale: Vec<f64>, discs: Vec<[f64; 3]> },
}

impl FeatureMap {
    pub fn identity(dim: usize) -> Self {
        FeatureMap::Affine { offset: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    /// Affine map sending the box `[low, high]` onto `[-1, 1]`.
    pub fn from_bounds(low: &[f64], high: &[f64]) -> Self {
        let offset = low.iter().zip(high).map(|(l, h)| 0.5 * (l + h)).collect();
        let scale = low.iter().zip(high).map(|(l, h)| 2.0 / (h - l)).collect();
        FeatureMap::Affine { offset, scale }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Affine { offset, .. } => offset.len(),
            FeatureMap::GridOneHot { width, height } => width * height,
            FeatureMap::IndexOneHot { n } => *n,
            FeatureMap::AffineDiscs { offset, discs, .. } => offset.len() + 3 * discs.len(),
        }
    }

    pub fn apply_into(&self, state: &[f64], out: &mut Vec<f64>) -> Result<()> {
        match self {
            FeatureMap::Affine { offset, scale } => {
                if state.len() != offset.len() {
                    return Err(Error::ShapeMismatch { expected: offset.len(), got: state.len() });
                }
                out.extend(state.iter().zip(offset.iter().zip(scale)).map(|(x, (o, s))| (x - o) * s));
            }
            FeatureMap::GridOneHot { width, height } => {
                if state.len() != 2 {
                    return Err(Error::ShapeMismatch { expected: 2, got: state.len() });
                }
                let (r, c) = (state[0] as usize, state[1] as usize);
                if r >= *height || c >= *width {
                    return Err(Error::InvalidArgument(format!("cell ({r}, {c}) outside the grid")));
                }
                let start = out.len();
                out.resize(start + width * height, 0.0);
                out[start + r * width + c] = 1.0;
            }
            FeatureMap::IndexOneHot { n } => {
                if state.len() != 1 {
                    return Err(Error::ShapeMismatch { expected: 1, got: state.len() });
                }
                let i = state[0] as usize;
                if i >= *n {
                    return Err(Error::InvalidArgument(format!("index {i} outside table of {n}")));
                }
                let start = out.len();
                out.resize(start + n, 0.0);
                out[start + i] = 1.0;
            }
            FeatureMap::AffineDiscs { offset, scale, discs } => {
                if state.len() != offset.len() || state.len() < 2 {
                    return Err(Error::ShapeMismatch { expected: offset.len().max(2), got: state.len() });
                }
                out.extend(state.iter().zip(offset.iter().zip(scale)).map(|(x, (o, s))| (x - o) * s));
                for &[x, y, r] in discs {
                    let (dx, dy) = (x - state[0], y - state[1]);
                    let dist = dx.hypot(dy).max(1e-9);
                    out.extend([dist - r, dx / dist, dy / dist]);
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.dim());
        self.apply_into(state, &mut out)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_map_to_unit_box() {
        let f = FeatureMap::from_bounds(&[0.0, -2.0], &[10.0, 2.0]);
        assert_eq!(f.apply(&[10.0, -2.0]).unwrap(), vec![1.0, -1.0]);
        assert_eq!(f.apply(&[5.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn one_hot_cells() {
        let f = FeatureMap::GridOneHot { width: 3, height: 2 };
        assert_eq!(f.apply(&[1.0, 2.0]).unwrap(), vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(f.apply(&[2.0, 0.0]).is_err());
    }

    #[test]
    fn disc_clearance_and_bearing() {
        let f = FeatureMap::AffineDiscs { offset: vec![0.0; 2], scale: vec![1.0; 2], discs: vec![[3.0, 4.0, 1.0]] };
        assert_eq!(f.dim(), 5);
        let x = f.apply(&[0.0, 0.0]).unwrap();
        assert_eq!(x, vec![0.0, 0.0, 4.0, 0.6, 0.8]);
    }
}
