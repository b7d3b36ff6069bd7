use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldRole {
    LogPermeability,
    Permeability,
    Pressure,
}

/// Scalar grid function stored in the grid's cell ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub role: FieldRole,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(role: FieldRole, values: Vec<f64>) -> Self {
        Self { role, values }
    }

    pub fn zeros(role: FieldRole, len: usize) -> Self {
        Self::new(role, vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Pointwise `exp`, turning a log-permeability into a permeability.
    pub fn exp(&self) -> Field {
        Field::new(
            FieldRole::Permeability,
            self.values.iter().map(|v| v.exp()).collect(),
        )
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Stochastic coordinates θ laid out block by block, one block of `n_c`
/// coefficients per subdomain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    values: Vec<f64>,
    n_c: usize,
}

impl ThetaVector {
    pub fn new(values: Vec<f64>, n_c: usize) -> Result<Self> {
        if n_c == 0 || !values.len().is_multiple_of(n_c) {
            return Err(Error::Contract(format!(
                "theta length {} is not a multiple of the block size {n_c}",
                values.len()
            )));
        }
        Ok(Self { values, n_c })
    }

    pub fn zeros(blocks: usize, n_c: usize) -> Self {
        Self {
            values: vec![0.0; blocks * n_c],
            n_c,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn blocks(&self) -> usize {
        self.values.len() / self.n_c
    }

    pub fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        i * self.n_c..(i + 1) * self.n_c
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.values[self.block_range(i)]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.block_range(i);
        &mut self.values[r]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Blocks whose entries differ (bitwise) from `other`.
    pub fn differing_blocks(&self, other: &ThetaVector) -> Vec<usize> {
        (0..self.blocks())
            .filter(|&b| {
                self.block(b)
                    .iter()
                    .zip(other.block(b))
                    .any(|(x, y)| x.to_bits() != y.to_bits())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_layout() {
        let t = ThetaVector::new((0..6).map(f64::from).collect(), 2).unwrap();
        assert_eq!(t.blocks(), 3);
        assert_eq!(t.block(1), &[2.0, 3.0]);
        assert!(ThetaVector::new(vec![0.0; 5], 2).is_err());
        let mut u = t.clone();
        u.block_mut(2)[0] = 9.0;
        assert_eq!(t.differing_blocks(&u), vec![2]);
    }
}
