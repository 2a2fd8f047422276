//! Optional commuting coupling between regional infectious pressures.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Commuting connection matrix with coupling intensity.
///
/// Row `i`, column `j` holds the proportion of individuals commuting
/// into region `i` from region `j`; the diagonal is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CommuteNetwork<T: Scalar> {
    pub d: DMatrix<T>,
    pub lambda: T,
}

impl<T: Scalar> CommuteNetwork<T> {
    pub fn new(d: DMatrix<T>, lambda: T) -> Result<Self> {
        if d.nrows() != d.ncols() {
            return Err(Error::DimensionMismatch(
                "connection matrix must be square".into(),
            ));
        }
        for i in 0..d.nrows() {
            if d[(i, i)] != T::zero() {
                return Err(Error::InvalidParameter(
                    "connection matrix diagonal must be zero".into(),
                ));
            }
        }
        if d.iter().any(|&v| v < T::zero()) {
            return Err(Error::InvalidParameter(
                "connection matrix entries must be nonnegative".into(),
            ));
        }
        Ok(Self { d, lambda })
    }

    /// Column sums of the connection matrix.
    pub fn column_sums(&self) -> DVector<T> {
        let mut out = DVector::zeros(self.d.ncols());
        for j in 0..self.d.ncols() {
            let mut s = T::zero();
            for i in 0..self.d.nrows() {
                s += self.d[(i, j)];
            }
            out[j] = s;
        }
        out
    }

    /// Nominal commuting intensity: share of the week spent at work.
    pub fn lambda_nominal() -> T {
        T::c(8.0 / 24.0 * 5.0 / 7.0)
    }
}

/// Coupled infectious-pressure update,
/// `phi_bar + lambda (D phi - d (*) phi)` with `d` the column sums of
/// `D` and `(*)` the elementwise product.
pub fn network_phi_update<T: Scalar>(
    phi: &DVector<T>,
    net: &CommuteNetwork<T>,
    phi_bar: &DVector<T>,
) -> Result<DVector<T>> {
    if phi.len() != net.d.nrows() || phi_bar.len() != net.d.nrows() {
        return Err(Error::DimensionMismatch(
            "phi length must match network size".into(),
        ));
    }
    let d_sums = net.column_sums();
    let mut out = phi_bar.clone();
    let coupled = &net.d * phi;
    for i in 0..out.len() {
        out[i] += net.lambda * (coupled[i] - d_sums[i] * phi[i]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn zero_lambda_is_identity_on_phi_bar() {
        let net = CommuteNetwork::new(dmatrix![0.0, 0.1; 0.2, 0.0], 0.0).unwrap();
        let phi = dvector![3.0, 4.0];
        let phi_bar = dvector![1.0, 2.0];
        assert_eq!(network_phi_update(&phi, &net, &phi_bar).unwrap(), phi_bar);
    }

    #[test]
    fn zero_matrix_is_identity_on_phi_bar() {
        let net = CommuteNetwork::new(DMatrix::zeros(3, 3), 0.8).unwrap();
        let phi = dvector![1.0, 2.0, 3.0];
        let phi_bar = dvector![4.0, 5.0, 6.0];
        assert_eq!(network_phi_update(&phi, &net, &phi_bar).unwrap(), phi_bar);
    }

    #[test]
    fn two_region_hand_evaluation() {
        let net = CommuteNetwork::new(dmatrix![0.0, 0.1; 0.2, 0.0], 1.0).unwrap();
        let phi = dvector![1.0, 1.0];
        let phi_bar = dvector![1.0, 1.0];
        let out = network_phi_update(&phi, &net, &phi_bar).unwrap();
        assert_relative_eq!(out[0], 0.9, epsilon = 1e-14);
        assert_relative_eq!(out[1], 1.1, epsilon = 1e-14);
    }

    #[test]
    fn nonzero_diagonal_rejected() {
        assert!(CommuteNetwork::new(dmatrix![0.5, 0.1; 0.2, 0.0], 1.0).is_err());
    }
}
