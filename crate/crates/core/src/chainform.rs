//! Canonical chain-of-integrators (Brunovský) form.
//!
//! For an order-`n` plant the state `x = [x1, ..., xn]` obeys
//! `x' = A x + b (f + g u + d*)`, `y = c^T x`. The extended system stacks the
//! total disturbance on top, `z = [x; d]`, and is driven through `b_ext`
//! (control channel) and `b_dist` (disturbance derivative channel).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSystem {
    n: usize,
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    b_ext: DVector<f64>,
    b_dist: DVector<f64>,
}

impl ChainSystem {
    pub fn new(n: usize) -> Result<Self> {
        make_chain(n)
    }

    /// Plant order.
    pub fn order(&self) -> usize {
        self.n
    }

    /// Dimension of the extended state, `n + 1`.
    pub fn extended_dim(&self) -> usize {
        self.n + 1
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    /// Control-injection vector of the extended system, one at index `n - 1`.
    pub fn b_ext(&self) -> &DVector<f64> {
        &self.b_ext
    }

    /// Disturbance-injection vector of the extended system, one at index `n`.
    pub fn b_dist(&self) -> &DVector<f64> {
        &self.b_dist
    }

    /// The `(n+1)`-order shift matrix `A_{n+1}` acting on the extended state.
    pub fn extended_a(&self) -> DMatrix<f64> {
        shift_matrix(self.n + 1)
    }

    /// Output vector `c_{n+1}` of the extended system.
    pub fn extended_c(&self) -> DVector<f64> {
        unit_vector(self.n + 1, 0)
    }
}

/// Builds the chain-form matrices for a plant of order `n >= 1`.
pub fn make_chain(n: usize) -> Result<ChainSystem> {
    if n == 0 {
        return Err(Error::config("chain order n must be at least 1"));
    }
    Ok(ChainSystem {
        n,
        a: shift_matrix(n),
        b: unit_vector(n, n - 1),
        c: unit_vector(n, 0),
        b_ext: unit_vector(n + 1, n - 1),
        b_dist: unit_vector(n + 1, n),
    })
}

fn shift_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if j == i + 1 { 1.0 } else { 0.0 })
}

fn unit_vector(len: usize, at: usize) -> DVector<f64> {
    let mut v = DVector::zeros(len);
    v[at] = 1.0;
    v
}

/// Plant state stacked with the total disturbance, `z = [x; d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedState(Vec<f64>);

impl ExtendedState {
    pub fn new(x: &[f64], d: f64) -> Self {
        let mut z = x.to_vec();
        z.push(d);
        ExtendedState(z)
    }

    pub fn plant_state(&self) -> &[f64] {
        &self.0[..self.0.len() - 1]
    }

    pub fn total_disturbance(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
