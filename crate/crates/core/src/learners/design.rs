use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Expanded design: intercept, linear terms, squares, pairwise products.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub z: DMatrix<f64>,
    pub column_names: Vec<String>,
}

impl DesignMatrix {
    pub fn ncols(&self) -> usize {
        self.z.ncols()
    }
}

/// Column count of the full quadratic design on `d` raw covariates.
pub fn expanded_width(d: usize) -> usize {
    1 + 2 * d + d * (d.saturating_sub(1)) / 2
}

/// Builds intercept, `x_j`, `x_j^2`, then `x_j * x_k` for `j < k` in
/// lexicographic order.
pub fn design_expand(x: &DMatrix<f64>) -> Result<DesignMatrix> {
    let (n, d) = x.shape();
    if d == 0 {
        return Err(Error::invalid(
            "design expansion needs at least one covariate",
        ));
    }
    let p = expanded_width(d);
    if n < p {
        return Err(Error::UnderdeterminedDesign { rows: n, cols: p });
    }
    let mut names = Vec::with_capacity(p);
    names.push("(intercept)".to_string());
    names.extend((1..=d).map(|j| format!("x{j}")));
    names.extend((1..=d).map(|j| format!("x{j}^2")));
    for j in 1..=d {
        for k in j + 1..=d {
            names.push(format!("x{j}:x{k}"));
        }
    }
    Ok(DesignMatrix {
        z: expand_columns(x),
        column_names: names,
    })
}

pub(crate) fn expand_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mut z = DMatrix::zeros(n, expanded_width(d));
    for i in 0..n {
        z[(i, 0)] = 1.0;
        let mut c = 1;
        for j in 0..d {
            z[(i, c)] = x[(i, j)];
            c += 1;
        }
        for j in 0..d {
            z[(i, c)] = x[(i, j)] * x[(i, j)];
            c += 1;
        }
        for j in 0..d {
            for k in j + 1..d {
                z[(i, c)] = x[(i, j)] * x[(i, k)];
                c += 1;
            }
        }
    }
    z
}

pub(crate) fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] })
}
