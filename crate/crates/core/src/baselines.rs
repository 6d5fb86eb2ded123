//! Greedy and least-squares reference estimators.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::operator::{check_len, LinearOperator};
use crate::report::EstimationReport;
use crate::selection::SelectionNetwork;

/// Relative ridge added to a singular normal matrix.
const RIDGE: f64 = 1e-10;

/// Channel positions kept by a support detector.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SupportSet {
    /// Sorted, without duplicates.
    pub indices: Vec<usize>,
    /// `(detected index, side length)` per detected path.
    pub per_path_squares: Vec<(usize, usize)>,
}

impl SupportSet {
    pub fn from_indices(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        SupportSet { indices, per_path_squares: Vec::new() }
    }

    pub fn all(mn: usize) -> Self {
        Self::from_indices((0..mn).collect())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn insert_all(&mut self, extra: impl IntoIterator<Item = usize>) {
        self.indices.extend(extra);
        self.indices.sort_unstable();
        self.indices.dedup();
    }
}

/// Least-squares fit restricted to a support.
#[derive(Debug, Clone, PartialEq)]
pub struct LsSolution {
    /// Full-length estimate, zero off the support.
    pub h: Vec<f64>,
    /// Set when the normal matrix needed a ridge.
    pub regularized: bool,
}

fn submatrix(net: &SelectionNetwork, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(net.q(), cols.len(), |i, k| net.entry(i, cols[k]))
}

fn ridge_solve(g: DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, bool) {
    if let Some(ch) = Cholesky::new(g.clone()) {
        return (ch.solve(b), false);
    }
    let n = g.nrows();
    let scale = (g.trace() / n.max(1) as f64).max(f64::MIN_POSITIVE);
    let mut eps = RIDGE * scale;
    loop {
        let mut reg = g.clone();
        for i in 0..n {
            reg[(i, i)] += eps;
        }
        if let Some(ch) = Cholesky::new(reg) {
            log::debug!("normal matrix singular; ridge {eps:e}");
            return (ch.solve(b), true);
        }
        eps *= 100.0;
    }
}

/// Least squares on `support` (all entries when `None`).
///
/// With more support entries than measurements the minimum-norm solution is returned.
pub fn ls_estimate(r: &[f64], net: &SelectionNetwork, support: Option<&SupportSet>) -> Result<LsSolution> {
    check_len("measurement", r.len(), net.q())?;
    let owned;
    let support = match support {
        Some(s) => s,
        None => {
            owned = SupportSet::all(net.mn());
            &owned
        }
    };
    if let Some(&last) = support.indices.last() {
        if last >= net.mn() {
            return Err(Error::Dimension(format!("support index {last} outside {} channel entries", net.mn())));
        }
    }
    let mut h = vec![0.0; net.mn()];
    if support.is_empty() {
        return Ok(LsSolution { h, regularized: false });
    }
    let wt = submatrix(net, &support.indices);
    let rv = DVector::from_column_slice(r);
    let (x, regularized) = if support.len() <= net.q() {
        ridge_solve(wt.tr_mul(&wt), &wt.tr_mul(&rv))
    } else {
        let (y, reg) = ridge_solve(&wt * wt.transpose(), &rv);
        (wt.tr_mul(&y), reg)
    };
    for (k, &j) in support.indices.iter().enumerate() {
        h[j] = x[k];
    }
    Ok(LsSolution { h, regularized })
}

/// `side x side` block around `(row, col)`, shifted to stay inside the grid.
pub fn square_block(row: usize, col: usize, side: usize, rows: usize, cols: usize) -> Vec<usize> {
    let span = |center: usize, len: usize| {
        let s = side.min(len);
        let start = center.saturating_sub(s / 2).min(len - s);
        start..start + s
    };
    let mut out = Vec::with_capacity(side * side);
    for m in span(row, rows) {
        for n in span(col, cols) {
            out.push(m * cols + n);
        }
    }
    out
}

fn argmax_abs(values: &[f64], skip: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &v) in values.iter().enumerate() {
        if skip(j) {
            continue;
        }
        if best.is_none_or(|(_, b)| v.abs() > b) {
            best = Some((j, v.abs()));
        }
    }
    best.map(|(j, _)| j)
}

fn residual(r: &[f64], net: &SelectionNetwork, h: &[f64]) -> Vec<f64> {
    let mut wh = vec![0.0; net.q()];
    net.apply(h, &mut wh);
    r.iter().zip(&wh).map(|(a, b)| a - b).collect()
}

/// Support detection: for each of the `paths_minus_one + 1` paths, take the
/// strongest matched-filter response, add the square around it to the support
/// and refit by least squares before looking for the next path.
pub fn sd_estimate(
    r: &[f64],
    net: &SelectionNetwork,
    grid: (usize, usize),
    paths_minus_one: usize,
    side: usize,
) -> Result<(EstimationReport, SupportSet)> {
    let (rows, cols) = grid;
    if side == 0 {
        return Err(Error::InvalidParameter("square side must be at least 1".into()));
    }
    if rows * cols != net.mn() {
        return Err(Error::Dimension(format!("grid {rows}x{cols} does not match {} channel entries", net.mn())));
    }
    check_len("measurement", r.len(), net.q())?;
    let mut support = SupportSet::default();
    let mut res = r.to_vec();
    let mut corr = vec![0.0; net.mn()];
    let mut fit = LsSolution { h: vec![0.0; net.mn()], regularized: false };
    let mut regularized = false;
    for _ in 0..=paths_minus_one {
        net.apply_transpose(&res, &mut corr);
        let Some(j) = argmax_abs(&corr, |_| false) else { break };
        support.insert_all(square_block(j / cols, j % cols, side, rows, cols));
        support.per_path_squares.push((j, side));
        fit = ls_estimate(r, net, Some(&support))?;
        regularized |= fit.regularized;
        res = residual(r, net, &fit.h);
    }
    let report = EstimationReport {
        h_est: fit.h,
        iterations: support.per_path_squares.len(),
        converged: true,
        regularized,
        ..Default::default()
    };
    Ok((report, support))
}

/// Orthogonal matching pursuit with `sparsity` atoms.
///
/// The Gram factor grows one column at a time, so each step costs one
/// triangular solve instead of a fresh factorization.
pub fn omp_estimate(r: &[f64], net: &SelectionNetwork, sparsity: usize) -> Result<EstimationReport> {
    check_len("measurement", r.len(), net.q())?;
    if sparsity > net.q() {
        return Err(Error::InvalidParameter(format!("sparsity {sparsity} exceeds {} measurements", net.q())));
    }
    let q = net.q();
    let mut chosen: Vec<usize> = Vec::with_capacity(sparsity);
    let mut in_set = vec![false; net.mn()];
    let mut atoms: Vec<Vec<f64>> = Vec::with_capacity(sparsity);
    // lower-triangular Cholesky factor of the Gram matrix, row-major packed by row
    let mut l: Vec<Vec<f64>> = Vec::with_capacity(sparsity);
    let mut proj: Vec<f64> = Vec::with_capacity(sparsity);
    let mut coef: Vec<f64> = Vec::new();
    let mut res = r.to_vec();
    let mut corr = vec![0.0; net.mn()];
    let mut regularized = false;

    for _ in 0..sparsity {
        net.apply_transpose(&res, &mut corr);
        let Some(j) = argmax_abs(&corr, |k| in_set[k]) else { break };
        let atom = net.column(j);
        let g: Vec<f64> = atoms.iter().map(|a| dot(a, &atom)).collect();
        // forward substitution L w = g
        let mut w = vec![0.0; g.len()];
        for i in 0..g.len() {
            let s: f64 = (0..i).map(|k| l[i][k] * w[k]).sum();
            w[i] = (g[i] - s) / l[i][i];
        }
        let mut diag = dot(&atom, &atom) - dot(&w, &w);
        if !(diag > RIDGE) {
            // atom in the span of the chosen ones
            regularized = true;
            diag = RIDGE.max(diag.abs());
        }
        w.push(diag.sqrt());
        l.push(w);
        proj.push(dot(&atom, r));
        atoms.push(atom);
        in_set[j] = true;
        chosen.push(j);

        coef = cholesky_solve(&l, &proj);
        res = r.to_vec();
        for (a, c) in atoms.iter().zip(&coef) {
            for (x, y) in res.iter_mut().zip(a) {
                *x -= c * y;
            }
        }
        debug_assert_eq!(res.len(), q);
    }
    let mut h = vec![0.0; net.mn()];
    for (&j, &c) in chosen.iter().zip(&coef) {
        h[j] = c;
    }
    Ok(EstimationReport { h_est: h, iterations: chosen.len(), converged: true, regularized, ..Default::default() })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k][i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i][i];
    }
    x
}
