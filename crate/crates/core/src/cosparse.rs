//! Neighbor-difference analysis operator and the augmented linear system.
//!
//! With `d = D h` the stacked model reads
//!
//! ```text
//! [ r ]   [ W   0 ] [ h ]
//! [ 0 ] = [ D  -I ] [ d ] + noise
//! ```
//!
//! and is exposed as a [`LinearOperator`] without ever materializing the
//! `(Q + |E|) x (MN + |E|)` matrix.

use std::io::Write;

use crate::error::{Error, Result};
use crate::operator::{check_len, LinearOperator};
use crate::selection::{Measurement, SelectionNetwork};

/// Horizontal then vertical neighbor differences of a row-major `rows x cols` grid.
///
/// Edge `k` is the pair `(i, j)` and row `k` of `D` computes `h[i] - h[j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DifferenceOperator {
    rows: usize,
    cols: usize,
    horizontal: usize,
    edges: Vec<(usize, usize)>,
}

pub fn build_difference_operator(rows: usize, cols: usize) -> Result<DifferenceOperator> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidParameter(format!("grid must be non-empty, got {rows}x{cols}")));
    }
    let mut edges = Vec::with_capacity(rows * (cols - 1) + cols * (rows - 1));
    for m in 0..rows {
        for n in 0..cols - 1 {
            edges.push((m * cols + n, m * cols + n + 1));
        }
    }
    let horizontal = edges.len();
    for m in 0..rows - 1 {
        for n in 0..cols {
            edges.push((m * cols + n, (m + 1) * cols + n));
        }
    }
    Ok(DifferenceOperator { rows, cols, horizontal, edges })
}

impl DifferenceOperator {
    pub fn grid(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Rows of `D_h`; the remaining rows belong to `D_v`.
    pub fn horizontal_count(&self) -> usize {
        self.horizontal
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Coordinate triplets `row col value`, 0-based, preceded by a `%` header line
    /// holding `rows cols nnz`.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "% {} {} {}", self.edges.len(), self.rows * self.cols, 2 * self.edges.len())?;
        for (k, &(i, j)) in self.edges.iter().enumerate() {
            writeln!(out, "{k} {i} 1")?;
            writeln!(out, "{k} {j} -1")?;
        }
        Ok(())
    }
}

impl LinearOperator for DifferenceOperator {
    fn nrows(&self) -> usize {
        self.edges.len()
    }

    fn ncols(&self) -> usize {
        self.rows * self.cols
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, &(i, j)) in out.iter_mut().zip(&self.edges) {
            *o = x[i] - x[j];
        }
    }

    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&v, &(i, j)) in y.iter().zip(&self.edges) {
            out[i] += v;
            out[j] -= v;
        }
    }

    fn apply_squared(&self, x: &[f64], out: &mut [f64]) {
        for (o, &(i, j)) in out.iter_mut().zip(&self.edges) {
            *o = x[i] + x[j];
        }
    }

    fn apply_squared_transpose(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&v, &(i, j)) in y.iter().zip(&self.edges) {
            out[i] += v;
            out[j] += v;
        }
    }
}

/// Sizes of the augmented system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentedDims {
    pub q: usize,
    pub mn: usize,
    pub edges: usize,
}

impl AugmentedDims {
    pub fn rows(&self) -> usize {
        self.q + self.edges
    }

    pub fn cols(&self) -> usize {
        self.mn + self.edges
    }
}

/// `[[W, 0], [D, -I]]` with observation `[r; 0]`.
#[derive(Debug, Clone)]
pub struct AugmentedSystem<Op = SelectionNetwork> {
    w: Op,
    diff: DifferenceOperator,
    observation: Vec<f64>,
    dims: AugmentedDims,
}

pub fn augment(net: &SelectionNetwork, diff: &DifferenceOperator, meas: &Measurement) -> Result<AugmentedSystem> {
    AugmentedSystem::new(net.clone(), diff.clone(), &meas.r)
}

impl<Op: LinearOperator> AugmentedSystem<Op> {
    pub fn new(w: Op, diff: DifferenceOperator, r: &[f64]) -> Result<Self> {
        if w.ncols() != diff.ncols() {
            return Err(Error::Dimension(format!(
                "W has {} columns but D acts on {} entries",
                w.ncols(),
                diff.ncols()
            )));
        }
        check_len("measurement", r.len(), w.nrows())?;
        let dims = AugmentedDims { q: w.nrows(), mn: w.ncols(), edges: diff.edge_count() };
        let mut observation = r.to_vec();
        observation.resize(dims.rows(), 0.0);
        Ok(AugmentedSystem { w, diff, observation, dims })
    }

    pub fn dims(&self) -> AugmentedDims {
        self.dims
    }

    /// `[r; 0]`
    pub fn observation(&self) -> &[f64] {
        &self.observation
    }

    pub fn measurement(&self) -> &[f64] {
        &self.observation[..self.dims.q]
    }

    pub fn selection(&self) -> &Op {
        &self.w
    }

    pub fn difference(&self) -> &DifferenceOperator {
        &self.diff
    }

    /// `[h; D h]`, the noiseless augmented unknown for channel `h`.
    pub fn lift(&self, h: &[f64]) -> Vec<f64> {
        let mut x = h.to_vec();
        x.resize(self.dims.cols(), 0.0);
        let (head, tail) = x.split_at_mut(self.dims.mn);
        self.diff.apply(head, tail);
        x
    }
}

impl<Op: LinearOperator> LinearOperator for AugmentedSystem<Op> {
    fn nrows(&self) -> usize {
        self.dims.rows()
    }

    fn ncols(&self) -> usize {
        self.dims.cols()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let (xh, xd) = x.split_at(self.dims.mn);
        let (top, bottom) = out.split_at_mut(self.dims.q);
        self.w.apply(xh, top);
        self.diff.apply(xh, bottom);
        for (b, d) in bottom.iter_mut().zip(xd) {
            *b -= d;
        }
    }

    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        let (top, bottom) = y.split_at(self.dims.q);
        let (oh, od) = out.split_at_mut(self.dims.mn);
        self.w.apply_transpose(top, oh);
        let mut tmp = vec![0.0; self.dims.mn];
        self.diff.apply_transpose(bottom, &mut tmp);
        for (o, t) in oh.iter_mut().zip(&tmp) {
            *o += t;
        }
        for (o, b) in od.iter_mut().zip(bottom) {
            *o = -b;
        }
    }

    fn apply_squared(&self, x: &[f64], out: &mut [f64]) {
        let (xh, xd) = x.split_at(self.dims.mn);
        let (top, bottom) = out.split_at_mut(self.dims.q);
        self.w.apply_squared(xh, top);
        self.diff.apply_squared(xh, bottom);
        for (b, d) in bottom.iter_mut().zip(xd) {
            *b += d;
        }
    }

    fn apply_squared_transpose(&self, y: &[f64], out: &mut [f64]) {
        let (top, bottom) = y.split_at(self.dims.q);
        let (oh, od) = out.split_at_mut(self.dims.mn);
        self.w.apply_squared_transpose(top, oh);
        let mut tmp = vec![0.0; self.dims.mn];
        self.diff.apply_squared_transpose(bottom, &mut tmp);
        for (o, t) in oh.iter_mut().zip(&tmp) {
            *o += t;
        }
        od.copy_from_slice(bottom);
    }
}
