//! Phase-shifter selection network and compressed measurements.
//!
//! `W` keeps `Q` rows of a row- and column-permuted Hadamard matrix, scaled
//! by `1/sqrt(MN)` so unreduced rows are orthonormal. Products run through a
//! fast Walsh-Hadamard transform; switched-off phase shifters are stored as a
//! sparse correction.

use std::io::Write;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::hadamard::{fwht, hadamard_sign};
use crate::operator::LinearOperator;
use crate::rng::{derive_seed, stream, tag};

#[derive(Debug, Clone, PartialEq)]
struct Disconnected {
    ratio: f64,
    seed: u64,
    /// `(row, col, unscaled sign)` of every zeroed entry, sorted by row then column.
    entries: Vec<(u32, u32, f64)>,
    per_row: Vec<Vec<u32>>,
}

/// The `Q x MN` combining matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionNetwork {
    q: usize,
    mn: usize,
    order: usize,
    row_ids: Vec<usize>,
    col_ids: Vec<usize>,
    scale: f64,
    seed: u64,
    disconnected: Option<Disconnected>,
}

/// Builds `W` from `Q` rows of a permuted Hadamard matrix of order `next_power_of_two(MN)`.
///
/// When `MN` is not a power of two the permuted matrix is truncated to its first `MN` columns.
pub fn build_hadamard_selection(q: usize, mn: usize, seed: u64) -> Result<SelectionNetwork> {
    check_dims(q, mn)?;
    let order = mn.next_power_of_two();
    let mut rng = stream(seed);
    let mut rows: Vec<usize> = (0..order).collect();
    rows.shuffle(&mut rng);
    let mut cols: Vec<usize> = (0..order).collect();
    cols.shuffle(&mut rng);
    rows.truncate(q);
    cols.truncate(mn);
    Ok(SelectionNetwork {
        q,
        mn,
        order,
        row_ids: rows,
        col_ids: cols,
        scale: 1.0 / (mn as f64).sqrt(),
        seed,
        disconnected: None,
    })
}

fn check_dims(q: usize, mn: usize) -> Result<()> {
    if mn == 0 || q == 0 || q > mn {
        return Err(Error::Dimension(format!("need 1 <= Q <= MN, got Q={q}, MN={mn}")));
    }
    if mn > (1usize << 30) {
        return Err(Error::Dimension(format!("no Hadamard matrix constructible for MN={mn}")));
    }
    Ok(())
}

impl SelectionNetwork {
    /// First `Q` rows of the natural-order Hadamard matrix, no permutation.
    pub fn unpermuted(q: usize, mn: usize) -> Result<Self> {
        check_dims(q, mn)?;
        let order = mn.next_power_of_two();
        Ok(SelectionNetwork {
            q,
            mn,
            order,
            row_ids: (0..q).collect(),
            col_ids: (0..mn).collect(),
            scale: 1.0 / (mn as f64).sqrt(),
            seed: 0,
            disconnected: None,
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn mn(&self) -> usize {
        self.mn
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn hadamard_rows(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn hadamard_cols(&self) -> &[usize] {
        &self.col_ids
    }

    /// Ratio of switched-off phase shifters (0 for a fully connected network).
    pub fn disconnected_ratio(&self) -> f64 {
        self.disconnected.as_ref().map_or(0.0, |d| d.ratio)
    }

    /// Seed of the most recent disconnection pattern.
    pub fn disconnection_seed(&self) -> Option<u64> {
        self.disconnected.as_ref().map(|d| d.seed)
    }

    pub fn disconnected_count(&self) -> usize {
        self.disconnected.as_ref().map_or(0, |d| d.entries.len())
    }

    /// `true` where the phase shifter at `(row, col)` is connected.
    pub fn is_connected(&self, row: usize, col: usize) -> bool {
        match &self.disconnected {
            None => true,
            Some(d) => d.per_row[row].binary_search(&(col as u32)).is_err(),
        }
    }

    /// Unscaled entry in `{0, +1, -1}`.
    pub fn sign(&self, row: usize, col: usize) -> f64 {
        if self.is_connected(row, col) {
            hadamard_sign(self.row_ids[row], self.col_ids[col])
        } else {
            0.0
        }
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.scale * self.sign(row, col)
    }

    /// Column `col` of `W` as a dense vector.
    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.q).map(|r| self.entry(r, col)).collect()
    }

    /// Connected entries in row `row`.
    pub fn row_degree(&self, row: usize) -> usize {
        self.mn - self.disconnected.as_ref().map_or(0, |d| d.per_row[row].len())
    }

    pub fn descriptor(&self) -> NetworkDescriptor {
        NetworkDescriptor { seed: self.seed, q: self.q, mn: self.mn, p: self.disconnected_ratio() }
    }

    /// Writes the dense scaled matrix, one row per line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = String::new();
        for r in 0..self.q {
            line.clear();
            for c in 0..self.mn {
                if c > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{:e}", self.entry(r, c)));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    fn scratch(&self) -> Vec<f64> {
        vec![0.0; self.order]
    }
}

/// Switches off `floor(p * Q * MN)` uniformly chosen phase shifters.
///
/// Positions are drawn from `seed` alone, so repeating the call with the same
/// seed and ratio zeroes the same set.
pub fn reduce_phase_shifters(net: &SelectionNetwork, p: f64, seed: u64) -> Result<SelectionNetwork> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("phase-shifter ratio must be in [0, 1), got {p}")));
    }
    let total = net.q * net.mn;
    let count = (p * total as f64).floor() as usize;
    let mut out = net.clone();
    if count == 0 {
        return Ok(out);
    }
    if let Some(prev) = &net.disconnected {
        if prev.seed == seed && prev.ratio == p {
            return Ok(out);
        }
    }
    let mut rng = stream(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, total, count).into_vec();
    if let Some(prev) = &net.disconnected {
        picked.extend(prev.entries.iter().map(|&(r, c, _)| r as usize * net.mn + c as usize));
    }
    picked.sort_unstable();
    picked.dedup();

    let mut per_row = vec![Vec::new(); net.q];
    let mut entries = Vec::with_capacity(picked.len());
    for lin in picked {
        let (r, c) = (lin / net.mn, lin % net.mn);
        per_row[r].push(c as u32);
        entries.push((r as u32, c as u32, hadamard_sign(net.row_ids[r], net.col_ids[c])));
    }
    let ratio = match &net.disconnected {
        None => p,
        Some(_) => entries.len() as f64 / total as f64,
    };
    out.disconnected = Some(Disconnected { ratio, seed, entries, per_row });
    Ok(out)
}

impl LinearOperator for SelectionNetwork {
    fn nrows(&self) -> usize {
        self.q
    }

    fn ncols(&self) -> usize {
        self.mn
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let mut buf = self.scratch();
        for (&c, &v) in self.col_ids.iter().zip(x) {
            buf[c] = v;
        }
        fwht(&mut buf);
        for (o, &r) in out.iter_mut().zip(&self.row_ids) {
            *o = self.scale * buf[r];
        }
        if let Some(d) = &self.disconnected {
            for &(r, c, s) in &d.entries {
                out[r as usize] -= self.scale * s * x[c as usize];
            }
        }
    }

    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        let mut buf = self.scratch();
        for (&r, &v) in self.row_ids.iter().zip(y) {
            buf[r] = v;
        }
        fwht(&mut buf);
        for (o, &c) in out.iter_mut().zip(&self.col_ids) {
            *o = self.scale * buf[c];
        }
        if let Some(d) = &self.disconnected {
            for &(r, c, s) in &d.entries {
                out[c as usize] -= self.scale * s * y[r as usize];
            }
        }
    }

    fn apply_squared(&self, x: &[f64], out: &mut [f64]) {
        let s2 = self.scale * self.scale;
        let total: f64 = x.iter().sum();
        match &self.disconnected {
            None => out.iter_mut().for_each(|o| *o = s2 * total),
            Some(d) => {
                for (o, cols) in out.iter_mut().zip(&d.per_row) {
                    let off: f64 = cols.iter().map(|&c| x[c as usize]).sum();
                    *o = s2 * (total - off);
                }
            }
        }
    }

    fn apply_squared_transpose(&self, y: &[f64], out: &mut [f64]) {
        let s2 = self.scale * self.scale;
        let total: f64 = y.iter().sum();
        out.iter_mut().for_each(|o| *o = s2 * total);
        if let Some(d) = &self.disconnected {
            for &(r, c, _) in &d.entries {
                out[c as usize] -= s2 * y[r as usize];
            }
        }
    }
}

/// Compact description that regenerates a network bit-exactly.
///
/// The disconnection pattern uses a seed derived from `seed` (see [`NetworkDescriptor::mask_seed`]).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetworkDescriptor {
    pub seed: u64,
    pub q: usize,
    pub mn: usize,
    pub p: f64,
}

impl NetworkDescriptor {
    pub fn mask_seed(&self) -> u64 {
        derive_seed(self.seed, &[tag::MASK])
    }

    pub fn build(&self) -> Result<SelectionNetwork> {
        let net = build_hadamard_selection(self.q, self.mn, self.seed)?;
        if self.p > 0.0 {
            reduce_phase_shifters(&net, self.p, self.mask_seed())
        } else {
            Ok(net)
        }
    }

    /// `seed=<u64> q=<usize> mn=<usize> p=<f64>` on one line.
    pub fn to_line(&self) -> String {
        format!("seed={} q={} mn={} p={}", self.seed, self.q, self.mn, self.p)
    }

    pub fn parse(line: &str) -> Result<Self> {
        let mut seed = None;
        let mut q = None;
        let mut mn = None;
        let mut p = None;
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("expected key=value, got `{tok}`")))?;
            let bad = |e: &dyn std::fmt::Display| Error::Format(format!("{k}: {e}"));
            match k {
                "seed" => seed = Some(v.parse::<u64>().map_err(|e| bad(&e))?),
                "q" => q = Some(v.parse::<usize>().map_err(|e| bad(&e))?),
                "mn" => mn = Some(v.parse::<usize>().map_err(|e| bad(&e))?),
                "p" => p = Some(v.parse::<f64>().map_err(|e| bad(&e))?),
                _ => return Err(Error::Format(format!("unknown descriptor key `{k}`"))),
            }
        }
        let missing = |k: &str| Error::Format(format!("descriptor missing `{k}`"));
        Ok(NetworkDescriptor {
            seed: seed.ok_or_else(|| missing("seed"))?,
            q: q.ok_or_else(|| missing("q"))?,
            mn: mn.ok_or_else(|| missing("mn"))?,
            p: p.ok_or_else(|| missing("p"))?,
        })
    }
}

/// Noisy compressed observation `r = W h + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub r: Vec<f64>,
    /// Noise variance per measurement.
    pub noise_var: f64,
    pub snr_db: f64,
}

/// `r = W h + n` with `n ~ N(0, Delta I_Q)` and `Delta = ||W h||^2 / (Q * 10^(snr/10))`.
///
/// `snr_db = +inf` yields a noiseless measurement.
pub fn measure<R: Rng + ?Sized>(net: &SelectionNetwork, h: &[f64], snr_db: f64, rng: &mut R) -> Result<Measurement> {
    if h.len() != net.mn {
        return Err(Error::Dimension(format!("channel length {} but network has {} columns", h.len(), net.mn)));
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidParameter("SNR is NaN".into()));
    }
    let mut clean = vec![0.0; net.q];
    net.apply(h, &mut clean);
    let power = clean.iter().map(|x| x * x).sum::<f64>() / net.q as f64;
    let noise_var = if snr_db == f64::INFINITY {
        0.0
    } else {
        if power == 0.0 {
            return Err(Error::ZeroSignal);
        }
        power / 10f64.powf(snr_db / 10.0)
    };
    add_noise(&mut clean, noise_var, rng)?;
    Ok(Measurement { r: clean, noise_var, snr_db })
}

/// `r = W h + n` for a given noise variance.
pub fn measure_with_variance<R: Rng + ?Sized>(
    net: &SelectionNetwork,
    h: &[f64],
    noise_var: f64,
    rng: &mut R,
) -> Result<Measurement> {
    if h.len() != net.mn {
        return Err(Error::Dimension(format!("channel length {} but network has {} columns", h.len(), net.mn)));
    }
    let mut r = vec![0.0; net.q];
    net.apply(h, &mut r);
    let power = r.iter().map(|x| x * x).sum::<f64>() / net.q as f64;
    let snr_db = 10.0 * (power / noise_var).log10();
    add_noise(&mut r, noise_var, rng)?;
    Ok(Measurement { r, noise_var, snr_db })
}

fn add_noise<R: Rng + ?Sized>(r: &mut [f64], noise_var: f64, rng: &mut R) -> Result<()> {
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise variance {noise_var} is not a finite non-negative value")));
    }
    if noise_var > 0.0 {
        let normal = Normal::new(0.0, noise_var.sqrt()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for x in r.iter_mut() {
            *x += normal.sample(rng);
        }
    }
    Ok(())
}
