use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Header of `results.csv`.
pub const CSV_HEADER: &str = "algorithm,size_m,size_n,q,snr_db,p,trials,nmse_mean,nmse_std,iters_mean,walltime_ms";

/// Aggregate over the successful trials of one `(algorithm, size, SNR, p)` point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub algorithm: String,
    pub size_m: usize,
    pub size_n: usize,
    pub q: usize,
    pub snr_db: f64,
    pub p: f64,
    pub trials: usize,
    pub nmse_mean: f64,
    pub nmse_std: f64,
    pub iters_mean: f64,
    /// Mean wall time per trial in milliseconds.
    pub walltime_ms: Option<f64>,
}

impl ResultRow {
    fn same_point(&self, other: &ResultRow) -> bool {
        self.algorithm == other.algorithm
            && self.size_m == other.size_m
            && self.size_n == other.size_n
            && self.snr_db == other.snr_db
            && self.p == other.p
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    pub fn push(&mut self, row: ResultRow) -> Result<()> {
        if !(row.nmse_mean >= 0.0 && row.nmse_std >= 0.0) {
            return Err(Error::Format(format!("NMSE of {} must be non-negative", row.algorithm)));
        }
        if self.rows.iter().any(|r| r.same_point(&row)) {
            return Err(Error::Format(format!(
                "duplicate row for {} at {}x{}, {} dB, p = {}",
                row.algorithm, row.size_m, row.size_n, row.snr_db, row.p
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn get(&self, algorithm: &str, size: [usize; 2], snr_db: f64, p: f64) -> Option<&ResultRow> {
        self.rows.iter().find(|r| {
            r.algorithm == algorithm && [r.size_m, r.size_n] == size && r.snr_db == snr_db && r.p == p
        })
    }

    /// Distinct `(algorithm, size, p)` curves in first-seen order, each sorted by SNR.
    pub fn series(&self) -> Vec<(String, [usize; 2], f64, Vec<&ResultRow>)> {
        let mut out: Vec<(String, [usize; 2], f64, Vec<&ResultRow>)> = Vec::new();
        for row in &self.rows {
            let size = [row.size_m, row.size_n];
            match out.iter_mut().find(|(a, s, p, _)| *a == row.algorithm && *s == size && *p == row.p) {
                Some(entry) => entry.3.push(row),
                None => out.push((row.algorithm.clone(), size, row.p, vec![row])),
            }
        }
        for entry in &mut out {
            entry.3.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
        }
        out
    }

    /// Writes the CSV. Wall time is left empty unless `timing` is set, so that
    /// reruns produce identical bytes.
    pub fn write_csv<W: Write>(&self, out: W, timing: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            let mut row = row.clone();
            if !timing {
                row.walltime_ms = None;
            }
            w.serialize(row).map_err(csv_error)?;
        }
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER.split(',')).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_owned).collect();
        if header.join(",") != CSV_HEADER {
            return Err(Error::Format(format!("unexpected header {:?}", header.join(","))));
        }
        let mut table = ResultTable::new();
        for row in rdr.deserialize() {
            table.push(row.map_err(csv_error)?)?;
        }
        Ok(table)
    }

    pub fn to_csv_string(&self, timing: bool) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, timing)?;
        String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Mean and sample standard deviation, summed in the given order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}
