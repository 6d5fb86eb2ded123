//! Beamspace channels of a 3D lens antenna array.
//!
//! The antenna grid sits on the focal surface of the lens; each incident
//! plane wave focuses to a point and every antenna sees a sinc-product
//! response around it. A multipath channel superposes `L + 1` such responses
//! with real gains.
//!
//! Vectorization is row-major: `h[m * N + n] = H[(m, n)]`. The difference
//! operator in [`crate::cosparse`] uses the same convention.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};

/// Array geometry and equivalent lens dimensions.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LensConfig {
    /// Antenna rows (y / azimuth axis).
    pub rows: usize,
    /// Antenna columns (z / elevation axis).
    pub cols: usize,
    /// Lens length in wavelengths.
    pub dy: f64,
    /// Lens height in wavelengths.
    pub dz: f64,
    pub wavelength: f64,
}

impl LensConfig {
    pub fn new(rows: usize, cols: usize, dy: f64, dz: f64) -> Result<Self> {
        Self::with_wavelength(rows, cols, dy, dz, 1.0)
    }

    pub fn with_wavelength(rows: usize, cols: usize, dy: f64, dz: f64, wavelength: f64) -> Result<Self> {
        let cfg = LensConfig { rows, cols, dy, dz, wavelength };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Grid sized from the lens, `M = 1 + floor(2 dy)` and `N = 1 + floor(2 dz)`.
    pub fn critically_sampled(dy: f64, dz: f64) -> Result<Self> {
        if !(dy > 0.0 && dz > 0.0) {
            return Err(Error::InvalidParameter("lens dimensions must be positive".into()));
        }
        Self::new(1 + (2.0 * dy).floor() as usize, 1 + (2.0 * dz).floor() as usize, dy, dz)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidParameter(format!(
                "array must be non-empty, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.dy > 0.0 && self.dz > 0.0 && self.dy.is_finite() && self.dz.is_finite()) {
            return Err(Error::InvalidParameter("lens dimensions must be positive and finite".into()));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::InvalidParameter("wavelength must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Aperture constant `A = wavelength^2 / (D_y D_z)` with physical sizes `D = dy * wavelength`.
    pub fn aperture(&self) -> f64 {
        let phys_y = self.dy * self.wavelength;
        let phys_z = self.dz * self.wavelength;
        self.wavelength * self.wavelength / (phys_y * phys_z)
    }

    /// Centered grid coordinate of row `m` (half-integer when `rows` is even).
    pub fn row_coord(&self, m: usize) -> f64 {
        m as f64 - (self.rows as f64 - 1.0) / 2.0
    }

    pub fn col_coord(&self, n: usize) -> f64 {
        n as f64 - (self.cols as f64 - 1.0) / 2.0
    }
}

/// One propagation path: real gain and the two directional sines.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PathParams {
    pub gain: f64,
    pub sin_y: f64,
    pub sin_z: f64,
}

impl PathParams {
    pub fn new(gain: f64, sin_y: f64, sin_z: f64) -> Result<Self> {
        if !(sin_y.abs() <= 1.0 && sin_z.abs() <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "directional sines must lie in [-1, 1], got ({sin_y}, {sin_z})"
            )));
        }
        if !gain.is_finite() {
            return Err(Error::InvalidParameter("path gain must be finite".into()));
        }
        Ok(PathParams { gain, sin_y, sin_z })
    }

    /// Focus point in centered grid coordinates.
    pub fn focus(&self, cfg: &LensConfig) -> (f64, f64) {
        (cfg.dy * self.sin_y, cfg.dz * self.sin_z)
    }
}

/// Normalized sinc, `sin(pi x) / (pi x)`.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Response of antenna `(row, col)` to a path.
pub fn array_response(row: usize, col: usize, path: &PathParams, cfg: &LensConfig) -> f64 {
    let (fy, fz) = path.focus(cfg);
    cfg.aperture().sqrt() * sinc(cfg.row_coord(row) - fy) * sinc(cfg.col_coord(col) - fz)
}

/// Full `rows x cols` response of one path.
pub fn response_matrix(path: &PathParams, cfg: &LensConfig) -> DMatrix<f64> {
    let (fy, fz) = path.focus(cfg);
    let amp = cfg.aperture().sqrt();
    let sy: Vec<f64> = (0..cfg.rows).map(|m| sinc(cfg.row_coord(m) - fy)).collect();
    let sz: Vec<f64> = (0..cfg.cols).map(|n| sinc(cfg.col_coord(n) - fz)).collect();
    DMatrix::from_fn(cfg.rows, cfg.cols, |m, n| amp * sy[m] * sz[n])
}

/// A multipath realization with its beamspace matrix and row-major vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipathChannel {
    pub paths: Vec<PathParams>,
    pub matrix: DMatrix<f64>,
    pub vector: Vec<f64>,
}

impl MultipathChannel {
    /// Superposes `sqrt(MN / (L + 1)) * sum_l gain_l * A_l`.
    pub fn from_paths(paths: Vec<PathParams>, cfg: &LensConfig) -> Self {
        let mut matrix = DMatrix::zeros(cfg.rows, cfg.cols);
        if !paths.is_empty() {
            let norm = (cfg.len() as f64 / paths.len() as f64).sqrt();
            for p in &paths {
                matrix += response_matrix(p, cfg) * (norm * p.gain);
            }
        }
        let vector = vectorize(&matrix);
        MultipathChannel { paths, matrix, vector }
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn energy(&self) -> f64 {
        self.vector.iter().map(|x| x * x).sum()
    }
}

/// Draws `L + 1` paths with gains from `gain_dist` and both directional sines from `angle_dist`.
pub fn sample_channel<R, G, A>(
    rng: &mut R,
    num_paths_minus_one: usize,
    cfg: &LensConfig,
    gain_dist: &G,
    angle_dist: &A,
) -> MultipathChannel
where
    R: Rng + ?Sized,
    G: Distribution<f64>,
    A: Distribution<f64>,
{
    let paths = (0..=num_paths_minus_one)
        .map(|_| {
            let gain = gain_dist.sample(rng);
            let sin_y = angle_dist.sample(rng).clamp(-1.0, 1.0);
            let sin_z = angle_dist.sample(rng).clamp(-1.0, 1.0);
            PathParams { gain, sin_y, sin_z }
        })
        .collect();
    MultipathChannel::from_paths(paths, cfg)
}

/// Standard normal gains, directional sines uniform on `[-1, 1]`.
pub fn sample_default_channel<R: Rng + ?Sized>(rng: &mut R, l: usize, cfg: &LensConfig) -> MultipathChannel {
    let angles = Uniform::new_inclusive(-1.0, 1.0).expect("valid bounds");
    sample_channel(rng, l, cfg, &StandardNormalF64, &angles)
}

/// `StandardNormal` pinned to `f64`.
#[derive(Debug, Clone, Copy)]
pub struct StandardNormalF64;

impl Distribution<f64> for StandardNormalF64 {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        StandardNormal.sample(rng)
    }
}

/// Row-major flattening.
pub fn vectorize(h: &DMatrix<f64>) -> Vec<f64> {
    let (rows, cols) = h.shape();
    let mut out = Vec::with_capacity(rows * cols);
    for m in 0..rows {
        for n in 0..cols {
            out.push(h[(m, n)]);
        }
    }
    out
}

pub fn devectorize(h: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if h.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "vector of length {} cannot fill a {rows}x{cols} matrix",
            h.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, h))
}

/// Writes `matrix` as CSV, one matrix row per line.
pub fn write_matrix_csv<W: Write>(mut out: W, matrix: &DMatrix<f64>) -> Result<()> {
    for m in 0..matrix.nrows() {
        let line: Vec<String> = (0..matrix.ncols()).map(|n| format!("{:e}", matrix[(m, n)])).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_matrix_csv<R: Read>(mut input: R) -> Result<DMatrix<f64>> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format(format!("line {} has {} columns, expected {}", i + 1, row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

const CHANNEL_MAGIC: &[u8; 4] = b"LBCH";
const CHANNEL_VERSION: u32 = 1;

/// Binary channel container, all fields little-endian:
///
/// | field        | type      |
/// |--------------|-----------|
/// | magic `LBCH` | 4 bytes   |
/// | version (=1) | u32       |
/// | M            | u32       |
/// | N            | u32       |
/// | L            | u32       |
/// | seed         | u64       |
/// | dy, dz, wavelength | 3 x f64 |
/// | paths        | (L+1) x (gain, sin_y, sin_z) f64 |
/// | H            | M*N f64, row-major |
///
/// A channel with no paths stores `L = u32::MAX`.
pub fn write_channel_binary<W: Write>(
    mut out: W,
    channel: &MultipathChannel,
    cfg: &LensConfig,
    seed: u64,
) -> Result<()> {
    out.write_all(CHANNEL_MAGIC)?;
    out.write_all(&CHANNEL_VERSION.to_le_bytes())?;
    out.write_all(&(cfg.rows as u32).to_le_bytes())?;
    out.write_all(&(cfg.cols as u32).to_le_bytes())?;
    let l = (channel.paths.len() as u32).wrapping_sub(1);
    out.write_all(&l.to_le_bytes())?;
    out.write_all(&seed.to_le_bytes())?;
    for v in [cfg.dy, cfg.dz, cfg.wavelength] {
        out.write_all(&v.to_le_bytes())?;
    }
    for p in &channel.paths {
        for v in [p.gain, p.sin_y, p.sin_z] {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    for v in &channel.vector {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a container written by [`write_channel_binary`]; returns the channel, its config and seed.
pub fn read_channel_binary<R: Read>(mut input: R) -> Result<(MultipathChannel, LensConfig, u64)> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CHANNEL_MAGIC {
        return Err(Error::Format("bad channel magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != CHANNEL_VERSION {
        return Err(Error::Format(format!("unsupported channel version {version}")));
    }
    let rows = read_u32(&mut input)? as usize;
    let cols = read_u32(&mut input)? as usize;
    let l = read_u32(&mut input)?;
    let mut seed = [0u8; 8];
    input.read_exact(&mut seed)?;
    let seed = u64::from_le_bytes(seed);
    let dy = read_f64(&mut input)?;
    let dz = read_f64(&mut input)?;
    let wavelength = read_f64(&mut input)?;
    let cfg = LensConfig::with_wavelength(rows, cols, dy, dz, wavelength)?;
    let num_paths = l.wrapping_add(1) as usize;
    let mut paths = Vec::with_capacity(num_paths);
    for _ in 0..num_paths {
        let gain = read_f64(&mut input)?;
        let sin_y = read_f64(&mut input)?;
        let sin_z = read_f64(&mut input)?;
        paths.push(PathParams { gain, sin_y, sin_z });
    }
    let mut vector = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        vector.push(read_f64(&mut input)?);
    }
    let matrix = devectorize(&vector, rows, cols)?;
    Ok((MultipathChannel { paths, matrix, vector }, cfg, seed))
}

pub fn save_channel(path: &Path, channel: &MultipathChannel, cfg: &LensConfig, seed: u64) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_channel_binary(file, channel, cfg, seed)
}

pub fn load_channel(path: &Path) -> Result<(MultipathChannel, LensConfig, u64)> {
    read_channel_binary(std::io::BufReader::new(std::fs::File::open(path)?))
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert_eq, proptest};

    fn cfg(rows: usize, cols: usize) -> LensConfig {
        LensConfig::new(rows, cols, 12.0, 12.0).unwrap()
    }

    #[test]
    fn response_at_focus_is_sqrt_aperture() {
        let c = cfg(9, 9);
        // focus at grid coordinate (2, -3): rows index 6, col index 1
        let path = PathParams::new(1.0, 2.0 / 12.0, -3.0 / 12.0).unwrap();
        let r = array_response(6, 1, &path, &c);
        assert!((r - c.aperture().sqrt()).abs() < 1e-15);
        assert!((c.aperture().sqrt() - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn on_grid_focus_vanishes_elsewhere() {
        let c = cfg(9, 7);
        let path = PathParams::new(1.0, 1.0 / 12.0, 2.0 / 12.0).unwrap();
        let a = response_matrix(&path, &c);
        for m in 0..9 {
            for n in 0..7 {
                let expect = if (m, n) == (5, 5) { c.aperture().sqrt() } else { 0.0 };
                assert!((a[(m, n)] - expect).abs() < 1e-15, "({m},{n}) = {}", a[(m, n)]);
            }
        }
    }

    #[test]
    fn symmetric_offsets_match() {
        let c = cfg(11, 11);
        let path = PathParams::new(1.0, 0.0, 0.0).unwrap();
        for k in 1..5 {
            let plus = array_response(5 + k, 5, &path, &c);
            let minus = array_response(5 - k, 5, &path, &c);
            assert_eq!(plus, minus);
        }
    }

    #[test]
    fn even_grid_uses_half_integer_coordinates() {
        let c = cfg(4, 6);
        assert_eq!(c.row_coord(0), -1.5);
        assert_eq!(c.row_coord(3), 1.5);
        assert_eq!(c.col_coord(0), -2.5);
    }

    #[test]
    fn off_grid_peak_at_nearest_grid_point() {
        let c = cfg(16, 12);
        let mut rng = crate::rng::stream(3);
        for _ in 0..50 {
            let sy: f64 = rng.random_range(-0.6..0.6);
            let sz: f64 = rng.random_range(-0.45..0.45);
            let path = PathParams::new(1.0, sy, sz).unwrap();
            let a = response_matrix(&path, &c);
            let (mut best, mut arg) = (f64::MIN, (0, 0));
            for m in 0..c.rows {
                for n in 0..c.cols {
                    if a[(m, n)].abs() > best {
                        best = a[(m, n)].abs();
                        arg = (m, n);
                    }
                }
            }
            let (fy, fz) = path.focus(&c);
            let nearest_m = (0..c.rows)
                .min_by(|&x, &y| (c.row_coord(x) - fy).abs().total_cmp(&(c.row_coord(y) - fy).abs()))
                .unwrap();
            let nearest_n = (0..c.cols)
                .min_by(|&x, &y| (c.col_coord(x) - fz).abs().total_cmp(&(c.col_coord(y) - fz).abs()))
                .unwrap();
            assert_eq!(arg, (nearest_m, nearest_n));
        }
    }

    #[test]
    fn energy_bounded_by_full_lattice_sum() {
        // sum over all integers k of sinc^2(k - x) equals 1 for any x, so the
        // sampled energy of a single path cannot exceed A.
        let c = cfg(8, 8);
        let path = PathParams::new(1.0, 0.113, -0.271).unwrap();
        let a = response_matrix(&path, &c);
        let energy: f64 = a.iter().map(|x| x * x).sum();
        let lattice_1d = |x: f64| -> f64 { (-20000i64..=20000).map(|k| sinc(k as f64 - x).powi(2)).sum() };
        let (fy, fz) = path.focus(&c);
        // half-integer grid for even sizes
        let bound = c.aperture() * lattice_1d(fy + 0.5) * lattice_1d(fz + 0.5);
        assert!(energy <= bound + 1e-12);
        assert!((bound - c.aperture()).abs() < 1e-4);
    }

    #[test]
    fn single_path_scaling() {
        let c = cfg(6, 5);
        let path = PathParams::new(1.0, 0.3, -0.2).unwrap();
        let ch = MultipathChannel::from_paths(vec![path], &c);
        let expect = response_matrix(&path, &c) * (30f64).sqrt();
        assert!((ch.matrix - expect).abs().max() < 1e-14);
    }

    #[test]
    fn zero_gains_give_zero_channel() {
        let c = cfg(8, 8);
        let paths = vec![PathParams::new(0.0, 0.1, 0.2).unwrap(), PathParams::new(0.0, -0.5, 0.9).unwrap()];
        let ch = MultipathChannel::from_paths(paths, &c);
        assert!(ch.vector.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn superposition_is_linear() {
        let c = cfg(8, 10);
        let mut rng = crate::rng::stream(9);
        let a = sample_default_channel(&mut rng, 1, &c);
        let b = sample_default_channel(&mut rng, 2, &c);
        let joint: Vec<PathParams> = a.paths.iter().chain(&b.paths).copied().collect();
        let all = MultipathChannel::from_paths(joint, &c);
        // sqrt(MN/5) sum = sqrt(2/5) * ch_a + sqrt(3/5) * ch_b
        let expect = &a.matrix * (2.0f64 / 5.0).sqrt() + &b.matrix * (3.0f64 / 5.0).sqrt();
        assert!((all.matrix - expect).abs().max() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic() {
        let c = cfg(32, 32);
        let one = sample_default_channel(&mut crate::rng::stream(17), 3, &c);
        let two = sample_default_channel(&mut crate::rng::stream(17), 3, &c);
        assert_eq!(one, two);
        assert_eq!(one.paths.len(), 4);
    }

    #[test]
    fn entries_are_concentrated_near_zero() {
        let c = cfg(32, 32);
        let mut rng = crate::rng::stream(5);
        let mut small = 0usize;
        let mut total = 0usize;
        let mut peak = 0.0f64;
        for _ in 0..20 {
            let ch = sample_default_channel(&mut rng, 3, &c);
            let max = ch.vector.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            peak = peak.max(max);
            small += ch.vector.iter().filter(|x| x.abs() < 0.05 * max).count();
            total += ch.vector.len();
        }
        assert!(small as f64 / total as f64 > 0.8, "{small}/{total}");
        assert!(peak > 0.0);
    }

    #[test]
    fn vectorize_one_by_one() {
        let h = DMatrix::from_element(1, 1, 2.5);
        assert_eq!(vectorize(&h), vec![2.5]);
    }

    #[test]
    fn devectorize_rejects_bad_length() {
        assert!(matches!(devectorize(&[1.0; 5], 2, 3), Err(Error::Dimension(_))));
    }

    #[test]
    fn binary_container_round_trip() {
        let c = cfg(5, 7);
        let ch = sample_default_channel(&mut crate::rng::stream(1), 3, &c);
        let mut buf = Vec::new();
        write_channel_binary(&mut buf, &ch, &c, 99).unwrap();
        let (back, cfg_back, seed) = read_channel_binary(buf.as_slice()).unwrap();
        assert_eq!(back, ch);
        assert_eq!(cfg_back, c);
        assert_eq!(seed, 99);
    }

    #[test]
    fn csv_round_trip() {
        let c = cfg(4, 3);
        let ch = sample_default_channel(&mut crate::rng::stream(2), 1, &c);
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &ch.matrix).unwrap();
        let back = read_matrix_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ch.matrix);
    }

    proptest! {
        #[test]
        fn vectorize_round_trip(rows in 1usize..7, cols in 1usize..7, seed in any::<u64>()) {
            let mut rng = crate::rng::stream(seed);
            let h = DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() - 0.5);
            let v = vectorize(&h);
            for m in 0..rows {
                for n in 0..cols {
                    prop_assert_eq!(v[m * cols + n], h[(m, n)]);
                }
            }
            prop_assert_eq!(devectorize(&v, rows, cols).unwrap(), h);
        }
    }
}
