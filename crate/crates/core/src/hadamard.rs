//! Fast Walsh-Hadamard transform over `f64` slices.

/// In-place unnormalized Walsh-Hadamard transform in Sylvester (natural) order.
///
/// Entry `(r, c)` of the implied matrix is `(-1)^popcount(r & c)`.
/// Panics if the length is not a power of two.
pub fn fwht(data: &mut [f64]) {
    let n = data.len();
    assert!(n.is_power_of_two(), "fwht length {n} is not a power of two");
    let mut h = 1;
    while h < n {
        for block in data.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                let a = *x;
                let b = *y;
                *x = a + b;
                *y = a - b;
            }
        }
        h *= 2;
    }
}

/// Sign of Sylvester-Hadamard entry `(row, col)`.
#[inline]
pub fn hadamard_sign(row: usize, col: usize) -> f64 {
    if (row & col).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_dense_sylvester() {
        let n = 16;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut fast = x.clone();
        fwht(&mut fast);
        for r in 0..n {
            let dense: f64 = (0..n).map(|c| hadamard_sign(r, c) * x[c]).sum();
            assert!((dense - fast[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn involution_up_to_scale() {
        let x: Vec<f64> = (0..64).map(|i| i as f64 - 10.0).collect();
        let mut y = x.clone();
        fwht(&mut y);
        fwht(&mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a * 64.0 - b).abs() < 1e-9);
        }
    }

    #[test]
    fn length_one_is_identity() {
        let mut x = [3.5];
        fwht(&mut x);
        assert_eq!(x, [3.5]);
    }
}
