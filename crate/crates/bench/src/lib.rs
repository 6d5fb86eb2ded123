//! Fixtures shared by the benchmarks.

use lensbeam::cosparse::{build_difference_operator, AugmentedSystem};
use lensbeam::lens::{sample_default_channel, LensConfig, MultipathChannel};
use lensbeam::rng::stream;
use lensbeam::selection::{build_hadamard_selection, measure, Measurement, SelectionNetwork};

pub struct Fixture {
    pub lens: LensConfig,
    pub channel: MultipathChannel,
    pub network: SelectionNetwork,
    pub measurement: Measurement,
}

/// A `size x size` lens channel with four paths, measured through `Q = MN / 2` rows.
pub fn fixture(size: usize, snr_db: f64, seed: u64) -> Fixture {
    let lens = LensConfig::new(size, size, 12.0, 12.0).expect("valid lens");
    let channel = sample_default_channel(&mut stream(seed), 3, &lens);
    let network = build_hadamard_selection(lens.len() / 2, lens.len(), seed ^ 1).expect("valid network");
    let measurement = measure(&network, &channel.vector, snr_db, &mut stream(seed ^ 2)).expect("non-zero channel");
    Fixture { lens, channel, network, measurement }
}

impl Fixture {
    pub fn system(&self) -> AugmentedSystem {
        let diff = build_difference_operator(self.lens.rows, self.lens.cols).expect("non-empty grid");
        AugmentedSystem::new(self.network.clone(), diff, &self.measurement.r).expect("consistent sizes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_dimensions() {
        let f = fixture(16, 20.0, 1);
        assert_eq!(f.network.q(), 128);
        assert_eq!(f.system().dims().cols(), 256 + 2 * 16 * 15);
    }
}
