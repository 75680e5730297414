//! Shared fixtures for the benchmarks.

use gdfcv_core::{simulate_bernoulli, simulate_gaussian, Dataset};

pub fn gaussian(n: usize) -> Dataset {
    simulate_gaussian(n, 1).expect("simulation").data
}

pub fn bernoulli(n: usize) -> Dataset {
    simulate_bernoulli(n, 1).expect("simulation").data
}
