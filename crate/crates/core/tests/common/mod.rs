//! Brute-force reference machinery shared by the integration and acceptance
//! suites. Everything here recomputes expected values from first principles,
//! independently of the library's own code paths.
#![allow(dead_code)] // each test target uses a different subset

use std::collections::BTreeMap;

/// Exact output distribution of dropout-then-max over one region, by
/// enumerating all 2^n retain/drop masks. Returns (value, probability) pairs
/// sorted by value; a fully dropped mask contributes to value 0.
pub fn enumerate_mask_distribution(region: &[f64], p: f64) -> Vec<(f64, f64)> {
    let n = region.len();
    assert!(n <= 20, "enumeration oracle is exponential in n");
    let q = 1.0 - p;
    let mut dist: BTreeMap<u64, f64> = BTreeMap::new();
    for mask in 0u32..(1 << n) {
        let mut prob = 1.0;
        let mut max: Option<f64> = None;
        for (i, &a) in region.iter().enumerate() {
            if mask & (1 << i) != 0 {
                prob *= p;
                max = Some(match max {
                    Some(m) if m >= a => m,
                    _ => a,
                });
            } else {
                prob *= q;
            }
        }
        let value = max.unwrap_or(0.0);
        *dist.entry(value.to_bits()).or_insert(0.0) += prob;
    }
    dist.into_iter()
        .map(|(bits, pr)| (f64::from_bits(bits), pr))
        .collect()
}

/// Exact expectation of the mask-enumerated distribution.
pub fn enumerate_mask_expectation(region: &[f64], p: f64) -> f64 {
    enumerate_mask_distribution(region, p)
        .into_iter()
        .map(|(v, pr)| v * pr)
        .sum()
}

/// L-infinity distance between two empirical/exact distributions given as
/// (value, probability) pairs.
pub fn linf_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut keys: Vec<u64> = a.iter().chain(b).map(|(v, _)| v.to_bits()).collect();
    keys.sort_unstable();
    keys.dedup();
    let lookup = |d: &[(f64, f64)], k: u64| {
        d.iter()
            .find(|(v, _)| v.to_bits() == k)
            .map(|(_, p)| *p)
            .unwrap_or(0.0)
    };
    keys.iter()
        .map(|&k| (lookup(a, k) - lookup(b, k)).abs())
        .fold(0.0, f64::max)
}

/// Turns sampled values into an empirical (value, frequency) distribution.
pub fn empirical_distribution(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for v in samples {
        *counts.entry(v.to_bits()).or_insert(0) += 1;
    }
    let n = samples.len() as f64;
    counts
        .into_iter()
        .map(|(bits, c)| (f64::from_bits(bits), c as f64 / n))
        .collect()
}

/// Central finite difference of a scalar function at `x[i]` with step `h`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[i] += h;
    minus[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Relative error with an absolute floor so near-zero gradients do not blow
/// the ratio up.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
