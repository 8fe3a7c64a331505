//! Block-partitioned vectors, weighted norms, and the categorical block
//! sampler that drives all randomized solvers.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A partition of `R^p` into `n` contiguous blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl BlockPartition {
    /// Builds a partition from per-block sizes. Every size must be positive.
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidPartition("no blocks".into()));
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidPartition(format!("block {i} has size 0")));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0usize;
        for &s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        Ok(Self {
            sizes,
            offsets,
            total: acc,
        })
    }

    /// `n` equal blocks of size `size` (the layout used by product-space reformulations).
    pub fn uniform(n: usize, size: usize) -> Result<Self> {
        Self::new(vec![size; n])
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    /// Total dimension `p`.
    pub fn dim(&self) -> usize {
        self.total
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn size(&self, i: usize) -> usize {
        self.sizes[i]
    }

    /// Index range of block `i` within the flat storage.
    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i] + self.sizes[i]
    }

    pub fn check_block(&self, i: usize) -> Result<()> {
        if i < self.sizes.len() {
            Ok(())
        } else {
            Err(Error::BlockIndexOutOfRange {
                index: i,
                n: self.sizes.len(),
            })
        }
    }
}

/// A dense vector in `R^p` carrying its block partition.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    data: Vec<f64>,
    partition: BlockPartition,
}

impl BlockVector {
    pub fn new(data: Vec<f64>, partition: BlockPartition) -> Result<Self> {
        if data.len() != partition.dim() {
            return Err(Error::DimensionMismatch {
                expected: partition.dim(),
                got: data.len(),
            });
        }
        Ok(Self { data, partition })
    }

    pub fn zeros(partition: BlockPartition) -> Self {
        Self {
            data: vec![0.0; partition.dim()],
            partition,
        }
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[self.partition.range(i)]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.partition.range(i);
        &mut self.data[r]
    }

    /// Squared Euclidean norm of the whole vector.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Squared Euclidean distance to `other`.
    pub fn dist_sq(&self, other: &BlockVector) -> f64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Per-block positive weights for the block-weighted norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    sigma: Vec<f64>,
}

impl WeightVector {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if sigma.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        if let Some(i) = sigma.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::InvalidWeights(format!(
                "sigma[{i}] = {} must be > 0",
                sigma[i]
            )));
        }
        Ok(Self { sigma })
    }

    /// Unit weights, which make the weighted norm the plain Euclidean norm.
    pub fn ones(n: usize) -> Self {
        Self {
            sigma: vec![1.0; n],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.sigma
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }
}

/// Returns `sum_i sigma_i * ||x_i||^2`.
pub fn weighted_norm_sq(x: &BlockVector, sigma: &WeightVector) -> Result<f64> {
    let n = x.partition().num_blocks();
    if sigma.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: sigma.len(),
        });
    }
    let mut total = 0.0;
    for i in 0..n {
        let block_sq: f64 = x.block(i).iter().map(|v| v * v).sum();
        total += sigma.as_slice()[i] * block_sq;
    }
    Ok(total)
}

/// Weighted squared norm of `a - b` without materializing the difference.
pub fn weighted_diff_norm_sq(
    a: &BlockVector,
    b: &BlockVector,
    sigma: &WeightVector,
) -> Result<f64> {
    let n = a.partition().num_blocks();
    if sigma.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: sigma.len(),
        });
    }
    let mut total = 0.0;
    for i in 0..n {
        let block_sq: f64 = a
            .block(i)
            .iter()
            .zip(b.block(i))
            .map(|(u, v)| (u - v) * (u - v))
            .sum();
        total += sigma.as_slice()[i] * block_sq;
    }
    Ok(total)
}

/// A sampling distribution over block indices with precomputed prefix sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDistribution {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
    p_min: f64,
}

impl BlockDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("no probabilities".into()));
        }
        if let Some(i) = probs.iter().position(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::InvalidDistribution(format!(
                "probs[{i}] = {} must lie in (0, 1]",
                probs[i]
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        let mut cumulative = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &p in &probs {
            acc += p;
            cumulative.push(acc);
        }
        // Guard against rounding so the final bucket always covers u -> 1.
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        let p_min = probs.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(Self {
            probs,
            cumulative,
            p_min,
        })
    }

    /// The uniform distribution over `n` blocks.
    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn num_blocks(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }
}

/// Inverse-CDF sampling: the smallest `i` with `cumulative[i] > u`.
///
/// `u` is clamped into `[0, 1)` so the result is always a valid index.
pub fn sample_block(dist: &BlockDistribution, u: f64) -> usize {
    let u = u.clamp(0.0, 1.0 - f64::EPSILON / 2.0);
    // partition_point returns the count of leading buckets with cumulative <= u.
    let idx = dist.cumulative.partition_point(|&c| c <= u);
    idx.min(dist.probs.len() - 1)
}

/// Returns `x` with block `i` replaced by `values`; all other entries are untouched.
pub fn block_scatter(x: &BlockVector, i: usize, values: &[f64]) -> Result<BlockVector> {
    x.partition().check_block(i)?;
    if values.len() != x.partition().size(i) {
        return Err(Error::DimensionMismatch {
            expected: x.partition().size(i),
            got: values.len(),
        });
    }
    let mut out = x.clone();
    out.block_mut(i).copy_from_slice(values);
    Ok(out)
}

/// The single seedable uniform stream each run draws from.
///
/// Every solver consumes indices from one `IndexStream`, so two solvers given
/// the same seed see identical index sequences. Uniforms are built directly
/// from the generator's output bits to stay stable across dependency upgrades.
#[derive(Debug, Clone)]
pub struct IndexStream {
    rng: ChaCha8Rng,
}

impl IndexStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Next uniform in `[0, 1)` (53 bits of the generator output).
    pub fn next_uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Draws the next block index from `dist`.
    pub fn next_block(&mut self, dist: &BlockDistribution) -> usize {
        sample_block(dist, self.next_uniform())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn partition_offsets_are_prefix_sums() {
        let part = BlockPartition::new(vec![2, 3, 1]).unwrap();
        assert_eq!(part.num_blocks(), 3);
        assert_eq!(part.dim(), 6);
        assert_eq!(part.offset(0), 0);
        assert_eq!(part.offset(1), 2);
        assert_eq!(part.offset(2), 5);
        assert_eq!(part.range(1), 2..5);
    }

    #[test]
    fn partition_rejects_zero_sized_blocks() {
        assert!(BlockPartition::new(vec![1, 0, 2]).is_err());
        assert!(BlockPartition::new(vec![]).is_err());
    }

    #[test]
    fn weighted_norm_matches_hand_arithmetic() {
        // sizes (1,1), sigma (2,3), x = (1,1) -> 2*1 + 3*1 = 5
        let part = BlockPartition::new(vec![1, 1]).unwrap();
        let x = BlockVector::new(vec![1.0, 1.0], part).unwrap();
        let sigma = WeightVector::new(vec![2.0, 3.0]).unwrap();
        assert_relative_eq!(weighted_norm_sq(&x, &sigma).unwrap(), 5.0);
    }

    #[test]
    fn weighted_norm_zero_vector_is_zero() {
        let part = BlockPartition::new(vec![3, 2]).unwrap();
        let x = BlockVector::zeros(part);
        let sigma = WeightVector::new(vec![0.5, 7.0]).unwrap();
        assert_eq!(weighted_norm_sq(&x, &sigma).unwrap(), 0.0);
    }

    #[test]
    fn weighted_norm_rejects_mismatched_sigma() {
        let part = BlockPartition::new(vec![1, 1]).unwrap();
        let x = BlockVector::zeros(part);
        let sigma = WeightVector::new(vec![1.0]).unwrap();
        assert!(weighted_norm_sq(&x, &sigma).is_err());
    }

    #[test]
    fn sample_single_block_always_zero() {
        let dist = BlockDistribution::new(vec![1.0]).unwrap();
        for &u in &[0.0, 0.3, 0.999999] {
            assert_eq!(sample_block(&dist, u), 0);
        }
    }

    #[test]
    fn sample_inverse_cdf_two_blocks() {
        let dist = BlockDistribution::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(sample_block(&dist, 0.3), 0);
        assert_eq!(sample_block(&dist, 0.7), 1);
        // Boundary: cumulative[0] = 0.5 is not > 0.5, so 0.5 maps to block 1.
        assert_eq!(sample_block(&dist, 0.5), 1);
    }

    #[test]
    fn sample_clamps_out_of_range_u() {
        let dist = BlockDistribution::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(sample_block(&dist, -3.0), 0);
        assert_eq!(sample_block(&dist, 1.0), 1);
        assert_eq!(sample_block(&dist, 17.0), 1);
    }

    #[test]
    fn sample_frequencies_pass_chi_square_99() {
        // Goodness-of-fit oracle: 1e5 draws against (0.2, 0.3, 0.5);
        // chi-square with 2 degrees of freedom at 99% is 9.210.
        let dist = BlockDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        let mut stream = IndexStream::new(12345);
        let draws = 100_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            counts[stream.next_block(&dist)] += 1;
        }
        let mut chi_sq = 0.0;
        for i in 0..3 {
            let expected = dist.prob(i) * draws as f64;
            let diff = counts[i] as f64 - expected;
            chi_sq += diff * diff / expected;
        }
        assert!(
            chi_sq <= 9.210,
            "chi-square statistic {chi_sq} exceeds the 99% bound"
        );
    }

    #[test]
    fn distribution_rejects_bad_probs() {
        assert!(BlockDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(BlockDistribution::new(vec![0.0, 1.0]).is_err());
        assert!(BlockDistribution::new(vec![-0.2, 1.2]).is_err());
    }

    #[test]
    fn scatter_replaces_exactly_one_block() {
        let part = BlockPartition::new(vec![2, 2]).unwrap();
        let x = BlockVector::new(vec![1.0, 2.0, 3.0, 4.0], part).unwrap();
        let y = block_scatter(&x, 1, &[9.0, 9.0]).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 2.0, 9.0, 9.0]);
        // Round trip: read back the block just written.
        assert_eq!(y.block(1), &[9.0, 9.0]);
        // Other block bit-identical.
        assert_eq!(y.block(0), x.block(0));
    }

    #[test]
    fn scatter_zeroes_is_identity_on_zero_vector() {
        let part = BlockPartition::new(vec![3, 1]).unwrap();
        let x = BlockVector::zeros(part);
        let y = block_scatter(&x, 0, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn scatter_rejects_bad_index_and_length() {
        let part = BlockPartition::new(vec![2, 2]).unwrap();
        let x = BlockVector::zeros(part);
        assert!(block_scatter(&x, 2, &[0.0, 0.0]).is_err());
        assert!(block_scatter(&x, 0, &[0.0]).is_err());
    }

    #[test]
    fn stream_is_deterministic() {
        let dist = BlockDistribution::uniform(5).unwrap();
        let mut a = IndexStream::new(99);
        let mut b = IndexStream::new(99);
        let seq_a: Vec<usize> = (0..64).map(|_| a.next_block(&dist)).collect();
        let seq_b: Vec<usize> = (0..64).map(|_| b.next_block(&dist)).collect();
        assert_eq!(seq_a, seq_b);
    }
}
