use crate::rng::{rng_from_seed, shuffle};

/// Shuffled mini-batches of example indices for one epoch. Every index in
/// `0..n` appears exactly once; the final batch may be short.
pub fn normalize_and_batch(n: usize, batch_size: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, &mut rng_from_seed(epoch_seed));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
