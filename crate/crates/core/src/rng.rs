//! Deterministic per-replica random streams.
//!
//! Every replica draws from its own ChaCha8 stream keyed by
//! `(master_seed, replica_index)`. ChaCha is counter based, so the stream of
//! replica `k` does not depend on how many other replicas exist, in which
//! order they run, or on which thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Random stream type used throughout the crate.
pub type Stream = ChaCha8Rng;

/// Returns the stream for replica `replica_index` under `master_seed`.
pub fn derive_stream(master_seed: u64, replica_index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replica_index);
    rng
}

/// Runs `f` once per replica, possibly in parallel, and returns the results
/// ordered by replica index.
///
/// Output is identical for any thread count since each replica only ever
/// sees its own stream.
pub fn run_replicas<T, F>(master_seed: u64, n_replicas: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut Stream) -> T + Sync + Send,
{
    (0..n_replicas)
        .into_par_iter()
        .map(|k| {
            let mut rng = derive_stream(master_seed, k as u64);
            f(k, &mut rng)
        })
        .collect()
}

/// Derives a sub-seed for an independent experiment component, so that two
/// ensembles inside one experiment never share streams.
pub fn sub_seed(master_seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master_seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn draws(rng: &mut Stream, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn same_key_same_stream() {
        let a = draws(&mut derive_stream(42, 7), 1000);
        let b = draws(&mut derive_stream(42, 7), 1000);
        assert_eq!(a, b);
    }

    #[test]
    fn neighbouring_streams_are_uncorrelated() {
        let n = 10_000;
        let a = draws(&mut derive_stream(42, 0), n);
        let b = draws(&mut derive_stream(42, 1), n);
        let ma = a.iter().sum::<f64>() / n as f64;
        let mb = b.iter().sum::<f64>() / n as f64;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(&b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        let corr = sab / (saa * sbb).sqrt();
        assert!(corr.abs() < 0.05, "correlation {corr}");
    }

    #[test]
    fn replica_results_ignore_scheduling() {
        let forward = run_replicas(3, 64, |_, rng| rng.random::<u64>());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let pooled = pool.install(|| run_replicas(3, 64, |_, rng| rng.random::<u64>()));
        assert_eq!(forward, pooled);
        // Reverse execution order by hand.
        let mut reversed: Vec<(usize, u64)> = (0..64)
            .rev()
            .map(|k| (k, derive_stream(3, k as u64).random::<u64>()))
            .collect();
        reversed.sort_by_key(|&(k, _)| k);
        let reversed: Vec<u64> = reversed.into_iter().map(|(_, v)| v).collect();
        assert_eq!(forward, reversed);
    }

    #[test]
    fn sub_seeds_differ() {
        assert_ne!(sub_seed(1, 0), sub_seed(1, 1));
        assert_eq!(sub_seed(9, 4), sub_seed(9, 4));
    }
}
