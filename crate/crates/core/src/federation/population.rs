use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{permutation, rng_for};

/// Clients, their disjoint data shards and the fixed set of malicious ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientPopulation {
    num_clients: usize,
    num_malicious: usize,
    /// `shards[c]` holds indices into the client-training pool.
    shards: Vec<Vec<usize>>,
    malicious: Vec<bool>,
    rng_seed: u64,
}

impl ClientPopulation {
    /// Random IID partition of `0..pool_len` into `num_clients` shards whose
    /// sizes differ by at most one, and a random malicious subset.
    pub fn new(num_clients: usize, num_malicious: usize, pool_len: usize, rng_seed: u64) -> Result<Self> {
        if num_clients == 0 {
            return Err(Error::config("population needs at least one client"));
        }
        if num_malicious > num_clients {
            return Err(Error::config(format!(
                "{num_malicious} malicious clients out of {num_clients}"
            )));
        }
        if pool_len < num_clients {
            return Err(Error::config(format!(
                "client pool of {pool_len} points cannot give {num_clients} clients a shard each"
            )));
        }
        let order = permutation(pool_len, &mut rng_for(rng_seed, &[0x5A4D]));
        let base = pool_len / num_clients;
        let extra = pool_len % num_clients;
        let mut shards = Vec::with_capacity(num_clients);
        let mut start = 0;
        for c in 0..num_clients {
            let len = base + usize::from(c < extra);
            shards.push(order[start..start + len].to_vec());
            start += len;
        }
        let mut malicious = vec![false; num_clients];
        let bad = rand::seq::index::sample(&mut rng_for(rng_seed, &[0xBAD]), num_clients, num_malicious);
        for id in bad.iter() {
            malicious[id] = true;
        }
        Ok(Self {
            num_clients,
            num_malicious,
            shards,
            malicious,
            rng_seed,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.num_clients
    }

    pub fn num_malicious(&self) -> usize {
        self.num_malicious
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn shard(&self, client: usize) -> &[usize] {
        &self.shards[client]
    }

    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    pub fn is_malicious(&self, client: usize) -> bool {
        self.malicious[client]
    }

    /// Pool indices held by all malicious clients, in client order.
    pub fn malicious_pool(&self) -> Vec<usize> {
        (0..self.num_clients)
            .filter(|&c| self.malicious[c])
            .flat_map(|c| self.shards[c].iter().copied())
            .collect()
    }
}

/// Uniform sample of `size` distinct client ids, in ascending order.
pub fn sample_quorum(pop: &ClientPopulation, size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if size > pop.num_clients {
        return Err(Error::config(format!(
            "quorum of {size} from {} clients",
            pop.num_clients
        )));
    }
    let mut ids = rand::seq::index::sample(rng, pop.num_clients, size).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// `P(X ≥ k)` for `X` the number of marked items in a sample of `draws`
/// without replacement from `population` items of which `marked` are marked.
pub fn hypergeometric_tail(population: u64, marked: u64, draws: u64, k: u64) -> Result<f64> {
    use statrs::distribution::{DiscreteCDF, Hypergeometric};
    let dist = Hypergeometric::new(population, marked, draws)
        .map_err(|e| Error::config(format!("hypergeometric parameters: {e}")))?;
    Ok(if k == 0 { 1.0 } else { dist.sf(k - 1) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shards_cover_and_are_disjoint() {
        let pop = ClientPopulation::new(7, 2, 52, 3).unwrap();
        let mut all: Vec<usize> = pop.shards().iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..52).collect::<Vec<_>>());
        let sizes: Vec<usize> = pop.shards().iter().map(Vec::len).collect();
        assert!(sizes.iter().all(|&s| s == 7 || s == 8));
        assert_eq!((0..7).filter(|&c| pop.is_malicious(c)).count(), 2);
    }

    #[test]
    fn full_quorum_and_bounds() {
        let pop = ClientPopulation::new(5, 1, 10, 0).unwrap();
        let mut rng = rng_for(9, &[]);
        assert_eq!(sample_quorum(&pop, 5, &mut rng).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(sample_quorum(&pop, 6, &mut rng).is_err());
    }

    #[test]
    fn small_hypergeometric_by_hand() {
        // 4 items, 2 marked, draw 2: P(both marked) = 1/6.
        assert!((hypergeometric_tail(4, 2, 2, 2).unwrap() - 1.0 / 6.0).abs() < 1e-12);
        assert!((hypergeometric_tail(4, 2, 2, 0).unwrap() - 1.0).abs() < 1e-12);
    }
}
