use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DatasetError;

/// Episodes whose clip length falls in `[lo, hi)`; `hi = None` is open-ended.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bucket {
    pub lo: usize,
    pub hi: Option<usize>,
    pub members: Vec<usize>,
}

/// Partitions episode indices by clip length. Only nonempty buckets are returned.
pub fn make_buckets(lengths: &[usize], boundaries: &[usize]) -> Result<Vec<Bucket>, DatasetError> {
    if lengths.is_empty() {
        return Err(DatasetError::EmptyCorpus);
    }
    if boundaries.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DatasetError::InvalidConfig("bucket boundaries must be strictly increasing".into()));
    }
    let mut buckets: Vec<Bucket> = (0..=boundaries.len())
        .map(|i| Bucket {
            lo: if i == 0 { 0 } else { boundaries[i - 1] },
            hi: boundaries.get(i).copied(),
            members: Vec::new(),
        })
        .collect();
    for (idx, &len) in lengths.iter().enumerate() {
        let b = boundaries.partition_point(|b| *b <= len);
        buckets[b].members.push(idx);
    }
    buckets.retain(|b| !b.members.is_empty());
    Ok(buckets)
}

/// Seeded batch order: shuffle inside each bucket, chunk, then shuffle the chunks.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    buckets: Vec<Bucket>,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(buckets: Vec<Bucket>, batch_size: usize, seed: u64) -> Result<Self, DatasetError> {
        if batch_size == 0 {
            return Err(DatasetError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if buckets.iter().all(|b| b.members.is_empty()) {
            return Err(DatasetError::EmptyCorpus);
        }
        Ok(Self {
            buckets,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        let mut batches = Vec::new();
        for b in &self.buckets {
            let mut members = b.members.clone();
            members.shuffle(&mut self.rng);
            batches.extend(members.chunks(self.batch_size).map(<[usize]>::to_vec));
        }
        batches.shuffle(&mut self.rng);
        batches
    }
}
