use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionKind {
    /// Uniform shards cut from one global shuffle.
    Iid,
    /// Every client holds several samples of a single class.
    SingleLabel,
    /// Every client holds exactly one sample.
    SingleSample,
}

impl PartitionKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Iid => "iid",
            Self::SingleLabel => "single_label",
            Self::SingleSample => "single_sample",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionPlan {
    pub kind: PartitionKind,
    pub num_clients: usize,
    samples_per_client: usize,
    pub seed: u64,
}

impl PartitionPlan {
    /// `samples_per_client` is forced to 1 for [`PartitionKind::SingleSample`].
    pub fn new(kind: PartitionKind, num_clients: usize, samples_per_client: usize, seed: u64) -> Self {
        let samples_per_client = match kind {
            PartitionKind::SingleSample => 1,
            _ => samples_per_client,
        };
        Self {
            kind,
            num_clients,
            samples_per_client,
            seed,
        }
    }

    pub fn samples_per_client(&self) -> usize {
        self.samples_per_client
    }
}

/// One simulated device's local data: positions into the parent dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientShard {
    pub client_id: usize,
    pub indices: Vec<usize>,
    pub label_census: Vec<usize>,
}

impl ClientShard {
    pub fn new(client_id: usize, indices: Vec<usize>, dataset: &Dataset) -> Self {
        let label_census = dataset.label_census(&indices);
        Self {
            client_id,
            indices,
            label_census,
        }
    }

    pub fn num_samples(&self) -> usize {
        self.indices.len()
    }

    /// Most frequent label, lowest class on ties.
    pub fn dominant_label(&self) -> usize {
        let mut best = 0;
        for (c, &n) in self.label_census.iter().enumerate() {
            if n > self.label_census[best] {
                best = c;
            }
        }
        best
    }

    /// Shannon entropy of the label census in bits.
    pub fn census_entropy(&self) -> f64 {
        let n = self.num_samples() as f64;
        self.label_census
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.log2()
            })
            .sum::<f64>()
            .max(0.0)
    }
}

/// Splits `dataset` across `plan.num_clients` disjoint shards.
///
/// Single-label and single-sample plans assign class `k % num_classes` to
/// client `k`, drawing without replacement from a seeded shuffle of that
/// class's pool.
pub fn partition(dataset: &Dataset, plan: &PartitionPlan) -> Result<Vec<ClientShard>> {
    let k = plan.num_clients;
    let per_client = plan.samples_per_client;
    if k == 0 || per_client == 0 {
        return Err(Error::InvalidPlan(format!(
            "need at least one client and one sample per client, got K={k}, samples_per_client={per_client}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    match plan.kind {
        PartitionKind::Iid => {
            let needed = k * per_client;
            if needed > dataset.len() {
                return Err(Error::InvalidPlan(format!(
                    "iid plan needs {needed} samples, dataset has {}",
                    dataset.len()
                )));
            }
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.shuffle(&mut rng);
            Ok(order[..needed]
                .chunks(per_client)
                .enumerate()
                .map(|(id, chunk)| ClientShard::new(id, chunk.to_vec(), dataset))
                .collect())
        }
        PartitionKind::SingleLabel | PartitionKind::SingleSample => {
            let classes = dataset.num_classes();
            let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
            for (i, &y) in dataset.labels().iter().enumerate() {
                pools[y].push(i);
            }
            for pool in &mut pools {
                pool.shuffle(&mut rng);
            }
            let mut used = vec![0usize; classes];
            let mut needed = vec![0usize; classes];
            for id in 0..k {
                needed[id % classes] += per_client;
            }
            if let Some(class) = (0..classes).find(|&c| needed[c] > pools[c].len()) {
                return Err(Error::Capacity {
                    class,
                    needed: needed[class],
                    available: pools[class].len(),
                });
            }
            Ok((0..k)
                .map(|id| {
                    let class = id % classes;
                    let start = used[class];
                    used[class] += per_client;
                    ClientShard::new(id, pools[class][start..start + per_client].to_vec(), dataset)
                })
                .collect())
        }
    }
}

/// Shuffles the shard with `epoch_seed` and cuts it into batches of at most
/// `batch_size` positions; the last batch may be short.
pub fn shard_batches(shard: &ClientShard, batch_size: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order = shard.indices.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;
    use crate::data::synth_dataset;

    fn dataset(n: usize, classes: usize) -> Dataset {
        synth_dataset(classes, 4, n, 3).unwrap()
    }

    fn assert_disjoint(shards: &[ClientShard]) {
        let mut seen = HashSet::new();
        for s in shards {
            for &i in &s.indices {
                assert!(seen.insert(i), "index {i} appears twice");
            }
        }
    }

    #[test]
    fn iid_covers_everything_when_exact() {
        let ds = dataset(100, 10);
        let plan = PartitionPlan::new(PartitionKind::Iid, 10, 10, 1);
        let shards = partition(&ds, &plan).unwrap();
        assert_eq!(shards.len(), 10);
        assert!(shards.iter().all(|s| s.num_samples() == 10));
        assert_disjoint(&shards);
        let mut all: Vec<usize> = shards.iter().flat_map(|s| s.indices.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(shards, partition(&ds, &plan).unwrap());
    }

    #[test]
    fn single_label_shards_are_homogeneous_and_round_robin() {
        let ds = dataset(1000, 10);
        let plan = PartitionPlan::new(PartitionKind::SingleLabel, 10, 20, 4);
        let shards = partition(&ds, &plan).unwrap();
        for s in &shards {
            assert_eq!(s.label_census.iter().filter(|&&c| c > 0).count(), 1);
            assert_eq!(s.dominant_label(), s.client_id % 10);
            assert_eq!(s.census_entropy(), 0.0);
        }
        assert_disjoint(&shards);
    }

    #[test]
    fn single_sample_forces_one_sample() {
        let ds = dataset(1000, 10);
        let plan = PartitionPlan::new(PartitionKind::SingleSample, 500, 37, 9);
        assert_eq!(plan.samples_per_client(), 1);
        let shards = partition(&ds, &plan).unwrap();
        assert_eq!(shards.len(), 500);
        assert!(shards.iter().all(|s| s.num_samples() == 1));
        assert_disjoint(&shards);
    }

    #[test]
    fn exhausted_class_pool_names_the_class() {
        let ds = dataset(100, 10);
        let plan = PartitionPlan::new(PartitionKind::SingleLabel, 10, 11, 0);
        match partition(&ds, &plan) {
            Err(Error::Capacity {
                class,
                needed,
                available,
            }) => {
                assert_eq!((class, needed, available), (0, 11, 10));
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
        let iid = PartitionPlan::new(PartitionKind::Iid, 11, 10, 0);
        assert!(matches!(partition(&ds, &iid), Err(Error::InvalidPlan(_))));
        let empty = PartitionPlan::new(PartitionKind::Iid, 0, 10, 0);
        assert!(partition(&ds, &empty).is_err());
    }

    #[test]
    fn batches_follow_chunking_law() {
        let ds = dataset(100, 10);
        let shard = ClientShard::new(0, (0..10).collect(), &ds);
        let sizes = |b: usize| -> Vec<usize> {
            shard_batches(&shard, b, 5).iter().map(Vec::len).collect()
        };
        assert_eq!(sizes(3), vec![3, 3, 3, 1]);
        assert_eq!(sizes(10), vec![10]);
        assert_eq!(sizes(64), vec![10]);
        let mut flat: Vec<usize> = shard_batches(&shard, 3, 5).concat();
        flat.sort_unstable();
        assert_eq!(flat, shard.indices);
        assert_eq!(shard_batches(&shard, 3, 5), shard_batches(&shard, 3, 5));
    }

    #[test]
    fn entropy_of_mixed_shard() {
        let ds = dataset(100, 10);
        // labels are i % 10, so indices 0..4 cover four classes once each
        let shard = ClientShard::new(0, vec![0, 1, 2, 3], &ds);
        assert!((shard.census_entropy() - 2.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn plans_keep_partition_invariants(
            kind in prop_oneof![
                Just(PartitionKind::Iid),
                Just(PartitionKind::SingleLabel),
                Just(PartitionKind::SingleSample),
            ],
            clients in 1usize..40,
            per_client in 1usize..12,
            seed in any::<u64>(),
        ) {
            let ds = dataset(600, 7);
            let plan = PartitionPlan::new(kind, clients, per_client, seed);
            let shards = partition(&ds, &plan).unwrap();
            prop_assert_eq!(shards.len(), clients);
            let total: usize = shards.iter().map(ClientShard::num_samples).sum();
            prop_assert_eq!(total, clients * plan.samples_per_client());
            let mut seen = HashSet::new();
            for s in &shards {
                prop_assert_eq!(&s.label_census, &ds.label_census(&s.indices));
                prop_assert_eq!(s.label_census.iter().sum::<usize>(), s.num_samples());
                for &i in &s.indices {
                    prop_assert!(seen.insert(i));
                }
                if kind != PartitionKind::Iid {
                    prop_assert_eq!(s.label_census.iter().filter(|&&c| c > 0).count(), 1);
                }
            }
            prop_assert_eq!(shards, partition(&ds, &plan).unwrap());
        }
    }
}
