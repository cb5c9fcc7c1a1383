//! Throughput of the three hierarchy builders on a clean 256-item instance,
//! plus a single voting split in isolation. All inputs are generated once;
//! each iteration replays the full metered run.

use actclust::{
    agglomerate, gen_balanced_tree, gen_tc_similarities, outlier_cluster, ra_cluster, split,
    ExactOracle, InsertionOrder, ItemId, Linkage, QueryLedger, SplitConfig, TiePolicy,
};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const N: usize = 256;

fn bench_builders(c: &mut Criterion) {
    let truth = gen_balanced_tree(N).unwrap();
    let store = gen_tc_similarities(&truth, 1).unwrap();
    let cluster: Vec<ItemId> = (0..N as u32).map(ItemId).collect();
    let config = SplitConfig { m: 40, gamma: 0.30 };

    c.bench_function("outlier_cluster/256", |b| {
        b.iter(|| {
            let mut oracle = ExactOracle::new(&store);
            outlier_cluster(N, &mut oracle, InsertionOrder::Ascending, TiePolicy::Strict).unwrap()
        })
    });

    c.bench_function("split/256/m40", |b| {
        b.iter(|| {
            let mut oracle = ExactOracle::new(&store);
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut ledger = QueryLedger::new(N);
            split(&cluster, &config, &mut oracle, &mut rng, &mut ledger).unwrap()
        })
    });

    c.bench_function("ra_cluster/256/m40", |b| {
        b.iter(|| {
            let mut oracle = ExactOracle::new(&store);
            ra_cluster(N, &config, &mut oracle, 3, false).unwrap()
        })
    });

    c.bench_function("agglomerate/256/average", |b| {
        b.iter(|| {
            let mut ledger = QueryLedger::new(N);
            agglomerate(&store, Linkage::Average, &mut ledger).unwrap()
        })
    });
}

criterion_group!(benches, bench_builders);
criterion_main!(benches);
