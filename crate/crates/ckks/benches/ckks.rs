//! Per-prime and per-chunk work under both execution strategies, at the
//! standard parameter set.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use privfed_ckks::{decrypt_update, encrypt_update, keygen, CkksContext, CkksParams, PackingLayout};
use privfed_core::{Exec, FlatVector, ParamSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn strategies() -> Vec<(&'static str, Exec)> {
    let mut v = vec![("sequential", Exec::Sequential)];
    if cfg!(feature = "parallel") {
        v.push(("parallel", Exec::Parallel));
    }
    v
}

fn update_roundtrip(c: &mut Criterion) {
    let mut group = c.benchmark_group("ckks_update");
    group.sample_size(10);
    // Eight full chunks, the size of a larger model update.
    let n = 8 * 4096;
    let params = ParamSet::from_parts([("w", vec![n], vec![0.001; n])]).unwrap();
    let manifest = params.manifest();
    let flat = FlatVector(vec![0.001; n]);
    for (name, exec) in strategies() {
        let ctx = CkksContext::new(CkksParams::standard()).unwrap().with_exec(exec);
        let keys = keygen(&ctx, &mut ChaCha8Rng::seed_from_u64(1));
        group.bench_function(BenchmarkId::new("encrypt", name), |b| {
            b.iter(|| encrypt_update(&ctx, &flat, &manifest, PackingLayout::Flat, &keys.public, 3).unwrap())
        });
        let cts = encrypt_update(&ctx, &flat, &manifest, PackingLayout::Flat, &keys.public, 3).unwrap();
        group.bench_function(BenchmarkId::new("decrypt", name), |b| {
            b.iter(|| decrypt_update(&ctx, &cts, &keys.secret, &manifest).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, update_roundtrip);
criterion_main!(benches);
