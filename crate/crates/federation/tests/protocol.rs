use std::net::TcpListener;
use std::thread;
use std::time::{Duration, Instant};

use privfed_ckks::{decrypt_update, encrypt_update, keygen, CkksContext, CkksParams, PackingLayout};
use privfed_core::data::{generate_cohort, partition_sites, GeneratorSpec, SitePartition, SiteSpec};
use privfed_core::dp::SvtConfig;
use privfed_core::eval::{summarize, MetricSet};
use privfed_core::learners::TrainConfig;
use privfed_core::param::flatten;
use privfed_core::{Exec, FlatVector, ModelKind, ParamSet};
use privfed_federation::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOKEN: &str = "secret";

fn sites(per_site: &[(usize, usize)], seed: u64) -> Vec<SitePartition> {
    let gen = GeneratorSpec {
        sites: per_site.iter().enumerate().map(|(i, &(n, p))| SiteSpec::new(&format!("site{i}"), n, p)).collect(),
        seed,
        ..Default::default()
    };
    let cohort = generate_cohort(&gen, Exec::Sequential).unwrap();
    partition_sites(&cohort, 0.8, seed).unwrap()
}

fn four_sites() -> Vec<SitePartition> {
    sites(&[(300, 40), (200, 30), (500, 60), (250, 35)], 17)
}

fn spec(learner: ModelKind, rounds: usize, privacy: PrivacySpec) -> RunSpec {
    RunSpec {
        learner,
        rounds,
        train: TrainConfig { learning_rate: 0.05, batch_size: 32, local_epochs: 2, ..Default::default() },
        site_batch_size: Default::default(),
        privacy,
        weighting: Weighting::Unit,
        threshold: 0.5,
        seed: 99,
    }
}

fn opts(sites: &[SitePartition]) -> ServerOptions {
    ServerOptions::new(sites.iter().map(|s| s.name.clone()).collect(), TOKEN)
}

fn run(spec: &RunSpec, sites: Vec<SitePartition>) -> privfed_core::eval::RunReport {
    let o = opts(&sites);
    let (report, clients) = run_sim(spec, sites, &o, Exec::default()).unwrap();
    assert_eq!(report.aborted, None);
    for c in clients {
        c.unwrap();
    }
    report
}

fn he_spec() -> PrivacySpec {
    PrivacySpec::He(HeSpec { params: CkksParams::reduced(), key_seed: 5, packing: PackingLayout::PerTensor })
}

fn max_abs_diff(a: &ParamSet, b: &ParamSet) -> f64 {
    let (fa, _) = flatten(a);
    let (fb, _) = flatten(b);
    fa.as_slice().iter().zip(fb.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn encrypted_aggregation_examples() {
    let ctx = CkksContext::new(CkksParams::reduced()).unwrap();
    let keys = keygen(&ctx, &mut ChaCha8Rng::seed_from_u64(1));
    let manifest = ParamSet::from_parts([("w", vec![300], vec![0.0; 300])]).unwrap().manifest();
    let enc = |v: &[f64], seed| encrypt_update(&ctx, &FlatVector(v.to_vec()), &manifest, PackingLayout::Flat, &keys.public, seed).unwrap();
    let dec = |cts: &[privfed_ckks::Ciphertext]| decrypt_update(&ctx, cts, &keys.secret, &manifest).unwrap();
    let max_err = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let one: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let agg = aggregate_encrypted(&ctx, &[enc(&one, 1)], &[1.0]).unwrap();
    assert!(max_err(&one, dec(&agg).as_slice()) < 1e-3);

    let fours: Vec<_> = (0..4).map(|i| enc(&[4.0; 300], i)).collect();
    let agg = aggregate_encrypted(&ctx, &fours, &[1.0; 4]).unwrap();
    assert!(max_err(&[4.0; 300], dec(&agg).as_slice()) < 1e-3);

    let inputs: Vec<Vec<f64>> = (0..4).map(|_| (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let cts: Vec<_> = inputs.iter().enumerate().map(|(i, v)| enc(v, 10 + i as u64)).collect();
    let decrypted: Vec<FlatVector> = cts.iter().map(|c| dec(c)).collect();
    let oracle = aggregate_plain(&decrypted, &[1.0; 4]).unwrap();
    let agg = aggregate_encrypted(&ctx, &cts, &[1.0; 4]).unwrap();
    assert!(max_err(oracle.as_slice(), dec(&agg).as_slice()) < 1e-3);

    let mut short = cts.clone();
    short[2].pop();
    assert!(matches!(aggregate_encrypted(&ctx, &short, &[1.0; 4]), Err(FedError::Structural(_))));
    let low = aggregate_encrypted(&ctx, &cts, &[1.0; 4]).unwrap();
    assert!(matches!(aggregate_encrypted(&ctx, &[low], &[1.0]), Err(FedError::Ckks(_))));
}

#[test]
fn four_client_mean_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ups: Vec<FlatVector> = (0..4).map(|_| FlatVector((0..66).map(|_| rng.gen_range(-1.0..1.0)).collect())).collect();
    let got = aggregate_plain(&ups, &[1.0; 4]).unwrap();
    for j in 0..66 {
        let want = ups.iter().map(|u| u.as_slice()[j]).sum::<f64>() / 4.0;
        assert!((got.as_slice()[j] - want).abs() < 1e-12);
    }
}

#[test]
fn zero_rounds_reports_initial_params() {
    let s = four_sites();
    let report = run(&spec(ModelKind::LogisticRegression, 0, PrivacySpec::Plain), s);
    assert!(report.rounds.is_empty());
    assert_eq!(report.final_params.as_ref(), Some(&report.initial_params));
    assert_eq!(report.cross_site.unwrap().rows.len(), 4);
}

#[test]
fn zero_epochs_leave_the_model_unchanged() {
    let s = sites(&[(100, 20), (120, 20)], 4);
    let mut sp = spec(ModelKind::FeedForwardNN, 1, PrivacySpec::Plain);
    sp.train.local_epochs = 0;
    let report = run(&sp, s);
    assert_eq!(report.final_params.as_ref(), Some(&report.initial_params));
    for c in &report.rounds[0].clients {
        assert_eq!(c.pre_train, c.post_train);
        assert_eq!(c.steps, 0);
    }
}

#[test]
fn he_mode_tracks_plain_mode() {
    let plain = run(&spec(ModelKind::FeedForwardNN, 8, PrivacySpec::Plain), four_sites());
    let he = run(&spec(ModelKind::FeedForwardNN, 8, he_spec()), four_sites());
    assert_eq!(he.method, "FedAvg_HE");
    let diff = max_abs_diff(plain.final_params.as_ref().unwrap(), he.final_params.as_ref().unwrap());
    assert!(diff < 1e-3, "max parameter difference {diff}");
    let auc = |r: &privfed_core::eval::RunReport| r.cross_site.as_ref().unwrap().summary.auc.mean;
    assert!((auc(&plain) - auc(&he)).abs() < 0.005);
    // Per-tensor packing: five ciphertext chunks per NN update.
    let ctx = CkksContext::new(CkksParams::reduced()).unwrap();
    let per_ct = privfed_ckks::serialized_len(&ctx, ctx.top_level()) as u64;
    assert_eq!(he.rounds[0].clients[0].payload_bytes, 1 + 4 + 5 * (8 + per_ct));
    assert!(he.rounds.iter().flat_map(|r| &r.clients).all(|c| c.privacy_seconds > 0.0));
}

#[test]
fn he_mode_with_example_count_weights_tracks_plain() {
    let mut p = spec(ModelKind::LogisticRegression, 4, PrivacySpec::Plain);
    p.weighting = Weighting::ExampleCount;
    let mut h = p.clone();
    h.privacy = he_spec();
    let plain = run(&p, four_sites());
    let he = run(&h, four_sites());
    assert!(plain.rounds[0].clients.iter().all(|c| c.weight > 100.0));
    let diff = max_abs_diff(plain.final_params.as_ref().unwrap(), he.final_params.as_ref().unwrap());
    assert!(diff < 1e-3, "max parameter difference {diff}");
}

#[test]
fn client_state_round_contract() {
    let site = four_sites().remove(0);
    let init = privfed_core::learners::init_params(ModelKind::FeedForwardNN, 1);
    let payload = Payload::Plain(flatten(&init).0);

    let svt = SvtConfig::new(0.9, 1.0, 2.0, 0.01, 1e-4).unwrap();
    let sp = std::sync::Arc::new(spec(ModelKind::FeedForwardNN, 3, PrivacySpec::Dp(svt.clone())));
    let mut dp = ClientState::new(0, site.clone(), sp, Exec::Sequential).unwrap();
    let out = dp.execute_round(0, &payload).unwrap();
    let Payload::Plain(v) = &out.payload else { panic!("DP payload must be plaintext") };
    let bound = svt.gamma * out.meta.steps as f64;
    assert!(v.as_slice().iter().all(|y| y.abs() <= bound + 1e-15));
    assert!(matches!(dp.execute_round(5, &payload), Err(FedError::Protocol(_))));

    let sp = std::sync::Arc::new(spec(ModelKind::FeedForwardNN, 3, he_spec()));
    let mut he = ClientState::new(0, site, sp, Exec::Sequential).unwrap();
    let out = he.execute_round(0, &payload).unwrap();
    let Payload::Encrypted(chunks) = &out.payload else { panic!("HE payload must be encrypted") };
    assert_eq!(chunks.len(), 5);
}

#[test]
fn flat_packing_sends_one_chunk_for_the_network() {
    let site = four_sites().remove(1);
    let he = PrivacySpec::He(HeSpec { params: CkksParams::reduced(), key_seed: 1, packing: PackingLayout::Flat });
    let sp = std::sync::Arc::new(spec(ModelKind::FeedForwardNN, 1, he));
    let mut c = ClientState::new(0, site, sp, Exec::Sequential).unwrap();
    let init = privfed_core::learners::init_params(ModelKind::FeedForwardNN, 1);
    let out = c.execute_round(0, &Payload::Plain(flatten(&init).0)).unwrap();
    let Payload::Encrypted(chunks) = &out.payload else { panic!() };
    assert_eq!(chunks.len(), 1);
}

#[test]
fn sim_runs_are_deterministic() {
    let svt = SvtConfig::new(0.9, 1.0, 2e-4, 0.01, 1e-4).unwrap();
    for privacy in [PrivacySpec::Plain, PrivacySpec::Dp(svt)] {
        let sp = spec(ModelKind::LogisticRegression, 3, privacy);
        let a = run(&sp, four_sites());
        let b = run(&sp, four_sites());
        assert_eq!(a.without_timings(), b.without_timings());
    }
}

#[test]
fn aggregation_follows_every_arrival() {
    let report = run(&spec(ModelKind::LogisticRegression, 4, PrivacySpec::Plain), four_sites());
    for r in &report.rounds {
        let last = r.clients.iter().map(|c| c.arrival_offset_seconds).fold(0.0, f64::max);
        assert!(r.aggregation_offset_seconds >= last);
    }
}

#[test]
fn cross_site_summary_is_consistent() {
    let report = run(&spec(ModelKind::LogisticRegression, 2, PrivacySpec::Plain), four_sites());
    let table = report.cross_site.unwrap();
    assert_eq!(table.rows.len(), 4);
    let sets: Vec<MetricSet> = table.rows.iter().map(|r| r.metrics.clone()).collect();
    let again = summarize(&sets);
    assert!((again.auc.mean - table.summary.auc.mean).abs() < 1e-12);
    assert!((again.auc.std - table.summary.auc.std).abs() < 1e-12);

    // Same data at every site: the final model scores identically everywhere.
    let one = sites(&[(200, 30)], 8).remove(0);
    let clones: Vec<SitePartition> =
        (0..3).map(|i| SitePartition { name: format!("copy{i}"), ..one.clone() }).collect();
    let report = run(&spec(ModelKind::LogisticRegression, 2, PrivacySpec::Plain), clones);
    assert_eq!(report.cross_site.unwrap().summary.auc.std, 0.0);
}

#[test]
fn sim_and_tcp_reports_match() {
    let sp = spec(ModelKind::LogisticRegression, 3, PrivacySpec::Plain);
    let sim = run(&sp, four_sites());

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let all = four_sites();
    let o = opts(&all);
    let handles: Vec<_> = all
        .into_iter()
        .rev()
        .map(|site| {
            let setup = ClientSetup { site, spec: sp.clone(), token: TOKEN.into(), exec: Exec::default() };
            thread::spawn(move || client_run(tcp_connect(addr, Duration::from_secs(5))?, setup))
        })
        .collect();
    let links = accept_clients(&sp, &o, tcp_incoming(&listener, Instant::now() + Duration::from_secs(10), o.round_timeout)).unwrap();
    let tcp = server_run(&sp, &o, links).unwrap();
    for h in handles {
        h.join().unwrap().unwrap();
    }
    assert_eq!(sim.without_timings(), tcp.without_timings());
}

#[test]
fn bad_token_is_rejected_and_run_proceeds() {
    let all = sites(&[(100, 20)], 2);
    let sp = spec(ModelKind::LogisticRegression, 1, PrivacySpec::Plain);
    let o = opts(&all);
    let mut ends = Vec::new();
    let mut handles = Vec::new();
    for token in ["wrong", TOKEN] {
        let (server_end, client_end) = sim_pair();
        ends.push(Ok(server_end));
        let setup = ClientSetup { site: all[0].clone(), spec: sp.clone(), token: token.into(), exec: Exec::Sequential };
        handles.push(thread::spawn(move || client_run(client_end, setup)));
    }
    let links = accept_clients(&sp, &o, ends).unwrap();
    let report = server_run(&sp, &o, links).unwrap();
    assert!(report.aborted.is_none());
    let mut results = handles.into_iter().map(|h| h.join().unwrap());
    assert!(matches!(results.next().unwrap(), Err(FedError::Rejected(m)) if m.contains("token")));
    assert_eq!(results.next().unwrap().unwrap().rounds, 1);
}

#[test]
fn silent_client_aborts_with_partial_report() {
    let all = sites(&[(100, 20), (100, 20)], 6);
    let sp = spec(ModelKind::LogisticRegression, 3, PrivacySpec::Plain);
    let mut o = opts(&all);
    o.round_timeout = Duration::from_millis(300);
    let (server_a, client_a) = sim_pair();
    let (server_b, mut client_b) = sim_pair();
    let setup = ClientSetup { site: all[0].clone(), spec: sp.clone(), token: TOKEN.into(), exec: Exec::Sequential };
    let good = thread::spawn(move || client_run(client_a, setup));
    // Joins properly, answers nothing afterwards.
    let join = serde_json::json!({"site": all[1].name, "token": TOKEN, "spec": sp.public_view()});
    client_b.send(&Frame::new(MsgType::Join, 0, encode_body(&join, &Payload::Empty))).unwrap();
    let links = accept_clients(&sp, &o, vec![Ok(server_a), Ok(server_b)]).unwrap();
    let report = server_run(&sp, &o, links).unwrap();
    let msg = report.aborted.clone().unwrap();
    assert!(msg.contains("timed out") && msg.contains("site1"), "{msg}");
    assert!(report.rounds.is_empty());
    assert!(report.final_params.is_none());
    assert!(matches!(good.join().unwrap(), Err(FedError::Remote(_))));
    drop(client_b);
}

#[test]
fn mismatched_spec_is_rejected() {
    let all = sites(&[(100, 20)], 2);
    let sp = spec(ModelKind::LogisticRegression, 1, PrivacySpec::Plain);
    let mut other = sp.clone();
    other.rounds = 2;
    let (server_end, client_end) = sim_pair();
    let setup = ClientSetup { site: all[0].clone(), spec: other, token: TOKEN.into(), exec: Exec::Sequential };
    let c = thread::spawn(move || client_run(client_end, setup));
    assert!(accept_clients(&sp, &opts(&all), vec![Ok(server_end)]).is_err());
    assert!(matches!(c.join().unwrap(), Err(FedError::Rejected(m)) if m.contains("different configuration")));
}

#[test]
fn clients_with_different_he_keys_are_rejected() {
    let all = sites(&[(100, 20), (100, 20)], 3);
    let sp = spec(ModelKind::LogisticRegression, 1, he_spec());
    let mut other = sp.clone();
    other.privacy = PrivacySpec::He(HeSpec { params: CkksParams::reduced(), key_seed: 6, packing: PackingLayout::PerTensor });
    // The server's view does not include the seed, so both specs look alike.
    assert_eq!(sp.public_view(), other.public_view());
    let mut ends = Vec::new();
    let mut handles = Vec::new();
    for (site, s) in all.iter().zip([sp.clone(), other]) {
        let (server_end, client_end) = sim_pair();
        ends.push(Ok(server_end));
        let setup = ClientSetup { site: site.clone(), spec: s, token: TOKEN.into(), exec: Exec::Sequential };
        handles.push(thread::spawn(move || client_run(client_end, setup)));
    }
    assert!(accept_clients(&sp, &opts(&all), ends).is_err());
    let second = handles.pop().unwrap().join().unwrap();
    assert!(matches!(second, Err(FedError::Rejected(m)) if m.contains("different HE key")));
}

#[test]
fn report_config_omits_the_key_seed() {
    let report = run(&spec(ModelKind::LogisticRegression, 1, he_spec()), sites(&[(100, 20)], 9));
    assert!(report.config["privacy"].get("key_seed").is_none());
}
