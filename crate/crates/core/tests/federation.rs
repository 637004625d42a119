mod common;

use certfed::data::{make_splits, synth_dataset, SynthSpec};
use certfed::federation::{
    hypergeometric_tail, median_aggregate, run_simulation, sample_quorum, ClientPopulation, ClientUpdate,
    GateThresholds, SimConfig, Verdict,
};
use certfed::nn::{serialize, Arch, TrainConfig};
use certfed::rng::rng_for;
use proptest::prelude::*;

fn update(id: usize, params: Vec<f64>, bad: bool) -> ClientUpdate {
    ClientUpdate {
        client_id: id,
        params,
        is_malicious: bad,
    }
}

proptest! {
    #[test]
    fn median_stays_in_benign_envelope(
        benign in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 4), 3),
        evil in proptest::collection::vec(proptest::collection::vec(prop_oneof![Just(1e9), Just(-1e9), -1e9f64..1e9], 4), 2),
    ) {
        let mut ups: Vec<ClientUpdate> = benign.iter().enumerate().map(|(i, p)| update(i, p.clone(), false)).collect();
        ups.extend(evil.iter().enumerate().map(|(i, p)| update(3 + i, p.clone(), true)));
        let agg = median_aggregate(&ups).unwrap();
        for j in 0..4 {
            let lo = benign.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
            let hi = benign.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(agg[j] >= lo && agg[j] <= hi);
        }
    }

    #[test]
    fn majority_captures_median(v in proptest::collection::vec(-1e6f64..1e6, 3), other in proptest::collection::vec(-1e6f64..1e6, 3)) {
        let ups = vec![
            update(0, v.clone(), true),
            update(1, other.clone(), false),
            update(2, v.clone(), true),
            update(3, other.iter().map(|x| -x).collect(), false),
            update(4, v.clone(), true),
        ];
        prop_assert_eq!(median_aggregate(&ups).unwrap(), v);
    }
}

#[test]
fn median_rejects_mismatched_lengths() {
    let ups = vec![update(0, vec![1.0, 2.0], false), update(1, vec![1.0], false)];
    assert!(matches!(median_aggregate(&ups), Err(certfed::Error::RejectedInput(_))));
}

fn binom(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Exact tail from binomial coefficients.
fn tail_oracle(pop: u64, marked: u64, draws: u64, k: u64) -> f64 {
    (k..=draws.min(marked))
        .map(|i| binom(marked, i) * binom(pop - marked, draws - i) / binom(pop, draws))
        .sum()
}

#[test]
fn hypergeometric_tail_matches_combinatorics() {
    for &(n, m, d, k) in &[(500, 175, 5, 3), (50, 17, 5, 3), (10, 3, 4, 1), (20, 20, 5, 5), (30, 0, 5, 1)] {
        let got = hypergeometric_tail(n, m, d, k).unwrap();
        let want = tail_oracle(n, m, d, k);
        assert!((got - want).abs() < 1e-12, "{n} {m} {d} {k}: {got} vs {want}");
    }
    assert_eq!(hypergeometric_tail(500, 175, 5, 0).unwrap(), 1.0);
}

#[test]
fn quorum_frequency_tracks_tail() {
    let pop = ClientPopulation::new(500, 175, 500, 3).unwrap();
    let rounds = 20_000;
    let mut rng = rng_for(3, &[1]);
    let hits = (0..rounds)
        .filter(|_| {
            let q = sample_quorum(&pop, 5, &mut rng).unwrap();
            q.iter().filter(|&&c| pop.is_malicious(c)).count() >= 3
        })
        .count();
    let p = tail_oracle(500, 175, 5, 3);
    let se = (p * (1.0 - p) / rounds as f64).sqrt();
    let freq = hits as f64 / rounds as f64;
    assert!((freq - p).abs() < 4.0 * se, "{freq} vs {p}");
}

#[test]
fn quorum_is_seeded() {
    let pop = ClientPopulation::new(40, 10, 400, 1).unwrap();
    let a = sample_quorum(&pop, 7, &mut rng_for(5, &[2])).unwrap();
    let b = sample_quorum(&pop, 7, &mut rng_for(5, &[2])).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 7);
}

fn sim_setup() -> (certfed::data::DefenderSplits, certfed::nn::Model) {
    let data = synth_dataset(&SynthSpec {
        classes: 3,
        shape: vec![6],
        per_class: 60,
        separation: 0.6,
        noise: 0.08,
        seed: 4,
    })
    .unwrap();
    let splits = make_splits(&data, 20, 30, false).unwrap();
    let model = Arch::preset("desk_mlp", &[6], 3).unwrap().build(2).unwrap();
    (splits, model)
}

fn small_sim(num_malicious: usize) -> SimConfig {
    SimConfig {
        num_clients: 8,
        num_malicious,
        quorum_size: 5,
        rounds: 4,
        local_train: TrainConfig {
            epochs: 2,
            learning_rate: 0.2,
            batch_size: 8,
            ..TrainConfig::default()
        },
        local_pgd_steps: 3,
        defender_pgd_steps: 5,
        gate: GateThresholds {
            eps_crt: 0.02,
            eps_adv: 0.02,
            ..GateThresholds::default()
        },
        seed: 9,
        ..SimConfig::default()
    }
}

#[test]
fn simulation_is_deterministic_and_consistent() {
    let (splits, init) = sim_setup();
    let cfg = small_sim(0);
    let mut seen = Vec::new();
    let a = run_simulation(&cfg, &splits, &init, &mut |r, m| {
        seen.push((r.round, serialize::model_hash(m)));
        Ok(())
    })
    .unwrap();
    let b = run_simulation(&cfg, &splits, &init, &mut |_, _| Ok(())).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(serialize::to_bytes(&a.final_model), serialize::to_bytes(&b.final_model));
    assert_eq!(a.records.len(), 4);
    assert!(a.records[0].baseline);
    for (r, (round, hash)) in a.records.iter().zip(&seen) {
        assert_eq!(r.round, *round);
        assert_eq!(&r.model_hash, hash);
        assert_eq!(r.num_malicious_in_quorum, 0);
        assert!(!r.attack_submitted);
    }
    let mut last = a.records[0].model_hash.clone();
    for r in &a.records[1..] {
        match r.verdict {
            Verdict::Accepted => last = r.candidate_hash.clone(),
            Verdict::Rejected(_) => assert_eq!(r.model_hash, last),
        }
    }
}

#[test]
fn simulation_config_errors_before_round_one() {
    let (splits, init) = sim_setup();
    let bad = SimConfig {
        quorum_size: 9,
        ..small_sim(0)
    };
    let mut rounds = 0;
    assert!(matches!(
        run_simulation(&bad, &splits, &init, &mut |_, _| {
            rounds += 1;
            Ok(())
        }),
        Err(certfed::Error::Config(_))
    ));
    assert_eq!(rounds, 0);
    let wrong_model = Arch::preset("desk_mlp", &[5], 3).unwrap().build(0).unwrap();
    assert!(run_simulation(&small_sim(0), &splits, &wrong_model, &mut |_, _| Ok(())).is_err());
}
