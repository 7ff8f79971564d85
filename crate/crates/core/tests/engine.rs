use iab_core::engine::{run, Simulation};
use iab_core::scenario::{Config, ConnectivityMode};

fn short(seed: u64) -> Config {
    Config {
        sim_duration: 6.0,
        warmup: 1.0,
        seed,
        ..Config::default()
    }
}

#[test]
fn identical_config_gives_identical_report() {
    let cfg = Config {
        connectivity_mode: ConnectivityMode::ScFsScan,
        blocker_density: 0.3,
        ..short(11)
    };
    let a = run(cfg.clone()).unwrap().to_json();
    let b = run(cfg).unwrap().to_json();
    assert_eq!(a, b);
}

#[test]
fn different_seeds_differ() {
    let a = run(short(1)).unwrap();
    let b = run(short(2)).unwrap();
    assert_ne!(a.throughput.mean_ue_throughput_bps, b.throughput.mean_ue_throughput_bps);
}

#[test]
fn no_blockers_means_no_blockage_and_no_switches() {
    for mode in [ConnectivityMode::ScFs, ConnectivityMode::ScFsScan] {
        let cfg = Config {
            connectivity_mode: mode,
            blocker_density: 0.0,
            ..short(3)
        };
        let mut sim = Simulation::new(cfg).unwrap();
        let relays: Vec<_> = sim.scenario().relays().map(|r| r.id).collect();
        let ues: Vec<_> = sim.scenario().ue_ids().collect();
        while !sim.is_finished() {
            sim.step().unwrap();
            if sim.slot() % 97 == 0 {
                assert!(relays.iter().all(|&r| ues.iter().all(|&u| !sim.is_blocked(r, u))));
            }
        }
        let rep = sim.report().unwrap();
        if mode == ConnectivityMode::ScFs {
            assert_eq!(rep.switches, 0);
        }
        assert_eq!(rep.switches_blockage, 0);
    }
}

#[test]
fn audit_balances_and_rates_stay_under_the_cap() {
    for mode in [ConnectivityMode::Sc, ConnectivityMode::Mc, ConnectivityMode::ScFsScan] {
        let cfg = Config {
            connectivity_mode: mode,
            blocker_density: 0.5,
            ..short(5)
        };
        let cap = cfg.bandwidth * cfg.se_cap;
        let rep = run(cfg).unwrap();
        assert!(rep.conservation.balanced, "{mode}: {:?}", rep.conservation);
        assert!(rep.conservation.delivered_bytes > 0);
        for ue in &rep.throughput.per_ue {
            if let Some(t) = ue.mean_bps {
                assert!(t <= cap, "UE {} at {t} bit/s", ue.ue);
            }
        }
        assert_eq!(rep.half_duplex_slots_checked, rep.slots);
    }
}

#[test]
fn blockers_do_not_help_single_connectivity() {
    let base = Config {
        sim_duration: 20.0,
        warmup: 2.0,
        ..Config::default()
    };
    for seed in 1..=3 {
        let clear = run(Config {
            blocker_density: 0.0,
            seed,
            ..base.clone()
        })
        .unwrap();
        let crowded = run(Config {
            blocker_density: 0.5,
            seed,
            ..base.clone()
        })
        .unwrap();
        let (a, b) = (
            clear.throughput.mean_ue_throughput_bps.unwrap(),
            crowded.throughput.mean_ue_throughput_bps.unwrap(),
        );
        assert!(a >= b, "seed {seed}: {a} < {b}");
    }
}

#[test]
fn bigger_files_are_not_faster_at_low_load() {
    let base = Config {
        sim_duration: 20.0,
        warmup: 2.0,
        session_rate_dl: 0.05,
        session_rate_ul: 0.02,
        blocker_density: 0.0,
        ..Config::default()
    };
    for seed in 1..=3 {
        let small = run(Config { seed, ..base.clone() }).unwrap();
        let big = run(Config {
            seed,
            file_size: 2 * base.file_size,
            ..base.clone()
        })
        .unwrap();
        let (a, b) = (
            small.throughput.mean_ue_throughput_bps.unwrap(),
            big.throughput.mean_ue_throughput_bps.unwrap(),
        );
        assert!(b <= a * 1.0001, "seed {seed}: {b} > {a}");
    }
}

/// A 2 MB file needs over 5 ms even at the rate cap, so nothing that
/// arrives in the last millisecond can finish.
#[test]
fn warmup_sessions_are_excluded() {
    let rep = run(Config {
        sim_duration: 3.0,
        warmup: 2.999,
        ..Config::default()
    })
    .unwrap();
    assert!(rep.throughput.insufficient_data);
    assert_eq!(rep.throughput.mean_ue_throughput_bps, None);
}
