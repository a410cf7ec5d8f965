use std::collections::BTreeSet;
use std::sync::Arc;

use netdp_core::adversary::{Adversary, AdversaryConfig, Capability, SelectionMode, Strategy};
use netdp_core::defense::{dedup_reports, ArrivalDefense, DefenseConfig};
use netdp_core::harness::{emit_csv, read_results, run_experiment, sweep, ExperimentConfig};
use netdp_core::netsim::{
    build_topology, run_window, AggregationWindow, LinkModel, NetOptions, PacketStage, TopologyKind, TopologyParams,
};
use netdp_core::{ClientReport, ProtocolKind, ProtocolSpec, SeedTree};
use proptest::prelude::*;

fn small(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.dataset.k = 8;
    c.dataset.n = 600;
    c.repetitions = 2;
    c.root_seed = seed;
    c
}

fn honest(spec: &ProtocolSpec, n: u64, seed: u64) -> Vec<Arc<ClientReport>> {
    let seeds = SeedTree::new(seed);
    (0..n)
        .map(|i| {
            let p = spec.perturb((i % spec.k() as u64) as u32, &mut seeds.stream("perturb", &[i])).unwrap();
            Arc::new(ClientReport::new(i, i, p, 0))
        })
        .collect()
}

#[test]
fn grid_cells_appear_once_per_repetition() {
    let mut c = small(4);
    c.grid.protocols = vec![ProtocolKind::Krr, ProtocolKind::Oue];
    c.grid.capabilities = vec![Capability::Drop, Capability::Delay];
    let s = sweep(&c, false, Some(2)).unwrap();
    // 2 protocols x 2 strategies x (3 drop + 2 delay) x 2 reps
    assert_eq!(s.rows.len(), 2 * 2 * 5 * 2);
    let keys: BTreeSet<_> = s
        .rows
        .iter()
        .map(|r| (r.protocol.clone(), r.strategy.clone(), r.capability.clone(), r.param.to_bits(), r.rep))
        .collect();
    assert_eq!(keys.len(), s.rows.len());
}

#[test]
fn emitted_csv_parses_back() {
    let mut c = small(9);
    c.adversary = Some(AdversaryConfig::new(Strategy::Ria, Capability::Drop));
    let r = run_experiment(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    emit_csv(&r.rows, &path).unwrap();
    let back = read_results(&path).unwrap();
    assert_eq!(back.len(), r.rows.len());
    for (a, b) in r.rows.iter().zip(&back) {
        assert_eq!((a.protocol.as_str(), a.rep, a.seed), (b.protocol.as_str(), b.rep, b.seed));
        assert!((a.err_attack - b.err_attack).abs() <= 5e-7);
        assert!((a.attack_gain - b.attack_gain).abs() <= 5e-7);
    }
    let again = dir.path().join("again.csv");
    emit_csv(&back, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn replay_through_network_then_dedup() {
    let spec = ProtocolSpec::krr(4, 1.0).unwrap();
    let reports = honest(&spec, 400, 2);
    let topo = build_topology(TopologyKind::Star, 400, &TopologyParams::default(), &mut SeedTree::new(1).stream("t", &[])).unwrap();
    let mut a = AdversaryConfig::new(Strategy::Ria, Capability::Replay);
    a.replay_factor = 5;
    let adv = Adversary::new(a, spec.clone(), BTreeSet::new()).unwrap();
    let window = AggregationWindow::new(0, 1_000).unwrap();
    let opts = NetOptions {
        payload_opaque: false,
        domain_k: 4,
    };
    let out = run_window(&topo, &reports, &window, &opts, Some(&adv as &dyn PacketStage), None, &SeedTree::new(3)).unwrap();
    assert!(out.conservation.balanced());
    let supporting = reports.iter().filter(|r| spec.supports(&r.payload, 0).unwrap()).count();
    assert_eq!(out.arrived.len(), reports.len() + 5 * supporting);
    let deduped = dedup_reports(out.arrived.clone());
    assert_eq!(deduped.len(), reports.len());

    let defense = ArrivalDefense {
        config: DefenseConfig {
            dedup: true,
            ..Default::default()
        },
    };
    let filtered =
        run_window(&topo, &reports, &window, &opts, Some(&adv as &dyn PacketStage), Some(&defense), &SeedTree::new(3)).unwrap();
    assert_eq!(filtered.arrived, deduped);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn adversary_off_gives_zero_gain(seed in any::<u64>(), proto in 0usize..3) {
        let mut c = small(seed);
        c.protocol.kind = [ProtocolKind::Krr, ProtocolKind::Oue, ProtocolKind::Olh][proto];
        let r = run_experiment(&c).unwrap();
        for row in &r.rows {
            prop_assert_eq!(row.attack_gain, 0.0);
            prop_assert_eq!(row.err_clean, row.err_attack);
        }
    }

    #[test]
    fn lossy_windows_conserve_packets(seed in any::<u64>(), plr in 0.0f64..1.0, drop in 0.0f64..1.0, delay in 0u64..50) {
        let spec = ProtocolSpec::krr(4, 1.0).unwrap();
        let reports = honest(&spec, 200, seed);
        let params = TopologyParams { access: LinkModel::lossy(plr), ..Default::default() };
        let topo = build_topology(TopologyKind::StarWithShuffler, 200, &params, &mut SeedTree::new(seed).stream("t", &[])).unwrap();
        let mut a = AdversaryConfig::new(Strategy::Rpa, Capability::Drop);
        a.selection_mode = SelectionMode::Uniform;
        a.drop_rate = drop;
        let adv = Adversary::new(a, spec, BTreeSet::new()).unwrap();
        let window = AggregationWindow::new(0, 10 + delay).unwrap();
        let opts = NetOptions { payload_opaque: true, domain_k: 4 };
        let out = run_window(&topo, &reports, &window, &opts, Some(&adv as &dyn PacketStage), None, &SeedTree::new(seed ^ 1)).unwrap();
        prop_assert!(out.conservation.balanced());
        prop_assert_eq!(out.conservation.sent, 200);
        prop_assert_eq!(out.arrived.len() as u64, out.conservation.arrived_in_window);
        let again = run_window(&topo, &reports, &window, &opts, Some(&adv as &dyn PacketStage), None, &SeedTree::new(seed ^ 1)).unwrap();
        prop_assert_eq!(out.arrived, again.arrived);
    }
}
