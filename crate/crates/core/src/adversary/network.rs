use std::sync::Arc;

use super::{Adversary, Capability, SelectionMode};
use crate::netsim::{Event, EventKind, Packet, PacketStage, StageContext};
use crate::{Error, Result};

impl Adversary {
    /// Whether a drop or delay may hit `packet`.
    ///
    /// Targeted mode spares packets that already support a target, colluding
    /// mode spares the adversary's own users.
    fn suppressible(&self, packet: &Packet) -> Result<bool> {
        Ok(match self.config.selection_mode {
            SelectionMode::Uniform => true,
            SelectionMode::Targeted => !self.supports_target(packet)?,
            SelectionMode::Colluding => !self.corrupted.contains(&packet.report.client_id),
        })
    }

    fn supports_target(&self, packet: &Packet) -> Result<bool> {
        if packet.payload_opaque || !self.config.can_read_payload {
            return Err(Error::Capability(format!(
                "targeted selection needs readable payloads (report {})",
                packet.report_id()
            )));
        }
        Ok(self.config.targets.supported_by(&self.spec, &packet.report.payload))
    }

    /// Drops each eligible packet with probability `drop_rate`.
    pub fn apply_drop(&self, packets: Vec<Packet>, ctx: &mut StageContext<'_>) -> Result<Vec<Packet>> {
        let rate = self.config.drop_rate;
        let mut kept = Vec::with_capacity(packets.len());
        for mut p in packets {
            let u = ctx.seeds.uniform("adversary-drop", &[p.report_id(), p.copy as u64]);
            if u < rate && self.suppressible(&p)? {
                p.dropped = true;
                ctx.log.push(Event::new(p.send_time, EventKind::DroppedAdversary, p.source, &p));
            } else {
                kept.push(p);
            }
        }
        Ok(kept)
    }

    /// Re-injects `replay_factor` copies of each selected packet. Copies keep
    /// the original report id; copy `i` leaves `i * replay_spacing` ticks after
    /// the original and then crosses the network like any other packet.
    pub fn apply_replay(&self, packets: Vec<Packet>, ctx: &mut StageContext<'_>) -> Result<Vec<Packet>> {
        let cfg = &self.config;
        if cfg.replay_factor < 1 {
            return Err(Error::param("replay factor must be at least 1"));
        }
        let mut out = Vec::with_capacity(packets.len());
        for p in packets {
            let selected = match cfg.selection_mode {
                SelectionMode::Targeted => self.supports_target(&p)?,
                SelectionMode::Uniform => ctx.seeds.uniform("adversary-replay", &[p.report_id()]) < cfg.replay_fraction,
                SelectionMode::Colluding => self.corrupted.contains(&p.report.client_id),
            };
            if selected && p.copy == 0 {
                for i in 1..=cfg.replay_factor {
                    let copy = Packet {
                        report: Arc::clone(&p.report),
                        copy: i,
                        path_so_far: vec![p.source],
                        send_time: p.send_time + i as u64 * cfg.replay_spacing,
                        replayed_from: Some(p.report_id()),
                        ..p.clone()
                    };
                    ctx.log.push(Event::new(copy.send_time, EventKind::Sent, copy.source, &copy));
                    out.push(copy);
                }
            }
            out.push(p);
        }
        Ok(out)
    }

    /// Holds a `delay_ratio` fraction of eligible packets for `delay_amount`
    /// ticks at the first hop.
    pub fn apply_delay(&self, packets: Vec<Packet>, ctx: &mut StageContext<'_>) -> Result<Vec<Packet>> {
        let cfg = &self.config;
        if cfg.delay_amount == 0 {
            return Ok(packets);
        }
        let mut out = Vec::with_capacity(packets.len());
        for mut p in packets {
            let u = ctx.seeds.uniform("adversary-delay", &[p.report_id(), p.copy as u64]);
            if u < cfg.delay_ratio && self.suppressible(&p)? {
                p.held += cfg.delay_amount;
                ctx.log.push(Event::new(p.send_time, EventKind::Delayed, p.source, &p));
            }
            out.push(p);
        }
        Ok(out)
    }
}

impl PacketStage for Adversary {
    fn apply(&self, packets: Vec<Packet>, ctx: &mut StageContext<'_>) -> Result<Vec<Packet>> {
        match self.config.capability {
            Capability::UserCorruption => Ok(packets),
            Capability::Drop => self.apply_drop(packets, ctx),
            Capability::Replay => self.apply_replay(packets, ctx),
            Capability::Delay => self.apply_delay(packets, ctx),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::adversary::{AdversaryConfig, Strategy, TargetSet};
    use crate::ldp::{aggregate, estimate, ClientReport, Payload, ProtocolSpec};
    use crate::netsim::*;
    use crate::SeedTree;
    use proptest::prelude::*;

    fn packets(spec: &ProtocolSpec, n: u64, opaque: bool, seed: u64) -> Vec<Packet> {
        let seeds = SeedTree::new(seed);
        (0..n)
            .map(|i| {
                let item = (i % spec.k() as u64) as u32;
                let payload = spec.perturb(item, &mut seeds.stream("perturb", &[i])).unwrap();
                let r = Arc::new(ClientReport::new(i, i, payload, 0));
                Packet::new(r, 1 + i as NodeId, opaque, 20)
            })
            .collect()
    }

    fn stage(adv: &Adversary, input: Vec<Packet>, seed: u64) -> (Vec<Packet>, EventLog) {
        let mut log = EventLog::default();
        let mut ctx = StageContext {
            log: &mut log,
            seeds: SeedTree::new(seed),
            window: AggregationWindow::new(0, 100).unwrap(),
        };
        let out = adv.apply(input, &mut ctx).unwrap();
        (out, log)
    }

    fn adversary(strategy: Strategy, cap: Capability, mode: SelectionMode, f: impl FnOnce(&mut AdversaryConfig)) -> Adversary {
        let spec = ProtocolSpec::krr(16, 1.0).unwrap();
        let mut cfg = AdversaryConfig::new(strategy, cap);
        cfg.selection_mode = mode;
        cfg.targets = TargetSet::new([3]);
        f(&mut cfg);
        Adversary::new(cfg, spec, BTreeSet::new()).unwrap()
    }

    #[test]
    fn drop_extremes() {
        let spec = ProtocolSpec::krr(16, 1.0).unwrap();
        let input = packets(&spec, 1_000, true, 1);
        let a = adversary(Strategy::Rpa, Capability::Drop, SelectionMode::Uniform, |c| c.drop_rate = 0.0);
        assert_eq!(stage(&a, input.clone(), 2).0, input);
        let a = adversary(Strategy::Rpa, Capability::Drop, SelectionMode::Uniform, |c| c.drop_rate = 1.0);
        let (out, log) = stage(&a, input, 2);
        assert!(out.is_empty());
        assert_eq!(log.count(EventKind::DroppedAdversary), 1_000);
    }

    #[test]
    fn uniform_drop_rate() {
        let spec = ProtocolSpec::krr(16, 1.0).unwrap();
        let n = 100_000;
        let a = adversary(Strategy::Rpa, Capability::Drop, SelectionMode::Uniform, |c| c.drop_rate = 0.3);
        let (out, _) = stage(&a, packets(&spec, n, true, 3), 4);
        let frac = out.len() as f64 / n as f64;
        let sigma = (0.7f64 * 0.3 / n as f64).sqrt();
        assert!((frac - 0.7).abs() <= 3.0 * sigma, "{frac}");
    }

    #[test]
    fn targeted_drop_spares_supporters() {
        let spec = ProtocolSpec::krr(16, 1.0).unwrap();
        let a = adversary(Strategy::Ria, Capability::Drop, SelectionMode::Targeted, |c| c.drop_rate = 1.0);
        let (out, _) = stage(&a, packets(&spec, 2_000, false, 5), 6);
        assert!(!out.is_empty());
        assert!(out.iter().all(|p| p.report.payload == Payload::Krr(3)));
    }

    #[test]
    fn targeted_needs_readable_payloads() {
        let spec = ProtocolSpec::krr(16, 1.0).unwrap();
        let a = adversary(Strategy::Ria, Capability::Drop, SelectionMode::Targeted, |c| c.drop_rate = 0.5);
        let mut log = EventLog::default();
        let mut ctx = StageContext {
            log: &mut log,
            seeds: SeedTree::new(1),
            window: AggregationWindow::new(0, 100).unwrap(),
        };
        let err = a.apply(packets(&spec, 10, true, 1), &mut ctx).unwrap_err();
        assert!(matches!(err, Error::Capability(_)));
    }

    #[test]
    fn replay_copies_keep_report_id() {
        let spec = ProtocolSpec::krr(16, 1.0).unwrap();
        let supporting: Vec<Packet> = packets(&spec, 2_000, false, 7)
            .into_iter()
            .filter(|p| p.report.payload == Payload::Krr(3))
            .take(1)
            .collect();
        let id = supporting[0].report_id();
        let a = adversary(Strategy::Ria, Capability::Replay, SelectionMode::Targeted, |c| c.replay_factor = 5);
        let (out, log) = stage(&a, supporting, 8);
        assert_eq!(out.len(), 6);
        assert!(out.iter().all(|p| p.report_id() == id));
        assert_eq!(out.iter().filter(|p| p.replayed_from == Some(id)).count(), 5);
        assert_eq!(log.count(EventKind::Sent), 5);

        // factor 1 means one extra copy
        let a = adversary(Strategy::Rpa, Capability::Replay, SelectionMode::Uniform, |c| {
            c.replay_factor = 1;
            c.replay_fraction = 1.0;
        });
        let (out, _) = stage(&a, packets(&spec, 10, true, 1), 2);
        assert_eq!(out.len(), 20);
    }

    #[test]
    fn delay_zero_is_identity_and_ratio_holds() {
        let spec = ProtocolSpec::krr(16, 1.0).unwrap();
        let input = packets(&spec, 100_000, true, 9);
        let a = adversary(Strategy::Rpa, Capability::Delay, SelectionMode::Uniform, |c| c.delay_amount = 0);
        assert_eq!(stage(&a, input.clone(), 1).0, input);
        let a = adversary(Strategy::Rpa, Capability::Delay, SelectionMode::Uniform, |c| {
            c.delay_amount = 500;
            c.delay_ratio = 0.5;
        });
        let (out, _) = stage(&a, input, 1);
        let held = out.iter().filter(|p| p.held == 500).count() as f64 / 100_000.0;
        assert!((held - 0.5).abs() <= 3.0 * (0.25f64 / 100_000.0).sqrt());
    }

    #[test]
    fn colluding_mode_favors_own_users() {
        let spec = ProtocolSpec::krr(16, 1.0).unwrap();
        let mut cfg = AdversaryConfig::new(Strategy::Rpa, Capability::Drop);
        cfg.drop_rate = 1.0;
        let bad: BTreeSet<u64> = (0..10).collect();
        let a = Adversary::new(cfg.clone(), spec, bad.clone()).unwrap();
        let (out, _) = stage(&a, packets(&spec, 100, true, 1), 1);
        assert_eq!(out.len(), 10);
        assert!(out.iter().all(|p| bad.contains(&p.report.client_id)));

        cfg.capability = Capability::Replay;
        cfg.replay_factor = 3;
        let a = Adversary::new(cfg, spec, bad).unwrap();
        let (out, _) = stage(&a, packets(&spec, 100, true, 1), 1);
        assert_eq!(out.len(), 130);
    }

    #[test]
    fn network_ops_never_mint_report_ids() {
        let spec = ProtocolSpec::krr(16, 1.0).unwrap();
        let input = packets(&spec, 3_000, false, 11);
        let ids: BTreeSet<u64> = input.iter().map(|p| p.report_id()).collect();
        for cap in Capability::NETWORK {
            for mode in [SelectionMode::Uniform, SelectionMode::Targeted] {
                let a = adversary(Strategy::Ria, cap, mode, |c| {
                    c.drop_rate = 0.5;
                    c.replay_factor = 10;
                    c.delay_ratio = 0.5;
                });
                let (out, _) = stage(&a, input.clone(), 12);
                assert!(out.iter().all(|p| ids.contains(&p.report_id())));
            }
        }
    }

    #[test]
    fn ria_gain_grows_with_drop_rate_and_replay_factor() {
        // coupled randomness: identical honest stream and per-packet uniforms
        let spec = ProtocolSpec::krr(16, 1.0).unwrap();
        let input = packets(&spec, 20_000, false, 13);
        let target_est = |out: &[Packet]| {
            let c = aggregate(&spec, out.iter().map(|p| &p.report.payload)).unwrap();
            estimate(&spec, &c, out.len() as u64).unwrap().freq[3]
        };
        let mut last = f64::MIN;
        for d in [0.0, 0.1, 0.3, 0.5] {
            let a = adversary(Strategy::Ria, Capability::Drop, SelectionMode::Targeted, |c| c.drop_rate = d);
            let f = target_est(&stage(&a, input.clone(), 14).0);
            assert!(f >= last, "drop {d}: {f} < {last}");
            last = f;
        }
        let mut last = f64::MIN;
        for r in [1, 5, 10, 20] {
            let a = adversary(Strategy::Ria, Capability::Replay, SelectionMode::Targeted, |c| c.replay_factor = r);
            let f = target_est(&stage(&a, input.clone(), 14).0);
            assert!(f >= last, "replay {r}");
            last = f;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn uniform_ops_are_order_independent(perm_seed in any::<u64>(), cap_idx in 0usize..3) {
            use rand::seq::SliceRandom;
            let spec = ProtocolSpec::krr(16, 1.0).unwrap();
            let input = packets(&spec, 300, true, 15);
            let mut shuffled = input.clone();
            shuffled.shuffle(&mut SeedTree::new(perm_seed).stream("perm", &[]));
            let a = adversary(Strategy::Rpa, Capability::NETWORK[cap_idx], SelectionMode::Uniform, |c| {
                c.drop_rate = 0.4;
                c.replay_fraction = 0.3;
                c.delay_ratio = 0.4;
            });
            let key = |p: &Packet| (p.report_id(), p.copy, p.held, p.send_time);
            let mut x: Vec<_> = stage(&a, input, 16).0.iter().map(key).collect();
            let mut y: Vec<_> = stage(&a, shuffled, 16).0.iter().map(key).collect();
            x.sort_unstable();
            y.sort_unstable();
            prop_assert_eq!(x, y);
        }
    }
}
