use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::config::{DatasetKind, ErrorMetric, ExperimentConfig};
use super::output::{sort_rows, ResultRow};
use super::{attack_gain, gen_uniform_dataset, gen_weighted_dataset, l2_error, mean_abs_error, true_frequencies, Measurement};
use crate::adversary::{corrupt_users, Adversary, AdversaryConfig, Capability};
use crate::cache::{cached_report, CacheStats, ClientCache};
use crate::defense::{arrivals_per_client, debiased_estimate, inject_dummies, loss_anomaly_detect, ArrivalDefense, DefenseConfig};
use crate::error::StageExt;
use crate::ldp::{aggregate, BudgetLedger, ClientReport, ProtocolKind, ProtocolSpec};
use crate::netsim::{build_topology, run_window, AggregationWindow, ArrivalFilter, EventLog, NetOptions, PacketStage, Topology};
use crate::shuffle::ShufflerNode;
use crate::{Error, Result, SeedTree};

/// Outcome of [`run_experiment`].
#[derive(Debug)]
pub struct RunResult {
    pub fingerprint: String,
    pub rows: Vec<ResultRow>,
    /// Event log of the first repetition's attacked run.
    pub events: EventLog,
    pub runtime: Duration,
}

impl RunResult {
    /// Mean and sample standard deviation of the undefended gains.
    pub fn gain_stats(&self) -> (f64, f64) {
        let g: Vec<f64> = self.rows.iter().filter(|r| r.defense == "none").map(|r| r.attack_gain).collect();
        mean_std(&g)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

#[derive(Debug)]
pub struct SweepResult {
    pub fingerprint: String,
    pub rows: Vec<ResultRow>,
    pub runtime: Duration,
}

/// Everything shared by the runs of one (protocol, epsilon, repetition).
struct RepContext<'a> {
    cfg: &'a ExperimentConfig,
    spec: ProtocolSpec,
    seeds: SeedTree,
    pairing: u64,
    rep: u32,
    truth: Vec<f64>,
    honest: Vec<ClientReport>,
    topology: Topology,
    window: AggregationWindow,
    cache_stats: Option<(CacheStats, f64)>,
}

struct RunOutcome {
    error: f64,
    flags: Vec<String>,
    log: EventLog,
}

impl<'a> RepContext<'a> {
    fn new(cfg: &'a ExperimentConfig, spec: ProtocolSpec, rep: u32, n: u64) -> Result<Self> {
        let root = SeedTree::new(cfg.root_seed);
        let pairing = root.derive_seed("rep", &[rep as u64]);
        let seeds = SeedTree::new(pairing);
        let d = &cfg.dataset;
        let items = match d.kind {
            DatasetKind::Uniform => gen_uniform_dataset(d.k, n, &mut seeds.stream("dataset", &[])),
            DatasetKind::Custom => gen_weighted_dataset(&d.weights, n, &mut seeds.stream("dataset", &[])),
        }
        .stage("dataset")?;
        let truth = true_frequencies(&items, d.k);
        let (honest, cache_stats) = honest_reports(cfg, &spec, &items, &seeds).stage("perturb")?;
        let topology = build_topology(
            cfg.network.topology,
            items.len(),
            &cfg.network.params,
            &mut seeds.stream("topology", &[]),
        )
        .stage("topology")?;
        Ok(RepContext {
            cfg,
            spec,
            seeds,
            pairing,
            rep,
            truth,
            honest,
            topology,
            window: AggregationWindow::new(0, cfg.network.window_end)?,
            cache_stats,
        })
    }

    fn run(&self, adversary: Option<&AdversaryConfig>, defense: Option<&DefenseConfig>) -> Result<RunOutcome> {
        let spec = &self.spec;
        let (reports, corrupted) = match adversary {
            Some(a) if a.uses_corrupted_users() => {
                let mut rng = self.seeds.stream("corrupt", &[a.strategy as u64]);
                corrupt_users(a, &self.honest, spec, &mut rng).stage("corrupt")?
            }
            _ => (self.honest.clone(), BTreeSet::new()),
        };
        let reports: Vec<Arc<ClientReport>> = reports.into_iter().map(Arc::new).collect();
        let stage = match adversary {
            Some(a) => Some(Adversary::new(a.clone(), *spec, corrupted).stage("adversary")?),
            None => None,
        };
        let stage_ref = stage
            .as_ref()
            .filter(|a| a.config.capability != Capability::UserCorruption)
            .map(|a| a as &dyn PacketStage);
        let filter = defense.map(|d| ArrivalDefense { config: d.clone() });
        let options = NetOptions {
            payload_opaque: self.cfg.network.payload_opaque,
            domain_k: spec.k(),
        };
        let net_seeds = self.seeds.child("network", &[]);
        let outcome = run_window(
            &self.topology,
            &reports,
            &self.window,
            &options,
            stage_ref,
            filter.as_ref().map(|f| f as &dyn ArrivalFilter),
            &net_seeds,
        )
        .stage("network")?;

        let mut flags = vec![if outcome.conservation.balanced() { "conserved" } else { "unbalanced" }.to_string()];
        if let Some(det) = defense.and_then(|d| d.detector.as_ref()) {
            let clients = 0..self.topology.client_count() as u64;
            let observed = arrivals_per_client(&outcome.log, &self.window, clients);
            let report = loss_anomaly_detect(self.cfg.cache.rounds as u64, &observed, det).stage("detector")?;
            flags.push(format!(
                "detect={}:{:.6}",
                if report.attack_suspected { "suspected" } else { "clear" },
                report.flagged_fraction
            ));
        }
        if let Some((s, eps)) = self.cache_stats {
            flags.push(format!(
                "cache_hits={}:cache_misses={}:cache_evictions={}:eps_spent={eps:.6}",
                s.hits, s.misses, s.evictions
            ));
        }
        let error = self.evaluate(outcome.arrived, defense, &mut flags)?;
        Ok(RunOutcome {
            error,
            flags,
            log: outcome.log,
        })
    }

    fn evaluate(
        &self,
        arrived: Vec<Arc<ClientReport>>,
        defense: Option<&DefenseConfig>,
        flags: &mut Vec<String>,
    ) -> Result<f64> {
        let spec = &self.spec;
        let m = defense.map_or(0, |d| d.dummies);
        let mut batch = if m > 0 {
            inject_dummies(arrived, m, spec, &mut self.seeds.stream("dummies", &[]))
        } else {
            arrived
        };
        if self.cfg.shuffle.enabled {
            // the shuffler's batch is the window's worth of arrivals
            let mut before: Vec<u64> = batch.iter().map(|r| r.report_id).collect();
            let mut shuffler = ShufflerNode::new(0, self.cfg.shuffle.buffer_capacity);
            batch = shuffler
                .process(batch, &mut self.seeds.stream("shuffle", &[]))
                .stage("shuffle")?;
            let mut after: Vec<u64> = batch.iter().map(|r| r.report_id).collect();
            before.sort_unstable();
            after.sort_unstable();
            flags.push(if before == after { "multiset_ok" } else { "multiset_mismatch" }.to_string());
        }
        let counts = aggregate(spec, batch.iter().map(|r| &r.payload)).stage("estimate")?;
        let est = debiased_estimate(spec, &counts, batch.len() as u64, m).stage("estimate")?;
        match self.cfg.metric.kind {
            ErrorMetric::Mae => mean_abs_error(&est, &self.truth),
            ErrorMetric::L2 => l2_error(&est, &self.truth),
        }
    }

    fn measurement(&self, error: f64) -> Measurement {
        Measurement {
            error,
            pairing: self.pairing,
        }
    }

    fn row(&self, adversary: Option<&AdversaryConfig>, clean: f64, attack: &RunOutcome, defense: &str) -> Result<ResultRow> {
        let gain = attack_gain(self.measurement(clean), self.measurement(attack.error), self.cfg.metric.normalize)?;
        Ok(ResultRow {
            protocol: self.spec.kind.name().to_string(),
            strategy: adversary.map_or("none", |a| a.strategy.name()).to_string(),
            capability: adversary.map_or("none", |a| a.capability.name()).to_string(),
            param: adversary.map_or(0.0, |a| a.param()),
            epsilon: self.spec.epsilon(),
            rep: self.rep,
            err_clean: clean,
            err_attack: attack.error,
            attack_gain: gain,
            defense: defense.to_string(),
            flags: attack.flags.join(";"),
            seed: self.pairing,
        })
    }

    /// Rows for every adversary in `cells`, undefended and (if configured)
    /// defended. Returns the first attacked event log when asked.
    fn rows(&self, cells: &[Option<AdversaryConfig>], keep_log: bool) -> Result<(Vec<ResultRow>, Option<EventLog>)> {
        let defense = self.cfg.defense.is_active().then_some(&self.cfg.defense);
        let clean = self.run(None, None)?.error;
        let clean_defended = match defense {
            Some(d) => Some(self.run(None, Some(d))?.error),
            None => None,
        };
        let mut rows = Vec::new();
        let mut log = None;
        for adv in cells {
            let attacked = self.run(adv.as_ref(), None)?;
            rows.push(self.row(adv.as_ref(), clean, &attacked, "none")?);
            if let (Some(d), Some(c)) = (defense, clean_defended) {
                let defended = self.run(adv.as_ref(), Some(d))?;
                rows.push(self.row(adv.as_ref(), c, &defended, &d.label())?);
            }
            if keep_log && log.is_none() {
                log = Some(attacked.log);
            }
        }
        Ok((rows, log))
    }
}

fn honest_reports(
    cfg: &ExperimentConfig,
    spec: &ProtocolSpec,
    items: &[u32],
    seeds: &SeedTree,
) -> Result<(Vec<ClientReport>, Option<(CacheStats, f64)>)> {
    let rounds = cfg.cache.rounds as u64;
    let spread = cfg.network.emit_spread.max(1);
    let mut out = Vec::with_capacity(items.len() * rounds as usize);
    let mut stats = CacheStats::default();
    let mut eps_max: f64 = 0.0;
    for (c, &v) in items.iter().enumerate() {
        let c = c as u64;
        let mut rng = seeds.stream("perturb", &[c]);
        let offset = c % spread;
        if cfg.cache.enabled {
            let mut cache = ClientCache::new(cfg.cache.policy)?;
            let mut ledger = BudgetLedger::new();
            for t in 0..rounds {
                let now = offset + t * cfg.cache.round_spacing;
                let (r, l) = cached_report(&mut cache, c, c * rounds + t, v, spec, ledger, now, &mut rng)?;
                ledger = l;
                out.push(r);
            }
            let s = cache.stats();
            stats.hits += s.hits;
            stats.misses += s.misses;
            stats.evictions += s.evictions;
            stats.expirations += s.expirations;
            eps_max = eps_max.max(ledger.total());
        } else {
            for t in 0..rounds {
                let now = offset + t * cfg.cache.round_spacing;
                out.push(ClientReport::new(c, c * rounds + t, spec.perturb(v, &mut rng)?, now));
            }
        }
    }
    Ok((out, cfg.cache.enabled.then_some((stats, eps_max))))
}

fn population(cfg: &ExperimentConfig, full: bool) -> u64 {
    if full {
        cfg.dataset.full_n
    } else {
        cfg.dataset.n
    }
}

/// Runs the configured protocol against the configured adversary (or none)
/// for every repetition, pairing each attacked run with a clean run on the
/// same honest randomness.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResult> {
    let start = Instant::now();
    config.validate()?;
    let spec = config.spec(config.protocol.kind, config.protocol.epsilon)?;
    let cells = [config.adversary.clone()];
    let mut rows = Vec::new();
    let mut events = EventLog::default();
    for rep in 0..config.repetitions {
        let ctx = RepContext::new(config, spec, rep, config.dataset.n)?;
        let (r, log) = ctx.rows(&cells, rep == 0)?;
        rows.extend(r);
        if let Some(l) = log {
            events = l;
        }
    }
    sort_rows(&mut rows);
    Ok(RunResult {
        fingerprint: config.fingerprint(),
        rows,
        events,
        runtime: start.elapsed(),
    })
}

/// Every grid cell for every repetition. `threads = Some(1)` runs serially;
/// the output does not depend on the thread count.
pub fn sweep(config: &ExperimentConfig, full: bool, threads: Option<usize>) -> Result<SweepResult> {
    let start = Instant::now();
    config.validate()?;
    config.grid.validate()?;
    let g = &config.grid;
    let mut cells = Vec::new();
    for &s in &g.strategies {
        for &c in &g.capabilities {
            for p in g.params(c) {
                cells.push(Some(config.cell_adversary(s, c, p)?));
            }
        }
    }
    let mut jobs: Vec<(ProtocolKind, f64, u32)> = Vec::new();
    for &p in &g.protocols {
        for &e in &g.epsilons {
            for rep in 0..config.repetitions {
                jobs.push((p, e, rep));
            }
        }
    }
    let n = population(config, full);
    let work = |&(p, e, rep): &(ProtocolKind, f64, u32)| -> Result<Vec<ResultRow>> {
        let spec = config.spec(p, e)?;
        for a in cells.iter().flatten() {
            a.validate(&spec)?;
        }
        let ctx = RepContext::new(config, spec, rep, n)?;
        Ok(ctx.rows(&cells, false)?.0)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let results: Vec<Result<Vec<ResultRow>>> = pool.install(|| jobs.par_iter().map(work).collect());
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    sort_rows(&mut rows);
    Ok(SweepResult {
        fingerprint: config.fingerprint(),
        rows,
        runtime: start.elapsed(),
    })
}
