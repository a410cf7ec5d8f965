use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use netdp_core::harness::{self, ExperimentConfig, ResultRow};
use netdp_core::ldp::{passes_ldp, verify_ldp};
use netdp_core::netsim::{build_topology, TopologyKind};
use netdp_core::{ProtocolKind, ProtocolSpec, SeedTree};

#[derive(Parser)]
#[command(name = "netdp", version, about = "Local and shuffle DP under adversarial networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configured experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `root_seed` from the config.
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the first repetition's event log.
        #[arg(long)]
        events: bool,
    },
    /// Run the configured parameter grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Use the full population size.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value = "sweep-out")]
        out: PathBuf,
        /// Overrides `root_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; 0 picks one per core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Check the LDP guarantee of a mechanism by exact enumeration.
    VerifyLdp {
        #[arg(long)]
        protocol: ProtocolKind,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        epsilon: f64,
    },
    /// Describe a topology.
    Topology {
        #[arg(long)]
        show: bool,
        /// Take network settings from this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        kind: Option<TopologyKind>,
        #[arg(long, default_value_t = 9)]
        clients: usize,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn manifest(out: &Path, cfg: &ExperimentConfig, mode: &str, n: u64, rows: &[ResultRow]) -> Result<()> {
    harness::write_manifest(
        &out.join("manifest.txt"),
        &[
            ("tool", format!("netdp {}", env!("CARGO_PKG_VERSION"))),
            ("mode", mode.to_string()),
            ("schema_version", cfg.schema_version.to_string()),
            ("fingerprint", cfg.fingerprint()),
            ("seed", cfg.root_seed.to_string()),
            ("n", n.to_string()),
            ("repetitions", cfg.repetitions.to_string()),
            ("rows", rows.len().to_string()),
        ],
    )?;
    Ok(())
}

fn print_summary(rows: &[ResultRow]) {
    println!(
        "{:<5} {:<5} {:<16} {:>9} {:>7} {:<10} {:>10} {:>10} {:>10} {:>10}",
        "proto", "strat", "capability", "param", "eps", "defense", "err_clean", "err_attack", "gain", "gain_sd"
    );
    for s in harness::summarize(rows) {
        println!(
            "{:<5} {:<5} {:<16} {:>9.3} {:>7.3} {:<10} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
            s.protocol, s.strategy, s.capability, s.param, s.epsilon, s.defense, s.mean_clean, s.mean_attack, s.mean_gain, s.sd_gain
        );
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            out,
            events,
        } => {
            let mut cfg = load(&config)?;
            cfg.root_seed = seed;
            fs::create_dir_all(&out)?;
            let result = harness::run_experiment(&cfg)?;
            harness::emit_csv(&result.rows, &out.join("results.csv"))?;
            if events {
                let f = fs::File::create(out.join("events.csv"))?;
                result.events.write_csv(std::io::BufWriter::new(f))?;
            }
            manifest(&out, &cfg, "run", cfg.dataset.n, &result.rows)?;
            print_summary(&result.rows);
            eprintln!("{} rows in {:.2?}", result.rows.len(), result.runtime);
        }
        Command::Sweep {
            config,
            full,
            out,
            seed,
            threads,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.root_seed = s;
            }
            fs::create_dir_all(&out)?;
            let threads = (threads > 0).then_some(threads);
            let result = harness::sweep(&cfg, full, threads)?;
            harness::emit_csv(&result.rows, &out.join("results.csv"))?;
            let n = if full { cfg.dataset.full_n } else { cfg.dataset.n };
            manifest(&out, &cfg, if full { "sweep-full" } else { "sweep" }, n, &result.rows)?;
            print_summary(&result.rows);
            eprintln!("{} rows in {:.2?}", result.rows.len(), result.runtime);
        }
        Command::VerifyLdp { protocol, k, epsilon } => {
            let spec = ProtocolSpec::new(protocol, k, epsilon)?;
            let ratio = verify_ldp(&spec)?;
            let ok = passes_ldp(&spec, ratio);
            println!(
                "{} k={k} epsilon={epsilon}: max ratio {ratio:.9} bound {:.9} {}",
                protocol.name(),
                epsilon.exp(),
                if ok { "PASS" } else { "FAIL" }
            );
            if !ok {
                bail!("mechanism exceeds its privacy bound");
            }
        }
        Command::Topology {
            show,
            config,
            kind,
            clients,
        } => {
            let cfg = match config {
                Some(p) => load(&p)?,
                None => ExperimentConfig::default(),
            };
            let kind = kind.unwrap_or(cfg.network.topology);
            let topo = build_topology(kind, clients, &cfg.network.params, &mut SeedTree::new(cfg.root_seed).stream("topology", &[]))?;
            if show {
                print!("{}", topo.describe());
            } else {
                println!("{:?}: {} nodes, {} edges", topo.kind, topo.nodes().len(), topo.edges().len());
            }
        }
    }
    Ok(())
}
