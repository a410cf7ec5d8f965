use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::{Error, Result};

pub const CSV_HEADER: [&str; 12] = [
    "protocol",
    "strategy",
    "capability",
    "param",
    "epsilon",
    "rep",
    "err_clean",
    "err_attack",
    "attack_gain",
    "defense",
    "flags",
    "seed",
];

/// One repetition of one sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub protocol: String,
    /// `none` when no adversary ran.
    pub strategy: String,
    pub capability: String,
    pub param: f64,
    pub epsilon: f64,
    pub rep: u32,
    pub err_clean: f64,
    pub err_attack: f64,
    pub attack_gain: f64,
    pub defense: String,
    /// `;`-separated run annotations.
    pub flags: String,
    pub seed: u64,
}

fn fixed(x: f64) -> String {
    format!("{x:.6}")
}

impl ResultRow {
    fn record(&self) -> [String; 12] {
        [
            self.protocol.clone(),
            self.strategy.clone(),
            self.capability.clone(),
            fixed(self.param),
            fixed(self.epsilon),
            self.rep.to_string(),
            fixed(self.err_clean),
            fixed(self.err_attack),
            fixed(self.attack_gain),
            self.defense.clone(),
            self.flags.clone(),
            self.seed.to_string(),
        ]
    }

    fn order(&self, other: &Self) -> Ordering {
        (&self.protocol, &self.strategy, &self.capability)
            .cmp(&(&other.protocol, &other.strategy, &other.capability))
            .then(self.param.total_cmp(&other.param))
            .then(self.rep.cmp(&other.rep))
            .then(self.epsilon.total_cmp(&other.epsilon))
            .then(self.defense.cmp(&other.defense))
    }
}

/// Sorts by protocol, strategy, capability, param and rep, then epsilon and
/// defense.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| a.order(b));
}

/// Writes rows in their current order.
pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

/// Sorts and writes `rows` to `path`.
pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no results to write".into()));
    }
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    write_results(&sorted, BufWriter::new(File::create(path)?))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Shape(format!("unexpected results header {header:?}")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Shape(format!("`{s}`: {e}")));
    let int = |s: &str| s.parse::<u64>().map_err(|e| Error::Shape(format!("`{s}`: {e}")));
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let r = rec?;
        rows.push(ResultRow {
            protocol: r[0].to_string(),
            strategy: r[1].to_string(),
            capability: r[2].to_string(),
            param: num(&r[3])?,
            epsilon: num(&r[4])?,
            rep: int(&r[5])? as u32,
            err_clean: num(&r[6])?,
            err_attack: num(&r[7])?,
            attack_gain: num(&r[8])?,
            defense: r[9].to_string(),
            flags: r[10].to_string(),
            seed: int(&r[11])?,
        });
    }
    Ok(rows)
}

/// Per-cell aggregate over repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub protocol: String,
    pub strategy: String,
    pub capability: String,
    pub param: f64,
    pub epsilon: f64,
    pub defense: String,
    pub reps: usize,
    pub mean_clean: f64,
    pub mean_attack: f64,
    pub mean_gain: f64,
    /// Sample standard deviation of the gain.
    pub sd_gain: f64,
}

/// Groups rows by everything except the repetition.
pub fn summarize(rows: &[ResultRow]) -> Vec<CellSummary> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| {
        (&a.protocol, &a.strategy, &a.capability)
            .cmp(&(&b.protocol, &b.strategy, &b.capability))
            .then(a.param.total_cmp(&b.param))
            .then(a.epsilon.total_cmp(&b.epsilon))
            .then(a.defense.cmp(&b.defense))
    });
    let same = |a: &ResultRow, b: &ResultRow| {
        a.protocol == b.protocol
            && a.strategy == b.strategy
            && a.capability == b.capability
            && a.param == b.param
            && a.epsilon == b.epsilon
            && a.defense == b.defense
    };
    sorted
        .chunk_by(|a, b| same(a, b))
        .map(|g| {
            let n = g.len() as f64;
            let mean = |f: fn(&ResultRow) -> f64| g.iter().map(f).sum::<f64>() / n;
            let mean_gain = mean(|r| r.attack_gain);
            let sd_gain = if g.len() > 1 {
                (g.iter().map(|r| (r.attack_gain - mean_gain).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            CellSummary {
                protocol: g[0].protocol.clone(),
                strategy: g[0].strategy.clone(),
                capability: g[0].capability.clone(),
                param: g[0].param,
                epsilon: g[0].epsilon,
                defense: g[0].defense.clone(),
                reps: g.len(),
                mean_clean: mean(|r| r.err_clean),
                mean_attack: mean(|r| r.err_attack),
                mean_gain,
                sd_gain,
            }
        })
        .collect()
}

/// Plain `key = value` lines.
pub fn write_manifest(path: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    for (k, v) in entries {
        writeln!(f, "{k} = {v}")?;
    }
    f.flush()?;
    Ok(())
}
