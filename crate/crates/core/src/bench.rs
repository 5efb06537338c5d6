//! Benchmark suites over generated instance families, emitting one CSV row
//! per (instance, solver) plus per-size mean rows, like the comparison
//! tables these solvers are usually reported in.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::apps::{gen_bisection, gen_graph_weights, gen_matching, GraphSpec, MatchingSpec};
use crate::error::{Error, Result};
use crate::model::BqpInstance;
use crate::{solve_relaxed, relax, SolveOptions, SolverKind};

/// One CSV row. `lower` and `rank` are absent for the spectral baselines;
/// `iterations` is fractional in mean rows.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub id: String,
    pub n: usize,
    pub m: usize,
    pub solver: String,
    pub iterations: f64,
    pub wall_time: f64,
    pub upper: f64,
    pub lower: Option<f64>,
    pub rank: Option<usize>,
    pub termination: String,
}

pub const CSV_HEADER: &str = "id,n,m,solver,iterations,wall_time,upper,lower,rank,termination";

impl BenchRow {
    pub fn csv_line(&self) -> String {
        let mut s = String::new();
        let lower = self.lower.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
        let rank = self.rank.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
        let _ = write!(
            s,
            "{},{},{},{},{},{:.3},{},{},{},{}",
            self.id,
            self.n,
            self.m,
            self.solver,
            self.iterations,
            self.wall_time,
            self.upper,
            lower,
            rank,
            self.termination
        );
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    BisectionDense,
    BisectionSparse,
    Matching,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bisection-dense" => Ok(Suite::BisectionDense),
            "bisection-sparse" => Ok(Suite::BisectionSparse),
            "matching" => Ok(Suite::Matching),
            other => Err(Error::InvalidArgument(format!(
                "unknown suite {other:?}; expected bisection-dense, bisection-sparse or matching"
            ))),
        }
    }
}

impl std::fmt::Display for Suite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Suite::BisectionDense => "bisection-dense",
            Suite::BisectionSparse => "bisection-sparse",
            Suite::Matching => "matching",
        })
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub suite: Suite,
    /// Graph sizes for bisection suites; source counts K (with L = 2K) for
    /// the matching suite.
    pub sizes: Vec<usize>,
    /// Number of random instances per size.
    pub seeds: usize,
    pub gamma: f64,
    pub samples: usize,
    pub base_seed: u64,
    pub timeout: Duration,
    /// Worker threads for the suite runner (overridden by
    /// `SDCUT_BENCH_THREADS`).
    pub threads: usize,
    /// Largest n the dense-path smoothing Newton solver is run at.
    pub sn_dense_limit: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            suite: Suite::BisectionDense,
            sizes: vec![200],
            seeds: 10,
            gamma: crate::model::DEFAULT_GAMMA,
            samples: 100,
            base_seed: 0,
            timeout: Duration::from_secs(600),
            threads: 1,
            sn_dense_limit: 2000,
        }
    }
}

const DENSE_SIZE_GUARD: usize = 2000;
const SPARSE_SIZE_GUARD: usize = 20000;

fn instance_for(cfg: &BenchConfig, size: usize, seed_idx: usize) -> Result<BqpInstance> {
    let seed = cfg.base_seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(seed_idx as u64);
    match cfg.suite {
        Suite::BisectionDense => gen_bisection(&GraphSpec::dense_uniform(size, seed)),
        Suite::BisectionSparse => gen_bisection(&GraphSpec::sparse_similarity(size, 8, seed)),
        Suite::Matching => {
            let spec = MatchingSpec { k: size, l: 2 * size, jitter: 0.02, sigma: None, seed };
            Ok(gen_matching(&spec)?.bqp)
        }
    }
}

fn size_guard(cfg: &BenchConfig) -> Result<()> {
    let limit = match cfg.suite {
        Suite::BisectionDense => DENSE_SIZE_GUARD,
        Suite::BisectionSparse => SPARSE_SIZE_GUARD,
        Suite::Matching => 100,
    };
    for &s in &cfg.sizes {
        if s == 0 || s > limit {
            return Err(Error::InvalidArgument(format!(
                "size {s} outside the desk-scale guard (max {limit} for {})",
                cfg.suite
            )));
        }
    }
    Ok(())
}

/// Runs the configured suite and returns all rows, instance rows first
/// (sorted by id), then the per-size mean rows.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    size_guard(cfg)?;
    let threads = std::env::var("SDCUT_BENCH_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(cfg.threads)
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;

    let mut work: Vec<(usize, usize)> = Vec::new();
    for &size in &cfg.sizes {
        for seed_idx in 0..cfg.seeds {
            work.push((size, seed_idx));
        }
    }

    use rayon::prelude::*;
    let nested: Vec<Result<Vec<BenchRow>>> =
        pool.install(|| work.par_iter().map(|&(size, idx)| bench_one(cfg, size, idx)).collect());
    let mut rows = Vec::new();
    for r in nested {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| a.id.cmp(&b.id).then(a.solver.cmp(&b.solver)));

    // Mean rows per (size, solver), mirroring "average over N random graphs".
    let mut means: Vec<BenchRow> = Vec::new();
    for &size in &cfg.sizes {
        let mut solvers: Vec<String> =
            rows.iter().filter(|r| r.n_for_size(cfg) == size).map(|r| r.solver.clone()).collect();
        solvers.sort();
        solvers.dedup();
        for solver in solvers {
            let group: Vec<&BenchRow> = rows
                .iter()
                .filter(|r| r.n_for_size(cfg) == size && r.solver == solver && r.termination != "timeout")
                .collect();
            if group.is_empty() {
                continue;
            }
            let len = group.len() as f64;
            means.push(BenchRow {
                id: format!("{}-n{}-mean", cfg.suite, size),
                n: group[0].n,
                m: group[0].m,
                solver: solver.clone(),
                iterations: group.iter().map(|r| r.iterations).sum::<f64>() / len,
                wall_time: group.iter().map(|r| r.wall_time).sum::<f64>() / len,
                upper: group.iter().map(|r| r.upper).sum::<f64>() / len,
                lower: group
                    .iter()
                    .map(|r| r.lower)
                    .collect::<Option<Vec<f64>>>()
                    .map(|v| v.iter().sum::<f64>() / len),
                rank: None,
                termination: "mean".into(),
            });
        }
    }
    rows.extend(means);
    Ok(rows)
}

impl BenchRow {
    /// The suite size this row belongs to (graph nodes, or K for matching
    /// where n = K·L = 2K²).
    fn n_for_size(&self, cfg: &BenchConfig) -> usize {
        match cfg.suite {
            Suite::Matching => ((self.n as f64 / 2.0).sqrt()).round() as usize,
            _ => self.n,
        }
    }
}

fn bench_one(cfg: &BenchConfig, size: usize, seed_idx: usize) -> Result<Vec<BenchRow>> {
    let bqp = instance_for(cfg, size, seed_idx)?;
    let p = relax(&bqp, cfg.gamma)?;
    let id = format!("{}-n{}-s{}", cfg.suite, size, seed_idx);
    let m = p.num_constraints();
    let deadline = Instant::now() + cfg.timeout;
    let mut rows = Vec::new();

    let mut solvers = vec![SolverKind::Qn];
    if p.dim() <= cfg.sn_dense_limit {
        solvers.push(SolverKind::Sn);
    }
    for solver in solvers {
        let mut opts = SolveOptions {
            solver,
            gamma: cfg.gamma,
            samples: cfg.samples,
            seed: cfg.base_seed.wrapping_add(seed_idx as u64),
            ..Default::default()
        };
        opts.qn.deadline = Some(deadline);
        opts.sn.deadline = Some(deadline);
        match solve_relaxed(&bqp, &p, &opts) {
            Ok(report) => rows.push(BenchRow {
                id: id.clone(),
                n: bqp.n,
                m,
                solver: solver.to_string(),
                iterations: report.solve.iterations as f64,
                wall_time: report.solve.wall_time.as_secs_f64(),
                upper: report.upper,
                lower: Some(report.lower),
                rank: Some(report.rank),
                termination: report.solve.termination.to_string(),
            }),
            Err(e) => {
                log::warn!("{id}/{solver}: {e}");
                rows.push(BenchRow {
                    id: id.clone(),
                    n: bqp.n,
                    m,
                    solver: solver.to_string(),
                    iterations: 0.0,
                    wall_time: 0.0,
                    upper: f64::NAN,
                    lower: None,
                    rank: None,
                    termination: "error".into(),
                });
            }
        }
    }

    if matches!(cfg.suite, Suite::BisectionDense | Suite::BisectionSparse) {
        let spec = match cfg.suite {
            Suite::BisectionDense => GraphSpec::dense_uniform(
                size,
                cfg.base_seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(seed_idx as u64),
            ),
            _ => GraphSpec::sparse_similarity(
                size,
                8,
                cfg.base_seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(seed_idx as u64),
            ),
        };
        let w = gen_graph_weights(&spec)?;
        for (name, run) in [
            ("ratiocut", crate::apps::spectral_ratiocut as fn(_) -> _),
            ("ncut", crate::apps::spectral_ncut as fn(_) -> _),
        ] {
            let t0 = Instant::now();
            match run(&w) {
                Ok(x) => rows.push(BenchRow {
                    id: id.clone(),
                    n: bqp.n,
                    m,
                    solver: name.into(),
                    iterations: 0.0,
                    wall_time: t0.elapsed().as_secs_f64(),
                    upper: bqp.objective(&x),
                    lower: None,
                    rank: None,
                    termination: "converged".into(),
                }),
                Err(e) => log::warn!("{id}/{name}: {e}"),
            }
        }
    }
    Ok(rows)
}

pub fn write_csv(rows: &[BenchRow], out: &mut impl std::io::Write) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.csv_line())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> BenchConfig {
        BenchConfig {
            sizes: vec![8],
            seeds: 2,
            samples: 20,
            gamma: 100.0,
            ..Default::default()
        }
    }

    #[test]
    fn bench_rows_have_expected_shape() {
        let cfg = tiny_cfg();
        let rows = run_bench(&cfg).unwrap();
        // 2 instances × (qn, sn, ratiocut, ncut) + mean rows
        let instance_rows = rows.iter().filter(|r| r.termination != "mean").count();
        assert_eq!(instance_rows, 8);
        let mean_rows = rows.iter().filter(|r| r.termination == "mean").count();
        assert_eq!(mean_rows, 4);
        for row in rows.iter().filter(|r| r.solver == "qn" || r.solver == "sn") {
            let (Some(lower), upper) = (row.lower, row.upper) else {
                panic!("solver rows must carry bounds")
            };
            assert!(lower <= upper + 1e-9, "{}: {} > {}", row.id, lower, upper);
        }
    }

    #[test]
    fn rows_are_deterministic_modulo_wall_time() {
        let cfg = tiny_cfg();
        let a = run_bench(&cfg).unwrap();
        let b = run_bench(&cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.solver, y.solver);
            assert_eq!(x.iterations, y.iterations);
            assert_eq!(x.upper, y.upper);
            assert_eq!(x.lower, y.lower);
            assert_eq!(x.rank, y.rank);
        }
    }

    #[test]
    fn size_guard_rejects_oversized_runs() {
        let mut cfg = tiny_cfg();
        cfg.sizes = vec![5000];
        assert!(run_bench(&cfg).is_err());
    }
}
