use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crossfit::{fit_nuisances_with, partition_folds, NuisanceLibrary, DEFAULT_FOLDS};
use crate::error::{Error, Result};
use crate::learners::LearnerConfig;
use crate::metalearners::{fit_method, EpOptions, FitOptions, Method};
use crate::parallel::{map_indices, with_workers, Execution};
use crate::risk::ContrastFamily;

use super::{generate, Dgp, ScenarioConfig, DEFAULT_EVAL_POINTS};

pub const CSV_HEADER: &str = "scenario,overlap,complexity,method,base_learner,n,rep,seed,mse,runtime_ms,score_residual,neg_weight_count";

/// A named second-stage learner grid, e.g. boosted trees with depths 1..=8.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerGrid {
    pub name: String,
    pub configs: Vec<LearnerConfig>,
}

impl LearnerGrid {
    pub fn new(name: impl Into<String>, configs: Vec<LearnerConfig>) -> Self {
        LearnerGrid { name: name.into(), configs }
    }

    pub fn boosted() -> Self {
        LearnerGrid::new("boost", LearnerConfig::boosted_grid(1..=8))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub scenarios: Vec<Dgp>,
    pub methods: Vec<Method>,
    pub grids: Vec<LearnerGrid>,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub base_seed: u64,
    pub workers: usize,
    pub folds: usize,
    pub eval_points: usize,
    pub ep: EpOptions,
    pub truncate: bool,
    pub knn_k: usize,
    /// Nuisance libraries; each scenario's default when unset.
    pub nuisance: Option<NuisanceLibrary>,
    /// Record wall-clock fit times. Off by default so tables are reproducible.
    pub timing: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            scenarios: Vec::new(),
            methods: vec![Method::T, Method::Dr, Method::R, Method::CvEp],
            grids: vec![LearnerGrid::boosted()],
            n_list: vec![500, 2000, 5000],
            reps: 50,
            base_seed: 1,
            workers: 1,
            folds: DEFAULT_FOLDS,
            eval_points: DEFAULT_EVAL_POINTS,
            ep: EpOptions::default(),
            truncate: true,
            knn_k: 3,
            nuisance: None,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub dgp: Dgp,
    pub method: Method,
    pub base_learner: String,
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    /// NaN on error rows.
    pub mse: f64,
    pub runtime_ms: Option<f64>,
    pub score_residual: Option<f64>,
    pub neg_weight_count: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub rows: Vec<BenchmarkRow>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl BenchmarkResult {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER.split(','))?;
        for r in &self.rows {
            w.write_record([
                r.dgp.scenario.name().to_string(),
                r.dgp.overlap.name().to_string(),
                r.dgp.complexity.name().to_string(),
                r.method.name().to_string(),
                r.base_learner.clone(),
                r.n.to_string(),
                r.rep.to_string(),
                r.seed.to_string(),
                if r.mse.is_nan() { "NA".into() } else { r.mse.to_string() },
                opt(r.runtime_ms),
                opt(r.score_residual),
                opt(r.neg_weight_count),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// MSEs of successful rows matching the filter, in row order.
    pub fn mses(&self, dgp: Dgp, method: Method, n: usize) -> Vec<f64> {
        self.rows.iter().filter(|r| r.dgp == dgp && r.method == method && r.n == n && r.error.is_none()).map(|r| r.mse).collect()
    }

    pub fn errors(&self) -> impl Iterator<Item = &BenchmarkRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable per-cell seed, independent of scheduling and of other cells.
pub(crate) fn cell_seed(base_seed: u64, cell: usize) -> u64 {
    splitmix64(base_seed ^ splitmix64(cell as u64))
}

struct Cell {
    dgp: Dgp,
    n: usize,
    rep: usize,
    seed: u64,
}

/// `(method, grid)` pairs fitted in every cell of `dgp`. The T-learner
/// ignores the grid and appears once.
fn fits_for<'a>(cfg: &'a BenchmarkConfig, dgp: &Dgp) -> Vec<(Method, Option<&'a LearnerGrid>)> {
    let mut v = Vec::new();
    for &m in &cfg.methods {
        if !m.supports(dgp.family()) {
            continue;
        }
        match m {
            Method::T | Method::KnnEp => v.push((m, None)),
            _ => v.extend(cfg.grids.iter().map(|g| (m, Some(g)))),
        }
    }
    v
}

fn run_cell(cfg: &BenchmarkConfig, cell: &Cell) -> Vec<BenchmarkRow> {
    let fits = fits_for(cfg, &cell.dgp);
    let row = |method: Method, base_learner: String| BenchmarkRow {
        dgp: cell.dgp,
        method,
        base_learner,
        n: cell.n,
        rep: cell.rep,
        seed: cell.seed,
        mse: f64::NAN,
        runtime_ms: None,
        score_residual: None,
        neg_weight_count: None,
        error: None,
    };
    let label = |m: Method, g: Option<&LearnerGrid>, out: &str| match (m, g) {
        (Method::KnnEp, _) => LearnerConfig::knn(cfg.knn_k).to_string(),
        (_, Some(g)) => g.name.clone(),
        (_, None) => out.to_string(),
    };

    let dgp = cell.dgp;
    let spec = dgp.spec();
    let prepared = (|| -> Result<_> {
        let sim = generate(&ScenarioConfig { dgp, n: cell.n, seed: cell.seed })?;
        let library = cfg.nuisance.clone().unwrap_or_else(|| dgp.default_nuisance_library());
        let (prop, out) = library.select(&sim.data, cfg.folds, cell.seed)?;
        let folds = partition_folds(cell.n, cfg.folds, cell.seed)?;
        let nu = fit_nuisances_with(&sim.data, &folds, &prop, &out, &spec, Execution::Sequential)?;
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cell.seed ^ 0xE7A1));
        let eval = dgp.sample_covariates(cfg.eval_points, &mut rng).w;
        let truth: Vec<f64> = eval.rows().map(|w| dgp.theta(w)).collect();
        Ok((sim, out, nu, eval, truth))
    })();
    let (sim, out, nu, eval, truth) = match prepared {
        Ok(p) => p,
        Err(e) => {
            log::warn!("cell {dgp} n={} rep={}: {e}", cell.n, cell.rep);
            return fits
                .into_iter()
                .map(|(m, g)| BenchmarkRow { error: Some(e.to_string()), ..row(m, label(m, g, "NA")) })
                .collect();
        }
    };

    fits.into_iter()
        .map(|(method, grid)| {
            let mut r = row(method, label(method, grid, &out.to_string()));
            let opts = FitOptions {
                stage2: grid.map_or_else(|| vec![out.clone()], |g| g.configs.clone()),
                outcome: out.clone(),
                ep: cfg.ep.clone(),
                truncate: cfg.truncate,
                knn_k: cfg.knn_k,
                exec: Execution::Sequential,
            };
            let start = Instant::now();
            let fitted = fit_method(method, &sim.data, &nu, &spec, &opts).and_then(|m| {
                let pred = m.predict_contrast(&eval)?;
                Ok((m, pred))
            });
            match fitted {
                Ok((m, pred)) => {
                    if cfg.timing {
                        r.runtime_ms = Some(start.elapsed().as_secs_f64() * 1e3);
                    }
                    r.mse = pred.iter().zip(&truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64;
                    r.score_residual = m.score_residual;
                    if dgp.family() == ContrastFamily::Crr && m.k.is_some() {
                        r.neg_weight_count = Some(m.negative_weight_count);
                    }
                }
                Err(e) => {
                    log::warn!("cell {dgp} n={} rep={} {method}: {e}", cell.n, cell.rep);
                    r.error = Some(e.to_string());
                }
            }
            r
        })
        .collect()
}

/// Runs every `(scenario, n, rep)` cell, fitting each method on shared data
/// and nuisances. Rows come out in cell order whatever `workers` is.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkResult> {
    if cfg.scenarios.is_empty() || cfg.methods.is_empty() || cfg.n_list.is_empty() || cfg.reps == 0 {
        return Err(Error::InvalidConfig("benchmark needs at least one scenario, method, sample size and replication".into()));
    }
    if cfg.grids.is_empty() || cfg.grids.iter().any(|g| g.configs.is_empty()) {
        return Err(Error::InvalidConfig("benchmark learner grids must be non-empty".into()));
    }
    if cfg.eval_points == 0 {
        return Err(Error::InvalidConfig("eval_points must be positive".into()));
    }
    for g in &cfg.grids {
        for c in &g.configs {
            c.validate()?;
        }
    }
    let mut cells = Vec::new();
    for &dgp in &cfg.scenarios {
        for &n in &cfg.n_list {
            for rep in 0..cfg.reps {
                let seed = cell_seed(cfg.base_seed, cells.len());
                cells.push(Cell { dgp, n, rep, seed });
            }
        }
    }
    let per_cell = with_workers(cfg.workers, |exec| map_indices(cells.len(), exec, |c| run_cell(cfg, &cells[c])));
    Ok(BenchmarkResult { rows: per_cell.into_iter().flatten().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{Complexity, Overlap, Scenario};

    fn small(workers: usize) -> BenchmarkConfig {
        BenchmarkConfig {
            scenarios: vec![Dgp::new(Scenario::LowDim, Overlap::Moderate, Complexity::Simple), Dgp::new(Scenario::Crr, Overlap::Limited, Complexity::Simple)],
            methods: vec![Method::T, Method::Dr, Method::CvEp, Method::IpwE],
            grids: vec![LearnerGrid::new("boost12", LearnerConfig::boosted_grid([1, 2]))],
            n_list: vec![200],
            reps: 2,
            workers,
            folds: 3,
            eval_points: 500,
            ep: EpOptions { k_grid: vec![1, 2], ..EpOptions::default() },
            ..BenchmarkConfig::default()
        }
    }

    #[test]
    fn deterministic_across_workers() {
        let a = run_benchmark(&small(1)).unwrap().to_csv_string().unwrap();
        let b = run_benchmark(&small(1)).unwrap().to_csv_string().unwrap();
        let c = run_benchmark(&small(4)).unwrap().to_csv_string().unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert!(a.starts_with(CSV_HEADER));
        // lowdim: t, dr, cv_ep; crr: t, cv_ep, ipw_e; two reps each
        assert_eq!(a.lines().count(), 1 + 2 * 3 + 2 * 3);
        let mut rd = csv::Reader::from_reader(a.as_bytes());
        for rec in rd.records() {
            let rec = rec.unwrap();
            assert_eq!(rec.len(), 12);
            assert_eq!(&rec[9], "NA");
            assert!(rec[8].parse::<f64>().unwrap() >= 0.0);
        }
    }

    #[test]
    fn cell_seeds_are_distinct() {
        let s: std::collections::BTreeSet<u64> = (0..1000).map(|c| cell_seed(7, c)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(cell_seed(7, 0), cell_seed(8, 0));
    }

    #[test]
    fn cell_errors_become_rows() {
        let mut cfg = small(1);
        cfg.n_list = vec![10];
        cfg.reps = 1;
        let res = run_benchmark(&cfg).unwrap();
        assert_eq!(res.rows.len(), 6);
        assert!(res.rows.iter().all(|r| r.error.is_some() && r.mse.is_nan()));
        assert!(res.to_csv_string().unwrap().lines().nth(1).unwrap().contains(",NA,"));
    }

    #[test]
    fn rejects_empty_grid() {
        let mut cfg = small(1);
        cfg.grids[0].configs.clear();
        assert!(run_benchmark(&cfg).is_err());
    }
}
