use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use eplearner::crossfit::{fit_nuisances_with, partition_folds, Clamps, NuisanceLibrary, DEFAULT_CRR_FLOOR, DEFAULT_ETA, DEFAULT_FOLDS};
use eplearner::data::read_covariates_csv;
use eplearner::estimators::{crr_dr_pseudo, crr_ep_pseudo, dr_pseudo_outcomes, PseudoRegression};
use eplearner::metalearners::{fit_method, EpOptions, FitOptions};
use eplearner::parallel::Execution;
use eplearner::sieve::{check_score_equation, debias_outcome_regression, DebiasMethod, SieveBasis};
use eplearner::simulation::{generate, run_benchmark, BenchmarkConfig, Dgp, LearnerGrid, ScenarioConfig, Scenario};
use eplearner::{ContrastFamily, ContrastModel, Dataset, LearnerConfig, Method, NuisanceEstimates, RiskSpec};

use crate::config::{parse_bool, parse_usize_list, RunConfig};
use crate::error::CliError;
use crate::learners::parse_grid;

type CliResult<T> = Result<T, CliError>;

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Writes to `path`, or to stdout when no path is given.
fn sink(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_data(cfg: &RunConfig) -> CliResult<Dataset> {
    let path = cfg.require_path("data")?;
    Ok(Dataset::from_csv_path(&path)?)
}

fn tagged<T>(key: &str, r: eplearner::Result<T>) -> CliResult<T> {
    r.map_err(|e| match CliError::from(e) {
        CliError::Validation { message, .. } => CliError::validation(Some(key), message),
        other => other,
    })
}

fn binary(data: &Dataset) -> bool {
    data.outcome().iter().all(|y| *y == 0.0 || *y == 1.0)
}

// ---------------------------------------------------------------- simulate

fn theta_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}_theta0.{}", ext.to_string_lossy()),
        None => format!("{stem}_theta0"),
    };
    out.with_file_name(name)
}

pub fn simulate(cfg: &RunConfig) -> CliResult<()> {
    let scenario: Scenario = tagged("scenario", cfg.require("scenario")?.parse())?;
    let overlap = tagged("overlap", cfg.string("overlap").unwrap_or_else(|| "moderate".into()).parse())?;
    let complexity = tagged("complexity", cfg.string("complexity").unwrap_or_else(|| "simple".into()).parse())?;
    let n: usize = cfg.parsed_or("n", 1000)?;
    let seed: u64 = cfg.parsed_or("seed", 1)?;
    let out = cfg.require_path("out")?;
    let truth_out = cfg.path("truth_out").unwrap_or_else(|| theta_path(&out));
    cfg.reject_unknown()?;

    let dgp = Dgp::new(scenario, overlap, complexity);
    let sim = tagged("n", generate(&ScenarioConfig { dgp, n, seed }))?;
    let mut w = create(&out)?;
    sim.data.write_csv(&mut w)?;
    w.flush()?;
    let mut t = create(&truth_out)?;
    writeln!(t, "theta0")?;
    for v in &sim.theta0 {
        writeln!(t, "{v}")?;
    }
    t.flush()?;
    if let Some(acc) = sim.acceptance {
        log::info!("rejection sampler acceptance {acc:.4}");
    }
    log::info!("wrote {} rows to {} and the true contrast to {}", n, out.display(), truth_out.display());
    Ok(())
}

// ------------------------------------------------------- shared nuisances

struct NuisanceSetup {
    library: NuisanceLibrary,
    folds: usize,
    seed: u64,
    eta: f64,
    mu_floor: f64,
}

fn default_library(binary_outcome: bool) -> NuisanceLibrary {
    let outcome = if binary_outcome {
        vec![LearnerConfig::logistic_cosine(2), LearnerConfig::logistic_cosine(4), LearnerConfig::logistic_cosine(6)]
    } else {
        vec![LearnerConfig::wls_cosine(4), LearnerConfig::wls_cosine(8), LearnerConfig::wls_cosine(12)]
    };
    NuisanceLibrary { propensity: vec![LearnerConfig::logistic_linear(), LearnerConfig::logistic_cosine(2)], outcome }
}

fn nuisance_setup(cfg: &RunConfig, data: &Dataset) -> CliResult<NuisanceSetup> {
    let default = default_library(binary(data));
    let propensity = cfg.with("propensity", parse_grid)?.unwrap_or(default.propensity);
    let outcome = cfg.with("outcome", parse_grid)?.unwrap_or(default.outcome);
    let setup = NuisanceSetup {
        library: NuisanceLibrary { propensity, outcome },
        folds: cfg.parsed_or("folds", DEFAULT_FOLDS)?,
        seed: cfg.parsed_or("seed", 1)?,
        eta: cfg.parsed_or("eta", DEFAULT_ETA)?,
        mu_floor: cfg.parsed_or("mu_floor", DEFAULT_CRR_FLOOR)?,
    };
    if setup.folds < 2 || setup.folds > data.n() {
        return Err(CliError::validation(Some("folds"), format!("need 2 <= folds <= n = {}, got {}", data.n(), setup.folds)));
    }
    Ok(setup)
}

struct Fitted {
    nuisances: NuisanceEstimates,
    propensity: LearnerConfig,
    outcome: LearnerConfig,
}

fn spec_for(family: ContrastFamily, data: &Dataset) -> RiskSpec {
    let spec = RiskSpec::for_family(family);
    if binary(data) {
        spec.with_outcome_range(0.0, 1.0)
    } else {
        spec
    }
}

fn fit_nuisances(setup: &NuisanceSetup, data: &Dataset, spec: &RiskSpec) -> CliResult<Fitted> {
    let (propensity, outcome) = setup.library.select(data, setup.folds, setup.seed)?;
    let folds = partition_folds(data.n(), setup.folds, setup.seed)?;
    let raw = fit_nuisances_with(data, &folds, &propensity, &outcome, spec, Execution::Sequential)?;
    let mut clamps = Clamps::for_spec(spec);
    clamps.eta = setup.eta;
    if let Some((_, hi)) = clamps.mu_bounds {
        clamps.mu_bounds = Some((setup.mu_floor, hi.max(setup.mu_floor)));
    }
    if let Err(e) = clamps.validate() {
        let key = if e.to_string().contains("eta") { "eta" } else { "mu_floor" };
        return Err(CliError::validation(Some(key), e.to_string()));
    }
    let nuisances = if clamps == raw.clamps() { raw } else { raw.with_clamps(data, clamps)? };
    Ok(Fitted { nuisances, propensity, outcome })
}

fn ep_options(cfg: &RunConfig) -> CliResult<EpOptions> {
    let defaults = EpOptions::default();
    let k_grid = cfg.with("k_grid", parse_usize_list)?.unwrap_or(defaults.k_grid);
    if k_grid.contains(&0) {
        return Err(CliError::validation(Some("k_grid"), "sieve dimensions must be positive".into()));
    }
    let method = cfg.with("debias_method", |s| match s {
        "auto" => Ok(None),
        _ => s.parse::<u8>().map_err(|_| format!("expected auto, 1, 2 or 3, got `{s}`")).and_then(|m| DebiasMethod::from_number(m).map(Some).map_err(|e| e.to_string())),
    })?;
    let simplified = cfg.with("simplified", |s| if s == "auto" { Ok(None) } else { parse_bool(s).map(Some) })?;
    Ok(EpOptions {
        k_grid,
        method: method.flatten(),
        simplified: simplified.flatten(),
        ridge: cfg.parsed_or("sieve_ridge", defaults.ridge)?,
    })
}

fn learner_list(cfgs: &[LearnerConfig]) -> String {
    cfgs.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" + ")
}

// --------------------------------------------------------------------- fit

pub fn fit(cfg: &RunConfig) -> CliResult<()> {
    let data = read_data(cfg)?;
    let method: Method = tagged("method", cfg.require("method")?.parse())?;
    let family: ContrastFamily = tagged("family", cfg.string("family").unwrap_or_else(|| "cate".into()).parse())?;
    let setup = nuisance_setup(cfg, &data)?;
    let defaults = FitOptions::default();
    let stage2 = cfg.with("stage2", parse_grid)?.unwrap_or(defaults.stage2);
    let opts = FitOptions {
        stage2,
        outcome: LearnerConfig::wls_linear(),
        ep: ep_options(cfg)?,
        truncate: cfg.with("truncate", parse_bool)?.unwrap_or(defaults.truncate),
        knn_k: cfg.parsed_or("knn_k", defaults.knn_k)?,
        exec: Execution::Sequential,
    };
    let out = cfg.require_path("out")?;
    let report = cfg.path("report");
    cfg.reject_unknown()?;

    if let Err(e) = method.check_supports(family) {
        return Err(CliError::validation(Some("method"), e.to_string()));
    }
    let spec = spec_for(family, &data);
    let fitted = fit_nuisances(&setup, &data, &spec)?;
    let mut opts = opts;
    // the T-learner reuses the selected outcome learner for its arm fits
    opts.outcome = fitted.outcome.clone();
    let mut model = fit_method(method, &data, &fitted.nuisances, &spec, &opts)?;
    model.metadata.insert("seed".into(), setup.seed.to_string());
    model.metadata.insert("folds".into(), setup.folds.to_string());
    model.metadata.insert("propensity".into(), fitted.propensity.to_string());
    model.metadata.insert("outcome".into(), fitted.outcome.to_string());
    model.metadata.insert("eta".into(), setup.eta.to_string());
    model.save(&out)?;

    let mut w = sink(report.as_deref())?;
    write_fit_report(&mut w, &model, &data, &fitted, &opts)?;
    w.flush()?;
    Ok(())
}

fn write_fit_report(w: &mut dyn Write, m: &ContrastModel, data: &Dataset, fitted: &Fitted, opts: &FitOptions) -> io::Result<()> {
    writeln!(w, "method: {}", m.method)?;
    writeln!(w, "family: {}", m.family.name())?;
    writeln!(w, "n: {}", data.n())?;
    writeln!(w, "d: {}", data.d())?;
    writeln!(w, "propensity_learner: {}", fitted.propensity)?;
    writeln!(w, "outcome_learner: {}", fitted.outcome)?;
    writeln!(w, "stage2_grid: {}", learner_list(&opts.stage2))?;
    writeln!(w, "base_learner: {}", m.base_learner)?;
    if let Some(k) = m.k {
        writeln!(w, "k_cv: {k}")?;
    }
    if let Some(r) = m.score_residual {
        writeln!(w, "score_residual: {r:.6e}")?;
    }
    if let Some(d) = m.metadata.get("debias_method") {
        writeln!(w, "debias_method: {d}")?;
    }
    match m.truncation {
        Some((lo, hi)) => writeln!(w, "truncation: [{lo}, {hi}]")?,
        None => writeln!(w, "truncation: none")?,
    }
    writeln!(w, "negative_weight_count: {}", m.negative_weight_count)?;
    if !m.cv_table.is_empty() {
        writeln!(w, "cv_table:")?;
        writeln!(w, "  k,learner,criterion")?;
        for e in &m.cv_table {
            writeln!(w, "  {},{},{:.10e}", e.k, e.learner, e.criterion)?;
        }
    }
    Ok(())
}

// ----------------------------------------------------------------- predict

pub fn predict(cfg: &RunConfig) -> CliResult<()> {
    let model_path = cfg.require_path("model")?;
    let query_path = cfg.require_path("query")?;
    let out = cfg.path("out");
    cfg.reject_unknown()?;

    let model = ContrastModel::load(&model_path)?;
    let file = File::open(&query_path).map_err(|e| CliError::Runtime(format!("{}: {e}", query_path.display())))?;
    let query = read_covariates_csv(io::BufReader::new(file))?;
    let theta = tagged("query", model.predict_contrast(&query))?;
    let mut w = sink(out.as_deref())?;
    writeln!(w, "theta")?;
    for t in theta {
        writeln!(w, "{t}")?;
    }
    w.flush()?;
    Ok(())
}

// --------------------------------------------------------------- benchmark

/// `all`, or a comma list of `scenario[:overlap[:complexity]]`; omitted parts
/// match every variant.
fn parse_scenarios(s: &str) -> Result<Vec<Dgp>, String> {
    let all = Dgp::all();
    if s.trim() == "all" {
        return Ok(all);
    }
    let mut out: Vec<Dgp> = Vec::new();
    for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
        let mut parts = item.split(':');
        let scenario: Scenario = parts.next().unwrap_or("").parse().map_err(|e: eplearner::Error| e.to_string())?;
        let overlap = parts.next().map(str::parse).transpose().map_err(|e: eplearner::Error| e.to_string())?;
        let complexity = parts.next().map(str::parse).transpose().map_err(|e: eplearner::Error| e.to_string())?;
        if parts.next().is_some() {
            return Err(format!("`{item}` has too many parts"));
        }
        let hits: Vec<Dgp> = all
            .iter()
            .copied()
            .filter(|d| d.scenario == scenario && overlap.is_none_or(|o| d.overlap == o) && complexity.is_none_or(|c| d.complexity == c))
            .collect();
        if hits.is_empty() {
            return Err(format!("`{item}` matches no scenario variant"));
        }
        for d in hits {
            if !out.contains(&d) {
                out.push(d);
            }
        }
    }
    if out.is_empty() {
        return Err("no scenarios given".into());
    }
    Ok(out)
}

fn parse_methods(s: &str) -> Result<Vec<Method>, String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(|m| m.parse::<Method>().map_err(|e| e.to_string())).collect()
}

/// `;`-separated grids, each labelled by its own spelling.
fn parse_grids(s: &str) -> Result<Vec<LearnerGrid>, String> {
    s.split(';').map(str::trim).filter(|x| !x.is_empty()).map(|g| parse_grid(g).map(|c| LearnerGrid::new(g, c))).collect()
}

pub fn benchmark(cfg: &RunConfig) -> CliResult<()> {
    let defaults = BenchmarkConfig::default();
    let bench = BenchmarkConfig {
        scenarios: cfg.with("scenarios", parse_scenarios)?.ok_or_else(|| CliError::validation(Some("scenarios"), "missing required key".into()))?,
        methods: cfg.with("methods", parse_methods)?.unwrap_or(defaults.methods),
        grids: cfg.with("stage2", parse_grids)?.unwrap_or(defaults.grids),
        n_list: cfg.with("n_list", parse_usize_list)?.unwrap_or(defaults.n_list),
        reps: cfg.parsed_or("reps", defaults.reps)?,
        base_seed: cfg.parsed_or("seed", defaults.base_seed)?,
        workers: cfg.parsed_or("workers", defaults.workers)?,
        folds: cfg.parsed_or("folds", defaults.folds)?,
        eval_points: cfg.parsed_or("eval_points", defaults.eval_points)?,
        ep: ep_options(cfg)?,
        truncate: cfg.with("truncate", parse_bool)?.unwrap_or(defaults.truncate),
        knn_k: cfg.parsed_or("knn_k", defaults.knn_k)?,
        nuisance: None,
        timing: cfg.with("timing", parse_bool)?.unwrap_or(defaults.timing),
    };
    let out = cfg.path("out");
    cfg.reject_unknown()?;
    if bench.workers == 0 {
        return Err(CliError::validation(Some("workers"), "need at least one worker".into()));
    }
    let result = run_benchmark(&bench)?;
    for row in result.errors() {
        log::warn!("{} {} n={} rep={}: {}", row.dgp.scenario, row.method, row.n, row.rep, row.error.as_deref().unwrap_or(""));
    }
    let mut w = sink(out.as_deref())?;
    result.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- diagnose

fn quantile(sorted: &[f64], q: f64) -> f64 {
    // type 7, as in most numeric libraries
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn census(w: &mut dyn Write, label: &str, p: &PseudoRegression) -> io::Result<()> {
    writeln!(w, "{label}_negative_weights: {}", p.negative_weight_count)?;
    writeln!(w, "{label}_outside_unit: {}", p.outside_unit_count)?;
    writeln!(w, "{label}_zero_weight_rows: {}", p.excluded.len())
}

pub fn diagnose(cfg: &RunConfig) -> CliResult<()> {
    let data = read_data(cfg)?;
    let family: ContrastFamily = tagged("family", cfg.string("family").unwrap_or_else(|| "cate".into()).parse())?;
    let setup = nuisance_setup(cfg, &data)?;
    let ep = ep_options(cfg)?;
    let out = cfg.path("out");
    cfg.reject_unknown()?;

    let spec = spec_for(family, &data);
    let fitted = fit_nuisances(&setup, &data, &spec)?;
    let method = ep.method.unwrap_or_else(|| DebiasMethod::auto(&spec));
    let simplified = ep.simplified.unwrap_or_else(|| spec.supports_simplified_features());

    let mut w = sink(out.as_deref())?;
    writeln!(w, "family: {}", family.name())?;
    writeln!(w, "n: {}", data.n())?;
    writeln!(w, "propensity_learner: {}", fitted.propensity)?;
    writeln!(w, "outcome_learner: {}", fitted.outcome)?;
    writeln!(w, "debias_method: {}", method.number())?;
    writeln!(w, "score_residuals:")?;
    writeln!(w, "  k,dim,solver_residual,recomputed_residual")?;
    let full = SieveBasis::fit(data.covariates(), *ep.k_grid.iter().max().expect("k_grid validated non-empty"));
    for &k in &ep.k_grid {
        let basis = full.truncated(k);
        let deb = debias_outcome_regression(&data, &fitted.nuisances, &spec, &basis, method, simplified, ep.ridge)?;
        let check = check_score_equation(&data, &fitted.nuisances, &spec, &basis, simplified, |i, a| deb.mu_star(i, a))?;
        writeln!(w, "  {k},{},{:.6e},{:.6e}", basis.dim(), deb.score_residual, check)?;
    }

    // pseudo-outcome ranges under the CATE nuisances
    let cate_spec = spec_for(ContrastFamily::Cate, &data);
    let cate = if family == ContrastFamily::Cate { fitted.nuisances.clone() } else { fit_nuisances(&setup, &data, &cate_spec)?.nuisances };
    let mut chi = dr_pseudo_outcomes(&data, &cate);
    chi.sort_by(f64::total_cmp);
    writeln!(w, "dr_pseudo_outcome_min: {:.6}", chi[0])?;
    writeln!(w, "dr_pseudo_outcome_q01: {:.6}", quantile(&chi, 0.01))?;
    writeln!(w, "dr_pseudo_outcome_q99: {:.6}", quantile(&chi, 0.99))?;
    writeln!(w, "dr_pseudo_outcome_max: {:.6}", chi[chi.len() - 1])?;

    if data.outcome().iter().all(|y| *y >= 0.0) {
        let crr_spec = spec_for(ContrastFamily::Crr, &data);
        let crr = if family == ContrastFamily::Crr { fitted.nuisances.clone() } else { fit_nuisances(&setup, &data, &crr_spec)?.nuisances };
        census(&mut w, "crr_dr", &crr_dr_pseudo(&data, &crr))?;
        let kmax = *ep.k_grid.iter().max().expect("k_grid validated non-empty");
        let crr_method = ep.method.unwrap_or_else(|| DebiasMethod::auto(&crr_spec));
        let deb = debias_outcome_regression(&data, &crr, &crr_spec, &full.truncated(kmax), crr_method, false, ep.ridge)?;
        census(&mut w, "crr_ep", &crr_ep_pseudo(&deb.mu_star0, &deb.mu_star1)?)?;
    } else {
        writeln!(w, "crr_census: skipped (negative outcomes)")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_lists() {
        assert_eq!(parse_scenarios("all").unwrap(), Dgp::all());
        assert_eq!(parse_scenarios("lowdim").unwrap().len(), 4);
        assert_eq!(parse_scenarios("crr:limited").unwrap().len(), 2);
        assert_eq!(parse_scenarios("intro,intro").unwrap().len(), 1);
        assert!(parse_scenarios("nowhere").is_err());
        assert!(parse_scenarios("lowdim:moderate:simple:x").is_err());
    }

    #[test]
    fn grids_keep_their_spelling() {
        let g = parse_grids("boost:1-2; wls").unwrap();
        assert_eq!(g[0].name, "boost:1-2");
        assert_eq!(g[1].configs, vec![LearnerConfig::wls_linear()]);
    }

    #[test]
    fn theta_file_name() {
        assert_eq!(theta_path(Path::new("/t/sim.csv")), PathBuf::from("/t/sim_theta0.csv"));
        assert_eq!(theta_path(Path::new("sim")), PathBuf::from("sim_theta0"));
    }

    #[test]
    fn type7_quantile() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert!((quantile(&v, 0.01) - 1.04).abs() < 1e-12);
    }
}
