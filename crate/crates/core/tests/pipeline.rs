use eplearner::crossfit::{fit_nuisances_with, partition_folds, NuisanceEstimates};
use eplearner::estimators::{crr_ep_pseudo, onestep_losses};
use eplearner::metalearners::{cv_ep_criterion, fit_method, EpOptions, FitOptions};
use eplearner::parallel::Execution;
use eplearner::sieve::{debias_rows, DebiasMethod, SieveBasis};
use eplearner::simulation::{generate, Complexity, Dgp, Overlap, Scenario, ScenarioConfig, Simulated};
use eplearner::{ContrastFamily, ContrastModel, FittedRegressor, LearnerConfig, Method, RiskSpec};

fn setup(d: Dgp, n: usize, seed: u64, folds: usize) -> (Simulated, NuisanceEstimates) {
    let sim = generate(&ScenarioConfig { dgp: d, n, seed }).unwrap();
    let (p, o) = d.default_nuisance_library().select(&sim.data, folds, seed).unwrap();
    let assignment = partition_folds(n, folds, seed).unwrap();
    let nuis = fit_nuisances_with(&sim.data, &assignment, &p, &o, &d.spec(), Execution::Sequential).unwrap();
    (sim, nuis)
}

/// Recomputes the CV-EP table fold by fold from public building blocks.
fn criterion_oracle(sim: &Simulated, nuis: &NuisanceEstimates, spec: &RiskSpec, k_grid: &[usize], stage2: &[LearnerConfig], method: DebiasMethod, simplified: bool) -> Vec<f64> {
    let data = &sim.data;
    let folds = nuis.folds();
    let mut out = Vec::new();
    for &k in k_grid {
        let basis = SieveBasis::fit(data.covariates(), *k_grid.iter().max().unwrap()).truncated(k);
        for cfg in stage2 {
            let mut theta = vec![f64::NAN; data.n()];
            for j in 0..folds.folds() {
                let train = folds.training(j);
                let deb = debias_rows(data, nuis, spec, &basis, method, simplified, EpOptions::default().ridge, &train).unwrap();
                let x = data.covariates().select_rows(&train);
                let model = match spec.family {
                    ContrastFamily::Cate => {
                        let target: Vec<f64> = train.iter().map(|&i| deb.mu_star1[i] - deb.mu_star0[i]).collect();
                        FittedRegressor::fit(cfg, &x, &target, None).unwrap()
                    }
                    ContrastFamily::Crr => {
                        let m0: Vec<f64> = train.iter().map(|&i| deb.mu_star0[i]).collect();
                        let m1: Vec<f64> = train.iter().map(|&i| deb.mu_star1[i]).collect();
                        let p = crr_ep_pseudo(&m0, &m1).unwrap();
                        FittedRegressor::fit(cfg, &x, &p.pseudo_outcome, Some(&p.pseudo_weight)).unwrap()
                    }
                };
                for i in folds.members(j) {
                    theta[i] = match spec.family {
                        ContrastFamily::Cate => model.predict(data.w(i)),
                        ContrastFamily::Crr => model.predict_link(data.w(i)),
                    };
                }
            }
            let losses = onestep_losses(spec, data, nuis, &theta).unwrap();
            out.push(losses.iter().sum::<f64>() / data.n() as f64);
        }
    }
    out
}

#[test]
fn cv_ep_criterion_matches_an_independent_recomputation() {
    let cases = [
        (Dgp::new(Scenario::LowDim, Overlap::Moderate, Complexity::Complex), vec![LearnerConfig::wls_cosine(3), LearnerConfig::boosted(2)], DebiasMethod::Linear),
        (Dgp::new(Scenario::Crr, Overlap::Limited, Complexity::Simple), vec![LearnerConfig::logistic_linear(), LearnerConfig::logistic_cosine(2)], DebiasMethod::Logistic),
    ];
    for (d, stage2, method) in cases {
        let (sim, nuis) = setup(d, 400, 31, 5);
        let spec = d.spec();
        let k_grid = [1, 2, 4];
        let opts = EpOptions { method: Some(method), ..EpOptions::default() };
        let simplified = spec.supports_simplified_features();
        let table = cv_ep_criterion(&sim.data, &nuis, &spec, &k_grid, &stage2, &opts, true, Execution::Sequential).unwrap();
        let oracle = criterion_oracle(&sim, &nuis, &spec, &k_grid, &stage2, method, simplified);
        assert_eq!(table.len(), oracle.len());
        for (i, (e, o)) in table.iter().zip(&oracle).enumerate() {
            assert_eq!(e.k, k_grid[i / stage2.len()], "table is k-major");
            assert_eq!(e.learner, stage2[i % stage2.len()].to_string());
            assert!((e.criterion - o).abs() <= 1e-10, "{d}: entry {i}: {} vs {o}", e.criterion);
        }
    }
}

#[test]
fn cv_ep_refits_the_argmin() {
    let d = Dgp::new(Scenario::LowDim, Overlap::Moderate, Complexity::Simple);
    let (sim, nuis) = setup(d, 400, 5, 5);
    let opts = FitOptions { stage2: LearnerConfig::boosted_grid(1..=2), ep: EpOptions { k_grid: vec![1, 3], ..EpOptions::default() }, ..FitOptions::default() };
    let m = fit_method(Method::CvEp, &sim.data, &nuis, &d.spec(), &opts).unwrap();
    let best = m.cv_table.iter().min_by(|a, b| a.criterion.total_cmp(&b.criterion)).unwrap();
    assert_eq!(m.k, Some(best.k));
    assert_eq!(m.base_learner, best.learner);
    assert!(m.score_residual.unwrap() <= 1e-6);
}

#[test]
fn execution_mode_does_not_change_results() {
    let d = Dgp::new(Scenario::Crr, Overlap::Moderate, Complexity::Complex);
    let sim = generate(&ScenarioConfig { dgp: d, n: 300, seed: 8 }).unwrap();
    let folds = partition_folds(300, 5, 8).unwrap();
    let cfg = LearnerConfig::logistic_cosine(2);
    let spec = d.spec();
    let seq = fit_nuisances_with(&sim.data, &folds, &LearnerConfig::logistic_linear(), &cfg, &spec, Execution::Sequential).unwrap();
    let par = fit_nuisances_with(&sim.data, &folds, &LearnerConfig::logistic_linear(), &cfg, &spec, Execution::Parallel).unwrap();
    assert_eq!(seq.rows(), par.rows());
    let mut opts = FitOptions { stage2: LearnerConfig::boosted_grid(1..=2), ep: EpOptions { k_grid: vec![1, 2], ..EpOptions::default() }, ..FitOptions::default() };
    opts.exec = Execution::Sequential;
    let a = fit_method(Method::CvEp, &sim.data, &seq, &spec, &opts).unwrap();
    opts.exec = Execution::Parallel;
    let b = fit_method(Method::CvEp, &sim.data, &par, &spec, &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn every_supported_method_fits_and_round_trips() {
    for d in [
        Dgp::new(Scenario::LowDim, Overlap::Limited, Complexity::Simple),
        Dgp::new(Scenario::HighDim, Overlap::Moderate, Complexity::Complex),
        Dgp::new(Scenario::Crr, Overlap::Moderate, Complexity::Simple),
        Dgp::new(Scenario::Intro, Overlap::Moderate, Complexity::Simple),
    ] {
        let (sim, nuis) = setup(d, 300, 2, 5);
        let spec = d.spec();
        let opts = FitOptions { stage2: vec![LearnerConfig::boosted(2)], ep: EpOptions { k_grid: vec![1, 2], ..EpOptions::default() }, ..FitOptions::default() };
        for method in Method::ALL.into_iter().filter(|m| m.supports(spec.family)) {
            let m = fit_method(method, &sim.data, &nuis, &spec, &opts).unwrap_or_else(|e| panic!("{d} {method}: {e}"));
            let pred = m.predict_contrast(sim.data.covariates()).unwrap();
            assert!(pred.iter().all(|t| t.is_finite()), "{d} {method}");
            if let Some((lo, hi)) = m.truncation {
                assert!(pred.iter().all(|t| (lo..=hi).contains(t)));
            }
            let back = ContrastModel::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back.predict_contrast(sim.data.covariates()).unwrap(), pred);
        }
        for method in Method::ALL.into_iter().filter(|m| !m.supports(spec.family)) {
            assert!(fit_method(method, &sim.data, &nuis, &spec, &opts).is_err());
        }
    }
}
