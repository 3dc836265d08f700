use crate::crossfit::{partition_folds, FoldAssignment};
use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::parallel::{map_indices, Execution};

use super::{fit, LearnerConfig};

/// Cross-validated weighted squared error of each config on `assignment`.
/// Configs whose fit fails on some fold score `+inf`.
pub fn cv_criterion(
    configs: &[LearnerConfig],
    x: &Matrix,
    y: &[f64],
    weights: Option<&[f64]>,
    assignment: &FoldAssignment,
    exec: Execution,
) -> Result<Vec<f64>> {
    if configs.is_empty() {
        return Err(Error::InvalidConfig("cv_select needs at least one config".into()));
    }
    let n = x.nrows();
    if assignment.len() != n || y.len() != n {
        return Err(Error::InvalidConfig("fold assignment does not match the data".into()));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let jf = assignment.folds();
    // (config, fold) pairs are independent
    let cells = map_indices(configs.len() * jf, exec, |cell| -> Option<f64> {
        let (c, j) = (cell / jf, cell % jf);
        let train = assignment.training(j);
        let held = assignment.members(j);
        let xt = x.select_rows(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let wt: Option<Vec<f64>> = weights.map(|ws| train.iter().map(|&i| ws[i]).collect());
        match fit(&configs[c], &xt, &yt, wt.as_deref()) {
            Ok(m) => Some(held.iter().map(|&i| w(i) * (y[i] - m.predict(x.row(i))).powi(2)).sum()),
            Err(e) => {
                log::warn!("cv: {} failed on fold {}: {e}", configs[c], j + 1);
                None
            }
        }
    });
    let total_w: f64 = (0..n).map(w).sum();
    Ok(cells
        .chunks(jf)
        .map(|row| row.iter().try_fold(0.0, |acc, v| v.map(|v| acc + v)).map_or(f64::INFINITY, |s| s / total_w))
        .collect())
}

/// Index of the smallest finite value; ties go to the earliest position.
pub(crate) fn argmin_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b| *v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Picks the config with the smallest `folds`-fold cross-validated weighted
/// squared error. Ties go to the earlier config.
pub fn cv_select(configs: &[LearnerConfig], x: &Matrix, y: &[f64], weights: Option<&[f64]>, folds: usize, seed: u64) -> Result<LearnerConfig> {
    if configs.len() == 1 {
        configs[0].validate()?;
        return Ok(configs[0].clone());
    }
    let assignment = partition_folds(x.nrows(), folds, seed)?;
    let crit = cv_criterion(configs, x, y, weights, &assignment, Execution::default())?;
    let best = argmin_first(&crit).ok_or_else(|| Error::InvalidConfig("every candidate learner failed to fit".into()))?;
    log::debug!("cv_select picked {} (criterion {:.6})", configs[best], crit[best]);
    Ok(configs[best].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn step_data(n: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = xs.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 } + rng.random_range(-1.0..1.0)).collect();
        (Matrix::column(xs), y)
    }

    #[test]
    fn singleton_returned() {
        let (x, y) = step_data(20, 1);
        let c = LearnerConfig::knn(3);
        assert_eq!(cv_select(std::slice::from_ref(&c), &x, &y, None, 5, 0).unwrap(), c);
    }

    #[test]
    fn deterministic() {
        let (x, y) = step_data(200, 2);
        let grid = LearnerConfig::boosted_grid([1, 4, 8]);
        assert_eq!(cv_select(&grid, &x, &y, None, 5, 9).unwrap(), cv_select(&grid, &x, &y, None, 5, 9).unwrap());
    }

    #[test]
    fn ties_go_to_first() {
        assert_eq!(argmin_first(&[2.0, 1.0, 1.0]), Some(1));
        assert_eq!(argmin_first(&[f64::INFINITY, f64::NAN]), None);
    }

    #[test]
    fn step_function_prefers_depth_one() {
        let grid = vec![LearnerConfig::boosted(1), LearnerConfig::boosted(8)];
        let hits = (0..50)
            .filter(|&s| {
                let (x, y) = step_data(1000, 100 + s);
                cv_select(&grid, &x, &y, None, 5, s).unwrap() == grid[0]
            })
            .count();
        assert!(hits >= 45, "depth 1 chosen in {hits}/50 runs");
    }
}
