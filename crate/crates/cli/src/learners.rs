//! Learner grid syntax.
//!
//! A grid is `+`-separated entries: `wls`, `wls_cosine:K`, `logistic`,
//! `logistic_cosine:K`, `knn:K`, `kernel:H`, `boost:D`. `boost:A-B` expands to
//! one boosted learner per depth in `A..=B`.

use eplearner::LearnerConfig;

use crate::config::parse_usize_list;

fn arg<T: std::str::FromStr>(name: &str, v: Option<&str>) -> Result<T, String> {
    let v = v.ok_or_else(|| format!("`{name}` needs an argument, e.g. `{name}:4`"))?;
    v.parse().map_err(|_| format!("bad argument `{v}` for `{name}`"))
}

pub fn parse_grid(s: &str) -> Result<Vec<LearnerConfig>, String> {
    let mut out = Vec::new();
    for entry in s.split('+').map(str::trim) {
        let (name, value) = match entry.split_once(':') {
            Some((n, v)) => (n.trim(), Some(v.trim())),
            None => (entry, None),
        };
        match name {
            "wls" => out.push(LearnerConfig::wls_linear()),
            "logistic" => out.push(LearnerConfig::logistic_linear()),
            "wls_cosine" => out.push(LearnerConfig::wls_cosine(arg(name, value)?)),
            "logistic_cosine" => out.push(LearnerConfig::logistic_cosine(arg(name, value)?)),
            "knn" => out.push(LearnerConfig::knn(arg(name, value)?)),
            "kernel" => out.push(LearnerConfig::kernel(arg(name, value)?)),
            "boost" => {
                let depths = parse_usize_list(value.ok_or("`boost` needs a depth, e.g. `boost:1-8`")?)?;
                out.extend(LearnerConfig::boosted_grid(depths));
            }
            "" => return Err(format!("empty learner entry in `{s}`")),
            other => return Err(format!("unknown learner `{other}` (expected wls, wls_cosine, logistic, logistic_cosine, knn, kernel, boost)")),
        }
    }
    for c in &out {
        c.validate().map_err(|e| e.to_string())?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("boost:1-3").unwrap(), LearnerConfig::boosted_grid(1..=3));
        assert_eq!(parse_grid("wls + wls_cosine:4").unwrap(), vec![LearnerConfig::wls_linear(), LearnerConfig::wls_cosine(4)]);
        assert!(parse_grid("forest:3").is_err());
        assert!(parse_grid("boost:9").is_err());
        assert!(parse_grid("knn").is_err());
        assert!(parse_grid("knn:0").is_err());
    }
}
