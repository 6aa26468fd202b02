use std::io::Write;

use serde::{Deserialize, Serialize};

use super::evaluate::{
    check_seed_disjointness, evaluate_workloads, summarize, EpisodeReport, PolicySpec,
};
use super::ExperimentConfig;
use crate::error::{Error, Result};

/// `(baseline - candidate) / baseline * 100`.
pub fn percent_reduction(baseline: f64, candidate: f64) -> f64 {
    (baseline - candidate) / baseline * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub episodes: usize,
    pub mean_total_completion_time: f64,
    pub sd_total_completion_time: f64,
    pub mean_reschedules: f64,
    /// Percent reduction of this policy's mean against every policy in the comparison,
    /// in input order.
    pub reductions: Vec<(String, f64)>,
}

impl ComparisonRow {
    pub fn reduction_vs(&self, baseline: &str) -> Option<f64> {
        self.reductions
            .iter()
            .find(|(n, _)| n == baseline)
            .map(|&(_, r)| r)
    }
}

pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub reports: Vec<(String, Vec<EpisodeReport>)>,
}

/// Runs every policy on the same pre-generated workloads.
pub fn compare(
    cfg: &ExperimentConfig,
    policies: &[PolicySpec],
    allow_overlap: bool,
) -> Result<Comparison> {
    if policies.len() < 2 {
        return Err(Error::usage("compare needs at least two policies"));
    }
    let seeds = cfg.eval_seeds();
    for p in policies {
        check_seed_disjointness(p, &seeds, allow_overlap)?;
    }
    let env = cfg.build_env()?;
    let workloads = seeds
        .iter()
        .map(|&s| env.workload(s))
        .collect::<Result<Vec<_>>>()?;

    let mut reports = Vec::with_capacity(policies.len());
    for p in policies {
        reports.push((p.name().to_owned(), evaluate_workloads(cfg, p, &workloads)?));
    }
    let summaries: Vec<_> = reports
        .iter()
        .map(|(n, r)| (n.clone(), summarize(r)))
        .collect();
    let rows = summaries
        .iter()
        .map(|(name, s)| ComparisonRow {
            policy: name.clone(),
            episodes: s.episodes,
            mean_total_completion_time: s.mean_total_completion_time,
            sd_total_completion_time: s.sd_total_completion_time,
            mean_reschedules: s.mean_reschedules,
            reductions: summaries
                .iter()
                .map(|(b, bs)| {
                    let r = percent_reduction(
                        bs.mean_total_completion_time,
                        s.mean_total_completion_time,
                    );
                    (b.clone(), r)
                })
                .collect(),
        })
        .collect();
    Ok(Comparison { rows, reports })
}

/// Summary table with one `reduction_vs_<policy>_pct` column per policy.
pub fn write_comparison_csv<W: Write>(w: W, rows: &[ComparisonRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = [
        "policy",
        "episodes",
        "mean_total_completion_time",
        "sd_total_completion_time",
        "mean_reschedules",
    ]
    .map(String::from)
    .to_vec();
    if let Some(first) = rows.first() {
        header.extend(
            first
                .reductions
                .iter()
                .map(|(b, _)| format!("reduction_vs_{b}_pct")),
        );
    }
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.policy.clone(),
            r.episodes.to_string(),
            r.mean_total_completion_time.to_string(),
            r.sd_total_completion_time.to_string(),
            r.mean_reschedules.to_string(),
        ];
        rec.extend(r.reductions.iter().map(|(_, v)| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io("<comparison csv>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_sign() {
        assert_eq!(percent_reduction(200.0, 150.0), 25.0);
        assert!(percent_reduction(100.0, 120.0) < 0.0);
        assert!((percent_reduction(160.8, 100.0) - 37.81).abs() < 0.005);
        assert_eq!(percent_reduction(123.0, 123.0), 0.0);
    }
}
