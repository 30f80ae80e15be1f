//! Side-by-side comparison of two benchmark reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::benchmark::{BenchmarkReport, ClassSummary};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub class: String,
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// `b - a`.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<DeltaRow>,
}

fn metrics(s: &ClassSummary) -> [(&'static str, f64); 3] {
    [("t_auc", s.t_auc), ("r_auc", s.r_auc), ("converged_rate", s.converged as f64 / s.trials.max(1) as f64)]
}

/// Per-class metric deltas, `b - a`. Both reports must cover the same pairs.
pub fn compare_reports(a: &BenchmarkReport, b: &BenchmarkReport) -> Result<Comparison> {
    let ids = |r: &BenchmarkReport| r.trials.iter().map(|t| t.pair_id.clone()).collect::<BTreeSet<_>>();
    let (ia, ib) = (ids(a), ids(b));
    if ia != ib {
        let only_a = ia.difference(&ib).count();
        let only_b = ib.difference(&ia).count();
        return Err(Error::DimensionMismatch(format!(
            "reports cover different pairs: {only_a} only in the first, {only_b} only in the second"
        )));
    }
    let mut rows = Vec::new();
    for sa in &a.summaries {
        let Some(sb) = b.summary(&sa.class) else { continue };
        for ((metric, va), (_, vb)) in metrics(sa).into_iter().zip(metrics(sb)) {
            rows.push(DeltaRow { class: sa.class.clone(), metric: metric.into(), a: va, b: vb, delta: vb - va });
        }
    }
    Ok(Comparison { rows })
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<8} {:<15} {:>10} {:>10} {:>10}\n", "class", "metric", "a", "b", "delta");
        for r in &self.rows {
            let _ = writeln!(out, "{:<8} {:<15} {:>10.4} {:>10.4} {:>+10.4}", r.class, r.metric, r.a, r.b, r.delta);
        }
        out
    }
}
