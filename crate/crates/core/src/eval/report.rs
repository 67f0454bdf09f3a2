use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::task::{EvalOutcome, TaskKind};
use super::EvalError;
use crate::marketplace::Timestamp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub n: usize,
    pub successes: usize,
    pub optimal: usize,
    pub success_rate: f64,
    /// `None` when nothing succeeded.
    pub optimality_rate: Option<f64>,
    pub failure_rate: f64,
}

impl Rates {
    pub fn from_counts(n: usize, successes: usize, optimal: usize) -> Rates {
        let n_f = n as f64;
        Rates {
            n,
            successes,
            optimal,
            success_rate: successes as f64 / n_f,
            optimality_rate: (successes > 0).then(|| optimal as f64 / successes as f64),
            // (n - s) / n rather than 1 - s/n, so 98 of 100 gives exactly 0.02
            failure_rate: (n - successes) as f64 / n_f,
        }
    }

    fn of<'a>(outcomes: impl Iterator<Item = &'a EvalOutcome>) -> Rates {
        let (mut n, mut s, mut o) = (0, 0, 0);
        for outcome in outcomes {
            n += 1;
            s += usize::from(outcome.success);
            o += usize::from(outcome.optimal);
        }
        Rates::from_counts(n, s, o)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Rates,
    pub per_kind: BTreeMap<TaskKind, Rates>,
    pub config_digest: String,
    pub timestamp: Timestamp,
}

pub fn compute_report(
    outcomes: &[EvalOutcome],
    config_digest: &str,
    timestamp: Timestamp,
) -> Result<EvalReport, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::NoOutcomes);
    }
    let mut per_kind = BTreeMap::new();
    for kind in TaskKind::ALL {
        if outcomes.iter().any(|o| o.kind == kind) {
            per_kind.insert(kind, Rates::of(outcomes.iter().filter(|o| o.kind == kind)));
        }
    }
    Ok(EvalReport {
        overall: Rates::of(outcomes.iter()),
        per_kind,
        config_digest: config_digest.to_string(),
        timestamp,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}%", v * 100.0))
}

impl EvalReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<18} {:>4} {:>9} {:>11} {:>9}", "task", "n", "success", "optimality", "failure");
        let rows = self
            .per_kind
            .iter()
            .map(|(k, r)| (k.as_str(), r))
            .chain(std::iter::once(("overall", &self.overall)));
        for (name, r) in rows {
            let _ = writeln!(
                out,
                "{:<18} {:>4} {:>9} {:>11} {:>9}",
                name,
                r.n,
                pct(Some(r.success_rate)),
                pct(r.optimality_rate),
                pct(Some(r.failure_rate)),
            );
        }
        out
    }
}
