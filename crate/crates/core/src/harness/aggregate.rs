use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::{ReportRecord, Strategy};
use crate::error::{input_err, Error, Result};
use crate::eval::{mean_stderr, paired_t};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKey {
    Task,
    Feature,
    Reducer,
    Metric,
    Budget,
    Strategy,
    Policy,
}

impl GroupKey {
    pub const DEFAULT: [GroupKey; 5] =
        [GroupKey::Task, GroupKey::Feature, GroupKey::Reducer, GroupKey::Budget, GroupKey::Strategy];

    pub fn name(self) -> &'static str {
        match self {
            GroupKey::Task => "task",
            GroupKey::Feature => "feature",
            GroupKey::Reducer => "reducer",
            GroupKey::Metric => "metric",
            GroupKey::Budget => "budget",
            GroupKey::Strategy => "strategy",
            GroupKey::Policy => "policy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            GroupKey::Task,
            GroupKey::Feature,
            GroupKey::Reducer,
            GroupKey::Metric,
            GroupKey::Budget,
            GroupKey::Strategy,
            GroupKey::Policy,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| input_err!("unknown group-by key '{s}'"))
    }

    fn value(self, r: &ReportRecord) -> String {
        match self {
            GroupKey::Task => r.task.name().to_string(),
            GroupKey::Feature => r.feature.clone(),
            GroupKey::Reducer => r.reducer.name().to_string(),
            GroupKey::Metric => r.metric.name().to_string(),
            GroupKey::Budget => format!("{}", r.budget),
            GroupKey::Strategy => r.strategy.name().to_string(),
            GroupKey::Policy => r.policy.name().to_string(),
        }
    }
}

/// Sortable group label: budgets compare numerically.
#[derive(Debug, Clone, PartialEq, PartialOrd)]
enum KeyPart {
    Num(f64),
    Text(String),
}

fn key_of(keys: &[GroupKey], r: &ReportRecord) -> Vec<String> {
    keys.iter().map(|k| k.value(r)).collect()
}

fn sort_key(keys: &[GroupKey], values: &[String]) -> Vec<KeyPart> {
    keys.iter()
        .zip(values)
        .map(|(k, v)| match (k, v.parse::<f64>()) {
            (GroupKey::Budget, Ok(x)) => KeyPart::Num(x),
            _ => KeyPart::Text(v.clone()),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub key: Vec<String>,
    pub n: usize,
    pub failed: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Mean and standard error of MCC per group; failed cells are counted, not averaged.
pub fn aggregate(records: &[ReportRecord], keys: &[GroupKey]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(input_err!("cannot aggregate an empty report"));
    }
    let mut groups: BTreeMap<Vec<String>, (Vec<f64>, usize)> = BTreeMap::new();
    for r in records {
        let e = groups.entry(key_of(keys, r)).or_default();
        match r.mcc {
            Some(v) => e.0.push(v),
            None => e.1 += 1,
        }
    }
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|(key, (vals, failed))| {
            let (mean, stderr) = mean_stderr(&vals).unwrap_or((f64::NAN, f64::NAN));
            SummaryRow { key, n: vals.len(), failed, mean, stderr }
        })
        .collect();
    rows.sort_by(|a, b| {
        sort_key(keys, &a.key)
            .partial_cmp(&sort_key(keys, &b.key))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastRow {
    pub task: String,
    pub feature: String,
    pub reducer: String,
    pub budget: f64,
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Paired MAL − random comparison per (task, feature, reducer, budget),
/// pairing on (fold, repeat).
pub fn strategy_contrast(records: &[ReportRecord]) -> Result<Vec<ContrastRow>> {
    type Cell = (String, String, String, u64);
    let mut pairs: BTreeMap<Cell, BTreeMap<(usize, usize), [Option<f64>; 2]>> = BTreeMap::new();
    for r in records {
        let cell = (r.task.name().to_string(), r.feature.clone(), r.reducer.name().to_string(), r.budget.to_bits());
        let slot = pairs.entry(cell).or_default().entry((r.fold, r.repeat)).or_insert([None, None]);
        let i = if r.strategy == Strategy::Mal { 0 } else { 1 };
        if slot[i].is_some() {
            return Err(input_err!(
                "duplicate {} record for fold {} repeat {}",
                r.strategy.name(),
                r.fold,
                r.repeat
            ));
        }
        slot[i] = Some(r.mcc.unwrap_or(f64::NAN));
    }
    let mut out = Vec::new();
    for ((task, feature, reducer, budget), cells) in pairs {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for ((fold, repeat), v) in cells {
            match v {
                [Some(x), Some(y)] => {
                    if x.is_finite() && y.is_finite() {
                        a.push(x);
                        b.push(y);
                    }
                }
                _ => {
                    return Err(input_err!(
                        "{task}/{feature}/{reducer}: fold {fold} repeat {repeat} lacks a paired strategy record"
                    ))
                }
            }
        }
        let t = paired_t(&a, &b)?;
        out.push(ContrastRow {
            task,
            feature,
            reducer,
            budget: f64::from_bits(budget),
            n: t.n,
            mean_diff: t.mean_diff,
            t: t.t,
            df: t.df,
            p_value: t.p_value,
        });
    }
    out.sort_by(|x, y| {
        (&x.task, &x.feature, &x.reducer)
            .cmp(&(&y.task, &y.feature, &y.reducer))
            .then(x.budget.total_cmp(&y.budget))
    });
    Ok(out)
}

pub fn write_summary_csv(path: &Path, keys: &[GroupKey], rows: &[SummaryRow]) -> Result<()> {
    let mut text: String = keys.iter().map(|k| k.name()).collect::<Vec<_>>().join(",");
    text.push_str(",n,failed,mean,stderr\n");
    for r in rows {
        text.push_str(&format!("{},{},{},{:?},{:?}\n", r.key.join(","), r.n, r.failed, r.mean, r.stderr));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_contrast_csv(path: &Path, rows: &[ContrastRow]) -> Result<()> {
    let mut text = String::from("task,feature,reducer,budget,n,mean_diff,t,df,p_value\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{:?},{:?},{},{:?}\n",
            r.task, r.feature, r.reducer, r.budget, r.n, r.mean_diff, r.t, r.df, r.p_value
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
