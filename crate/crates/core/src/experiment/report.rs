use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::Millis;
use crate::sched::DecisionRecord;
use crate::sim::InvocationRecord;

use super::ExperimentError;

/// Number of evenly spaced points kept from each CDF in a report.
pub const CDF_POINTS: usize = 100;

/// Nearest-rank percentile of an ascending sample: the value at rank
/// `ceil(p/100 · n)`.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, n) - 1])
}

/// Empirical CDF: one `(value, fraction ≤ value)` point per distinct value.
pub fn cdf(samples: &[f64]) -> Result<Vec<(f64, f64)>, ExperimentError> {
    if samples.is_empty() {
        return Err(ExperimentError::EmptySample);
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = frac,
            _ => out.push((*x, frac)),
        }
    }
    Ok(out)
}

/// Thins a CDF to at most `points` entries, always keeping the last.
pub fn thin_cdf(full: &[(f64, f64)], points: usize) -> Vec<(f64, f64)> {
    if full.len() <= points || points == 0 {
        return full.to_vec();
    }
    let mut out: Vec<(f64, f64)> = (1..=points)
        .map(|k| full[(k * full.len()).div_ceil(points) - 1])
        .collect();
    out.dedup_by(|a, b| a.0 == b.0);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

impl LatencySummary {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let p = |q| percentile(&v, q);
        Some(LatencySummary {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len().max(1) as f64,
            median: p(50.0)?,
            p90: p(90.0)?,
            p95: p(95.0)?,
            p99: p(99.0)?,
            max: *v.last()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub label: String,
    pub end_to_end: LatencySummary,
    /// Mean execution components in ms.
    pub breakdown: BTreeMap<String, f64>,
    pub violations: usize,
    pub sla_violation_rate: f64,
    pub cdf: Vec<(f64, f64)>,
    /// Counts of terminal (immediate) decision reasons.
    pub reasons: BTreeMap<String, u64>,
    /// Mean end-to-end time per function.
    pub per_function_mean: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorReport {
    pub label: String,
    pub samples: usize,
    /// Nearest-rank percentiles of `|pred − actual| / actual`, keyed "p50" etc.
    pub relative_error: BTreeMap<String, f64>,
    pub mean_relative_error: f64,
    /// Rolling mean relative error against per-function observation index,
    /// averaged over replications.
    pub recovery: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub config_hash: String,
    /// One hash per replication trace.
    pub trace_hashes: Vec<String>,
    pub strategies: Vec<String>,
    pub replications: u32,
    pub recovery_window: usize,
    /// Every run passed the event-log audit.
    pub audit_ok: bool,
    /// Excluded from `Report::digest`.
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub meta: RunMeta,
    pub strategies: Vec<StrategyReport>,
    pub predictor: Vec<PredictorReport>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn relative_error(predicted: Millis, actual: Millis) -> f64 {
    (predicted - actual).abs() / actual.max(f64::MIN_POSITIVE)
}

/// Trailing rolling mean over `window` values.
pub fn rolling_mean(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            mean(xs[lo..=i].iter().copied())
        })
        .collect()
}

/// Per-function rolling relative error, in completion order, for the
/// predicted records of one strategy. Replications are averaged index by
/// index over those that reached the index.
pub fn predictor_error_curves(
    records: &[InvocationRecord],
    label: &str,
    window: usize,
) -> Result<BTreeMap<String, Vec<f64>>, ExperimentError> {
    let mut series: BTreeMap<(String, u32), Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.strategy == label) {
        if let Some(p) = r.predicted {
            series
                .entry((r.function.clone(), r.replication))
                .or_default()
                .push(relative_error(p, r.total));
        }
    }
    if series.is_empty() {
        return Err(ExperimentError::NoPredictions(label.to_string()));
    }
    let mut acc: BTreeMap<String, Vec<(f64, usize)>> = BTreeMap::new();
    for ((f, _), errs) in series {
        let curve = rolling_mean(&errs, window);
        let a = acc.entry(f).or_default();
        if a.len() < curve.len() {
            a.resize(curve.len(), (0.0, 0));
        }
        for (slot, v) in a.iter_mut().zip(curve) {
            slot.0 += v;
            slot.1 += 1;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(f, v)| (f, v.into_iter().map(|(s, n)| s / n as f64).collect()))
        .collect())
}

/// First observation index at which a recovery curve is below `threshold`.
pub fn recovery_index(curve: &[f64], threshold: f64) -> Option<usize> {
    curve.iter().position(|&e| e < threshold)
}

fn strategy_report(
    label: &str,
    records: &[&InvocationRecord],
    decisions: &[DecisionRecord],
) -> Option<StrategyReport> {
    let e2e: Vec<f64> = records.iter().map(|r| r.end_to_end).collect();
    let end_to_end = LatencySummary::from_samples(&e2e)?;
    let violations = records.iter().filter(|r| r.violated).count();
    let part = |f: fn(&InvocationRecord) -> f64| mean(records.iter().map(|r| f(r)));
    let breakdown = BTreeMap::from([
        ("queue".to_string(), part(|r| r.queue_delay)),
        ("transfer".to_string(), part(|r| r.transfer)),
        ("init".to_string(), part(|r| r.init)),
        ("deps".to_string(), part(|r| r.deps)),
        ("compute".to_string(), part(|r| r.compute)),
        (
            "warm_hit".to_string(),
            part(|r| if r.warm_hit { 1.0 } else { 0.0 }),
        ),
    ]);
    let mut reasons = BTreeMap::new();
    for d in decisions
        .iter()
        .filter(|d| d.strategy == label && d.is_immediate())
    {
        *reasons.entry(d.reason.clone()).or_insert(0) += 1;
    }
    let mut per_fn: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = per_fn.entry(r.function.clone()).or_default();
        e.0 += r.end_to_end;
        e.1 += 1;
    }
    Some(StrategyReport {
        label: label.to_string(),
        cdf: thin_cdf(&cdf(&e2e).ok()?, CDF_POINTS),
        sla_violation_rate: violations as f64 / e2e.len() as f64,
        violations,
        end_to_end,
        breakdown,
        reasons,
        per_function_mean: per_fn
            .into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect(),
    })
}

fn predictor_report(
    label: &str,
    records: &[&InvocationRecord],
    window: usize,
) -> Option<PredictorReport> {
    let mut errs: Vec<f64> = records
        .iter()
        .filter_map(|r| r.predicted.map(|p| relative_error(p, r.total)))
        .collect();
    if errs.is_empty() {
        return None;
    }
    let mean_relative_error = mean(errs.iter().copied());
    errs.sort_by(f64::total_cmp);
    let relative_error = [50.0, 90.0, 95.0, 99.0]
        .iter()
        .map(|&q| (format!("p{q}"), percentile(&errs, q).unwrap_or(0.0)))
        .collect();
    let owned: Vec<InvocationRecord> = records.iter().map(|r| (*r).clone()).collect();
    Some(PredictorReport {
        label: label.to_string(),
        samples: errs.len(),
        relative_error,
        mean_relative_error,
        recovery: predictor_error_curves(&owned, label, window).ok()?,
    })
}

impl Report {
    /// Builds the report from per-invocation and decision records. Used both
    /// after a live run and to regenerate a report from persisted CSVs.
    pub fn from_records(
        meta: RunMeta,
        records: &[InvocationRecord],
        decisions: &[DecisionRecord],
    ) -> Result<Report, ExperimentError> {
        let mut strategies = Vec::new();
        let mut predictor = Vec::new();
        for label in &meta.strategies {
            let rs: Vec<&InvocationRecord> =
                records.iter().filter(|r| &r.strategy == label).collect();
            let s = strategy_report(label, &rs, decisions)
                .ok_or_else(|| ExperimentError::NoRecords(label.clone()))?;
            strategies.push(s);
            if let Some(p) = predictor_report(label, &rs, meta.recovery_window) {
                predictor.push(p);
            }
        }
        Ok(Report {
            meta,
            strategies,
            predictor,
        })
    }

    pub fn strategy(&self, label: &str) -> Option<&StrategyReport> {
        self.strategies.iter().find(|s| s.label == label)
    }

    pub fn predictor(&self, label: &str) -> Option<&PredictorReport> {
        self.predictor.iter().find(|s| s.label == label)
    }

    /// SHA-256 over the report with wall time zeroed.
    pub fn digest(&self) -> String {
        let mut r = self.clone();
        r.meta.wall_time_ms = 0.0;
        let json = serde_json::to_vec(&r).expect("report serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Report, ExperimentError> {
        Ok(serde_json::from_str(s)?)
    }

    /// Plain-text summary table.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let m = &self.meta;
        let _ = writeln!(
            s,
            "seed {}  replications {}  config {}  audit {}",
            m.seed,
            m.replications,
            &m.config_hash[..12.min(m.config_hash.len())],
            if m.audit_ok { "ok" } else { "FAILED" }
        );
        let _ = writeln!(
            s,
            "{:<24} {:>7} {:>9} {:>9} {:>9} {:>9} {:>9} {:>8}",
            "strategy", "n", "mean", "p50", "p90", "p95", "p99", "sla-viol"
        );
        for st in &self.strategies {
            let e = &st.end_to_end;
            let _ = writeln!(
                s,
                "{:<24} {:>7} {:>9.1} {:>9.1} {:>9.1} {:>9.1} {:>9.1} {:>7.2}%",
                st.label,
                e.count,
                e.mean,
                e.median,
                e.p90,
                e.p95,
                e.p99,
                100.0 * st.sla_violation_rate
            );
        }
        for p in &self.predictor {
            let _ = writeln!(
                s,
                "predictor {}: {} samples, mean relative error {:.3}, p90 {:.3}",
                p.label,
                p.samples,
                p.mean_relative_error,
                p.relative_error.get("p90").copied().unwrap_or(0.0)
            );
        }
        s
    }
}

pub const COMPARED_METRICS: [&str; 6] =
    ["mean", "median", "p90", "p95", "p99", "sla_violation_rate"];

fn metric(s: &StrategyReport, name: &str) -> f64 {
    let e = &s.end_to_end;
    match name {
        "mean" => e.mean,
        "median" => e.median,
        "p90" => e.p90,
        "p95" => e.p95,
        "p99" => e.p99,
        _ => s.sla_violation_rate,
    }
}

/// Relative improvement of `a` over `b`: `(b − a) / b`. Positive means `a`
/// is lower (better). Zero when both are zero; `None` when only `b` is.
pub fn improvement(a: f64, b: f64) -> Option<f64> {
    if b == 0.0 {
        (a == 0.0).then_some(0.0)
    } else {
        Some((b - a) / b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub a: String,
    pub b: String,
    pub metric: String,
    pub value_a: f64,
    pub value_b: f64,
    pub improvement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn get(&self, a: &str, b: &str, metric: &str) -> Option<&ComparisonRow> {
        self.rows
            .iter()
            .find(|r| r.a == a && r.b == b && r.metric == metric)
    }

    pub fn table(&self) -> String {
        let mut s = String::from("improvement = (b - a) / b; positive means a is lower\n");
        let _ = writeln!(
            s,
            "{:<22} {:<22} {:<20} {:>12} {:>12} {:>10}",
            "a", "b", "metric", "a", "b", "improv"
        );
        for r in &self.rows {
            let imp = r
                .improvement
                .map_or("n/a".to_string(), |v| format!("{:.2}%", 100.0 * v));
            let _ = writeln!(
                s,
                "{:<22} {:<22} {:<20} {:>12.3} {:>12.3} {:>10}",
                r.a, r.b, r.metric, r.value_a, r.value_b, imp
            );
        }
        s
    }
}

/// Pairwise comparison of strategies between two reports over the same
/// traces. Strategies pair by label; when either report holds a single
/// strategy, every strategy of one is compared with every one of the other.
pub fn compare(a: &Report, b: &Report) -> Result<Comparison, ExperimentError> {
    if a.meta.trace_hashes != b.meta.trace_hashes {
        return Err(ExperimentError::TraceMismatch);
    }
    let pairs: Vec<(&StrategyReport, &StrategyReport)> =
        if a.strategies.len() == 1 || b.strategies.len() == 1 {
            a.strategies
                .iter()
                .flat_map(|x| b.strategies.iter().map(move |y| (x, y)))
                .collect()
        } else {
            a.strategies
                .iter()
                .filter_map(|x| b.strategy(&x.label).map(|y| (x, y)))
                .collect()
        };
    if pairs.is_empty() {
        return Err(ExperimentError::NoCommonStrategies);
    }
    Ok(Comparison {
        rows: pairs
            .into_iter()
            .flat_map(|(x, y)| compare_strategies(x, y))
            .collect(),
    })
}

pub fn compare_strategies(a: &StrategyReport, b: &StrategyReport) -> Vec<ComparisonRow> {
    COMPARED_METRICS
        .iter()
        .map(|m| {
            let (va, vb) = (metric(a, m), metric(b, m));
            ComparisonRow {
                a: a.label.clone(),
                b: b.label.clone(),
                metric: m.to_string(),
                value_a: va,
                value_b: vb,
                improvement: improvement(va, vb),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_examples() {
        assert_eq!(cdf(&[5.0]).unwrap(), vec![(5.0, 1.0)]);
        assert_eq!(
            cdf(&[1.0, 2.0, 2.0, 4.0]).unwrap(),
            vec![(1.0, 0.25), (2.0, 0.75), (4.0, 1.0)]
        );
        assert!(matches!(cdf(&[]), Err(ExperimentError::EmptySample)));
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), Some(5.0));
        assert_eq!(percentile(&v, 90.0), Some(9.0));
        assert_eq!(percentile(&v, 95.0), Some(10.0));
        assert_eq!(percentile(&v, 0.0), Some(1.0));
        assert_eq!(percentile(&[7.0], 99.0), Some(7.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn thinning_keeps_last_point() {
        let full = cdf(&(0..1000).map(f64::from).collect::<Vec<_>>()).unwrap();
        let t = thin_cdf(&full, 100);
        assert_eq!(t.len(), 100);
        assert_eq!(*t.last().unwrap(), (999.0, 1.0));
        assert!(t.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
    }

    #[test]
    fn improvement_arithmetic() {
        assert_eq!(improvement(500.0, 1000.0), Some(0.5));
        assert_eq!(improvement(0.0, 0.0), Some(0.0));
        assert_eq!(improvement(1.0, 0.0), None);
    }

    #[test]
    fn rolling() {
        assert_eq!(rolling_mean(&[1.0, 3.0, 5.0], 2), vec![1.0, 2.0, 4.0]);
        assert_eq!(recovery_index(&[0.5, 0.2, 0.05], 0.1), Some(2));
    }
}
