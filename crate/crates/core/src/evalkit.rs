//! Point-forecast accuracy metrics and the multiple-comparisons-with-the-best
//! (MCB) average-rank analysis.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {actual} actual values vs {pred} predictions")]
    LengthMismatch { actual: usize, pred: usize },
    #[error("empty input")]
    Empty,
    #[error("MASE needs at least 2 in-sample values past the seasonal lag {season}, got {len}")]
    ShortInsample { len: usize, season: usize },
    #[error("MASE is undefined: in-sample naive error is zero")]
    ZeroScale,
    #[error("seasonal period must be at least 1")]
    BadSeason,
    #[error("metric {metric} is negative ({value}) for {dataset}/{horizon}/{model}")]
    Negative {
        metric: Metric,
        value: f64,
        dataset: String,
        horizon: HorizonTag,
        model: String,
    },
    #[error("duplicate row for {dataset}/{horizon}/{model}")]
    Duplicate {
        dataset: String,
        horizon: HorizonTag,
        model: String,
    },
    #[error("missing cell: model {model} has no row for {dataset}/{horizon}")]
    MissingCell {
        dataset: String,
        horizon: HorizonTag,
        model: String,
    },
    #[error("MCB needs at least 2 models, got {0}")]
    TooFewModels(usize),
    #[error("MCB needs at most {max} models, got {k}")]
    TooManyModels { k: usize, max: usize },
    #[error("no Studentized-range table for alpha {0}; use 0.10, 0.05 or 0.01")]
    UnsupportedAlpha(f64),
    #[error("unknown horizon tag {0:?}; expected short or long")]
    UnknownHorizon(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {msg}")]
    BadRow { row: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, EvalError>;

fn check_pair(actual: &[f64], pred: &[f64]) -> Result<()> {
    if actual.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            actual: actual.len(),
            pred: pred.len(),
        });
    }
    if actual.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

pub fn rmse(actual: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(actual, pred)?;
    let sse: f64 = actual.iter().zip(pred).map(|(a, p)| (a - p) * (a - p)).sum();
    Ok((sse / actual.len() as f64).sqrt())
}

pub fn mae(actual: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(actual, pred)?;
    let sae: f64 = actual.iter().zip(pred).map(|(a, p)| (a - p).abs()).sum();
    Ok(sae / actual.len() as f64)
}

/// Symmetric MAPE on the 0..=200 scale. A step where both the actual and the
/// prediction are zero contributes 0.
pub fn smape(actual: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(actual, pred)?;
    let total: f64 = actual
        .iter()
        .zip(pred)
        .map(|(a, p)| {
            let denom = a.abs() + p.abs();
            if denom == 0.0 {
                0.0
            } else {
                // min() keeps rounding from pushing a term past 1
                ((p - a).abs() / denom).min(1.0)
            }
        })
        .sum();
    Ok(200.0 * total / actual.len() as f64)
}

/// Mean absolute scaled error against the in-sample seasonal naive forecast
/// with period `season` (1 is the plain lag-1 naive).
pub fn mase_seasonal(actual: &[f64], pred: &[f64], insample: &[f64], season: usize) -> Result<f64> {
    if season == 0 {
        return Err(EvalError::BadSeason);
    }
    let err = mae(actual, pred)?;
    if insample.len() < season + 1 {
        return Err(EvalError::ShortInsample {
            len: insample.len(),
            season,
        });
    }
    let diffs = &insample[season..];
    let scale: f64 = diffs
        .iter()
        .zip(insample)
        .map(|(x, lagged)| (x - lagged).abs())
        .sum::<f64>()
        / diffs.len() as f64;
    if scale == 0.0 {
        return Err(EvalError::ZeroScale);
    }
    Ok(err / scale)
}

pub fn mase(actual: &[f64], pred: &[f64], insample: &[f64]) -> Result<f64> {
    mase_seasonal(actual, pred, insample, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Rmse,
    Mae,
    Smape,
    Mase,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Rmse, Metric::Mae, Metric::Smape, Metric::Mase];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Rmse => "rmse",
            Metric::Mae => "mae",
            Metric::Smape => "smape",
            Metric::Mase => "mase",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HorizonTag {
    Short,
    Long,
}

impl fmt::Display for HorizonTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HorizonTag::Short => "short",
            HorizonTag::Long => "long",
        })
    }
}

impl FromStr for HorizonTag {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "short" => Ok(HorizonTag::Short),
            "long" => Ok(HorizonTag::Long),
            _ => Err(EvalError::UnknownHorizon(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub rmse: f64,
    pub mae: f64,
    pub smape: f64,
    pub mase: f64,
}

impl Scores {
    /// All four metrics; `season` is the MASE naive period.
    pub fn compute(actual: &[f64], pred: &[f64], insample: &[f64], season: usize) -> Result<Self> {
        Ok(Self {
            rmse: rmse(actual, pred)?,
            mae: mae(actual, pred)?,
            smape: smape(actual, pred)?,
            mase: mase_seasonal(actual, pred, insample, season)?,
        })
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Rmse => self.rmse,
            Metric::Mae => self.mae,
            Metric::Smape => self.smape,
            Metric::Mase => self.mase,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub dataset: String,
    pub horizon: HorizonTag,
    pub model: String,
    pub scores: Scores,
}

/// Metric values keyed by (dataset, horizon, model). Rows keep insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricTable {
    rows: Vec<MetricRow>,
}

const HEADER: [&str; 7] = ["data", "horizon", "model", "rmse", "mae", "smape", "mase"];

impl MetricTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a row. Negative finite values and duplicate keys are rejected;
    /// non-finite values are kept and rank last in [`mcb`].
    pub fn push(&mut self, row: MetricRow) -> Result<()> {
        for m in Metric::ALL {
            let v = row.scores.get(m);
            if v < 0.0 {
                return Err(EvalError::Negative {
                    metric: m,
                    value: v,
                    dataset: row.dataset,
                    horizon: row.horizon,
                    model: row.model,
                });
            }
        }
        if self
            .rows
            .iter()
            .any(|r| r.dataset == row.dataset && r.horizon == row.horizon && r.model == row.model)
        {
            return Err(EvalError::Duplicate {
                dataset: row.dataset,
                horizon: row.horizon,
                model: row.model,
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn extend(&mut self, other: MetricTable) -> Result<()> {
        other.rows.into_iter().try_for_each(|r| self.push(r))
    }

    /// Rows for one horizon only.
    pub fn horizon(&self, tag: HorizonTag) -> MetricTable {
        MetricTable {
            rows: self.rows.iter().filter(|r| r.horizon == tag).cloned().collect(),
        }
    }

    pub fn horizons(&self) -> BTreeSet<HorizonTag> {
        self.rows.iter().map(|r| r.horizon).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(HEADER)?;
        for r in &self.rows {
            let s = &r.scores;
            w.write_record([
                r.dataset.clone(),
                r.horizon.to_string(),
                r.model.clone(),
                format!("{:?}", s.rmse),
                format!("{:?}", s.mae),
                format!("{:?}", s.smape),
                format!("{:?}", s.mase),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h.eq_ignore_ascii_case(name)).ok_or_else(|| EvalError::BadRow {
                row: 0,
                msg: format!("missing column {name:?}"),
            })
        };
        let idx: Vec<usize> = HEADER.iter().map(|h| col(h)).collect::<Result<_>>()?;
        let mut table = MetricTable::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = i + 1;
            let cell = |j: usize| rec.get(idx[j]).unwrap_or("");
            let num = |j: usize| {
                parse_metric(cell(j)).ok_or_else(|| EvalError::BadRow {
                    row,
                    msg: format!("{} value {:?} is not a number", HEADER[j], cell(j)),
                })
            };
            table.push(MetricRow {
                dataset: cell(0).to_string(),
                horizon: cell(1).parse()?,
                model: cell(2).to_string(),
                scores: Scores {
                    rmse: num(3)?,
                    mae: num(4)?,
                    smape: num(5)?,
                    mase: num(6)?,
                },
            })?;
        }
        Ok(table)
    }
}

fn parse_metric(s: &str) -> Option<f64> {
    match s.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "∞" => Some(f64::INFINITY),
        other => other.parse().ok(),
    }
}

/// Studentized-range upper quantiles `q_alpha(k, inf)` for k = 2..=20.
const Q_010: [f64; 19] = [
    2.3262, 2.9024, 3.2404, 3.4783, 3.6607, 3.8081, 3.9313, 4.0370, 4.1293, 4.2112, 4.2846, 4.3512, 4.4119,
    4.4678, 4.5195, 4.5675, 4.6124, 4.6545, 4.6941,
];
const Q_005: [f64; 19] = [
    2.7718, 3.3145, 3.6332, 3.8577, 4.0301, 4.1696, 4.2863, 4.3865, 4.4741, 4.5519, 4.6217, 4.6849, 4.7427,
    4.7959, 4.8452, 4.8910, 4.9337, 4.9739, 5.0117,
];
const Q_001: [f64; 19] = [
    3.6428, 4.1203, 4.4028, 4.6028, 4.7570, 4.8822, 4.9872, 5.0775, 5.1566, 5.2270, 5.2902, 5.3476, 5.4001,
    5.4485, 5.4933, 5.5350, 5.5740, 5.6107, 5.6452,
];

pub const MAX_MCB_MODELS: usize = 20;

/// Upper `alpha` quantile of the Studentized range for `k` groups and
/// infinite degrees of freedom.
pub fn studentized_range_quantile(k: usize, alpha: f64) -> Result<f64> {
    let table = if (alpha - 0.10).abs() < 1e-12 {
        &Q_010
    } else if (alpha - 0.05).abs() < 1e-12 {
        &Q_005
    } else if (alpha - 0.01).abs() < 1e-12 {
        &Q_001
    } else {
        return Err(EvalError::UnsupportedAlpha(alpha));
    };
    match k {
        0 | 1 => Err(EvalError::TooFewModels(k)),
        k if k > MAX_MCB_MODELS => Err(EvalError::TooManyModels { k, max: MAX_MCB_MODELS }),
        k => Ok(table[k - 2]),
    }
}

/// Half-width of the MCB interval around each mean rank.
pub fn mcb_half_width(k: usize, n_cases: usize, alpha: f64) -> Result<f64> {
    let q = studentized_range_quantile(k, alpha)?;
    let k = k as f64;
    Ok(0.5 * q * (k * (k + 1.0) / (6.0 * n_cases as f64)).sqrt())
}

/// 1-based ranks with ties averaged; NaN and infinities share the worst ranks.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let key = |v: f64| if v.is_finite() { v } else { f64::INFINITY };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| key(values[a]).total_cmp(&key(values[b])));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let v = key(values[order[start]]);
        let mut end = start + 1;
        while end < order.len() && key(values[order[end]]) == v {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq)]
pub struct McbEntry {
    pub model: String,
    pub mean_rank: f64,
    pub lower: f64,
    pub upper: f64,
    /// Interval overlaps the best model's interval.
    pub not_significantly_worse: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McbResult {
    /// Sorted by mean rank, best first; ties keep first-seen model order.
    pub entries: Vec<McbEntry>,
    pub best: String,
    pub half_width: f64,
    pub n_cases: usize,
    pub alpha: f64,
}

impl McbResult {
    pub fn entry(&self, model: &str) -> Option<&McbEntry> {
        self.entries.iter().find(|e| e.model == model)
    }
}

/// MCB over explicit cases: `cases[c][m]` is the metric of model `m` in case `c`.
pub fn mcb_cases(models: &[String], cases: &[Vec<f64>], alpha: f64) -> Result<McbResult> {
    let k = models.len();
    let half_width = mcb_half_width(k, cases.len().max(1), alpha)?;
    if cases.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sums = vec![0.0; k];
    for case in cases {
        if case.len() != k {
            return Err(EvalError::LengthMismatch {
                actual: k,
                pred: case.len(),
            });
        }
        for (s, r) in sums.iter_mut().zip(mid_ranks(case)) {
            *s += r;
        }
    }
    let n = cases.len() as f64;
    let mut entries: Vec<McbEntry> = models
        .iter()
        .zip(&sums)
        .map(|(m, s)| {
            let mean_rank = s / n;
            McbEntry {
                model: m.clone(),
                mean_rank,
                lower: mean_rank - half_width,
                upper: mean_rank + half_width,
                not_significantly_worse: false,
            }
        })
        .collect();
    entries.sort_by(|a, b| a.mean_rank.total_cmp(&b.mean_rank));
    let best_upper = entries[0].upper;
    for e in &mut entries {
        e.not_significantly_worse = e.lower <= best_upper;
    }
    Ok(McbResult {
        best: entries[0].model.clone(),
        entries,
        half_width,
        n_cases: cases.len(),
        alpha,
    })
}

/// Pools every (dataset, horizon, metric) cell of `table` into one ranking.
/// Models appear in first-seen row order.
pub fn mcb(table: &MetricTable, alpha: f64) -> Result<McbResult> {
    let mut models: Vec<String> = Vec::new();
    for r in table.rows() {
        if !models.contains(&r.model) {
            models.push(r.model.clone());
        }
    }
    if models.len() < 2 {
        return Err(EvalError::TooFewModels(models.len()));
    }
    let mut cells: BTreeMap<(&str, HorizonTag), Vec<Option<&Scores>>> = BTreeMap::new();
    for r in table.rows() {
        let m = models.iter().position(|x| *x == r.model).expect("model collected above");
        cells.entry((r.dataset.as_str(), r.horizon)).or_insert_with(|| vec![None; models.len()])[m] =
            Some(&r.scores);
    }
    let mut cases = Vec::with_capacity(cells.len() * Metric::ALL.len());
    for ((dataset, horizon), scores) in &cells {
        if let Some(m) = scores.iter().position(Option::is_none) {
            return Err(EvalError::MissingCell {
                dataset: dataset.to_string(),
                horizon: *horizon,
                model: models[m].clone(),
            });
        }
        for metric in Metric::ALL {
            cases.push(scores.iter().map(|s| s.expect("checked").get(metric)).collect());
        }
    }
    mcb_cases(&models, &cases, alpha)
}

/// One MCB ranking per horizon tag present in the table.
pub fn mcb_per_horizon(table: &MetricTable, alpha: f64) -> Result<Vec<(HorizonTag, McbResult)>> {
    table
        .horizons()
        .into_iter()
        .map(|h| Ok((h, mcb(&table.horizon(h), alpha)?)))
        .collect()
}

/// `horizon,model,mean_rank,lower,upper,not_significantly_worse`, one line
/// per model, best first within each horizon. `horizon` is `all` for a
/// pooled ranking.
pub fn write_rank_csv<W: Write>(results: &[(Option<HorizonTag>, McbResult)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["horizon", "model", "mean_rank", "lower", "upper", "not_significantly_worse"])?;
    for (tag, res) in results {
        let tag = tag.map_or_else(|| "all".to_string(), |t| t.to_string());
        for e in &res.entries {
            w.write_record([
                tag.clone(),
                e.model.clone(),
                format!("{:?}", e.mean_rank),
                format!("{:?}", e.lower),
                format!("{:?}", e.upper),
                e.not_significantly_worse.to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn error_metric_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(close(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5f64.sqrt(), 1e-12));
        assert_eq!(mae(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 3.5);
        assert_eq!(rmse(&[1.0], &[3.0]).unwrap(), 2.0);
        assert_eq!(mae(&[1.0], &[3.0]).unwrap(), 2.0);
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(mae(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn smape_examples() {
        assert_eq!(smape(&[3.0, -1.0], &[3.0, -1.0]).unwrap(), 0.0);
        assert!(close(smape(&[100.0], &[50.0]).unwrap(), 200.0 / 3.0, 1e-12));
        let two = (200.0 * 10.0 / 210.0 + 200.0 * 20.0 / 380.0) / 2.0;
        assert!(close(smape(&[100.0, 200.0], &[110.0, 180.0]).unwrap(), two, 1e-12));
        assert!(close(two, 10.025, 1e-3));
        assert_eq!(smape(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(smape(&[0.0], &[5.0]).unwrap(), 200.0);
    }

    #[test]
    fn mase_examples() {
        let insample = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mase(&[0.0, 0.0], &[2.0, -1.0], &insample).unwrap(), 1.5);
        assert_eq!(mase(&[7.0, 8.0], &[7.0, 8.0], &insample).unwrap(), 0.0);
        assert!(matches!(mase(&[1.0], &[2.0], &[5.0, 5.0, 5.0]), Err(EvalError::ZeroScale)));
        assert!(matches!(mase(&[1.0], &[2.0], &[5.0]), Err(EvalError::ShortInsample { .. })));
        // lag-2 naive on [1,3,2,4]: |2-1|, |4-3| -> scale 1
        assert_eq!(mase_seasonal(&[0.0], &[2.0], &[1.0, 3.0, 2.0, 4.0], 2).unwrap(), 2.0);
        assert!(matches!(mase_seasonal(&[0.0], &[1.0], &insample, 0), Err(EvalError::BadSeason)));
    }

    #[test]
    fn mid_rank_conventions() {
        assert_eq!(mid_ranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
        assert_eq!(mid_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
        assert_eq!(mid_ranks(&[1.0, 1.0, 0.0, 7.0]), vec![2.5, 2.5, 1.0, 4.0]);
        assert_eq!(mid_ranks(&[f64::INFINITY, 1e300, f64::NAN]), vec![2.5, 1.0, 2.5]);
    }

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn mcb_rank_fixtures() {
        let dom = mcb_cases(&names(&["A", "B"]), &vec![vec![1.0, 2.0]; 8], 0.05).unwrap();
        assert_eq!(dom.entry("A").unwrap().mean_rank, 1.0);
        assert_eq!(dom.entry("B").unwrap().mean_rank, 2.0);
        assert_eq!(dom.best, "A");

        let abc = mcb_cases(&names(&["A", "B", "C"]), &[vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 2.0]], 0.05).unwrap();
        assert_eq!(abc.entry("A").unwrap().mean_rank, 2.0);
        assert_eq!(abc.entry("B").unwrap().mean_rank, 1.5);
        assert_eq!(abc.entry("C").unwrap().mean_rank, 2.5);
        assert_eq!(abc.best, "B");

        let tie = mcb_cases(&names(&["A", "B", "C", "D"]), &vec![vec![0.5; 4]; 5], 0.05).unwrap();
        assert!(tie.entries.iter().all(|e| e.mean_rank == 2.5 && e.not_significantly_worse));
    }

    #[test]
    fn mcb_interval_width() {
        // hand value: 0.5 * 3.3145 * sqrt(12 / 168)
        let hw = mcb_half_width(3, 28, 0.05).unwrap();
        assert!(close(hw, 0.5 * 3.3145 * (12.0f64 / 168.0).sqrt(), 1e-12));
        let widths: Vec<f64> = [8, 28, 56].iter().map(|&n| mcb_half_width(5, n, 0.05).unwrap()).collect();
        assert!(widths[0] > widths[1] && widths[1] > widths[2]);
        assert!(mcb_half_width(5, 28, 0.01).unwrap() > mcb_half_width(5, 28, 0.10).unwrap());
        assert!(matches!(studentized_range_quantile(3, 0.2), Err(EvalError::UnsupportedAlpha(_))));
        assert!(matches!(studentized_range_quantile(1, 0.05), Err(EvalError::TooFewModels(1))));
        assert!(matches!(studentized_range_quantile(21, 0.05), Err(EvalError::TooManyModels { .. })));
    }

    #[test]
    fn studentized_range_k2_matches_normal() {
        // For k = 2 the range of two standard normals is sqrt(2)|Z|, so
        // q_alpha(2, inf) = sqrt(2) * z_{1 - alpha/2}.
        for (alpha, z) in [(0.10, 1.6448536269514722), (0.05, 1.959963984540054), (0.01, 2.5758293035489004)] {
            let q = studentized_range_quantile(2, alpha).unwrap();
            assert!(close(q, 2f64.sqrt() * z, 1e-4), "{alpha}: {q}");
        }
    }

    fn row(d: &str, h: HorizonTag, m: &str, v: f64) -> MetricRow {
        MetricRow {
            dataset: d.into(),
            horizon: h,
            model: m.into(),
            scores: Scores {
                rmse: v,
                mae: v,
                smape: v,
                mase: v,
            },
        }
    }

    #[test]
    fn table_mcb_and_missing_cells() {
        let mut t = MetricTable::new();
        for d in ["a", "b"] {
            t.push(row(d, HorizonTag::Short, "good", 1.0)).unwrap();
            t.push(row(d, HorizonTag::Short, "bad", f64::INFINITY)).unwrap();
            t.push(row(d, HorizonTag::Long, "good", 3.0)).unwrap();
            t.push(row(d, HorizonTag::Long, "bad", 2.0)).unwrap();
        }
        let per = mcb_per_horizon(&t, 0.05).unwrap();
        assert_eq!(per.len(), 2);
        assert_eq!(per[0].0, HorizonTag::Short);
        assert_eq!(per[0].1.best, "good");
        assert_eq!(per[0].1.n_cases, 8);
        assert_eq!(per[1].1.best, "bad");
        let pooled = mcb(&t, 0.05).unwrap();
        assert_eq!(pooled.n_cases, 16);
        assert_eq!(pooled.entry("good").unwrap().mean_rank, 1.5);

        assert!(matches!(t.push(row("a", HorizonTag::Short, "good", 1.0)), Err(EvalError::Duplicate { .. })));
        assert!(matches!(t.push(row("a", HorizonTag::Short, "x", -1.0)), Err(EvalError::Negative { .. })));
        t.push(row("c", HorizonTag::Short, "good", 1.0)).unwrap();
        match mcb(&t, 0.05) {
            Err(EvalError::MissingCell { dataset, model, .. }) => assert_eq!((dataset.as_str(), model.as_str()), ("c", "bad")),
            other => panic!("expected missing cell, got {other:?}"),
        }
        let mut single = MetricTable::new();
        single.push(row("a", HorizonTag::Short, "only", 1.0)).unwrap();
        assert!(matches!(mcb(&single, 0.05), Err(EvalError::TooFewModels(1))));
    }

    #[test]
    fn metric_csv_roundtrip() {
        let mut t = MetricTable::new();
        t.push(row("nflx", HorizonTag::Short, "naive", 0.1 + 0.2)).unwrap();
        t.push(row("nflx", HorizonTag::Long, "tcn", f64::INFINITY)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("data,horizon,model,rmse,mae,smape,mase\n"));
        assert_eq!(MetricTable::read_csv(buf.as_slice()).unwrap(), t);
        assert!(MetricTable::read_csv("data,horizon,model\n".as_bytes()).is_err());
        assert!(MetricTable::read_csv("data,horizon,model,rmse,mae,smape,mase\na,mid,m,1,1,1,1\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..40)) {
            let (a, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let r = rmse(&a, &p).unwrap();
            let m = mae(&a, &p).unwrap();
            prop_assert!(r >= m - 1e-12 * m.max(1.0));
        }

        #[test]
        fn joint_scaling_invariance(
            pairs in prop::collection::vec((0.5f64..50.0, 0.5f64..50.0), 1..20),
            c in 0.01f64..100.0,
        ) {
            let (a, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let ins: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
            let s = |v: &[f64]| v.iter().map(|x| x * c).collect::<Vec<_>>();
            let base = Scores::compute(&a, &p, &ins, 1).unwrap();
            let scaled = Scores::compute(&s(&a), &s(&p), &s(&ins), 1).unwrap();
            prop_assert!(close(scaled.rmse, c * base.rmse, 1e-9 * scaled.rmse.max(1.0)));
            prop_assert!(close(scaled.mae, c * base.mae, 1e-9 * scaled.mae.max(1.0)));
            prop_assert!(close(scaled.smape, base.smape, 1e-9));
            prop_assert!(close(scaled.mase, base.mase, 1e-9));
        }

        #[test]
        fn monotone_transform_keeps_ranks(cases in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 4), 1..10)) {
            let models = names(&["a", "b", "c", "d"]);
            let r1 = mcb_cases(&models, &cases, 0.05).unwrap();
            let warped: Vec<Vec<f64>> = cases.iter().map(|c| c.iter().map(|v| v.exp() * 3.0).collect()).collect();
            let r2 = mcb_cases(&models, &warped, 0.05).unwrap();
            prop_assert_eq!(&r1, &r2);
            let total: f64 = r1.entries.iter().map(|e| e.mean_rank).sum();
            prop_assert!(close(total, 10.0, 1e-9));
            prop_assert!(r1.entries.iter().all(|e| (1.0..=4.0).contains(&e.mean_rank)));
        }
    }
}
