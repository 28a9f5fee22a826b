//! Discrimination metrics, interval estimates and the creatinine outcome rule.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CpmError, Result};

pub const DEFAULT_N_BOOT: usize = 1000;
pub const MIN_N_BOOT: usize = 100;
pub const DEFAULT_TARGET_SENSITIVITY: f64 = 0.9;

fn class_weights(labels: &[u8], weights: &[f64]) -> (f64, f64) {
    labels
        .iter()
        .zip(weights)
        .fold((0.0, 0.0), |(p, n), (&l, &w)| if l == 1 { (p + w, n) } else { (p, n + w) })
}

fn check_lengths(scores: &[f64], labels: &[u8], weights: Option<&[f64]>) -> Result<()> {
    if scores.len() != labels.len() || weights.is_some_and(|w| w.len() != labels.len()) {
        return Err(CpmError::DimensionMismatch(format!(
            "{} scores, {} labels, {} weights",
            scores.len(),
            labels.len(),
            weights.map_or(labels.len(), <[f64]>::len)
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(CpmError::NonFiniteInput("score is NaN".to_string()));
    }
    if let Some(w) = weights {
        if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(CpmError::NonFiniteInput(
                "weights must be positive and finite".to_string(),
            ));
        }
    }
    Ok(())
}

/// Weighted Mann–Whitney AUC; tied scores count half.
pub fn auc(scores: &[f64], labels: &[u8], weights: &[f64]) -> Result<f64> {
    check_lengths(scores, labels, Some(weights))?;
    let (pos_total, neg_total) = class_weights(labels, weights);
    if pos_total <= 0.0 || neg_total <= 0.0 {
        return Err(CpmError::DegenerateLabels(
            "AUC needs both outcome classes".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut concordant = 0.0;
    let mut neg_below = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        let (mut pos_tied, mut neg_tied) = (0.0, 0.0);
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            let i = order[end];
            if labels[i] == 1 {
                pos_tied += weights[i];
            } else {
                neg_tied += weights[i];
            }
            end += 1;
        }
        concordant += pos_tied * neg_below + 0.5 * pos_tied * neg_tied;
        neg_below += neg_tied;
        start = end;
    }
    Ok(concordant / (pos_total * neg_total))
}

/// Standard deviation of AUC over stratified bootstrap resamples.
///
/// Resampling is uniform within each outcome class; sample weights travel
/// with the resampled rows.
pub fn auc_se(
    scores: &[f64],
    labels: &[u8],
    weights: &[f64],
    n_boot: usize,
    seed: u64,
) -> Result<f64> {
    if n_boot < MIN_N_BOOT {
        return Err(CpmError::InvalidArgument(format!(
            "n_boot must be at least {MIN_N_BOOT}, got {n_boot}"
        )));
    }
    auc(scores, labels, weights)?;
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = labels.len();
    let (mut s, mut l, mut w) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut values = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        s.clear();
        l.clear();
        w.clear();
        for class in [&pos, &neg] {
            for _ in 0..class.len() {
                let i = class[rng.random_range(0..class.len())];
                s.push(scores[i]);
                l.push(labels[i]);
                w.push(weights[i]);
            }
        }
        values.push(auc(&s, &l, &w)?);
    }
    let mean = values.iter().sum::<f64>() / n_boot as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_boot - 1) as f64;
    Ok(var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StratifiedAuc {
    pub per_group: BTreeMap<String, f64>,
    /// Groups lacking one outcome class; reported instead of an AUC.
    pub degenerate: Vec<String>,
}

/// AUC within each group. Ungrouped rows form the group `""`.
pub fn stratified_auc(
    scores: &[f64],
    labels: &[u8],
    weights: &[f64],
    groups: &[Option<String>],
) -> Result<StratifiedAuc> {
    check_lengths(scores, labels, Some(weights))?;
    if groups.len() != labels.len() {
        return Err(CpmError::DimensionMismatch(format!(
            "{} groups for {} labels",
            groups.len(),
            labels.len()
        )));
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(g.as_deref().unwrap_or("")).or_default().push(i);
    }
    let mut out = StratifiedAuc::default();
    for (group, rows) in members {
        let s: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
        let l: Vec<u8> = rows.iter().map(|&i| labels[i]).collect();
        let w: Vec<f64> = rows.iter().map(|&i| weights[i]).collect();
        match auc(&s, &l, &w) {
            Ok(value) => {
                out.per_group.insert(group.to_string(), value);
            }
            Err(CpmError::DegenerateLabels(_)) => {
                tracing::warn!(group, "group lacks an outcome class; AUC not reported");
                out.degenerate.push(group.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// One point of the empirical ROC: predict positive when `score > threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Every achievable operating point, from the most permissive threshold
/// (below the minimum score) to the strictest (at the maximum score).
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<Vec<OperatingPoint>> {
    check_lengths(scores, labels, None)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CpmError::DegenerateLabels(
            "ROC needs both outcome classes".to_string(),
        ));
    }
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut thresholds = Vec::with_capacity(distinct.len() + 1);
    thresholds.push(distinct[0] - 1.0);
    for pair in distinct.windows(2) {
        thresholds.push(pair[0] + (pair[1] - pair[0]) / 2.0);
    }
    thresholds.push(*distinct.last().unwrap());

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut points = Vec::with_capacity(thresholds.len());
    let mut cursor = 0;
    let (mut tn, mut fn_) = (0usize, 0usize);
    for t in thresholds {
        while cursor < order.len() && scores[order[cursor]] <= t {
            if labels[order[cursor]] == 1 {
                fn_ += 1;
            } else {
                tn += 1;
            }
            cursor += 1;
        }
        points.push(OperatingPoint {
            threshold: t,
            sensitivity: (n_pos - fn_) as f64 / n_pos as f64,
            specificity: tn as f64 / n_neg as f64,
        });
    }
    Ok(points)
}

/// The ROC point whose sensitivity is closest to `target`; ties go to higher
/// sensitivity, then higher specificity.
pub fn specificity_at_sensitivity(
    scores: &[f64],
    labels: &[u8],
    target: f64,
) -> Result<OperatingPoint> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(CpmError::InvalidArgument(format!(
            "target sensitivity must lie in (0, 1], got {target}"
        )));
    }
    let points = roc_points(scores, labels)?;
    let best = points
        .into_iter()
        .min_by(|a, b| {
            let da = (a.sensitivity - target).abs();
            let db = (b.sensitivity - target).abs();
            da.total_cmp(&db)
                .then(b.sensitivity.total_cmp(&a.sensitivity))
                .then(b.specificity.total_cmp(&a.specificity))
        })
        .expect("ROC has at least two points");
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Wilson score interval for a binomial proportion.
pub fn prevalence_ci(count: u64, n: u64, level: f64) -> Result<Proportion> {
    if n == 0 {
        return Err(CpmError::InvalidArgument("prevalence of an empty sample".to_string()));
    }
    if count > n {
        return Err(CpmError::InvalidArgument(format!("count {count} exceeds n {n}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(CpmError::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let nf = n as f64;
    let p = count as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lower = if count == 0 { 0.0 } else { (centre - half).max(0.0) };
    let upper = if count == n { 1.0 } else { (centre + half).min(1.0) };
    Ok(Proportion {
        point: p,
        lower,
        upper,
    })
}

/// Pre- and postoperative serum creatinine in mg/dL, held as exact decimals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreatininePanel {
    pub last_preop_scr: Decimal,
    pub max_postop_48h_scr: Decimal,
    pub max_postop_7d_scr: Decimal,
}

impl CreatininePanel {
    pub fn new(last_preop: Decimal, max_48h: Decimal, max_7d: Decimal) -> Result<Self> {
        let panel = CreatininePanel {
            last_preop_scr: last_preop,
            max_postop_48h_scr: max_48h,
            max_postop_7d_scr: max_7d,
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn parse(last_preop: &str, max_48h: &str, max_7d: &str) -> Result<Self> {
        let dec = |raw: &str| {
            Decimal::from_str(raw.trim())
                .map_err(|e| CpmError::InvalidPanel(format!("`{raw}` is not a decimal: {e}")))
        };
        Self::new(dec(last_preop)?, dec(max_48h)?, dec(max_7d)?)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.last_preop_scr, self.max_postop_48h_scr, self.max_postop_7d_scr]
            .iter()
            .any(|v| v <= &Decimal::ZERO)
        {
            return Err(CpmError::InvalidPanel(format!(
                "creatinine values must be positive: {self:?}"
            )));
        }
        if self.max_postop_7d_scr < self.max_postop_48h_scr {
            return Err(CpmError::InvalidPanel(format!(
                "7-day maximum {} is below the 48-hour maximum {}",
                self.max_postop_7d_scr, self.max_postop_48h_scr
            )));
        }
        Ok(())
    }
}

/// KDIGO creatinine criterion: a rise of at least 0.3 mg/dL within 48 hours
/// or a 7-day maximum at least 1.5 times the preoperative baseline.
pub fn kdigo_label(panel: &CreatininePanel) -> u8 {
    let absolute_rise = panel.max_postop_48h_scr - panel.last_preop_scr >= Decimal::new(3, 1);
    let relative_rise = panel.max_postop_7d_scr >= Decimal::new(15, 1) * panel.last_preop_scr;
    u8::from(absolute_rise || relative_rise)
}

/// Validation metrics for one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    pub auc_se: f64,
    pub per_group_auc: BTreeMap<String, f64>,
    pub degenerate_groups: Vec<String>,
    pub n_eval: usize,
    pub operating_point: OperatingPoint,
    pub threshold_table: Vec<OperatingPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub n_boot: usize,
    pub seed: u64,
    pub target_sensitivity: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            n_boot: DEFAULT_N_BOOT,
            seed: 0,
            target_sensitivity: DEFAULT_TARGET_SENSITIVITY,
        }
    }
}

pub fn metric_report(
    scores: &[f64],
    labels: &[u8],
    weights: &[f64],
    groups: &[Option<String>],
    options: ReportOptions,
) -> Result<MetricReport> {
    let strat = stratified_auc(scores, labels, weights, groups)?;
    Ok(MetricReport {
        auc: auc(scores, labels, weights)?,
        auc_se: auc_se(scores, labels, weights, options.n_boot, options.seed)?,
        per_group_auc: strat.per_group,
        degenerate_groups: strat.degenerate,
        n_eval: scores.len(),
        operating_point: specificity_at_sensitivity(scores, labels, options.target_sensitivity)?,
        threshold_table: roc_points(scores, labels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> Vec<f64> {
        vec![1.0; n]
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0], &unit(4)).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[1, 0, 1, 0, 0, 1], &unit(6)).unwrap(), 0.5);
        // pairs (pos, neg): (0.35,0.1) (0.35,0.4)x (0.8,0.1) (0.8,0.4) -> 3/4
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1], &unit(4)).unwrap(), 0.75);
        assert!(matches!(
            auc(&[0.1, 0.2], &[1, 1], &unit(2)),
            Err(CpmError::DegenerateLabels(_))
        ));
    }

    #[test]
    fn auc_weight_scaling() {
        let s = [0.2, 0.5, 0.5, 0.9, 0.1, 0.7];
        let l = [0, 1, 0, 1, 0, 0];
        let w = [1.0, 2.0, 0.5, 1.5, 3.0, 1.0];
        let w2: Vec<f64> = w.iter().map(|v| v * 2.0).collect();
        assert_eq!(auc(&s, &l, &w).unwrap(), auc(&s, &l, &w2).unwrap());
    }

    #[test]
    fn auc_se_requires_enough_resamples() {
        assert!(matches!(
            auc_se(&[0.1, 0.9], &[0, 1], &unit(2), 0, 1),
            Err(CpmError::InvalidArgument(_))
        ));
    }

    #[test]
    fn auc_se_near_zero_when_separated() {
        let n = 500;
        let scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i >= n / 2) as u8).collect();
        let se = auc_se(&scores, &labels, &unit(n), 200, 3).unwrap();
        assert!(se < 0.02);
        assert_eq!(se, auc_se(&scores, &labels, &unit(n), 200, 3).unwrap());
    }

    #[test]
    fn stratified_single_group_equals_pooled() {
        let s = [0.2, 0.5, 0.4, 0.9];
        let l = [0, 1, 0, 1];
        let g = vec![Some("A".to_string()); 4];
        let strat = stratified_auc(&s, &l, &unit(4), &g).unwrap();
        assert_eq!(strat.per_group.len(), 1);
        assert_eq!(strat.per_group["A"], auc(&s, &l, &unit(4)).unwrap());
    }

    #[test]
    fn stratified_flags_degenerate_groups() {
        let s = [0.2, 0.5, 0.4, 0.9];
        let l = [0, 1, 1, 1];
        let g = vec![
            Some("A".to_string()),
            Some("A".to_string()),
            Some("B".to_string()),
            Some("B".to_string()),
        ];
        let strat = stratified_auc(&s, &l, &unit(4), &g).unwrap();
        assert_eq!(strat.per_group.keys().collect::<Vec<_>>(), vec!["A"]);
        assert_eq!(strat.degenerate, vec!["B".to_string()]);
    }

    #[test]
    fn operating_point_examples() {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            scores.push(1.0 + i as f64);
            labels.push(1);
            scores.push(-1.0 - i as f64);
            labels.push(0);
        }
        let p = specificity_at_sensitivity(&scores, &labels, 0.9).unwrap();
        assert_eq!(p.sensitivity, 0.9);
        assert_eq!(p.specificity, 1.0);

        let p = specificity_at_sensitivity(&scores, &labels, 1.0).unwrap();
        assert_eq!(p.sensitivity, 1.0);
        assert!(p.threshold < 1.0);
        assert_eq!(p.specificity, 1.0);

        assert!(specificity_at_sensitivity(&scores, &labels, 0.0).is_err());
    }

    #[test]
    fn wilson_examples() {
        let zero = prevalence_ci(0, 100, 0.95).unwrap();
        assert_eq!(zero.lower, 0.0);
        assert_eq!(zero.point, 0.0);
        let half = prevalence_ci(50, 100, 0.95).unwrap();
        assert!(((half.lower + half.upper) / 2.0 - 0.5).abs() < 1e-12);
        assert!(prevalence_ci(1, 0, 0.95).is_err());
        assert!(prevalence_ci(5, 4, 0.95).is_err());
    }

    #[test]
    fn kdigo_examples() {
        let label = |a: &str, b: &str, c: &str| kdigo_label(&CreatininePanel::parse(a, b, c).unwrap());
        assert_eq!(label("1.0", "1.3", "1.3"), 1);
        assert_eq!(label("1.0", "1.0", "1.0"), 0);
        assert_eq!(label("0.8", "1.0", "1.2"), 1);
        assert_eq!(label("1.0", "1.29", "1.49"), 0);
        assert!(CreatininePanel::parse("1.0", "1.3", "1.2").is_err());
        assert!(CreatininePanel::parse("0", "1.3", "1.4").is_err());
        assert!(CreatininePanel::parse("x", "1.3", "1.4").is_err());
    }
}
