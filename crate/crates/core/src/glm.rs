//! Weighted L1/L2-penalized logistic regression.
//!
//! Minimizes
//!
//! ```text
//!   (1/W) Σ wᵢ [log(1 + e^ηᵢ) − yᵢ ηᵢ]  +  l1 Σ |βⱼ|  +  (l2/2) Σ βⱼ²
//! ```
//!
//! with `ηᵢ = β₀ + xᵢ·β`, sums over penalized columns only, by cyclic
//! coordinate descent. Each coordinate takes a proximal Newton step on the
//! exact 1-D curvature and falls back to the quadratic majorizer (curvature
//! bound 1/4) whenever the Newton step would raise the objective, so the
//! objective never increases. The intercept is implicit and never penalized.

use serde::{Deserialize, Serialize};

use crate::error::{CpmError, Result};
use crate::metrics;
use crate::model::DataSplit;

pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITER: usize = 10_000;
pub const PENALTY_GRID_SIZE: usize = 20;
pub const PENALTY_GRID_RATIO: f64 = 1e-3;
/// Ridge has no finite strength that zeroes coefficients; its grid starts at
/// the lasso λ_max divided by this mixing floor (glmnet's convention).
pub const RIDGE_MIX_FLOOR: f64 = 1e-3;
/// Objective increases this small are rounding noise in the summed loss;
/// rejecting such steps would stall the solver near the optimum.
const ROUNDING_SLACK: f64 = 1e-14;
const NULL_FIT_TOL: f64 = 1e-11;

/// Dense design matrix stored column-major, with the nonzero rows of every
/// column indexed so binary indicator columns stay cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    columns: Vec<Vec<f64>>,
    nonzero: Vec<Vec<usize>>,
    column_names: Vec<String>,
    penalized: Vec<bool>,
}

impl DesignMatrix {
    pub fn from_columns(
        rows: usize,
        columns: Vec<Vec<f64>>,
        column_names: Vec<String>,
        penalized: Vec<bool>,
    ) -> Result<Self> {
        if rows < 2 {
            return Err(CpmError::DimensionMismatch(format!(
                "design needs at least 2 rows, got {rows}"
            )));
        }
        if column_names.len() != columns.len() || penalized.len() != columns.len() {
            return Err(CpmError::DimensionMismatch(format!(
                "{} columns, {} names, {} penalty flags",
                columns.len(),
                column_names.len(),
                penalized.len()
            )));
        }
        let mut nonzero = Vec::with_capacity(columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != rows {
                return Err(CpmError::DimensionMismatch(format!(
                    "column {} has {} rows, expected {rows}",
                    column_names[j],
                    col.len()
                )));
            }
            if let Some(bad) = col.iter().find(|v| !v.is_finite()) {
                return Err(CpmError::NonFiniteInput(format!(
                    "column {} holds {bad}",
                    column_names[j]
                )));
            }
            nonzero.push(
                col.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(i, _)| i)
                    .collect(),
            );
        }
        Ok(DesignMatrix {
            rows,
            columns,
            nonzero,
            column_names,
            penalized,
        })
    }

    /// Builds a design from row-major data with every column penalized.
    pub fn from_rows(data: &[Vec<f64>]) -> Result<Self> {
        let rows = data.len();
        let cols = data.first().map_or(0, Vec::len);
        if data.iter().any(|r| r.len() != cols) {
            return Err(CpmError::DimensionMismatch("ragged rows".to_string()));
        }
        let columns = (0..cols)
            .map(|j| data.iter().map(|r| r[j]).collect())
            .collect();
        let names = (0..cols).map(|j| format!("x{j}")).collect();
        Self::from_columns(rows, columns, names, vec![true; cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn penalized(&self) -> &[bool] {
        &self.penalized
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<DesignMatrix> {
        let columns = self
            .columns
            .iter()
            .map(|c| rows.iter().map(|&i| c[i]).collect())
            .collect();
        Self::from_columns(
            rows.len(),
            columns,
            self.column_names.clone(),
            self.penalized.clone(),
        )
    }

    /// Same data with only the unpenalized columns kept.
    fn unpenalized_part(&self) -> (DesignMatrix, Vec<usize>) {
        let keep: Vec<usize> = (0..self.cols()).filter(|&j| !self.penalized[j]).collect();
        let m = DesignMatrix {
            rows: self.rows,
            columns: keep.iter().map(|&j| self.columns[j].clone()).collect(),
            nonzero: keep.iter().map(|&j| self.nonzero[j].clone()).collect(),
            column_names: keep.iter().map(|&j| self.column_names[j].clone()).collect(),
            penalized: vec![false; keep.len()],
        };
        (m, keep)
    }

    fn linear_predictor(&self, intercept: f64, coefficients: &[f64]) -> Vec<f64> {
        let mut eta = vec![intercept; self.rows];
        for (j, &b) in coefficients.iter().enumerate() {
            if b != 0.0 {
                for &i in &self.nonzero[j] {
                    eta[i] += b * self.columns[j][i];
                }
            }
        }
        eta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub l1: f64,
    pub l2: f64,
}

impl PenaltySpec {
    pub fn none() -> Self {
        PenaltySpec { l1: 0.0, l2: 0.0 }
    }

    pub fn lasso(l1: f64) -> Self {
        PenaltySpec { l1, l2: 0.0 }
    }

    pub fn ridge(l2: f64) -> Self {
        PenaltySpec { l1: 0.0, l2 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.l1.is_finite() && self.l2.is_finite() && self.l1 >= 0.0 && self.l2 >= 0.0) {
            return Err(CpmError::InvalidArgument(format!(
                "penalty strengths must be finite and nonnegative: {self:?}"
            )));
        }
        Ok(())
    }

    fn term(&self, beta: f64) -> f64 {
        self.l1 * beta.abs() + 0.5 * self.l2 * beta * beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    Lasso,
    Ridge,
}

impl PenaltyKind {
    pub fn spec(self, strength: f64) -> PenaltySpec {
        match self {
            PenaltyKind::Lasso => PenaltySpec::lasso(strength),
            PenaltyKind::Ridge => PenaltySpec::ridge(strength),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions<'a> {
    pub tol: f64,
    pub max_iter: usize,
    pub warm_start: Option<&'a GlmFit>,
}

impl Default for FitOptions<'_> {
    fn default() -> Self {
        FitOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            warm_start: None,
        }
    }
}

pub(crate) fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^η) − y η, computed without overflow.
fn pointwise_loss(eta: f64, y: f64) -> f64 {
    let softplus = eta.max(0.0) + (-eta.abs()).exp().ln_1p();
    softplus - y * eta
}

fn check_inputs(x: &DesignMatrix, y: &[u8], w: &[f64]) -> Result<f64> {
    if y.len() != x.rows() || w.len() != x.rows() {
        return Err(CpmError::DimensionMismatch(format!(
            "design has {} rows, labels {}, weights {}",
            x.rows(),
            y.len(),
            w.len()
        )));
    }
    if let Some(bad) = y.iter().find(|&&v| v > 1) {
        return Err(CpmError::InvalidArgument(format!("label {bad} is not binary")));
    }
    if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(CpmError::NonFiniteInput(format!(
            "weights must be positive and finite, found {bad}"
        )));
    }
    Ok(w.iter().sum())
}

/// Penalized objective at a given coefficient vector.
pub fn objective(
    x: &DesignMatrix,
    y: &[u8],
    w: &[f64],
    penalty: PenaltySpec,
    intercept: f64,
    coefficients: &[f64],
) -> Result<f64> {
    let total = check_inputs(x, y, w)?;
    if coefficients.len() != x.cols() {
        return Err(CpmError::DimensionMismatch(format!(
            "{} coefficients for {} columns",
            coefficients.len(),
            x.cols()
        )));
    }
    let eta = x.linear_predictor(intercept, coefficients);
    let loss: f64 = eta
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&e, &yi), &wi)| wi * pointwise_loss(e, f64::from(yi)))
        .sum::<f64>()
        / total;
    let pen: f64 = coefficients
        .iter()
        .zip(x.penalized())
        .filter(|(_, &p)| p)
        .map(|(&b, _)| penalty.term(b))
        .sum();
    Ok(loss + pen)
}

/// Gradient of the weighted mean log-loss (no penalty), intercept first.
pub fn loss_gradient(
    x: &DesignMatrix,
    y: &[u8],
    w: &[f64],
    intercept: f64,
    coefficients: &[f64],
) -> Result<Vec<f64>> {
    let total = check_inputs(x, y, w)?;
    let eta = x.linear_predictor(intercept, coefficients);
    let resid: Vec<f64> = eta
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&e, &yi), &wi)| wi * (sigmoid(e) - f64::from(yi)) / total)
        .collect();
    let mut grad = Vec::with_capacity(x.cols() + 1);
    grad.push(resid.iter().sum());
    for j in 0..x.cols() {
        grad.push(x.nonzero[j].iter().map(|&i| resid[i] * x.columns[j][i]).sum());
    }
    Ok(grad)
}

struct Workspace<'a> {
    x: &'a DesignMatrix,
    y: Vec<f64>,
    /// Weights normalized to sum to one.
    w: Vec<f64>,
    eta: Vec<f64>,
    prob: Vec<f64>,
}

impl Workspace<'_> {
    fn shift(&mut self, rows: Option<&[usize]>, column: Option<&[f64]>, delta: f64) {
        let n = self.eta.len();
        let mut apply = |i: usize, x: f64| {
            self.eta[i] += delta * x;
            self.prob[i] = sigmoid(self.eta[i]);
        };
        match (rows, column) {
            (Some(rows), Some(col)) => rows.iter().for_each(|&i| apply(i, col[i])),
            _ => (0..n).for_each(|i| apply(i, 1.0)),
        }
    }

    /// Gradient, exact curvature and majorizing curvature of one coordinate.
    fn derivatives(&self, rows: Option<&[usize]>, column: Option<&[f64]>) -> (f64, f64, f64) {
        let (mut g, mut h, mut l) = (0.0, 0.0, 0.0);
        let mut add = |i: usize, x: f64| {
            let p = self.prob[i];
            g += self.w[i] * (p - self.y[i]) * x;
            h += self.w[i] * p * (1.0 - p) * x * x;
            l += 0.25 * self.w[i] * x * x;
        };
        match (rows, column) {
            (Some(rows), Some(col)) => rows.iter().for_each(|&i| add(i, col[i])),
            _ => (0..self.eta.len()).for_each(|i| add(i, 1.0)),
        }
        (g, h, l)
    }

    fn loss_change(&self, rows: Option<&[usize]>, column: Option<&[f64]>, delta: f64) -> f64 {
        let change = |i: usize, x: f64| {
            self.w[i]
                * (pointwise_loss(self.eta[i] + delta * x, self.y[i])
                    - pointwise_loss(self.eta[i], self.y[i]))
        };
        match (rows, column) {
            (Some(rows), Some(col)) => rows.iter().map(|&i| change(i, col[i])).sum(),
            _ => (0..self.eta.len()).map(|i| change(i, 1.0)).sum(),
        }
    }

    /// One coordinate update; returns the new value.
    fn update(
        &mut self,
        rows: Option<&[usize]>,
        column: Option<&[f64]>,
        beta: f64,
        penalty: Option<PenaltySpec>,
    ) -> f64 {
        let (g, h, l) = self.derivatives(rows, column);
        if l <= 0.0 {
            return beta;
        }
        let step = |curv: f64| match penalty {
            None => beta - g / curv,
            Some(pen) => soft_threshold(curv * beta - g, pen.l1) / (curv + pen.l2),
        };
        let pen_term = |b: f64| penalty.map_or(0.0, |p| p.term(b));
        let mut next = beta;
        if h > f64::MIN_POSITIVE {
            let newton = step(h);
            let change = self.loss_change(rows, column, newton - beta) + pen_term(newton)
                - pen_term(beta);
            if change <= ROUNDING_SLACK && newton.is_finite() {
                next = newton;
            }
        }
        if next == beta {
            let mm = step(l);
            let change = self.loss_change(rows, column, mm - beta) + pen_term(mm) - pen_term(beta);
            if change <= ROUNDING_SLACK {
                next = mm;
            }
        }
        if next != beta {
            self.shift(rows, column, next - beta);
        }
        next
    }

    fn objective(&self, penalty: PenaltySpec, coefficients: &[f64]) -> f64 {
        let loss: f64 = (0..self.eta.len())
            .map(|i| self.w[i] * pointwise_loss(self.eta[i], self.y[i]))
            .sum();
        loss + coefficients
            .iter()
            .zip(&self.x.penalized)
            .filter(|(_, &p)| p)
            .map(|(&b, _)| penalty.term(b))
            .sum::<f64>()
    }

    fn kkt_residual(&self, penalty: PenaltySpec, coefficients: &[f64]) -> f64 {
        let (g0, _, _) = self.derivatives(None, None);
        let mut worst = g0.abs();
        for (j, &b) in coefficients.iter().enumerate() {
            let (g, _, _) =
                self.derivatives(Some(&self.x.nonzero[j]), Some(&self.x.columns[j]));
            let r = if !self.x.penalized[j] {
                g.abs()
            } else if b != 0.0 {
                (g + penalty.l2 * b + penalty.l1 * b.signum()).abs()
            } else {
                (g.abs() - penalty.l1).max(0.0)
            };
            worst = worst.max(r);
        }
        worst
    }
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Fits the penalized model. A fit that exhausts `max_iter` sweeps returns
/// with `converged = false` rather than an error.
pub fn fit(
    x: &DesignMatrix,
    y: &[u8],
    w: &[f64],
    penalty: PenaltySpec,
    options: FitOptions<'_>,
) -> Result<GlmFit> {
    let total = check_inputs(x, y, w)?;
    penalty.validate()?;
    let (mut intercept, mut beta) = match options.warm_start {
        Some(start) if start.coefficients.len() == x.cols() => {
            (start.intercept, start.coefficients.clone())
        }
        Some(start) => {
            return Err(CpmError::DimensionMismatch(format!(
                "warm start has {} coefficients for {} columns",
                start.coefficients.len(),
                x.cols()
            )))
        }
        None => (0.0, vec![0.0; x.cols()]),
    };
    let eta = x.linear_predictor(intercept, &beta);
    let mut ws = Workspace {
        x,
        y: y.iter().map(|&v| f64::from(v)).collect(),
        w: w.iter().map(|&v| v / total).collect(),
        prob: eta.iter().map(|&e| sigmoid(e)).collect(),
        eta,
    };

    let mut iterations = 0;
    let mut residual = ws.kkt_residual(penalty, &beta);
    while residual > options.tol && iterations < options.max_iter {
        iterations += 1;
        intercept = ws.update(None, None, intercept, None);
        for j in 0..x.cols() {
            let pen = x.penalized[j].then_some(penalty);
            beta[j] = ws.update(Some(&x.nonzero[j]), Some(&x.columns[j]), beta[j], pen);
        }
        residual = ws.kkt_residual(penalty, &beta);
    }
    let objective = ws.objective(penalty, &beta);
    if !objective.is_finite() || !intercept.is_finite() || beta.iter().any(|b| !b.is_finite()) {
        return Err(CpmError::NonFiniteInput(
            "solver produced non-finite coefficients".to_string(),
        ));
    }
    Ok(GlmFit {
        intercept,
        coefficients: beta,
        converged: residual <= options.tol,
        iterations,
        objective,
        kkt_residual: residual,
    })
}

pub fn predict_proba(fit: &GlmFit, x: &DesignMatrix) -> Result<Vec<f64>> {
    if fit.coefficients.len() != x.cols() {
        return Err(CpmError::DimensionMismatch(format!(
            "fit has {} coefficients, design has {} columns",
            fit.coefficients.len(),
            x.cols()
        )));
    }
    Ok(x
        .linear_predictor(fit.intercept, &fit.coefficients)
        .into_iter()
        .map(sigmoid)
        .collect())
}

/// Row positions of the train and validation sides of a split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

impl RowSplit {
    /// Maps a split onto rows labelled by `row_ids`; ids outside the split
    /// are ignored.
    pub fn from_split(split: &DataSplit, row_ids: &[String]) -> Self {
        let mut train = Vec::new();
        let mut valid = Vec::new();
        for (i, id) in row_ids.iter().enumerate() {
            if split.is_train(id) {
                train.push(i);
            } else if split.is_valid(id) {
                valid.push(i);
            }
        }
        RowSplit { train, valid }
    }
}

/// Smallest strength of the given kind at which every penalized coefficient
/// is zero. For ridge this is the conventional grid top instead, since no
/// finite ridge strength zeroes a coefficient.
pub fn lambda_max(x: &DesignMatrix, y: &[u8], w: &[f64], kind: PenaltyKind) -> Result<f64> {
    let null = null_fit(x, y, w)?;
    let grad = loss_gradient(x, y, w, null.intercept, &null.coefficients)?;
    let lmax = (0..x.cols())
        .filter(|&j| x.penalized[j])
        .map(|j| grad[j + 1].abs())
        .fold(0.0, f64::max);
    // Absorb the null fit's own tolerance so the returned value really zeroes.
    let lmax = lmax * (1.0 + 1e-6) + 1e-12;
    Ok(match kind {
        PenaltyKind::Lasso => lmax,
        PenaltyKind::Ridge => lmax / RIDGE_MIX_FLOOR,
    })
}

/// Fit with every penalized coefficient held at zero.
fn null_fit(x: &DesignMatrix, y: &[u8], w: &[f64]) -> Result<GlmFit> {
    let (reduced, keep) = x.unpenalized_part();
    let opts = FitOptions {
        tol: NULL_FIT_TOL,
        ..FitOptions::default()
    };
    let sub = fit(&reduced, y, w, PenaltySpec::none(), opts)?;
    let mut coefficients = vec![0.0; x.cols()];
    for (k, &j) in keep.iter().enumerate() {
        coefficients[j] = sub.coefficients[k];
    }
    Ok(GlmFit {
        coefficients,
        ..sub
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySelection {
    pub kind: PenaltyKind,
    pub penalty: PenaltySpec,
    pub lambda_max: f64,
    pub validation_auc: f64,
    /// (strength, validation AUC) for every grid point, largest first.
    pub path: Vec<(f64, f64)>,
    #[serde(skip)]
    pub fit: Option<GlmFit>,
}

/// Geometric grid of strengths, largest first.
pub fn penalty_grid(lambda_max: f64) -> Vec<f64> {
    let n = PENALTY_GRID_SIZE;
    (0..n)
        .map(|i| lambda_max * PENALTY_GRID_RATIO.powf(i as f64 / (n - 1) as f64))
        .collect()
}

/// Picks the grid strength with the best validation AUC, preferring the
/// larger strength on ties. Fits use only the training rows.
pub fn select_penalty(
    x: &DesignMatrix,
    y: &[u8],
    w: &[f64],
    kind: PenaltyKind,
    split: &RowSplit,
    options: FitOptions<'_>,
) -> Result<PenaltySelection> {
    check_inputs(x, y, w)?;
    if split.train.iter().chain(&split.valid).any(|&i| i >= x.rows()) {
        return Err(CpmError::DimensionMismatch(
            "split references rows outside the design".to_string(),
        ));
    }
    let pick = |rows: &[usize]| -> (Vec<u8>, Vec<f64>) {
        (rows.iter().map(|&i| y[i]).collect(), rows.iter().map(|&i| w[i]).collect())
    };
    let x_train = x.select_rows(&split.train)?;
    let x_valid = x.select_rows(&split.valid)?;
    let (y_train, w_train) = pick(&split.train);
    let (y_valid, w_valid) = pick(&split.valid);

    let lmax = lambda_max(&x_train, &y_train, &w_train, kind)?;
    let mut warm = null_fit(&x_train, &y_train, &w_train)?;
    let mut best: Option<(f64, f64, GlmFit)> = None;
    let mut path = Vec::with_capacity(PENALTY_GRID_SIZE);
    for strength in penalty_grid(lmax) {
        let opts = FitOptions {
            warm_start: Some(&warm),
            ..options
        };
        let current = fit(&x_train, &y_train, &w_train, kind.spec(strength), opts)?;
        let scores = predict_proba(&current, &x_valid)?;
        let auc = metrics::auc(&scores, &y_valid, &w_valid)?;
        path.push((strength, auc));
        if best.as_ref().is_none_or(|(_, b, _)| auc > *b) {
            best = Some((strength, auc, current.clone()));
        }
        warm = current;
    }
    let (strength, auc, best_fit) = best.expect("grid is nonempty");
    Ok(PenaltySelection {
        kind,
        penalty: kind.spec(strength),
        lambda_max: lmax,
        validation_auc: auc,
        path,
        fit: Some(best_fit),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(n: usize) -> Vec<f64> {
        vec![1.0; n]
    }

    #[test]
    fn intercept_only_recovers_logit_of_base_rate() {
        let x = DesignMatrix::from_columns(8, vec![], vec![], vec![]).unwrap();
        let y = [1, 1, 0, 0, 0, 0, 0, 0];
        let f = fit(&x, &y, &ones(8), PenaltySpec::none(), FitOptions::default()).unwrap();
        assert!(f.converged);
        assert!((f.intercept - (0.25f64 / 0.75).ln()).abs() < 1e-7);
        assert!((f.intercept + 1.0986122886681098).abs() < 1e-7);
    }

    #[test]
    fn huge_l1_zeroes_everything() {
        let x = DesignMatrix::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
            vec![0.0, 0.0],
        ])
        .unwrap();
        let y = [1, 1, 0, 0];
        let f = fit(&x, &y, &ones(4), PenaltySpec::lasso(1e6), FitOptions::default()).unwrap();
        assert_eq!(f.coefficients, vec![0.0, 0.0]);
        assert!(f.converged);
    }

    #[test]
    fn predict_proba_basics() {
        let x = DesignMatrix::from_rows(&[vec![1.0], vec![0.0], vec![3.0]]).unwrap();
        let zero = GlmFit {
            intercept: 0.0,
            coefficients: vec![0.0],
            converged: true,
            iterations: 0,
            objective: 0.0,
            kkt_residual: 0.0,
        };
        assert_eq!(predict_proba(&zero, &x).unwrap(), vec![0.5; 3]);
        let ln3 = GlmFit {
            intercept: 3f64.ln(),
            ..zero.clone()
        };
        for p in predict_proba(&ln3, &x).unwrap() {
            assert!((p - 0.75).abs() < 1e-15);
        }
        let wrong = DesignMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            predict_proba(&zero, &wrong),
            Err(CpmError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn input_validation() {
        let x = DesignMatrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        assert!(matches!(
            fit(&x, &[1], &[1.0], PenaltySpec::none(), FitOptions::default()),
            Err(CpmError::DimensionMismatch(_))
        ));
        assert!(matches!(
            fit(&x, &[1, 0], &[1.0, 0.0], PenaltySpec::none(), FitOptions::default()),
            Err(CpmError::NonFiniteInput(_))
        ));
        assert!(matches!(
            DesignMatrix::from_rows(&[vec![f64::NAN], vec![0.0]]),
            Err(CpmError::NonFiniteInput(_))
        ));
    }

    #[test]
    fn separable_unpenalized_reports_nonconvergence() {
        let x = DesignMatrix::from_rows(&[vec![1.0], vec![1.0], vec![0.0], vec![0.0]]).unwrap();
        let opts = FitOptions {
            max_iter: 3,
            ..FitOptions::default()
        };
        let f = fit(&x, &[1, 1, 0, 0], &ones(4), PenaltySpec::none(), opts).unwrap();
        assert!(!f.converged);
        assert_eq!(f.iterations, 3);
        assert!(f.kkt_residual > DEFAULT_TOL);
        // The coefficient keeps growing while the gradient decays.
        let longer = fit(&x, &[1, 1, 0, 0], &ones(4), PenaltySpec::none(), FitOptions { max_iter: 6, ..opts }).unwrap();
        assert!(longer.coefficients[0] > f.coefficients[0]);
    }

    #[test]
    fn lambda_max_zeroes_and_is_tight() {
        let x = DesignMatrix::from_rows(&[
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
            vec![0.0, 1.0, 1.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        let y = [1, 1, 0, 1, 0, 0];
        let w = ones(6);
        let lmax = lambda_max(&x, &y, &w, PenaltyKind::Lasso).unwrap();
        let at = fit(&x, &y, &w, PenaltySpec::lasso(lmax), FitOptions::default()).unwrap();
        assert!(at.coefficients.iter().all(|&b| b == 0.0), "{:?}", at.coefficients);
        let below = fit(&x, &y, &w, PenaltySpec::lasso(lmax * 0.95), FitOptions::default()).unwrap();
        assert!(below.coefficients.iter().any(|&b| b != 0.0));
    }

    #[test]
    fn perfectly_predictive_feature_is_selected() {
        let n = 40;
        let signal: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let noise: Vec<f64> = (0..n).map(|i| ((i / 3) % 2) as f64).collect();
        let y: Vec<u8> = signal.iter().map(|&s| s as u8).collect();
        let x = DesignMatrix::from_columns(
            n,
            vec![noise, signal],
            vec!["noise".into(), "signal".into()],
            vec![true, true],
        )
        .unwrap();
        let split = RowSplit {
            train: (0..28).collect(),
            valid: (28..n).collect(),
        };
        let sel = select_penalty(&x, &y, &ones(n), PenaltyKind::Lasso, &split, FitOptions::default())
            .unwrap();
        let fit = sel.fit.unwrap();
        assert!(fit.coefficients[1] > 0.0);
        assert_eq!(sel.validation_auc, 1.0);
        assert_eq!(sel.path.len(), PENALTY_GRID_SIZE);
    }
}
