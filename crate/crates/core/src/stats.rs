//! Least-squares regression of confusion scores on condition predictors.

use std::collections::BTreeMap;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::confusion::ScoreRow;
use crate::tasks::{ConditionId, ConditionSpec, TriState};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("condition {0} does not belong to the {1} design")]
    WrongCondition(ConditionId, &'static str),
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("{rows} rows for {coefficients} coefficients leaves no residual degrees of freedom")]
    NoDegreesOfFreedom { rows: usize, coefficients: usize },
    #[error("rows have {got} predictors, expected {expected}")]
    Ragged { expected: usize, got: usize },
    #[error("non-finite response in row {0}")]
    NonFinite(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegressionTask {
    Agreement,
    Reflexive,
}

impl RegressionTask {
    pub fn as_str(self) -> &'static str {
        match self {
            RegressionTask::Agreement => "agreement",
            RegressionTask::Reflexive => "reflexive",
        }
    }

    pub fn of(condition: ConditionId) -> Self {
        if condition.is_agreement() {
            RegressionTask::Agreement
        } else {
            RegressionTask::Reflexive
        }
    }

    pub fn predictors(self) -> &'static [&'static str] {
        match self {
            RegressionTask::Agreement => &["Intercept", "Relative Clause", "DNr Number Match", "Layer"],
            RegressionTask::Reflexive => &[
                "Intercept",
                "DNo Gender Match",
                "DNo Gender Mismatch",
                "DNr Gender Match",
                "DNr Gender Mismatch",
                "Layer",
            ],
        }
    }

    /// Predictor values for `condition` at a 1-based `layer`.
    pub fn predictor_values(self, condition: ConditionId, layer: usize) -> Result<Vec<f64>, StatsError> {
        if Self::of(condition) != self {
            return Err(StatsError::WrongCondition(condition, self.as_str()));
        }
        let spec = ConditionSpec::canonical(condition);
        let flag = |b: bool| f64::from(u8::from(b));
        let layer = layer as f64 - 1.0;
        Ok(match self {
            RegressionTask::Agreement => {
                let relation = if spec.has_relative_clause {
                    spec.rc_match
                } else {
                    spec.pp_match
                };
                vec![
                    1.0,
                    flag(spec.has_relative_clause),
                    flag(relation == TriState::Match),
                    layer,
                ]
            }
            RegressionTask::Reflexive => vec![
                1.0,
                flag(spec.object_match == TriState::Match),
                flag(spec.object_match == TriState::Mismatch),
                flag(spec.rc_match == TriState::Match),
                flag(spec.rc_match == TriState::Mismatch),
                layer,
            ],
        })
    }
}

impl FromStr for RegressionTask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "agreement" => Ok(RegressionTask::Agreement),
            "reflexive" => Ok(RegressionTask::Reflexive),
            _ => Err(format!("unknown regression task `{s}`")),
        }
    }
}

/// Regress every defined score, or the per-(condition, layer) means.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DesignMode {
    #[default]
    PerExample,
    Means,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignRow {
    pub response: f64,
    pub predictors: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    pub rows: Vec<DesignRow>,
}

/// Design rows for the conditions of `task` found in `scores`. Rows of the
/// other task are skipped; undefined scores are left out.
pub fn build_design(task: RegressionTask, scores: &[ScoreRow], mode: DesignMode) -> Result<Design, StatsError> {
    let names = task.predictors().iter().map(|s| s.to_string()).collect();
    let relevant = scores
        .iter()
        .filter(|r| RegressionTask::of(r.condition) == task)
        .filter_map(|r| r.score.map(|s| (r.condition, r.layer, s)));
    let rows = match mode {
        DesignMode::PerExample => relevant
            .map(|(c, l, s)| {
                Ok(DesignRow {
                    response: s,
                    predictors: task.predictor_values(c, l)?,
                })
            })
            .collect::<Result<_, StatsError>>()?,
        DesignMode::Means => {
            let mut cells: BTreeMap<(ConditionId, usize), (f64, usize)> = BTreeMap::new();
            for (c, l, s) in relevant {
                let e = cells.entry((c, l)).or_default();
                e.0 += s;
                e.1 += 1;
            }
            cells
                .into_iter()
                .map(|((c, l), (sum, n))| {
                    Ok(DesignRow {
                        response: sum / n as f64,
                        predictors: task.predictor_values(c, l)?,
                    })
                })
                .collect::<Result<_, StatsError>>()?
        }
    };
    Ok(Design { names, rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionFit {
    pub coefficients: Vec<Coefficient>,
    pub residuals: Vec<f64>,
    pub df: usize,
    pub r_squared: f64,
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    let tail = 0.5 * beta_reg(df / 2.0, 0.5, df / (df + t * t));
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided p-value of a t statistic.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

/// Relative size below which a diagonal entry of R counts as zero.
const RANK_TOLERANCE: f64 = 1e-10;

/// Ordinary least squares through a Householder QR decomposition.
pub fn ols_fit(design: &Design) -> Result<RegressionFit, StatsError> {
    let n = design.rows.len();
    let p = design.names.len();
    if n <= p {
        return Err(StatsError::NoDegreesOfFreedom {
            rows: n,
            coefficients: p,
        });
    }
    for (i, r) in design.rows.iter().enumerate() {
        if r.predictors.len() != p {
            return Err(StatsError::Ragged {
                expected: p,
                got: r.predictors.len(),
            });
        }
        if !r.response.is_finite() {
            return Err(StatsError::NonFinite(i));
        }
    }
    let x = DMatrix::from_fn(n, p, |i, j| design.rows[i].predictors[j]);
    let y = DVector::from_iterator(n, design.rows.iter().map(|r| r.response));

    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if scale == 0.0 || (0..p).any(|i| r[(i, i)].abs() <= RANK_TOLERANCE * scale) {
        return Err(StatsError::RankDeficient);
    }
    let qty = qr.q().transpose() * &y;
    let beta = r.solve_upper_triangular(&qty).ok_or(StatsError::RankDeficient)?;
    let residuals = &y - &x * &beta;
    let ssr = residuals.norm_squared();
    let df = n - p;
    let sigma2 = ssr / df as f64;

    // (XᵀX)⁻¹ = R⁻¹ R⁻ᵀ
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(StatsError::RankDeficient)?;
    let cov = &r_inv * r_inv.transpose() * sigma2;

    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };

    let coefficients = design
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let estimate = beta[j];
            let std_error = cov[(j, j)].max(0.0).sqrt();
            let t = estimate / std_error;
            Coefficient {
                name: name.clone(),
                estimate,
                std_error,
                t,
                p: two_sided_p(t, df as f64),
            }
        })
        .collect();
    Ok(RegressionFit {
        coefficients,
        residuals: residuals.iter().copied().collect(),
        df,
        r_squared,
    })
}

/// Confusion score of attention spread evenly over `n_candidates`.
///
/// # Panics
///
/// If `n_candidates` is zero.
pub fn uniform_baseline(n_candidates: usize) -> f64 {
    assert!(n_candidates >= 1, "at least one candidate");
    (n_candidates as f64).log2()
}
