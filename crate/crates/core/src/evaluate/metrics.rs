use crate::error::{Error, Result};

/// `(u - l)` plus `2/alpha` times the distance by which `y` falls outside.
pub fn interval_score(l: f64, u: f64, y: f64, alpha: f64) -> Result<f64> {
    if l > u {
        return Err(Error::Argument(format!("lower bound {l} exceeds upper bound {u}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let below = if y < l { l - y } else { 0.0 };
    let above = if y > u { y - u } else { 0.0 };
    Ok((u - l) + 2.0 / alpha * (below + above))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMetrics {
    pub rmsfe: f64,
    pub mafe: f64,
    pub mfe: f64,
}

/// Errors are `actual - forecast`.
pub fn point_metrics(errors: &[f64]) -> Result<PointMetrics> {
    if errors.is_empty() {
        return Err(Error::Argument("no forecast errors to summarise".into()));
    }
    let n = errors.len() as f64;
    Ok(PointMetrics {
        rmsfe: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        mafe: errors.iter().map(|e| e.abs()).sum::<f64>() / n,
        mfe: errors.iter().sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxMetrics {
    pub max_afe: f64,
    pub max_rsfe: f64,
}

pub fn max_metrics(errors: &[f64]) -> Result<MaxMetrics> {
    if errors.is_empty() {
        return Err(Error::Argument("no forecast errors to summarise".into()));
    }
    let max_sq = errors.iter().map(|e| e * e).fold(0.0, f64::max);
    Ok(MaxMetrics { max_afe: errors.iter().map(|e| e.abs()).fold(0.0, f64::max), max_rsfe: max_sq.sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreMetrics {
    pub mean: f64,
    pub max: f64,
}

pub fn score_metrics(scores: &[f64]) -> Result<ScoreMetrics> {
    if scores.is_empty() {
        return Err(Error::Argument("no interval scores to summarise".into()));
    }
    Ok(ScoreMetrics {
        mean: scores.iter().sum::<f64>() / scores.len() as f64,
        max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}
