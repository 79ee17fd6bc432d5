//! Geolocation error metrics, error CDFs and the landmark baseline.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_distance, GeoPoint};
use crate::mapgraph::{prominence, MapBundle, ProminenceLevel};

pub const EPSILON: f64 = 1e-5;
/// Normalizer for the AUC, roughly half the equatorial circumference.
pub const H_MAX_M: f64 = 20_037_000.0;
pub const BASELINE_RADIUS_M: f64 = 1_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub gold: GeoPoint,
    pub pred: GeoPoint,
}

impl EvalPair {
    pub fn error(&self) -> f64 {
        haversine_distance(self.gold, self.pred)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsConfig {
    pub epsilon: f64,
    pub h_max: f64,
    /// Extra accuracy radii reported alongside 100 m and 250 m.
    pub radii: Vec<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { epsilon: EPSILON, h_max: H_MAX_M, radii: vec![100.0, 250.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no evaluation pairs")]
    Empty,
    #[error("invalid metrics config: {0}")]
    InvalidConfig(&'static str),
    #[error("error distance must be finite and non-negative, got {0}")]
    InvalidError(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusAccuracy {
    pub radius_m: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub acc100: f64,
    pub acc250: f64,
    pub mae: f64,
    pub medae: f64,
    pub maxae: f64,
    /// Absent for fewer than two pairs.
    pub auc: Option<f64>,
    pub accuracy: Vec<RadiusAccuracy>,
}

impl MetricsReport {
    /// Aligned two-column table for terminals.
    pub fn table(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("n".into(), self.n.to_string()),
            ("acc@100m (%)".into(), format!("{:.2}", self.acc100)),
            ("acc@250m (%)".into(), format!("{:.2}", self.acc250)),
            ("MAE (m)".into(), format!("{:.1}", self.mae)),
            ("Med.AE (m)".into(), format!("{:.1}", self.medae)),
            ("Max.AE (m)".into(), format!("{:.1}", self.maxae)),
            ("AUC".into(), self.auc.map_or("n/a".into(), |a| format!("{a:.4}"))),
        ];
        for r in self.accuracy.iter().filter(|r| r.radius_m != 100.0 && r.radius_m != 250.0) {
            rows.push((format!("acc@{}m (%)", r.radius_m), format!("{:.2}", r.percent)));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter().map(|(k, v)| format!("{k:<width$}  {v:>12}\n")).collect()
    }
}

fn accuracy_at(sorted: &[f64], radius: f64) -> f64 {
    let within = sorted.partition_point(|&e| e <= radius);
    100.0 * within as f64 / sorted.len() as f64
}

/// Trapezoid rule over `ln(e + epsilon)` of ascending errors, normalized by
/// `ln(h_max) * (n - 1)`.
pub fn auc(sorted_errors: &[f64], epsilon: f64, h_max: f64) -> Option<f64> {
    let n = sorted_errors.len();
    if n < 2 {
        return None;
    }
    let logs: Vec<f64> = sorted_errors.iter().map(|e| (e + epsilon).ln()).collect();
    let area: f64 = logs.windows(2).map(|w| (w[0] + w[1]) / 2.0).sum();
    Some(area / (h_max.ln() * (n - 1) as f64))
}

pub fn evaluate_errors(errors: &[f64], config: &MetricsConfig) -> Result<MetricsReport, MetricsError> {
    if config.epsilon <= 0.0 {
        return Err(MetricsError::InvalidConfig("epsilon must be positive"));
    }
    if config.h_max <= 1.0 {
        return Err(MetricsError::InvalidConfig("h_max must exceed 1 m"));
    }
    if errors.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(&bad) = errors.iter().find(|e| !e.is_finite() || **e < 0.0) {
        return Err(MetricsError::InvalidError(bad));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let auc = auc(&sorted, config.epsilon, config.h_max);
    if auc.is_none() {
        log::warn!("AUC needs at least two pairs; omitted");
    }
    Ok(MetricsReport {
        n,
        acc100: accuracy_at(&sorted, 100.0),
        acc250: accuracy_at(&sorted, 250.0),
        mae: sorted.iter().sum::<f64>() / n as f64,
        medae: sorted[n / 2],
        maxae: sorted[n - 1],
        auc,
        accuracy: config
            .radii
            .iter()
            .map(|&r| RadiusAccuracy { radius_m: r, percent: accuracy_at(&sorted, r) })
            .collect(),
    })
}

pub fn evaluate(pairs: &[EvalPair], config: &MetricsConfig) -> Result<MetricsReport, MetricsError> {
    let errors: Vec<f64> = pairs.iter().map(EvalPair::error).collect();
    evaluate_errors(&errors, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CdfPoint {
    pub distance_m: f64,
    pub cumulative_pct: f64,
}

/// Share of errors at or below each of `steps` evenly spaced distances
/// from 0 to `max_distance`.
pub fn cdf_from_errors(errors: &[f64], max_distance: f64, steps: usize) -> Result<Vec<CdfPoint>, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let grid = |k: usize| match steps {
        1 => max_distance,
        _ => max_distance * k as f64 / (steps - 1) as f64,
    };
    Ok((0..steps)
        .map(|k| {
            let d = grid(k);
            CdfPoint { distance_m: d, cumulative_pct: accuracy_at(&sorted, d) }
        })
        .collect())
}

pub fn cdf_export(pairs: &[EvalPair], max_distance: f64, steps: usize) -> Result<Vec<CdfPoint>, MetricsError> {
    let errors: Vec<f64> = pairs.iter().map(EvalPair::error).collect();
    cdf_from_errors(&errors, max_distance, steps)
}

pub fn write_cdf_csv<W: Write>(mut out: W, points: &[CdfPoint]) -> io::Result<()> {
    writeln!(out, "distance_m,cumulative_pct")?;
    for p in points {
        writeln!(out, "{},{}", p.distance_m, p.cumulative_pct)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselinePrediction {
    pub point: GeoPoint,
    pub entity: Option<String>,
    pub prominence: Option<ProminenceLevel>,
    /// True when no entity lies within the radius and the start is returned.
    pub fallback: bool,
}

/// Centroid of the most prominent entity within 1 km of `start`; ties go to
/// the nearer entity, then the smaller id.
pub fn landmark_baseline(bundle: &MapBundle, start: GeoPoint) -> BaselinePrediction {
    let candidates = bundle.nearest_entities(start, BASELINE_RADIUS_M, |_| true);
    let best = candidates.iter().map(|n| prominence(n.entity)).max();
    match best.and_then(|top| candidates.iter().find(|n| prominence(n.entity) == top)) {
        Some(n) => BaselinePrediction {
            point: n.entity.centroid(),
            entity: Some(n.entity.id.clone()),
            prominence: best,
            fallback: false,
        },
        None => BaselinePrediction { point: start, entity: None, prominence: None, fallback: true },
    }
}
