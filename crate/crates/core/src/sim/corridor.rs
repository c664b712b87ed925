//! Summary of a corridor run: approach, compression, exit and the rebound
//! of the minimum pair distance after the pair constraints engage.

use serde::Serialize;

use super::metrics::{local_maxima, MetricsLog};
use super::scenario::CorridorLayout;

/// Ticks after the first activation searched for rebounds.
pub const REBOUND_WINDOW_TICKS: u64 = 500;
/// Minimum rise and fall of a rebound peak, m.
pub const REBOUND_PROMINENCE_M: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorridorReport {
    pub ticks: usize,
    pub initial_min_distance_m: f64,
    pub first_activation: Option<u64>,
    /// Minimum true pair distance at the first activation tick.
    pub activation_min_distance_m: Option<f64>,
    pub min_true_distance_m: f64,
    /// Smallest true distance divided by the pair bound.
    pub min_bound_ratio: f64,
    /// First tick at which the centroid is past the corridor exit.
    pub exit_tick: Option<u64>,
    /// Peaks of the minimum pair distance above the bound within the window
    /// after the first activation.
    pub rebound_peaks: Vec<u64>,
    pub max_reference_speed_m_per_s: f64,
    pub collisions: usize,
    pub safety_violations: usize,
}

impl CorridorReport {
    pub fn from_log(log: &MetricsLog, layout: &CorridorLayout) -> Self {
        let min_bound_per_tick: Vec<f64> = {
            let mut bounds = vec![f64::INFINITY; log.ticks.len()];
            for p in &log.pairs {
                let k = p.tick as usize;
                if k < bounds.len() {
                    bounds[k] = bounds[k].min(p.bound_m);
                }
            }
            bounds
        };
        let first_activation = log.first_activation();
        let rebound_peaks = first_activation
            .map(|start| {
                let lo = start as usize;
                let hi = (start + REBOUND_WINDOW_TICKS).min(log.ticks.len() as u64) as usize;
                let series: Vec<f64> = log.ticks[lo..hi]
                    .iter()
                    .map(|t| t.min_true_distance_m)
                    .collect();
                local_maxima(&series, REBOUND_PROMINENCE_M)
                    .into_iter()
                    .filter(|&k| series[k] > min_bound_per_tick[lo + k])
                    .map(|k| (lo + k) as u64)
                    .collect()
            })
            .unwrap_or_default();
        Self {
            ticks: log.ticks.len(),
            initial_min_distance_m: log
                .ticks
                .first()
                .map_or(f64::NAN, |t| t.min_true_distance_m),
            first_activation,
            activation_min_distance_m: first_activation
                .and_then(|k| log.ticks.get(k as usize))
                .map(|t| t.min_true_distance_m),
            min_true_distance_m: log.min_true_distance().unwrap_or(f64::NAN),
            min_bound_ratio: log.min_bound_ratio().unwrap_or(f64::NAN),
            exit_tick: log
                .ticks
                .iter()
                .find(|t| t.centroid_x_m > layout.exit())
                .map(|t| t.tick),
            rebound_peaks,
            max_reference_speed_m_per_s: log.max_reference_speed(),
            collisions: log.total_collisions(),
            safety_violations: log.ticks.iter().map(|t| t.safety_violations).sum(),
        }
    }

    /// The minimum pair distance shrank between the start and the first
    /// activation.
    pub fn shrank_on_approach(&self) -> bool {
        self.activation_min_distance_m
            .is_some_and(|d| d < self.initial_min_distance_m - REBOUND_PROMINENCE_M)
    }

    /// At least two rebounds: the shrink, expand, shrink cycle.
    pub fn limit_cycle(&self) -> bool {
        self.rebound_peaks.len() >= 2
    }
}
