//! Per-tick metrics and their CSV export.
//!
//! Column order of every CSV file follows the field order of the row types
//! below and only ever grows at the end.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickRow {
    pub tick: u64,
    pub time_s: f64,
    pub centroid_x_m: f64,
    pub centroid_y_m: f64,
    pub min_true_distance_m: f64,
    pub min_mean_distance_m: f64,
    /// Smallest slack `true distance - bound` over all pairs.
    pub min_distance_margin_m: f64,
    pub max_reference_speed_m_per_s: f64,
    pub active_robots: usize,
    pub safety_violations: usize,
    /// Pairs whose true distance is below the sum of their radii.
    pub collisions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotRow {
    pub tick: u64,
    pub robot: usize,
    pub phi_rad: f64,
    pub scale_x: f64,
    pub scale_y: f64,
    pub translation_x_m: f64,
    pub translation_y_m: f64,
    pub reference_x_m: f64,
    pub reference_y_m: f64,
    pub true_x_m: f64,
    pub true_y_m: f64,
    pub mean_x_m: f64,
    pub mean_y_m: f64,
    pub cov_xx_m2: f64,
    pub cov_xy_m2: f64,
    pub cov_yy_m2: f64,
    pub reference_speed_m_per_s: f64,
    pub beta: f64,
    pub constraint_active: bool,
    pub qp_fallback: bool,
    pub safety_violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRow {
    pub tick: u64,
    pub i: usize,
    pub j: usize,
    pub true_distance_m: f64,
    pub mean_distance_m: f64,
    pub reference_distance_m: f64,
    pub bound_m: f64,
    /// Row `j` is active in robot `i`'s projection.
    pub active_i: bool,
    /// Row `i` is active in robot `j`'s projection.
    pub active_j: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub ticks: Vec<TickRow>,
    pub robots: Vec<RobotRow>,
    pub pairs: Vec<PairRow>,
}

pub const TICKS_CSV: &str = "ticks.csv";
pub const ROBOTS_CSV: &str = "robots.csv";
pub const PAIRS_CSV: &str = "pairs.csv";

impl MetricsLog {
    pub fn min_true_distance(&self) -> Option<f64> {
        self.ticks
            .iter()
            .map(|t| t.min_true_distance_m)
            .min_by(f64::total_cmp)
    }

    pub fn min_distance_margin(&self) -> Option<f64> {
        self.ticks
            .iter()
            .map(|t| t.min_distance_margin_m)
            .min_by(f64::total_cmp)
    }

    pub fn max_reference_speed(&self) -> f64 {
        self.ticks
            .iter()
            .map(|t| t.max_reference_speed_m_per_s)
            .fold(0.0, f64::max)
    }

    /// First tick at which any pair constraint was active.
    pub fn first_activation(&self) -> Option<u64> {
        self.ticks
            .iter()
            .find(|t| t.active_robots > 0)
            .map(|t| t.tick)
    }

    pub fn total_collisions(&self) -> usize {
        self.ticks.iter().map(|t| t.collisions).sum()
    }

    pub fn activation_ticks(&self) -> usize {
        self.ticks.iter().filter(|t| t.active_robots > 0).count()
    }

    /// Smallest ratio of true distance to bound over all pairs and ticks.
    pub fn min_bound_ratio(&self) -> Option<f64> {
        self.pairs
            .iter()
            .filter(|p| p.bound_m > 0.0)
            .map(|p| p.true_distance_m / p.bound_m)
            .min_by(f64::total_cmp)
    }

    pub fn write_csv(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        write_rows(&dir.join(TICKS_CSV), &self.ticks)?;
        write_rows(&dir.join(ROBOTS_CSV), &self.robots)?;
        write_rows(&dir.join(PAIRS_CSV), &self.pairs)
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> std::io::Result<()> {
    let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for row in rows {
        writer.serialize(row).map_err(std::io::Error::other)?;
    }
    writer.flush()?;
    writer
        .into_inner()
        .map_err(|e| std::io::Error::other(e.to_string()))?
        .flush()
}

/// Indices of the local maxima of `series` whose prominence on both sides is
/// at least `prominence` (zigzag with hysteresis).
pub fn local_maxima(series: &[f64], prominence: f64) -> Vec<usize> {
    let mut peaks = Vec::new();
    let Some(&first) = series.first() else {
        return peaks;
    };
    let mut valley = first;
    let mut candidate: Option<(usize, f64)> = None;
    for (k, &x) in series.iter().enumerate() {
        match candidate {
            None => {
                valley = valley.min(x);
                if x >= valley + prominence {
                    candidate = Some((k, x));
                }
            }
            Some((idx, peak)) => {
                if x > peak {
                    candidate = Some((k, x));
                } else if x <= peak - prominence {
                    peaks.push(idx);
                    valley = x;
                    candidate = None;
                }
            }
        }
    }
    peaks
}

/// Writes one JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
