//! Static obstacle maps: discs and wall segments.

use serde::{Deserialize, Serialize};

use crate::vrb::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Vec2,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: Vec2,
    pub end: Vec2,
}

impl Segment {
    pub fn closest_point(&self, p: &Vec2) -> Vec2 {
        let d = self.end - self.start;
        let len2 = d.norm_squared();
        if len2 == 0.0 {
            return self.start;
        }
        let t = ((p - self.start).dot(&d) / len2).clamp(0.0, 1.0);
        self.start + t * d
    }
}

/// Closest obstacle point to a query position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestObstacle {
    pub point: Vec2,
    pub distance: f64,
}

impl NearestObstacle {
    /// Unit vector from the obstacle point towards the query position, or
    /// `None` when the two coincide.
    pub fn direction_from(&self, p: &Vec2) -> Option<Vec2> {
        (self.distance > 0.0).then(|| (p - self.point) / self.distance)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObstacleMap {
    #[serde(default)]
    pub circles: Vec<Circle>,
    #[serde(default)]
    pub segments: Vec<Segment>,
}

impl ObstacleMap {
    pub fn is_empty(&self) -> bool {
        self.circles.is_empty() && self.segments.is_empty()
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = |v: &Vec2| v.x.is_finite() && v.y.is_finite();
        for (k, c) in self.circles.iter().enumerate() {
            if !finite(&c.center) || !(c.radius > 0.0 && c.radius.is_finite()) {
                return Err(format!(
                    "circle {k} must have a finite center and positive radius"
                ));
            }
        }
        for (k, s) in self.segments.iter().enumerate() {
            if !finite(&s.start) || !finite(&s.end) {
                return Err(format!("segment {k} has non-finite endpoints"));
            }
        }
        Ok(())
    }

    /// Nearest point of any obstacle. Points inside a disc report the disc
    /// boundary point with zero distance.
    pub fn nearest(&self, p: &Vec2) -> Option<NearestObstacle> {
        let circles = self.circles.iter().map(|c| {
            let offset = p - c.center;
            let to_center = offset.norm();
            if to_center <= c.radius {
                let point = if to_center > 0.0 {
                    c.center + offset * (c.radius / to_center)
                } else {
                    c.center + Vec2::new(c.radius, 0.0)
                };
                NearestObstacle {
                    point,
                    distance: 0.0,
                }
            } else {
                NearestObstacle {
                    point: c.center + offset * (c.radius / to_center),
                    distance: to_center - c.radius,
                }
            }
        });
        let segments = self.segments.iter().map(|s| {
            let point = s.closest_point(p);
            NearestObstacle {
                point,
                distance: (p - point).norm(),
            }
        });
        circles
            .chain(segments)
            .min_by(|a, b| a.distance.total_cmp(&b.distance))
    }
}
