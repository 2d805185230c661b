//! Unit-disk advertising-bearer radio with Bernoulli per-link loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::queue::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub floor: i32,
}

impl Position {
    pub fn new(x: f64, y: f64, floor: i32) -> Self {
        Position { x, y, floor }
    }

    /// Horizontal distance; floors are handled by the range rule.
    pub fn planar_distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioModel {
    pub range_m: f64,
    pub base_loss: f64,
    pub interference_loss: f64,
    pub per_hop_latency_ms: SimTime,
    /// Latency is drawn uniformly from `per_hop_latency ± jitter`.
    pub jitter_ms: SimTime,
    /// Range multiplier between adjacent floors.
    pub cross_floor_factor: f64,
}

impl Default for RadioModel {
    fn default() -> Self {
        RadioModel {
            range_m: 10.0,
            base_loss: 0.0,
            interference_loss: 0.0,
            per_hop_latency_ms: 20,
            jitter_ms: 0,
            cross_floor_factor: 0.5,
        }
    }
}

impl RadioModel {
    pub fn loss_probability(&self) -> f64 {
        (self.base_loss + self.interference_loss).clamp(0.0, 1.0)
    }

    /// Same floor: plain range. Adjacent floors: scaled range. Otherwise no link.
    pub fn in_range(&self, a: &Position, b: &Position) -> bool {
        let reach = match (a.floor - b.floor).abs() {
            0 => self.range_m,
            1 => self.range_m * self.cross_floor_factor,
            _ => return false,
        };
        a.planar_distance(b) <= reach
    }

    pub fn sample_latency<R: Rng>(&self, rng: &mut R) -> SimTime {
        if self.jitter_ms == 0 {
            return self.per_hop_latency_ms.max(1);
        }
        let lo = self.per_hop_latency_ms.saturating_sub(self.jitter_ms).max(1);
        let hi = (self.per_hop_latency_ms + self.jitter_ms).max(lo);
        rng.gen_range(lo..=hi)
    }

    pub fn sample_lost<R: Rng>(&self, rng: &mut R) -> bool {
        let p = self.loss_probability();
        if p <= 0.0 {
            return false;
        }
        if p >= 1.0 {
            return true;
        }
        rng.gen::<f64>() < p
    }
}
