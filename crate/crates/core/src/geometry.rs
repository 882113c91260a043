//! Floor-reflection delays for a source and a microphone above a flat floor.
//!
//! The first reflection is modelled by the image source mirrored below the
//! floor, so its path length is `sqrt(d^2 + (h_s + h_m)^2)` against the
//! direct `sqrt(d^2 + (h_s - h_m)^2)`.

use serde::Serialize;

use crate::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SceneGeometry {
    /// Horizontal source-microphone separation, m.
    pub distance: f64,
    pub source_height: f64,
    pub mic_height: f64,
    /// m/s
    pub speed_of_sound: f64,
}

impl SceneGeometry {
    pub fn new(distance: f64, source_height: f64, mic_height: f64) -> Result<Self> {
        Self::with_speed(distance, source_height, mic_height, SPEED_OF_SOUND)
    }

    pub fn with_speed(distance: f64, source_height: f64, mic_height: f64, speed_of_sound: f64) -> Result<Self> {
        let g = Self {
            distance,
            source_height,
            mic_height,
            speed_of_sound,
        };
        let ok = [distance, source_height, mic_height, speed_of_sound]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !ok {
            return Err(Error::invalid(format!(
                "distance, heights and speed of sound must be positive, got {g:?}"
            )));
        }
        Ok(g)
    }

    pub fn direct_path(&self) -> f64 {
        self.distance.hypot(self.source_height - self.mic_height)
    }

    pub fn reflection_path(&self) -> f64 {
        self.distance.hypot(self.source_height + self.mic_height)
    }
}

/// Seconds.
pub fn direct_delay(g: &SceneGeometry) -> f64 {
    g.direct_path() / g.speed_of_sound
}

/// Seconds.
pub fn first_reflection_delay(g: &SceneGeometry) -> f64 {
    g.reflection_path() / g.speed_of_sound
}

/// Initial time delay gap in seconds.
pub fn itdg(g: &SceneGeometry) -> f64 {
    first_reflection_delay(g) - direct_delay(g)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItdgRow {
    pub distance_m: f64,
    pub source_height_m: f64,
    pub mic_height_m: f64,
    /// Delays in ms, rounded to 0.1 ms.
    pub direct_ms: f64,
    pub first_reflection_ms: f64,
    pub itdg_ms: f64,
}

pub fn round_tenth(ms: f64) -> f64 {
    (ms * 10.0).round() / 10.0
}

/// One row per (height pair, distance), height pairs outermost.
pub fn itdg_table(distances: &[f64], heights: &[(f64, f64)], speed_of_sound: f64) -> Result<Vec<ItdgRow>> {
    if distances.is_empty() || heights.is_empty() {
        return Err(Error::invalid("ITDG table needs at least one distance and one height pair"));
    }
    let mut rows = Vec::with_capacity(distances.len() * heights.len());
    for &(hs, hm) in heights {
        for &d in distances {
            let g = SceneGeometry::with_speed(d, hs, hm, speed_of_sound)?;
            rows.push(ItdgRow {
                distance_m: d,
                source_height_m: hs,
                mic_height_m: hm,
                direct_ms: round_tenth(direct_delay(&g) * 1e3),
                first_reflection_ms: round_tenth(first_reflection_delay(&g) * 1e3),
                itdg_ms: round_tenth(itdg(&g) * 1e3),
            });
        }
    }
    Ok(rows)
}

/// Aligned text rendering, one block per height pair.
pub fn render_table(rows: &[ItdgRow]) -> String {
    let mut out = String::new();
    let mut last: Option<(f64, f64)> = None;
    for r in rows {
        let key = (r.source_height_m, r.mic_height_m);
        if last != Some(key) {
            if last.is_some() {
                out.push('\n');
            }
            out.push_str(&format!(
                "source height {:.2} m, mic height {:.2} m\n{:>8} {:>10} {:>10} {:>10}\n",
                key.0, key.1, "dist_m", "direct_ms", "1stref_ms", "itdg_ms"
            ));
            last = Some(key);
        }
        out.push_str(&format!(
            "{:>8.2} {:>10.1} {:>10.1} {:>10.1}\n",
            r.distance_m, r.direct_ms, r.first_reflection_ms, r.itdg_ms
        ));
    }
    out
}
