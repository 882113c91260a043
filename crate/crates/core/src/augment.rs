//! Audio channel swap (ACS) augmentation for FOA audio.
//!
//! The eight transforms are the four right-angle rotations about the
//! vertical axis, each with and without a flip of the elevation. All of
//! them are exact channel permutations and sign changes, and W is never
//! touched.

use crate::dsp::AudioClip;
use crate::metrics::EventRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AcsTransform {
    /// 0..=7; id 0 is the identity.
    pub id: u8,
    /// Counter-clockwise azimuth rotation in degrees: 0, 90, 180 or 270.
    pub rotation_deg: u16,
    pub elevation_flip: bool,
}

impl AcsTransform {
    pub fn from_id(id: u8) -> Result<Self> {
        if id > 7 {
            return Err(Error::invalid(format!("ACS transform id {id} outside 0..=7")));
        }
        Ok(Self {
            id,
            rotation_deg: 90 * (id % 4) as u16,
            elevation_flip: id >= 4,
        })
    }

    pub fn all() -> [AcsTransform; 8] {
        std::array::from_fn(|i| Self::from_id(i as u8).expect("id in range"))
    }

    pub fn is_identity(&self) -> bool {
        self.id == 0
    }

    /// Applies the rotation/flip to a Cartesian (x, y, z) direction.
    pub fn apply_vector(&self, [x, y, z]: [f64; 3]) -> [f64; 3] {
        let (x, y) = match self.rotation_deg {
            0 => (x, y),
            90 => (-y, x),
            180 => (-x, -y),
            _ => (y, -x),
        };
        [x, y, if self.elevation_flip { -z } else { z }]
    }

    /// `(W, X, Y, Z)` channel map as a 4x4 matrix, for inspection.
    pub fn channel_matrix(&self) -> [[i8; 4]; 4] {
        let mut m = [[0i8; 4]; 4];
        m[0][0] = 1;
        for (col, unit) in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]].into_iter().enumerate() {
            let image = self.apply_vector(unit);
            for (row, v) in image.iter().enumerate() {
                m[row + 1][col + 1] = *v as i8;
            }
        }
        m
    }

    pub fn apply_angles(&self, azimuth: f64, elevation: f64) -> (f64, f64) {
        let az = wrap_azimuth(azimuth + self.rotation_deg as f64);
        let el = if self.elevation_flip { -elevation } else { elevation };
        (az, el)
    }
}

/// Wraps degrees into (-180, 180].
pub fn wrap_azimuth(deg: f64) -> f64 {
    let mut a = deg % 360.0;
    if a > 180.0 {
        a -= 360.0;
    } else if a <= -180.0 {
        a += 360.0;
    }
    a
}

pub fn acs_audio(foa: &AudioClip, t: &AcsTransform) -> Result<AudioClip> {
    foa.require_channels(4)?;
    let [w, x, y, z] = [0, 1, 2, 3].map(|c| foa.channel(c));
    let neg = |c: &[f64]| c.iter().map(|v| -v).collect::<Vec<_>>();
    let (x2, y2) = match t.rotation_deg {
        0 => (x.to_vec(), y.to_vec()),
        90 => (neg(y), x.to_vec()),
        180 => (neg(x), neg(y)),
        _ => (y.to_vec(), neg(x)),
    };
    let z2 = if t.elevation_flip { neg(z) } else { z.to_vec() };
    AudioClip::new(vec![w.to_vec(), x2, y2, z2], foa.sample_rate())
}

pub fn acs_labels(events: &[EventRecord], t: &AcsTransform) -> Result<Vec<EventRecord>> {
    events
        .iter()
        .map(|e| {
            if !(e.azimuth > -180.0 && e.azimuth <= 180.0 && (-90.0..=90.0).contains(&e.elevation)) {
                return Err(Error::invalid(format!(
                    "event at frame {} has azimuth {} / elevation {} out of range",
                    e.frame, e.azimuth, e.elevation
                )));
            }
            let (azimuth, elevation) = t.apply_angles(e.azimuth, e.elevation);
            Ok(EventRecord {
                azimuth,
                elevation,
                ..*e
            })
        })
        .collect()
}

/// All eight augmented copies, identity first.
pub fn acs_expand(
    clip: &AudioClip,
    events: &[EventRecord],
) -> Result<Vec<(AcsTransform, AudioClip, Vec<EventRecord>)>> {
    AcsTransform::all()
        .iter()
        .map(|t| Ok((*t, acs_audio(clip, t)?, acs_labels(events, t)?)))
        .collect()
}
