//! Channel statistics over captured convolutional activations.

use alloc::string::String;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Output of one layer for one input image, laid out channel × h × w.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ActivationMap {
    pub layer: String,
    pub record_id: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl ActivationMap {
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMap {
    pub map: ActivationMap,
    /// Channels that were constant and have been zeroed.
    pub constant_channels: Vec<usize>,
}

/// Min-max rescales every channel to [0, 1]. Constant channels become zero.
pub fn normalize_map(map: &ActivationMap) -> NormalizedMap {
    let n = map.height * map.width;
    let mut out = map.clone();
    let mut constant_channels = Vec::new();
    if n == 0 {
        return NormalizedMap {
            map: out,
            constant_channels,
        };
    }
    for (c, chunk) in out.values.chunks_mut(n).enumerate() {
        let (lo, hi) = chunk
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if hi > lo {
            let span = f64::from(hi) - f64::from(lo);
            for v in chunk.iter_mut() {
                *v = ((f64::from(*v) - f64::from(lo)) / span) as f32;
            }
        } else {
            chunk.fill(0.0);
            constant_channels.push(c);
        }
    }
    NormalizedMap {
        map: out,
        constant_channels,
    }
}

/// Channel with the largest mean absolute activation; ties go to the
/// lowest index. Returns `None` for a map without channels.
pub fn strongest_channel(map: &ActivationMap) -> Option<usize> {
    let n = map.height * map.width;
    if map.channels == 0 {
        return None;
    }
    let mut best = (0, f64::NEG_INFINITY);
    for c in 0..map.channels {
        let sum: f64 = map.values[c * n..(c + 1) * n]
            .iter()
            .map(|v| f64::from(v.abs()))
            .sum();
        let mean = if n == 0 { 0.0 } else { sum / n as f64 };
        if mean > best.1 {
            best = (c, mean);
        }
    }
    Some(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn map(channels: usize, h: usize, w: usize, values: Vec<f32>) -> ActivationMap {
        ActivationMap {
            layer: "conv".into(),
            record_id: "r".into(),
            channels,
            height: h,
            width: w,
            values,
        }
    }

    #[test]
    fn affine_rescale() {
        let out = normalize_map(&map(1, 1, 3, vec![-2.0, 0.0, 2.0]));
        assert_eq!(out.map.values, [0.0, 0.5, 1.0]);
        let unit = map(1, 1, 3, vec![0.0, 0.25, 1.0]);
        assert_eq!(normalize_map(&unit).map, unit);
    }

    #[test]
    fn constant_channel_zeroed_and_flagged() {
        let out = normalize_map(&map(2, 1, 2, vec![3.0, 3.0, 1.0, 2.0]));
        assert_eq!(out.map.values, [0.0, 0.0, 0.0, 1.0]);
        assert_eq!(out.constant_channels, [0]);
    }

    #[test]
    fn strongest_channel_and_ties() {
        let m = map(3, 1, 2, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(strongest_channel(&m), Some(1));
        let tie = map(3, 1, 2, vec![0.0, 0.0, 2.0, -2.0, -2.0, 2.0]);
        assert_eq!(strongest_channel(&tie), Some(1));
        assert_eq!(strongest_channel(&map(0, 1, 1, vec![])), None);
    }
}
