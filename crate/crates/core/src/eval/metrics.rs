// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::NeuronRef;
use crate::search::Z95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstabilityScore {
    pub value: f64,
    pub set_a: BTreeSet<NeuronRef>,
    pub set_b: BTreeSet<NeuronRef>,
}

/// Jaccard distance between two neuron sets. Two empty sets score 0.
pub fn jaccard_instability(a: &BTreeSet<NeuronRef>, b: &BTreeSet<NeuronRef>) -> InstabilityScore {
    let union = a.union(b).count();
    let inter = a.intersection(b).count();
    let value = if union == 0 {
        0.0
    } else {
        (union - inter) as f64 / union as f64
    };
    InstabilityScore {
        value,
        set_a: a.clone(),
        set_b: b.clone(),
    }
}

/// Sample mean with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub n: usize,
}

impl MeanCi {
    /// `None` for an empty slice. A single value gets a zero-width interval.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let half = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Z95 * (var / n as f64).sqrt()
        };
        Some(Self {
            mean,
            ci95_low: mean - half,
            ci95_high: mean + half,
            n,
        })
    }

    pub fn half_width(&self) -> f64 {
        (self.ci95_high - self.ci95_low) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[u32]) -> BTreeSet<NeuronRef> {
        ids.iter().map(|&c| NeuronRef::new(0, c, 0)).collect()
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard_instability(&set(&[1, 2]), &set(&[1, 2])).value, 0.0);
        assert_eq!(jaccard_instability(&set(&[1, 2]), &set(&[3, 4])).value, 1.0);
        assert_eq!(
            jaccard_instability(&set(&[1, 2]), &set(&[2, 3])).value,
            2.0 / 3.0
        );
        assert_eq!(jaccard_instability(&set(&[]), &set(&[])).value, 0.0);
        assert_eq!(jaccard_instability(&set(&[]), &set(&[5])).value, 1.0);
    }

    #[test]
    fn mean_ci() {
        assert!(MeanCi::from_values(&[]).is_none());
        let one = MeanCi::from_values(&[0.4]).unwrap();
        assert_eq!((one.ci95_low, one.ci95_high), (0.4, 0.4));
        // var = 2/3, n = 4
        let m = MeanCi::from_values(&[1.0, 2.0, 3.0, 2.0]).unwrap();
        assert_eq!(m.mean, 2.0);
        let sd = (2.0f64 / 3.0).sqrt();
        assert!((m.half_width() - Z95 * sd / 2.0).abs() < 1e-12);
    }
}
