//! Coordinate boxes and the deterministic sample points used for
//! "identically zero" verdicts.

use serde::{Deserialize, Serialize};

/// Default number of low-discrepancy samples per verdict.
pub const DEFAULT_SAMPLES: usize = 64;

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Axis-aligned box in coordinate space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordBox {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl CoordBox {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Self {
        assert_eq!(min.len(), max.len(), "box corners differ in dimension");
        CoordBox { min, max }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn center(&self) -> Vec<f64> {
        self.min
            .iter()
            .zip(&self.max)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .all(|(p, (lo, hi))| *p >= *lo && *p <= *hi)
    }

    /// Halton points mapped into the box, skipping the first `seed`
    /// sequence elements so different seeds give different but
    /// reproducible point sets.
    pub fn halton(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        assert!(
            self.dim() <= PRIMES.len(),
            "Halton sampling supports up to 16 axes"
        );
        (0..count as u64)
            .map(|k| {
                let index = k + 1 + seed;
                (0..self.dim())
                    .map(|axis| {
                        let u = radical_inverse(index, PRIMES[axis]);
                        self.min[axis] + u * self.extent(axis)
                    })
                    .collect()
            })
            .collect()
    }
}

fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let base = base as u64;
    let inv = 1.0 / base as f64;
    let mut factor = inv;
    let mut value = 0.0;
    while index > 0 {
        value += (index % base) as f64 * factor;
        index /= base;
        factor *= inv;
    }
    value
}

/// Sample points for a verdict: Halton points plus any user points.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlan {
    pub count: usize,
    pub seed: u64,
    pub extra: Vec<Vec<f64>>,
}

impl Default for SamplePlan {
    fn default() -> Self {
        SamplePlan {
            count: DEFAULT_SAMPLES,
            seed: 0,
            extra: Vec::new(),
        }
    }
}

impl SamplePlan {
    pub fn with_seed(seed: u64) -> Self {
        SamplePlan {
            seed,
            ..SamplePlan::default()
        }
    }

    pub fn points(&self, bounds: &CoordBox) -> Vec<Vec<f64>> {
        let mut points = bounds.halton(self.count, self.seed);
        points.extend(self.extra.iter().cloned());
        points
    }
}
