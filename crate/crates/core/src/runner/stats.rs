//! Summary statistics across seed replicates.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (zero for fewer than two values).
    pub std: f64,
    pub count: usize,
}

/// Mean, then sum of squared deviations from it.
pub fn two_pass(values: &[f64]) -> MeanStd {
    let count = values.len();
    if count == 0 {
        return MeanStd {
            mean: f64::NAN,
            std: f64::NAN,
            count,
        };
    }
    let mean = values.iter().sum::<f64>() / count as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let std = if count > 1 { (ss / (count - 1) as f64).sqrt() } else { 0.0 };
    MeanStd { mean, std, count }
}

/// Welford's single-pass update.
#[derive(Debug, Clone, Copy, Default)]
pub struct Streaming {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Streaming {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
    }

    pub fn finish(&self) -> MeanStd {
        if self.count == 0 {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
                count: 0,
            };
        }
        let std = if self.count > 1 {
            (self.m2 / (self.count - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd {
            mean: self.mean,
            std,
            count: self.count,
        }
    }
}

pub fn streaming(values: &[f64]) -> MeanStd {
    let mut s = Streaming::default();
    values.iter().for_each(|&v| s.push(v));
    s.finish()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
