//! Weighted QoE score over min-max normalised resolution, frame rate,
//! latency and loss.

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QoeWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for QoeWeights {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.6, gamma: 0.7, delta: 0.8 }
    }
}

/// Normalised inputs, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoeInputs {
    pub resolution: f64,
    pub frame_rate: f64,
    pub latency: f64,
    pub loss: f64,
}

/// Raw per-tick metrics before normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawQoe {
    /// Frame height in pixels.
    pub resolution: f64,
    pub frame_rate: f64,
    pub latency_ms: f64,
    pub loss: f64,
}

pub fn qoe(x: &QoeInputs, w: &QoeWeights) -> Result<f64, EvalError> {
    for (name, v) in [("R", x.resolution), ("F", x.frame_rate), ("L", x.latency), ("P", x.loss)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(EvalError::UnnormalizedInput { name, value: v });
        }
    }
    Ok(w.alpha * x.resolution + w.beta * x.frame_rate - w.gamma * x.latency - w.delta * x.loss)
}

/// Min-max scaling; a constant series maps to all zeros.
pub fn normalize(series: &[f64]) -> Result<Vec<f64>, EvalError> {
    let (lo, hi) = bounds(series.iter().copied()).ok_or(EvalError::EmptySeries)?;
    Ok(series.iter().map(|&v| scale(v, lo, hi)).collect())
}

fn bounds(it: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    it.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

fn scale(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Normalises several series against their common extremes and returns the
/// mean QoE of each.
pub fn mean_qoe_joint(series: &[&[RawQoe]], w: &QoeWeights) -> Result<Vec<f64>, EvalError> {
    let all = || series.iter().flat_map(|s| s.iter());
    let r = bounds(all().map(|x| x.resolution)).ok_or(EvalError::EmptySeries)?;
    let f = bounds(all().map(|x| x.frame_rate)).expect("non-empty");
    let l = bounds(all().map(|x| x.latency_ms)).expect("non-empty");
    let p = bounds(all().map(|x| x.loss)).expect("non-empty");
    series
        .iter()
        .map(|s| {
            if s.is_empty() {
                return Err(EvalError::EmptySeries);
            }
            let mut total = 0.0;
            for x in s.iter() {
                let n = QoeInputs {
                    resolution: scale(x.resolution, r.0, r.1),
                    frame_rate: scale(x.frame_rate, f.0, f.1),
                    latency: scale(x.latency_ms, l.0, l.1),
                    loss: scale(x.loss, p.0, p.1),
                };
                total += qoe(&n, w)?;
            }
            Ok(total / s.len() as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inputs(r: f64, f: f64, l: f64, p: f64) -> QoeInputs {
        QoeInputs { resolution: r, frame_rate: f, latency: l, loss: p }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn corner_values() {
        let w = QoeWeights::default();
        assert!(close(qoe(&inputs(1.0, 1.0, 0.0, 0.0), &w).unwrap(), 1.1));
        assert!(close(qoe(&inputs(0.0, 0.0, 1.0, 1.0), &w).unwrap(), -1.5));
        assert!(close(qoe(&inputs(0.5, 0.5, 0.5, 0.5), &w).unwrap(), -0.2));
        assert!(matches!(qoe(&inputs(1.2, 0.0, 0.0, 0.0), &w), Err(EvalError::UnnormalizedInput { name: "R", .. })));
        assert!(qoe(&inputs(0.0, 0.0, f64::NAN, 0.0), &w).is_err());
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize(&[360.0, 1080.0]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(normalize(&[7.0; 5]).unwrap(), vec![0.0; 5]);
        assert!(matches!(normalize(&[]), Err(EvalError::EmptySeries)));
        // twenty values worked by hand: min 3, max 83, so (v - 3) / 80
        let raw = [3.0, 83.0, 43.0, 23.0, 63.0, 13.0, 33.0, 53.0, 73.0, 8.0, 18.0, 28.0, 38.0, 48.0, 58.0, 68.0, 78.0, 5.0, 81.0, 11.0];
        let expect = [
            0.0, 1.0, 0.5, 0.25, 0.75, 0.125, 0.375, 0.625, 0.875, 0.0625, 0.1875, 0.3125, 0.4375, 0.5625, 0.6875, 0.8125, 0.9375, 0.025, 0.975, 0.1,
        ];
        for (got, want) in normalize(&raw).unwrap().into_iter().zip(expect) {
            assert!(close(got, want), "{got} {want}");
        }
    }

    #[test]
    fn joint_normalization() {
        let a = [RawQoe { resolution: 1080.0, frame_rate: 60.0, latency_ms: 0.0, loss: 0.0 }];
        let b = [RawQoe { resolution: 360.0, frame_rate: 30.0, latency_ms: 100.0, loss: 0.5 }];
        let m = mean_qoe_joint(&[&a, &b], &QoeWeights::default()).unwrap();
        assert!(close(m[0], 1.1) && close(m[1], -1.5));
        assert!(mean_qoe_joint(&[&a, &[]], &QoeWeights::default()).is_err());
    }

    proptest! {
        #[test]
        fn monotone(r in 0.0..0.9f64, f in 0.0..0.9f64, l in 0.1..1.0f64, p in 0.1..1.0f64, d in 0.01..0.1f64) {
            let w = QoeWeights::default();
            let base = qoe(&inputs(r, f, l, p), &w).unwrap();
            prop_assert!(qoe(&inputs(r + d, f, l, p), &w).unwrap() > base);
            prop_assert!(qoe(&inputs(r, f + d, l, p), &w).unwrap() > base);
            prop_assert!(qoe(&inputs(r, f, l - d, p), &w).unwrap() > base);
            prop_assert!(qoe(&inputs(r, f, l, p - d), &w).unwrap() > base);
        }
    }
}
