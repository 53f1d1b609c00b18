// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! Stratified optimal resampling: reduce a weighted set to a fixed size while
//! keeping every weight unbiased.
//!
//! Weights at or above the threshold `alpha` (with `sum min(1, w / alpha) = cap`)
//! survive untouched. The rest are thinned by a single systematic sweep over
//! their cumulative weights and each survivor is assigned weight `alpha`.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SorOutcome {
    /// Indices of the survivors, ascending.
    pub kept: Vec<usize>,
    /// Post-resampling weight of each survivor, aligned with `kept`.
    pub weights: Vec<f64>,
    pub alpha: f64,
    /// Number of survivors retained above the threshold.
    pub n_above: usize,
}

fn count_fn(weights: &[f64], alpha: f64) -> f64 {
    weights.iter().map(|&w| (w / alpha).min(1.0)).sum()
}

/// Threshold `alpha` solving `sum_i min(1, w_i / alpha) = cap`.
///
/// Requires more than `cap` strictly positive weights.
pub fn solve_threshold(weights: &[f64], cap: usize) -> f64 {
    let target = cap as f64;
    let total: f64 = weights.iter().sum();
    let (mut lo, mut hi) = (0.0, total / target);
    // h is nonincreasing in alpha; h(hi) <= cap and h(0+) > cap.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        let h = count_fn(weights, mid);
        if (h - target).abs() <= 1e-12 {
            lo = mid;
            hi = mid;
            break;
        }
        if h > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut alpha = 0.5 * (lo + hi);
    // Closed-form refinement given the set above the threshold.
    for _ in 0..4 {
        let (n_above, rest) = weights.iter().fold((0usize, 0.0), |(a, r), &w| {
            if w >= alpha {
                (a + 1, r)
            } else {
                (a, r + w)
            }
        });
        if n_above >= cap {
            break;
        }
        let refined = rest / (cap - n_above) as f64;
        if refined == alpha || !(refined > 0.0) {
            break;
        }
        let consistent = weights.iter().filter(|&&w| w >= refined).count() == n_above;
        if !consistent {
            break;
        }
        alpha = refined;
    }
    alpha
}

/// Reduces `weights` to exactly `cap` survivors. Returns the identity when
/// there are at most `cap` positive weights.
pub fn sor_resample<R: Rng + ?Sized>(weights: &[f64], cap: usize, rng: &mut R) -> Result<SorOutcome> {
    if cap == 0 {
        return Err(Error::config("resampling cap must be at least 1"));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::domain("resampling weights must be finite and nonnegative"));
    }
    let positive = weights.iter().filter(|&&w| w > 0.0).count();
    if positive == 0 {
        return Err(Error::domain("resampling weights are all zero"));
    }
    if positive <= cap {
        let kept: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
        let w = kept.iter().map(|&i| weights[i]).collect();
        return Ok(SorOutcome { kept, weights: w, alpha: 0.0, n_above: positive });
    }
    let alpha = solve_threshold(weights, cap);
    let mut kept = Vec::with_capacity(cap);
    let mut out_w = Vec::with_capacity(cap);
    let n_above = weights.iter().filter(|&&w| w >= alpha).count();
    let n_draw = cap.saturating_sub(n_above);
    let u: f64 = rng.random::<f64>() * alpha;
    let mut next_k = 0usize;
    let mut cum = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        if w >= alpha {
            kept.push(i);
            out_w.push(w);
            continue;
        }
        if w <= 0.0 {
            continue;
        }
        cum += w;
        let mut hit = false;
        while next_k < n_draw && u + next_k as f64 * alpha < cum {
            next_k += 1;
            hit = true;
        }
        if hit {
            kept.push(i);
            out_w.push(alpha);
        }
    }
    // Rounding can leave the final grid point just past the last cumulative sum.
    while kept.len() < cap {
        let Some(i) = (0..weights.len()).rev().find(|&i| weights[i] > 0.0 && weights[i] < alpha && !kept.contains(&i))
        else {
            break;
        };
        let pos = kept.partition_point(|&k| k < i);
        kept.insert(pos, i);
        out_w.insert(pos, alpha);
    }
    Ok(SorOutcome { kept, weights: out_w, alpha, n_above })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn five_weight_example() {
        let w = [0.5, 0.3, 0.1, 0.06, 0.04];
        let alpha = solve_threshold(&w, 3);
        // Two weights above, the remaining 0.2 spread over one slot.
        assert!((alpha - 0.2).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let out = sor_resample(&w, 3, &mut rng).unwrap();
            assert_eq!(out.kept.len(), 3);
            assert_eq!(&out.kept[..2], &[0, 1]);
            assert_eq!(out.weights[0].to_bits(), 0.5f64.to_bits());
            assert_eq!(out.weights[1].to_bits(), 0.3f64.to_bits());
            assert!((out.weights[2] - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_weight_always_kept() {
        let mut w = vec![0.99];
        w.extend(std::iter::repeat(0.01 / 9.0).take(9));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let out = sor_resample(&w, 2, &mut rng).unwrap();
            assert_eq!(out.kept[0], 0);
            assert_eq!(out.weights[0], 0.99);
            assert_eq!(out.kept.len(), 2);
        }
    }

    #[test]
    fn no_op_below_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = sor_resample(&[0.2, 0.8], 3, &mut rng).unwrap();
        assert_eq!(out.kept, vec![0, 1]);
        assert_eq!(out.weights, vec![0.2, 0.8]);
    }
}
