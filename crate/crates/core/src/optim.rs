//! Derivative-free compass (coordinate pattern) search on the unit box.
//!
//! Used for the likelihood fit and for local refinement of the acquisition.
//! Non-finite objective values count as `+∞`, so infeasible or numerically
//! broken points are simply never accepted.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternSearch {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_evals: usize,
}

impl Default for PatternSearch {
    fn default() -> Self {
        Self {
            initial_step: 0.25,
            min_step: 1e-4,
            max_evals: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

#[inline]
fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

impl PatternSearch {
    /// Minimizes `f` over `[0, 1]^n` starting at `x0` (clamped into the box).
    pub fn minimize(&self, mut f: impl FnMut(&[f64]) -> f64, x0: &[f64]) -> Minimum {
        let mut x: Vec<f64> = x0.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let mut best = sanitize(f(&x));
        let mut evals = 1;
        let mut step = self.initial_step;
        if x.is_empty() {
            return Minimum { x, value: best, evals };
        }
        let mut trial = x.clone();
        while step >= self.min_step && evals < self.max_evals {
            let mut improved = false;
            for i in 0..x.len() {
                for dir in [1.0, -1.0] {
                    if evals >= self.max_evals {
                        break;
                    }
                    let cand = (x[i] + dir * step).clamp(0.0, 1.0);
                    if cand == x[i] {
                        continue;
                    }
                    trial[i] = cand;
                    let v = sanitize(f(&trial));
                    evals += 1;
                    if v < best {
                        best = v;
                        x[i] = cand;
                        improved = true;
                        break;
                    }
                    trial[i] = x[i];
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        Minimum { x, value: best, evals }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_minimum() {
        let m = PatternSearch::default().minimize(|x| (x[0] - 0.3).powi(2) + 2.0 * (x[1] - 0.71).powi(2), &[0.9, 0.1]);
        assert!((m.x[0] - 0.3).abs() < 1e-3 && (m.x[1] - 0.71).abs() < 1e-3, "{m:?}");
    }

    #[test]
    fn respects_box_and_nan() {
        let m = PatternSearch::default().minimize(|x| if x[0] > 0.8 { f64::NAN } else { -x[0] }, &[0.1]);
        assert!(m.x[0] <= 0.8 && m.x[0] > 0.79);
        let m = PatternSearch::default().minimize(|x| x[0], &[0.5]);
        assert_eq!(m.x[0], 0.0);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64]| (x[0] * 37.0).sin() + (x[1] * 11.0).cos();
        let start = [0.42, 0.17];
        let m = PatternSearch::default().minimize(f, &start);
        assert!(m.value <= f(&start));
        assert!(m.evals <= PatternSearch::default().max_evals);
    }
}
