//! Independent verification oracles used by the test suites.
//!
//! Nothing here shares code with the implementations it checks: alignment
//! is verified by exhaustive enumeration and gradients by central finite
//! differences. Keep it that way, otherwise the checks prove nothing.

/// Exhaustively enumerates every placement of the shorter branch's steps
/// into the longer branch's columns and returns the maximum number of
/// matched columns plus the lexicographically smallest placeholder index
/// set achieving it. Cost is C(n, m); intended for branches up to ~10.
pub fn brute_force_align(longer: &[String], shorter: &[String]) -> (usize, Vec<usize>) {
    let n = longer.len();
    let m = shorter.len();
    assert!(n >= m, "first argument must be the longer branch");
    let mut best_matches = 0usize;
    let mut best_gaps: Option<Vec<usize>> = None;
    let mut placement = Vec::with_capacity(m);
    enumerate(longer, shorter, 0, &mut placement, &mut best_matches, &mut best_gaps);
    (best_matches, best_gaps.unwrap_or_else(|| (0..n).collect()))
}

fn enumerate(
    longer: &[String],
    shorter: &[String],
    start: usize,
    placement: &mut Vec<usize>,
    best_matches: &mut usize,
    best_gaps: &mut Option<Vec<usize>>,
) {
    let n = longer.len();
    let m = shorter.len();
    if placement.len() == m {
        let matches =
            placement.iter().enumerate().filter(|&(j, &col)| longer[col] == shorter[j]).count();
        let gaps: Vec<usize> = (0..n).filter(|c| !placement.contains(c)).collect();
        let better = match matches.cmp(best_matches) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Equal => match best_gaps {
                Some(cur) => gaps < *cur,
                None => true,
            },
            std::cmp::Ordering::Less => false,
        };
        if better {
            *best_matches = matches;
            *best_gaps = Some(gaps);
        }
        return;
    }
    // Leave room for the remaining shorter steps.
    let remaining = m - placement.len();
    for col in start..=(n - remaining) {
        placement.push(col);
        enumerate(longer, shorter, col + 1, placement, best_matches, best_gaps);
        placement.pop();
    }
}

/// Central-difference gradient of `f` at `x`: (f(x+e) - f(x-e)) / 2e per
/// coordinate. Perturbs in place and restores the original value exactly.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &mut [f64], eps: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let hi = f(x);
        x[i] = orig - eps;
        let lo = f(x);
        x[i] = orig;
        grad[i] = (hi - lo) / (2.0 * eps);
    }
    grad
}

/// Central difference along a single coordinate of `x`.
pub fn central_diff_at<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x: &mut [f64],
    i: usize,
    eps: f64,
) -> f64 {
    let orig = x[i];
    x[i] = orig + eps;
    let hi = f(x);
    x[i] = orig - eps;
    let lo = f(x);
    x[i] = orig;
    (hi - lo) / (2.0 * eps)
}

/// Worst relative disagreement between two gradients. Entries where both
/// sides are below `floor` in magnitude are treated as matching zeros.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut worst = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let scale = x.abs().max(y.abs());
        if scale < floor {
            continue;
        }
        worst = worst.max((x - y).abs() / scale.max(floor));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn brute_force_on_hand_checked_case() {
        let longer = keys(&["open_app|", "enable_incognito|", "search|", "clear_traces|"]);
        let shorter = keys(&["open_app|", "search|"]);
        let (matches, gaps) = brute_force_align(&longer, &shorter);
        assert_eq!(matches, 2);
        assert_eq!(gaps, vec![1, 3]);
    }

    #[test]
    fn brute_force_prefers_earliest_gaps_on_ties() {
        // No matches possible anywhere, so every placement scores 0 and
        // the tie-break alone decides: gaps must land at columns 0 and 1.
        let longer = keys(&["a", "b", "c"]);
        let shorter = keys(&["z"]);
        let (matches, gaps) = brute_force_align(&longer, &shorter);
        assert_eq!(matches, 0);
        assert_eq!(gaps, vec![0, 1]);
    }

    #[test]
    fn central_diff_on_quadratic() {
        // f(x) = sum(i * x_i^2) has gradient 2 i x_i.
        let mut x = vec![1.0, -2.0, 3.0];
        let f = |p: &[f64]| p.iter().enumerate().map(|(i, v)| i as f64 * v * v).sum::<f64>();
        let g = central_diff(f, &mut x, 1e-5);
        let expect = [0.0, -4.0, 12.0];
        for (a, b) in g.iter().zip(expect) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert_eq!(x, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn max_rel_err_ignores_joint_zeros() {
        let a = [0.0, 1.0];
        let b = [1e-14, 1.0 + 1e-8];
        let err = max_rel_err(&a, &b, 1e-9);
        assert!(err < 1e-7, "{err}");
    }
}
