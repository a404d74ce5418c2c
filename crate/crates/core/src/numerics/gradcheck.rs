use crate::error::{bail, Result};

/// Outcome of a central-difference gradient comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error over the checked coordinates.
    pub max_rel_error: f64,
    /// Coordinate where the worst error occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares `analytic[i]` with `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`
/// for every `i` in `coords` (all coordinates when `None`).
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-8)`, so coordinates with
/// vanishing gradients are compared absolutely.
pub fn finite_diff_check(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    eps: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-2).contains(&eps) {
        bail!(Parameter, "finite-difference epsilon {eps} outside [1e-6, 1e-2]");
    }
    if x.len() != analytic.len() {
        bail!(Dimension, "{} coordinates but {} analytic gradients", x.len(), analytic.len());
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut point = x.to_vec();
    for &i in coords {
        let orig = point[i];
        point[i] = orig + eps;
        let up = f(&point);
        point[i] = orig - eps;
        let down = f(&point);
        point[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_error || !rel.is_finite() {
            report = GradCheckReport {
                max_rel_error: rel,
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_of_quadratic() {
        let x = [1.0, -2.0, 0.5];
        let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let r = finite_diff_check(|p| p.iter().map(|v| v * v).sum(), &x, &g, 1e-4, None).unwrap();
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn detects_wrong_gradient() {
        let r = finite_diff_check(|p| p[0] * p[0], &[1.0], &[3.0], 1e-4, None).unwrap();
        assert!(r.max_rel_error > 0.3);
    }

    #[test]
    fn epsilon_range_enforced() {
        assert!(finite_diff_check(|p| p[0], &[1.0], &[1.0], 1e-1, None).is_err());
        assert!(finite_diff_check(|p| p[0], &[1.0], &[1.0], 1e-7, None).is_err());
    }
}
