//! Bounded derivative-free minimization for the likelihood search:
//! a clamped Nelder-Mead simplex plus a Halton sequence for spreading
//! multi-start seeds over the search box.

/// Result of one local search.
#[derive(Debug, Clone)]
pub struct LocalMin {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

/// Nelder-Mead with all candidate points clamped to `bounds`.
///
/// Standard coefficients (reflect 1, expand 2, contract 0.5, shrink 0.5).
/// Stops when the simplex function spread falls under `f_tol`, its diameter
/// under `x_tol`, or after `max_evals` objective evaluations.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    max_evals: usize,
    x_tol: f64,
    f_tol: f64,
) -> LocalMin {
    let d = x0.len();
    let clamp = |x: &mut Vec<f64>| {
        for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
            *v = v.clamp(lo, hi);
        }
    };
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    // initial simplex: x0 plus a 10%-of-box step per dimension
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let mut start = x0.to_vec();
    clamp(&mut start);
    let v0 = eval(&start, &mut evals);
    simplex.push((start.clone(), v0));
    for i in 0..d {
        let (lo, hi) = bounds[i];
        let step = 0.1 * (hi - lo);
        let mut x = start.clone();
        x[i] = if x[i] + step <= hi { x[i] + step } else { x[i] - step };
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let spread = simplex[d].1 - simplex[0].1;
        let diameter = (0..d)
            .map(|i| {
                simplex
                    .iter()
                    .map(|(x, _)| x[i])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    })
            })
            .map(|(lo, hi)| hi - lo)
            .fold(0.0f64, f64::max);
        if spread.abs() < f_tol || diameter < x_tol {
            break;
        }

        let centroid: Vec<f64> = (0..d)
            .map(|i| simplex[..d].iter().map(|(x, _)| x[i]).sum::<f64>() / d as f64)
            .collect();
        let worst = simplex[d].clone();
        let mut reflected: Vec<f64> = centroid
            .iter()
            .zip(&worst.0)
            .map(|(c, w)| c + (c - w))
            .collect();
        clamp(&mut reflected);
        let fr = eval(&reflected, &mut evals);

        if fr < simplex[0].1 {
            let mut expanded: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + 2.0 * (c - w))
                .collect();
            clamp(&mut expanded);
            let fe = eval(&expanded, &mut evals);
            simplex[d] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (reflected, fr);
        } else {
            let mut contracted: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + 0.5 * (w - c))
                .collect();
            clamp(&mut contracted);
            let fc = eval(&contracted, &mut evals);
            if fc < worst.1 {
                simplex[d] = (contracted, fc);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let mut x: Vec<f64> = best
                        .iter()
                        .zip(&entry.0)
                        .map(|(b, v)| b + 0.5 * (v - b))
                        .collect();
                    clamp(&mut x);
                    let fv = eval(&x, &mut evals);
                    *entry = (x, fv);
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    LocalMin {
        x: simplex[0].0.clone(),
        value: simplex[0].1,
        evals,
    }
}

const HALTON_BASES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// The `index`-th element (1-based) of the van der Corput sequence in `base`.
fn van_der_corput(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// The `index`-th point (1-based) of the Halton sequence in `dim` dimensions,
/// mapped into `bounds`. Used as a space-filling multi-start seed set.
pub fn halton_point(index: usize, bounds: &[(f64, f64)]) -> Vec<f64> {
    assert!(bounds.len() <= HALTON_BASES.len(), "too many dimensions");
    bounds
        .iter()
        .zip(HALTON_BASES)
        .map(|(&(lo, hi), base)| lo + (hi - lo) * van_der_corput(index, base))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic_within_bounds() {
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + 2.0 * (x[1] + 0.2).powi(2);
        let bounds = [(-1.0, 1.0), (-1.0, 1.0)];
        let m = nelder_mead(f, &[0.9, 0.9], &bounds, 400, 1e-10, 1e-14);
        assert!((m.x[0] - 0.3).abs() < 1e-4, "{:?}", m.x);
        assert!((m.x[1] + 0.2).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn respects_bounds_when_minimum_is_outside() {
        let f = |x: &[f64]| (x[0] - 5.0).powi(2);
        let m = nelder_mead(f, &[0.0], &[(-1.0, 1.0)], 200, 1e-10, 1e-14);
        assert!((m.x[0] - 1.0).abs() < 1e-6, "clamped argmin: {:?}", m.x);
    }

    #[test]
    fn survives_nan_objective() {
        let f = |x: &[f64]| {
            if x[0] < 0.0 {
                f64::NAN
            } else {
                (x[0] - 0.25).powi(2)
            }
        };
        let m = nelder_mead(f, &[0.9], &[(-1.0, 1.0)], 300, 1e-10, 1e-14);
        assert!((m.x[0] - 0.25).abs() < 1e-4);
    }

    #[test]
    fn halton_points_fill_the_box() {
        let bounds = [(0.0, 1.0), (10.0, 20.0)];
        let pts: Vec<Vec<f64>> = (1..=16).map(|i| halton_point(i, &bounds)).collect();
        for p in &pts {
            assert!(p[0] >= 0.0 && p[0] <= 1.0);
            assert!(p[1] >= 10.0 && p[1] <= 20.0);
        }
        // first coordinates follow the base-2 van der Corput sequence
        assert!((pts[0][0] - 0.5).abs() < 1e-15);
        assert!((pts[1][0] - 0.25).abs() < 1e-15);
        assert!((pts[2][0] - 0.75).abs() < 1e-15);
    }
}
