//! Small derivative-free optimization and quasi-random sampling helpers.

/// Result of a bounded Nelder–Mead run.
#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
}

/// Nelder–Mead on a box, with trial points projected onto the box. Runs until
/// exactly `max_evals` evaluations are spent or the simplex collapses below
/// `1e-10` in both extent and value spread. Non-finite values count as `+∞`.
pub fn nelder_mead_box(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    step: f64,
    max_evals: usize,
) -> Minimum {
    let n = x0.len();
    let project = |x: &mut Vec<f64>| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut start = x0.to_vec();
    project(&mut start);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(&start, &mut evals);
    simplex.push((start.clone(), f0));
    for i in 0..n {
        if evals >= max_evals {
            break;
        }
        let width = upper[i] - lower[i];
        let mut x = start.clone();
        let delta = step * width;
        // step inward when the start sits on the upper face
        x[i] = if x[i] + delta <= upper[i] { x[i] + delta } else { x[i] - delta };
        project(&mut x);
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }

    let by_value = |a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)| a.1.total_cmp(&b.1);
    while evals < max_evals && simplex.len() == n + 1 {
        simplex.sort_by(by_value);
        let spread = simplex[n].1 - simplex[0].1;
        let extent = simplex
            .iter()
            .skip(1)
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0_f64, f64::max);
        if spread.abs() <= 1e-10 && extent <= 1e-10 {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for i in 0..n {
                centroid[i] += x[i] / n as f64;
            }
        }
        let along = |t: f64| {
            let mut x: Vec<f64> = (0..n).map(|i| centroid[i] + t * (simplex[n].0[i] - centroid[i])).collect();
            project(&mut x);
            x
        };
        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            if evals >= max_evals {
                simplex[n] = (xr, fr);
                break;
            }
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            if evals >= max_evals {
                break;
            }
            let (xc, fc) = if fr < simplex[n].1 {
                let x = along(-0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            } else {
                let x = along(0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                // shrink towards the best vertex
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    if evals >= max_evals {
                        break;
                    }
                    let mut x: Vec<f64> = (0..n).map(|i| best[i] + 0.5 * (v.0[i] - best[i])).collect();
                    project(&mut x);
                    let fx = eval(&x, &mut evals);
                    *v = (x, fx);
                }
            }
        }
    }
    let (x, f) = simplex
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("simplex has a vertex");
    Minimum {
        x,
        f,
        evaluations: evals,
    }
}

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Van der Corput radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut out = 0.0;
    while index > 0 {
        out += (index % b) as f64 * scale;
        index /= b;
        scale *= inv;
    }
    out
}

/// First `count` points of the Halton sequence in `[0,1)^dim` (index 0
/// skipped), rotated by `shift` modulo 1.
pub fn halton(count: usize, dim: usize, shift: &[f64]) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "Halton sequence supports up to {} dimensions", PRIMES.len());
    assert_eq!(shift.len(), dim);
    (1..=count as u64)
        .map(|i| {
            (0..dim)
                .map(|d| (radical_inverse(i, PRIMES[d]) + shift[d]).fract())
                .collect()
        })
        .collect()
}
