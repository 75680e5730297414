//! Small descriptive-statistics helpers shared by the estimators.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Standard error of the mean.
pub fn se(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    sd(xs) / (xs.len() as f64).sqrt()
}

/// Least-squares slope of `ys` on `xs`, `None` when `xs` has no spread.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    debug_assert_eq!(xs.len(), ys.len());
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx > 0.0 {
        Some(sxy / sxx)
    } else {
        None
    }
}

/// Simple linear regression of `ys` on `xs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trend {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub t: f64,
}

pub fn linear_trend(xs: &[f64], ys: &[f64]) -> Option<Trend> {
    let n = xs.len();
    if n < 3 {
        return None;
    }
    let slope = ls_slope(xs, ys)?;
    let mx = mean(xs);
    let my = mean(ys);
    let intercept = my - slope * mx;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let slope_se = (rss / (n - 2) as f64 / sxx).sqrt();
    let t = if slope_se > 0.0 {
        slope / slope_se
    } else if slope == 0.0 {
        0.0
    } else {
        slope.signum() * f64::INFINITY
    };
    Some(Trend {
        slope,
        intercept,
        slope_se,
        t,
    })
}

/// Running mean and standard error over a prefix-growing sample.
pub fn running_mean_se(xs: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(xs.len());
    // Welford
    let mut m = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let n = (i + 1) as f64;
        let d = x - m;
        m += d / n;
        m2 += d * (x - m);
        let se = if i == 0 {
            0.0
        } else {
            (m2 / (n - 1.0) / n).sqrt()
        };
        out.push((m, se));
    }
    out
}
