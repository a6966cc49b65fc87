//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use mixlab::datagen::Dataset;
use mixlab::metrics::{ClassReport, DependencyReport};

/// Kolmogorov-Smirnov statistic of `xs` against `cdf`.
pub fn ks_statistic(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// 1% critical value of the one-sample KS statistic, large-n approximation.
pub fn ks_critical_1pct(n: usize) -> f64 {
    // sqrt(-ln(0.01 / 2) / 2) = 1.6276
    (-(0.005f64).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut a = C[0];
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for the incomplete Beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// Regularized incomplete Beta `I_x(a, b)`: the Beta(a, b) CDF.
pub fn beta_cdf(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b)).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Beta(a, a) mass on `[0, eps] u [1 - eps, 1]` by Simpson integration after
/// the substitution `u = x^a`, which removes the endpoint singularity.
pub fn beta_endpoint_mass(a: f64, eps: f64) -> f64 {
    let upper = eps.powf(a);
    let f = |u: f64| (1.0 - u.powf(1.0 / a)).powf(a - 1.0);
    let n = 20_000;
    let h = upper / n as f64;
    let mut s = f(0.0) + f(upper);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let one_side = s * h / 3.0 / a / ln_beta(a, a).exp();
    2.0 * one_side
}

/// Brute-force recount of every dependency-report field.
pub fn dependency_oracle(vanilla: &ClassReport, treated: &ClassReport) -> DependencyReport {
    let m = vanilla.recall.len();
    let mut delta = Vec::new();
    for c in 0..m {
        delta.push((treated.recall[c] - vanilla.recall[c]) * 100.0);
    }
    let group = |want_neg: bool| {
        let mut classes = Vec::new();
        for c in 0..m {
            if (want_neg && delta[c] < 0.0) || (!want_neg && delta[c] > 0.0) {
                classes.push(c);
            }
        }
        let count = classes.len();
        let (mean, std) = if count == 0 {
            (None, None)
        } else {
            let mut s = 0.0;
            for &c in &classes {
                s += delta[c];
            }
            let mu = s / count as f64;
            let mut v = 0.0;
            for &c in &classes {
                v += (delta[c] - mu) * (delta[c] - mu);
            }
            (Some(mu), Some((v / count as f64).sqrt()))
        };
        mixlab::metrics::GroupStats { classes, count, mean, std }
    };
    let acc = |r: &ClassReport| {
        let n = r.seed_accuracies.len() as f64;
        let mut s = 0.0;
        for a in &r.seed_accuracies {
            s += a;
        }
        let mu = s / n;
        let mut v = 0.0;
        for a in &r.seed_accuracies {
            v += (a - mu) * (a - mu);
        }
        (mu, (v / n).sqrt())
    };
    let (av, sv) = acc(vanilla);
    let (at, st) = acc(treated);
    DependencyReport {
        degraded: group(true),
        improved: group(false),
        delta_recall_pp: delta,
        accuracy_vanilla: av,
        accuracy_vanilla_std: sv,
        accuracy_treated: at,
        accuracy_treated_std: st,
    }
}

/// Confusion matrix `[true][predicted]` with argmax ties to the lowest index.
pub fn confusion(probs: &[Vec<f64>], labels: &[usize], m: usize) -> Vec<Vec<usize>> {
    let mut cm = vec![vec![0usize; m]; m];
    for (p, &y) in probs.iter().zip(labels) {
        let mut best = 0;
        for k in 1..m {
            if p[k] > p[best] {
                best = k;
            }
        }
        cm[y][best] += 1;
    }
    cm
}

/// Multiclass perceptron; true when it reaches zero training errors.
pub fn perceptron_separates(d: &Dataset, max_epochs: usize) -> bool {
    let f = d.n_features();
    let mut w = vec![vec![0.0; f + 1]; d.n_classes];
    for _ in 0..max_epochs {
        let mut errors = 0;
        for i in 0..d.len() {
            let x = d.features.row(i);
            let score = |wc: &Vec<f64>| wc[f] + x.iter().zip(wc).map(|(a, b)| a * b).sum::<f64>();
            let mut best = 0;
            for c in 1..d.n_classes {
                if score(&w[c]) > score(&w[best]) {
                    best = c;
                }
            }
            let y = d.labels[i];
            if best != y {
                errors += 1;
                for j in 0..f {
                    w[y][j] += x[j];
                    w[best][j] -= x[j];
                }
                w[y][f] += 1.0;
                w[best][f] -= 1.0;
            }
        }
        if errors == 0 {
            return true;
        }
    }
    false
}

pub fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> usize {
    let d2 = |c: &Vec<f64>| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let mut best = 0;
    for k in 1..centroids.len() {
        if d2(&centroids[k]) < d2(&centroids[best]) {
            best = k;
        }
    }
    best
}
