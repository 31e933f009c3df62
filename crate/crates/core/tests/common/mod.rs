//! Independent oracles shared by the integration tests and the acceptance
//! runner. Nothing here calls the routines it is used to check.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use stmoe::specfun::{normal_log_cdf, normal_logpdf};

// Gauss–Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod quadrature of `f` over a finite interval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= tol || depth == 0 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth - 1) + rec(f, m, b, 0.5 * tol, depth - 1)
    }
    rec(&f, a, b, tol, 40)
}

/// `∫ f(μ + s·u) s du` over the real line, through `u = t / (1 - t²)`.
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F, center: f64, scale: f64, tol: f64) -> f64 {
    let g = |t: f64| {
        let den = 1.0 - t * t;
        if den <= 0.0 {
            return 0.0;
        }
        let u = t / den;
        let v = f(center + scale * u) * scale * (1.0 + t * t) / (den * den);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(g, -1.0, 0.0, 0.5 * tol) + integrate(g, 0.0, 1.0, 0.5 * tol)
}

/// Lanczos (g = 7, 9 terms) log-gamma for positive arguments.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
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
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Student-t density from its Γ-function form.
pub fn t_density(x: f64, nu: f64) -> f64 {
    let ln_c = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln();
    (ln_c - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()).exp()
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
}

/// Conditional moments `E[W]`, `E[W U]`, `E[W U²]`, `E[log W]` given `y`
/// under one skew-t expert.
#[derive(Debug, Clone, Copy)]
pub struct McMoments {
    pub w: McEstimate,
    pub e1: McEstimate,
    pub e2: McEstimate,
    pub e3: McEstimate,
}

/// Importance sampler for the latent moments of a skew-t observation, built
/// on the hierarchy `W ~ Gamma(ν/2, ν/2)`, `U | W ~ N⁺(0, σ²/W)`,
/// `Y | U, W ~ N(μ + δU, (1-δ²)σ²/W)`.
///
/// Integrating `U` out leaves `W | y ∝ Gamma((ν+1)/2, (ν+d²)/2) · Φ(λ d √w)`.
/// `W` is drawn from that gamma, with the rate widened by `λ²d²` when
/// `λd < 0` so the weight `Φ(x)·exp(x²/2)` stays bounded. The `U` integrals
/// are taken exactly from the truncated-normal posterior `U | y, w`.
pub fn mc_latent_moments(resid: f64, sigma2: f64, lambda: f64, nu: f64, draws: usize, seed: u64) -> McMoments {
    let sigma = sigma2.sqrt();
    let d = resid / sigma;
    let delta = lambda / (1.0 + lambda * lambda).sqrt();
    let slope = lambda * d;
    let extra = if slope < 0.0 { slope * slope } else { 0.0 };
    let gamma = Gamma::new(0.5 * (nu + 1.0), 2.0 / (nu + d * d + extra)).expect("valid gamma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut logw = Vec::with_capacity(draws);
    let mut g = Vec::with_capacity(draws);
    for _ in 0..draws {
        let w: f64 = gamma.sample(&mut rng);
        let x = slope * w.sqrt();
        logw.push(normal_log_cdf(x) + 0.5 * extra * w);
        let m = delta * resid;
        let s = sigma * ((1.0 - delta * delta) / w).sqrt();
        let a = m / s;
        let mills = (normal_logpdf(a) - normal_log_cdf(a)).exp();
        let eu = m + s * mills;
        let eu2 = m * m + s * s + m * s * mills;
        g.push([w, w * eu, w * eu2, w.ln()]);
    }
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let wts: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = wts.iter().sum();
    let est = |c: usize| {
        let mean = wts.iter().zip(&g).map(|(w, v)| w * v[c]).sum::<f64>() / total;
        let var = wts.iter().zip(&g).map(|(w, v)| (w * (v[c] - mean)).powi(2)).sum::<f64>() / (total * total);
        McEstimate { mean, se: var.sqrt() }
    };
    McMoments { w: est(0), e1: est(1), e2: est(2), e3: est(3) }
}

/// One-sample Kolmogorov–Smirnov statistic from the model CDF evaluated at
/// the sorted sample.
pub fn ks_statistic(sorted_cdf: &[f64]) -> f64 {
    let n = sorted_cdf.len() as f64;
    sorted_cdf
        .iter()
        .enumerate()
        .map(|(i, &f)| (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs()))
        .fold(0.0, f64::max)
}
