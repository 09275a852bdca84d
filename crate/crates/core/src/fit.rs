//! Nonlinear least-squares fits of decay, oscillation, anticrossing and
//! benchmarking models.
//!
//! The optimizer is a Levenberg–Marquardt iteration with diagonal
//! (Marquardt) scaling and simple box constraints. Uncertainties come from
//! `(JᵀJ)⁻¹ · RSS/(n − p)` at the optimum; directions the data cannot
//! resolve are reported as infinite uncertainty and flagged.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A parametric model `y = f(x; p)` with an analytic gradient in `p`.
pub trait Model {
    fn name(&self) -> &'static str;
    fn param_names(&self) -> &'static [&'static str];
    fn param_units(&self) -> &'static [&'static str];
    fn eval(&self, x: f64, p: &[f64]) -> f64;
    /// Writes `∂f/∂p` into `grad`.
    fn gradient(&self, x: f64, p: &[f64], grad: &mut [f64]);
}

/// `a + b·exp(−t/T)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpDecay;

impl Model for ExpDecay {
    fn name(&self) -> &'static str {
        "exp_decay"
    }
    fn param_names(&self) -> &'static [&'static str] {
        &["a", "b", "T"]
    }
    fn param_units(&self) -> &'static [&'static str] {
        &["", "", "us"]
    }
    fn eval(&self, t: f64, p: &[f64]) -> f64 {
        p[0] + p[1] * (-t / p[2]).exp()
    }
    fn gradient(&self, t: f64, p: &[f64], g: &mut [f64]) {
        let e = (-t / p[2]).exp();
        g[0] = 1.0;
        g[1] = e;
        g[2] = p[1] * e * t / (p[2] * p[2]);
    }
}

/// `a + b·cos(2π·f·t + φ)·exp(−t/T)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DampedCos;

impl Model for DampedCos {
    fn name(&self) -> &'static str {
        "damped_cos"
    }
    fn param_names(&self) -> &'static [&'static str] {
        &["a", "b", "df", "phi", "T"]
    }
    fn param_units(&self) -> &'static [&'static str] {
        &["", "", "MHz", "rad", "us"]
    }
    fn eval(&self, t: f64, p: &[f64]) -> f64 {
        let x = 2.0 * std::f64::consts::PI * p[2] * t + p[3];
        p[0] + p[1] * x.cos() * (-t / p[4]).exp()
    }
    fn gradient(&self, t: f64, p: &[f64], g: &mut [f64]) {
        let x = 2.0 * std::f64::consts::PI * p[2] * t + p[3];
        let e = (-t / p[4]).exp();
        let (s, c) = x.sin_cos();
        g[0] = 1.0;
        g[1] = c * e;
        g[2] = -p[1] * s * e * 2.0 * std::f64::consts::PI * t;
        g[3] = -p[1] * s * e;
        g[4] = p[1] * c * e * t / (p[4] * p[4]);
    }
}

/// `A·J²/(B·Δ) + C` with `A` and `B` held fixed.
#[derive(Debug, Clone, Copy)]
pub struct Anticrossing {
    pub a: f64,
    pub b: f64,
}

impl Default for Anticrossing {
    fn default() -> Self {
        Anticrossing { a: 1.0, b: 1.0 }
    }
}

impl Model for Anticrossing {
    fn name(&self) -> &'static str {
        "anticrossing"
    }
    fn param_names(&self) -> &'static [&'static str] {
        &["J", "C"]
    }
    fn param_units(&self) -> &'static [&'static str] {
        &["MHz", "MHz"]
    }
    fn eval(&self, delta: f64, p: &[f64]) -> f64 {
        self.a * p[0] * p[0] / (self.b * delta) + p[1]
    }
    fn gradient(&self, delta: f64, p: &[f64], g: &mut [f64]) {
        g[0] = 2.0 * self.a * p[0] / (self.b * delta);
        g[1] = 1.0;
    }
}

/// `A·p^m + B`.
#[derive(Debug, Clone, Copy, Default)]
pub struct RbDecay;

impl Model for RbDecay {
    fn name(&self) -> &'static str {
        "rb_decay"
    }
    fn param_names(&self) -> &'static [&'static str] {
        &["A", "p", "B"]
    }
    fn param_units(&self) -> &'static [&'static str] {
        &["", "", ""]
    }
    fn eval(&self, m: f64, p: &[f64]) -> f64 {
        p[0] * p[1].powf(m) + p[2]
    }
    fn gradient(&self, m: f64, p: &[f64], g: &mut [f64]) {
        g[0] = p[1].powf(m);
        g[1] = if m == 0.0 {
            0.0
        } else {
            p[0] * m * p[1].powf(m - 1.0)
        };
        g[2] = 1.0;
    }
}

/// Optimizer controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Scaled-gradient tolerance: `|gⱼ| ≤ gtol·‖Jⱼ‖·‖y‖` for every j.
    pub gtol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 200,
            gtol: 1e-10,
        }
    }
}

/// Outcome of a fit. Non-convergence and identifiability problems are
/// reported through `converged` and `flags`, never as errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub names: Vec<String>,
    pub units: Vec<String>,
    pub values: Vec<f64>,
    /// One-sigma uncertainties; infinite where the data do not constrain a
    /// parameter.
    #[serde(with = "nonfinite_as_null")]
    pub sigmas: Vec<f64>,
    pub rss: f64,
    pub initial_rss: f64,
    pub gradient_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub flags: Vec<String>,
}

impl FitResult {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.sigmas[i])
    }

    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }
}

mod nonfinite_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let o: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        o.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let o: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(o.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

/// Box constraints applied after every trial step.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn free(n: usize) -> Self {
        Bounds {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    fn clamp(&self, p: &mut [f64]) {
        for (i, v) in p.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    fn at_bound(&self, p: &[f64], i: usize) -> Option<bool> {
        if p[i] <= self.lower[i] {
            Some(false)
        } else if p[i] >= self.upper[i] {
            Some(true)
        } else {
            None
        }
    }
}

fn residuals<M: Model>(m: &M, x: &[f64], y: &[f64], p: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        x.iter().zip(y).map(|(&xi, &yi)| m.eval(xi, p) - yi),
    )
}

fn jacobian<M: Model>(m: &M, x: &[f64], p: &[f64]) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(x.len(), p.len());
    let mut g = vec![0.0; p.len()];
    for (i, &xi) in x.iter().enumerate() {
        m.gradient(xi, p, &mut g);
        for (j, gj) in g.iter().enumerate() {
            jac[(i, j)] = *gj;
        }
    }
    jac
}

/// Largest scaled gradient component, ignoring components that point out of
/// an active bound.
fn scaled_gradient(
    jac: &DMatrix<f64>,
    r: &DVector<f64>,
    y_norm: f64,
    p: &[f64],
    bounds: &Bounds,
) -> f64 {
    let g = jac.transpose() * r;
    let rn = y_norm.max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for j in 0..p.len() {
        // Descent direction for parameter j is −g_j.
        match bounds.at_bound(p, j) {
            Some(true) if g[j] <= 0.0 => continue,
            Some(false) if g[j] >= 0.0 => continue,
            _ => {}
        }
        let cn = jac.column(j).norm();
        if cn == 0.0 {
            continue;
        }
        worst = worst.max(g[j].abs() / (cn * rn));
    }
    worst
}

/// Runs the damped least-squares iteration from `p0`.
pub fn levenberg_marquardt<M: Model>(
    model: &M,
    x: &[f64],
    y: &[f64],
    p0: &[f64],
    bounds: &Bounds,
    opts: FitOptions,
) -> FitResult {
    let n_par = p0.len();
    let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut p = p0.to_vec();
    bounds.clamp(&mut p);
    let mut r = residuals(model, x, y, &p);
    let mut cost = r.norm_squared();
    let initial_rss = cost;
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    let mut jac = jacobian(model, x, &p);
    while iterations < opts.max_iter {
        if scaled_gradient(&jac, &r, y_norm, &p, bounds) <= opts.gtol {
            converged = true;
            break;
        }
        iterations += 1;
        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * &r;
        let mut improved = false;
        while lambda < 1e16 {
            let mut damped = a.clone();
            for j in 0..n_par {
                damped[(j, j)] += lambda * a[(j, j)].max(1e-300);
            }
            let step = match damped.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => match damped.lu().solve(&(-&g)) {
                    Some(s) => s,
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                },
            };
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            bounds.clamp(&mut trial);
            let r_trial = residuals(model, x, y, &trial);
            let c_trial = r_trial.norm_squared();
            if c_trial.is_finite() && c_trial < cost {
                let rel = (cost - c_trial) / cost.max(f64::MIN_POSITIVE);
                p = trial;
                r = r_trial;
                cost = c_trial;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                jac = jacobian(model, x, &p);
                if rel < 1e-15 {
                    // No measurable progress is possible in floating point.
                    lambda = 1e16;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved || lambda >= 1e16 {
            break;
        }
    }
    let gnorm = scaled_gradient(&jac, &r, y_norm, &p, bounds);
    if gnorm <= opts.gtol {
        converged = true;
    }
    let (sigmas, mut flags) = uncertainties(model, &jac, cost, x.len(), &p, bounds);
    if !converged {
        flags.push(format!("not converged after {iterations} iterations"));
    }
    FitResult {
        model: model.name().to_string(),
        names: model.param_names().iter().map(|s| s.to_string()).collect(),
        units: model.param_units().iter().map(|s| s.to_string()).collect(),
        values: p,
        sigmas,
        rss: cost,
        initial_rss,
        gradient_norm: gnorm,
        converged,
        iterations,
        flags,
    }
}

fn uncertainties<M: Model>(
    model: &M,
    jac: &DMatrix<f64>,
    rss: f64,
    n: usize,
    p: &[f64],
    bounds: &Bounds,
) -> (Vec<f64>, Vec<String>) {
    let m = p.len();
    let mut flags = Vec::new();
    let dof = n.saturating_sub(m);
    let s2 = if dof > 0 { rss / dof as f64 } else { f64::NAN };
    let svd = jac.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut sig = vec![0.0; m];
    let mut unresolved = vec![false; m];
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if smax == 0.0 || s <= smax * 1e-10 {
            for j in 0..m {
                if v_t[(k, j)].abs() > 1e-3 {
                    unresolved[j] = true;
                }
            }
            continue;
        }
        for j in 0..m {
            sig[j] += (v_t[(k, j)] / s).powi(2);
        }
    }
    // Rows of V^T beyond the rank of a short Jacobian are null directions.
    if jac.nrows() < m {
        unresolved.iter_mut().for_each(|u| *u = true);
    }
    let sigmas = (0..m)
        .map(|j| {
            if unresolved[j] || !s2.is_finite() {
                f64::INFINITY
            } else {
                (sig[j] * s2).sqrt()
            }
        })
        .collect();
    let names: Vec<&str> = (0..m)
        .filter(|&j| unresolved[j] && bounds.at_bound(p, j).is_none())
        .map(|j| model.param_names()[j])
        .collect();
    if !names.is_empty() {
        flags.push(format!("unidentifiable: {}", names.join(", ")));
    }
    (sigmas, flags)
}

/// Largest relative mismatch between the analytic gradient and central
/// finite differences at one parameter point.
pub fn gradient_check<M: Model>(model: &M, xs: &[f64], p: &[f64]) -> f64 {
    let mut g = vec![0.0; p.len()];
    let mut worst: f64 = 0.0;
    for &x in xs {
        model.gradient(x, p, &mut g);
        for j in 0..p.len() {
            let h = 1e-6 * p[j].abs().max(1e-3);
            let mut hi = p.to_vec();
            let mut lo = p.to_vec();
            hi[j] += h;
            lo[j] -= h;
            let fd = (model.eval(x, &hi) - model.eval(x, &lo)) / (2.0 * h);
            let scale = g[j].abs().max(fd.abs()).max(1e-8);
            worst = worst.max((g[j] - fd).abs() / scale);
        }
    }
    worst
}

fn check_inputs(t: &[f64], y: &[f64], min_points: usize) -> Result<()> {
    if t.len() != y.len() {
        return Err(Error::Domain(format!(
            "{} abscissae but {} values",
            t.len(),
            y.len()
        )));
    }
    if t.len() < min_points {
        return Err(Error::Domain(format!(
            "need at least {min_points} points, got {}",
            t.len()
        )));
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite data".into()));
    }
    Ok(())
}

fn check_ascending(t: &[f64]) -> Result<()> {
    if t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("abscissae must be strictly ascending".into()));
    }
    Ok(())
}

fn linear_lsq(columns: &[Vec<f64>], y: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = y.len();
    let m = columns.len();
    let a = DMatrix::from_fn(n, m, |i, j| columns[j][i]);
    let b = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let coef = svd.solve(&b, 1e-12).ok()?;
    let rss = (&a * &coef - &b).norm_squared();
    Some((coef.iter().cloned().collect(), rss))
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64))
        .collect()
}

fn spread(y: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64).sqrt()
}

fn is_flat(y: &[f64]) -> bool {
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    spread(y) <= 1e-12 * scale
}

/// Fits `a + b·exp(−t/T)`.
pub fn fit_exp_decay(t: &[f64], y: &[f64]) -> Result<FitResult> {
    check_inputs(t, y, 4)?;
    check_ascending(t)?;
    let model = ExpDecay;
    let span = t[t.len() - 1] - t[0];
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    if is_flat(y) {
        return Ok(degenerate(
            &model,
            vec![mean, 0.0, span],
            y,
            "unidentifiable: T",
        ));
    }
    let mut candidates = log_grid(span / 50.0, span * 50.0, 41);
    // Log-linear estimate on data detrended by the tail value.
    let tail = y[y.len() - 1];
    let (lx, ly): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(y)
        .filter(|(_, &v)| (v - tail).abs() > 1e-12)
        .map(|(&ti, &v)| (ti, (v - tail).abs().ln()))
        .unzip();
    if lx.len() >= 2 {
        if let Some((c, _)) = linear_lsq(&[vec![1.0; lx.len()], lx.clone()], &ly) {
            if c[1] < 0.0 {
                candidates.push(-1.0 / c[1]);
            }
        }
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for &tau in &candidates {
        let e: Vec<f64> = t.iter().map(|ti| (-ti / tau).exp()).collect();
        if let Some((c, rss)) = linear_lsq(&[vec![1.0; t.len()], e], y) {
            if best.as_ref().is_none_or(|b| rss < b.1) {
                best = Some((vec![c[0], c[1], tau], rss));
            }
        }
    }
    let p0 = best.map(|b| b.0).unwrap_or(vec![mean, 0.0, span]);
    let mut bounds = Bounds::free(3);
    bounds.lower[2] = span * 1e-6;
    let mut fit = levenberg_marquardt(&model, t, y, &p0, &bounds, FitOptions::default());
    if fit.values[1].abs() <= 1e-9 * y.iter().map(|v| v.abs()).fold(0.0, f64::max) {
        push_flag(&mut fit, "unidentifiable: T");
    }
    Ok(fit)
}

fn push_flag(fit: &mut FitResult, flag: &str) {
    if !fit.flags.iter().any(|f| f == flag) {
        fit.flags.push(flag.to_string());
    }
}

fn degenerate<M: Model>(model: &M, p: Vec<f64>, y: &[f64], flag: &str) -> FitResult {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let rss = y.iter().map(|v| (v - mean).powi(2)).sum();
    FitResult {
        model: model.name().to_string(),
        names: model.param_names().iter().map(|s| s.to_string()).collect(),
        units: model.param_units().iter().map(|s| s.to_string()).collect(),
        sigmas: vec![f64::INFINITY; p.len()],
        values: p,
        rss,
        initial_rss: rss,
        gradient_norm: 0.0,
        converged: true,
        iterations: 0,
        flags: vec![flag.to_string()],
    }
}

/// Fits `a + b·cos(2π·Δf·t + φ)·exp(−t/T)`. The frequency is seeded from
/// the dominant peak of an oversampled discrete spectrum.
pub fn fit_damped_cos(t: &[f64], y: &[f64]) -> Result<FitResult> {
    check_inputs(t, y, 8)?;
    check_ascending(t)?;
    let model = DampedCos;
    let n = t.len();
    let span = t[n - 1] - t[0];
    let mean = y.iter().sum::<f64>() / n as f64;
    if is_flat(y) {
        return Ok(degenerate(
            &model,
            vec![mean, 0.0, 0.0, 0.0, span],
            y,
            "unidentifiable: df, phi, T",
        ));
    }
    let mut steps: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    steps.sort_by(f64::total_cmp);
    let dt = steps[steps.len() / 2];
    let nyquist = 0.5 / dt;
    let df = 1.0 / (8.0 * span);
    let centered: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let mut peak = (0.0, -1.0);
    let mut f = df;
    while f <= nyquist * (1.0 + 1e-9) {
        let w = 2.0 * std::f64::consts::PI * f;
        let (mut c, mut s) = (0.0, 0.0);
        for (ti, yi) in t.iter().zip(&centered) {
            c += yi * (w * ti).cos();
            s += yi * (w * ti).sin();
        }
        let power = c * c + s * s;
        if power > peak.1 {
            peak = (f, power);
        }
        f += df;
    }
    let f0 = peak.0;
    if f0 > 0.95 * nyquist {
        return Err(Error::Aliasing(format!(
            "dominant frequency {f0:.4} MHz sits at the Nyquist limit {nyquist:.4} MHz"
        )));
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for &tau in &log_grid(span / 10.0, span * 1000.0, 13) {
        for k in -4..=4 {
            let fk = f0 + k as f64 * df / 4.0;
            if fk <= 0.0 {
                continue;
            }
            let w = 2.0 * std::f64::consts::PI * fk;
            let ce: Vec<f64> = t
                .iter()
                .map(|ti| (w * ti).cos() * (-ti / tau).exp())
                .collect();
            let se: Vec<f64> = t
                .iter()
                .map(|ti| (w * ti).sin() * (-ti / tau).exp())
                .collect();
            if let Some((c, rss)) = linear_lsq(&[vec![1.0; n], ce, se], y) {
                if best.as_ref().is_none_or(|b| rss < b.1) {
                    let amp = c[1].hypot(c[2]);
                    let phi = (-c[2]).atan2(c[1]);
                    best = Some((vec![c[0], amp, fk, phi, tau], rss));
                }
            }
        }
    }
    let p0 = best
        .map(|b| b.0)
        .unwrap_or(vec![mean, spread(y), f0, 0.0, span]);
    let mut bounds = Bounds::free(5);
    bounds.lower[4] = span * 1e-6;
    let mut fit = levenberg_marquardt(&model, t, y, &p0, &bounds, FitOptions::default());
    normalize_oscillation(&mut fit.values);
    if fit.values[2] >= nyquist {
        return Err(Error::Aliasing(format!(
            "fitted frequency {:.4} MHz exceeds the Nyquist limit {nyquist:.4} MHz",
            fit.values[2]
        )));
    }
    if fit.values[2] * span < 1.0 {
        push_flag(&mut fit, "fewer than one period in the sampled span");
    }
    let noise = (fit.rss / n as f64).sqrt();
    if fit.values[1] <= 1e-9 * y.iter().map(|v| v.abs()).fold(0.0, f64::max)
        || fit.values[1] < noise * 1e-3
    {
        push_flag(&mut fit, "unidentifiable: df");
    }
    Ok(fit)
}

fn normalize_oscillation(p: &mut [f64]) {
    use std::f64::consts::PI;
    if p[1] < 0.0 {
        p[1] = -p[1];
        p[3] += PI;
    }
    if p[2] < 0.0 {
        p[2] = -p[2];
        p[3] = -p[3];
    }
    p[3] = (p[3] + PI).rem_euclid(2.0 * PI) - PI;
}

/// Default half-width (MHz) of the excluded window around zero detuning.
pub const DEFAULT_ANTICROSSING_GUARD: f64 = 1.0;

/// Fits `A·J²/(B·Δ) + C` for `J` and `C`. `A` and `J²` enter only as a
/// product, as do `A` and `1/B`, so both are held at unit magnitude; `A`
/// takes the sign of the observed curvature so that the reported `J` is
/// positive either way.
pub fn fit_anticrossing(delta: &[f64], dfac: &[f64]) -> Result<FitResult> {
    fit_anticrossing_guarded(delta, dfac, DEFAULT_ANTICROSSING_GUARD)
}

pub fn fit_anticrossing_guarded(delta: &[f64], dfac: &[f64], guard: f64) -> Result<FitResult> {
    check_inputs(delta, dfac, 3)?;
    if let Some(d) = delta.iter().find(|d| d.abs() < guard) {
        return Err(Error::NearResonance(format!(
            "detuning {d} MHz lies inside the {guard} MHz guard window"
        )));
    }
    let inv: Vec<f64> = delta.iter().map(|d| 1.0 / d).collect();
    let (c, _) = linear_lsq(&[inv, vec![1.0; delta.len()]], dfac)
        .ok_or_else(|| Error::Fit("degenerate detuning grid".into()))?;
    let slope = c[0];
    let sign = if slope < 0.0 { -1.0 } else { 1.0 };
    let model = Anticrossing { a: sign, b: 1.0 };
    let p0 = [slope.abs().sqrt(), c[1]];
    let mut bounds = Bounds::free(2);
    bounds.lower[0] = 0.0;
    let mut fit = levenberg_marquardt(&model, delta, dfac, &p0, &bounds, FitOptions::default());
    fit.names = vec!["A".into(), "J".into(), "C".into()];
    fit.units = vec!["".into(), "MHz".into(), "MHz".into()];
    fit.values.insert(0, sign);
    fit.sigmas.insert(0, 0.0);
    fit.flags.retain(|f| !f.starts_with("unidentifiable"));
    if fit.values[1] == 0.0 {
        push_flag(&mut fit, "no level repulsion resolved");
    }
    if sign < 0.0 {
        push_flag(&mut fit, "curvature sign opposite to level repulsion");
    }
    Ok(fit)
}

/// Fits `A·p^m + B` with `p ∈ (0, 1]`. `asymptote` seeds `B` (1/2 for one
/// qubit, 1/4 for two).
pub fn fit_rb_decay(m: &[f64], s: &[f64], asymptote: f64) -> Result<FitResult> {
    check_inputs(m, s, 3)?;
    check_ascending(m)?;
    if s.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain(
            "survival probabilities must lie in [0, 1]".into(),
        ));
    }
    let model = RbDecay;
    let b0 = asymptote;
    let (lx, ly): (Vec<f64>, Vec<f64>) = m
        .iter()
        .zip(s)
        .filter(|(_, &v)| v - b0 > 1e-9)
        .map(|(&mi, &v)| (mi, (v - b0).ln()))
        .unzip();
    let mut p0 = 0.99;
    if lx.len() >= 2 {
        if let Some((c, _)) = linear_lsq(&[vec![1.0; lx.len()], lx.clone()], &ly) {
            p0 = c[1].exp().clamp(1e-6, 1.0);
        }
    }
    let a0 = ((s[0] - b0) / p0.powf(m[0])).clamp(0.0, 1.0);
    // Amplitude and asymptote are probabilities.
    let bounds = Bounds {
        lower: vec![0.0, 1e-12, 0.0],
        upper: vec![1.0, 1.0, 1.0],
    };
    let mut fit = levenberg_marquardt(&model, m, s, &[a0, p0, b0], &bounds, FitOptions::default());
    if fit.values[1] >= 1.0 {
        push_flag(&mut fit, "p at upper bound 1");
    } else if fit.values[1] <= 1e-12 {
        push_flag(&mut fit, "p at lower bound");
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize, end: f64) -> Vec<f64> {
        (0..n).map(|i| end * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn exp_decay_exact() {
        let t = grid(60, 300.0);
        let y: Vec<f64> = t.iter().map(|ti| 0.1 + 0.9 * (-ti / 71.0).exp()).collect();
        let f = fit_exp_decay(&t, &y).unwrap();
        assert!(f.converged);
        assert!((f.value("T").unwrap() - 71.0).abs() < 71e-6);
        assert!((f.value("a").unwrap() - 0.1).abs() < 1e-6);
        assert!((f.value("b").unwrap() - 0.9).abs() < 1e-6);
        assert!(f.rss <= f.initial_rss);
    }

    #[test]
    fn exp_decay_constant_data_flagged() {
        let t = grid(20, 10.0);
        let y = vec![0.37; 20];
        let f = fit_exp_decay(&t, &y).unwrap();
        assert!(f.flags.iter().any(|s| s.contains("unidentifiable")));
        assert!((f.value("a").unwrap() - 0.37).abs() < 1e-12);
        assert!(f.value("b").unwrap().abs() < 1e-12);
    }

    #[test]
    fn damped_cos_exact() {
        let t = grid(201, 10.0);
        let y: Vec<f64> = t
            .iter()
            .map(|ti| 0.5 + 0.45 * (2.0 * PI * 1.0 * ti + 0.3).cos() * (-ti / 51.0).exp())
            .collect();
        let f = fit_damped_cos(&t, &y).unwrap();
        assert!(f.converged, "{f:?}");
        assert!((f.value("df").unwrap() - 1.0).abs() < 1e-2);
        assert!((f.value("T").unwrap() - 51.0).abs() < 0.51);
        assert!((f.value("phi").unwrap() - 0.3).abs() < 1e-6);
    }

    #[test]
    fn damped_cos_phase_wraps() {
        let t = grid(101, 5.0);
        let y: Vec<f64> = t
            .iter()
            .map(|ti| 0.5 + 0.4 * (2.0 * PI * 0.8 * ti + 3.0).cos() * (-ti / 20.0).exp())
            .collect();
        let f = fit_damped_cos(&t, &y).unwrap();
        let phi = f.value("phi").unwrap();
        assert!(phi > -PI && phi <= PI);
        assert!(((phi - 3.0 + PI).rem_euclid(2.0 * PI) - PI).abs() < 1e-6);
    }

    #[test]
    fn damped_cos_flat_and_aliased() {
        let t = grid(30, 3.0);
        let f = fit_damped_cos(&t, &vec![0.5; 30]).unwrap();
        assert!(f.flags.iter().any(|s| s.contains("df")));
        let y: Vec<f64> = t.iter().map(|ti| (2.0 * PI * 4.9 * ti).cos()).collect();
        assert!(matches!(fit_damped_cos(&t, &y), Err(Error::Aliasing(_))));
    }

    #[test]
    fn anticrossing_recovery() {
        let d: Vec<f64> = [-12.0, -9.0, -6.0, -4.0, -3.0, 3.0, 4.0, 6.0, 9.0, 12.0].to_vec();
        let y: Vec<f64> = d.iter().map(|x| 0.654f64.powi(2) / x + 0.02).collect();
        let f = fit_anticrossing(&d, &y).unwrap();
        assert!((f.value("J").unwrap() - 0.654).abs() < 1e-6);
        assert!((f.value("C").unwrap() - 0.02).abs() < 1e-9);
        let flat = fit_anticrossing(&d, &vec![0.1; d.len()]).unwrap();
        assert!(flat.value("J").unwrap() < 1e-6);
        assert!((flat.value("C").unwrap() - 0.1).abs() < 1e-9);
        assert!(matches!(
            fit_anticrossing(&[0.5, 2.0, 3.0], &[1.0, 2.0, 3.0]),
            Err(Error::NearResonance(_))
        ));
    }

    #[test]
    fn rb_decay_cases() {
        let m: Vec<f64> = [2.0, 25.0, 50.0, 100.0, 250.0, 500.0, 750.0, 1000.0].to_vec();
        let s: Vec<f64> = m.iter().map(|k| 0.5 * 0.9988f64.powf(*k) + 0.5).collect();
        let f = fit_rb_decay(&m, &s, 0.5).unwrap();
        assert!((f.value("p").unwrap() - 0.9988).abs() < 1e-4);
        let ones = vec![1.0; m.len()];
        let f = fit_rb_decay(&m, &ones, 0.5).unwrap();
        assert_eq!(f.value("p").unwrap(), 1.0);
        assert!(f.flags.iter().any(|s| s.contains("bound")));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let xs = [0.3, 1.7, 4.0, 9.5];
        assert!(gradient_check(&ExpDecay, &xs, &[0.1, 0.8, 5.0]) < 1e-6);
        assert!(gradient_check(&DampedCos, &xs, &[0.5, 0.4, 0.7, 0.2, 12.0]) < 1e-6);
        assert!(gradient_check(&Anticrossing::default(), &xs, &[0.6, 0.01]) < 1e-6);
        assert!(gradient_check(&RbDecay, &[2.0, 10.0, 50.0], &[0.5, 0.99, 0.5]) < 1e-6);
    }
}
