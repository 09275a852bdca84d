//! Adaptive Dormand–Prince 5(4) integration of complex linear ODEs.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Step-size control settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on accepted plus rejected steps for one call.
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            rtol: 1e-8,
            atol: 1e-10,
            max_steps: 20_000_000,
        }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `dy/dt = f(t, y)` from `t0`, returning `y` at every time in
/// `outputs` (ascending, each `≥ t0`). The solver also lands exactly on every
/// time in `breakpoints`, where the right-hand side may be discontinuous.
pub fn integrate<F>(
    mut f: F,
    t0: f64,
    y0: &[C64],
    outputs: &[f64],
    breakpoints: &[f64],
    opts: IntegratorOptions,
) -> Result<Vec<Vec<C64>>>
where
    F: FnMut(f64, &[C64], &mut [C64]),
{
    if outputs.windows(2).any(|w| w[1] < w[0]) || outputs.first().is_some_and(|&t| t < t0) {
        return Err(Error::Domain(
            "output times must be ascending and not before t0".into(),
        ));
    }
    let n = y0.len();
    let t_end = outputs.last().copied().unwrap_or(t0);
    let mut stops: Vec<f64> = outputs
        .iter()
        .chain(breakpoints.iter().filter(|&&b| b > t0 && b < t_end))
        .copied()
        .collect();
    stops.sort_by(f64::total_cmp);
    stops.dedup();

    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k: Vec<Vec<C64>> = vec![vec![C64::new(0.0, 0.0); n]; 7];
    let mut tmp = vec![C64::new(0.0, 0.0); n];
    let mut y_new = vec![C64::new(0.0, 0.0); n];
    f(t, &y, &mut k[0]);
    let mut h = initial_step(&y, &k[0], t_end - t0);
    let mut steps = 0usize;
    let mut out = Vec::with_capacity(outputs.len());
    let mut next_out = 0usize;
    for &stop in &stops {
        while t < stop {
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::Stiffness { t, h });
            }
            let remaining = stop - t;
            let clipped = h >= remaining;
            let step = if clipped { remaining } else { h };
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for (j, kj) in k.iter().enumerate().take(s) {
                        let a = A[s][j];
                        if a != 0.0 {
                            acc += kj[i] * (step * a);
                        }
                    }
                    tmp[i] = acc;
                }
                if s == 6 {
                    y_new.copy_from_slice(&tmp);
                }
                // Stages at the end of a clipped step see the left limit, since the
                // right-hand side may jump at the stop.
                let ts = if clipped && C[s] == 1.0 {
                    stop.next_down()
                } else {
                    t + C[s] * step
                };
                f(ts, &tmp, &mut k[s]);
            }
            let mut err2 = 0.0;
            for i in 0..n {
                let mut e = C64::new(0.0, 0.0);
                for (j, kj) in k.iter().enumerate() {
                    if E[j] != 0.0 {
                        e += kj[i] * E[j];
                    }
                }
                let sc = opts.atol + opts.rtol * y[i].norm().max(y_new[i].norm());
                err2 += (e.norm() * step / sc).powi(2);
            }
            let err = (err2 / n.max(1) as f64).sqrt();
            if !err.is_finite() {
                h = step * 0.2;
            } else if err <= 1.0 {
                t = if clipped { stop } else { t + step };
                std::mem::swap(&mut y, &mut y_new);
                k.swap(0, 6);
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                // A clipped step says nothing about the natural step size.
                if !clipped || step * factor > h {
                    h = step * factor;
                }
            } else {
                h = step * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            }
            if h <= 1e-15 * t.abs().max(1.0) {
                return Err(Error::Stiffness { t, h });
            }
        }
        f(t, &y, &mut k[0]);
        while next_out < outputs.len() && outputs[next_out] <= t {
            out.push(y.clone());
            next_out += 1;
        }
    }
    while next_out < outputs.len() {
        out.push(y.clone());
        next_out += 1;
    }
    Ok(out)
}

fn initial_step(y: &[C64], dy: &[C64], span: f64) -> f64 {
    let yn = y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let dn = dy.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let guess = if dn > 0.0 {
        0.01 * yn.max(1e-6) / dn
    } else {
        1e-3
    };
    if span > 0.0 {
        guess.min(span)
    } else {
        guess
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_phase() {
        // dy/dt = -i 2π f y
        let f0 = 3.0;
        let ts: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let ys = integrate(
            |_, y, d| d[0] = C64::new(0.0, -2.0 * std::f64::consts::PI * f0) * y[0],
            0.0,
            &[C64::new(1.0, 0.0)],
            &ts,
            &[],
            IntegratorOptions::default(),
        )
        .unwrap();
        for (t, y) in ts.iter().zip(&ys) {
            let exact = C64::from_polar(1.0, -2.0 * std::f64::consts::PI * f0 * t);
            assert!(
                (y[0] - exact).norm() < 1e-7,
                "t={t} err={}",
                (y[0] - exact).norm()
            );
        }
    }

    #[test]
    fn output_at_start_and_breakpoints() {
        let ys = integrate(
            |t, _, d| d[0] = C64::new(if t < 0.5 { 1.0 } else { -1.0 }, 0.0),
            0.0,
            &[C64::new(0.0, 0.0)],
            &[0.0, 1.0],
            &[0.5],
            IntegratorOptions::default(),
        )
        .unwrap();
        assert_eq!(ys[0][0].re, 0.0);
        assert!(ys[1][0].re.abs() < 1e-12, "{}", ys[1][0]);
    }

    #[test]
    fn step_budget_reports_stiffness() {
        let opts = IntegratorOptions {
            max_steps: 10,
            ..Default::default()
        };
        let r = integrate(
            |_, y, d| d[0] = C64::new(0.0, -1e4) * y[0],
            0.0,
            &[C64::new(1.0, 0.0)],
            &[10.0],
            &[],
            opts,
        );
        assert!(matches!(r, Err(Error::Stiffness { .. })));
    }
}
