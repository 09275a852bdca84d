//! Amplitude-to-shift calibration of an off-resonant (AC-Stark) tone.
//!
//! In the frame of a single tone the driven transmon is static:
//! `H = Σ_n [Δ_s·n + (α/2)·n(n−1)] |n⟩⟨n| + (Ω/2)(a + a†)` with
//! `Δ_s = ω − ω_d`. The shifted transition is `Ẽ₁ − Ẽ₀ − Δ_s` above the bare
//! qubit frequency, where `Ẽ₀, Ẽ₁` are the dressed states continuously
//! connected to `|0⟩, |1⟩`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::device::TransmonParams;
use crate::error::{Error, Result};
use crate::spectrum::DEFAULT_LABEL_THRESHOLD;

fn drive_frame_matrix(alpha: f64, amplitude: f64, detuning: f64, levels: usize) -> DMatrix<C64> {
    let mut m = DMatrix::<C64>::zeros(levels, levels);
    for n in 0..levels {
        let nf = n as f64;
        m[(n, n)] = C64::new(detuning * nf + 0.5 * alpha * nf * (nf - 1.0), 0.0);
        if n + 1 < levels {
            let v = C64::new(0.5 * amplitude * (nf + 1.0).sqrt(), 0.0);
            m[(n, n + 1)] = v;
            m[(n + 1, n)] = v;
        }
    }
    m
}

/// Frequency shift (MHz) of the 0→1 transition under a tone of Rabi
/// amplitude `amplitude` detuned by `detuning = ω − ω_d`.
pub fn stark_shift(
    params: &TransmonParams,
    amplitude: f64,
    detuning: f64,
    levels: usize,
) -> Result<f64> {
    if levels < 2 {
        return Err(Error::Dimension(format!(
            "need at least 2 levels, got {levels}"
        )));
    }
    if amplitude == 0.0 {
        return Ok(0.0);
    }
    if detuning == 0.0 {
        return Err(Error::NearResonance(
            "Stark tone on resonance with the qubit".into(),
        ));
    }
    let eig = nalgebra::SymmetricEigen::new(drive_frame_matrix(
        params.alpha,
        amplitude,
        detuning,
        levels,
    ));
    let pick = |bare: usize| -> Result<f64> {
        let (best, ov) = (0..levels)
            .map(|c| (c, eig.eigenvectors[(bare, c)].norm_sqr()))
            .fold((0, -1.0), |a, x| if x.1 > a.1 { x } else { a });
        if ov < DEFAULT_LABEL_THRESHOLD {
            return Err(Error::Uncalibratable(format!(
                "level {bare} is strongly hybridized by the tone (overlap {ov:.3})"
            )));
        }
        Ok(eig.eigenvalues[best])
    };
    Ok(pick(1)? - pick(0)? - detuning)
}

/// Smallest amplitude whose Stark shift equals `target_shift`, found by
/// bracketing and bisection.
pub fn stark_amplitude_for_shift(
    params: &TransmonParams,
    target_shift: f64,
    detuning: f64,
    levels: usize,
) -> Result<f64> {
    if target_shift == 0.0 {
        return Ok(0.0);
    }
    // A tone above the qubit (ω − ω_d < 0) pushes it down, so the shift carries the sign of the detuning.
    if target_shift.signum() != detuning.signum() {
        return Err(Error::Uncalibratable(format!(
            "a tone detuned by {detuning} MHz cannot shift the qubit by {target_shift} MHz"
        )));
    }
    let f =
        |amp: f64| stark_shift(params, amp, detuning, levels).map(|s| s.abs() - target_shift.abs());
    let mut hi = (2.0 * target_shift.abs() * detuning.abs()).sqrt().max(1e-6);
    let mut lo = 0.0;
    let mut steps = 0;
    while f(hi)? < 0.0 {
        lo = hi;
        hi *= 1.5;
        steps += 1;
        if steps > 60 {
            return Err(Error::Uncalibratable(format!(
                "no amplitude reaches {target_shift} MHz"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q() -> TransmonParams {
        TransmonParams::from_omega_alpha("A", 4807.5, -196.2, 61.0, 44.0, 102.0).unwrap()
    }

    #[test]
    fn weak_tone_matches_two_level_limit() {
        let mut p = q();
        // Far from the two-photon pole the two-level result −Ω²/(2·(ω_d−ω)) is
        // corrected by the |2⟩ level; with 2 levels it is exact up to O(Ω⁴).
        let s = stark_shift(&p, 5.0, -300.0, 2).unwrap();
        let two_level = 0.5 * ((300.0f64).powi(2) + 25.0).sqrt() - 150.0;
        assert!((s + 2.0 * two_level).abs() < 1e-9, "{s}");
        p.alpha = -196.2;
        assert!(stark_shift(&p, 5.0, -300.0, 4).unwrap() < 0.0);
        assert_eq!(stark_shift(&p, 0.0, -300.0, 4).unwrap(), 0.0);
    }

    #[test]
    fn calibration_inverts_shift() {
        let p = q();
        let amp = stark_amplitude_for_shift(&p, -11.9, -300.0, 4).unwrap();
        let s = stark_shift(&p, amp, -300.0, 4).unwrap();
        assert!((s + 11.9).abs() < 1e-9);
        assert!(stark_amplitude_for_shift(&p, 5.0, -300.0, 4).is_err());
    }
}
