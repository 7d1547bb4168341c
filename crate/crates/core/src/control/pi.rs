use serde::{Deserialize, Serialize};

/// Secondary PI gains. `delta_f` in, `δf` out, both in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiParams {
    pub kp: f64,
    /// Integral gain, 1/s.
    pub ki: f64,
    /// Symmetric output limit, Hz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp_hz: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PiState {
    /// Accumulated error, Hz·s.
    pub integral: f64,
    pub output: f64,
}

/// One forward-Euler PI update over `dt` seconds.
///
/// With a clamp configured, the integrator is frozen whenever the output is
/// saturated and the error would push it further into saturation.
pub fn pi_step(delta_f: f64, dt: f64, params: &PiParams, state: &mut PiState) -> f64 {
    debug_assert!(dt > 0.0);
    let candidate = state.integral + delta_f * dt;
    let raw = params.kp * delta_f + params.ki * candidate;
    match params.clamp_hz {
        Some(c) if raw.abs() > c && raw.signum() == delta_f.signum() => {
            state.output = raw.clamp(-c, c);
        }
        Some(c) => {
            state.integral = candidate;
            state.output = raw.clamp(-c, c);
        }
        None => {
            state.integral = candidate;
            state.output = raw;
        }
    }
    state.output
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(kp: f64, ki: f64, clamp: Option<f64>) -> PiParams {
        PiParams {
            kp,
            ki,
            clamp_hz: clamp,
        }
    }

    #[test]
    fn zero_error_gives_zero_output() {
        let p = params(0.3, 2.0, None);
        let mut s = PiState::default();
        for _ in 0..100 {
            assert_eq!(pi_step(0.0, 0.1, &p, &mut s), 0.0);
        }
    }

    #[test]
    fn pure_integrator_ramps() {
        let p = params(0.0, 1.0, None);
        let mut s = PiState::default();
        let dt = 0.1;
        for k in 1..=50 {
            let y = pi_step(0.2, dt, &p, &mut s);
            assert!((y - 0.2 * k as f64 * dt).abs() < 1e-12);
        }
    }

    #[test]
    fn pure_proportional_is_immediate() {
        let p = params(1.0, 0.0, None);
        let mut s = PiState::default();
        assert_eq!(pi_step(0.05, 0.1, &p, &mut s), 0.05);
    }

    #[test]
    fn clamp_recovers_within_one_update_after_sign_change() {
        let p = params(0.2, 1.0, Some(0.5));
        let mut s = PiState::default();
        for _ in 0..1000 {
            let y = pi_step(0.3, 0.1, &p, &mut s);
            assert!(y.abs() <= 0.5);
        }
        assert_eq!(s.output, 0.5);
        let y = pi_step(-0.01, 0.1, &p, &mut s);
        assert!(y < 0.5, "{y}");
    }

    proptest! {
        #[test]
        fn clamped_output_never_exceeds_limit(
            errors in prop::collection::vec(-2.0f64..2.0, 1..300),
            kp in 0.0f64..3.0,
            ki in 0.0f64..5.0,
            c in 0.01f64..1.0,
        ) {
            let p = params(kp, ki, Some(c));
            let mut s = PiState::default();
            for e in errors {
                let y = pi_step(e, 0.1, &p, &mut s);
                prop_assert!(y.abs() <= c);
            }
        }

        #[test]
        fn saturated_output_leaves_limit_after_sign_change(
            kp in 0.0f64..2.0,
            ki in 0.01f64..5.0,
            c in 0.05f64..1.0,
            push in 0.01f64..1.0,
            back in 0.001f64..1.0,
        ) {
            let p = params(kp, ki, Some(c));
            let mut s = PiState::default();
            for _ in 0..2000 {
                pi_step(push, 0.1, &p, &mut s);
            }
            prop_assume!(s.output == c);
            let y = pi_step(-back, 0.1, &p, &mut s);
            prop_assert!(y < c);
        }
    }
}
