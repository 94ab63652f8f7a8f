//! Kinematic vehicle model in curvilinear coordinates and its spatial-domain
//! Euler discretization.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::track::Track;

/// `x = [v, d, chi]`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Speed [m/s].
    pub v: f64,
    /// Signed lateral deviation from the reference path [m].
    pub d: f64,
    /// Signed heading deviation [rad].
    pub chi: f64,
}

/// `u = [a_x, kappa]`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// Longitudinal acceleration [m/s²].
    pub a_x: f64,
    /// Path curvature command [1/m].
    pub kappa: f64,
}

/// Derivative of the state with respect to arclength.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialDerivative {
    pub dv: f64,
    pub dd: f64,
    pub dchi: f64,
}

impl VehicleState {
    pub fn new(v: f64, d: f64, chi: f64) -> Self {
        Self { v, d, chi }
    }

    /// Checks the singularity guards of the model at curvature `kappa_ref`.
    pub fn check(&self, kappa_ref: f64) -> Result<()> {
        if !(self.v > 0.0) {
            return Err(Error::Singularity(format!("speed {} is not positive", self.v)));
        }
        if !(self.chi.abs() < FRAC_PI_2) {
            return Err(Error::Singularity(format!(
                "heading deviation {} outside (-pi/2, pi/2)",
                self.chi
            )));
        }
        if !(kappa_ref * self.d < 1.0) {
            return Err(Error::Singularity(format!(
                "kappa_ref * d = {} reaches the path's center of curvature",
                kappa_ref * self.d
            )));
        }
        Ok(())
    }
}

impl ControlInput {
    pub fn new(a_x: f64, kappa: f64) -> Self {
        Self { a_x, kappa }
    }
}

/// `ṡ = v cos(chi) / (1 - kappa_ref d)`
pub(crate) fn progress_rate<T: Scalar>(v: T, d: T, chi: T, kappa_ref: f64) -> T {
    v * chi.cos() / (d * (-kappa_ref) + 1.0)
}

/// Right-hand side of the spatial model `dx/ds = f_c(x, u, s) / ṡ`.
pub(crate) fn spatial_rhs<T: Scalar>(
    v: T,
    d: T,
    chi: T,
    a_x: T,
    kappa: T,
    kappa_ref: f64,
) -> [T; 3] {
    let sdot = progress_rate(v, d, chi, kappa_ref);
    [
        a_x / sdot,
        v * chi.sin() / sdot,
        (v * kappa - sdot * kappa_ref) / sdot,
    ]
}

/// Travel time over one spatial step, `Δt = h / ṡ`.
pub(crate) fn step_time<T: Scalar>(v: T, d: T, chi: T, kappa_ref: f64, h: f64) -> T {
    (d * (-kappa_ref) + 1.0) * h / (v * chi.cos())
}

pub fn progress_velocity(state: &VehicleState, kappa_ref: f64) -> Result<f64> {
    state.check(kappa_ref)?;
    Ok(progress_rate(state.v, state.d, state.chi, kappa_ref))
}

pub fn spatial_derivative(
    state: &VehicleState,
    input: &ControlInput,
    kappa_ref: f64,
) -> Result<SpatialDerivative> {
    state.check(kappa_ref)?;
    let [dv, dd, dchi] = spatial_rhs(
        state.v,
        state.d,
        state.chi,
        input.a_x,
        input.kappa,
        kappa_ref,
    );
    Ok(SpatialDerivative { dv, dd, dchi })
}

/// Explicit Euler step over grid interval `k` of the track.
pub fn euler_step(
    state: &VehicleState,
    input: &ControlInput,
    k: usize,
    track: &Track,
) -> Result<VehicleState> {
    let h = track.step_length(k)?;
    euler_step_with(state, input, track.kappa_ref()[k], h)
}

pub(crate) fn euler_step_with(
    state: &VehicleState,
    input: &ControlInput,
    kappa_ref: f64,
    h: f64,
) -> Result<VehicleState> {
    let der = spatial_derivative(state, input, kappa_ref)?;
    let next = VehicleState {
        v: state.v + der.dv * h,
        d: state.d + der.dd * h,
        chi: state.chi + der.dchi * h,
    };
    if !(next.v > 0.0) {
        return Err(Error::InvalidState(format!(
            "Euler step produced non-positive speed {}",
            next.v
        )));
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn st(v: f64, d: f64, chi: f64) -> VehicleState {
        VehicleState::new(v, d, chi)
    }

    #[test]
    fn progress_velocity_examples() {
        assert_eq!(progress_velocity(&st(10.0, 0.0, 0.0), 0.0).unwrap(), 10.0);
        let v = progress_velocity(&st(2.0, 0.0, PI / 3.0), 0.0).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        let v = progress_velocity(&st(10.0, 1.0, 0.0), 0.1).unwrap();
        assert!((v - 10.0 / 0.9).abs() < 1e-12);
    }

    #[test]
    fn progress_velocity_singularities() {
        assert!(matches!(
            progress_velocity(&st(10.0, 10.0, 0.0), 0.1),
            Err(Error::Singularity(_))
        ));
        assert!(progress_velocity(&st(0.0, 0.0, 0.0), 0.0).is_err());
        assert!(progress_velocity(&st(5.0, 0.0, FRAC_PI_2), 0.0).is_err());
    }

    #[test]
    fn spatial_derivative_examples() {
        let z = spatial_derivative(&st(10.0, 0.0, 0.0), &ControlInput::new(0.0, 0.0), 0.0).unwrap();
        assert_eq!((z.dv, z.dd, z.dchi), (0.0, 0.0, 0.0));
        let z =
            spatial_derivative(&st(10.0, 0.0, 0.0), &ControlInput::new(2.0, 0.01), 0.01).unwrap();
        assert!((z.dv - 0.2).abs() < 1e-15);
        assert_eq!(z.dd, 0.0);
        assert!(z.dchi.abs() < 1e-15);
    }

    #[test]
    fn spatial_derivative_matches_direct_formula() {
        // Independent evaluation: time-domain right-hand side divided by ṡ.
        let (v, d, chi, ax, kappa, kr) = (5.0_f64, 0.5_f64, 0.1_f64, 1.0, 0.02, 0.05);
        let sdot = v * chi.cos() / (1.0 - kr * d);
        let f_time = [ax, v * chi.sin(), v * kappa - sdot * kr];
        let z = spatial_derivative(&st(v, d, chi), &ControlInput::new(ax, kappa), kr).unwrap();
        let expect = [f_time[0] / sdot, f_time[1] / sdot, f_time[2] / sdot];
        assert!((z.dv - expect[0]).abs() < 1e-15);
        assert!((z.dd - expect[1]).abs() < 1e-15);
        assert!((z.dchi - expect[2]).abs() < 1e-15);
        // frozen values from an independent float evaluation
        assert!((z.dv - 0.1959790790880888).abs() < 1e-14);
        assert!((z.dd - 0.09782630528331428).abs() < 1e-14);
        assert!((z.dchi + 0.03040209209119112).abs() < 1e-14);
    }

    #[test]
    fn euler_step_examples() {
        let track = Track::straight(10.0, 1.0, 2.0).unwrap();
        let s0 = st(10.0, 0.0, 0.0);
        assert_eq!(euler_step(&s0, &ControlInput::new(0.0, 0.0), 3, &track).unwrap(), s0);
        let s1 = euler_step(&s0, &ControlInput::new(2.0, 0.0), 0, &track).unwrap();
        assert!((s1.v - 10.2).abs() < 1e-12);
        assert_eq!((s1.d, s1.chi), (0.0, 0.0));
        assert!(euler_step(&s0, &ControlInput::new(0.0, 0.0), 10, &track).is_err());
    }

    #[test]
    fn euler_step_rejects_negative_speed() {
        let track = Track::straight(10.0, 5.0, 2.0).unwrap();
        let r = euler_step(&st(1.0, 0.0, 0.0), &ControlInput::new(-4.0, 0.0), 0, &track);
        assert!(matches!(r, Err(Error::InvalidState(_))));
    }

    #[test]
    fn step_halving_is_second_order_locally() {
        // one full step vs two half steps differ by O(h²)
        let x = st(8.0, 0.3, 0.05);
        let u = ControlInput::new(0.7, 0.03);
        let kr = 0.02;
        let mut ratios = vec![];
        for h in [0.4, 0.2, 0.1] {
            let full = euler_step_with(&x, &u, kr, h).unwrap();
            let half = euler_step_with(&x, &u, kr, h / 2.0).unwrap();
            let two = euler_step_with(&half, &u, kr, h / 2.0).unwrap();
            let err = (full.v - two.v).abs().max((full.d - two.d).abs()).max((full.chi - two.chi).abs());
            ratios.push(err / (h * h));
        }
        // err / h² approaches a constant
        assert!((ratios[2] / ratios[1] - 1.0).abs() < 0.1);
        assert!((ratios[1] / ratios[0] - 1.0).abs() < 0.2);
    }

    #[test]
    fn global_error_decreases_linearly_under_refinement() {
        // Smooth input profile on a curved road; reference by a very fine grid.
        let kr = 0.02;
        let length = 20.0;
        let integrate = |steps: usize| {
            let h = length / steps as f64;
            let mut x = st(10.0, 0.2, 0.02);
            for i in 0..steps {
                let s = i as f64 * h;
                let u = ControlInput::new(0.5 * (0.2 * s).sin(), 0.02 + 0.005 * (0.1 * s).cos());
                x = euler_step_with(&x, &u, kr, h).unwrap();
            }
            x
        };
        let reference = integrate(200_000);
        let err = |n| {
            let x = integrate(n);
            (x.v - reference.v).abs() + (x.d - reference.d).abs() + (x.chi - reference.chi).abs()
        };
        let (e1, e2, e3) = (err(100), err(200), err(400));
        assert!((e1 / e2 - 2.0).abs() < 0.15, "{e1} {e2}");
        assert!((e2 / e3 - 2.0).abs() < 0.15, "{e2} {e3}");
    }

    proptest! {
        #[test]
        fn progress_velocity_is_homogeneous_in_speed(
            v in 0.5..30.0f64, d in -2.0..2.0f64, chi in -1.4..1.4f64, kr in -0.1..0.1f64
        ) {
            let a = progress_velocity(&st(v, d, chi), kr).unwrap();
            let b = progress_velocity(&st(2.0 * v, d, chi), kr).unwrap();
            prop_assert!((b - 2.0 * a).abs() <= 1e-12 * b.abs());
        }

        #[test]
        fn heading_rate_vanishes_when_tracking_curvature(
            v in 0.5..30.0f64, d in -2.0..2.0f64, chi in -1.4..1.4f64, kr in -0.1..0.1f64, ax in -3.0..3.0f64
        ) {
            let x = st(v, d, chi);
            let sdot = progress_velocity(&x, kr).unwrap();
            let kappa = sdot * kr / v;
            let z = spatial_derivative(&x, &ControlInput::new(ax, kappa), kr).unwrap();
            prop_assert!(z.dchi.abs() < 1e-12);
        }
    }
}
