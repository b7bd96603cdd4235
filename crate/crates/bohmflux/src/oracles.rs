//! Closed-form ground truth for the three analytically solvable setups:
//! the quadratic pair, the momentum-momentum coupling, and the spin
//! steering drive. These are transcriptions of the known solutions, kept
//! deliberately independent of the numerical pipeline so each can check
//! the other.

use num_complex::Complex64 as C64;

/// Two particles coupled by (X - Y)^2 / 4, started from the isotropic
/// Gaussian pi^(-1/2) exp(-(x^2+y^2)/2). Parameter-free.
///
/// In normal coordinates the center of mass (x+y) spreads freely while the
/// relative coordinate (x-y) sits in its oscillator ground state, so the
/// (1 + i t) spreading factor divides the (x+y)^2 term of the exponent.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticPairOracle;

impl QuadraticPairOracle {
    pub fn a(t: f64) -> f64 {
        ((1.0 + t * t).sqrt() + 1.0) / 2.0
    }

    pub fn b(t: f64) -> f64 {
        ((1.0 + t * t).sqrt() - 1.0) / 2.0
    }

    pub fn c(t: f64) -> f64 {
        -t * t + 4.0 * (t * t + 1.0).sqrt() + std::f64::consts::PI - 4.0
    }

    pub fn d(t: f64) -> f64 {
        t * t + 4.0 * (t * t + 1.0).sqrt() + std::f64::consts::PI - 4.0
    }

    /// Joint wave function Psi(x, y, t).
    pub fn psi(x: f64, y: f64, t: f64) -> C64 {
        let one_it = C64::new(1.0, t);
        let pref = (C64::new(std::f64::consts::PI, 0.0) * one_it).sqrt().inv();
        let expo = -0.25
            * (C64::new((x + y) * (x + y), 0.0) / one_it
                + C64::new((x - y) * (x - y), 0.0)
                + C64::new(0.0, 2.0 * t));
        pref * expo.exp()
    }

    /// Environment trajectory Y(t | x0, y0) = b(t) x0 + a(t) y0.
    pub fn y_t(t: f64, x0: f64, y0: f64) -> f64 {
        Self::b(t) * x0 + Self::a(t) * y0
    }

    /// System trajectory (the roles of a and b swap by symmetry).
    pub fn x_t(t: f64, x0: f64, y0: f64) -> f64 {
        Self::a(t) * x0 + Self::b(t) * y0
    }

    /// dY/dt along the trajectory.
    pub fn y_dot(t: f64, x0: f64, y0: f64) -> f64 {
        (x0 + y0) * t / (2.0 * (1.0 + t * t).sqrt())
    }

    /// Unnormalized conditional wave function: the slice of `psi` along the
    /// environment trajectory.
    pub fn cwf(x: f64, t: f64, x0: f64, y0: f64) -> C64 {
        Self::psi(x, Self::y_t(t, x0, y0), t)
    }

    /// Conditional energy u(t | Y_t).
    pub fn u(t: f64, y: f64) -> f64 {
        0.375 + t * t * y * y / (4.0 * t * t + 8.0)
    }

    /// Total conditional energy rate du/dt.
    pub fn du(t: f64, y: f64, ydot: f64) -> f64 {
        let q = t * t + 2.0;
        t * y * (t * q * ydot + 2.0 * y) / (2.0 * q * q)
    }

    /// Interaction contribution to du/dt.
    pub fn du_int(t: f64, y: f64) -> f64 {
        t * y * y / (2.0 * (2.0 + t * t))
    }

    /// Entanglement contribution to du/dt.
    pub fn du_ent(t: f64, y: f64, ydot: f64) -> f64 {
        let q = t * t + 2.0;
        t * t * y * (q * ydot - t * y) / (2.0 * q * q)
    }

    /// Cumulative interaction contribution Delta u_int(t | x0, y0).
    pub fn cum_int(t: f64, x0: f64, y0: f64) -> f64 {
        let q = t * t + 2.0;
        (4.0 * (x0 * x0 - y0 * y0) * (t * t + 1.0).sqrt().atan()
            - (x0 + y0) * (Self::c(t) * x0 - Self::d(t) * y0)
            + 4.0 * x0 * y0 * (2.0 / q).ln())
            / 16.0
    }

    /// Delta u(t | x0, y0) = u(t) - u(0) along the trajectory.
    pub fn delta_u(t: f64, x0: f64, y0: f64) -> f64 {
        Self::u(t, Self::y_t(t, x0, y0)) - 0.375
    }

    /// Cumulative entanglement contribution, defined by closure.
    pub fn cum_ent(t: f64, x0: f64, y0: f64) -> f64 {
        Self::delta_u(t, x0, y0) - Self::cum_int(t, x0, y0)
    }

    /// Ensemble mean of Delta u (equal to the mean of Delta u_int).
    pub fn mean_delta_u(t: f64) -> f64 {
        t * t / 16.0
    }
}

/// H_int = -lambda P_X P_Y dominating the evolution, same initial Gaussian.
///
/// The stated interaction generates the phase exp(-i lambda x y t / f) on
/// the spreading Gaussian; all density-derived quantities only see f(t).
#[derive(Debug, Clone, Copy)]
pub struct PPCouplingOracle {
    pub lambda: f64,
}

impl PPCouplingOracle {
    pub fn new(lambda: f64) -> Self {
        PPCouplingOracle { lambda }
    }

    pub fn f(&self, t: f64) -> f64 {
        1.0 + self.lambda * self.lambda * t * t
    }

    /// Joint wave function under the interaction alone.
    pub fn psi(&self, x: f64, y: f64, t: f64) -> C64 {
        let f = self.f(t);
        let pref = 1.0 / (std::f64::consts::PI * f).sqrt();
        let expo = C64::new(-(x * x + y * y) / (2.0 * f), -self.lambda * x * y * t / f);
        pref * expo.exp()
    }

    /// Conditional energy at time t given an environment configuration y.
    pub fn u_of_y(&self, t: f64, y: f64) -> f64 {
        let f = self.f(t);
        let lt2 = (self.lambda * t).powi(2);
        (lt2 * (2.0 * y * y + 1.0) + 1.0) / (4.0 * f * f)
    }

    /// Positional kernel of the interaction part of the conditional
    /// density-operator rate, (2 lambda t / (pi f^3)) e^{-(x^2+y^2)/f}
    /// (x^2 + y^2 - f).
    pub fn slice_rate(&self, x: f64, y: f64, t: f64) -> f64 {
        let f = self.f(t);
        2.0 * self.lambda * t / (std::f64::consts::PI * f.powi(3))
            * (-(x * x + y * y) / f).exp()
            * (x * x + y * y - f)
    }

    /// Ensemble-average entanglement flow rate lambda^3 t^3 / (2 f^2).
    pub fn avg_ent_rate(&self, t: f64) -> f64 {
        (self.lambda * t).powi(3) / (2.0 * self.f(t) * self.f(t))
    }
}

/// Entangled spin-1/2 pair steered by the conditional displacement drive;
/// the drive duration is assumed short enough that free spreading is
/// negligible, and the displaced packet moves toward +y.
#[derive(Debug, Clone, Copy)]
pub struct SpinSteeringOracle {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub k: f64,
    pub v: f64,
    pub mass: f64,
}

impl SpinSteeringOracle {
    pub fn new(sigma_x: f64, sigma_y: f64, k: f64, v: f64, mass: f64) -> Self {
        SpinSteeringOracle {
            sigma_x,
            sigma_y,
            k,
            v,
            mass,
        }
    }

    pub fn f_x(&self, x: f64) -> f64 {
        (2.0 * std::f64::consts::PI * self.sigma_x * self.sigma_x).powf(-0.25)
            * (-x * x / (4.0 * self.sigma_x * self.sigma_x)).exp()
    }

    pub fn g_y(&self, y: f64) -> f64 {
        (2.0 * std::f64::consts::PI * self.sigma_y * self.sigma_y).powf(-0.25)
            * (-y * y / (4.0 * self.sigma_y * self.sigma_y)).exp()
    }

    /// Rest energy of the unboosted packet.
    pub fn e0(&self) -> f64 {
        1.0 / (8.0 * self.mass * self.sigma_x * self.sigma_x)
    }

    /// Kinetic-energy gap between the boosted and unboosted packets.
    pub fn gap(&self) -> f64 {
        self.k * self.k / (2.0 * self.mass)
    }

    /// Environment velocity field v_y(y, t) during the drive.
    pub fn vy(&self, y: f64, t: f64) -> f64 {
        let up = self.g_y(y - self.v * t).powi(2);
        let down = self.g_y(y).powi(2);
        self.v * up / (up + down)
    }

    /// Conditional energy along an environment trajectory at position y.
    pub fn u(&self, y: f64, t: f64) -> f64 {
        let up = self.g_y(y - self.v * t).powi(2);
        let down = self.g_y(y).powi(2);
        self.e0() + self.gap() * up / (up + down)
    }

    /// Spin-summed configuration density mu(x, y, t).
    pub fn mu(&self, x: f64, y: f64, t: f64) -> f64 {
        let f2 = self.f_x(x).powi(2);
        f2 * (self.g_y(y - self.v * t).powi(2) + self.g_y(y).powi(2)) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type Qp = QuadraticPairOracle;

    #[test]
    fn trajectory_starts_at_initial_condition() {
        for &(x0, y0) in &[(1.0, 0.0), (-0.3, 0.8), (2.0, -2.0)] {
            assert_eq!(Qp::y_t(0.0, x0, y0), y0);
            assert_eq!(Qp::x_t(0.0, x0, y0), x0);
        }
    }

    #[test]
    fn conditional_energy_starts_at_three_eighths() {
        for y in [-2.0, 0.0, 1.3] {
            assert_eq!(Qp::u(0.0, y), 0.375);
        }
        // evaluated value at t = 2, Y = 1
        assert!((Qp::u(2.0, 1.0) - (0.375 + 4.0 / 24.0)).abs() < 1e-15);
    }

    #[test]
    fn flow_terms_close_algebraically() {
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..10_000 {
            let t = 3.0 * next();
            let y = 4.0 * next() - 2.0;
            let ydot = 2.0 * next() - 1.0;
            let total = Qp::du(t, y, ydot);
            let sum = Qp::du_int(t, y) + Qp::du_ent(t, y, ydot);
            assert!(
                (total - sum).abs() <= 1e-12 * (1.0 + total.abs()),
                "closure violated at t={t}, y={y}: {total} vs {sum}"
            );
        }
    }

    #[test]
    fn cumulative_interaction_value_at_probe() {
        // t = 2, (x0, y0) = (1, 1): (1/16)[16 + 4 ln(1/3)]
        let want = (16.0 + 4.0 * (1.0f64 / 3.0).ln()) / 16.0;
        let got = Qp::cum_int(2.0, 1.0, 1.0);
        assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        assert!((got - 0.7253).abs() < 1e-3);
        // and it vanishes at t = 0
        assert!(Qp::cum_int(0.0, 0.7, -1.1).abs() < 1e-14);
    }

    #[test]
    fn cumulative_interaction_is_integral_of_rate() {
        // Gauss-Legendre quadrature of du_int along the oracle trajectory
        let gl_nodes = [
            -0.9894009349916499,
            -0.9445750230732326,
            -0.8656312023878318,
            -0.755404408355003,
            -0.6178762444026438,
            -0.45801677765722737,
            -0.2816035507792589,
            -0.09501250983763744,
            0.09501250983763744,
            0.2816035507792589,
            0.45801677765722737,
            0.6178762444026438,
            0.755404408355003,
            0.8656312023878318,
            0.9445750230732326,
            0.9894009349916499,
        ];
        let gl_weights = [
            0.027152459411754096,
            0.06225352393864789,
            0.09515851168249279,
            0.12462897125553388,
            0.14959598881657674,
            0.16915651939500254,
            0.18260341504492358,
            0.1894506104550685,
            0.1894506104550685,
            0.18260341504492358,
            0.16915651939500254,
            0.14959598881657674,
            0.12462897125553388,
            0.09515851168249279,
            0.06225352393864789,
            0.027152459411754096,
        ];
        for &(x0, y0) in &[(1.0, 1.0), (0.5, -1.2), (-0.8, 0.3)] {
            for &t in &[0.5, 1.5, 3.0] {
                // composite over 8 panels to keep the integrand resolved
                let mut total = 0.0;
                let panels = 8;
                for p in 0..panels {
                    let a = t * p as f64 / panels as f64;
                    let b = t * (p + 1) as f64 / panels as f64;
                    let (half, mid) = ((b - a) / 2.0, (a + b) / 2.0);
                    for (n, w) in gl_nodes.iter().zip(gl_weights.iter()) {
                        let s = mid + half * n;
                        total += w * half * Qp::du_int(s, Qp::y_t(s, x0, y0));
                    }
                }
                let want = Qp::cum_int(t, x0, y0);
                assert!(
                    (total - want).abs() < 1e-10,
                    "cum_int mismatch at t={t}, ({x0},{y0}): {total} vs {want}"
                );
            }
        }
    }

    #[test]
    fn pp_conditional_energy_at_t0_is_quarter() {
        let pp = PPCouplingOracle::new(7.0);
        for y in [-3.0, 0.0, 2.5] {
            assert_eq!(pp.u_of_y(0.0, y), 0.25);
        }
    }

    #[test]
    fn pp_avg_rate_at_unit_lambda_t() {
        // lambda t = 1 means f = 2 and rate 1/8
        for lambda in [1.0, 10.0] {
            let pp = PPCouplingOracle::new(lambda);
            assert!((pp.avg_ent_rate(1.0 / lambda) - 0.125).abs() < 1e-14);
        }
    }

    #[test]
    fn steering_energy_is_midway_at_t0_and_splits_later() {
        let ss = SpinSteeringOracle::new(1.0, 1.0, 2.0, 12.0, 1.0);
        let (e0, gap) = (ss.e0(), ss.gap());
        assert!((e0 - 0.125).abs() < 1e-15);
        assert!((gap - 2.0).abs() < 1e-15);
        for y in [-1.0, 0.0, 2.0] {
            assert!((ss.u(y, 0.0) - (e0 + gap / 2.0)).abs() < 1e-12);
        }
        // after separation (v t = 6 sigma) the branches pin to e0 or
        // e0 + gap up to the e^{-18} tail overlap
        let t_end = 0.5;
        assert!((ss.u(ss.v * t_end, t_end) - (e0 + gap)).abs() < 1e-7);
        assert!((ss.u(0.0, t_end) - e0).abs() < 1e-7);
    }

    #[test]
    fn steering_velocity_limits() {
        let ss = SpinSteeringOracle::new(1.0, 1.0, 2.0, 12.0, 1.0);
        let t = 0.4;
        // deep inside the moving packet the velocity approaches v
        assert!((ss.vy(ss.v * t, t) - ss.v).abs() < 1e-4 * ss.v);
        // deep in the static packet's far tail it approaches 0
        assert!(ss.vy(-3.0, t).abs() < 1e-9);
    }
}
