//! Declarative Hamiltonian H(t) = H_S(t) + H_E + H_int for two particles in
//! one dimension each: kinetic terms, positional potentials (closed-form
//! expressions), an optional bilinear momentum-momentum coupling
//! -lambda P_X P_Y, and an optional spin-conditioned displacement drive on
//! the environment particle.
//!
//! The S/E/int split is declared, not inferred: the energy-flow
//! decomposition depends on where each term is assigned.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::grid::Grid;
use crate::state::{self, JointWaveFunction, Y_SPIN_UP};

/// Real scalar field over one axis coordinate (and optionally time).
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Field1 {
    #[default]
    Zero,
    Expr(Expr),
}

impl Field1 {
    pub fn parse(src: &str) -> Result<Field1> {
        Ok(Field1::Expr(Expr::parse(src)?))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Field1::Zero)
    }

    pub fn eval(&self, u: f64, t: f64) -> f64 {
        match self {
            Field1::Zero => 0.0,
            // the axis coordinate is bound to both position variables, so a
            // 1D field may be written in terms of either x or y
            Field1::Expr(e) => e.eval(u, u, t),
        }
    }

    pub fn depends_on_t(&self) -> bool {
        match self {
            Field1::Zero => false,
            Field1::Expr(e) => e.depends_on(Var::T),
        }
    }

    pub fn d_dt(&self) -> Result<Field1> {
        match self {
            Field1::Zero => Ok(Field1::Zero),
            Field1::Expr(e) => {
                let d = e.d_dt()?;
                Ok(if d == Expr::Num(0.0) {
                    Field1::Zero
                } else {
                    Field1::Expr(d)
                })
            }
        }
    }
}

/// Real scalar field over both positions and time.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Field2 {
    #[default]
    Zero,
    Expr(Expr),
}

impl Field2 {
    pub fn parse(src: &str) -> Result<Field2> {
        Ok(Field2::Expr(Expr::parse(src)?))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Field2::Zero)
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        match self {
            Field2::Zero => 0.0,
            Field2::Expr(e) => e.eval(x, y, t),
        }
    }

    pub fn depends_on_t(&self) -> bool {
        match self {
            Field2::Zero => false,
            Field2::Expr(e) => e.depends_on(Var::T),
        }
    }
}

/// Spin-conditioned displacement drive
/// U_Y(t) = exp(-i v t P_Y |up_Y><up_Y|) applied for `duration`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpinDrive {
    pub speed: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    /// Mass of the system (X) particle.
    pub mass_x: f64,
    /// Mass of the environment (Y) particle.
    pub mass_y: f64,
    /// V_S(x, t), part of the system Hamiltonian.
    pub v_system: Field1,
    /// V_E(y), static environment potential.
    pub v_env: Field1,
    /// V_int(x, y, t), positional interaction.
    pub v_int: Field2,
    /// lambda in H_int = -lambda P_X P_Y. Mutually exclusive with `v_int`.
    pub p_coupling: f64,
    /// Optional displacement drive on the environment particle's up-spin
    /// components (counts as a time-windowed part of H_E).
    pub spin_drive: Option<SpinDrive>,
    /// Evolve under H_int alone: the strong-coupling idealization where the
    /// interaction dominates the kinetic terms. H_S is still used for the
    /// conditional-energy accounting, and the environment-Hamiltonian part
    /// of the entanglement flow term is dropped consistently.
    pub interaction_only: bool,
}

impl Default for HamiltonianSpec {
    fn default() -> Self {
        HamiltonianSpec {
            mass_x: 1.0,
            mass_y: 1.0,
            v_system: Field1::Zero,
            v_env: Field1::Zero,
            v_int: Field2::Zero,
            p_coupling: 0.0,
            spin_drive: None,
            interaction_only: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HamiltonianPreset {
    /// Two particles coupled by the quadratic potential (x - y)^2 / 4,
    /// split as V_S = x^2/4, V_E = y^2/4, V_int = -x y / 2.
    QuadraticPair,
    /// Bilinear momentum-momentum coupling -lambda P_X P_Y dominating the
    /// evolution; H_S = P_X^2/2 kept for energy accounting.
    PpCoupling,
    /// Entangled spin-1/2 pair steered by a spin-conditioned displacement
    /// of the environment particle; no interaction term.
    SpinSteering,
    /// No couplings at all.
    FreeProduct,
}

/// Free parameters consumed by `expand_preset`; unused ones are ignored.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PresetParams {
    pub lambda: f64,
    pub drive_speed: f64,
    pub drive_duration: f64,
    pub mass: f64,
}

impl Default for PresetParams {
    fn default() -> Self {
        PresetParams {
            lambda: 1.0,
            drive_speed: 6.0,
            drive_duration: 1.0,
            mass: 1.0,
        }
    }
}

pub fn expand_preset(name: HamiltonianPreset, params: PresetParams) -> HamiltonianSpec {
    match name {
        HamiltonianPreset::QuadraticPair => HamiltonianSpec {
            v_system: Field1::parse("x^2/4").unwrap(),
            v_env: Field1::parse("y^2/4").unwrap(),
            v_int: Field2::parse("-x*y/2").unwrap(),
            ..HamiltonianSpec::default()
        },
        HamiltonianPreset::PpCoupling => HamiltonianSpec {
            p_coupling: params.lambda,
            interaction_only: true,
            ..HamiltonianSpec::default()
        },
        HamiltonianPreset::SpinSteering => HamiltonianSpec {
            mass_x: params.mass,
            mass_y: params.mass,
            spin_drive: Some(SpinDrive {
                speed: params.drive_speed,
                duration: params.drive_duration,
            }),
            ..HamiltonianSpec::default()
        },
        HamiltonianPreset::FreeProduct => HamiltonianSpec::default(),
    }
}

impl HamiltonianSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mass_x <= 0.0 || self.mass_y <= 0.0 {
            return Err(Error::config("particle masses must be positive"));
        }
        if !self.v_int.is_zero() && self.p_coupling != 0.0 {
            return Err(Error::config(
                "mixed positional and momentum coupling is not supported; \
                 declare exactly one interaction kind",
            ));
        }
        if let Field1::Expr(e) = &self.v_system {
            if e.depends_on(Var::Y) {
                return Err(Error::config("v_system may depend on x and t only"));
            }
        }
        if let Field1::Expr(e) = &self.v_env {
            if e.depends_on(Var::X) || e.depends_on(Var::T) {
                return Err(Error::config("v_env may depend on y only"));
            }
        }
        if self.interaction_only && self.p_coupling == 0.0 && self.v_int.is_zero() {
            return Err(Error::config(
                "interaction_only requires an interaction term",
            ));
        }
        Ok(())
    }

    pub fn has_momentum_coupling(&self) -> bool {
        self.p_coupling != 0.0
    }

    /// The total positional potential V_S + V_E + V_int tabulated on the
    /// grid at time t.
    pub fn potential_array(&self, grid: &Grid, t: f64) -> Array2<f64> {
        Array2::from_shape_fn((grid.nx, grid.ny), |(i, j)| {
            let (x, y) = (grid.x(i), grid.y(j));
            self.v_system.eval(x, t) + self.v_env.eval(y, t) + self.v_int.eval(x, y, t)
        })
    }

    pub fn potential_depends_on_t(&self) -> bool {
        self.v_system.depends_on_t() || self.v_int.depends_on_t()
    }

    /// dH_S/dt as a field over x (the kinetic part is time-independent).
    pub fn dh_s_dt(&self) -> Result<Field1> {
        self.v_system.d_dt()
    }

    /// The drive window is closed at its endpoint: flow terms evaluated at
    /// t = duration must use the generator that produced the trailing
    /// history (the propagator resolves the switch at step granularity).
    pub fn drive_active(&self, t: f64) -> bool {
        self.spin_drive
            .map(|d| d.speed != 0.0 && t <= d.duration)
            .unwrap_or(false)
    }

    /// Step-level drive gate: a step starting at or after the switch time
    /// is undriven.
    pub fn drive_active_for_step(&self, t_start: f64) -> bool {
        self.spin_drive
            .map(|d| d.speed != 0.0 && t_start < d.duration - 1e-12)
            .unwrap_or(false)
    }

    // -- applications on conditional (1D, x-axis) rows ----------------------

    /// Apply H_S(t) to per-spin rows tabulated on the x axis of `grid`:
    /// -(1/2 m_X) d^2/dx^2 + V_S(x, t).
    pub fn apply_system_rows(&self, grid: &Grid, rows: &[Array1<C64>], t: f64) -> Vec<Array1<C64>> {
        rows.iter()
            .map(|row| {
                let mut out = state::second_derivative_1d(row, grid.lx);
                let coef = -0.5 / self.mass_x;
                for (i, v) in out.iter_mut().enumerate() {
                    *v = coef * *v + self.v_system.eval(grid.x(i), t) * row[i];
                }
                out
            })
            .collect()
    }

    // -- applications on joint states ---------------------------------------

    /// H_S acting on the joint state.
    pub fn apply_system_joint(&self, psi: &JointWaveFunction, t: f64) -> Vec<Array2<C64>> {
        let g = &psi.grid;
        psi.amplitudes
            .iter()
            .map(|a| {
                let gx = state::gradient_x(g, a);
                let mut out = state::gradient_x(g, &gx);
                let coef = C64::new(-0.5 / self.mass_x, 0.0);
                for ((i, j), v) in out.indexed_iter_mut() {
                    *v = coef * *v + self.v_system.eval(g.x(i), t) * a[(i, j)];
                }
                out
            })
            .collect()
    }

    /// H_E acting on the joint state, including the spin drive when active.
    pub fn apply_env_joint(&self, psi: &JointWaveFunction, t: f64) -> Vec<Array2<C64>> {
        let g = &psi.grid;
        let drive = self.drive_active(t).then(|| self.spin_drive.unwrap().speed);
        psi.amplitudes
            .iter()
            .enumerate()
            .map(|(s, a)| {
                let mut out = state::second_y(g, a);
                let coef = C64::new(-0.5 / self.mass_y, 0.0);
                out.mapv_inplace(|v| coef * v);
                for ((_i, j), v) in out.indexed_iter_mut() {
                    *v += self.v_env.eval(g.y(j), t) * a[(_i, j)];
                }
                if let Some(speed) = drive {
                    if Y_SPIN_UP.contains(&s) {
                        // v P_Y = -i v d/dy on the up components
                        let dy = state::gradient_y(g, a);
                        let c = C64::new(0.0, -speed);
                        ndarray::Zip::from(&mut out).and(&dy).for_each(|o, d| {
                            *o += c * *d;
                        });
                    }
                }
                out
            })
            .collect()
    }

    /// H_int acting on the joint state.
    pub fn apply_int_joint(&self, psi: &JointWaveFunction, t: f64) -> Vec<Array2<C64>> {
        let g = &psi.grid;
        psi.amplitudes
            .iter()
            .map(|a| {
                if self.has_momentum_coupling() {
                    // -lambda P_X P_Y = +lambda d^2/dx dy
                    let mut out = state::cross_xy(g, a);
                    out.mapv_inplace(|v| self.p_coupling * v);
                    out
                } else if self.v_int.is_zero() {
                    Array2::zeros((g.nx, g.ny))
                } else {
                    Array2::from_shape_fn((g.nx, g.ny), |(i, j)| {
                        self.v_int.eval(g.x(i), g.y(j), t) * a[(i, j)]
                    })
                }
            })
            .collect()
    }

    /// The generator of the time evolution applied to the joint state
    /// (the full H, or H_int alone in the interaction-dominated mode).
    pub fn apply_evolution_generator(&self, psi: &JointWaveFunction, t: f64) -> Vec<Array2<C64>> {
        let mut out = self.apply_int_joint(psi, t);
        if !self.interaction_only {
            let hs = self.apply_system_joint(psi, t);
            let he = self.apply_env_joint(psi, t);
            for ((o, a), b) in out.iter_mut().zip(hs).zip(he) {
                *o += &a;
                *o += &b;
            }
        }
        out
    }

    // -- expectation values on joint states ----------------------------------

    /// <H_S(t)> of the joint state.
    pub fn expectation_system(&self, psi: &JointWaveFunction, t: f64) -> f64 {
        let g = &psi.grid;
        let da = g.cell_area();
        let mut e = 0.0;
        for a in &psi.amplitudes {
            let gx = state::gradient_x(g, a);
            e += 0.5 / self.mass_x * gx.iter().map(|v| v.norm_sqr()).sum::<f64>() * da;
            if !self.v_system.is_zero() {
                e += a
                    .indexed_iter()
                    .map(|((i, _j), v)| self.v_system.eval(g.x(i), t) * v.norm_sqr())
                    .sum::<f64>()
                    * da;
            }
        }
        e
    }

    /// Expectation of the evolution generator (conserved when it is static).
    pub fn expectation_evolution_energy(&self, psi: &JointWaveFunction, t: f64) -> f64 {
        let h = self.apply_evolution_generator(psi, t);
        let da = psi.grid.cell_area();
        psi.amplitudes
            .iter()
            .zip(&h)
            .map(|(a, ha)| {
                ndarray::Zip::from(a)
                    .and(ha)
                    .fold(0.0, |acc, v, hv| acc + (v.conj() * hv).re)
            })
            .sum::<f64>()
            * da
    }

    /// Tr{sigma dH_S/dt}: the drive power averaged over the joint state.
    pub fn expectation_dh_s_dt(&self, psi: &JointWaveFunction, t: f64) -> Result<f64> {
        let field = self.dh_s_dt()?;
        if field.is_zero() {
            return Ok(0.0);
        }
        let g = &psi.grid;
        let da = g.cell_area();
        let density = psi.density();
        Ok(density
            .values
            .indexed_iter()
            .map(|((i, _j), v)| field.eval(g.x(i), t) * v)
            .sum::<f64>()
            * da)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::Fft2;
    use rand::{Rng, SeedableRng};

    #[test]
    fn quadratic_pair_preset_expands_to_documented_split() {
        let spec = expand_preset(HamiltonianPreset::QuadraticPair, PresetParams::default());
        spec.validate().unwrap();
        // V(x,y) = (x-y)^2/4 split as x^2/4 + y^2/4 - xy/2
        for &(x, y) in &[(1.0, 2.0), (-0.5, 0.3), (2.0, 2.0)] {
            let total =
                spec.v_system.eval(x, 0.0) + spec.v_env.eval(y, 0.0) + spec.v_int.eval(x, y, 0.0);
            assert!((total - 0.25 * (x - y) * (x - y)).abs() < 1e-14);
            assert!((spec.v_int.eval(x, y, 0.0) - (-x * y / 2.0)).abs() < 1e-14);
        }
        assert_eq!(spec.p_coupling, 0.0);
    }

    #[test]
    fn pp_preset_is_pure_momentum_coupling() {
        let spec = expand_preset(
            HamiltonianPreset::PpCoupling,
            PresetParams {
                lambda: 10.0,
                ..Default::default()
            },
        );
        spec.validate().unwrap();
        assert_eq!(spec.p_coupling, 10.0);
        assert!(spec.v_system.is_zero() && spec.v_env.is_zero() && spec.v_int.is_zero());
        assert!(spec.interaction_only);
    }

    #[test]
    fn free_product_has_no_couplings() {
        let spec = expand_preset(HamiltonianPreset::FreeProduct, PresetParams::default());
        assert!(spec.v_int.is_zero() && spec.p_coupling == 0.0 && spec.spin_drive.is_none());
    }

    #[test]
    fn mixed_coupling_is_rejected() {
        let spec = HamiltonianSpec {
            v_int: Field2::parse("x*y").unwrap(),
            p_coupling: 1.0,
            ..Default::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn dh_s_dt_of_static_and_ramped_potentials() {
        let static_spec = expand_preset(HamiltonianPreset::QuadraticPair, PresetParams::default());
        assert!(static_spec.dh_s_dt().unwrap().is_zero());

        let ramped = HamiltonianSpec {
            v_system: Field1::parse("t*x^2").unwrap(),
            ..Default::default()
        };
        let d = ramped.dh_s_dt().unwrap();
        assert!((d.eval(3.0, 5.0) - 9.0).abs() < 1e-14);

        let sin_ramp = HamiltonianSpec {
            v_system: Field1::parse("sin(t)/4*x^2").unwrap(),
            ..Default::default()
        };
        let d = sin_ramp.dh_s_dt().unwrap();
        assert!((d.eval(1.0, 0.0) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn oscillator_ground_state_is_eigenrow() {
        // V_S = x^2/4 has omega = 1/sqrt(2); ground state exp(-omega x^2 / 2)
        let grid = Grid::square(256, 8.0).unwrap();
        let spec = expand_preset(HamiltonianPreset::QuadraticPair, PresetParams::default());
        let omega = std::f64::consts::FRAC_1_SQRT_2;
        let row = Array1::from_shape_fn(grid.nx, |i| {
            C64::new((-omega * grid.x(i).powi(2) / 2.0).exp(), 0.0)
        });
        let h_row = &spec.apply_system_rows(&grid, std::slice::from_ref(&row), 0.0)[0];
        let norm_sq: f64 = row.iter().map(|v| v.norm_sqr()).sum();
        let resid = h_row
            .iter()
            .zip(row.iter())
            .map(|(h, r)| (h - (omega / 2.0) * r).norm_sqr())
            .sum::<f64>()
            .sqrt()
            / norm_sq.sqrt();
        assert!(resid < 1e-6, "eigen-residual {resid}");
    }

    #[test]
    fn boosted_envelope_energy() {
        // <e^{ikx} f | P^2/2 | e^{ikx} f> = (1/(8 sigma^2) + k^2/2) * weight
        let grid = Grid::square(256, 8.0).unwrap();
        let spec = HamiltonianSpec::default();
        let (sigma, k, c) = (0.9, 1.5, 0.7);
        let row = Array1::from_shape_fn(grid.nx, |i| {
            let x = grid.x(i);
            C64::from_polar(
                c * (2.0 * std::f64::consts::PI * sigma * sigma).powf(-0.25)
                    * (-x * x / (4.0 * sigma * sigma)).exp(),
                k * x,
            )
        });
        let h_row = &spec.apply_system_rows(&grid, std::slice::from_ref(&row), 0.0)[0];
        let dx = grid.dx();
        let mean: f64 = row
            .iter()
            .zip(h_row.iter())
            .map(|(r, h)| (r.conj() * h).re)
            .sum::<f64>()
            * dx;
        let weight: f64 = row.iter().map(|v| v.norm_sqr()).sum::<f64>() * dx;
        let want = (1.0 / (8.0 * sigma * sigma) + k * k / 2.0) * weight;
        assert!((mean - want).abs() < 1e-8, "mean {mean} want {want}");
    }

    #[test]
    fn zero_rows_map_to_zero() {
        let grid = Grid::square(32, 4.0).unwrap();
        let spec = expand_preset(HamiltonianPreset::QuadraticPair, PresetParams::default());
        let row = Array1::from_elem(grid.nx, C64::new(0.0, 0.0));
        let out = &spec.apply_system_rows(&grid, &[row], 1.0)[0];
        assert!(out.iter().all(|v| v.norm() == 0.0));
    }

    fn random_band_limited(grid: &Grid, seed: u64) -> JointWaveFunction {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut hat = Array2::<C64>::zeros((grid.nx, grid.ny));
        let kmax = 6;
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                let mi = if i < grid.nx / 2 { i } else { grid.nx - i };
                let mj = if j < grid.ny / 2 { j } else { grid.ny - j };
                if mi <= kmax && mj <= kmax {
                    hat[(i, j)] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                }
            }
        }
        let fft = Fft2::new(grid.nx, grid.ny);
        fft.inverse(&mut hat);
        let mut psi = JointWaveFunction::from_components(*grid, vec![hat], 0.0);
        psi.normalize();
        psi
    }

    #[test]
    fn each_hamiltonian_part_is_hermitian() {
        let grid = Grid::square(64, 6.0).unwrap();
        let da = grid.cell_area();
        let inner = |a: &JointWaveFunction, b: &[Array2<C64>]| -> C64 {
            a.amplitudes
                .iter()
                .zip(b)
                .map(|(av, bv)| {
                    ndarray::Zip::from(av)
                        .and(bv)
                        .fold(C64::new(0.0, 0.0), |acc, x, y| acc + x.conj() * y)
                })
                .sum::<C64>()
                * da
        };
        for (label, spec) in [
            (
                "positional",
                expand_preset(HamiltonianPreset::QuadraticPair, PresetParams::default()),
            ),
            (
                "momentum",
                HamiltonianSpec {
                    p_coupling: 0.7,
                    ..Default::default()
                },
            ),
        ] {
            let phi = random_band_limited(&grid, 11);
            let psi = random_band_limited(&grid, 23);
            for (part, f) in [("H_S", 0usize), ("H_E", 1), ("H_int", 2)] {
                let apply = |s: &JointWaveFunction| match f {
                    0 => spec.apply_system_joint(s, 0.3),
                    1 => spec.apply_env_joint(s, 0.3),
                    _ => spec.apply_int_joint(s, 0.3),
                };
                let lhs = inner(&phi, &apply(&psi));
                let rhs = inner(&psi, &apply(&phi)).conj();
                assert!(
                    (lhs - rhs).norm() < 1e-8,
                    "{label}/{part}: <phi|H psi> = {lhs}, <H phi|psi>* = {rhs}"
                );
            }
        }
    }
}
