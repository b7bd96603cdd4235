//! Split-operator time evolution: exact spectral steps for the kinetic and
//! momentum-coupling terms interleaved with positional potential
//! half-steps (Strang splitting, potentials evaluated at the interval
//! midpoint). The spin-conditioned displacement drive commutes with the
//! kinetic term and is folded into the momentum-space step exactly.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::grid::Grid;
use crate::hamiltonian::HamiltonianSpec;
use crate::state::{JointWaveFunction, Y_SPIN_UP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplittingOrder {
    #[default]
    Strang,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PropagationPlan {
    pub dt: f64,
    pub t_final: f64,
    /// Store every k-th step (the initial state is always stored).
    pub snapshot_stride: usize,
    #[serde(default)]
    pub splitting_order: SplittingOrder,
}

impl PropagationPlan {
    pub fn new(dt: f64, t_final: f64, snapshot_stride: usize) -> Result<Self> {
        let plan = PropagationPlan {
            dt,
            t_final,
            snapshot_stride,
            splitting_order: SplittingOrder::Strang,
        };
        plan.validate_basic()?;
        Ok(plan)
    }

    fn validate_basic(&self) -> Result<()> {
        if self.dt.is_nan() || self.dt <= 0.0 {
            return Err(Error::config("dt must be positive"));
        }
        if self.t_final < 0.0 {
            return Err(Error::config("t_final must be nonnegative"));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::config("snapshot_stride must be >= 1"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// Horizon check for indefinite kinetic forms: with momentum coupling
    /// the packets spread as f(t) = 1 + lambda^2 t^2, and the support must
    /// stay at least six standard deviations inside the box.
    pub fn validate(
        &self,
        spec: &HamiltonianSpec,
        grid: &Grid,
        psi0: &JointWaveFunction,
    ) -> Result<()> {
        self.validate_basic()?;
        if spec.p_coupling != 0.0 {
            let ((_, sx), (_, sy)) = psi0.density().marginal_moments();
            let f = 1.0 + (spec.p_coupling * self.t_final).powi(2);
            let spread = sx.max(sy) * f.sqrt();
            let l = grid.lx.min(grid.ly);
            if 6.0 * spread > l {
                return Err(Error::config(format!(
                    "momentum-coupling horizon too long: support ~{:.2} (6 sigma) \
                     exceeds box half-width {:.2} at t = {}",
                    6.0 * spread,
                    l,
                    self.t_final
                )));
            }
        }
        Ok(())
    }
}

/// Timestamped sequence of propagated states on the plan's snapshot grid.
#[derive(Debug, Clone)]
pub struct SnapshotSeries {
    pub states: Vec<JointWaveFunction>,
}

impl SnapshotSeries {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.time).collect()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Uniform spacing between stored snapshots.
    pub fn stride_dt(&self) -> f64 {
        if self.states.len() < 2 {
            0.0
        } else {
            self.states[1].time - self.states[0].time
        }
    }
}

/// Momentum-space phase for one step of the kinetic + momentum-coupling
/// part (exact for any dt).
fn kinetic_phase(grid: &Grid, spec: &HamiltonianSpec, dt: f64) -> Array2<C64> {
    Array2::from_shape_fn((grid.nx, grid.ny), |(i, j)| {
        let (kx, ky) = (grid.kx(i), grid.ky(j));
        let e = if spec.interaction_only {
            -spec.p_coupling * kx * ky
        } else {
            kx * kx / (2.0 * spec.mass_x) + ky * ky / (2.0 * spec.mass_y)
                - spec.p_coupling * kx * ky
        };
        C64::cis(-e * dt)
    })
}

/// Drive phase applied to Y-spin-up components in momentum space:
/// exp(-i v dt k_y).
fn drive_phase(grid: &Grid, speed: f64, dt: f64) -> Array2<C64> {
    Array2::from_shape_fn((grid.nx, grid.ny), |(_i, j)| {
        C64::cis(-speed * dt * grid.ky(j))
    })
}

struct Stepper<'a> {
    spec: &'a HamiltonianSpec,
    grid: Grid,
    fft: Fft2,
    kin: Array2<C64>,
    drive: Option<Array2<C64>>,
    /// Static potential phase for a half-step, when V has no explicit t.
    static_half_v: Option<Array2<C64>>,
    has_potential: bool,
}

impl<'a> Stepper<'a> {
    fn new(spec: &'a HamiltonianSpec, grid: Grid, dt: f64) -> Self {
        let has_potential = !spec.interaction_only
            && (!spec.v_system.is_zero() || !spec.v_env.is_zero() || !spec.v_int.is_zero());
        let static_half_v = (has_potential && !spec.potential_depends_on_t()).then(|| {
            let v = spec.potential_array(&grid, 0.0);
            v.mapv(|e| C64::cis(-e * dt / 2.0))
        });
        Stepper {
            spec,
            grid,
            fft: Fft2::new(grid.nx, grid.ny),
            kin: kinetic_phase(&grid, spec, dt),
            drive: spec
                .spin_drive
                .filter(|d| d.speed != 0.0)
                .map(|d| drive_phase(&grid, d.speed, dt)),
            static_half_v,
            has_potential,
        }
    }

    fn apply_half_potential(&self, psi: &mut JointWaveFunction, t_mid: f64, dt: f64) {
        if !self.has_potential {
            return;
        }
        if let Some(phase) = &self.static_half_v {
            for a in &mut psi.amplitudes {
                ndarray::Zip::from(a).and(phase).for_each(|v, p| *v *= p);
            }
        } else {
            let v = self.spec.potential_array(&self.grid, t_mid);
            for a in &mut psi.amplitudes {
                ndarray::Zip::from(a).and(&v).for_each(|av, e| {
                    *av *= C64::cis(-e * dt / 2.0);
                });
            }
        }
    }

    fn apply_kinetic(&self, psi: &mut JointWaveFunction, t: f64) {
        let drive_now = self.spec.drive_active_for_step(t);
        for (s, a) in psi.amplitudes.iter_mut().enumerate() {
            // skip identically empty spin components
            if a.iter().all(|v| v.re == 0.0 && v.im == 0.0) {
                continue;
            }
            self.fft.forward(a);
            ndarray::Zip::from(&mut *a)
                .and(&self.kin)
                .for_each(|v, p| *v *= p);
            if drive_now && Y_SPIN_UP.contains(&s) {
                if let Some(d) = &self.drive {
                    ndarray::Zip::from(&mut *a).and(d).for_each(|v, p| *v *= p);
                }
            }
            self.fft.inverse(a);
        }
    }

    fn step(&self, psi: &mut JointWaveFunction, t: f64, dt: f64) {
        let t_mid = t + dt / 2.0;
        self.apply_half_potential(psi, t_mid, dt);
        self.apply_kinetic(psi, t);
        self.apply_half_potential(psi, t_mid, dt);
        psi.time = t + dt;
    }
}

/// Advance the state by a single Strang step.
pub fn step(
    psi: &JointWaveFunction,
    spec: &HamiltonianSpec,
    t: f64,
    dt: f64,
) -> Result<JointWaveFunction> {
    spec.validate()?;
    let stepper = Stepper::new(spec, psi.grid, dt);
    let mut out = psi.clone();
    out.time = t;
    stepper.step(&mut out, t, dt);
    Ok(out)
}

/// Apply the spin-conditioned displacement unitary once and exactly:
/// Y-spin-up components are displaced by `speed * duration` in y.
pub fn apply_spin_drive(
    psi: &JointWaveFunction,
    speed: f64,
    duration: f64,
) -> Result<JointWaveFunction> {
    if psi.spin_components() != 4 {
        return Err(Error::config("spin drive needs a spinor-valued state"));
    }
    let shift = speed * duration;
    let ((_, _), (my, sy)) = psi.density().marginal_moments();
    let margin = psi.grid.ly - (my.abs() + shift.abs() + 6.0 * sy);
    if margin < 0.0 {
        return Err(Error::config(format!(
            "displacement {shift} would push the packet within 6 sigma of the boundary"
        )));
    }
    let fft = Fft2::new(psi.grid.nx, psi.grid.ny);
    let phase = drive_phase(&psi.grid, speed, duration);
    let mut out = psi.clone();
    for s in Y_SPIN_UP {
        let a = &mut out.amplitudes[s];
        if a.iter().all(|v| v.re == 0.0 && v.im == 0.0) {
            continue;
        }
        fft.forward(a);
        ndarray::Zip::from(&mut *a)
            .and(&phase)
            .for_each(|v, p| *v *= p);
        fft.inverse(a);
    }
    Ok(out)
}

/// Evolve `psi0` over the plan, returning snapshots every
/// `snapshot_stride` steps. Norm drift beyond 1e-6 aborts.
pub fn evolve(
    psi0: &JointWaveFunction,
    spec: &HamiltonianSpec,
    plan: &PropagationPlan,
) -> Result<SnapshotSeries> {
    spec.validate()?;
    plan.validate(spec, &psi0.grid, psi0)?;

    const ABORT_DRIFT: f64 = 1e-6;
    let stepper = Stepper::new(spec, psi0.grid, plan.dt);
    let n_steps = plan.n_steps();

    let mut current = psi0.clone();
    current.time = 0.0;
    let norm0 = current.norm_sq();
    let mut states = Vec::with_capacity(n_steps / plan.snapshot_stride + 2);
    states.push(current.clone());

    for step_idx in 0..n_steps {
        let t = step_idx as f64 * plan.dt;
        stepper.step(&mut current, t, plan.dt);
        if (step_idx + 1) % plan.snapshot_stride == 0 || step_idx + 1 == n_steps {
            let drift = (current.norm_sq() - norm0).abs();
            if drift > ABORT_DRIFT {
                return Err(Error::NormDrift {
                    t: current.time,
                    drift,
                    threshold: ABORT_DRIFT,
                });
            }
            states.push(current.clone());
        }
    }
    Ok(SnapshotSeries { states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{expand_preset, HamiltonianPreset, PresetParams};
    use crate::oracles::QuadraticPairOracle;
    use crate::state::{make_gaussian_product, SpinPreset};

    fn overlap(a: &JointWaveFunction, b: &JointWaveFunction) -> C64 {
        let da = a.grid.cell_area();
        a.amplitudes
            .iter()
            .zip(&b.amplitudes)
            .map(|(x, y)| {
                ndarray::Zip::from(x)
                    .and(y)
                    .fold(C64::new(0.0, 0.0), |acc, u, v| acc + u.conj() * v)
            })
            .sum::<C64>()
            * da
    }

    #[test]
    fn free_gaussian_spreads_analytically() {
        let grid = Grid::square(256, 10.0).unwrap();
        let spec = HamiltonianSpec::default();
        let sigma = std::f64::consts::FRAC_1_SQRT_2;
        let psi0 = make_gaussian_product(grid, sigma, sigma, 0.0, SpinPreset::Scalar).unwrap();
        let plan = PropagationPlan::new(1e-3, 1.0, 1000).unwrap();
        let series = evolve(&psi0, &spec, &plan).unwrap();
        let ((_, sx), _) = series.states.last().unwrap().density().marginal_moments();
        let s2 = sigma * sigma;
        let want = s2 * (1.0 + 1.0 / (4.0 * s2 * s2));
        assert!(
            (sx * sx - want).abs() < 1e-5,
            "width^2 {} vs {}",
            sx * sx,
            want
        );
    }

    #[test]
    fn kinetic_only_step_is_exact() {
        let grid = Grid::square(128, 10.0).unwrap();
        let spec = HamiltonianSpec::default();
        let psi0 = make_gaussian_product(grid, 0.8, 0.8, 1.0, SpinPreset::Scalar).unwrap();
        // one large step equals two half steps to machine precision
        let one = step(&psi0, &spec, 0.0, 0.5).unwrap();
        let half = step(&psi0, &spec, 0.0, 0.25).unwrap();
        let two = step(&half, &spec, 0.25, 0.25).unwrap();
        let err = overlap(&one, &two).norm() - 1.0;
        assert!(err.abs() < 1e-12);
        let diff = one.amplitudes[0]
            .iter()
            .zip(two.amplitudes[0].iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12, "pointwise diff {diff}");
    }

    #[test]
    fn quadratic_pair_matches_closed_form_at_t1() {
        let grid = Grid::square(256, 12.0).unwrap();
        let spec = expand_preset(HamiltonianPreset::QuadraticPair, PresetParams::default());
        let sigma = std::f64::consts::FRAC_1_SQRT_2;
        let psi0 = make_gaussian_product(grid, sigma, sigma, 0.0, SpinPreset::Scalar).unwrap();
        let plan = PropagationPlan::new(1e-3, 1.0, 1000).unwrap();
        let series = evolve(&psi0, &spec, &plan).unwrap();
        let last = series.states.last().unwrap();
        let closed = JointWaveFunction::from_components(
            grid,
            vec![Array2::from_shape_fn((grid.nx, grid.ny), |(i, j)| {
                QuadraticPairOracle::psi(grid.x(i), grid.y(j), 1.0)
            })],
            1.0,
        );
        let fidelity = overlap(last, &closed).norm_sqr();
        assert!(fidelity > 1.0 - 1e-6, "fidelity {fidelity}");
    }

    #[test]
    fn norm_is_preserved() {
        let grid = Grid::square(128, 10.0).unwrap();
        let spec = expand_preset(HamiltonianPreset::QuadraticPair, PresetParams::default());
        let sigma = std::f64::consts::FRAC_1_SQRT_2;
        let psi0 = make_gaussian_product(grid, sigma, sigma, 0.0, SpinPreset::Scalar).unwrap();
        let plan = PropagationPlan::new(1e-3, 0.5, 50).unwrap();
        let series = evolve(&psi0, &spec, &plan).unwrap();
        for s in &series.states {
            assert!((s.norm_sq() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn harmonic_ground_state_density_is_stationary() {
        // V_S = x^2/2 ground state as a product with the same in y
        let grid = Grid::square(128, 8.0).unwrap();
        let spec = HamiltonianSpec {
            v_system: crate::hamiltonian::Field1::parse("x^2/2").unwrap(),
            v_env: crate::hamiltonian::Field1::parse("y^2/2").unwrap(),
            ..Default::default()
        };
        // omega = 1 ground state has sigma^2 = 1/2 in position density
        let sigma = std::f64::consts::FRAC_1_SQRT_2;
        let psi0 = make_gaussian_product(grid, sigma, sigma, 0.0, SpinPreset::Scalar).unwrap();
        let plan = PropagationPlan::new(5e-4, 0.5, 200).unwrap();
        let series = evolve(&psi0, &spec, &plan).unwrap();
        let d0 = psi0.density();
        for s in &series.states {
            let diff = (&s.density().values - &d0.values)
                .iter()
                .map(|v| v.abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-8, "density drift {diff} at t = {}", s.time);
        }
    }

    #[test]
    fn pp_density_matches_closed_form() {
        let grid = Grid::square(256, 12.0).unwrap();
        let lambda = 10.0;
        let spec = expand_preset(
            HamiltonianPreset::PpCoupling,
            PresetParams {
                lambda,
                ..Default::default()
            },
        );
        let sigma = std::f64::consts::FRAC_1_SQRT_2;
        let psi0 = make_gaussian_product(grid, sigma, sigma, 0.0, SpinPreset::Scalar).unwrap();
        let t_final = 0.2; // lambda t = 2
        let plan = PropagationPlan::new(1e-3, t_final, 200).unwrap();
        let series = evolve(&psi0, &spec, &plan).unwrap();
        let last = series.states.last().unwrap();
        let f = 1.0 + (lambda * t_final).powi(2);
        let mut l1 = 0.0;
        let density = last.density();
        for ((i, j), v) in density.values.indexed_iter() {
            let (x, y) = (grid.x(i), grid.y(j));
            let want = (-(x * x + y * y) / f).exp() / (std::f64::consts::PI * f);
            l1 += (v - want).abs() * grid.cell_area();
        }
        assert!(l1 < 1e-4, "L1 density error {l1}");
    }

    #[test]
    fn energy_of_static_hamiltonian_is_conserved() {
        let grid = Grid::square(128, 10.0).unwrap();
        let spec = expand_preset(HamiltonianPreset::QuadraticPair, PresetParams::default());
        let sigma = std::f64::consts::FRAC_1_SQRT_2;
        let psi0 = make_gaussian_product(grid, sigma, sigma, 0.0, SpinPreset::Scalar).unwrap();
        let plan = PropagationPlan::new(1e-3, 1.0, 250).unwrap();
        let series = evolve(&psi0, &spec, &plan).unwrap();
        let e0 = spec.expectation_evolution_energy(&series.states[0], 0.0);
        for s in &series.states {
            let e = spec.expectation_evolution_energy(s, s.time);
            assert!(
                (e - e0).abs() < 1e-6,
                "energy drift {} at t={}",
                e - e0,
                s.time
            );
        }
    }

    #[test]
    fn spin_drive_displaces_up_components_only() {
        let grid = Grid::new(128, 256, 8.0, 14.0).unwrap();
        let psi0 = make_gaussian_product(grid, 1.0, 1.0, 2.0, SpinPreset::Steering).unwrap();
        let shifted = apply_spin_drive(&psi0, 12.0, 0.5).unwrap();
        // down-down component untouched
        let diff = shifted.amplitudes[1]
            .iter()
            .zip(psi0.amplitudes[1].iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-13);
        // up-up component centered at y = v tau = 6
        let da = grid.cell_area();
        let dy = grid.dy();
        let mut mean_y = 0.0;
        let mut up_mass = 0.0;
        let mut p_up = vec![0.0; grid.ny];
        let mut p_down = vec![0.0; grid.ny];
        for ((i, j), v) in shifted.amplitudes[0].indexed_iter() {
            let w = v.norm_sqr() * da;
            up_mass += w;
            mean_y += grid.y(j) * w;
            p_up[j] += v.norm_sqr() * grid.dx();
            p_down[j] += shifted.amplitudes[1][(i, j)].norm_sqr() * grid.dx();
        }
        assert!((mean_y / up_mass - 6.0).abs() < 1e-8);
        // the y-marginals barely overlap: each packet's density at the
        // other packet's center is < 1e-6 of its own peak
        let peak_up = p_up.iter().cloned().fold(0.0, f64::max);
        let peak_down = p_down.iter().cloned().fold(0.0, f64::max);
        let j_down_center = ((0.0 + grid.ly) / dy).round() as usize;
        let j_up_center = ((6.0 + grid.ly) / dy).round() as usize;
        let contamination = (p_up[j_down_center] / peak_up).max(p_down[j_up_center] / peak_down);
        assert!(contamination < 1e-6, "marginal overlap {contamination}");
    }

    #[test]
    fn spin_drive_zero_shift_is_identity() {
        let grid = Grid::new(64, 128, 8.0, 14.0).unwrap();
        let psi0 = make_gaussian_product(grid, 1.0, 1.0, 1.0, SpinPreset::Steering).unwrap();
        let out = apply_spin_drive(&psi0, 12.0, 0.0).unwrap();
        for (a, b) in out.amplitudes.iter().zip(&psi0.amplitudes) {
            let diff = a
                .iter()
                .zip(b.iter())
                .map(|(u, v)| (u - v).norm())
                .fold(0.0, f64::max);
            assert!(diff < 1e-14);
        }
    }

    #[test]
    fn spin_drive_composes() {
        let grid = Grid::new(64, 256, 8.0, 14.0).unwrap();
        let psi0 = make_gaussian_product(grid, 1.0, 1.0, 2.0, SpinPreset::Steering).unwrap();
        let once = apply_spin_drive(&psi0, 4.0, 1.0).unwrap();
        let halves =
            apply_spin_drive(&apply_spin_drive(&psi0, 4.0, 0.5).unwrap(), 4.0, 0.5).unwrap();
        for (a, b) in once.amplitudes.iter().zip(&halves.amplitudes) {
            let diff = a
                .iter()
                .zip(b.iter())
                .map(|(u, v)| (u - v).norm())
                .fold(0.0, f64::max);
            assert!(diff < 1e-12);
        }
    }

    #[test]
    fn second_order_convergence_in_dt() {
        let grid = Grid::square(128, 8.0).unwrap();
        let spec = expand_preset(HamiltonianPreset::QuadraticPair, PresetParams::default());
        let sigma = std::f64::consts::FRAC_1_SQRT_2;
        let psi0 = make_gaussian_product(grid, sigma, sigma, 0.0, SpinPreset::Scalar).unwrap();
        let t_final = 1.0;
        let err_for = |dt: f64| {
            let plan = PropagationPlan::new(dt, t_final, (t_final / dt) as usize).unwrap();
            let last = evolve(&psi0, &spec, &plan).unwrap();
            let last = last.states.last().unwrap();
            let mut e2 = 0.0;
            for ((i, j), v) in last.amplitudes[0].indexed_iter() {
                let want = QuadraticPairOracle::psi(grid.x(i), grid.y(j), t_final);
                e2 += (v - want).norm_sqr();
            }
            (e2 * grid.cell_area()).sqrt()
        };
        let e_coarse = err_for(2e-2);
        let e_fine = err_for(1e-2);
        let ratio = e_coarse / e_fine;
        assert!(
            (3.4..=4.6).contains(&ratio),
            "convergence ratio {ratio} (errors {e_coarse:.3e}, {e_fine:.3e})"
        );
    }

    #[test]
    fn horizon_validator_rejects_long_momentum_runs() {
        let grid = Grid::square(64, 6.0).unwrap();
        let spec = expand_preset(
            HamiltonianPreset::PpCoupling,
            PresetParams {
                lambda: 10.0,
                ..Default::default()
            },
        );
        let sigma = std::f64::consts::FRAC_1_SQRT_2;
        let psi0 = make_gaussian_product(grid, sigma, sigma, 0.0, SpinPreset::Scalar).unwrap();
        let plan = PropagationPlan::new(1e-3, 5.0, 100).unwrap();
        assert!(matches!(evolve(&psi0, &spec, &plan), Err(Error::Config(_))));
    }
}
