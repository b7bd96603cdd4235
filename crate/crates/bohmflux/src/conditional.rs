//! Conditional wave functions and the conditional-energy flow
//! decomposition.
//!
//! The conditional state at environment position Y is the slice
//! phi(x) = Psi(x, Y) per spin component, left unnormalized; its weight is
//! the x-quadrature of the spin-summed |phi|^2. The flow of the
//! conditional energy u = <phi|H_S|phi>/<phi|phi> splits into
//!
//!   du_ext = <phi| dH_S/dt |phi> / w
//!   du_int = 2 Im <phi| (H_S - u) (H_int Psi)(., Y) > / w
//!   du_ent = 2 Im <phi| (H_S - u) [ (H_E Psi)(., Y) - v_y (-i dPsi/dy)(., Y) ] > / w
//!
//! with every y-derivative taken spectrally on the full grid and then
//! interpolated at Y (slice form: no operator on the joint space is ever
//! materialized). For mixed states the same forms are summed over the
//! components of a finite convex decomposition; the third term is then a
//! correlations contribution rather than an entanglement one.

use ndarray::Array1;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::FftAxis;
use crate::grid::Grid;
use crate::hamiltonian::{Field1, HamiltonianSpec};
use crate::propagator::SnapshotSeries;
use crate::state::{self, JointWaveFunction, Y_SPIN_UP};
use crate::trajectories::{TrajectorySet, VelocityField};

/// Ledger closure tolerance: |du_ext + du_int + du_ent - du_fd| must stay
/// below CLOSURE_TOL * (1 + |du_fd|) at every stored time.
pub const CLOSURE_TOL: f64 = 5e-4;

/// Relative weight floor for a usable conditional slice.
const SLICE_THRESHOLD_REL: f64 = 1e-12;

/// Unnormalized conditional wave function phi(x) = Psi(x, Y) at a fixed
/// environment position, one row per spin component.
#[derive(Debug, Clone)]
pub struct ConditionalState {
    pub grid: Grid,
    pub amplitudes: Vec<Array1<C64>>,
    /// <phi|phi>: x-quadrature of the spin-summed squared modulus.
    pub weight: f64,
    pub time: f64,
    /// Sample id of the trajectory this slice came from, if any.
    pub source: Option<usize>,
}

impl ConditionalState {
    pub fn norm_weight(&self) -> f64 {
        let dx = self.grid.dx();
        self.amplitudes
            .iter()
            .map(|a| a.iter().map(|v| v.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            * dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowTerms {
    pub ext: f64,
    pub int: f64,
    pub ent: f64,
}

impl FlowTerms {
    /// The third contribution under its mixed-state name: for general
    /// mixtures it is a correlations term, nonzero for classical as well
    /// as quantum correlations.
    pub fn correlations(&self) -> f64 {
        self.ent
    }

    pub fn total(&self) -> f64 {
        self.ext + self.int + self.ent
    }
}

/// Snapshot prepared for repeated slice evaluations: spectral y-derivatives
/// (and the mixed derivative for momentum coupling) are computed once.
pub struct SliceContext<'a> {
    pub psi: &'a JointWaveFunction,
    spec: &'a HamiltonianSpec,
    dy: Vec<ndarray::Array2<C64>>,
    dyy: Option<Vec<ndarray::Array2<C64>>>,
    dxy: Option<Vec<ndarray::Array2<C64>>>,
    dh_s_dt: Field1,
    fft_x: FftAxis,
    v_system_row: Vec<f64>,
    dv_dt_row: Option<Vec<f64>>,
    weight_floor: f64,
}

impl<'a> SliceContext<'a> {
    pub fn new(psi: &'a JointWaveFunction, spec: &'a HamiltonianSpec) -> Result<Self> {
        let grid = &psi.grid;
        let t = psi.time;
        let dy = psi.spectral_gradient(state::DerivAxis::Y);
        let dyy = (!spec.interaction_only).then(|| {
            psi.amplitudes
                .iter()
                .map(|a| state::second_y(grid, a))
                .collect()
        });
        let dxy = spec.has_momentum_coupling().then(|| {
            psi.amplitudes
                .iter()
                .map(|a| state::cross_xy(grid, a))
                .collect()
        });
        let dh_s_dt = spec.dh_s_dt()?;
        let v_system_row = grid.xs().map(|x| spec.v_system.eval(x, t)).collect();
        let dv_dt_row =
            (!dh_s_dt.is_zero()).then(|| grid.xs().map(|x| dh_s_dt.eval(x, t)).collect());
        // peak slice weight over grid rows sets the degenerate threshold
        let dx = grid.dx();
        let mut peak_w = 0.0_f64;
        for j in 0..grid.ny {
            let mut w = 0.0;
            for a in &psi.amplitudes {
                for i in 0..grid.nx {
                    w += a[(i, j)].norm_sqr();
                }
            }
            peak_w = peak_w.max(w * dx);
        }
        Ok(SliceContext {
            psi,
            spec,
            dy,
            dyy,
            dxy,
            dh_s_dt,
            fft_x: FftAxis::new(grid.nx),
            v_system_row,
            dv_dt_row,
            weight_floor: SLICE_THRESHOLD_REL * peak_w,
        })
    }

    /// Extract the unnormalized conditional state at environment position y.
    pub fn extract(&self, y: f64, source: Option<usize>) -> Result<ConditionalState> {
        let grid = self.psi.grid;
        if !(-grid.ly..grid.ly).contains(&y) {
            return Err(Error::OutOfDomain { x: 0.0, y });
        }
        let amplitudes: Vec<Array1<C64>> = self
            .psi
            .amplitudes
            .iter()
            .map(|a| state::interp_rows_at_y(&grid, a, y))
            .collect();
        let weight = amplitudes
            .iter()
            .map(|a| a.iter().map(|v| v.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            * grid.dx();
        if weight <= self.weight_floor {
            return Err(Error::DegenerateSlice { y, weight });
        }
        Ok(ConditionalState {
            grid,
            amplitudes,
            weight,
            time: self.psi.time,
            source,
        })
    }

    /// H_S(t) applied to the slice rows (cached transform and potential).
    fn apply_h_system(&self, rows: &[Array1<C64>]) -> Vec<Array1<C64>> {
        let grid = &self.psi.grid;
        let coef = -0.5 / self.spec.mass_x;
        rows.iter()
            .map(|row| {
                let mut data: Vec<C64> = row.to_vec();
                self.fft_x.forward(&mut data);
                for (i, v) in data.iter_mut().enumerate() {
                    let k = Grid::wavenumber(i, grid.nx, grid.lx);
                    *v *= C64::new(-k * k, 0.0);
                }
                self.fft_x.inverse(&mut data);
                Array1::from_shape_fn(grid.nx, |i| coef * data[i] + self.v_system_row[i] * row[i])
            })
            .collect()
    }

    /// Conditional energy of an extracted slice.
    pub fn conditional_energy(&self, cstate: &ConditionalState) -> f64 {
        let dx = cstate.grid.dx();
        let h_rows = self.apply_h_system(&cstate.amplitudes);
        let num: f64 = cstate
            .amplitudes
            .iter()
            .zip(&h_rows)
            .map(|(a, h)| {
                a.iter()
                    .zip(h.iter())
                    .map(|(av, hv)| (av.conj() * hv).re)
                    .sum::<f64>()
            })
            .sum::<f64>()
            * dx;
        num / cstate.weight
    }

    /// Conditional energy and the three flow contributions at environment
    /// position y moving with velocity v_y.
    pub fn evaluate(&self, y: f64, v_y: f64, source: Option<usize>) -> Result<(f64, FlowTerms)> {
        let cstate = self.extract(y, source)?;
        let u = self.conditional_energy(&cstate);
        let terms = self.flow_terms_inner(&cstate, y, v_y, u);
        Ok((u, terms))
    }

    fn flow_terms_inner(&self, cstate: &ConditionalState, y: f64, v_y: f64, u: f64) -> FlowTerms {
        let grid = &self.psi.grid;
        let dx = grid.dx();
        let t = self.psi.time;
        let w = cstate.weight;

        // (H_S - u) phi rows
        let h_rows = self.apply_h_system(&cstate.amplitudes);
        let a_rows: Vec<Array1<C64>> = h_rows
            .into_iter()
            .zip(&cstate.amplitudes)
            .map(|(h, phi)| h - phi.mapv(|v| u * v))
            .collect();

        // external: <phi| dV_S/dt |phi> / w
        let ext = match &self.dv_dt_row {
            None => 0.0,
            Some(dv) => {
                let mut acc = 0.0;
                for phi in &cstate.amplitudes {
                    for (i, v) in phi.iter().enumerate() {
                        acc += dv[i] * v.norm_sqr();
                    }
                }
                acc * dx / w
            }
        };
        debug_assert!(self.dv_dt_row.is_some() || self.dh_s_dt.is_zero());

        // interaction: slice of H_int Psi
        let int = if self.spec.has_momentum_coupling() {
            let dxy = self.dxy.as_ref().expect("mixed derivative cached");
            let mut acc = 0.0;
            for (rows, dxy_s) in a_rows.iter().zip(dxy) {
                let g = state::interp_rows_at_y(grid, dxy_s, y);
                acc += im_inner(rows, &g.mapv(|v| self.spec.p_coupling * v));
            }
            2.0 * acc * dx / w
        } else if self.spec.v_int.is_zero() {
            0.0
        } else {
            let v_row: Vec<f64> = grid.xs().map(|x| self.spec.v_int.eval(x, y, t)).collect();
            let mut acc = 0.0;
            for (rows, phi) in a_rows.iter().zip(&cstate.amplitudes) {
                let g = Array1::from_shape_fn(grid.nx, |i| v_row[i] * phi[i]);
                acc += im_inner(rows, &g);
            }
            2.0 * acc * dx / w
        };

        // entanglement: slice of H_E Psi minus the advective momentum term
        let drive = self
            .spec
            .drive_active(t)
            .then(|| self.spec.spin_drive.unwrap().speed);
        let mut acc = 0.0;
        for (s, rows) in a_rows.iter().enumerate() {
            let dy_slice = state::interp_rows_at_y(grid, &self.dy[s], y);
            let mut g = dy_slice.mapv(|v| C64::new(0.0, v_y) * v); // -v_y (-i dPsi/dy)
            if let Some(dyy) = &self.dyy {
                let ke = -0.5 / self.spec.mass_y;
                let dyy_slice = state::interp_rows_at_y(grid, &dyy[s], y);
                g = &g + &dyy_slice.mapv(|v| ke * v);
                if !self.spec.v_env.is_zero() {
                    let ve = self.spec.v_env.eval(y, t);
                    g = &g + &cstate.amplitudes[s].mapv(|v| ve * v);
                }
                if let Some(speed) = drive {
                    if Y_SPIN_UP.contains(&s) {
                        // drive term v P_Y phi on up components
                        g = &g + &dy_slice.mapv(|v| C64::new(0.0, -speed) * v);
                    }
                }
            }
            acc += im_inner(rows, &g);
        }
        let ent = 2.0 * acc * dx / w;

        FlowTerms { ext, int, ent }
    }
}

fn im_inner(a: &Array1<C64>, b: &Array1<C64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(av, bv)| (av.conj() * bv).im)
        .sum()
}

// ---------------------------------------------------------------------------
// spec-level convenience entry points
// ---------------------------------------------------------------------------

/// Extract the unnormalized conditional wave function at environment
/// position y (builds the slice machinery once; use [`SliceContext`] for
/// repeated queries).
pub fn extract_cwf(
    psi: &JointWaveFunction,
    spec: &HamiltonianSpec,
    y: f64,
) -> Result<ConditionalState> {
    SliceContext::new(psi, spec)?.extract(y, None)
}

/// u = <phi|H_S(t)|phi> / <phi|phi> for an extracted conditional state.
pub fn conditional_energy(
    cstate: &ConditionalState,
    spec: &HamiltonianSpec,
    psi: &JointWaveFunction,
) -> Result<f64> {
    Ok(SliceContext::new(psi, spec)?.conditional_energy(cstate))
}

/// The three conditional energy-flow contributions at (y, v_y).
pub fn flow_terms(
    psi: &JointWaveFunction,
    spec: &HamiltonianSpec,
    y: f64,
    v_y: f64,
) -> Result<(f64, FlowTerms)> {
    SliceContext::new(psi, spec)?.evaluate(y, v_y, None)
}

// ---------------------------------------------------------------------------
// energy ledger
// ---------------------------------------------------------------------------

/// Per-trajectory time series of the conditional energy, its flow
/// contributions, their cumulative integrals, and the closure check.
#[derive(Debug, Clone)]
pub struct EnergyLedger {
    pub sample_id: usize,
    pub times: Vec<f64>,
    pub u: Vec<f64>,
    pub du_ext: Vec<f64>,
    pub du_int: Vec<f64>,
    pub du_ent: Vec<f64>,
    pub cum_ext: Vec<f64>,
    pub cum_int: Vec<f64>,
    pub cum_ent: Vec<f64>,
    /// Finite-difference derivative of u on the stored time grid.
    pub du_total_check: Vec<f64>,
    pub max_closure_residual: f64,
    pub closure_ok: bool,
    /// True when the source trajectory was excluded; the series is then
    /// truncated at the exclusion time and must not enter ensemble stats.
    pub excluded: bool,
}

/// Trapezoid-integrate flow-term series into a ledger and populate the
/// closure check.
pub fn accumulate_ledger(
    sample_id: usize,
    times: &[f64],
    u: Vec<f64>,
    terms: Vec<FlowTerms>,
    excluded: bool,
) -> EnergyLedger {
    let n = times.len();
    assert_eq!(u.len(), n);
    assert_eq!(terms.len(), n);
    let h = if n > 1 { times[1] - times[0] } else { 0.0 };

    let cum = |f: &dyn Fn(&FlowTerms) -> f64| -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        let mut acc = 0.0;
        out.push(0.0);
        for k in 1..n {
            acc += 0.5 * h * (f(&terms[k - 1]) + f(&terms[k]));
            out.push(acc);
        }
        out
    };
    let cum_ext = cum(&|t| t.ext);
    let cum_int = cum(&|t| t.int);
    let cum_ent = cum(&|t| t.ent);

    // fourth-order finite differences (truncation must stay well under the
    // closure budget even where the drive sweeps u quickly); second-order
    // fallback for very short series
    let mut du_fd = vec![0.0; n];
    if n >= 5 && h > 0.0 {
        for k in 2..n - 2 {
            du_fd[k] = (-u[k + 2] + 8.0 * u[k + 1] - 8.0 * u[k - 1] + u[k - 2]) / (12.0 * h);
        }
        du_fd[0] =
            (-25.0 * u[0] + 48.0 * u[1] - 36.0 * u[2] + 16.0 * u[3] - 3.0 * u[4]) / (12.0 * h);
        du_fd[1] = (-3.0 * u[0] - 10.0 * u[1] + 18.0 * u[2] - 6.0 * u[3] + u[4]) / (12.0 * h);
        du_fd[n - 2] = (3.0 * u[n - 1] + 10.0 * u[n - 2] - 18.0 * u[n - 3] + 6.0 * u[n - 4]
            - u[n - 5])
            / (12.0 * h);
        du_fd[n - 1] = (25.0 * u[n - 1] - 48.0 * u[n - 2] + 36.0 * u[n - 3] - 16.0 * u[n - 4]
            + 3.0 * u[n - 5])
            / (12.0 * h);
    } else if n >= 3 && h > 0.0 {
        for k in 1..n - 1 {
            du_fd[k] = (u[k + 1] - u[k - 1]) / (2.0 * h);
        }
        du_fd[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h);
        du_fd[n - 1] = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * h);
    }

    let mut max_resid = 0.0_f64;
    for k in 0..n {
        let sum = terms[k].ext + terms[k].int + terms[k].ent;
        let resid = (sum - du_fd[k]).abs() / (1.0 + du_fd[k].abs());
        max_resid = max_resid.max(resid);
    }

    EnergyLedger {
        sample_id,
        times: times.to_vec(),
        u,
        du_ext: terms.iter().map(|t| t.ext).collect(),
        du_int: terms.iter().map(|t| t.int).collect(),
        du_ent: terms.iter().map(|t| t.ent).collect(),
        cum_ext,
        cum_int,
        cum_ent,
        du_total_check: du_fd,
        max_closure_residual: max_resid,
        closure_ok: max_resid <= CLOSURE_TOL,
        excluded,
    }
}

/// Evaluate ledgers for every trajectory in the set along the snapshot
/// sequence (one slice context per snapshot, trajectories in parallel).
pub fn compute_ledgers(
    series: &SnapshotSeries,
    spec: &HamiltonianSpec,
    set: &TrajectorySet,
) -> Result<Vec<EnergyLedger>> {
    let n_times = set.times.len();
    if series.len() != n_times {
        return Err(Error::config(
            "trajectory set and snapshot series cover different time grids",
        ));
    }
    let n_traj = set.len();
    let mut u_series = vec![vec![0.0_f64; n_times]; n_traj];
    let mut term_series = vec![vec![FlowTerms::default(); n_times]; n_traj];

    for (k, snap) in series.states.iter().enumerate() {
        let ctx = SliceContext::new(snap, spec)?;
        let row: Vec<Result<(f64, FlowTerms)>> = (0..n_traj)
            .into_par_iter()
            .map(|ti| {
                let traj = &set.trajectories[ti];
                if traj.excluded_at.is_some_and(|e| e <= k) {
                    return Ok((0.0, FlowTerms::default()));
                }
                let (_, y) = traj.positions[k];
                let (_, vy) = traj.velocities[k];
                ctx.evaluate(y, vy, Some(set.samples[ti].id))
            })
            .collect();
        for (ti, r) in row.into_iter().enumerate() {
            let (u, terms) = r?;
            u_series[ti][k] = u;
            term_series[ti][k] = terms;
        }
    }

    Ok((0..n_traj)
        .map(|ti| {
            accumulate_ledger(
                set.samples[ti].id,
                &set.times,
                std::mem::take(&mut u_series[ti]),
                std::mem::take(&mut term_series[ti]),
                set.trajectories[ti].excluded_at.is_some(),
            )
        })
        .collect())
}

/// Conditional energy u(t, y) and slice weight w(y) on the environment
/// grid rows of a snapshot (no interpolation; tail rows below the weight
/// floor report zero).
pub fn conditional_energy_profile(
    psi: &JointWaveFunction,
    spec: &HamiltonianSpec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let ctx = SliceContext::new(psi, spec)?;
    let grid = psi.grid;
    let dx = grid.dx();
    let profile: Vec<(f64, f64)> = (0..grid.ny)
        .into_par_iter()
        .map(|j| {
            let rows: Vec<Array1<C64>> = psi
                .amplitudes
                .iter()
                .map(|a| Array1::from_shape_fn(grid.nx, |i| a[(i, j)]))
                .collect();
            let w: f64 = rows
                .iter()
                .map(|r| r.iter().map(|v| v.norm_sqr()).sum::<f64>())
                .sum::<f64>()
                * dx;
            if w <= ctx.weight_floor {
                return (0.0, w);
            }
            let cstate = ConditionalState {
                grid,
                amplitudes: rows,
                weight: w,
                time: psi.time,
                source: None,
            };
            (ctx.conditional_energy(&cstate), w)
        })
        .collect();
    let u = profile.iter().map(|p| p.0).collect();
    let w = profile.iter().map(|p| p.1).collect();
    Ok((u, w))
}

// ---------------------------------------------------------------------------
// mixed states
// ---------------------------------------------------------------------------

/// Finite convex mixture of pure joint wave functions sharing one grid and
/// spin structure; the conditional density matrix at a slice is carried
/// implicitly as the weighted component slices.
#[derive(Debug, Clone)]
pub struct MixedState {
    pub components: Vec<(f64, JointWaveFunction)>,
}

impl MixedState {
    pub fn new(components: Vec<(f64, JointWaveFunction)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::config("mixture needs at least one component"));
        }
        if components.len() > 16 {
            return Err(Error::config("mixture rank capped at 16"));
        }
        let total: f64 = components.iter().map(|(p, _)| p).sum();
        if components.iter().any(|(p, _)| *p <= 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(
                "mixture probabilities must be positive and sum to one",
            ));
        }
        let g0 = components[0].1.grid;
        let s0 = components[0].1.spin_components();
        for (_, psi) in &components {
            if psi.grid != g0 || psi.spin_components() != s0 {
                return Err(Error::config("mixture components must share grid and spin"));
            }
        }
        Ok(MixedState { components })
    }

    pub fn pure(psi: JointWaveFunction) -> Self {
        MixedState {
            components: vec![(1.0, psi)],
        }
    }
}

/// Guidance velocity of a mixed state: probability-weighted currents over
/// the probability-weighted density.
pub fn mixed_velocity_field(
    mixed: &MixedState,
    spec: &HamiltonianSpec,
    point: (f64, f64),
) -> Result<(f64, f64)> {
    let grid = mixed.components[0].1.grid;
    if !grid.contains(point.0, point.1) {
        return Err(Error::OutOfDomain {
            x: point.0,
            y: point.1,
        });
    }
    let mut jx = 0.0;
    let mut jy = 0.0;
    let mut rho = 0.0;
    let mut peak = 0.0;
    for (p, psi) in &mixed.components {
        let field = VelocityField::new(psi, spec);
        let (cx, cy, r) = field.current_and_density(point.0, point.1);
        jx += p * cx;
        jy += p * cy;
        rho += p * r;
        peak += p * psi.peak_density();
    }
    if rho <= 1e-12 * peak {
        return Ok((0.0, 0.0));
    }
    Ok((jx / rho, jy / rho))
}

struct MixedSlices<'a> {
    contexts: Vec<(f64, SliceContext<'a>)>,
}

impl<'a> MixedSlices<'a> {
    fn new(mixed: &'a MixedState, spec: &'a HamiltonianSpec) -> Result<Self> {
        let contexts = mixed
            .components
            .iter()
            .map(|(p, psi)| SliceContext::new(psi, spec).map(|c| (*p, c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(MixedSlices { contexts })
    }

    fn energy_and_terms(&self, y: f64, v_y: f64) -> Result<(f64, FlowTerms)> {
        // total weight and energy numerator over components
        let mut num = 0.0;
        let mut total_w = 0.0;
        let mut slices = Vec::with_capacity(self.contexts.len());
        for (p, ctx) in &self.contexts {
            match ctx.extract(y, None) {
                Ok(cs) => {
                    num += p * ctx.conditional_energy(&cs) * cs.weight;
                    total_w += p * cs.weight;
                    slices.push(Some(cs));
                }
                Err(Error::DegenerateSlice { .. }) => slices.push(None),
                Err(e) => return Err(e),
            }
        }
        if total_w <= 0.0 {
            return Err(Error::DegenerateSlice { y, weight: total_w });
        }
        let u = num / total_w;
        let mut terms = FlowTerms::default();
        for ((p, ctx), cs) in self.contexts.iter().zip(slices) {
            let Some(cs) = cs else { continue };
            let t = ctx.flow_terms_inner(&cs, y, v_y, u);
            // component terms are normalized by the component weight;
            // reweight into the mixture normalization
            let scale = p * cs.weight / total_w;
            terms.ext += scale * t.ext;
            terms.int += scale * t.int;
            terms.ent += scale * t.ent;
        }
        Ok((u, terms))
    }
}

/// Conditional energy of a mixed state at environment position y.
pub fn mixed_conditional_energy(mixed: &MixedState, spec: &HamiltonianSpec, y: f64) -> Result<f64> {
    MixedSlices::new(mixed, spec)?
        .energy_and_terms(y, 0.0)
        .map(|(u, _)| u)
}

/// Flow contributions of a mixed state; the third output is the
/// correlations term (nonzero for classical as well as quantum
/// correlations).
pub fn mixed_flow_terms(
    mixed: &MixedState,
    spec: &HamiltonianSpec,
    y: f64,
    v_y: f64,
) -> Result<(f64, FlowTerms)> {
    MixedSlices::new(mixed, spec)?.energy_and_terms(y, v_y)
}
