//! Ensemble statistics over per-trajectory energy ledgers: weighted means
//! with standard errors, the statistical identities tying conditional
//! energies to canonical expectation values, the variance decomposition of
//! the cumulative energy components, and two independent estimators of the
//! ensemble-averaged entanglement flow rate.

use crate::conditional::{EnergyLedger, SliceContext};
use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianSpec;
use crate::propagator::SnapshotSeries;
use crate::state::{self, JointWaveFunction};
use crate::trajectories::EnsembleWeights;

#[derive(Debug, Clone)]
pub struct EnsembleReport {
    pub times: Vec<f64>,
    pub mean_u: Vec<f64>,
    pub se_u: Vec<f64>,
    pub mean_du_ext: Vec<f64>,
    pub se_du_ext: Vec<f64>,
    pub mean_du_int: Vec<f64>,
    pub se_du_int: Vec<f64>,
    pub mean_du_ent: Vec<f64>,
    pub se_du_ent: Vec<f64>,
    /// Ensemble means of the cumulative flow components.
    pub mean_cum_ext: Vec<f64>,
    pub mean_cum_int: Vec<f64>,
    pub mean_cum_ent: Vec<f64>,
    /// Variance of the cumulative (interaction + entanglement) component
    /// and its decomposition; the identity
    /// var_total = var_int + var_ent + 2 cov holds exactly per time.
    pub var_total: Vec<f64>,
    pub var_int: Vec<f64>,
    pub var_ent: Vec<f64>,
    pub cov_int_ent: Vec<f64>,
    /// Number of trajectories entering the statistics.
    pub n_effective: usize,
    /// True in Monte Carlo mode (standard errors are sample-std/sqrt(n));
    /// quadrature mode reports zero standard errors.
    pub monte_carlo: bool,
    /// <Psi(t)|H_S(t)|Psi(t)> per time, filled from snapshots.
    pub expectation_hs: Vec<f64>,
    /// u(t, y) tabulated on the environment grid rows, per time.
    pub u_of_y_table: Vec<Vec<f64>>,
}

/// Weighted aggregation of ledgers (excluded trajectories are dropped).
/// Snapshot-derived fields are filled by [`attach_snapshot_expectations`].
pub fn aggregate(ledgers: &[EnergyLedger], weights: &EnsembleWeights) -> Result<EnsembleReport> {
    let included: Vec<&EnergyLedger> = ledgers.iter().filter(|l| !l.excluded).collect();
    if included.is_empty() {
        return Err(Error::config("empty ensemble: no included ledgers"));
    }
    let times = included[0].times.clone();
    let n_times = times.len();
    for l in &included {
        if l.times.len() != n_times {
            return Err(Error::config("ledgers disagree on the time grid"));
        }
    }
    let monte_carlo = matches!(weights, EnsembleWeights::Uniform);
    let w: Vec<f64> = included
        .iter()
        .map(|l| weights.weight(l.sample_id))
        .collect();
    let w_total: f64 = w.iter().sum();
    let n = included.len();

    let mut report = EnsembleReport {
        times,
        mean_u: Vec::with_capacity(n_times),
        se_u: Vec::with_capacity(n_times),
        mean_du_ext: Vec::with_capacity(n_times),
        se_du_ext: Vec::with_capacity(n_times),
        mean_du_int: Vec::with_capacity(n_times),
        se_du_int: Vec::with_capacity(n_times),
        mean_du_ent: Vec::with_capacity(n_times),
        se_du_ent: Vec::with_capacity(n_times),
        mean_cum_ext: Vec::with_capacity(n_times),
        mean_cum_int: Vec::with_capacity(n_times),
        mean_cum_ent: Vec::with_capacity(n_times),
        var_total: Vec::with_capacity(n_times),
        var_int: Vec::with_capacity(n_times),
        var_ent: Vec::with_capacity(n_times),
        cov_int_ent: Vec::with_capacity(n_times),
        n_effective: n,
        monte_carlo,
        expectation_hs: Vec::new(),
        u_of_y_table: Vec::new(),
    };

    let mean_se = |values: &dyn Fn(&EnergyLedger) -> f64| -> (f64, f64) {
        let mut mean = 0.0;
        for (l, wi) in included.iter().zip(&w) {
            mean += wi * values(l);
        }
        mean /= w_total;
        let se = if monte_carlo && n > 1 {
            let var: f64 = included
                .iter()
                .map(|l| (values(l) - mean).powi(2))
                .sum::<f64>()
                / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        (mean, se)
    };

    for k in 0..n_times {
        let (m, s) = mean_se(&|l: &EnergyLedger| l.u[k]);
        report.mean_u.push(m);
        report.se_u.push(s);
        let (m, s) = mean_se(&|l: &EnergyLedger| l.du_ext[k]);
        report.mean_du_ext.push(m);
        report.se_du_ext.push(s);
        let (m, s) = mean_se(&|l: &EnergyLedger| l.du_int[k]);
        report.mean_du_int.push(m);
        report.se_du_int.push(s);
        let (m, s) = mean_se(&|l: &EnergyLedger| l.du_ent[k]);
        report.mean_du_ent.push(m);
        report.se_du_ent.push(s);

        // first and second moments of the cumulative components
        let mut m_ext = 0.0;
        let mut m_int = 0.0;
        let mut m_ent = 0.0;
        for (l, wi) in included.iter().zip(&w) {
            m_ext += wi * l.cum_ext[k];
            m_int += wi * l.cum_int[k];
            m_ent += wi * l.cum_ent[k];
        }
        m_ext /= w_total;
        m_int /= w_total;
        m_ent /= w_total;
        report.mean_cum_ext.push(m_ext);
        report.mean_cum_int.push(m_int);
        report.mean_cum_ent.push(m_ent);
        let mut v_int = 0.0;
        let mut v_ent = 0.0;
        let mut cov = 0.0;
        for (l, wi) in included.iter().zip(&w) {
            let di = l.cum_int[k] - m_int;
            let de = l.cum_ent[k] - m_ent;
            v_int += wi * di * di;
            v_ent += wi * de * de;
            cov += wi * di * de;
        }
        v_int /= w_total;
        v_ent /= w_total;
        cov /= w_total;
        report.var_int.push(v_int);
        report.var_ent.push(v_ent);
        report.cov_int_ent.push(cov);
        report.var_total.push(v_int + v_ent + 2.0 * cov);
    }
    Ok(report)
}

/// Fill the snapshot-derived columns: <H_S>(t) and the u(t, y) table.
pub fn attach_snapshot_expectations(
    report: &mut EnsembleReport,
    series: &SnapshotSeries,
    spec: &HamiltonianSpec,
) -> Result<()> {
    if series.len() != report.times.len() {
        return Err(Error::config("snapshot series does not match report times"));
    }
    report.expectation_hs = series
        .states
        .iter()
        .map(|s| spec.expectation_system(s, s.time))
        .collect();
    report.u_of_y_table = series
        .states
        .iter()
        .map(|s| crate::conditional::conditional_energy_profile(s, spec).map(|(u, _)| u))
        .collect::<Result<Vec<_>>>()?;
    Ok(())
}

/// Residual of the ensemble-mean conditional energy against the canonical
/// expectation value of H_S, per time.
pub fn mean_energy_residual(report: &EnsembleReport) -> Vec<f64> {
    report
        .mean_u
        .iter()
        .zip(&report.expectation_hs)
        .map(|(m, e)| (m - e).abs())
        .collect()
}

/// Residuals of the averaged flow identities per time: the drive power
/// Tr{sigma dH_S/dt} must equal the mean external rate, and the remainder
/// of d<H_S>/dt must equal the mean interaction + entanglement rate.
pub fn flow_average_residuals(
    report: &EnsembleReport,
    series: &SnapshotSeries,
    spec: &HamiltonianSpec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = report.times.len();
    let drive_power: Vec<f64> = series
        .states
        .iter()
        .map(|s| spec.expectation_dh_s_dt(s, s.time))
        .collect::<Result<Vec<_>>>()?;
    // finite-difference derivative of <H_S> on the snapshot grid
    let h = if n > 1 {
        report.times[1] - report.times[0]
    } else {
        1.0
    };
    let e = &report.expectation_hs;
    let mut de = vec![0.0; n];
    if n >= 3 {
        for k in 1..n - 1 {
            de[k] = (e[k + 1] - e[k - 1]) / (2.0 * h);
        }
        de[0] = (-3.0 * e[0] + 4.0 * e[1] - e[2]) / (2.0 * h);
        de[n - 1] = (3.0 * e[n - 1] - 4.0 * e[n - 2] + e[n - 3]) / (2.0 * h);
    }
    let res_drive = (0..n)
        .map(|k| (drive_power[k] - report.mean_du_ext[k]).abs())
        .collect();
    let res_split = (0..n)
        .map(|k| (de[k] - drive_power[k] - (report.mean_du_int[k] + report.mean_du_ent[k])).abs())
        .collect();
    Ok((res_drive, res_split))
}

/// The positional kernel of the interaction part of the conditional
/// density-operator rate, s(x, y) = 2 Im( Psi* (H_int Psi) ) pointwise
/// (identically zero for positional couplings, which are diagonal).
fn interaction_slice_rate(psi: &JointWaveFunction, spec: &HamiltonianSpec) -> ndarray::Array2<f64> {
    let grid = &psi.grid;
    let mut s = ndarray::Array2::<f64>::zeros((grid.nx, grid.ny));
    if spec.has_momentum_coupling() {
        for a in &psi.amplitudes {
            let dxy = state::cross_xy(grid, a);
            ndarray::Zip::from(&mut s)
                .and(a)
                .and(&dxy)
                .for_each(|sv, av, dv| {
                    *sv += 2.0 * spec.p_coupling * (av.conj() * dv).im;
                });
        }
    } else if !spec.v_int.is_zero() {
        let t = psi.time;
        for a in &psi.amplitudes {
            for ((i, j), v) in a.indexed_iter() {
                let vint = spec.v_int.eval(grid.x(i), grid.y(j), t);
                s[(i, j)] += 2.0 * (v.conj() * (vint * v)).im;
            }
        }
    }
    s
}

/// Ensemble-average entanglement flow rate evaluated as the
/// configuration-space integral of u(t, y) against the interaction slice
/// rate (the commutator form reduced to its positional kernel).
pub fn avg_ent_rate_commutator(
    psi: &JointWaveFunction,
    spec: &HamiltonianSpec,
    u_of_y: &[f64],
) -> f64 {
    let grid = &psi.grid;
    let s = interaction_slice_rate(psi, spec);
    let da = grid.cell_area();
    let mut acc = 0.0;
    for ((_i, j), sv) in s.indexed_iter() {
        acc += u_of_y[j] * sv;
    }
    acc * da
}

/// Trajectory-free estimator of the ensemble-average entanglement rate:
/// the Born-weighted configuration-space average of the per-slice
/// entanglement term, with the velocity-dependent part integrated against
/// the exact probability current. Derived from equivariance; no
/// trajectories are integrated.
pub fn ent_rate_configuration_estimate(
    psi: &JointWaveFunction,
    spec: &HamiltonianSpec,
) -> Result<f64> {
    let grid = psi.grid;
    let ctx = SliceContext::new(psi, spec)?;
    let field = crate::trajectories::VelocityField::new(psi, spec);
    let dx_cell = grid.dx();
    let mut total = 0.0;
    for j in 0..grid.ny {
        let y = grid.y(j);
        // row weight and the x-integrated y-current of the generator
        let mut w = 0.0;
        let mut current = 0.0;
        for i in 0..grid.nx {
            let (_jx, jy, rho) = field.current_at_node(i, j);
            w += rho;
            current += jy;
        }
        w *= dx_cell;
        current *= dx_cell;
        let (ent0, ent1) = match (ctx.evaluate(y, 0.0, None), ctx.evaluate(y, 1.0, None)) {
            (Ok((_, t0)), Ok((_, t1))) => (t0.ent, t1.ent),
            (Err(Error::DegenerateSlice { .. }), _) | (_, Err(Error::DegenerateSlice { .. })) => {
                continue
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        // du_ent(x, y) = ent0(y) + v_y(x, y) * (ent1(y) - ent0(y));
        // integrating v_y against the density gives the current
        total += (w * ent0 + current * (ent1 - ent0)) * grid.dy();
    }
    Ok(total)
}

/// The variance-decomposition series (total, interaction, entanglement,
/// covariance) of the cumulative energy components.
pub fn variance_decomposition(report: &EnsembleReport) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    (
        report.var_total.clone(),
        report.var_int.clone(),
        report.var_ent.clone(),
        report.cov_int_ent.clone(),
    )
}

/// Convenience: u(t, y) row for a single snapshot (used by the commutator
/// estimator without a full report).
pub fn u_profile(psi: &JointWaveFunction, spec: &HamiltonianSpec) -> Result<Vec<f64>> {
    crate::conditional::conditional_energy_profile(psi, spec).map(|(u, _)| u)
}
