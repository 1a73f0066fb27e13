//! Explicit RK4 time integration with trajectory diagnostics and the
//! level-adaptive resolution sweep driven by the coefficient-decay cutoff
//! `||W at level N+1 - W at level N|| <= epsilon`.

use ndarray::{Array2, Zip};

use crate::error::{PhaseSpaceError, SolverError};
use crate::moyal::EvolutionOperator;
use crate::mra::{forward_fwt, project_level};
use crate::phase_space::{PhaseSpaceGrid, WignerState};
use crate::util::log2_exact;
use crate::wavelet::FilterPair;

/// Integration and resolution-control settings for one run.
#[derive(Debug, Clone)]
pub struct EvolutionConfig {
    pub t_final: f64,
    /// Fixed step, or `None` to use the operator's automatic bound.
    pub dt: Option<f64>,
    /// Cutoff for the level sweep.
    pub epsilon_level: f64,
    pub min_levels: usize,
    pub max_levels: usize,
    /// Record a snapshot every this many steps (0: initial and final only).
    pub snapshot_stride: usize,
    /// Record diagnostics (and re-check the boundary guard) every this
    /// many steps.
    pub diagnostics_stride: usize,
    pub boundary_guard: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            t_final: 1.0,
            dt: None,
            epsilon_level: 1e-4,
            min_levels: 6,
            max_levels: 9,
            snapshot_stride: 0,
            diagnostics_stride: 10,
            boundary_guard: crate::phase_space::DEFAULT_BOUNDARY_GUARD,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(SolverError::NonPositiveStep { dt });
            }
        }
        if !(self.t_final > 0.0) {
            return Err(SolverError::NonPositiveStep { dt: self.t_final });
        }
        if self.min_levels > self.max_levels || self.max_levels > 12 {
            return Err(SolverError::PhaseSpace(PhaseSpaceError::BadExtent {
                context: format!(
                    "level range {}..{} invalid (max 12)",
                    self.min_levels, self.max_levels
                ),
            }));
        }
        Ok(())
    }
}

/// One row of scalar diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct DiagnosticsRow {
    pub time: f64,
    pub norm: f64,
    pub purity: f64,
    pub negativity: f64,
    pub q_mean: f64,
    pub p_mean: f64,
    pub q_var: f64,
    pub p_var: f64,
    /// Square-integral inner product of the state with itself.
    pub fock_norm: f64,
}

impl DiagnosticsRow {
    pub fn measure(state: &WignerState) -> Self {
        let m = state.moments(2).expect("order 2 moments");
        let norm = m[&(0, 0)];
        let q_mean = m[&(1, 0)];
        let p_mean = m[&(0, 1)];
        DiagnosticsRow {
            time: state.time(),
            norm,
            purity: state.purity(),
            negativity: state.negativity_volume(),
            q_mean,
            p_mean,
            q_var: m[&(2, 0)] - q_mean * q_mean,
            p_var: m[&(0, 2)] - p_mean * p_mean,
            fock_norm: state.square_integral(),
        }
    }
}

/// Recorded evolution: snapshot states plus the diagnostics time series.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub snapshots: Vec<WignerState>,
    pub diagnostics: Vec<DiagnosticsRow>,
}

impl Trajectory {
    pub fn final_state(&self) -> &WignerState {
        self.snapshots.last().expect("trajectory has snapshots")
    }
}

fn max_abs(values: &Array2<f64>) -> f64 {
    values.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
}

/// Reusable buffers for one integration loop: right-hand-side scratch
/// plus the stage and slope matrices of the RK4 scheme.
#[derive(Debug, Clone)]
pub struct StepScratch {
    rhs: crate::moyal::RhsScratch,
    k: Array2<f64>,
    stage: Array2<f64>,
}

impl StepScratch {
    pub fn for_grid(grid: &PhaseSpaceGrid) -> Self {
        StepScratch {
            rhs: crate::moyal::RhsScratch::for_grid(grid),
            k: Array2::zeros((grid.nq, grid.np)),
            stage: Array2::zeros((grid.nq, grid.np)),
        }
    }
}

/// Allocation-free RK4 kernel on raw value matrices; `time` is only used
/// for error reporting.
fn rk4_step_values(
    op: &EvolutionOperator,
    w: &Array2<f64>,
    dt: f64,
    time: f64,
    out: &mut Array2<f64>,
    ws: &mut StepScratch,
) -> Result<(), SolverError> {
    if !(dt > 0.0) {
        return Err(SolverError::NonPositiveStep { dt });
    }
    let before = max_abs(w);
    let (sixth, third, half) = (dt / 6.0, dt / 3.0, dt / 2.0);

    op.apply_rhs_into(&w.view(), &mut ws.k, &mut ws.rhs);
    out.assign(w);
    Zip::from(&mut *out).and(&ws.k).for_each(|o, &k| *o += sixth * k);
    ws.stage.assign(w);
    Zip::from(&mut ws.stage).and(&ws.k).for_each(|s, &k| *s += half * k);

    let (stage_view, k_buf, rhs_buf) = (&ws.stage, &mut ws.k, &mut ws.rhs);
    op.apply_rhs_into(&stage_view.view(), k_buf, rhs_buf);
    Zip::from(&mut *out).and(&ws.k).for_each(|o, &k| *o += third * k);
    ws.stage.assign(w);
    Zip::from(&mut ws.stage).and(&ws.k).for_each(|s, &k| *s += half * k);

    let (stage_view, k_buf, rhs_buf) = (&ws.stage, &mut ws.k, &mut ws.rhs);
    op.apply_rhs_into(&stage_view.view(), k_buf, rhs_buf);
    Zip::from(&mut *out).and(&ws.k).for_each(|o, &k| *o += third * k);
    ws.stage.assign(w);
    Zip::from(&mut ws.stage).and(&ws.k).for_each(|s, &k| *s += dt * k);

    let (stage_view, k_buf, rhs_buf) = (&ws.stage, &mut ws.k, &mut ws.rhs);
    op.apply_rhs_into(&stage_view.view(), k_buf, rhs_buf);
    Zip::from(&mut *out).and(&ws.k).for_each(|o, &k| *o += sixth * k);

    let after = max_abs(out);
    if after > 10.0 * before.max(1e-12) {
        return Err(SolverError::Instability {
            time,
            before,
            after,
        });
    }
    Ok(())
}

/// One classical fourth-order step. Aborts when the state magnitude grows
/// more than tenfold within the step.
pub fn step_rk4(
    state: &WignerState,
    op: &EvolutionOperator,
    dt: f64,
) -> Result<WignerState, SolverError> {
    let mut ws = StepScratch::for_grid(state.grid());
    let mut next = Array2::zeros(state.values().raw_dim());
    rk4_step_values(op, state.values(), dt, state.time(), &mut next, &mut ws)?;
    let mut out = WignerState::new(state.grid().clone(), next, state.time())?;
    out.set_time(state.time() + dt);
    Ok(out)
}

/// Stepper owning its buffers, stepping raw matrices in place.
pub(crate) struct Integrator {
    ws: StepScratch,
    next: Array2<f64>,
}

impl Integrator {
    pub(crate) fn new(grid: &PhaseSpaceGrid) -> Self {
        Integrator {
            ws: StepScratch::for_grid(grid),
            next: Array2::zeros((grid.nq, grid.np)),
        }
    }

    pub(crate) fn advance(
        &mut self,
        op: &EvolutionOperator,
        values: &mut Array2<f64>,
        time: f64,
        dt: f64,
    ) -> Result<(), SolverError> {
        rk4_step_values(op, values, dt, time, &mut self.next, &mut self.ws)?;
        std::mem::swap(values, &mut self.next);
        Ok(())
    }
}

/// Integrate from `t = 0` (the initial state's clock is reset) to
/// `t_final`, recording snapshots and diagnostics at the configured
/// strides. The boundary guard is re-checked whenever diagnostics are
/// sampled.
pub fn evolve(
    initial: &WignerState,
    op: &EvolutionOperator,
    config: &EvolutionConfig,
) -> Result<Trajectory, SolverError> {
    config.validate()?;
    if initial.grid() != op.grid() {
        return Err(SolverError::PhaseSpace(PhaseSpaceError::GridMismatch {
            context: "initial state grid differs from operator grid".to_string(),
        }));
    }
    let dt = config.dt.unwrap_or_else(|| op.dt_auto());
    if !(dt > 0.0) {
        return Err(SolverError::NonPositiveStep { dt });
    }

    let grid = op.grid().clone();
    let mut values = initial.values().clone();
    let mut time = 0.0f64;
    let make_state = |values: &Array2<f64>, time: f64| -> WignerState {
        let mut s = WignerState::new(grid.clone(), values.clone(), time).expect("shape");
        s.set_time(time);
        s
    };

    let initial_state = make_state(&values, 0.0);
    initial_state.check_domain_coverage(config.boundary_guard)?;
    let mut trajectory = Trajectory {
        snapshots: vec![initial_state.clone()],
        diagnostics: vec![DiagnosticsRow::measure(&initial_state)],
    };

    let mut integrator = Integrator::new(&grid);
    let n_steps = (config.t_final / dt).ceil().max(1.0) as usize;
    for step in 1..=n_steps {
        let target = (step as f64 * dt).min(config.t_final);
        let this_dt = target - time;
        if this_dt <= 0.0 {
            break;
        }
        integrator.advance(op, &mut values, time, this_dt)?;
        time = target;

        let at_end = step == n_steps;
        if config.diagnostics_stride > 0 && (step % config.diagnostics_stride == 0 || at_end) {
            let state = make_state(&values, time);
            state.check_domain_coverage(config.boundary_guard)?;
            trajectory.diagnostics.push(DiagnosticsRow::measure(&state));
        }
        if (config.snapshot_stride > 0 && step % config.snapshot_stride == 0) || at_end {
            trajectory.snapshots.push(make_state(&values, time));
        }
    }
    Ok(trajectory)
}

/// Outcome of the resolution sweep.
#[derive(Debug, Clone)]
pub struct LevelSweep {
    /// First level whose refinement changed the answer by at most epsilon.
    pub selected: usize,
    /// `(coarser level, ||W at level+1 - W at level||)` in sweep order.
    pub differences: Vec<(usize, f64)>,
}

/// Run `solve_at(level)` for increasing per-axis resolution `2^level`,
/// measuring the L2 norm of consecutive differences (the finer solution is
/// restricted to the coarser grid by dyadic subsampling). Stops at the
/// first level meeting the cutoff; an infinite cutoff accepts the coarsest
/// level without refining.
pub fn level_refinement_run<F>(
    mut solve_at: F,
    min_levels: usize,
    max_levels: usize,
    epsilon: f64,
) -> Result<LevelSweep, SolverError>
where
    F: FnMut(usize) -> Result<WignerState, SolverError>,
{
    if epsilon.is_infinite() {
        return Ok(LevelSweep {
            selected: min_levels,
            differences: Vec::new(),
        });
    }
    let mut coarse = solve_at(min_levels)?;
    let mut differences = Vec::new();
    for level in min_levels..max_levels {
        let fine = solve_at(level + 1)?;
        let restricted = restrict_to_coarser(&fine, coarse.grid())?;
        let diff = restricted.l2_diff(&coarse);
        differences.push((level, diff));
        if diff <= epsilon {
            return Ok(LevelSweep {
                selected: level,
                differences,
            });
        }
        coarse = fine;
    }
    let achieved = differences.last().map(|&(_, d)| d).unwrap_or(f64::INFINITY);
    Err(SolverError::CutoffNotReached {
        achieved,
        epsilon,
        differences,
    })
}

/// Dyadic restriction: take every other sample in both axes. The fine
/// grid must have the same physical extents and twice the resolution.
pub fn restrict_to_coarser(
    fine: &WignerState,
    coarse_grid: &PhaseSpaceGrid,
) -> Result<WignerState, SolverError> {
    let fg = fine.grid();
    let extents_match = (fg.q_min - coarse_grid.q_min).abs() < 1e-12
        && (fg.q_max - coarse_grid.q_max).abs() < 1e-12
        && (fg.p_min - coarse_grid.p_min).abs() < 1e-12
        && (fg.p_max - coarse_grid.p_max).abs() < 1e-12;
    if !extents_match || fg.nq != 2 * coarse_grid.nq || fg.np != 2 * coarse_grid.np {
        return Err(SolverError::PhaseSpace(PhaseSpaceError::GridMismatch {
            context: format!(
                "cannot restrict {}x{} onto {}x{}",
                fg.nq, fg.np, coarse_grid.nq, coarse_grid.np
            ),
        }));
    }
    let values = Array2::from_shape_fn((coarse_grid.nq, coarse_grid.np), |(i, j)| {
        fine.values()[[2 * i, 2 * j]]
    });
    let mut out = WignerState::new(coarse_grid.clone(), values, fine.time())?;
    out.set_time(fine.time());
    Ok(out)
}

/// Orthogonal projection of a state onto resolution `level` along both
/// axes (tensor projection through the separable transform).
pub fn project_state(
    state: &WignerState,
    basis: &FilterPair,
    level: usize,
) -> Result<WignerState, SolverError> {
    let grid = state.grid();
    let jq = log2_exact(grid.nq).expect("validated grid");
    let jp = log2_exact(grid.np).expect("validated grid");
    let coarsest = level.min(jq).min(jp);
    let mut values = state.values().clone();
    // Rows (p axis).
    for i in 0..grid.nq {
        let row: Vec<f64> = values.row(i).to_vec();
        let coeffs = forward_fwt(&row, basis, coarsest)?;
        let projected = project_level(&coeffs, basis, coarsest.min(jp))?;
        values.row_mut(i).iter_mut().zip(projected).for_each(|(v, p)| *v = p);
    }
    // Columns (q axis).
    for j in 0..grid.np {
        let col: Vec<f64> = values.column(j).to_vec();
        let coeffs = forward_fwt(&col, basis, coarsest)?;
        let projected = project_level(&coeffs, basis, coarsest.min(jq))?;
        values.column_mut(j).iter_mut().zip(projected).for_each(|(v, p)| *v = p);
    }
    let mut out = WignerState::new(grid.clone(), values, state.time())?;
    out.set_time(state.time());
    Ok(out)
}
