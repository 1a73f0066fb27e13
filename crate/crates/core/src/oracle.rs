//! Independent reference implementations used for cross-validation:
//! a dense centered-difference evolver of the same right-hand side, and
//! the closed moment ODE system
//!
//! ```text
//! d<q>/dt  = <p>/m
//! d<p>/dt  = -c1 - k<q> - 2 gamma <p>
//! d<q2>/dt = 2<qp>/m
//! d<qp>/dt = <p2>/m - c1<q> - k<q2> - 2 gamma <qp>
//! d<p2>/dt = -2 c1 <p> - 2k<qp> - 4 gamma <p2> + 2D
//! ```
//!
//! which is exact for potentials of degree at most two (with
//! `U = c0 + c1 q + (k/2) q^2`). The finite-difference path shares no
//! numerics with the wavelet solver: stencils, right-hand-side assembly,
//! and the integrator are written independently here, on the common grid
//! and state types only.

use ndarray::Array2;

use crate::error::{PhaseSpaceError, SolverError};
use crate::evolve::{DiagnosticsRow, Trajectory};
use crate::moyal::{moyal_series, LindbladParams, PolynomialPotential};
use crate::phase_space::WignerState;

/// Closed first/second-moment dynamics for a quadratic potential.
#[derive(Debug, Clone, Copy)]
pub struct MomentOdeSystem {
    pub mass: f64,
    /// Spring constant `k = U''` (so `U` contains `(k/2) q^2`).
    pub spring_k: f64,
    /// Constant force offset `c1 = U'(0)`.
    pub linear_c1: f64,
    pub gamma: f64,
    pub diffusion: f64,
}

/// Moment vector `(<q>, <p>, <q^2>, <qp>, <p^2>)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub q_mean: f64,
    pub p_mean: f64,
    pub q2: f64,
    pub qp: f64,
    pub p2: f64,
}

impl Moments {
    /// Measure from a state (uses the symmetrized `<qp>`, which is what
    /// the real-valued phase-space quadrature computes).
    pub fn measure(state: &WignerState) -> Result<Self, PhaseSpaceError> {
        let m = state.moments(2)?;
        Ok(Moments {
            q_mean: m[&(1, 0)],
            p_mean: m[&(0, 1)],
            q2: m[&(2, 0)],
            qp: m[&(1, 1)],
            p2: m[&(0, 2)],
        })
    }
}

impl MomentOdeSystem {
    /// Derive the system from a potential of degree <= 2.
    pub fn from_potential(
        potential: &PolynomialPotential,
        mass: f64,
        lindblad: LindbladParams,
    ) -> Result<Self, SolverError> {
        if potential.degree() > 2 {
            return Err(SolverError::UnsupportedOracle {
                degree: potential.degree(),
            });
        }
        let c = potential.coefficients();
        let linear_c1 = c.get(1).copied().unwrap_or(0.0);
        let spring_k = 2.0 * c.get(2).copied().unwrap_or(0.0);
        Ok(MomentOdeSystem {
            mass,
            spring_k,
            linear_c1,
            gamma: lindblad.gamma,
            diffusion: lindblad.diffusion,
        })
    }

    fn rhs(&self, m: &Moments) -> Moments {
        let inv_m = 1.0 / self.mass;
        Moments {
            q_mean: m.p_mean * inv_m,
            p_mean: -self.linear_c1 - self.spring_k * m.q_mean - 2.0 * self.gamma * m.p_mean,
            q2: 2.0 * m.qp * inv_m,
            qp: m.p2 * inv_m
                - self.linear_c1 * m.q_mean
                - self.spring_k * m.q2
                - 2.0 * self.gamma * m.qp,
            p2: -2.0 * self.linear_c1 * m.p_mean - 2.0 * self.spring_k * m.qp
                - 4.0 * self.gamma * m.p2
                + 2.0 * self.diffusion,
        }
    }

    fn rk4_step(&self, m: &Moments, dt: f64) -> Moments {
        let add = |a: &Moments, b: &Moments, s: f64| Moments {
            q_mean: a.q_mean + s * b.q_mean,
            p_mean: a.p_mean + s * b.p_mean,
            q2: a.q2 + s * b.q2,
            qp: a.qp + s * b.qp,
            p2: a.p2 + s * b.p2,
        };
        let k1 = self.rhs(m);
        let k2 = self.rhs(&add(m, &k1, 0.5 * dt));
        let k3 = self.rhs(&add(m, &k2, 0.5 * dt));
        let k4 = self.rhs(&add(m, &k3, dt));
        let mut out = *m;
        out = add(&out, &k1, dt / 6.0);
        out = add(&out, &k2, dt / 3.0);
        out = add(&out, &k3, dt / 3.0);
        out = add(&out, &k4, dt / 6.0);
        out
    }
}

/// Integrate the moment system, returning the moments at each requested
/// time (which must be non-decreasing, starting at or after zero).
pub fn moment_ode_solve(
    system: &MomentOdeSystem,
    initial: Moments,
    times: &[f64],
) -> Vec<Moments> {
    let dt_max: f64 = 1e-4;
    let mut out = Vec::with_capacity(times.len());
    let mut t = 0.0;
    let mut m = initial;
    for &target in times {
        assert!(target >= t - 1e-12, "times must be non-decreasing");
        while target - t > 1e-15 {
            let dt = dt_max.min(target - t);
            m = system.rk4_step(&m, dt);
            t += dt;
        }
        out.push(m);
    }
    out
}

/// 4th-order centered periodic difference stencils, offsets -3..=3.
fn fd_taps(order: usize) -> Vec<(isize, f64)> {
    match order {
        1 => vec![(-2, 1.0 / 12.0), (-1, -2.0 / 3.0), (1, 2.0 / 3.0), (2, -1.0 / 12.0)],
        2 => vec![
            (-2, -1.0 / 12.0),
            (-1, 4.0 / 3.0),
            (0, -5.0 / 2.0),
            (1, 4.0 / 3.0),
            (2, -1.0 / 12.0),
        ],
        3 => vec![
            (-3, 1.0 / 8.0),
            (-2, -1.0),
            (-1, 13.0 / 8.0),
            (1, -13.0 / 8.0),
            (2, 1.0),
            (3, -1.0 / 8.0),
        ],
        4 => vec![
            (-3, -1.0 / 6.0),
            (-2, 2.0),
            (-1, -13.0 / 2.0),
            (0, 28.0 / 3.0),
            (1, -13.0 / 2.0),
            (2, 2.0),
            (3, -1.0 / 6.0),
        ],
        _ => panic!("finite-difference reference supports derivative orders 1..=4"),
    }
}

struct FdRhs {
    mass: f64,
    lindblad: LindbladParams,
    /// `(taps over p scaled by dp^-n, q weights)` per potential term.
    terms: Vec<(Vec<(isize, f64)>, Vec<f64>)>,
    dq_taps: Vec<(isize, f64)>,
    dp1_taps: Vec<(isize, f64)>,
    dp2_taps: Vec<(isize, f64)>,
    neg_p_over_m: Vec<f64>,
    p_values: Vec<f64>,
}

fn scaled_taps(order: usize, spacing: f64) -> Vec<(isize, f64)> {
    let scale = spacing.powi(-(order as i32));
    fd_taps(order).into_iter().map(|(l, w)| (l, w * scale)).collect()
}

fn apply_rows(taps: &[(isize, f64)], field: &Array2<f64>) -> Array2<f64> {
    let (nq, np) = field.dim();
    let mut out = Array2::zeros((nq, np));
    for i in 0..nq {
        for j in 0..np {
            let mut acc = 0.0;
            for &(l, w) in taps {
                let jj = (j as isize + l).rem_euclid(np as isize) as usize;
                acc += w * field[[i, jj]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

fn apply_cols(taps: &[(isize, f64)], field: &Array2<f64>) -> Array2<f64> {
    let (nq, np) = field.dim();
    let mut out = Array2::zeros((nq, np));
    for i in 0..nq {
        for j in 0..np {
            let mut acc = 0.0;
            for &(l, w) in taps {
                let ii = (i as isize + l).rem_euclid(nq as isize) as usize;
                acc += w * field[[ii, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

impl FdRhs {
    fn eval(&self, w: &Array2<f64>) -> Array2<f64> {
        let (nq, np) = w.dim();
        let mut out = Array2::zeros((nq, np));
        if self.mass.is_finite() {
            let dqw = apply_cols(&self.dq_taps, w);
            for i in 0..nq {
                for j in 0..np {
                    out[[i, j]] += self.neg_p_over_m[j] * dqw[[i, j]];
                }
            }
        }
        for (taps, weights) in &self.terms {
            let d = apply_rows(taps, w);
            for i in 0..nq {
                if weights[i] == 0.0 {
                    continue;
                }
                for j in 0..np {
                    out[[i, j]] += weights[i] * d[[i, j]];
                }
            }
        }
        if self.lindblad.gamma > 0.0 {
            let mut pw = w.clone();
            for i in 0..nq {
                for j in 0..np {
                    pw[[i, j]] *= self.p_values[j];
                }
            }
            let d = apply_rows(&self.dp1_taps, &pw);
            let g2 = 2.0 * self.lindblad.gamma;
            out.zip_mut_with(&d, |o, &v| *o += g2 * v);
        }
        if self.lindblad.diffusion > 0.0 {
            let d = apply_rows(&self.dp2_taps, w);
            let dc = self.lindblad.diffusion;
            out.zip_mut_with(&d, |o, &v| *o += dc * v);
        }
        out
    }
}

/// Evolve the same physics with the independent finite-difference
/// discretization and its own RK4 loop. Intended for desk-scale
/// cross-checks; grids above 512 per axis are rejected.
#[allow(clippy::too_many_arguments)]
pub fn dense_reference_evolve(
    initial: &WignerState,
    potential: &PolynomialPotential,
    mass: f64,
    lindblad: LindbladParams,
    t_final: f64,
    dt: f64,
    diagnostics_stride: usize,
    snapshot_stride: usize,
) -> Result<Trajectory, SolverError> {
    let grid = initial.grid().clone();
    if grid.nq > 512 || grid.np > 512 {
        return Err(SolverError::PhaseSpace(PhaseSpaceError::BadExtent {
            context: format!(
                "dense reference limited to 512x512, got {}x{}",
                grid.nq, grid.np
            ),
        }));
    }
    if !(dt > 0.0) {
        return Err(SolverError::NonPositiveStep { dt });
    }

    let terms: Vec<(Vec<(isize, f64)>, Vec<f64>)> = moyal_series(potential, grid.hbar)
        .iter()
        .map(|t| {
            let taps = scaled_taps(t.p_derivative_order, grid.dp());
            let weights: Vec<f64> = grid
                .q_axis()
                .iter()
                .map(|&q| t.prefactor * t.u_derivative.eval(q))
                .collect();
            (taps, weights)
        })
        .collect();

    let rhs = FdRhs {
        mass,
        lindblad,
        terms,
        dq_taps: scaled_taps(1, grid.dq()),
        dp1_taps: scaled_taps(1, grid.dp()),
        dp2_taps: scaled_taps(2, grid.dp()),
        neg_p_over_m: grid.p_axis().iter().map(|&p| -p / mass).collect(),
        p_values: grid.p_axis(),
    };

    let mut values = initial.values().clone();
    let mut time = 0.0;
    let mk_state = |v: &Array2<f64>, t: f64| {
        let mut s = WignerState::new(grid.clone(), v.clone(), t).expect("shape");
        s.set_time(t);
        s
    };
    let mut trajectory = Trajectory {
        snapshots: vec![mk_state(&values, 0.0)],
        diagnostics: vec![DiagnosticsRow::measure(&mk_state(&values, 0.0))],
    };

    let n_steps = (t_final / dt).ceil().max(1.0) as usize;
    for step in 1..=n_steps {
        let target = (step as f64 * dt).min(t_final);
        let this_dt = target - time;
        let before = values.iter().fold(0.0f64, |m, &v| m.max(v.abs()));

        let k1 = rhs.eval(&values);
        let mut stage = &values + &(0.5 * this_dt * &k1);
        let k2 = rhs.eval(&stage);
        stage = &values + &(0.5 * this_dt * &k2);
        let k3 = rhs.eval(&stage);
        stage = &values + &(this_dt * &k3);
        let k4 = rhs.eval(&stage);
        values = &values + &((this_dt / 6.0) * &(&k1 + &(2.0 * &k2) + &(2.0 * &k3) + &k4));
        time = target;

        let after = values.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if after > 10.0 * before.max(1e-12) {
            return Err(SolverError::Instability {
                time,
                before,
                after,
            });
        }
        let at_end = step == n_steps;
        if diagnostics_stride > 0 && (step % diagnostics_stride == 0 || at_end) {
            trajectory.diagnostics.push(DiagnosticsRow::measure(&mk_state(&values, time)));
        }
        if (snapshot_stride > 0 && step % snapshot_stride == 0) || at_end {
            trajectory.snapshots.push(mk_state(&values, time));
        }
    }
    Ok(trajectory)
}

/// Conservative explicit step for the finite-difference assembly, built
/// from the same advective/diffusive limits as the wavelet path but with
/// the FD symbol bounds.
pub fn fd_dt_auto(
    grid: &crate::phase_space::PhaseSpaceGrid,
    potential: &PolynomialPotential,
    mass: f64,
    lindblad: LindbladParams,
) -> f64 {
    let sym = |order: usize| -> f64 {
        fd_taps(order).iter().map(|(_, w)| w.abs()).sum::<f64>()
    };
    let mut lambda = 0.0f64;
    if mass.is_finite() {
        lambda += grid.max_abs_p() / mass * sym(1) / grid.dq();
    }
    for t in moyal_series(potential, grid.hbar) {
        let coef = grid
            .q_axis()
            .iter()
            .fold(0.0f64, |m, &q| m.max((t.prefactor * t.u_derivative.eval(q)).abs()));
        lambda += coef * sym(t.p_derivative_order) / grid.dp().powi(t.p_derivative_order as i32);
    }
    if lindblad.gamma > 0.0 {
        lambda += 2.0 * lindblad.gamma * (grid.max_abs_p() * sym(1) / grid.dp() + 1.0);
    }
    if lindblad.diffusion > 0.0 {
        lambda += lindblad.diffusion * sym(2) / (grid.dp() * grid.dp());
    }
    if lambda > 0.0 {
        0.5 * 2.78 / lambda
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::{weyl_transform, PhaseSpaceGrid, Wavefunction};

    #[test]
    fn moment_oracle_rejects_anharmonic_potentials() {
        let quartic = PolynomialPotential::new(vec![0.0, 0.0, 0.0, 0.0, 0.1]);
        assert!(matches!(
            MomentOdeSystem::from_potential(&quartic, 1.0, LindbladParams::closed()),
            Err(SolverError::UnsupportedOracle { degree: 4 })
        ));
    }

    #[test]
    fn closed_harmonic_moments_rotate() {
        let sys = MomentOdeSystem {
            mass: 1.0,
            spring_k: 1.0,
            linear_c1: 0.0,
            gamma: 0.0,
            diffusion: 0.0,
        };
        let initial = Moments {
            q_mean: 1.0,
            p_mean: 0.0,
            q2: 1.5,
            qp: 0.0,
            p2: 0.5,
        };
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.5).collect();
        let solution = moment_ode_solve(&sys, initial, &times);
        for (t, m) in times.iter().zip(&solution) {
            assert!((m.q_mean - t.cos()).abs() < 1e-8, "q(t={t}) = {}", m.q_mean);
            assert!((m.p_mean + t.sin()).abs() < 1e-8, "p(t={t}) = {}", m.p_mean);
        }
    }

    #[test]
    fn pure_diffusion_heats_momentum_linearly() {
        let sys = MomentOdeSystem {
            mass: 1.0,
            spring_k: 0.0,
            linear_c1: 0.0,
            gamma: 0.0,
            diffusion: 0.3,
        };
        let initial = Moments {
            q_mean: 0.0,
            p_mean: 0.0,
            q2: 0.5,
            qp: 0.0,
            p2: 0.5,
        };
        let times = [0.0, 1.0, 2.5, 5.0];
        let sol = moment_ode_solve(&sys, initial, &times);
        for (t, m) in times.iter().zip(&sol) {
            let expected = 0.5 + 2.0 * 0.3 * t;
            assert!((m.p2 - expected).abs() < 1e-9, "p2(t={t}) = {}", m.p2);
        }
    }

    #[test]
    fn damped_system_approaches_stationary_covariance() {
        let (k, gamma, d) = (1.0, 0.25, 0.4);
        let sys = MomentOdeSystem {
            mass: 1.0,
            spring_k: k,
            linear_c1: 0.0,
            gamma,
            diffusion: d,
        };
        let initial = Moments {
            q_mean: 2.0,
            p_mean: -1.0,
            q2: 5.0,
            qp: 0.3,
            p2: 1.0,
        };
        let sol = moment_ode_solve(&sys, initial, &[80.0]);
        let m = sol[0];
        // Stationary solution of the linear system.
        let p2_inf = d / (2.0 * gamma);
        let q2_inf = p2_inf / k;
        assert!(m.q_mean.abs() < 1e-8);
        assert!(m.p_mean.abs() < 1e-8);
        assert!((m.p2 - p2_inf).abs() < 1e-8, "p2 -> {}", m.p2);
        assert!((m.q2 - q2_inf).abs() < 1e-8, "q2 -> {}", m.q2);
        assert!(m.qp.abs() < 1e-8);
    }

    #[test]
    fn fd_harmonic_period_returns_to_start() {
        let grid = PhaseSpaceGrid::new(-8.0, 8.0, -8.0, 8.0, 256, 256, 1.0).unwrap();
        let psi = Wavefunction::coherent(&grid, 1.0, 0.0, 1.0, 1.0, 1.0);
        let w = weyl_transform(&psi, &grid).unwrap();
        let u = PolynomialPotential::harmonic(1.0);
        let dt = fd_dt_auto(&grid, &u, 1.0, LindbladParams::closed());
        let traj = dense_reference_evolve(
            &w,
            &u,
            1.0,
            LindbladParams::closed(),
            2.0 * std::f64::consts::PI,
            dt,
            0,
            0,
        )
        .unwrap();
        let rel = traj.final_state().l2_diff(&w) / w.square_integral().sqrt();
        assert!(rel < 1e-3, "period return error {rel}");
    }

    #[test]
    fn fd_free_motion_is_a_shear() {
        let grid = PhaseSpaceGrid::new(-10.0, 10.0, -6.0, 6.0, 128, 128, 1.0).unwrap();
        let psi = Wavefunction::coherent(&grid, 0.0, 0.0, 1.0, 1.0, 1.0);
        let w = weyl_transform(&psi, &grid).unwrap();
        let u = PolynomialPotential::zero();
        let t_final = 0.5;
        let dt = fd_dt_auto(&grid, &u, 1.0, LindbladParams::closed());
        let traj =
            dense_reference_evolve(&w, &u, 1.0, LindbladParams::closed(), t_final, dt, 0, 0)
                .unwrap();
        // Exact solution: W(q, p, t) = W0(q - p t / m, p).
        let mut worst = 0.0f64;
        let end = traj.final_state();
        for i in 0..grid.nq {
            for j in 0..grid.np {
                let (q, p) = (grid.q(i), grid.p(j));
                let exact = (-(q - p * t_final) * (q - p * t_final) - p * p).exp()
                    / std::f64::consts::PI;
                worst = worst.max((end.values()[[i, j]] - exact).abs());
            }
        }
        assert!(worst < 2e-4, "shear error {worst}");
    }

    #[test]
    fn oversized_grid_rejected() {
        let grid = PhaseSpaceGrid::new(-8.0, 8.0, -8.0, 8.0, 1024, 1024, 1.0).unwrap();
        let w = WignerState::zeros(grid);
        assert!(dense_reference_evolve(
            &w,
            &PolynomialPotential::zero(),
            1.0,
            LindbladParams::closed(),
            0.1,
            1e-3,
            0,
            0,
        )
        .is_err());
    }
}
