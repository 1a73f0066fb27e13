//! Statistical ensembles as weighted mixtures of partial Wigner
//! functions. Weights form a simplex and are constants of the motion;
//! each member evolves under its own potential, and the members are
//! integrated in lock step so mixture diagnostics can be sampled along
//! the way.

use crate::error::{EnsembleError, SolverError};
use crate::evolve::{DiagnosticsRow, EvolutionConfig, Integrator, Trajectory};
use crate::moyal::{build_evolution_operator, EvolutionOperator, LindbladParams, PolynomialPotential};
use crate::phase_space::{PhaseSpaceGrid, WignerState};
use crate::util::pairwise_sum;
use crate::wavelet::FilterPair;

/// One weighted member: a partial Wigner function and the potential it
/// evolves under.
#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub weight: f64,
    pub state: WignerState,
    pub potential: PolynomialPotential,
}

/// Weighted mixture of partial Wigner functions on a shared grid.
#[derive(Debug, Clone)]
pub struct WignerEnsemble {
    members: Vec<EnsembleMember>,
}

impl WignerEnsemble {
    /// Validate the weight simplex (sum one within 1e-12, non-negative)
    /// and grid consistency.
    pub fn new(members: Vec<EnsembleMember>) -> Result<Self, EnsembleError> {
        if members.is_empty() {
            return Err(EnsembleError::Empty);
        }
        for m in &members {
            if m.weight < 0.0 {
                return Err(EnsembleError::NegativeWeight { weight: m.weight });
            }
        }
        let sum = pairwise_sum(&members.iter().map(|m| m.weight).collect::<Vec<_>>());
        if (sum - 1.0).abs() > 1e-12 {
            return Err(EnsembleError::WeightSum { sum });
        }
        let grid = members[0].state.grid().clone();
        if members.iter().any(|m| m.state.grid() != &grid) {
            return Err(EnsembleError::GridMismatch);
        }
        Ok(WignerEnsemble { members })
    }

    /// Single pure member with unit weight.
    pub fn single(state: WignerState, potential: PolynomialPotential) -> Self {
        WignerEnsemble {
            members: vec![EnsembleMember {
                weight: 1.0,
                state,
                potential,
            }],
        }
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    pub fn grid(&self) -> &PhaseSpaceGrid {
        self.members[0].state.grid()
    }

    /// Pointwise weighted sum of the members.
    pub fn mix(&self) -> WignerState {
        let grid = self.grid().clone();
        let mut acc = self.members[0].state.values() * self.members[0].weight;
        for m in &self.members[1..] {
            acc.zip_mut_with(m.state.values(), |a, &b| *a += m.weight * b);
        }
        let time = self.members[0].state.time();
        let mut out = WignerState::new(grid, acc, time).expect("validated grids");
        out.set_time(time);
        out
    }

    /// Squared ensemble norm: the unweighted sum of each member's
    /// square integral over phase space.
    pub fn fock_norm(&self) -> f64 {
        self.members.iter().map(|m| m.state.square_integral()).sum()
    }
}

/// Lock-step trajectory of an ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleTrajectory {
    /// Snapshots and diagnostics of the mixture.
    pub mixture: Trajectory,
    /// Per-member diagnostics at the same sample times.
    pub member_diagnostics: Vec<Vec<DiagnosticsRow>>,
    /// Ensemble fock norm at each diagnostic sample.
    pub fock_norms: Vec<f64>,
    /// Members at the final time (weights unchanged).
    pub final_ensemble: WignerEnsemble,
}

/// Evolve every member under its own potential with shared mass, bath
/// parameters, and basis; the step size is the most conservative of the
/// members' automatic bounds unless fixed by the config.
#[allow(clippy::too_many_arguments)]
pub fn evolve_ensemble(
    ensemble: &WignerEnsemble,
    mass: f64,
    lindblad: LindbladParams,
    basis: &FilterPair,
    coarsest: usize,
    epsilon_op: f64,
    config: &EvolutionConfig,
) -> Result<EnsembleTrajectory, SolverError> {
    config.validate()?;
    let grid = ensemble.grid();
    let operators: Vec<EvolutionOperator> = ensemble
        .members()
        .iter()
        .map(|m| build_evolution_operator(&m.potential, mass, lindblad, basis, grid, coarsest, epsilon_op))
        .collect::<Result<_, _>>()?;

    let dt = config.dt.unwrap_or_else(|| {
        operators
            .iter()
            .map(|op| op.dt_auto())
            .fold(f64::INFINITY, f64::min)
    });
    if !(dt > 0.0) {
        return Err(SolverError::NonPositiveStep { dt });
    }

    let mut values: Vec<ndarray::Array2<f64>> = ensemble
        .members()
        .iter()
        .map(|m| m.state.values().clone())
        .collect();
    let mut time = 0.0f64;

    let state_of = |v: &ndarray::Array2<f64>, t: f64| -> WignerState {
        let mut s = WignerState::new(grid.clone(), v.clone(), t).expect("shape");
        s.set_time(t);
        s
    };
    let snapshot_ensemble = |values: &[ndarray::Array2<f64>], t: f64| -> WignerEnsemble {
        WignerEnsemble {
            members: values
                .iter()
                .zip(ensemble.members())
                .map(|(v, m)| EnsembleMember {
                    weight: m.weight,
                    state: state_of(v, t),
                    potential: m.potential.clone(),
                })
                .collect(),
        }
    };
    let mixture_of =
        |values: &[ndarray::Array2<f64>], t: f64| snapshot_ensemble(values, t).mix();

    for v in &values {
        state_of(v, 0.0).check_domain_coverage(config.boundary_guard)?;
    }

    let mut mixture = Trajectory {
        snapshots: vec![mixture_of(&values, 0.0)],
        diagnostics: vec![DiagnosticsRow::measure(&mixture_of(&values, 0.0))],
    };
    let mut member_diagnostics: Vec<Vec<DiagnosticsRow>> = values
        .iter()
        .map(|v| vec![DiagnosticsRow::measure(&state_of(v, 0.0))])
        .collect();
    let mut fock_norms = vec![snapshot_ensemble(&values, 0.0).fock_norm()];

    let mut integrator = Integrator::new(grid);
    let n_steps = (config.t_final / dt).ceil().max(1.0) as usize;
    for step in 1..=n_steps {
        let target = (step as f64 * dt).min(config.t_final);
        let this_dt = target - time;
        if this_dt > 0.0 {
            for (v, op) in values.iter_mut().zip(&operators) {
                integrator.advance(op, v, time, this_dt)?;
            }
            time = target;
        }
        let at_end = step == n_steps;
        if config.diagnostics_stride > 0 && (step % config.diagnostics_stride == 0 || at_end) {
            let mixed = mixture_of(&values, time);
            mixed.check_domain_coverage(config.boundary_guard)?;
            mixture.diagnostics.push(DiagnosticsRow::measure(&mixed));
            for (rows, v) in member_diagnostics.iter_mut().zip(&values) {
                rows.push(DiagnosticsRow::measure(&state_of(v, time)));
            }
            fock_norms.push(snapshot_ensemble(&values, time).fock_norm());
        }
        if (config.snapshot_stride > 0 && step % config.snapshot_stride == 0) || at_end {
            mixture.snapshots.push(mixture_of(&values, time));
        }
    }

    Ok(EnsembleTrajectory {
        mixture,
        member_diagnostics,
        fock_norms,
        final_ensemble: snapshot_ensemble(&values, time),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{moment_ode_solve, MomentOdeSystem, Moments};
    use crate::phase_space::{weyl_transform, Wavefunction};
    use crate::wavelet::daubechies_filters;

    fn grid() -> PhaseSpaceGrid {
        PhaseSpaceGrid::new(-8.0, 8.0, -8.0, 8.0, 128, 128, 1.0).unwrap()
    }

    fn coherent_state(g: &PhaseSpaceGrid, q0: f64, p0: f64) -> WignerState {
        weyl_transform(&Wavefunction::coherent(g, q0, p0, 1.0, 1.0, 1.0), g).unwrap()
    }

    #[test]
    fn weight_sum_enforced() {
        let g = grid();
        let members = vec![
            EnsembleMember {
                weight: 0.6,
                state: coherent_state(&g, 1.0, 0.0),
                potential: PolynomialPotential::harmonic(1.0),
            },
            EnsembleMember {
                weight: 0.5,
                state: coherent_state(&g, -1.0, 0.0),
                potential: PolynomialPotential::harmonic(1.0),
            },
        ];
        assert!(matches!(
            WignerEnsemble::new(members),
            Err(EnsembleError::WeightSum { .. })
        ));
    }

    #[test]
    fn negative_weight_rejected() {
        let g = grid();
        let members = vec![
            EnsembleMember {
                weight: 1.5,
                state: coherent_state(&g, 0.0, 0.0),
                potential: PolynomialPotential::zero(),
            },
            EnsembleMember {
                weight: -0.5,
                state: coherent_state(&g, 0.0, 0.0),
                potential: PolynomialPotential::zero(),
            },
        ];
        assert!(matches!(
            WignerEnsemble::new(members),
            Err(EnsembleError::NegativeWeight { .. })
        ));
    }

    #[test]
    fn single_member_mix_is_identity() {
        let g = grid();
        let w = coherent_state(&g, 1.0, 0.0);
        let e = WignerEnsemble::single(w.clone(), PolynomialPotential::zero());
        assert_eq!(e.mix().max_abs_diff(&w), 0.0);
    }

    #[test]
    fn equal_mixture_of_identical_members_is_unchanged() {
        let g = grid();
        let w = coherent_state(&g, 1.0, 0.0);
        let members = vec![
            EnsembleMember {
                weight: 0.5,
                state: w.clone(),
                potential: PolynomialPotential::zero(),
            },
            EnsembleMember {
                weight: 0.5,
                state: w.clone(),
                potential: PolynomialPotential::zero(),
            },
        ];
        let e = WignerEnsemble::new(members).unwrap();
        assert!(e.mix().max_abs_diff(&w) < 1e-15);
    }

    #[test]
    fn mix_is_affine_in_the_weights() {
        let g = grid();
        let a = coherent_state(&g, 2.0, 0.0);
        let b = coherent_state(&g, -2.0, 0.0);
        let mk = |wa: f64| {
            WignerEnsemble::new(vec![
                EnsembleMember {
                    weight: wa,
                    state: a.clone(),
                    potential: PolynomialPotential::zero(),
                },
                EnsembleMember {
                    weight: 1.0 - wa,
                    state: b.clone(),
                    potential: PolynomialPotential::zero(),
                },
            ])
            .unwrap()
        };
        let alpha = 0.25f64;
        let (w1, w2) = (0.7, 0.2);
        let lhs = mk(alpha * w1 + (1.0 - alpha) * w2).mix();
        let m1 = mk(w1).mix();
        let m2 = mk(w2).mix();
        let mut worst = 0.0f64;
        for ((l, x), y) in lhs.values().iter().zip(m1.values()).zip(m2.values()) {
            worst = worst.max((l - (alpha * x + (1.0 - alpha) * y)).abs());
        }
        assert!(worst < 1e-14, "affinity violated: {worst}");
    }

    #[test]
    fn separated_mixture_has_half_purity() {
        let g = grid();
        let members = vec![
            EnsembleMember {
                weight: 0.5,
                state: coherent_state(&g, 3.5, 0.0),
                potential: PolynomialPotential::zero(),
            },
            EnsembleMember {
                weight: 0.5,
                state: coherent_state(&g, -3.5, 0.0),
                potential: PolynomialPotential::zero(),
            },
        ];
        let e = WignerEnsemble::new(members).unwrap();
        assert!((e.mix().purity() - 0.5).abs() < 1e-3);
    }

    #[test]
    fn fock_norm_basics() {
        let g = grid();
        let zero = WignerState::zeros(g.clone());
        let e = WignerEnsemble::single(zero, PolynomialPotential::zero());
        assert_eq!(e.fock_norm(), 0.0);

        let w = coherent_state(&g, 0.0, 0.0);
        let e = WignerEnsemble::single(w.clone(), PolynomialPotential::zero());
        let expected = 1.0 / (2.0 * std::f64::consts::PI);
        assert!((e.fock_norm() - expected).abs() < 1e-6, "{}", e.fock_norm());

        let mut scaled = w;
        scaled.values_mut().mapv_inplace(|v| 0.5 * v);
        let e2 = WignerEnsemble::single(scaled, PolynomialPotential::zero());
        assert!((e2.fock_norm() - 0.25 * expected).abs() < 1e-8);
    }

    #[test]
    fn fock_norm_contracts_under_projection() {
        let g = grid();
        let basis = daubechies_filters(3).unwrap();
        let w = coherent_state(&g, 1.0, 0.5);
        let e = WignerEnsemble::single(w.clone(), PolynomialPotential::zero());
        let full = e.fock_norm();
        for level in [2usize, 4] {
            let projected = crate::evolve::project_state(&w, &basis, level).unwrap();
            let ep = WignerEnsemble::single(projected, PolynomialPotential::zero());
            assert!(ep.fock_norm() <= full * (1.0 + 1e-10));
        }
    }

    #[test]
    fn mix_then_evolve_equals_evolve_then_mix() {
        let g = grid();
        let basis = daubechies_filters(6).unwrap();
        let u = PolynomialPotential::harmonic(1.0);
        let a = coherent_state(&g, 1.5, 0.0);
        let b = coherent_state(&g, -1.0, 0.5);
        let config = EvolutionConfig {
            t_final: 0.5,
            dt: Some(2e-3),
            diagnostics_stride: 0,
            ..EvolutionConfig::default()
        };
        let ensemble = WignerEnsemble::new(vec![
            EnsembleMember {
                weight: 0.3,
                state: a.clone(),
                potential: u.clone(),
            },
            EnsembleMember {
                weight: 0.7,
                state: b.clone(),
                potential: u.clone(),
            },
        ])
        .unwrap();
        let traj = evolve_ensemble(
            &ensemble,
            1.0,
            LindbladParams::closed(),
            &basis,
            3,
            0.0,
            &config,
        )
        .unwrap();
        let evolve_then_mix = traj.final_ensemble.mix();

        let premixed = ensemble.mix();
        let op = build_evolution_operator(&u, 1.0, LindbladParams::closed(), &basis, &g, 3, 0.0)
            .unwrap();
        let mix_then_evolve = crate::evolve::evolve(&premixed, &op, &config).unwrap();
        let diff = mix_then_evolve.final_state().max_abs_diff(&evolve_then_mix);
        assert!(diff < 1e-10, "order of mixing matters: {diff}");
        // Weights are constants of the motion.
        for (m0, m1) in ensemble.members().iter().zip(traj.final_ensemble.members()) {
            assert_eq!(m0.weight, m1.weight);
        }
    }

    #[test]
    fn members_follow_their_own_frequencies() {
        let g = grid();
        let basis = daubechies_filters(6).unwrap();
        let (k1, k2) = (1.0, 2.25); // omega = 1.0 and 1.5
        let ensemble = WignerEnsemble::new(vec![
            EnsembleMember {
                weight: 0.5,
                state: coherent_state(&g, 1.0, 0.0),
                potential: PolynomialPotential::harmonic(k1),
            },
            EnsembleMember {
                weight: 0.5,
                state: coherent_state(&g, 1.0, 0.0),
                potential: PolynomialPotential::harmonic(k2),
            },
        ])
        .unwrap();
        let config = EvolutionConfig {
            t_final: 2.0,
            diagnostics_stride: 20,
            ..EvolutionConfig::default()
        };
        let traj = evolve_ensemble(
            &ensemble,
            1.0,
            LindbladParams::closed(),
            &basis,
            3,
            0.0,
            &config,
        )
        .unwrap();
        for (member, &k) in [0usize, 1].iter().zip([k1, k2].iter()) {
            let rows = &traj.member_diagnostics[*member];
            let sys = MomentOdeSystem {
                mass: 1.0,
                spring_k: k,
                linear_c1: 0.0,
                gamma: 0.0,
                diffusion: 0.0,
            };
            let initial = Moments {
                q_mean: rows[0].q_mean,
                p_mean: rows[0].p_mean,
                q2: rows[0].q_var + rows[0].q_mean * rows[0].q_mean,
                qp: 0.0,
                p2: rows[0].p_var,
            };
            let times: Vec<f64> = rows.iter().map(|r| r.time).collect();
            let oracle = moment_ode_solve(&sys, initial, &times);
            for (row, m) in rows.iter().zip(&oracle) {
                assert!(
                    (row.q_mean - m.q_mean).abs() < 1e-3,
                    "member {member} at t={}: {} vs {}",
                    row.time,
                    row.q_mean,
                    m.q_mean
                );
            }
        }
    }
}
