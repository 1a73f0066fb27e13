//! Wigner states on dyadic phase-space grids: the Weyl transform of pure
//! states and the standard diagnostics (marginals, moments, purity,
//! negativity volume).
//!
//! Grids are periodic in both axes with points `x_i = x_min + i dx`
//! (right endpoint excluded). All quadratures are periodic-trapezoid
//! sums evaluated with a fixed pairwise reduction order, so diagnostics
//! are bitwise reproducible regardless of thread count.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::PhaseSpaceError;
use crate::util::{is_power_of_two, pairwise_sum, pairwise_sum_by};

/// Default boundary-cell mass threshold for the domain-coverage guard.
pub const DEFAULT_BOUNDARY_GUARD: f64 = 1e-6;

/// Rectangular phase-space grid with power-of-two resolution per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceGrid {
    pub q_min: f64,
    pub q_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub nq: usize,
    pub np: usize,
    pub hbar: f64,
}

impl PhaseSpaceGrid {
    pub fn new(
        q_min: f64,
        q_max: f64,
        p_min: f64,
        p_max: f64,
        nq: usize,
        np: usize,
        hbar: f64,
    ) -> Result<Self, PhaseSpaceError> {
        if !is_power_of_two(nq) {
            return Err(PhaseSpaceError::NonPowerOfTwoGrid { name: "nq", n: nq });
        }
        if !is_power_of_two(np) {
            return Err(PhaseSpaceError::NonPowerOfTwoGrid { name: "np", n: np });
        }
        if !(q_max > q_min) || !(p_max > p_min) {
            return Err(PhaseSpaceError::BadExtent {
                context: format!("q: [{q_min}, {q_max}], p: [{p_min}, {p_max}]"),
            });
        }
        if !(hbar > 0.0) {
            return Err(PhaseSpaceError::NonPositiveHbar { hbar });
        }
        Ok(PhaseSpaceGrid {
            q_min,
            q_max,
            p_min,
            p_max,
            nq,
            np,
            hbar,
        })
    }

    /// Square grid over symmetric ranges, convenient for level sweeps.
    pub fn square(extent_q: f64, extent_p: f64, n: usize, hbar: f64) -> Result<Self, PhaseSpaceError> {
        Self::new(-extent_q, extent_q, -extent_p, extent_p, n, n, hbar)
    }

    pub fn dq(&self) -> f64 {
        (self.q_max - self.q_min) / self.nq as f64
    }

    pub fn dp(&self) -> f64 {
        (self.p_max - self.p_min) / self.np as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dq() * self.dp()
    }

    pub fn q(&self, i: usize) -> f64 {
        self.q_min + i as f64 * self.dq()
    }

    pub fn p(&self, j: usize) -> f64 {
        self.p_min + j as f64 * self.dp()
    }

    pub fn q_axis(&self) -> Vec<f64> {
        (0..self.nq).map(|i| self.q(i)).collect()
    }

    pub fn p_axis(&self) -> Vec<f64> {
        (0..self.np).map(|j| self.p(j)).collect()
    }

    pub fn max_abs_p(&self) -> f64 {
        self.p_min.abs().max(self.p(self.np - 1).abs())
    }

    pub fn max_abs_q(&self) -> f64 {
        self.q_min.abs().max(self.q(self.nq - 1).abs())
    }
}

/// Complex wavefunction sampled on the q axis of a phase-space grid.
#[derive(Debug, Clone)]
pub struct Wavefunction {
    pub q_min: f64,
    pub q_max: f64,
    pub values: Vec<Complex64>,
}

impl Wavefunction {
    pub fn nq(&self) -> usize {
        self.values.len()
    }

    pub fn dq(&self) -> f64 {
        (self.q_max - self.q_min) / self.values.len() as f64
    }

    /// Sample `f(q)` on the q axis of `grid` and normalize.
    pub fn sample_on<F: Fn(f64) -> Complex64>(grid: &PhaseSpaceGrid, f: F) -> Self {
        let values = grid.q_axis().into_iter().map(f).collect();
        let mut psi = Wavefunction {
            q_min: grid.q_min,
            q_max: grid.q_max,
            values,
        };
        psi.normalize();
        psi
    }

    /// Coherent state centered at `(q0, p0)` for the reference oscillator
    /// `(mass, omega)`.
    pub fn coherent(
        grid: &PhaseSpaceGrid,
        q0: f64,
        p0: f64,
        mass: f64,
        omega: f64,
        hbar: f64,
    ) -> Self {
        let alpha = mass * omega / hbar;
        Self::sample_on(grid, |q| {
            let envelope = (-0.5 * alpha * (q - q0) * (q - q0)).exp();
            let phase = Complex64::new(0.0, p0 * q / hbar).exp();
            phase * envelope
        })
    }

    /// Harmonic-oscillator eigenstate `n <= 3` of the reference oscillator.
    pub fn eigenstate(
        grid: &PhaseSpaceGrid,
        n: usize,
        mass: f64,
        omega: f64,
        hbar: f64,
    ) -> Self {
        assert!(n <= 3, "eigenstate index must be <= 3");
        let alpha = (mass * omega / hbar).sqrt();
        Self::sample_on(grid, |q| {
            let x = alpha * q;
            let hermite = match n {
                0 => 1.0,
                1 => 2.0 * x,
                2 => 4.0 * x * x - 2.0,
                _ => 8.0 * x * x * x - 12.0 * x,
            };
            Complex64::new(hermite * (-0.5 * x * x).exp(), 0.0)
        })
    }

    /// Superposition of two opposite coherent states with a relative phase.
    pub fn cat(
        grid: &PhaseSpaceGrid,
        q0: f64,
        p0: f64,
        relative_phase: f64,
        mass: f64,
        omega: f64,
        hbar: f64,
    ) -> Self {
        let alpha = mass * omega / hbar;
        let rot = Complex64::new(0.0, relative_phase).exp();
        Self::sample_on(grid, |q| {
            let plus = Complex64::new(0.0, p0 * q / hbar).exp()
                * (-0.5 * alpha * (q - q0) * (q - q0)).exp();
            let minus = Complex64::new(0.0, -p0 * q / hbar).exp()
                * (-0.5 * alpha * (q + q0) * (q + q0)).exp();
            plus + rot * minus
        })
    }

    /// Rescale so that the position density integrates to one.
    pub fn normalize(&mut self) {
        let dq = self.dq();
        let mass: f64 = pairwise_sum(
            &self
                .values
                .iter()
                .map(|c| c.norm_sqr() * dq)
                .collect::<Vec<_>>(),
        );
        let scale = 1.0 / mass.sqrt();
        for v in self.values.iter_mut() {
            *v *= scale;
        }
    }
}

/// Real Wigner function on a phase-space grid at a given time.
#[derive(Debug, Clone)]
pub struct WignerState {
    grid: PhaseSpaceGrid,
    values: Array2<f64>,
    time: f64,
}

impl WignerState {
    pub fn new(grid: PhaseSpaceGrid, values: Array2<f64>, time: f64) -> Result<Self, PhaseSpaceError> {
        if values.nrows() != grid.nq || values.ncols() != grid.np {
            return Err(PhaseSpaceError::GridMismatch {
                context: format!(
                    "values are {}x{}, grid is {}x{}",
                    values.nrows(),
                    values.ncols(),
                    grid.nq,
                    grid.np
                ),
            });
        }
        Ok(WignerState { grid, values, time })
    }

    pub fn zeros(grid: PhaseSpaceGrid) -> Self {
        let values = Array2::zeros((grid.nq, grid.np));
        WignerState {
            grid,
            values,
            time: 0.0,
        }
    }

    pub fn from_fn<F: Fn(f64, f64) -> f64>(grid: PhaseSpaceGrid, f: F) -> Self {
        let values = Array2::from_shape_fn((grid.nq, grid.np), |(i, j)| f(grid.q(i), grid.p(j)));
        WignerState {
            grid,
            values,
            time: 0.0,
        }
    }

    pub fn grid(&self) -> &PhaseSpaceGrid {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    /// Total mass: periodic-trapezoid integral of W over the grid.
    pub fn norm(&self) -> f64 {
        let flat = self.values.as_slice().expect("contiguous");
        pairwise_sum(flat) * self.grid.cell_area()
    }

    /// Integral of W^2 over phase space (the single-sector inner product).
    pub fn square_integral(&self) -> f64 {
        let flat = self.values.as_slice().expect("contiguous");
        pairwise_sum_by(flat.len(), &|i| flat[i] * flat[i]) * self.grid.cell_area()
    }

    /// Purity `2 pi hbar * integral of W^2`; equals one for pure states.
    pub fn purity(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.grid.hbar * self.square_integral()
    }

    /// Integrated negative part of W, a witness of nonclassicality.
    pub fn negativity_volume(&self) -> f64 {
        let flat = self.values.as_slice().expect("contiguous");
        pairwise_sum_by(flat.len(), &|i| if flat[i] < 0.0 { -flat[i] } else { 0.0 })
            * self.grid.cell_area()
    }

    /// Position and momentum densities by integrating out the conjugate
    /// axis; both carry unit mass for a normalized state.
    pub fn marginals(&self) -> (Vec<f64>, Vec<f64>) {
        let dp = self.grid.dp();
        let dq = self.grid.dq();
        let position: Vec<f64> = (0..self.grid.nq)
            .map(|i| {
                let row = self.values.row(i);
                let row = row.as_slice().expect("contiguous row");
                pairwise_sum(row) * dp
            })
            .collect();
        let momentum: Vec<f64> = (0..self.grid.np)
            .map(|j| {
                let nq = self.grid.nq;
                pairwise_sum_by(nq, &|i| self.values[[i, j]]) * dq
            })
            .collect();
        (position, momentum)
    }

    /// Phase-space moments `<q^a p^b>` for all `a + b <= max_order <= 4`.
    pub fn moments(&self, max_order: usize) -> Result<BTreeMap<(u32, u32), f64>, PhaseSpaceError> {
        if max_order > 4 {
            return Err(PhaseSpaceError::MomentOrderTooLarge { order: max_order });
        }
        let q_pows: Vec<Vec<f64>> = (0..=max_order as i32)
            .map(|a| (0..self.grid.nq).map(|i| self.grid.q(i).powi(a)).collect())
            .collect();
        let p_pows: Vec<Vec<f64>> = (0..=max_order as i32)
            .map(|b| (0..self.grid.np).map(|j| self.grid.p(j).powi(b)).collect())
            .collect();
        let np = self.grid.np;
        let flat = self.values.as_slice().expect("contiguous");
        let mut out = BTreeMap::new();
        for a in 0..=max_order {
            for b in 0..=(max_order - a) {
                let qa = &q_pows[a];
                let pb = &p_pows[b];
                let m = pairwise_sum_by(flat.len(), &|idx| {
                    let (i, j) = (idx / np, idx % np);
                    qa[i] * pb[j] * flat[idx]
                }) * self.grid.cell_area();
                out.insert((a as u32, b as u32), m);
            }
        }
        Ok(out)
    }

    /// Mass (absolute value) carried by the outermost ring of cells.
    pub fn boundary_mass(&self) -> f64 {
        let (nq, np) = (self.grid.nq, self.grid.np);
        let mut cells: Vec<f64> = Vec::with_capacity(2 * nq + 2 * np);
        for j in 0..np {
            cells.push(self.values[[0, j]].abs());
            cells.push(self.values[[nq - 1, j]].abs());
        }
        for i in 1..nq - 1 {
            cells.push(self.values[[i, 0]].abs());
            cells.push(self.values[[i, np - 1]].abs());
        }
        pairwise_sum(&cells) * self.grid.cell_area()
    }

    /// Fail when the boundary ring holds more than `guard` absolute mass.
    pub fn check_domain_coverage(&self, guard: f64) -> Result<(), PhaseSpaceError> {
        let mass = self.boundary_mass();
        if mass > guard {
            return Err(PhaseSpaceError::DomainCoverage {
                mass,
                guard,
                time: self.time,
            });
        }
        Ok(())
    }

    /// Max-norm of the difference to another state on the same grid.
    pub fn max_abs_diff(&self, other: &WignerState) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// L2 norm of the difference, `sqrt(integral (W1-W2)^2)`.
    pub fn l2_diff(&self, other: &WignerState) -> f64 {
        let a = self.values.as_slice().expect("contiguous");
        let b = other.values.as_slice().expect("contiguous");
        (pairwise_sum_by(a.len(), &|i| {
            let d = a[i] - b[i];
            d * d
        }) * self.grid.cell_area())
        .sqrt()
    }
}

/// Discrete Weyl transform of a pure state with the default boundary guard.
pub fn weyl_transform(
    psi: &Wavefunction,
    grid: &PhaseSpaceGrid,
) -> Result<WignerState, PhaseSpaceError> {
    weyl_transform_guarded(psi, grid, DEFAULT_BOUNDARY_GUARD)
}

/// Discrete Weyl transform
/// `W(q, p) = (1/2 pi hbar) * integral dxi exp(-i p xi / hbar)
///            psi*(q - xi/2) psi(q + xi/2)`
/// evaluated over the chord variable `xi = 2 k dq`, whose range is twice
/// the q range. The chord index is wrapped on its own `2L` circle while
/// the wavefunction is zero-extended beyond its window: wrapping `psi`
/// itself would interfere the state with its periodic image and paint a
/// spurious fringe ridge along the domain boundary. The transform over xi
/// is a plain discrete sum with precomputed phases, which keeps arbitrary
/// (non-conjugate) p grids exact up to quadrature truncation.
pub fn weyl_transform_guarded(
    psi: &Wavefunction,
    grid: &PhaseSpaceGrid,
    guard: f64,
) -> Result<WignerState, PhaseSpaceError> {
    if psi.nq() != grid.nq {
        return Err(PhaseSpaceError::WavefunctionMismatch {
            got: psi.nq(),
            expected: grid.nq,
        });
    }
    if (psi.q_min - grid.q_min).abs() > 1e-12 || (psi.q_max - grid.q_max).abs() > 1e-12 {
        return Err(PhaseSpaceError::GridMismatch {
            context: format!(
                "wavefunction q range [{}, {}] vs grid [{}, {}]",
                psi.q_min, psi.q_max, grid.q_min, grid.q_max
            ),
        });
    }

    let nq = grid.nq;
    let np = grid.np;
    let dq = grid.dq();
    let dxi = 2.0 * dq;
    let prefactor = dxi / (2.0 * std::f64::consts::PI * grid.hbar);
    let half = nq as isize / 2;

    // Phase table: e^{-i p_j xi_k / hbar}, xi_k = 2 k dq, k = -nq/2 .. nq/2-1.
    let phases: Vec<Vec<Complex64>> = (0..np)
        .map(|j| {
            let pj = grid.p(j);
            (-half..half)
                .map(|k| {
                    let xi = 2.0 * k as f64 * dq;
                    Complex64::new(0.0, -pj * xi / grid.hbar).exp()
                })
                .collect()
        })
        .collect();

    let fetch = |idx: isize| -> Complex64 {
        if idx >= 0 && (idx as usize) < nq {
            psi.values[idx as usize]
        } else {
            Complex64::new(0.0, 0.0)
        }
    };

    let mut values = Array2::zeros((nq, np));
    let max_imag: f64 = values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(i, mut row)| {
            let corr: Vec<Complex64> = (-half..half)
                .map(|k| fetch(i as isize - k).conj() * fetch(i as isize + k))
                .collect();
            let mut worst = 0.0f64;
            for (j, slot) in row.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (ph, co) in phases[j].iter().zip(corr.iter()) {
                    acc += ph * co;
                }
                worst = worst.max(acc.im.abs() * prefactor);
                *slot = prefactor * acc.re;
            }
            worst
        })
        .reduce(|| 0.0, f64::max);

    debug_assert!(
        max_imag < 1e-10,
        "Weyl transform imaginary residue {max_imag}"
    );

    let state = WignerState {
        grid: grid.clone(),
        values,
        time: 0.0,
    };
    state.check_domain_coverage(guard)?;
    Ok(state)
}
