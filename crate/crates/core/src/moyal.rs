//! Right-hand side of the phase-space evolution equation for polynomial
//! potentials:
//!
//! ```text
//! dW/dt = -(p/m) dW/dq
//!         + sum_l (-1)^l (hbar/2)^(2l) / (2l+1)!  U^(2l+1)(q)  d^(2l+1)W/dp^(2l+1)
//!         + 2 gamma d/dp (p W) + D d^2W/dp^2
//! ```
//!
//! For a degree-d potential the series terminates at `2l+1 <= d`, so the
//! quantum corrections are exact, not asymptotic. Derivatives act along
//! one axis at a time through the wavelet nonstandard form; q-dependent
//! coefficients multiply in sample space, which keeps every operator
//! one-dimensional. The friction term is applied in divergence form,
//! `d/dp` of the pointwise product `p W`, so the discrete grid sum of the
//! full right-hand side vanishes identically for any state.

use ndarray::{Array2, ArrayView2, Axis, Zip};

use crate::error::SolverError;
use crate::mra::{build_nonstandard, NonstandardOperator};
use crate::phase_space::{PhaseSpaceGrid, WignerState};
use crate::util::{factorial, log2_exact, pairwise_sum};
use crate::wavelet::{connection_coefficients, FilterPair};

/// Real polynomial `U(q) = sum_k c_k q^k` with exact differentiation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialPotential {
    coeffs: Vec<f64>,
}

impl PolynomialPotential {
    /// Build from coefficients `c_0..c_d`; trailing zeros are trimmed so
    /// the leading coefficient is nonzero unless the polynomial is zero.
    pub fn new(coeffs: impl Into<Vec<f64>>) -> Self {
        let mut coeffs = coeffs.into();
        while coeffs.len() > 1 && *coeffs.last().unwrap() == 0.0 {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        PolynomialPotential { coeffs }
    }

    pub fn zero() -> Self {
        PolynomialPotential { coeffs: vec![0.0] }
    }

    /// `U(q) = (k/2) q^2`.
    pub fn harmonic(spring_constant: f64) -> Self {
        PolynomialPotential::new(vec![0.0, 0.0, 0.5 * spring_constant])
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn eval(&self, q: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * q + c)
    }

    /// Exact n-th derivative: coefficient `k!/(k-n)! c_k` on `q^(k-n)`.
    pub fn derivative(&self, n: usize) -> PolynomialPotential {
        if n > self.degree() {
            return PolynomialPotential::zero();
        }
        let coeffs: Vec<f64> = (n..self.coeffs.len())
            .map(|k| {
                let mut factor = 1.0;
                for j in 0..n {
                    factor *= (k - j) as f64;
                }
                factor * self.coeffs[k]
            })
            .collect();
        PolynomialPotential::new(coeffs)
    }

    /// Largest |U'(q)| over a grid's q axis (used for step-size bounds).
    fn max_abs_on(&self, qs: &[f64]) -> f64 {
        qs.iter().fold(0.0f64, |m, &q| m.max(self.eval(q).abs()))
    }
}

/// One term of the truncated sine-form bracket series.
#[derive(Debug, Clone)]
pub struct MoyalTerm {
    /// Series index l >= 0; l = 0 is the classical force term.
    pub ell: usize,
    /// `(-1)^l (hbar/2)^(2l) / (2l+1)!`
    pub prefactor: f64,
    /// `d^(2l+1) U / dq^(2l+1)`
    pub u_derivative: PolynomialPotential,
    /// `2l + 1`
    pub p_derivative_order: usize,
}

/// Friction rate and momentum-diffusion coefficient of the open-system
/// terms; `(0, 0)` recovers closed dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LindbladParams {
    pub gamma: f64,
    pub diffusion: f64,
}

impl LindbladParams {
    pub fn closed() -> Self {
        LindbladParams {
            gamma: 0.0,
            diffusion: 0.0,
        }
    }

    pub fn new(gamma: f64, diffusion: f64) -> Self {
        assert!(gamma >= 0.0 && diffusion >= 0.0, "rates must be non-negative");
        LindbladParams { gamma, diffusion }
    }

    pub fn is_closed(&self) -> bool {
        self.gamma == 0.0 && self.diffusion == 0.0
    }
}

/// All nonvanishing series terms for a polynomial potential: exactly
/// `floor((degree + 1) / 2)` of them when the degree is at least one.
pub fn moyal_series(potential: &PolynomialPotential, hbar: f64) -> Vec<MoyalTerm> {
    assert!(hbar > 0.0, "hbar must be positive");
    let degree = potential.degree();
    let mut terms = Vec::new();
    let mut ell = 0usize;
    while 2 * ell + 1 <= degree {
        let order = 2 * ell + 1;
        let sign = if ell % 2 == 0 { 1.0 } else { -1.0 };
        let prefactor = sign * (hbar / 2.0).powi(2 * ell as i32) / factorial(order);
        terms.push(MoyalTerm {
            ell,
            prefactor,
            u_derivative: potential.derivative(order),
            p_derivative_order: order,
        });
        ell += 1;
    }
    terms
}

/// Minimal basis order passing the regularity gate for all requested
/// derivative orders: `max(3, ceil((n_max + 2) / 2))`.
pub fn default_basis_order(max_derivative: usize) -> usize {
    3usize.max(max_derivative.div_ceil(2) + 1)
}

/// Assembled, immutable evolution operator for one potential on one grid.
pub struct EvolutionOperator {
    grid: PhaseSpaceGrid,
    mass: f64,
    lindblad: LindbladParams,
    potential: PolynomialPotential,
    epsilon_op: f64,
    /// d/dq along the q axis (absent for infinite mass).
    d_dq: Option<NonstandardOperator>,
    /// p-axis derivative operators keyed by order.
    p_ops: std::collections::BTreeMap<usize, NonstandardOperator>,
    /// `(p order, prefactor * U^(order)(q_i))` per series term.
    term_weights: Vec<(usize, Vec<f64>)>,
    /// `-p_j / m` per column.
    neg_p_over_m: Vec<f64>,
    p_values: Vec<f64>,
    /// Conservative explicit-integrator step bound from operator symbols.
    dt_stable: f64,
    /// The series terms used to build `term_weights`.
    terms: Vec<MoyalTerm>,
}

/// Assemble the evolution operator. `coarsest` is the coarsest wavelet
/// level per axis; the finest level is fixed by the grid resolution.
/// Derivative taps with magnitude at most `epsilon_op` times the largest
/// block entry are dropped at construction.
pub fn build_evolution_operator(
    potential: &PolynomialPotential,
    mass: f64,
    lindblad: LindbladParams,
    basis: &FilterPair,
    grid: &PhaseSpaceGrid,
    coarsest: usize,
    epsilon_op: f64,
) -> Result<EvolutionOperator, SolverError> {
    assert!(mass > 0.0, "mass must be positive");
    let hbar = grid.hbar;
    let jq = log2_exact(grid.nq).expect("grid validated");
    let jp = log2_exact(grid.np).expect("grid validated");
    let cq = coarsest.min(jq);
    let cp = coarsest.min(jp);

    let terms = moyal_series(potential, hbar);

    // Derivative orders needed along p.
    let mut p_orders: Vec<usize> = terms.iter().map(|t| t.p_derivative_order).collect();
    if lindblad.gamma > 0.0 {
        p_orders.push(1);
    }
    if lindblad.diffusion > 0.0 {
        p_orders.push(2);
    }
    p_orders.sort_unstable();
    p_orders.dedup();

    let mut p_ops = std::collections::BTreeMap::new();
    let mut symbol_maxima = std::collections::BTreeMap::new();
    for &order in &p_orders {
        let stencil = connection_coefficients(basis, order)?;
        symbol_maxima.insert(order, stencil.symbol_max());
        let op = build_nonstandard(&stencil, basis, cp, jp, grid.dp(), epsilon_op)?;
        p_ops.insert(order, op);
    }

    let d_dq = if mass.is_finite() {
        let stencil = connection_coefficients(basis, 1)?;
        symbol_maxima.entry(1).or_insert_with(|| stencil.symbol_max());
        Some(build_nonstandard(&stencil, basis, cq, jq, grid.dq(), epsilon_op)?)
    } else {
        None
    };

    let qs = grid.q_axis();
    let term_weights: Vec<(usize, Vec<f64>)> = terms
        .iter()
        .map(|t| {
            let w: Vec<f64> = qs.iter().map(|&q| t.prefactor * t.u_derivative.eval(q)).collect();
            (t.p_derivative_order, w)
        })
        .collect();

    let p_values = grid.p_axis();
    let neg_p_over_m: Vec<f64> = p_values.iter().map(|&p| -p / mass).collect();

    // Stability: accumulate the spectral radius contribution of every
    // term (symbol maximum over the periodic grid) and bound by the RK4
    // stability radius. The classical terms additionally respect the
    // advective limits, which are usually the tighter ones.
    let s1 = symbol_maxima.get(&1).copied().unwrap_or(2.0);
    let mut lambda = 0.0f64;
    if mass.is_finite() {
        lambda += grid.max_abs_p() / mass * s1 / grid.dq();
    }
    for t in &terms {
        let coef_max = t.u_derivative.max_abs_on(&qs) * t.prefactor.abs();
        let s = symbol_maxima[&t.p_derivative_order];
        lambda += coef_max * s / grid.dp().powi(t.p_derivative_order as i32);
    }
    if lindblad.gamma > 0.0 {
        lambda += 2.0 * lindblad.gamma * (grid.max_abs_p() * s1 / grid.dp() + 1.0);
    }
    if lindblad.diffusion > 0.0 {
        let s2 = symbol_maxima.get(&2).copied().unwrap_or(4.0);
        lambda += lindblad.diffusion * s2 / (grid.dp() * grid.dp());
    }
    let dt_stable = if lambda > 0.0 { 2.78 / lambda } else { f64::INFINITY };

    Ok(EvolutionOperator {
        grid: grid.clone(),
        mass,
        lindblad,
        potential: potential.clone(),
        epsilon_op,
        d_dq,
        p_ops,
        term_weights,
        neg_p_over_m,
        p_values,
        dt_stable,
        terms,
    })
}

/// Reusable buffers for right-hand-side evaluation; one per integration
/// loop, so the hot path performs no large allocations.
#[derive(Debug, Clone)]
pub struct RhsScratch {
    deriv: Array2<f64>,
    product: Array2<f64>,
    t_in: Array2<f64>,
    t_out: Array2<f64>,
}

impl RhsScratch {
    pub fn new(nq: usize, np: usize) -> Self {
        RhsScratch {
            deriv: Array2::zeros((nq, np)),
            product: Array2::zeros((nq, np)),
            t_in: Array2::zeros((np, nq)),
            t_out: Array2::zeros((np, nq)),
        }
    }

    pub fn for_grid(grid: &PhaseSpaceGrid) -> Self {
        Self::new(grid.nq, grid.np)
    }
}

/// Derivative of every row (p direction). Small grids run serially:
/// below ~64k elements the split overhead outweighs the row work.
fn derivative_rows_into(op: &NonstandardOperator, field: &ArrayView2<f64>, out: &mut Array2<f64>) {
    let zip = Zip::from(out.axis_iter_mut(Axis(0))).and(field.axis_iter(Axis(0)));
    let kernel = |mut orow: ndarray::ArrayViewMut1<f64>, irow: ndarray::ArrayView1<f64>| {
        let input = irow.to_slice().expect("contiguous row");
        let output = orow.as_slice_mut().expect("contiguous row");
        op.apply_samples(input, output);
    };
    if field.len() >= 1 << 16 {
        zip.par_for_each(kernel);
    } else {
        zip.for_each(kernel);
    }
}

fn derivative_rows(op: &NonstandardOperator, field: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(field.raw_dim());
    derivative_rows_into(op, field, &mut out);
    out
}

impl EvolutionOperator {
    pub fn grid(&self) -> &PhaseSpaceGrid {
        &self.grid
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn lindblad(&self) -> LindbladParams {
        self.lindblad
    }

    pub fn potential(&self) -> &PolynomialPotential {
        &self.potential
    }

    pub fn epsilon_op(&self) -> f64 {
        self.epsilon_op
    }

    pub fn terms(&self) -> &[MoyalTerm] {
        &self.terms
    }

    /// Largest explicit step passing the operator-symbol stability bound.
    pub fn dt_stable(&self) -> f64 {
        self.dt_stable
    }

    /// Automatic step choice: half the minimum of the advective limits
    /// `dq m / p_max`, `dp / max|U'|`, the diffusive limit `dp^2 / 2D`,
    /// and the full symbol bound (which also covers the l >= 1 terms).
    pub fn dt_auto(&self) -> f64 {
        let mut dt = self.dt_stable / 0.5; // folded into the common factor below
        if self.mass.is_finite() {
            let adv = self.grid.dq() * self.mass / self.grid.max_abs_p().max(1e-300);
            dt = dt.min(adv);
        }
        let force = self.potential.derivative(1);
        if !force.is_zero() {
            let fmax = force.max_abs_on(&self.grid.q_axis());
            dt = dt.min(self.grid.dp() / fmax.max(1e-300));
        }
        if self.lindblad.diffusion > 0.0 {
            dt = dt.min(self.grid.dp() * self.grid.dp() / (2.0 * self.lindblad.diffusion));
        }
        0.5 * dt
    }

    /// Evaluate dW/dt into `out` using caller-owned scratch buffers.
    pub fn apply_rhs_into(
        &self,
        w: &ArrayView2<f64>,
        out: &mut Array2<f64>,
        scratch: &mut RhsScratch,
    ) {
        out.fill(0.0);

        if let Some(dq_op) = &self.d_dq {
            // q sweep through the transposed buffers so rows stay
            // contiguous for the convolution.
            scratch.t_in.assign(&w.t());
            let (t_in, t_out) = (&scratch.t_in, &mut scratch.t_out);
            derivative_rows_into(dq_op, &t_in.view(), t_out);
            scratch.deriv.assign(&scratch.t_out.t());
            let scale = &self.neg_p_over_m;
            Zip::from(out.axis_iter_mut(Axis(0)))
                .and(scratch.deriv.axis_iter(Axis(0)))
                .for_each(|mut orow, drow| {
                    for (j, (o, d)) in orow.iter_mut().zip(drow.iter()).enumerate() {
                        *o += scale[j] * d;
                    }
                });
        }

        for (order, weights) in &self.term_weights {
            derivative_rows_into(&self.p_ops[order], w, &mut scratch.deriv);
            Zip::indexed(out.axis_iter_mut(Axis(0)))
                .and(scratch.deriv.axis_iter(Axis(0)))
                .for_each(|i, mut orow, drow| {
                    let wi = weights[i];
                    if wi != 0.0 {
                        for (o, d) in orow.iter_mut().zip(drow.iter()) {
                            *o += wi * d;
                        }
                    }
                });
        }

        if self.lindblad.gamma > 0.0 {
            // 2 gamma d/dp (p W): divergence form keeps the discrete sum
            // exactly zero and reuses the first-derivative operator.
            let p = &self.p_values;
            scratch.product.assign(w);
            Zip::from(scratch.product.axis_iter_mut(Axis(0))).for_each(|mut row| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v *= p[j];
                }
            });
            let (product, deriv) = (&scratch.product, &mut scratch.deriv);
            derivative_rows_into(&self.p_ops[&1], &product.view(), deriv);
            let g2 = 2.0 * self.lindblad.gamma;
            Zip::from(out.axis_iter_mut(Axis(0)))
                .and(scratch.deriv.axis_iter(Axis(0)))
                .for_each(|mut orow, drow| {
                    for (o, d) in orow.iter_mut().zip(drow.iter()) {
                        *o += g2 * d;
                    }
                });
        }

        if self.lindblad.diffusion > 0.0 {
            derivative_rows_into(&self.p_ops[&2], w, &mut scratch.deriv);
            let dcoef = self.lindblad.diffusion;
            Zip::from(out.axis_iter_mut(Axis(0)))
                .and(scratch.deriv.axis_iter(Axis(0)))
                .for_each(|mut orow, drow| {
                    for (o, d) in orow.iter_mut().zip(drow.iter()) {
                        *o += dcoef * d;
                    }
                });
        }
    }

    /// Evaluate dW/dt for the raw value matrix (allocating variant).
    pub fn apply_rhs_values(&self, w: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(w.raw_dim());
        let mut scratch = RhsScratch::new(w.nrows(), w.ncols());
        self.apply_rhs_into(w, &mut out, &mut scratch);
        out
    }

    /// Evaluate dW/dt as a state-shaped field.
    pub fn apply_rhs(&self, state: &WignerState) -> Result<WignerState, SolverError> {
        if state.grid() != &self.grid {
            return Err(SolverError::PhaseSpace(
                crate::error::PhaseSpaceError::GridMismatch {
                    context: "state grid differs from operator grid".to_string(),
                },
            ));
        }
        let values = self.apply_rhs_values(&state.values().view());
        let mut out = WignerState::new(self.grid.clone(), values, state.time())?;
        out.set_time(state.time());
        Ok(out)
    }
}

/// Grid sum of a field times the cell area (diagnostic for conservation).
pub fn grid_integral(values: &Array2<f64>, grid: &PhaseSpaceGrid) -> f64 {
    let flat = values.as_slice().expect("contiguous");
    pairwise_sum(flat) * grid.cell_area()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::Wavefunction;
    use crate::wavelet::daubechies_filters;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn polynomial_derivatives_are_exact() {
        let u = PolynomialPotential::new(vec![0.0, 0.0, 1.0]); // q^2
        assert_eq!(u.derivative(1).coefficients(), &[0.0, 2.0]);
        let quartic = PolynomialPotential::new(vec![0.0, 0.0, 0.0, 0.0, 2.5]); // 2.5 q^4
        assert_eq!(quartic.derivative(3).coefficients(), &[0.0, 60.0]);
        let cubic = PolynomialPotential::new(vec![0.0, 0.0, 0.0, 1.0]);
        assert!(cubic.derivative(5).is_zero());
        assert_eq!(cubic.derivative(5).degree(), 0);
    }

    #[test]
    fn trailing_zeros_trimmed() {
        let u = PolynomialPotential::new(vec![1.0, 2.0, 0.0, 0.0]);
        assert_eq!(u.degree(), 1);
        assert_eq!(u.coefficients(), &[1.0, 2.0]);
    }

    #[test]
    fn harmonic_series_is_purely_classical() {
        let u = PolynomialPotential::new(vec![0.0, 0.0, 0.5]); // (1/2) q^2
        let terms = moyal_series(&u, 1.0);
        assert_eq!(terms.len(), 1);
        assert_eq!(terms[0].ell, 0);
        assert_eq!(terms[0].prefactor, 1.0);
        assert_eq!(terms[0].p_derivative_order, 1);
        assert_eq!(terms[0].u_derivative.coefficients(), &[0.0, 1.0]);
    }

    #[test]
    fn quartic_series_has_two_exact_terms() {
        let lambda = 0.7;
        let u = PolynomialPotential::new(vec![0.0, 0.0, 0.0, 0.0, lambda]);
        let terms = moyal_series(&u, 1.0);
        assert_eq!(terms.len(), 2);
        assert_eq!(terms[0].u_derivative.coefficients(), &[0.0, 0.0, 0.0, 4.0 * lambda]);
        assert!((terms[1].prefactor - (-1.0 / 24.0)).abs() < 1e-15);
        assert_eq!(terms[1].p_derivative_order, 3);
        assert_eq!(terms[1].u_derivative.coefficients(), &[0.0, 24.0 * lambda]);
    }

    #[test]
    fn quantum_prefactors_scale_as_hbar_squared() {
        let u = PolynomialPotential::new(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]); // q^6
        for ell in 1..3 {
            let t1 = &moyal_series(&u, 1.0)[ell];
            let t2 = &moyal_series(&u, 0.5)[ell];
            let expected = 0.25f64.powi(ell as i32);
            assert!((t2.prefactor / t1.prefactor - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn series_is_odd_under_bracket_reversal() {
        // The sine-form bracket is antisymmetric: negating its argument
        // (swapping the roles of the two entries) must negate every term.
        let u = PolynomialPotential::new(vec![0.0, 1.0, 0.0, 2.0, 0.0, 0.25]);
        let hbar = 0.7;
        let forward = moyal_series(&u, hbar);
        for t in &forward {
            let order = 2 * t.ell as i32 + 1;
            // sin(-x) expansion coefficient of x^(2l+1).
            let reversed_prefactor = -(-1.0f64).powi(t.ell as i32)
                * (hbar / 2.0).powi(2 * t.ell as i32)
                / factorial(2 * t.ell + 1);
            assert!(
                (reversed_prefactor + t.prefactor).abs() < 1e-15,
                "term {order} not negated"
            );
        }
    }

    #[test]
    fn default_basis_order_covers_regularity_gate() {
        assert_eq!(default_basis_order(1), 3);
        assert_eq!(default_basis_order(2), 3);
        assert_eq!(default_basis_order(3), 3);
        assert_eq!(default_basis_order(5), 4);
        for n in 1..=7 {
            let order = default_basis_order(n);
            assert!(2 * order >= n + 2);
        }
    }

    fn harmonic_operator(n: usize) -> EvolutionOperator {
        let grid = PhaseSpaceGrid::new(-8.0, 8.0, -8.0, 8.0, n, n, 1.0).unwrap();
        let basis = daubechies_filters(6).unwrap();
        build_evolution_operator(
            &PolynomialPotential::harmonic(1.0),
            1.0,
            LindbladParams::closed(),
            &basis,
            &grid,
            3,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn stationary_gaussian_has_tiny_residual() {
        let op = harmonic_operator(256);
        let grid = op.grid().clone();
        let w = WignerState::from_fn(grid, |q, p| (-q * q - p * p).exp() / std::f64::consts::PI);
        let rhs = op.apply_rhs(&w).unwrap();
        let max = rhs.values().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(max < 1e-6, "stationary residual {max}");
    }

    #[test]
    fn rhs_conserves_total_probability_for_any_state() {
        let grid = PhaseSpaceGrid::new(-6.0, 6.0, -6.0, 6.0, 64, 64, 1.0).unwrap();
        let basis = daubechies_filters(4).unwrap();
        let op = build_evolution_operator(
            &PolynomialPotential::new(vec![0.0, 0.3, 0.1, 0.0, 0.05]),
            1.0,
            LindbladParams::new(0.2, 0.15),
            &basis,
            &grid,
            2,
            0.0,
        )
        .unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        let values = Array2::from_shape_fn((64, 64), |_| rng.gen_range(-1.0..1.0));
        let w = WignerState::new(grid.clone(), values, 0.0).unwrap();
        let rhs = op.apply_rhs(&w).unwrap();
        let total = grid_integral(rhs.values(), &grid);
        assert!(total.abs() < 1e-8, "conservation violated: {total}");
    }

    #[test]
    fn rhs_is_linear() {
        let op = harmonic_operator(64);
        let grid = op.grid().clone();
        let mut rng = StdRng::seed_from_u64(11);
        let w1 = Array2::from_shape_fn((64, 64), |_| rng.gen_range(-1.0..1.0));
        let w2 = Array2::from_shape_fn((64, 64), |_| rng.gen_range(-1.0..1.0));
        let (alpha, beta) = (0.6, -1.1);
        let mixed: Array2<f64> = alpha * &w1 + beta * &w2;
        let lhs = op.apply_rhs_values(&mixed.view());
        let rhs: Array2<f64> =
            alpha * &op.apply_rhs_values(&w1.view()) + beta * &op.apply_rhs_values(&w2.view());
        let scale = lhs.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
        let worst = lhs
            .iter()
            .zip(rhs.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst / scale < 1e-12, "linearity violated: {worst}");
        let _ = grid;
    }

    #[test]
    fn pure_diffusion_matches_analytic_second_derivative() {
        // U = 0, infinite mass, gamma = 0: RHS = D d^2 W / dp^2.
        let grid = PhaseSpaceGrid::new(-8.0, 8.0, -8.0, 8.0, 256, 256, 1.0).unwrap();
        let basis = daubechies_filters(6).unwrap();
        let dcoef = 0.8;
        let op = build_evolution_operator(
            &PolynomialPotential::zero(),
            f64::INFINITY,
            LindbladParams::new(0.0, dcoef),
            &basis,
            &grid,
            3,
            0.0,
        )
        .unwrap();
        let w = WignerState::from_fn(grid.clone(), |q, p| {
            (-q * q - p * p).exp() / std::f64::consts::PI
        });
        let rhs = op.apply_rhs(&w).unwrap();
        let mut worst = 0.0f64;
        for i in 0..grid.nq {
            for j in 0..grid.np {
                let (q, p) = (grid.q(i), grid.p(j));
                let exact = dcoef * (4.0 * p * p - 2.0) * (-q * q - p * p).exp()
                    / std::f64::consts::PI;
                worst = worst.max((rhs.values()[[i, j]] - exact).abs());
            }
        }
        assert!(worst < 1e-6, "diffusion residual {worst}");
    }

    #[test]
    fn free_transport_moment_rate() {
        // U = 0: d<q>/dt = <p>/m measured directly on the RHS field.
        let grid = PhaseSpaceGrid::new(-8.0, 8.0, -8.0, 8.0, 128, 128, 1.0).unwrap();
        let basis = daubechies_filters(5).unwrap();
        let mass = 1.7;
        let op = build_evolution_operator(
            &PolynomialPotential::zero(),
            mass,
            LindbladParams::closed(),
            &basis,
            &grid,
            3,
            0.0,
        )
        .unwrap();
        let psi = Wavefunction::coherent(&grid, 0.5, 1.0, 1.0, 1.0, 1.0);
        let w = crate::phase_space::weyl_transform(&psi, &grid).unwrap();
        let rhs = op.apply_rhs(&w).unwrap();
        let dq_dt = {
            let mut acc = 0.0;
            for i in 0..grid.nq {
                for j in 0..grid.np {
                    acc += grid.q(i) * rhs.values()[[i, j]];
                }
            }
            acc * grid.cell_area()
        };
        let p_mean = w.moments(1).unwrap()[&(0, 1)];
        assert!(
            (dq_dt - p_mean / mass).abs() < 1e-6,
            "d<q>/dt = {dq_dt}, <p>/m = {}",
            p_mean / mass
        );
    }

    #[test]
    fn classical_limit_decays_as_hbar_squared() {
        // Difference between full and classical-only RHS shrinks ~hbar^2.
        let basis = daubechies_filters(4).unwrap();
        let u = PolynomialPotential::new(vec![0.0, 0.0, 0.0, 0.0, 0.1]);
        let mut diffs = Vec::new();
        for &hbar in &[0.5f64, 0.25] {
            let grid = PhaseSpaceGrid::new(-6.0, 6.0, -6.0, 6.0, 128, 128, hbar).unwrap();
            let op = build_evolution_operator(
                &u,
                1.0,
                LindbladParams::closed(),
                &basis,
                &grid,
                3,
                0.0,
            )
            .unwrap();
            let w = WignerState::from_fn(grid.clone(), |q, p| {
                (-(q - 1.0) * (q - 1.0) - p * p).exp() / std::f64::consts::PI
            });
            let full = op.apply_rhs(&w).unwrap();
            // Classical part: drop the l >= 1 weights by rebuilding with a
            // cubic-free potential whose force matches U'.
            let force_only = {
                let mut rhs = full.values().clone();
                let dp3 = derivative_rows(&op.p_ops[&3], &w.values().view());
                let weights = &op.term_weights[1].1;
                for i in 0..grid.nq {
                    for j in 0..grid.np {
                        rhs[[i, j]] -= weights[i] * dp3[[i, j]];
                    }
                }
                rhs
            };
            let worst = full
                .values()
                .iter()
                .zip(force_only.iter())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            diffs.push(worst);
        }
        let ratio = diffs[0] / diffs[1];
        assert!(
            (ratio - 4.0).abs() < 0.4,
            "hbar^2 scaling violated: ratio {ratio} (diffs {diffs:?})"
        );
    }

    #[test]
    fn grid_mismatch_rejected() {
        let op = harmonic_operator(64);
        let other = PhaseSpaceGrid::new(-4.0, 4.0, -8.0, 8.0, 64, 64, 1.0).unwrap();
        let w = WignerState::zeros(other);
        assert!(op.apply_rhs(&w).is_err());
    }

    #[test]
    fn regularity_error_propagates() {
        let grid = PhaseSpaceGrid::new(-8.0, 8.0, -8.0, 8.0, 64, 64, 1.0).unwrap();
        let basis = daubechies_filters(1).unwrap();
        let err = build_evolution_operator(
            &PolynomialPotential::harmonic(1.0),
            1.0,
            LindbladParams::closed(),
            &basis,
            &grid,
            2,
            0.0,
        );
        assert!(matches!(err, Err(SolverError::Wavelet(_))));
    }
}
