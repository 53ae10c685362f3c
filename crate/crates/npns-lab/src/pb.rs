//! Equilibrium electrostatics: the Poisson–Boltzmann problems induced by the
//! boundary families, their convex energy functionals, damped-Newton and
//! Picard solvers, and permittivity-continuation sweeps.
//!
//! Four problem variants are covered. `Us2` prescribes both Boltzmann
//! normalizations directly; `Bl` (blocking walls) normalizes both species by
//! their own exponential integrals; `UsCation` and `UsAnion` normalize one
//! species directly and the other nonlocally. The nonlocal variants are
//! solved by an outer Picard loop that freezes the normalization integrals
//! around a damped-Newton inner solve; the cation problem is solved in a
//! shifted potential variable to keep the exponentials in range, and the
//! anion problem is the exact mirror image of the cation problem.

use thiserror::Error;

use crate::diagnostics::DiagError;
use crate::elliptic::{solve_elliptic, solve_poisson, EllipticError, LinearEllipticProblem};
use crate::grid::{
    build_grid, BoundaryData, BoundaryValues, Grid, GridError, ScalarField,
};

/// Hard cap on Newton steps across a whole solve (inner steps included).
const NEWTON_CAP: usize = 200;
/// Hard cap on outer Picard rounds for the nonlocal variants.
const PICARD_CAP: usize = 100;
/// Maximum number of step halvings the damping line search attempts.
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Error)]
pub enum PbError {
    #[error("epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error("tolerance must be positive and finite, got {0}")]
    BadTolerance(f64),
    #[error("{name} must be positive and finite, got {value}")]
    BadConstant { name: &'static str, value: f64 },
    #[error("energy evaluation overflowed at the {stage}")]
    EnergyNotFinite { stage: &'static str },
    #[error("margin must lie strictly between 0 and {limit}, got {margin}")]
    BadMargin { margin: f64, limit: f64 },
    #[error("epsilon list must be nonempty, positive, finite, and strictly decreasing")]
    BadEpsilonList,
    #[error("linear solve failed during {context}")]
    Solver {
        context: &'static str,
        #[source]
        source: EllipticError,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Diagnostics(#[from] DiagError),
}

/// The four equilibrium problems. Each carries the strictly positive
/// constants that close its Boltzmann relations.
#[derive(Debug, Clone, PartialEq)]
pub enum PbVariant {
    /// Both species normalized by prescribed constants: c1 = e^{-phi}/z1,
    /// c2 = e^{phi}/z2.
    Us2 { z1: f64, z2: f64 },
    /// Blocking walls: both species normalized by their own integrals,
    /// c_i = i0 e^{-z_i phi} / integral(e^{-z_i phi}).
    Bl { i0: f64 },
    /// Cation normalized directly, anion nonlocally:
    /// c1 = e^{-phi}/z1, c2 = i2 e^{phi} / integral(e^{phi}).
    UsCation { z1: f64, i2: f64 },
    /// Anion normalized directly, cation nonlocally (mirror of `UsCation`).
    UsAnion { z2: f64, i1: f64 },
}

impl PbVariant {
    pub fn name(&self) -> &'static str {
        match self {
            PbVariant::Us2 { .. } => "us2",
            PbVariant::Bl { .. } => "bl",
            PbVariant::UsCation { .. } => "us-cation",
            PbVariant::UsAnion { .. } => "us-anion",
        }
    }

    fn validate(&self) -> Result<(), PbError> {
        let check = |name: &'static str, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(PbError::BadConstant { name, value })
            }
        };
        match *self {
            PbVariant::Us2 { z1, z2 } => {
                check("z1", z1)?;
                check("z2", z2)
            }
            PbVariant::Bl { i0 } => check("i0", i0),
            PbVariant::UsCation { z1, i2 } => {
                check("z1", z1)?;
                check("i2", i2)
            }
            PbVariant::UsAnion { z2, i1 } => {
                check("z2", z2)?;
                check("i1", i1)
            }
        }
    }
}

/// Closed-form constants attached to a variant on a given domain: the energy
/// well center and limiting energy where they exist, the overflow-guard shift
/// for the cation problem, and the limiting interior potential value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    /// Location of the minimum of the pointwise energy well (Us2 only).
    pub well_center: Option<f64>,
    /// Limiting energy value as the permittivity vanishes (Us2 and Bl).
    pub energy_limit: Option<f64>,
    /// Shift applied to the potential in the cation/anion solves (0 otherwise).
    pub shift: f64,
    /// Shifted direct normalization for the cation problem.
    pub z_tilde: Option<f64>,
    /// Well center of the shifted cation problem: shift + interior_limit.
    pub z_prime: Option<f64>,
    /// Limiting interior potential value, where the variant pins one.
    pub interior_limit: Option<f64>,
}

/// Compute the variant's derived constants on the given domain.
pub fn derived_constants(variant: &PbVariant, grid: &Grid) -> Result<DerivedConstants, PbError> {
    variant.validate()?;
    let measure = grid.domain_measure();
    let none = DerivedConstants {
        well_center: None,
        energy_limit: None,
        shift: 0.0,
        z_tilde: None,
        z_prime: None,
        interior_limit: None,
    };
    Ok(match *variant {
        PbVariant::Us2 { z1, z2 } => {
            let z = 0.5 * (z2 / z1).ln();
            DerivedConstants {
                well_center: Some(z),
                // The well value is 2/sqrt(z1 z2); the energy limit is the
                // well value times the domain measure.
                energy_limit: Some(2.0 * measure / (z1 * z2).sqrt()),
                interior_limit: Some(z),
                ..none
            }
        }
        PbVariant::Bl { i0 } => DerivedConstants {
            energy_limit: Some(2.0 * i0 * measure.ln()),
            ..none
        },
        PbVariant::UsCation { z1, i2 } => {
            // Shift with unit slack so the shifted direct normalization
            // strictly dominates the nonlocal one: 1/z_tilde > i2/measure.
            let shift = (2.0 * i2 * z1 / measure).ln().max(0.0) + 1.0;
            let interior_limit = (measure / (i2 * z1)).ln();
            DerivedConstants {
                shift,
                z_tilde: Some(z1 * (-shift).exp()),
                z_prime: Some(shift + interior_limit),
                interior_limit: Some(interior_limit),
                ..none
            }
        }
        PbVariant::UsAnion { z2, i1 } => {
            let shift = (2.0 * i1 * z2 / measure).ln().max(0.0) + 1.0;
            let interior_limit = (measure / (i1 * z2)).ln();
            DerivedConstants {
                shift,
                z_tilde: Some(z2 * (-shift).exp()),
                z_prime: Some(shift + interior_limit),
                interior_limit: Some(-interior_limit),
                ..none
            }
        }
    })
}

/// True when the mesh is too coarse to resolve the boundary-layer scale
/// sqrt(epsilon): the solve still runs but carries a warning flag.
pub fn resolution_warning(grid: &Grid, epsilon: f64) -> bool {
    let h_max = if grid.dim == 1 {
        grid.h[0]
    } else {
        grid.h[0].max(grid.h[1])
    };
    h_max > epsilon.sqrt() / 4.0
}

/// A converged (or capped) equilibrium solve: the potential, the Boltzmann
/// concentrations, the charge density, and the solver's audit trail.
#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub variant: PbVariant,
    pub epsilon: f64,
    pub phi: ScalarField,
    pub c1: ScalarField,
    pub c2: ScalarField,
    pub rho: ScalarField,
    /// Final energy value (for the shifted variants, of the shifted functional).
    pub energy: f64,
    /// Strictly decreasing energy values, starting from the initial guess.
    pub energy_trace: Vec<f64>,
    /// Max-norm of the nonlinear residual at the final iterate.
    pub residual_linf: f64,
    /// Total Newton steps taken (inner steps of the Picard loop included).
    pub iterations: usize,
    pub converged: bool,
    pub resolution_warning: bool,
}

// ---------------------------------------------------------------------------
// Energy and residual evaluation
// ---------------------------------------------------------------------------

/// Gradient part of the energy: (epsilon/2) times the quadrature of
/// |grad psi|^2 with interior face differences at full cell weight and
/// boundary face differences (against the wall value, at half spacing) at
/// half cell weight. With these weights the gradient of the energy with
/// respect to a cell value is exactly cell_volume times the residual.
fn grad_quadrature(psi: &ScalarField, w: &BoundaryValues, epsilon: f64) -> f64 {
    let grid = psi.grid;
    let (nx, ny) = (grid.nx(), grid.ny());
    let vol = grid.cell_volume();
    let mut acc = 0.0;
    for j in 0..ny {
        for i in 0..nx - 1 {
            let d = (psi.at(i + 1, j) - psi.at(i, j)) / grid.h[0];
            acc += d * d * vol;
        }
    }
    if grid.dim == 2 {
        for j in 0..ny - 1 {
            for i in 0..nx {
                let d = (psi.at(i, j + 1) - psi.at(i, j)) / grid.h[1];
                acc += d * d * vol;
            }
        }
    }
    for side in grid.sides() {
        let h = grid.normal_h(*side);
        for k in 0..grid.side_face_count(*side) {
            let (i, j) = grid.boundary_cell(*side, k);
            let d = 2.0 * (psi.at(i, j) - w.at(&grid, *side, k)) / h;
            acc += d * d * (vol / 2.0);
        }
    }
    0.5 * epsilon * acc
}

/// Quadratures of e^{-psi} and e^{+psi} over the domain. May overflow to
/// infinity; callers must check finiteness.
fn exp_sums(psi: &ScalarField) -> (f64, f64) {
    let vol = psi.grid.cell_volume();
    let mut sm = 0.0;
    let mut sp = 0.0;
    for v in &psi.values {
        sm += (-v).exp();
        sp += v.exp();
    }
    (sm * vol, sp * vol)
}

/// Energy with frozen normalization coefficients:
/// grad + a1 * integral(e^{-psi}) + a2 * integral(e^{+psi}).
fn local_energy(
    psi: &ScalarField,
    w: &BoundaryValues,
    epsilon: f64,
    a1: f64,
    a2: f64,
) -> Option<f64> {
    let (sm, sp) = exp_sums(psi);
    let e = grad_quadrature(psi, w, epsilon) + a1 * sm + a2 * sp;
    e.is_finite().then_some(e)
}

/// Nonlinear residual F = -epsilon * lap(psi) - a1 e^{-psi} + a2 e^{psi}
/// with Dirichlet wall values from `w_data`.
fn residual_field(
    psi: &ScalarField,
    w_data: &BoundaryData,
    epsilon: f64,
    a1: f64,
    a2: f64,
) -> ScalarField {
    let mut f = crate::grid::laplacian(psi, w_data);
    for (fv, pv) in f.values.iter_mut().zip(psi.values.iter()) {
        *fv = -epsilon * *fv - a1 * (-pv).exp() + a2 * pv.exp();
    }
    f
}

/// One Newton correction: solve (-epsilon lap + diag(a1 e^{-psi} + a2 e^{psi}))
/// delta = -F with homogeneous Dirichlet data, to a tolerance relative to the
/// current residual size.
fn newton_direction(
    psi: &ScalarField,
    w_data: &BoundaryData,
    epsilon: f64,
    a1: f64,
    a2: f64,
    f: &ScalarField,
    fnorm: f64,
) -> Result<ScalarField, PbError> {
    let grid = psi.grid;
    let mut reaction = ScalarField::constant(grid, 0.0);
    for (rv, pv) in reaction.values.iter_mut().zip(psi.values.iter()) {
        *rv = a1 * (-pv).exp() + a2 * pv.exp();
    }
    let mut rhs = f.clone();
    for v in rhs.values.iter_mut() {
        *v = -*v;
    }
    let problem = LinearEllipticProblem {
        grid,
        kappa: epsilon,
        reaction,
        rhs,
        bc: w_data.homogenized(),
    };
    solve_elliptic(&problem, 1e-6 * fnorm)
        .map(|(delta, _)| delta)
        .map_err(|source| PbError::Solver {
            context: "the Newton correction",
            source,
        })
}

fn add_scaled(psi: &ScalarField, lambda: f64, delta: &ScalarField) -> ScalarField {
    let mut out = psi.clone();
    for (ov, dv) in out.values.iter_mut().zip(delta.values.iter()) {
        *ov += lambda * dv;
    }
    out
}

/// Initial iterate: the harmonic extension of the wall potential. For
/// bitwise-uniform wall data the extension is the constant itself and is
/// taken in closed form, which lets flat equilibria resolve exactly.
fn initial_guess(grid: &Grid, epsilon: f64, w: &BoundaryValues) -> Result<ScalarField, PbError> {
    if w.min() == w.max() {
        return Ok(ScalarField::constant(*grid, w.min()));
    }
    let zero = ScalarField::constant(*grid, 0.0);
    solve_poisson(epsilon, &zero, w)
        .map(|(phi, _)| phi)
        .map_err(|source| PbError::Solver {
            context: "the harmonic extension of the wall potential",
            source,
        })
}

// ---------------------------------------------------------------------------
// Damped Newton iteration
// ---------------------------------------------------------------------------

struct LocalOutcome {
    steps: usize,
    residual: f64,
    energy: f64,
    /// Set when a full round of step halvings produced no energy decrease.
    descent_failed: bool,
    /// Set when the correction vanished at machine precision.
    stationary: bool,
}

/// Damped Newton iteration on the frozen-coefficient problem, stopping when
/// the residual max-norm reaches `target`. Steps are halved until the frozen
/// energy decreases; strict decreases extend the trace. Near the minimizer
/// the energy flattens below f64 resolution while the residual can still be
/// evaluated accurately, so the full Newton step is also accepted on an
/// energy near-tie (within a few ulps) provided it at least halves the
/// residual. Exhausting the halvings with only ties means the floor of the
/// energy resolution was reached (`stationary`); exhausting them with strict
/// increases everywhere is a genuine descent failure.
fn damped_newton(
    psi: &mut ScalarField,
    w_vals: &BoundaryValues,
    w_data: &BoundaryData,
    epsilon: f64,
    a1: f64,
    a2: f64,
    target: f64,
    budget: &mut usize,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<LocalOutcome, PbError> {
    let mut energy = local_energy(psi, w_vals, epsilon, a1, a2)
        .ok_or(PbError::EnergyNotFinite { stage: "start of a Newton iteration" })?;
    let mut f = residual_field(psi, w_data, epsilon, a1, a2);
    let mut residual = f.linf();
    let mut steps = 0;
    let mut descent_failed = false;
    let mut stationary = false;
    while residual > target && *budget > 0 {
        *budget -= 1;
        let delta = newton_direction(psi, w_data, epsilon, a1, a2, &f, residual)?;
        steps += 1;
        let mut lambda = 1.0;
        let mut accepted = false;
        let mut tie_seen = false;
        for halving in 0..=MAX_HALVINGS {
            let cand = add_scaled(psi, lambda, &delta);
            if cand.values == psi.values {
                stationary = true;
                break;
            }
            if let Some(e) = local_energy(&cand, w_vals, epsilon, a1, a2) {
                if e < energy {
                    if let Some(t) = trace.as_deref_mut() {
                        t.push(e);
                    }
                    *psi = cand;
                    energy = e;
                    f = residual_field(psi, w_data, epsilon, a1, a2);
                    residual = f.linf();
                    accepted = true;
                    break;
                }
                if e == energy {
                    tie_seen = true;
                }
                // Flat regime: the energy cannot resolve the decrease of a
                // full Newton step any more. The resolution of the energy is
                // set by the quadrature's summation length, not by one ulp.
                // Accept the full step anyway when it makes clear progress
                // on the residual.
                let flat_slack =
                    f64::EPSILON * (psi.values.len() as f64) * (energy.abs() + 1.0);
                if halving == 0 && e - energy <= flat_slack {
                    let f_cand = residual_field(&cand, w_data, epsilon, a1, a2);
                    let r_cand = f_cand.linf();
                    if r_cand <= 0.5 * residual {
                        *psi = cand;
                        energy = e;
                        f = f_cand;
                        residual = r_cand;
                        accepted = true;
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        if stationary {
            break;
        }
        if !accepted {
            if tie_seen {
                stationary = true;
            } else {
                descent_failed = true;
            }
            break;
        }
    }
    Ok(LocalOutcome {
        steps,
        residual,
        energy,
        descent_failed,
        stationary,
    })
}

// ---------------------------------------------------------------------------
// Variant solvers
// ---------------------------------------------------------------------------

struct LocalResult {
    psi: ScalarField,
    energy: f64,
    trace: Vec<f64>,
    steps: usize,
    residual: f64,
    converged: bool,
}

fn solve_local(
    grid: &Grid,
    epsilon: f64,
    a1: f64,
    a2: f64,
    w_vals: &BoundaryValues,
    tol: f64,
) -> Result<LocalResult, PbError> {
    let w_data = BoundaryData::from_values(w_vals);
    let mut psi = initial_guess(grid, epsilon, w_vals)?;
    let e0 = local_energy(&psi, w_vals, epsilon, a1, a2)
        .ok_or(PbError::EnergyNotFinite { stage: "initial guess" })?;
    let mut trace = vec![e0];
    let mut budget = NEWTON_CAP;
    let out = damped_newton(
        &mut psi,
        w_vals,
        &w_data,
        epsilon,
        a1,
        a2,
        tol,
        &mut budget,
        Some(&mut trace),
    )?;
    Ok(LocalResult {
        psi,
        energy: out.energy,
        trace,
        steps: out.steps,
        residual: out.residual,
        converged: out.residual <= tol,
    })
}

/// How the nonlocal variants recompute their normalization coefficients from
/// the exponential integrals.
enum Normalization {
    /// Both coefficients nonlocal: a1 = i0/S-, a2 = i0/S+.
    BothSpecies { i0: f64 },
    /// a1 frozen for good, a2 = i_plus/S+.
    PlusSpeciesOnly { a1: f64, i_plus: f64 },
}

impl Normalization {
    fn coefficients(&self, sm: f64, sp: f64) -> (f64, f64) {
        match *self {
            Normalization::BothSpecies { i0 } => (i0 / sm, i0 / sp),
            Normalization::PlusSpeciesOnly { a1, i_plus } => (a1, i_plus / sp),
        }
    }

    fn drift(&self, sm_old: f64, sp_old: f64, sm: f64, sp: f64) -> f64 {
        let dp = ((sp - sp_old) / sp).abs();
        match self {
            Normalization::BothSpecies { .. } => dp.max(((sm - sm_old) / sm).abs()),
            Normalization::PlusSpeciesOnly { .. } => dp,
        }
    }

    fn true_energy(&self, grad: f64, sm: f64, sp: f64) -> f64 {
        match *self {
            Normalization::BothSpecies { i0 } => grad + i0 * (sm.ln() + sp.ln()),
            Normalization::PlusSpeciesOnly { a1, i_plus } => grad + a1 * sm + i_plus * sp.ln(),
        }
    }
}

struct NonlocalResult {
    psi: ScalarField,
    energy: f64,
    trace: Vec<f64>,
    steps: usize,
    residual: f64,
    converged: bool,
    s_minus: f64,
    s_plus: f64,
}

/// Outer Picard loop: freeze the normalization integrals, run the damped
/// Newton inner solve on the frozen problem, refresh the integrals, and stop
/// when both the true nonlinear residual and the relative drift of the
/// integrals are inside the tolerance. Freezing the coefficients majorizes
/// the true energy (tangency of the logarithm), so each round's true energy
/// does not increase.
fn solve_nonlocal(
    grid: &Grid,
    epsilon: f64,
    w_vals: &BoundaryValues,
    norm: Normalization,
    tol: f64,
) -> Result<NonlocalResult, PbError> {
    let w_data = BoundaryData::from_values(w_vals);
    let mut psi = initial_guess(grid, epsilon, w_vals)?;
    let (mut sm, mut sp) = exp_sums(&psi);
    if !(sm.is_finite() && sp.is_finite()) {
        return Err(PbError::EnergyNotFinite { stage: "initial guess" });
    }
    let e0 = norm.true_energy(grad_quadrature(&psi, w_vals, epsilon), sm, sp);
    if !e0.is_finite() {
        return Err(PbError::EnergyNotFinite { stage: "initial guess" });
    }
    let mut trace = vec![e0];
    let mut energy = e0;
    let mut budget = NEWTON_CAP;
    let mut steps = 0;
    let mut residual = f64::INFINITY;
    let mut prev_residual = f64::INFINITY;
    let mut converged = false;
    for _round in 0..PICARD_CAP {
        let (a1, a2) = norm.coefficients(sm, sp);
        let inner = damped_newton(
            &mut psi,
            w_vals,
            &w_data,
            epsilon,
            a1,
            a2,
            0.5 * tol,
            &mut budget,
            None,
        )?;
        steps += inner.steps;
        let (sm_new, sp_new) = exp_sums(&psi);
        if !(sm_new.is_finite() && sp_new.is_finite()) {
            break;
        }
        let drift = norm.drift(sm, sp, sm_new, sp_new);
        sm = sm_new;
        sp = sp_new;
        let (a1t, a2t) = norm.coefficients(sm, sp);
        residual = residual_field(&psi, &w_data, epsilon, a1t, a2t).linf();
        let e = norm.true_energy(grad_quadrature(&psi, w_vals, epsilon), sm, sp);
        if e.is_finite() {
            energy = e;
            if e < *trace.last().expect("trace starts nonempty") {
                trace.push(e);
            }
        }
        if residual <= tol && drift <= tol {
            converged = true;
            break;
        }
        if inner.descent_failed || budget == 0 {
            break;
        }
        // An inner floor stop is fine while the outer iteration still
        // contracts; once the refreshed residual stops improving too, the
        // whole fixed point has saturated and further rounds cannot help.
        if inner.stationary && residual >= prev_residual {
            break;
        }
        prev_residual = residual;
    }
    Ok(NonlocalResult {
        psi,
        energy,
        trace,
        steps,
        residual,
        converged,
        s_minus: sm,
        s_plus: sp,
    })
}

fn boltzmann_fields(
    psi: &ScalarField,
    f1: impl Fn(f64) -> f64,
    f2: impl Fn(f64) -> f64,
) -> (ScalarField, ScalarField, ScalarField) {
    let grid = psi.grid;
    let c1 = ScalarField {
        grid,
        values: psi.values.iter().map(|&v| f1(v)).collect(),
    };
    let c2 = ScalarField {
        grid,
        values: psi.values.iter().map(|&v| f2(v)).collect(),
    };
    let rho = ScalarField {
        grid,
        values: c1
            .values
            .iter()
            .zip(c2.values.iter())
            .map(|(a, b)| a - b)
            .collect(),
    };
    (c1, c2, rho)
}

/// Cation solve in the shifted variable; also the engine behind the anion
/// variant via mirroring. Returns the solution in physical (unshifted) form.
fn cation_solution(
    grid: &Grid,
    epsilon: f64,
    z1: f64,
    i2: f64,
    w: &BoundaryValues,
    tol: f64,
) -> Result<(ScalarField, ScalarField, ScalarField, ScalarField, NonlocalResult), PbError> {
    let dc = derived_constants(&PbVariant::UsCation { z1, i2 }, grid)?;
    let z_tilde = dc.z_tilde.expect("cation constants carry the shifted normalization");
    let w_shifted = w.shifted(dc.shift);
    let result = solve_nonlocal(
        grid,
        epsilon,
        &w_shifted,
        Normalization::PlusSpeciesOnly {
            a1: 1.0 / z_tilde,
            i_plus: i2,
        },
        tol,
    )?;
    let phi = ScalarField {
        grid: *grid,
        values: result.psi.values.iter().map(|v| v - dc.shift).collect(),
    };
    let sp = result.s_plus;
    let (c1, c2, rho) = boltzmann_fields(
        &result.psi,
        |v| (-v).exp() / z_tilde,
        |v| i2 * v.exp() / sp,
    );
    Ok((phi, c1, c2, rho, result))
}

/// Solve the variant's Poisson–Boltzmann problem on the grid. The initial
/// iterate is the harmonic extension of the wall potential; the iteration is
/// damped Newton (with an outer Picard loop for the nonlocal variants).
/// Iteration caps and damping failures are reported through `converged =
/// false` with the trace preserved; malformed inputs and an initial guess
/// outside representable range are hard errors.
pub fn pb_solve(
    grid: &Grid,
    variant: &PbVariant,
    epsilon: f64,
    w: &BoundaryValues,
    tol: f64,
) -> Result<EquilibriumSolution, PbError> {
    variant.validate()?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(PbError::BadEpsilon(epsilon));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(PbError::BadTolerance(tol));
    }
    let warning = resolution_warning(grid, epsilon);
    match *variant {
        PbVariant::Us2 { z1, z2 } => {
            let r = solve_local(grid, epsilon, 1.0 / z1, 1.0 / z2, w, tol)?;
            let (c1, c2, rho) =
                boltzmann_fields(&r.psi, |v| (-v).exp() / z1, |v| v.exp() / z2);
            Ok(EquilibriumSolution {
                variant: variant.clone(),
                epsilon,
                phi: r.psi,
                c1,
                c2,
                rho,
                energy: r.energy,
                energy_trace: r.trace,
                residual_linf: r.residual,
                iterations: r.steps,
                converged: r.converged,
                resolution_warning: warning,
            })
        }
        PbVariant::Bl { i0 } => {
            let r = solve_nonlocal(grid, epsilon, w, Normalization::BothSpecies { i0 }, tol)?;
            let (sm, sp) = (r.s_minus, r.s_plus);
            let (c1, c2, rho) = boltzmann_fields(
                &r.psi,
                |v| i0 * (-v).exp() / sm,
                |v| i0 * v.exp() / sp,
            );
            Ok(EquilibriumSolution {
                variant: variant.clone(),
                epsilon,
                phi: r.psi,
                c1,
                c2,
                rho,
                energy: r.energy,
                energy_trace: r.trace,
                residual_linf: r.residual,
                iterations: r.steps,
                converged: r.converged,
                resolution_warning: warning,
            })
        }
        PbVariant::UsCation { z1, i2 } => {
            let (phi, c1, c2, rho, r) = cation_solution(grid, epsilon, z1, i2, w, tol)?;
            Ok(EquilibriumSolution {
                variant: variant.clone(),
                epsilon,
                phi,
                c1,
                c2,
                rho,
                energy: r.energy,
                energy_trace: r.trace,
                residual_linf: r.residual,
                iterations: r.steps,
                converged: r.converged,
                resolution_warning: warning,
            })
        }
        PbVariant::UsAnion { z2, i1 } => {
            // Exact mirror: negate the wall data, solve the cation problem
            // with the roles of the constants swapped, then negate the
            // potential and swap the species back.
            let (phi_m, c1_m, c2_m, _rho_m, r) =
                cation_solution(grid, epsilon, z2, i1, &w.negated(), tol)?;
            let phi = ScalarField {
                grid: *grid,
                values: phi_m.values.iter().map(|v| -v).collect(),
            };
            let (c1, c2) = (c2_m, c1_m);
            let rho = ScalarField {
                grid: *grid,
                values: c1
                    .values
                    .iter()
                    .zip(c2.values.iter())
                    .map(|(a, b)| a - b)
                    .collect(),
            };
            Ok(EquilibriumSolution {
                variant: variant.clone(),
                epsilon,
                phi,
                c1,
                c2,
                rho,
                energy: r.energy,
                energy_trace: r.trace,
                residual_linf: r.residual,
                iterations: r.steps,
                converged: r.converged,
                resolution_warning: warning,
            })
        }
    }
}

/// Evaluate the variant's energy functional at an arbitrary potential field.
/// The gradient term reads wall values from `w`; the cation variant is
/// evaluated on the shifted field (its reported value is offset from the
/// unshifted functional by a constant), and the anion variant mirrors it.
pub fn pb_energy(
    variant: &PbVariant,
    psi: &ScalarField,
    w: &BoundaryValues,
    epsilon: f64,
) -> Result<f64, PbError> {
    variant.validate()?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(PbError::BadEpsilon(epsilon));
    }
    let fail = PbError::EnergyNotFinite { stage: "energy evaluation" };
    match *variant {
        PbVariant::Us2 { z1, z2 } => {
            local_energy(psi, w, epsilon, 1.0 / z1, 1.0 / z2).ok_or(fail)
        }
        PbVariant::Bl { i0 } => {
            let (sm, sp) = exp_sums(psi);
            let e = grad_quadrature(psi, w, epsilon) + i0 * (sm.ln() + sp.ln());
            e.is_finite().then_some(e).ok_or(fail)
        }
        PbVariant::UsCation { z1: _, i2 } => {
            let dc = derived_constants(variant, &psi.grid)?;
            let z_tilde = dc.z_tilde.expect("cation constants carry the shifted normalization");
            let shifted = ScalarField {
                grid: psi.grid,
                values: psi.values.iter().map(|v| v + dc.shift).collect(),
            };
            let w_shifted = w.shifted(dc.shift);
            let (sm, sp) = exp_sums(&shifted);
            let e = grad_quadrature(&shifted, &w_shifted, epsilon) + sm / z_tilde
                + i2 * sp.ln();
            e.is_finite().then_some(e).ok_or(fail)
        }
        PbVariant::UsAnion { z2, i1 } => {
            let mirrored = ScalarField {
                grid: psi.grid,
                values: psi.values.iter().map(|v| -v).collect(),
            };
            pb_energy(
                &PbVariant::UsCation { z1: z2, i2: i1 },
                &mirrored,
                &w.negated(),
                epsilon,
            )
        }
    }
}

// ---------------------------------------------------------------------------
// Permittivity sweeps
// ---------------------------------------------------------------------------

/// Mesh policy for a sweep entry: keep the base grid, or refine each axis
/// until the boundary-layer scale is resolved (h <= sqrt(epsilon)/4).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridPolicy {
    Fixed,
    RefineToResolve,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepEntry {
    pub eps: f64,
    pub interior_sup_rho: f64,
    pub energy: f64,
    pub phi_center: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub variant: PbVariant,
    pub margin: f64,
    pub entries: Vec<SweepEntry>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,interior_sup_rho,energy,phi_center,iters,converged\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{},{}\n",
                e.eps, e.interior_sup_rho, e.energy, e.phi_center, e.iterations, e.converged
            ));
        }
        out
    }
}

fn sweep_entry(
    base: &Grid,
    variant: &PbVariant,
    eps: f64,
    margin: f64,
    policy: GridPolicy,
    w_fn: &(dyn Fn(&Grid) -> BoundaryValues + Sync),
    tol: f64,
) -> SweepEntry {
    match sweep_entry_inner(base, variant, eps, margin, policy, w_fn, tol) {
        Ok(entry) => entry,
        // A failed solve yields a placeholder row; the sweep itself goes on.
        Err(_) => SweepEntry {
            eps,
            interior_sup_rho: f64::NAN,
            energy: f64::NAN,
            phi_center: f64::NAN,
            iterations: 0,
            converged: false,
        },
    }
}

fn sweep_entry_inner(
    base: &Grid,
    variant: &PbVariant,
    eps: f64,
    margin: f64,
    policy: GridPolicy,
    w_fn: &(dyn Fn(&Grid) -> BoundaryValues + Sync),
    tol: f64,
) -> Result<SweepEntry, PbError> {
    let grid = match policy {
        GridPolicy::Fixed => *base,
        GridPolicy::RefineToResolve => {
            let mut cells = [0usize; 2];
            let mut extents = [0.0f64; 2];
            for a in 0..base.dim {
                let needed = (4.0 * base.extents[a] / eps.sqrt()).ceil() as usize;
                cells[a] = base.cells[a].max(needed);
                extents[a] = base.extents[a];
            }
            build_grid(base.dim, &extents[..base.dim], &cells[..base.dim])?
        }
    };
    let w = w_fn(&grid);
    let sol = pb_solve(&grid, variant, eps, &w, tol)?;
    let sup = crate::diagnostics::interior_sup(&sol.rho, margin)?;
    let (ci, cj) = grid.center_cell();
    Ok(SweepEntry {
        eps,
        interior_sup_rho: sup,
        energy: sol.energy,
        phi_center: sol.phi.at(ci, cj),
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// Solve the variant across a strictly decreasing list of permittivities and
/// report the interior electroneutrality measure, the energy, and the center
/// potential per entry. Entries may be computed on worker threads; the
/// report order is deterministic (sorted by the input list) regardless of
/// the worker count. Per-entry solve failures yield placeholder rows rather
/// than aborting the sweep.
pub fn epsilon_sweep(
    base: &Grid,
    variant: &PbVariant,
    eps_list: &[f64],
    margin: f64,
    policy: GridPolicy,
    w_fn: &(dyn Fn(&Grid) -> BoundaryValues + Sync),
    workers: usize,
    tol: f64,
) -> Result<SweepReport, PbError> {
    variant.validate()?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(PbError::BadTolerance(tol));
    }
    if eps_list.is_empty()
        || eps_list.iter().any(|e| !(e.is_finite() && *e > 0.0))
        || eps_list.windows(2).any(|pair| pair[1] >= pair[0])
    {
        return Err(PbError::BadEpsilonList);
    }
    let min_extent = if base.dim == 1 {
        base.extents[0]
    } else {
        base.extents[0].min(base.extents[1])
    };
    let limit = min_extent / 2.0;
    if !(margin > 0.0 && margin < limit) {
        return Err(PbError::BadMargin { margin, limit });
    }
    let n = eps_list.len();
    let mut slots: Vec<Option<SweepEntry>> = (0..n).map(|_| None).collect();
    let threads = workers.max(1).min(n);
    if threads <= 1 {
        for (k, &eps) in eps_list.iter().enumerate() {
            slots[k] = Some(sweep_entry(base, variant, eps, margin, policy, w_fn, tol));
        }
    } else {
        let chunks: Vec<Vec<(usize, SweepEntry)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|widx| {
                    scope.spawn(move || {
                        let mut rows = Vec::new();
                        let mut k = widx;
                        while k < n {
                            rows.push((
                                k,
                                sweep_entry(base, variant, eps_list[k], margin, policy, w_fn, tol),
                            ));
                            k += threads;
                        }
                        rows
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        });
        for chunk in chunks {
            for (k, entry) in chunk {
                slots[k] = Some(entry);
            }
        }
    }
    let entries = slots
        .into_iter()
        .map(|slot| slot.expect("every sweep entry computed"))
        .collect();
    Ok(SweepReport {
        variant: variant.clone(),
        margin,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::min_laplacian_of_square;
    use crate::grid::{build_grid, Side};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Reference value of the integral of 2*cosh(sin(pi x)) over [0, 1],
    /// from high-precision quadrature (it equals twice the modified Bessel
    /// function I_0 evaluated at 1).
    const COSH_SINE_INTEGRAL: f64 = 2.5321317555040167;

    fn line(cells: usize) -> Grid {
        build_grid(1, &[1.0], &[cells]).expect("unit interval grid")
    }

    #[test]
    fn derived_constants_balanced_normalizations_center_at_zero() {
        let g = line(16);
        let dc = derived_constants(&PbVariant::Us2 { z1: 1.0, z2: 1.0 }, &g).unwrap();
        assert_eq!(dc.well_center, Some(0.0));
        assert_eq!(dc.interior_limit, Some(0.0));
        assert!((dc.energy_limit.unwrap() - 2.0).abs() <= 1e-15);
        let wide = build_grid(1, &[2.5], &[16]).unwrap();
        let dcw = derived_constants(&PbVariant::Us2 { z1: 1.0, z2: 1.0 }, &wide).unwrap();
        assert!((dcw.energy_limit.unwrap() - 5.0).abs() <= 1e-14);
    }

    #[test]
    fn derived_constants_log_ratio_sets_the_well_center() {
        let g = line(16);
        let e2 = std::f64::consts::E * std::f64::consts::E;
        let dc = derived_constants(&PbVariant::Us2 { z1: 1.0, z2: e2 }, &g).unwrap();
        assert!((dc.well_center.unwrap() - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn derived_constants_cation_shift_has_unit_slack() {
        let g = line(16);
        let dc = derived_constants(&PbVariant::UsCation { z1: 1.0, i2: 1.0 }, &g).unwrap();
        assert!((dc.shift - (2.0f64.ln() + 1.0)).abs() <= 1e-15);
        assert!(dc.interior_limit.unwrap().abs() <= 1e-15);
        assert!((dc.z_prime.unwrap() - dc.shift).abs() <= 1e-15);
        // The shifted direct normalization strictly dominates the nonlocal one.
        assert!(1.0 / dc.z_tilde.unwrap() - 1.0 / g.domain_measure() > 0.0);
    }

    #[test]
    fn derived_constants_reject_nonpositive_inputs() {
        let g = line(16);
        let err = derived_constants(&PbVariant::Us2 { z1: 0.0, z2: 1.0 }, &g).unwrap_err();
        assert!(matches!(err, PbError::BadConstant { name: "z1", .. }));
        let err = derived_constants(&PbVariant::Bl { i0: -2.0 }, &g).unwrap_err();
        assert!(matches!(err, PbError::BadConstant { name: "i0", .. }));
    }

    #[test]
    fn energy_of_flat_state_is_the_well_value_times_measure() {
        let g = line(32);
        let psi = ScalarField::constant(g, 0.0);
        let w = BoundaryValues::uniform(&g, 0.0);
        let e = pb_energy(&PbVariant::Us2 { z1: 1.0, z2: 1.0 }, &psi, &w, 1.0).unwrap();
        assert!((e - 2.0).abs() <= 1e-13, "flat-state energy {e}");
    }

    #[test]
    fn energy_of_flat_blocking_state_is_twice_log_measure() {
        let g = build_grid(2, &[2.0, 1.0], &[16, 8]).unwrap();
        let psi = ScalarField::constant(g, 0.4);
        let w = BoundaryValues::uniform(&g, 0.4);
        let e = pb_energy(&PbVariant::Bl { i0: 0.75 }, &psi, &w, 1.0).unwrap();
        let expected = 2.0 * 0.75 * 2.0f64.ln();
        assert!((e - expected).abs() <= 1e-12, "got {e}, expected {expected}");
    }

    #[test]
    fn energy_of_sine_profile_matches_quadrature_reference() {
        let g = line(16384);
        let psi = ScalarField::from_fn(g, |x, _| (PI * x).sin());
        let w = BoundaryValues::uniform(&g, 0.0);
        let e = pb_energy(&PbVariant::Us2 { z1: 1.0, z2: 1.0 }, &psi, &w, 1.0).unwrap();
        let expected = PI * PI / 4.0 + COSH_SINE_INTEGRAL;
        assert!(
            (e - expected).abs() <= 1e-6,
            "energy {e} vs reference {expected}"
        );
    }

    #[test]
    fn energy_overflow_is_an_error() {
        let g = line(16);
        let psi = ScalarField::constant(g, 800.0);
        let w = BoundaryValues::uniform(&g, 800.0);
        let err = pb_energy(&PbVariant::Us2 { z1: 1.0, z2: 1.0 }, &psi, &w, 1.0).unwrap_err();
        assert!(matches!(err, PbError::EnergyNotFinite { .. }));
    }

    #[test]
    fn flat_well_solves_exactly_in_zero_steps() {
        let g = line(256);
        let w = BoundaryValues::uniform(&g, 0.0);
        let sol = pb_solve(&g, &PbVariant::Us2 { z1: 1.0, z2: 1.0 }, 1.0, &w, 1e-12).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.residual_linf, 0.0);
        assert_eq!(sol.rho.linf(), 0.0);
        assert!(sol.phi.values.iter().all(|v| *v == 0.0));
        assert_eq!(sol.energy_trace.len(), 1);
        assert!((sol.energy - 2.0).abs() <= 1e-13);
    }

    #[test]
    fn uniform_wall_blocking_solve_lands_on_the_exact_constant() {
        let g = line(64);
        let w = BoundaryValues::uniform(&g, 5.0);
        let sol = pb_solve(&g, &PbVariant::Bl { i0: 1.0 }, 0.5, &w, 1e-12).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 0, "constant state should satisfy the equation at once");
        let first = sol.phi.values[0];
        assert!((first - 5.0).abs() <= 1e-12);
        assert!(
            sol.phi.values.iter().all(|v| *v == first),
            "potential must be bitwise constant"
        );
        let rho0 = sol.rho.values[0];
        assert!(
            sol.rho.values.iter().all(|v| *v == rho0),
            "charge must be bitwise constant"
        );
        assert!(sol.rho.linf() <= 1e-12);
        assert!(sol.c1.values.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn layer_solution_is_electroneutral_at_the_center() {
        let w_of = |g: &Grid| BoundaryValues::uniform(g, 1.0);
        let coarse_grid = line(512);
        let coarse = pb_solve(
            &coarse_grid,
            &PbVariant::Us2 { z1: 1.0, z2: 1.0 },
            1e-3,
            &w_of(&coarse_grid),
            1e-9,
        )
        .unwrap();
        let fine_grid = line(4096);
        let fine = pb_solve(
            &fine_grid,
            &PbVariant::Us2 { z1: 1.0, z2: 1.0 },
            1e-3,
            &w_of(&fine_grid),
            1e-9,
        )
        .unwrap();
        assert!(coarse.converged && fine.converged);
        let (ci, cj) = coarse_grid.center_cell();
        let (fi, fj) = fine_grid.center_cell();
        assert!(coarse.phi.at(ci, cj).abs() <= 2e-2);
        assert!(coarse.rho.at(ci, cj).abs() <= 2e-2);
        assert!((coarse.phi.at(ci, cj) - fine.phi.at(fi, fj)).abs() <= 1e-3);
        assert!((coarse.energy - fine.energy).abs() <= 5e-3);
        assert!(!coarse.resolution_warning);
    }

    #[test]
    fn cation_interior_plateau_reaches_the_derived_limit() {
        let g = line(512);
        let z1 = 2.0;
        let i2 = 0.25f64.exp().recip() / 2.0; // makes the interior limit 0.25
        let variant = PbVariant::UsCation { z1, i2 };
        let dc = derived_constants(&variant, &g).unwrap();
        assert!((dc.interior_limit.unwrap() - 0.25).abs() <= 1e-14);
        let w = BoundaryValues::uniform(&g, 0.3);
        let (ci, cj) = g.center_cell();
        let coarse = pb_solve(&g, &variant, 1e-3, &w, 1e-8).unwrap();
        let fine = pb_solve(&g, &variant, 1e-4, &w, 1e-8).unwrap();
        assert!(coarse.converged && fine.converged);
        assert!(!fine.resolution_warning);
        let err_coarse = (coarse.phi.at(ci, cj) - 0.25).abs();
        let err_fine = (fine.phi.at(ci, cj) - 0.25).abs();
        assert!(err_fine <= 2e-3, "plateau error {err_fine}");
        assert!(
            err_fine < err_coarse,
            "plateau error must shrink with the layer width: {err_fine} vs {err_coarse}"
        );
        assert!(fine.c1.values.iter().all(|v| *v > 0.0));
        assert!(fine.c2.values.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn energy_trace_is_strictly_decreasing() {
        let g = line(256);
        let w = BoundaryValues::uniform(&g, 1.0);
        let sol = pb_solve(&g, &PbVariant::Us2 { z1: 1.0, z2: 1.0 }, 1e-2, &w, 1e-9).unwrap();
        assert!(sol.converged);
        assert!(sol.iterations >= 1);
        assert!(sol.residual_linf <= 1e-9);
        assert!(sol.energy_trace.len() >= 2);
        for pair in sol.energy_trace.windows(2) {
            assert!(pair[1] < pair[0], "trace must strictly decrease");
        }
        let wb = BoundaryValues::from_fn(&g, |side, _, _| match side {
            Side::Left => 0.8,
            _ => -0.5,
        });
        let bl = pb_solve(&g, &PbVariant::Bl { i0: 1.2 }, 1e-2, &wb, 1e-8).unwrap();
        assert!(bl.converged);
        for pair in bl.energy_trace.windows(2) {
            assert!(pair[1] < pair[0], "blocking trace must strictly decrease");
        }
    }

    #[test]
    fn energy_gradient_matches_residual_times_cell_volume() {
        let g = line(8);
        let variant = PbVariant::Us2 { z1: 1.5, z2: 0.7 };
        let psi = ScalarField::from_fn(g, |x, _| 0.3 * (2.0 * PI * x).sin() + 0.1);
        let w = BoundaryValues::uniform(&g, 0.1);
        let w_data = BoundaryData::from_values(&w);
        let eps = 0.7;
        let f = residual_field(&psi, &w_data, eps, 1.0 / 1.5, 1.0 / 0.7);
        let vol = g.cell_volume();
        let eta = 1e-6;
        for i in 0..g.n_cells() {
            let mut plus = psi.clone();
            plus.values[i] += eta;
            let mut minus = psi.clone();
            minus.values[i] -= eta;
            let ep = pb_energy(&variant, &plus, &w, eps).unwrap();
            let em = pb_energy(&variant, &minus, &w, eps).unwrap();
            let fd = (ep - em) / (2.0 * eta);
            let analytic = vol * f.values[i];
            assert!(
                (fd - analytic).abs() <= 1e-6,
                "cell {i}: finite difference {fd} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn blocking_potential_stays_between_wall_values() {
        let g = line(256);
        let w = BoundaryValues::from_fn(&g, |side, _, _| match side {
            Side::Left => 0.8,
            _ => -0.5,
        });
        let sol = pb_solve(&g, &PbVariant::Bl { i0: 1.2 }, 1e-2, &w, 1e-8).unwrap();
        assert!(sol.converged);
        let (lo, hi) = (w.min(), w.max());
        for v in &sol.phi.values {
            assert!(*v >= lo - 1e-8 && *v <= hi + 1e-8, "potential {v} escapes [{lo}, {hi}]");
        }
    }

    #[test]
    fn layer_charge_square_has_no_interior_maximum() {
        for eps in [1e-1, 1e-2] {
            let g = line(256);
            let w = BoundaryValues::uniform(&g, 1.0);
            let sol = pb_solve(&g, &PbVariant::Us2 { z1: 1.0, z2: 1.0 }, eps, &w, 1e-9).unwrap();
            assert!(sol.converged);
            let min_lap = min_laplacian_of_square(&sol.rho).unwrap();
            let floor = -1e-6 * sol.rho.linf() * sol.rho.linf();
            assert!(min_lap >= floor, "eps {eps}: min Laplacian {min_lap} below {floor}");
        }
    }

    #[test]
    fn anion_solve_is_the_bitwise_mirror_of_the_cation_solve() {
        let g = line(64);
        let w = BoundaryValues::from_fn(&g, |side, _, _| match side {
            Side::Left => 0.2,
            _ => -0.15,
        });
        let anion = pb_solve(&g, &PbVariant::UsAnion { z2: 1.3, i1: 0.7 }, 5e-2, &w, 1e-8)
            .unwrap();
        let cation = pb_solve(
            &g,
            &PbVariant::UsCation { z1: 1.3, i2: 0.7 },
            5e-2,
            &w.negated(),
            1e-8,
        )
        .unwrap();
        assert!(anion.converged && cation.converged);
        assert_eq!(anion.iterations, cation.iterations);
        assert_eq!(anion.energy, cation.energy);
        for i in 0..g.n_cells() {
            assert_eq!(anion.phi.values[i], -cation.phi.values[i]);
            assert_eq!(anion.c1.values[i], cation.c2.values[i]);
            assert_eq!(anion.c2.values[i], cation.c1.values[i]);
            assert_eq!(anion.rho.values[i], -cation.rho.values[i]);
        }
    }

    #[test]
    fn sweep_at_the_well_potential_is_identically_neutral() {
        let g = line(64);
        let variant = PbVariant::Us2 { z1: 2.0, z2: 2.0 };
        let w_fn = |grid: &Grid| BoundaryValues::uniform(grid, 0.0);
        let report = epsilon_sweep(
            &g,
            &variant,
            &[1e-1, 1e-2],
            0.25,
            GridPolicy::Fixed,
            &w_fn,
            1,
            1e-12,
        )
        .unwrap();
        assert_eq!(report.entries.len(), 2);
        for pair in report.entries.windows(2) {
            assert!(pair[1].eps < pair[0].eps);
        }
        for entry in &report.entries {
            assert!(entry.converged);
            assert_eq!(entry.interior_sup_rho, 0.0);
        }
    }

    #[test]
    fn sweep_energy_is_monotone_and_bounded_below_by_the_limit() {
        let g = line(64);
        let variant = PbVariant::Us2 { z1: 1.0, z2: 1.0 };
        let limit = derived_constants(&variant, &g).unwrap().energy_limit.unwrap();
        let w_fn = |grid: &Grid| BoundaryValues::uniform(grid, 1.0);
        let report = epsilon_sweep(
            &g,
            &variant,
            &[1e-1, 3e-2, 1e-2],
            0.25,
            GridPolicy::RefineToResolve,
            &w_fn,
            1,
            1e-9,
        )
        .unwrap();
        for entry in &report.entries {
            assert!(entry.converged);
            assert!(entry.energy >= limit - 1e-9, "energy {} below limit {limit}", entry.energy);
        }
        for pair in report.entries.windows(2) {
            assert!(
                pair[1].energy <= pair[0].energy + 1e-12,
                "energy must not increase as epsilon decreases"
            );
        }
    }

    #[test]
    fn sweep_rejects_bad_margins_and_unsorted_lists() {
        let g = line(64);
        let variant = PbVariant::Us2 { z1: 1.0, z2: 1.0 };
        let w_fn = |grid: &Grid| BoundaryValues::uniform(grid, 0.0);
        let err = epsilon_sweep(&g, &variant, &[1e-1], 0.6, GridPolicy::Fixed, &w_fn, 1, 1e-11)
            .unwrap_err();
        assert!(matches!(err, PbError::BadMargin { .. }));
        let err = epsilon_sweep(&g, &variant, &[1e-1], 0.0, GridPolicy::Fixed, &w_fn, 1, 1e-11)
            .unwrap_err();
        assert!(matches!(err, PbError::BadMargin { .. }));
        let err = epsilon_sweep(
            &g,
            &variant,
            &[1e-2, 1e-1],
            0.25,
            GridPolicy::Fixed,
            &w_fn,
            1,
            1e-11,
        )
        .unwrap_err();
        assert!(matches!(err, PbError::BadEpsilonList));
        let err = epsilon_sweep(&g, &variant, &[], 0.25, GridPolicy::Fixed, &w_fn, 1, 1e-11)
            .unwrap_err();
        assert!(matches!(err, PbError::BadEpsilonList));
    }

    #[test]
    fn sweep_worker_count_does_not_change_the_report() {
        let g = line(64);
        let variant = PbVariant::Bl { i0: 1.0 };
        let w_fn = |grid: &Grid| {
            BoundaryValues::from_fn(grid, |side, _, _| match side {
                Side::Left => 1.0,
                _ => -1.0,
            })
        };
        let eps = [1e-1, 3e-2, 1e-2];
        let serial = epsilon_sweep(
            &g,
            &variant,
            &eps,
            0.25,
            GridPolicy::RefineToResolve,
            &w_fn,
            1,
            1e-9,
        )
        .unwrap();
        let parallel = epsilon_sweep(
            &g,
            &variant,
            &eps,
            0.25,
            GridPolicy::RefineToResolve,
            &w_fn,
            3,
            1e-9,
        )
        .unwrap();
        assert_eq!(serial.to_csv(), parallel.to_csv());
    }

    proptest! {
        #[test]
        fn cation_shift_always_dominates_the_nonlocal_normalization(
            z1 in 0.05f64..20.0,
            i2 in 0.05f64..20.0,
            extent in 0.5f64..4.0,
        ) {
            let g = build_grid(1, &[extent], &[16]).unwrap();
            let dc = derived_constants(&PbVariant::UsCation { z1, i2 }, &g).unwrap();
            let measure = g.domain_measure();
            let z_tilde = dc.z_tilde.unwrap();
            prop_assert!(dc.shift >= 1.0 - 1e-12);
            prop_assert!(1.0 / z_tilde - i2 / measure > 0.0);
            prop_assert!((dc.z_prime.unwrap() - (dc.shift + dc.interior_limit.unwrap())).abs() <= 1e-12);
            // The shifted normalization keeps the exponent argument bounded:
            // 2 i2 z_tilde / measure <= e^{-1}.
            prop_assert!(2.0 * i2 * z_tilde / measure <= (-1.0f64).exp() * (1.0 + 1e-12));
        }
    }
}
