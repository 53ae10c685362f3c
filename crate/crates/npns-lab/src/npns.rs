//! Time integration of the two-species Nernst–Planck–Poisson system with
//! optional incompressible flow. One step is first-order IMEX: advection and
//! electric drift are explicit (upwind / Scharfetter–Gummel with the
//! potential lagged), diffusion is implicit, then the potential is re-solved
//! from the updated charge. Cell updates are applied in flux form so that
//! conservation laws telescope exactly across faces.

mod fluid;

pub use fluid::{fluid_step, kinetic_energy, project_divergence_free, random_divergence_free};

use crate::diagnostics::{self, DiagnosticsRecord};
use crate::elliptic::{solve_elliptic, solve_poisson, EllipticError, LinearEllipticProblem};
use crate::grid::{
    bernoulli, BoundaryData, BoundaryValues, FaceBc, Grid, ScalarField, Side, VectorField,
};
use thiserror::Error;

/// Valences are fixed: species 1 is the cation (+1), species 2 the anion (−1).
pub const VALENCES: [f64; 2] = [1.0, -1.0];

#[derive(Debug, Error)]
pub enum NpError {
    #[error("model parameter {name} must be positive, got {value}")]
    NonPositiveParam { name: &'static str, value: f64 },
    #[error("potential boundary data must be Dirichlet on every face (face {face} is a flux face)")]
    PotentialNotDirichlet { face: usize },
    #[error("boundary concentration gamma{species} must be positive, got {value} at {side} face {k}")]
    NonPositiveGamma { species: usize, side: &'static str, k: usize, value: f64 },
    #[error("selective boundary requires log(gamma{species}) {sign} W constant on its side set; spread {spread:e} at {side} face {k} exceeds 1e-12")]
    SelectiveNotUniform { species: usize, sign: char, side: &'static str, k: usize, spread: f64 },
    #[error("selective boundary requires at least one nonempty side set")]
    NoSelectiveSides,
    #[error("side {side} listed twice in a selective side set")]
    DuplicateSide { side: &'static str },
    #[error("side {side} does not exist on a {dim}D grid")]
    SideNotOnGrid { side: &'static str, dim: usize },
    #[error("initial concentration c{species} is negative ({value}) at cell {cell}")]
    NegativeInitial { species: usize, cell: usize, value: f64 },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("dt {dt} exceeds the stability bound {bound}")]
    DtExceedsStability { dt: f64, bound: f64 },
    #[error("dt must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("concentration went below -1e-13 even after {retries} dt halvings (min {min})")]
    NegativityPersists { retries: usize, min: f64 },
    #[error("fluid stepping requires a 2D grid")]
    FluidNeedsTwoD,
    #[error("{context} solve failed: {source}")]
    Solver { context: &'static str, source: EllipticError },
    #[error("diagnostics failed: {0}")]
    Diagnostics(#[from] diagnostics::DiagError),
}

/// Physical constants of the model. Valences are fixed at ±1; the derived
/// combinations delta and dcap are always recomputed from the diffusivities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Rescaled permittivity (square of the screening length).
    pub epsilon: f64,
    pub d1: f64,
    pub d2: f64,
    pub nu: f64,
    pub kcoup: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), NpError> {
        for (name, value) in [
            ("epsilon", self.epsilon),
            ("d1", self.d1),
            ("d2", self.d2),
            ("nu", self.nu),
            ("kcoup", self.kcoup),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(NpError::NonPositiveParam { name, value });
            }
        }
        Ok(())
    }

    /// Half-difference of the diffusivities.
    pub fn delta(&self) -> f64 {
        (self.d2 - self.d1) / 2.0
    }

    /// Mean diffusivity; always strictly larger than |delta| for positive Di.
    pub fn dcap(&self) -> f64 {
        (self.d1 + self.d2) / 2.0
    }

    pub fn max_d(&self) -> f64 {
        self.d1.max(self.d2)
    }

    fn d(&self, species: usize) -> f64 {
        if species == 0 {
            self.d1
        } else {
            self.d2
        }
    }
}

/// The four boundary families for the ionic concentrations. The potential is
/// always Dirichlet; these govern the species fluxes.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// Impermeable walls: zero total normal electrodiffusive flux.
    Bl,
    /// Prescribed concentrations on the whole boundary.
    Di { gamma1: BoundaryValues, gamma2: BoundaryValues },
    /// Prescribed concentrations on per-species side sets, blocking elsewhere;
    /// the boundary electrochemical potential must be uniform on each set.
    Us { s1: Vec<Side>, s2: Vec<Side>, gamma1: BoundaryValues, gamma2: BoundaryValues },
    /// Electroneutral wall: zero charge and zero normal salt gradient.
    En,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Bl => "bl",
            Family::Di { .. } => "di",
            Family::Us { .. } => "us",
            Family::En => "en",
        }
    }
}

/// Validated boundary data: Dirichlet potential plus a concentration family.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySpec {
    pub w: BoundaryValues,
    pub family: Family,
}

impl BoundarySpec {
    pub fn new(grid: &Grid, w: BoundaryData, family: Family) -> Result<Self, NpError> {
        for (face, f) in w.faces.iter().enumerate() {
            if matches!(f, FaceBc::Flux(_)) {
                return Err(NpError::PotentialNotDirichlet { face });
            }
        }
        let values: Vec<f64> = w
            .faces
            .iter()
            .map(|f| match f {
                FaceBc::Value(v) => *v,
                FaceBc::Flux(_) => unreachable!(),
            })
            .collect();
        let w = BoundaryValues { values };

        match &family {
            Family::Bl | Family::En => {}
            Family::Di { gamma1, gamma2 } => {
                for (species, g) in [(1usize, gamma1), (2usize, gamma2)] {
                    check_positive_gammas(grid, g, species, None)?;
                }
            }
            Family::Us { s1, s2, gamma1, gamma2 } => {
                if s1.is_empty() && s2.is_empty() {
                    return Err(NpError::NoSelectiveSides);
                }
                for (species, sides, g) in [(1usize, s1, gamma1), (2usize, s2, gamma2)] {
                    check_side_list(grid, sides)?;
                    check_positive_gammas(grid, g, species, Some(sides))?;
                    check_uniform_potential(grid, sides, g, &w, species)?;
                }
            }
        }
        Ok(BoundarySpec { w, family })
    }

    /// Selected Dirichlet sides for a species under the selective family.
    fn value_sides(&self, species: usize) -> Option<&[Side]> {
        match &self.family {
            Family::Us { s1, s2, .. } => Some(if species == 0 { s1 } else { s2 }),
            _ => None,
        }
    }

    fn gamma(&self, species: usize) -> Option<&BoundaryValues> {
        match &self.family {
            Family::Di { gamma1, gamma2 } | Family::Us { gamma1, gamma2, .. } => {
                Some(if species == 0 { gamma1 } else { gamma2 })
            }
            _ => None,
        }
    }

    /// Boundary closure seen by the implicit diffusion solve of one species.
    fn species_bc(&self, grid: &Grid, species: usize) -> BoundaryData {
        match &self.family {
            Family::Bl => BoundaryData::uniform_flux(grid, 0.0),
            Family::Di { .. } => {
                let g = self.gamma(species).unwrap();
                BoundaryData { faces: g.values.iter().map(|&v| FaceBc::Value(v)).collect() }
            }
            Family::Us { .. } => {
                let g = self.gamma(species).unwrap();
                let sides = self.value_sides(species).unwrap();
                let mut faces = vec![FaceBc::Flux(0.0); grid.boundary_face_count()];
                for &side in sides {
                    for k in 0..grid.side_face_count(side) {
                        let idx = grid.boundary_face_index(side, k);
                        faces[idx] = FaceBc::Value(g.values[idx]);
                    }
                }
                BoundaryData { faces }
            }
            Family::En => unreachable!("electroneutral diffusion is solved as a coupled system"),
        }
    }
}

fn check_positive_gammas(
    grid: &Grid,
    g: &BoundaryValues,
    species: usize,
    sides: Option<&[Side]>,
) -> Result<(), NpError> {
    let all_sides = grid.sides();
    let selected: Vec<Side> = match sides {
        Some(s) => s.to_vec(),
        None => all_sides.to_vec(),
    };
    for side in selected {
        for k in 0..grid.side_face_count(side) {
            let value = g.values[grid.boundary_face_index(side, k)];
            if !(value > 0.0) {
                return Err(NpError::NonPositiveGamma { species, side: side.name(), k, value });
            }
        }
    }
    Ok(())
}

fn check_side_list(grid: &Grid, sides: &[Side]) -> Result<(), NpError> {
    for (i, s) in sides.iter().enumerate() {
        if !grid.sides().contains(s) {
            return Err(NpError::SideNotOnGrid { side: s.name(), dim: grid.dim });
        }
        if sides[..i].contains(s) {
            return Err(NpError::DuplicateSide { side: s.name() });
        }
    }
    Ok(())
}

/// The selective condition demands log(gamma_i) + z_i W equal across the side
/// set: the boundary electrochemical potential is a single constant.
fn check_uniform_potential(
    grid: &Grid,
    sides: &[Side],
    g: &BoundaryValues,
    w: &BoundaryValues,
    species: usize,
) -> Result<(), NpError> {
    let z = VALENCES[species - 1];
    let mut first: Option<f64> = None;
    for &side in sides {
        for k in 0..grid.side_face_count(side) {
            let idx = grid.boundary_face_index(side, k);
            let mu = g.values[idx].ln() + z * w.values[idx];
            let reference = *first.get_or_insert(mu);
            let spread = (mu - reference).abs();
            if spread > 1e-12 {
                return Err(NpError::SelectiveNotUniform {
                    species,
                    sign: if z > 0.0 { '+' } else { '-' },
                    side: side.name(),
                    k,
                    spread,
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluidMode {
    Off,
    Stokes,
    NavierStokes,
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub c1: ScalarField,
    pub c2: ScalarField,
    pub phi: ScalarField,
    pub u: VectorField,
    pub p: ScalarField,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt_max: f64,
    pub t_end: f64,
    pub output_every: f64,
}

/// Everything a simulation run needs besides the initial fields.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub grid: Grid,
    pub params: ModelParams,
    pub bc: BoundarySpec,
    pub fluid: FluidMode,
    pub time: TimeGrid,
    /// Margin for the interior supremum column of the records.
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<DiagnosticsRecord>,
    pub final_state: SimState,
    pub completed: bool,
    pub failure: Option<String>,
}

/// Validate and assemble the initial state: nonnegative concentrations, a
/// divergence-free velocity (projected if necessary), and the potential
/// solved from the initial charge.
pub fn init_state(
    c1: ScalarField,
    c2: ScalarField,
    u: VectorField,
    params: &ModelParams,
    bc: &BoundarySpec,
    fluid: FluidMode,
) -> Result<SimState, NpError> {
    params.validate()?;
    let grid = c1.grid;
    if c2.grid != grid || u.grid != grid {
        return Err(NpError::GridMismatch);
    }
    for (species, c) in [(1usize, &c1), (2usize, &c2)] {
        for (cell, &v) in c.values.iter().enumerate() {
            if v < 0.0 {
                return Err(NpError::NegativeInitial { species, cell, value: v });
            }
        }
    }
    let (u, p) = match fluid {
        FluidMode::Off => (VectorField::zero(grid), ScalarField::constant(grid, 0.0)),
        _ => {
            if grid.dim != 2 {
                return Err(NpError::FluidNeedsTwoD);
            }
            let (u_proj, _q) = project_divergence_free(&u)
                .map_err(|source| NpError::Solver { context: "initial projection", source })?;
            (u_proj, ScalarField::constant(grid, 0.0))
        }
    };
    let rho = field_sub(&c1, &c2);
    let (phi, _) = solve_poisson(params.epsilon, &rho, &bc.w)
        .map_err(|source| NpError::Solver { context: "initial potential", source })?;
    Ok(SimState { t: 0.0, c1, c2, phi, u, p })
}

fn field_sub(a: &ScalarField, b: &ScalarField) -> ScalarField {
    ScalarField {
        grid: a.grid,
        values: a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect(),
    }
}

/// Largest stable dt: advective CFL and a drift constraint built from the
/// steepest potential gradient over all faces (boundary faces measured
/// through their ghost closure).
pub fn stability_bound(state: &SimState, params: &ModelParams, bc: &BoundarySpec) -> f64 {
    let grid = state.c1.grid;
    let h_min = if grid.dim == 2 { grid.h[0].min(grid.h[1]) } else { grid.h[0] };
    let mut grad_phi = 0.0f64;
    let phi = &state.phi;
    let (nx, ny) = (grid.nx(), grid.ny());
    for j in 0..ny {
        for i in 0..nx.saturating_sub(1) {
            grad_phi = grad_phi.max(((phi.at(i + 1, j) - phi.at(i, j)) / grid.h[0]).abs());
        }
    }
    if grid.dim == 2 {
        for j in 0..ny - 1 {
            for i in 0..nx {
                grad_phi = grad_phi.max(((phi.at(i, j + 1) - phi.at(i, j)) / grid.h[1]).abs());
            }
        }
    }
    for &side in grid.sides() {
        let h = grid.normal_h(side);
        for k in 0..grid.side_face_count(side) {
            let (i, j) = grid.boundary_cell(side, k);
            let w = bc.w.values[grid.boundary_face_index(side, k)];
            grad_phi = grad_phi.max((2.0 * (phi.at(i, j) - w) / h).abs());
        }
    }
    let u_max = state.u.linf();
    let adv = if u_max > 0.0 { h_min / u_max } else { f64::INFINITY };
    let drift = if grad_phi > 0.0 {
        params.epsilon * h_min / (2.0 * params.max_d() * grad_phi)
    } else {
        f64::INFINITY
    };
    adv.min(drift)
}

/// Per-face fluxes, oriented along the positive axis everywhere (boundary
/// faces included), indexed like the grid's canonical face layout.
struct FaceFluxes {
    interior: VectorField,
    boundary: Vec<f64>,
}

impl FaceFluxes {
    fn zero(grid: Grid) -> Self {
        FaceFluxes { interior: VectorField::zero(grid), boundary: vec![0.0; grid.boundary_face_count()] }
    }

    fn add(&mut self, other: &FaceFluxes) {
        for (a, b) in self.interior.x.iter_mut().zip(&other.interior.x) {
            *a += b;
        }
        for (a, b) in self.interior.y.iter_mut().zip(&other.interior.y) {
            *a += b;
        }
        for (a, b) in self.boundary.iter_mut().zip(&other.boundary) {
            *a += b;
        }
    }
}

/// Net outflow per cell including boundary faces.
fn total_divergence(grid: &Grid, f: &FaceFluxes) -> ScalarField {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut out = vec![0.0; grid.n_cells()];
    for j in 0..ny {
        for i in 0..nx {
            let left = if i == 0 {
                f.boundary[grid.boundary_face_index(Side::Left, j)]
            } else {
                f.interior.x[f.interior.fx(i - 1, j)]
            };
            let right = if i + 1 == nx {
                f.boundary[grid.boundary_face_index(Side::Right, j)]
            } else {
                f.interior.x[f.interior.fx(i, j)]
            };
            out[grid.idx(i, j)] = (right - left) / grid.h[0];
        }
    }
    if grid.dim == 2 {
        for j in 0..ny {
            for i in 0..nx {
                let bottom = if j == 0 {
                    f.boundary[grid.boundary_face_index(Side::Bottom, i)]
                } else {
                    f.interior.y[f.interior.fy(i, j - 1)]
                };
                let top = if j + 1 == ny {
                    f.boundary[grid.boundary_face_index(Side::Top, i)]
                } else {
                    f.interior.y[f.interior.fy(i, j)]
                };
                out[grid.idx(i, j)] += (top - bottom) / grid.h[1];
            }
        }
    }
    ScalarField { grid: *grid, values: out }
}

/// Upwind advective fluxes u*c on interior faces; boundary faces carry no
/// advection because the velocity satisfies no-slip.
fn advective_fluxes(c: &ScalarField, u: &VectorField) -> FaceFluxes {
    let grid = c.grid;
    let mut f = FaceFluxes::zero(grid);
    let (nx, ny) = (grid.nx(), grid.ny());
    for j in 0..ny {
        for i in 0..nx - 1 {
            let vel = u.x[u.fx(i, j)];
            let c_up = if vel >= 0.0 { c.at(i, j) } else { c.at(i + 1, j) };
            f.interior.x[u.fx(i, j)] = vel * c_up;
        }
    }
    if grid.dim == 2 {
        for j in 0..ny - 1 {
            for i in 0..nx {
                let vel = u.y[u.fy(i, j)];
                let c_up = if vel >= 0.0 { c.at(i, j) } else { c.at(i, j + 1) };
                f.interior.y[u.fy(i, j)] = vel * c_up;
            }
        }
    }
    f
}

/// Linear diffusive fluxes -D*grad(c) on interior faces.
fn interior_diffusive_fluxes(c: &ScalarField, d: f64) -> VectorField {
    let grid = c.grid;
    let mut out = VectorField::zero(grid);
    let (nx, ny) = (grid.nx(), grid.ny());
    for j in 0..ny {
        for i in 0..nx - 1 {
            let f = out.fx(i, j);
            out.x[f] = d * (c.at(i, j) - c.at(i + 1, j)) / grid.h[0];
        }
    }
    if grid.dim == 2 {
        for j in 0..ny - 1 {
            for i in 0..nx {
                let f = out.fy(i, j);
                out.y[f] = d * (c.at(i, j) - c.at(i, j + 1)) / grid.h[1];
            }
        }
    }
    out
}

/// Scharfetter–Gummel flux across a gap of width `h` from node L to node R.
fn sg_flux(d: f64, h: f64, theta: f64, c_l: f64, c_r: f64) -> f64 {
    (d / h) * (bernoulli(theta) * c_l - bernoulli(-theta) * c_r)
}

/// Explicit drift fluxes: the full Scharfetter–Gummel electrodiffusive flux
/// minus its pure-diffusion part (which the implicit solve re-applies).
/// Boundary faces follow the family: blocked faces carry zero total flux,
/// Dirichlet faces couple to the boundary value across half a cell, and
/// electroneutral faces couple to the swapped partner concentration.
fn drift_fluxes(
    c: &ScalarField,
    c_partner: &ScalarField,
    phi: &ScalarField,
    species: usize,
    params: &ModelParams,
    bc: &BoundarySpec,
) -> FaceFluxes {
    let grid = c.grid;
    let z = VALENCES[species];
    let d = params.d(species);
    let mut f = FaceFluxes::zero(grid);
    let (nx, ny) = (grid.nx(), grid.ny());

    for j in 0..ny {
        for i in 0..nx - 1 {
            let theta = z * (phi.at(i + 1, j) - phi.at(i, j));
            let total = sg_flux(d, grid.h[0], theta, c.at(i, j), c.at(i + 1, j));
            let diff = d * (c.at(i, j) - c.at(i + 1, j)) / grid.h[0];
            let fi = f.interior.fx(i, j);
            f.interior.x[fi] = total - diff;
        }
    }
    if grid.dim == 2 {
        for j in 0..ny - 1 {
            for i in 0..nx {
                let theta = z * (phi.at(i, j + 1) - phi.at(i, j));
                let total = sg_flux(d, grid.h[1], theta, c.at(i, j), c.at(i, j + 1));
                let diff = d * (c.at(i, j) - c.at(i, j + 1)) / grid.h[1];
                let fi = f.interior.fy(i, j);
                f.interior.y[fi] = total - diff;
            }
        }
    }

    let value_sides = bc.value_sides(species);
    for &side in grid.sides() {
        let h = grid.normal_h(side);
        let inward = matches!(side, Side::Left | Side::Bottom);
        for k in 0..grid.side_face_count(side) {
            let idx = grid.boundary_face_index(side, k);
            let (i, j) = grid.boundary_cell(side, k);
            let c_in = c.at(i, j);
            let phi_in = phi.at(i, j);
            let w = bc.w.values[idx];
            let flux = match &bc.family {
                Family::Bl => 0.0,
                Family::Di { .. } | Family::Us { .. } => {
                    let dirichlet = match &bc.family {
                        Family::Di { .. } => true,
                        Family::Us { .. } => value_sides.unwrap().contains(&side),
                        _ => unreachable!(),
                    };
                    if !dirichlet {
                        0.0
                    } else {
                        let gamma = bc.gamma(species).unwrap().values[idx];
                        // SG across the half cell between face and center;
                        // subtract the implicit closure's linear part.
                        if inward {
                            let theta = z * (phi_in - w);
                            sg_flux(d, h / 2.0, theta, gamma, c_in)
                                - 2.0 * d * (gamma - c_in) / h
                        } else {
                            let theta = z * (w - phi_in);
                            sg_flux(d, h / 2.0, theta, c_in, gamma)
                                - 2.0 * d * (c_in - gamma) / h
                        }
                    }
                }
                Family::En => {
                    // Ghost swap: the ghost of each species carries the
                    // partner's interior value, and the reflected potential
                    // gives theta across the full cell gap.
                    let g = c_partner.at(i, j);
                    if inward {
                        let theta = z * 2.0 * (phi_in - w);
                        sg_flux(d, h, theta, g, c_in) - d * (g - c_in) / h
                    } else {
                        let theta = z * 2.0 * (w - phi_in);
                        sg_flux(d, h, theta, c_in, g) - d * (c_in - g) / h
                    }
                }
            };
            f.boundary[idx] = flux;
        }
    }
    f
}

/// Diffusive fluxes of a solved field including its boundary closure, used
/// for the flux-form final update.
fn diffusive_fluxes_with_bc(c: &ScalarField, d: f64, bc: &BoundaryData) -> FaceFluxes {
    let grid = c.grid;
    let mut f = FaceFluxes { interior: interior_diffusive_fluxes(c, d), boundary: vec![0.0; grid.boundary_face_count()] };
    for &side in grid.sides() {
        let h = grid.normal_h(side);
        for k in 0..grid.side_face_count(side) {
            let idx = grid.boundary_face_index(side, k);
            let (i, j) = grid.boundary_cell(side, k);
            let grad = crate::grid::boundary_face_gradient(side, c.at(i, j), bc.at(&grid, side, k), h);
            f.boundary[idx] = -d * grad;
        }
    }
    f
}

/// Electroneutral diffusive boundary fluxes of the solved pair: each species
/// couples to the partner's boundary value across the full cell gap.
fn en_diffusive_fluxes(c: &ScalarField, partner: &ScalarField, d: f64) -> FaceFluxes {
    let grid = c.grid;
    let mut f = FaceFluxes { interior: interior_diffusive_fluxes(c, d), boundary: vec![0.0; grid.boundary_face_count()] };
    for &side in grid.sides() {
        let h = grid.normal_h(side);
        let inward = matches!(side, Side::Left | Side::Bottom);
        for k in 0..grid.side_face_count(side) {
            let idx = grid.boundary_face_index(side, k);
            let (i, j) = grid.boundary_cell(side, k);
            let g = partner.at(i, j);
            let c_in = c.at(i, j);
            f.boundary[idx] = if inward { d * (g - c_in) / h } else { d * (c_in - g) / h };
        }
    }
    f
}

/// Backward-Euler diffusion for the electroneutral family: the two species
/// are one linear system glued along the boundary by the ghost swap. Scaling
/// each species block by 1/(dt*Di) makes the matrix symmetric positive
/// definite; Jacobi-preconditioned CG solves it. The row sums of the glued
/// graph Laplacian vanish, which is what conserves the linear invariant.
struct EnGluedSystem {
    grid: Grid,
    dt: f64,
    d: [f64; 2],
}

impl EnGluedSystem {
    fn n(&self) -> usize {
        self.grid.n_cells()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let grid = self.grid;
        let (nx, ny) = (grid.nx(), grid.ny());
        let n = self.n();
        let inv_h2 = [1.0 / (grid.h[0] * grid.h[0]), 1.0 / (grid.h[1] * grid.h[1])];
        for s in 0..2 {
            let block = &x[s * n..(s + 1) * n];
            let partner = &x[(1 - s) * n..(2 - s) * n];
            let shift = 1.0 / (self.dt * self.d[s]);
            for j in 0..ny {
                for i in 0..nx {
                    let v = block[grid.idx(i, j)];
                    let mut acc = shift * v;
                    // x-direction neighbors; boundary faces couple to the partner block.
                    let left = if i == 0 { partner[grid.idx(i, j)] } else { block[grid.idx(i - 1, j)] };
                    let right = if i + 1 == nx { partner[grid.idx(i, j)] } else { block[grid.idx(i + 1, j)] };
                    acc += inv_h2[0] * (2.0 * v - left - right);
                    if grid.dim == 2 {
                        let bottom = if j == 0 { partner[grid.idx(i, j)] } else { block[grid.idx(i, j - 1)] };
                        let top = if j + 1 == ny { partner[grid.idx(i, j)] } else { block[grid.idx(i, j + 1)] };
                        acc += inv_h2[1] * (2.0 * v - bottom - top);
                    }
                    out[s * n + grid.idx(i, j)] = acc;
                }
            }
        }
    }

    fn solve(&self, rhs1: &[f64], rhs2: &[f64], tol: f64) -> Result<(Vec<f64>, Vec<f64>), NpError> {
        let grid = self.grid;
        let n = self.n();
        let mut b = vec![0.0; 2 * n];
        for (i, (&r, d)) in rhs1.iter().zip(std::iter::repeat(self.d[0])).enumerate() {
            b[i] = r / (self.dt * d);
        }
        for (i, (&r, d)) in rhs2.iter().zip(std::iter::repeat(self.d[1])).enumerate() {
            b[n + i] = r / (self.dt * d);
        }
        let h2 = [1.0 / (grid.h[0] * grid.h[0]), 1.0 / (grid.h[1] * grid.h[1])];
        let per_cell = if grid.dim == 2 { 2.0 * h2[0] + 2.0 * h2[1] } else { 2.0 * h2[0] };
        let diag: Vec<f64> = (0..2 * n)
            .map(|i| 1.0 / (self.dt * self.d[i / n]) + per_cell)
            .collect();

        let mut x = vec![0.0; 2 * n];
        let mut r = b.clone();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let mut s = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let cap = 100 * grid.nx().max(grid.ny()).max(8);
        let mut iterations = 0;
        let mut as_ = vec![0.0; 2 * n];
        loop {
            let r_norm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if r_norm <= tol {
                // Certify against the true residual before accepting.
                self.apply(&x, &mut as_);
                let mut worst = 0.0f64;
                for i in 0..2 * n {
                    worst = worst.max((b[i] - as_[i]).abs());
                }
                if worst <= tol {
                    return Ok((x[..n].to_vec(), x[n..].to_vec()));
                }
                for i in 0..2 * n {
                    r[i] = b[i] - as_[i];
                    z[i] = r[i] / diag[i];
                    s[i] = z[i];
                }
                rz = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            }
            if iterations >= cap {
                return Err(NpError::Solver {
                    context: "electroneutral diffusion",
                    source: EllipticError::NoConvergence {
                        iterations,
                        residual_linf: r_norm,
                        tol,
                    },
                });
            }
            iterations += 1;
            self.apply(&s, &mut as_);
            let sas: f64 = s.iter().zip(&as_).map(|(a, b)| a * b).sum();
            let alpha = rz / sas;
            for i in 0..2 * n {
                x[i] += alpha * s[i];
                r[i] -= alpha * as_[i];
                z[i] = r[i] / diag[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..2 * n {
                s[i] = z[i] + beta * s[i];
            }
        }
    }
}

/// One IMEX step of both species at the given dt, without retries.
fn try_step(
    state: &SimState,
    params: &ModelParams,
    bc: &BoundarySpec,
    dt: f64,
) -> Result<SimState, NpError> {
    let grid = state.c1.grid;
    let species_fields = [&state.c1, &state.c2];
    let mut rhs = Vec::with_capacity(2);
    for s in 0..2 {
        let c = species_fields[s];
        let partner = species_fields[1 - s];
        let mut explicit = drift_fluxes(c, partner, &state.phi, s, params, bc);
        if state.u.linf() > 0.0 {
            explicit.add(&advective_fluxes(c, &state.u));
        }
        let div = total_divergence(&grid, &explicit);
        let values: Vec<f64> =
            c.values.iter().zip(&div.values).map(|(c, d)| c - dt * d).collect();
        rhs.push(ScalarField { grid, values });
    }

    // Implicit diffusion, then the flux-form final update: the new cell
    // values are written as old value minus dt times the divergence of the
    // total face fluxes, so sums over cells telescope exactly.
    let mut finals = Vec::with_capacity(2);
    match &bc.family {
        Family::En => {
            let system = EnGluedSystem { grid, dt, d: [params.d1, params.d2] };
            let scale = rhs[0].linf().max(rhs[1].linf()) / (dt * params.d1.min(params.d2));
            let tol = 1e-12 * scale.max(1.0);
            let (c1s, c2s) = system.solve(&rhs[0].values, &rhs[1].values, tol)?;
            let solved = [
                ScalarField { grid, values: c1s },
                ScalarField { grid, values: c2s },
            ];
            for s in 0..2 {
                let flux = en_diffusive_fluxes(&solved[s], &solved[1 - s], params.d(s));
                let div = total_divergence(&grid, &flux);
                let values: Vec<f64> = rhs[s]
                    .values
                    .iter()
                    .zip(&div.values)
                    .map(|(r, d)| r - dt * d)
                    .collect();
                finals.push(ScalarField { grid, values });
            }
        }
        _ => {
            for s in 0..2 {
                let bc_s = bc.species_bc(&grid, s);
                let problem = LinearEllipticProblem {
                    grid,
                    kappa: dt * params.d(s),
                    reaction: ScalarField::constant(grid, 1.0),
                    rhs: rhs[s].clone(),
                    bc: bc_s.clone(),
                };
                let tol = 1e-12 * rhs[s].linf().max(1.0);
                let (solved, _) = solve_elliptic(&problem, tol)
                    .map_err(|source| NpError::Solver { context: "species diffusion", source })?;
                let flux = diffusive_fluxes_with_bc(&solved, params.d(s), &bc_s);
                let div = total_divergence(&grid, &flux);
                let values: Vec<f64> = rhs[s]
                    .values
                    .iter()
                    .zip(&div.values)
                    .map(|(r, d)| r - dt * d)
                    .collect();
                finals.push(ScalarField { grid, values });
            }
        }
    }

    let min_new = finals[0].min().min(finals[1].min());
    if min_new < -1e-13 {
        return Err(NpError::NegativityPersists { retries: 0, min: min_new });
    }

    let rho = field_sub(&finals[0], &finals[1]);
    let (phi, _) = solve_poisson(params.epsilon, &rho, &bc.w)
        .map_err(|source| NpError::Solver { context: "potential update", source })?;
    let c2 = finals.pop().unwrap();
    let c1 = finals.pop().unwrap();
    Ok(SimState { t: state.t + dt, c1, c2, phi, u: state.u.clone(), p: state.p.clone() })
}

/// One transport step. The requested dt must respect the stability bound;
/// if the update drives a concentration below -1e-13 the step is retried at
/// half the dt, up to ten times, and the state actually advanced by the
/// successful dt (read the new `t`).
pub fn np_step(
    state: &SimState,
    params: &ModelParams,
    bc: &BoundarySpec,
    dt: f64,
) -> Result<SimState, NpError> {
    if !(dt > 0.0) {
        return Err(NpError::NonPositiveDt(dt));
    }
    let bound = stability_bound(state, params, bc);
    if dt > bound * (1.0 + 1e-9) {
        return Err(NpError::DtExceedsStability { dt, bound });
    }
    let mut attempt_dt = dt;
    let mut worst_min = 0.0f64;
    for retry in 0..=10 {
        match try_step(state, params, bc, attempt_dt) {
            Ok(next) => return Ok(next),
            Err(NpError::NegativityPersists { min, .. }) => {
                worst_min = min;
                if retry == 10 {
                    break;
                }
                attempt_dt /= 2.0;
            }
            Err(e) => return Err(e),
        }
    }
    Err(NpError::NegativityPersists { retries: 10, min: worst_min })
}

/// Run the IMEX loop from t=0 to t_end, recording diagnostics on the output
/// cadence. Steps land exactly on output times, which keeps runs deterministic
/// for a fixed setup. A step failure ends the run early with the partial
/// trajectory flagged.
pub fn simulate(
    setup: &SimSetup,
    c1_0: ScalarField,
    c2_0: ScalarField,
    u_0: VectorField,
) -> Result<Trajectory, NpError> {
    let mut state = init_state(c1_0, c2_0, u_0, &setup.params, &setup.bc, setup.fluid)?;
    let mut records =
        vec![diagnostics::record(&state, &setup.params, &setup.bc, setup.margin)?];
    let t_end = setup.time.t_end;
    let mut next_output = setup.time.output_every;
    let mut completed = true;
    let mut failure = None;

    while state.t < t_end * (1.0 - 1e-12) {
        let bound = stability_bound(&state, &setup.params, &setup.bc);
        let mut dt = setup.time.dt_max.min(bound).min(t_end - state.t);
        let to_output = next_output - state.t;
        if to_output > 1e-12 * t_end {
            dt = dt.min(to_output);
        }
        let stepped = np_step(&state, &setup.params, &setup.bc, dt).and_then(|s| {
            if setup.fluid == FluidMode::Off {
                Ok(s)
            } else {
                fluid_step(&s, &setup.params, setup.fluid, s.t - state.t)
            }
        });
        match stepped {
            Ok(s) => state = s,
            Err(e) => {
                completed = false;
                failure = Some(e.to_string());
                break;
            }
        }
        if state.t >= next_output * (1.0 - 1e-12) {
            records.push(diagnostics::record(&state, &setup.params, &setup.bc, setup.margin)?);
            next_output += setup.time.output_every;
        }
    }
    if completed
        && records
            .last()
            .map(|r| (r.t - state.t).abs() > 1e-12 * t_end.max(1.0))
            .unwrap_or(true)
    {
        records.push(diagnostics::record(&state, &setup.params, &setup.bc, setup.margin)?);
    }
    Ok(Trajectory { records, final_state: state, completed, failure })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, integrate};
    use std::f64::consts::PI;

    fn line(cells: usize) -> Grid {
        build_grid(1, &[1.0], &[cells]).expect("unit interval grid")
    }

    fn params(epsilon: f64, d1: f64, d2: f64) -> ModelParams {
        ModelParams { epsilon, d1, d2, nu: 1.0, kcoup: 1.0 }
    }

    fn uniform_gamma(grid: &Grid, v: f64) -> BoundaryValues {
        BoundaryValues::uniform(grid, v)
    }

    #[test]
    fn boundary_spec_requires_dirichlet_potential() {
        let g = line(16);
        let err =
            BoundarySpec::new(&g, BoundaryData::uniform_flux(&g, 0.0), Family::Bl).unwrap_err();
        assert!(matches!(err, NpError::PotentialNotDirichlet { face: 0 }));
    }

    #[test]
    fn selective_walls_demand_a_single_boundary_chemistry_constant() {
        let g = line(16);
        let mut gamma1 = uniform_gamma(&g, 1.0);
        gamma1.values[g.boundary_face_index(Side::Right, 0)] = 2.0;
        let family = Family::Us {
            s1: vec![Side::Left, Side::Right],
            s2: vec![],
            gamma1: gamma1.clone(),
            gamma2: uniform_gamma(&g, 1.0),
        };
        let err = BoundarySpec::new(&g, BoundaryData::uniform_value(&g, 0.0), family)
            .unwrap_err();
        assert!(matches!(err, NpError::SelectiveNotUniform { species: 1, .. }));

        // The same concentrations pass when the potential compensates:
        // log(gamma) + W stays constant with W = -log(gamma).
        let mut w = BoundaryData::uniform_value(&g, 0.0);
        w.faces[g.boundary_face_index(Side::Right, 0)] = FaceBc::Value(-(2.0f64.ln()));
        let family = Family::Us {
            s1: vec![Side::Left, Side::Right],
            s2: vec![],
            gamma1,
            gamma2: uniform_gamma(&g, 1.0),
        };
        assert!(BoundarySpec::new(&g, w, family).is_ok());
    }

    #[test]
    fn selective_side_sets_are_validated() {
        let g = line(16);
        let w = || BoundaryData::uniform_value(&g, 0.0);
        let empty = Family::Us {
            s1: vec![],
            s2: vec![],
            gamma1: uniform_gamma(&g, 1.0),
            gamma2: uniform_gamma(&g, 1.0),
        };
        assert!(matches!(
            BoundarySpec::new(&g, w(), empty).unwrap_err(),
            NpError::NoSelectiveSides
        ));
        let duplicated = Family::Us {
            s1: vec![Side::Left, Side::Left],
            s2: vec![],
            gamma1: uniform_gamma(&g, 1.0),
            gamma2: uniform_gamma(&g, 1.0),
        };
        assert!(matches!(
            BoundarySpec::new(&g, w(), duplicated).unwrap_err(),
            NpError::DuplicateSide { side: "left" }
        ));
        let off_grid = Family::Us {
            s1: vec![Side::Top],
            s2: vec![],
            gamma1: uniform_gamma(&g, 1.0),
            gamma2: uniform_gamma(&g, 1.0),
        };
        assert!(matches!(
            BoundarySpec::new(&g, w(), off_grid).unwrap_err(),
            NpError::SideNotOnGrid { dim: 1, .. }
        ));
    }

    #[test]
    fn prescribed_wall_concentrations_must_be_positive() {
        let g = line(16);
        let family = Family::Di {
            gamma1: uniform_gamma(&g, 1.0),
            gamma2: uniform_gamma(&g, 0.0),
        };
        let err = BoundarySpec::new(&g, BoundaryData::uniform_value(&g, 0.0), family)
            .unwrap_err();
        assert!(matches!(err, NpError::NonPositiveGamma { species: 2, .. }));
    }

    #[test]
    fn initial_concentrations_must_be_nonnegative() {
        let g = line(16);
        let p = params(0.1, 1.0, 1.0);
        let bc = BoundarySpec::new(&g, BoundaryData::uniform_value(&g, 0.0), Family::Bl)
            .unwrap();
        let mut c1 = ScalarField::constant(g, 1.0);
        c1.values[5] = -1e-3;
        let err = init_state(
            c1,
            ScalarField::constant(g, 1.0),
            VectorField::zero(g),
            &p,
            &bc,
            FluidMode::Off,
        )
        .unwrap_err();
        assert!(matches!(err, NpError::NegativeInitial { species: 1, cell: 5, .. }));
    }

    #[test]
    fn oversized_or_nonpositive_dt_is_rejected() {
        let g = line(32);
        let p = params(0.05, 1.0, 1.0);
        let w = BoundaryData::from_values(&BoundaryValues::from_fn(&g, |side, _, _| {
            match side {
                Side::Left => 0.5,
                _ => -0.5,
            }
        }));
        let bc = BoundarySpec::new(&g, w, Family::Bl).unwrap();
        let state = init_state(
            ScalarField::constant(g, 1.2),
            ScalarField::constant(g, 0.8),
            VectorField::zero(g),
            &p,
            &bc,
            FluidMode::Off,
        )
        .unwrap();
        let bound = stability_bound(&state, &p, &bc);
        assert!(bound.is_finite() && bound > 0.0);
        assert!(matches!(
            np_step(&state, &p, &bc, 3.0 * bound).unwrap_err(),
            NpError::DtExceedsStability { .. }
        ));
        assert!(matches!(
            np_step(&state, &p, &bc, 0.0).unwrap_err(),
            NpError::NonPositiveDt(_)
        ));
    }

    #[test]
    fn impermeable_walls_conserve_both_masses() {
        let g = line(64);
        let p = params(1e-2, 1.0, 2.0);
        let bc = BoundarySpec::new(&g, BoundaryData::uniform_value(&g, 0.4), Family::Bl)
            .unwrap();
        let c1 = ScalarField::from_fn(g, |x, _| 1.0 + 0.2 * (2.0 * PI * x).sin());
        let c2 = ScalarField::from_fn(g, |x, _| 1.0 + 0.1 * (2.0 * PI * x).cos());
        let mut state =
            init_state(c1, c2, VectorField::zero(g), &p, &bc, FluidMode::Off).unwrap();
        let m1 = integrate(&state.c1);
        let m2 = integrate(&state.c2);
        for _ in 0..40 {
            let dt = (0.5 * stability_bound(&state, &p, &bc)).min(1e-3);
            state = np_step(&state, &p, &bc, dt).unwrap();
        }
        assert!((integrate(&state.c1) - m1).abs() <= 1e-12 * m1);
        assert!((integrate(&state.c2) - m2).abs() <= 1e-12 * m2);
        assert!(state.c1.min() >= 0.0 && state.c2.min() >= 0.0);
    }

    #[test]
    fn electroneutral_walls_preserve_the_linear_invariant_and_the_ceiling() {
        let g = line(64);
        let p = params(0.1, 1.0, 3.0);
        let w = BoundaryData::from_values(&BoundaryValues::from_fn(&g, |side, _, _| {
            match side {
                Side::Left => 0.2,
                _ => -0.2,
            }
        }));
        let bc = BoundarySpec::new(&g, w, Family::En).unwrap();
        let c1 = ScalarField::from_fn(g, |x, _| 1.0 + 0.3 * (PI * x).sin());
        let c2 = ScalarField::from_fn(g, |x, _| 1.0 + 0.2 * (2.0 * PI * x).sin().abs());
        let ceiling = c1.max().max(c2.max());
        let mut state =
            init_state(c1, c2, VectorField::zero(g), &p, &bc, FluidMode::Off).unwrap();
        let inv0 = diagnostics::record(&state, &p, &bc, 0.0).unwrap().lininv;
        for _ in 0..30 {
            let dt = (0.5 * stability_bound(&state, &p, &bc)).min(2e-4);
            state = np_step(&state, &p, &bc, dt).unwrap();
            let rec = diagnostics::record(&state, &p, &bc, 0.0).unwrap();
            assert!(
                (rec.lininv - inv0).abs() <= 1e-12 * inv0.abs().max(1.0),
                "linear invariant drifted: {} vs {}",
                rec.lininv,
                inv0
            );
            assert!(state.c1.max() <= ceiling * (1.0 + 1e-8));
            assert!(state.c2.max() <= ceiling * (1.0 + 1e-8));
        }
    }

    #[test]
    fn neutral_fields_diffuse_without_drift() {
        let g = line(64);
        let p = params(0.5, 1.0, 1.0);
        let bc = BoundarySpec::new(&g, BoundaryData::uniform_value(&g, 0.0), Family::Bl)
            .unwrap();
        let profile = ScalarField::from_fn(g, |x, _| 0.1 + (PI * x).sin().powi(2));
        let mut state = init_state(
            profile.clone(),
            profile,
            VectorField::zero(g),
            &p,
            &bc,
            FluidMode::Off,
        )
        .unwrap();
        assert_eq!(state.phi.linf(), 0.0, "neutral charge must give a flat potential");
        let max0 = state.c1.max();
        let min0 = state.c1.min();
        let mass0 = integrate(&state.c1);
        for _ in 0..10 {
            state = np_step(&state, &p, &bc, 1e-4).unwrap();
        }
        assert_eq!(state.c1.values, state.c2.values, "species must stay identical");
        assert!(state.c1.max() < max0, "diffusion must pull the maximum down");
        assert!(state.c1.min() > min0, "diffusion must pull the minimum up");
        assert!((integrate(&state.c1) - mass0).abs() <= 1e-12 * mass0);
    }

    #[test]
    fn species_swap_mirrors_the_dynamics_exactly() {
        let g = line(48);
        let p = params(5e-2, 1.5, 1.5);
        let w_vals = BoundaryValues::from_fn(&g, |side, _, _| match side {
            Side::Left => 0.3,
            _ => -0.1,
        });
        let bc = BoundarySpec::new(&g, BoundaryData::from_values(&w_vals), Family::Bl)
            .unwrap();
        let bc_m =
            BoundarySpec::new(&g, BoundaryData::from_values(&w_vals.negated()), Family::Bl)
                .unwrap();
        let a = ScalarField::from_fn(g, |x, _| 1.0 + 0.2 * (2.0 * PI * x).sin());
        let b = ScalarField::from_fn(g, |x, _| 1.0 + 0.1 * (PI * x).cos());
        let mut state = init_state(
            a.clone(),
            b.clone(),
            VectorField::zero(g),
            &p,
            &bc,
            FluidMode::Off,
        )
        .unwrap();
        let mut mirror =
            init_state(b, a, VectorField::zero(g), &p, &bc_m, FluidMode::Off).unwrap();
        for _ in 0..10 {
            let dt = (0.5 * stability_bound(&state, &p, &bc)).min(5e-4);
            state = np_step(&state, &p, &bc, dt).unwrap();
            mirror = np_step(&mirror, &p, &bc_m, dt).unwrap();
        }
        assert_eq!(state.c1.values, mirror.c2.values, "swap must be exact");
        assert_eq!(state.c2.values, mirror.c1.values, "swap must be exact");
        let negated_phi: Vec<f64> = state.phi.values.iter().map(|v| -v).collect();
        assert_eq!(negated_phi, mirror.phi.values, "potential must flip sign exactly");
    }

    #[test]
    fn blocked_species_keeps_its_mass_under_selective_walls() {
        let g = line(48);
        let p = params(0.1, 1.0, 1.0);
        let w = BoundaryData::from_values(&BoundaryValues::from_fn(&g, |side, _, _| {
            match side {
                Side::Left => 0.2,
                _ => -0.2,
            }
        }));
        let family = Family::Us {
            s1: vec![Side::Left],
            s2: vec![],
            gamma1: uniform_gamma(&g, 0.7),
            gamma2: uniform_gamma(&g, 1.0),
        };
        let bc = BoundarySpec::new(&g, w, family).unwrap();
        let mut state = init_state(
            ScalarField::constant(g, 1.0),
            ScalarField::constant(g, 1.0),
            VectorField::zero(g),
            &p,
            &bc,
            FluidMode::Off,
        )
        .unwrap();
        let m1 = integrate(&state.c1);
        let m2 = integrate(&state.c2);
        for _ in 0..20 {
            let dt = (0.5 * stability_bound(&state, &p, &bc)).min(5e-4);
            state = np_step(&state, &p, &bc, dt).unwrap();
        }
        assert!((integrate(&state.c2) - m2).abs() <= 1e-12 * m2, "blocked species drifted");
        assert!(
            (integrate(&state.c1) - m1).abs() > 1e-6,
            "the selective wall should exchange the first species"
        );
    }
}
