//! Incompressible flow on the staggered grid: face-normal velocity
//! components, upwind advection, implicit viscosity with no-slip walls, the
//! electric body force, and a discrete pressure projection whose residual
//! bounds the post-projection divergence directly.

use super::{FluidMode, ModelParams, NpError, SimState};
use crate::elliptic::{solve_elliptic, EllipticError, LinearEllipticProblem};
use crate::grid::{divergence, BoundaryData, Grid, ScalarField, VectorField};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Half the squared face-velocity magnitude integrated over the domain.
pub fn kinetic_energy(u: &VectorField) -> f64 {
    let vol = u.grid.cell_volume();
    let sx: f64 = u.x.iter().map(|v| v * v).sum();
    let sy: f64 = u.y.iter().map(|v| v * v).sum();
    0.5 * (sx + sy) * vol
}

/// Remove the discrete gradient part of a face field. Returns the projected
/// field and the potential `q` with `u_new = u - grad(q)`; the divergence of
/// the result equals the (mean-adjusted) solver residual, so the solve
/// tolerance is a direct bound on it.
pub fn project_divergence_free(
    u: &VectorField,
) -> Result<(VectorField, ScalarField), EllipticError> {
    let grid = u.grid;
    let div = divergence(u);
    let rhs = ScalarField { grid, values: div.values.iter().map(|d| -d).collect() };
    let problem = LinearEllipticProblem {
        grid,
        kappa: 1.0,
        reaction: ScalarField::constant(grid, 0.0),
        rhs,
        bc: BoundaryData::uniform_flux(&grid, 0.0),
    };
    let tol = 1e-11 * div.linf().max(1.0);
    let (q, _) = solve_elliptic(&problem, tol)?;
    let mut out = u.clone();
    for j in 0..grid.ny() {
        for i in 0..grid.nx() - 1 {
            let f = out.fx(i, j);
            out.x[f] -= (q.at(i + 1, j) - q.at(i, j)) / grid.h[0];
        }
    }
    if grid.dim == 2 {
        for j in 0..grid.ny() - 1 {
            for i in 0..grid.nx() {
                let f = out.fy(i, j);
                out.y[f] -= (q.at(i, j + 1) - q.at(i, j)) / grid.h[1];
            }
        }
    }
    Ok((out, q))
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// definite operator given as a matvec closure. Certifies the true residual
/// before accepting.
fn pcg_spd(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    tol: f64,
    cap: usize,
) -> Result<Vec<f64>, EllipticError> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut s = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut work = vec![0.0; n];
    let mut iterations = 0;
    loop {
        let r_norm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if r_norm <= tol {
            apply(&x, &mut work);
            let worst =
                b.iter().zip(&work).fold(0.0f64, |m, (b, a)| m.max((b - a).abs()));
            if worst <= tol {
                return Ok(x);
            }
            for i in 0..n {
                r[i] = b[i] - work[i];
                z[i] = r[i] / diag[i];
                s[i] = z[i];
            }
            rz = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        }
        if iterations >= cap {
            return Err(EllipticError::NoConvergence { iterations, residual_linf: r_norm, tol });
        }
        iterations += 1;
        apply(&s, &mut work);
        let sas: f64 = s.iter().zip(&work).map(|(a, b)| a * b).sum();
        if !(sas > 0.0) {
            return Err(EllipticError::NoConvergence { iterations, residual_linf: r_norm, tol });
        }
        let alpha = rz / sas;
        for i in 0..n {
            x[i] += alpha * s[i];
            r[i] -= alpha * work[i];
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            s[i] = z[i] + beta * s[i];
        }
    }
}

/// Backward-Euler viscosity for one velocity component: (I - dt*nu*Lap)u.
/// Along its own axis a component sees zero wall values a full spacing away;
/// transverse walls act through reflected ghosts at half a spacing.
fn viscous_solve(
    grid: Grid,
    axis: usize,
    coeff: f64,
    rhs: &[f64],
) -> Result<Vec<f64>, EllipticError> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let (hx2, hy2) = (grid.h[0] * grid.h[0], grid.h[1] * grid.h[1]);
    // Face-array shape: (nx-1) x ny for the x component, nx x (ny-1) for y.
    let (m, rows) = if axis == 0 { (nx - 1, ny) } else { (nx, ny - 1) };
    let (own_h2, trans_h2) = if axis == 0 { (hx2, hy2) } else { (hy2, hx2) };
    let apply = |x: &[f64], out: &mut [f64]| {
        for j in 0..rows {
            for i in 0..m {
                let f = j * m + i;
                let v = x[f];
                // Own-axis neighbors at full spacing; walls hold value 0.
                let (lo, hi) = if axis == 0 {
                    (
                        if i == 0 { 0.0 } else { x[f - 1] },
                        if i + 1 == m { 0.0 } else { x[f + 1] },
                    )
                } else {
                    (
                        if j == 0 { 0.0 } else { x[f - m] },
                        if j + 1 == rows { 0.0 } else { x[f + m] },
                    )
                };
                let mut lap = (lo + hi - 2.0 * v) / own_h2;
                // Transverse neighbors; walls reflect (ghost = -value).
                let (lo_t, hi_t) = if axis == 0 {
                    (
                        if j == 0 { -v } else { x[f - m] },
                        if j + 1 == rows { -v } else { x[f + m] },
                    )
                } else {
                    (
                        if i == 0 { -v } else { x[f - 1] },
                        if i + 1 == m { -v } else { x[f + 1] },
                    )
                };
                lap += (lo_t + hi_t - 2.0 * v) / trans_h2;
                out[f] = v - coeff * lap;
            }
        }
    };
    let mut diag = vec![0.0; m * rows];
    for j in 0..rows {
        for i in 0..m {
            let (ti, tm) = if axis == 0 { (j, rows) } else { (i, m) };
            let trans = if ti == 0 || ti + 1 == tm { 3.0 } else { 2.0 };
            diag[j * m + i] = 1.0 + coeff * (2.0 / own_h2 + trans / trans_h2);
        }
    }
    let scale = rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-12 * scale.max(1.0);
    pcg_spd(apply, &diag, rhs, tol, 100 * nx.max(ny))
}

/// Explicit upwind transport of the velocity by itself.
fn advect_velocity(u: &VectorField, dt: f64) -> VectorField {
    let grid = u.grid;
    let (nx, ny) = (grid.nx(), grid.ny());
    let (hx, hy) = (grid.h[0], grid.h[1]);
    let mut out = u.clone();

    for j in 0..ny {
        for i in 0..nx - 1 {
            let f = u.fx(i, j);
            let v = u.x[f];
            let dudx = if v >= 0.0 {
                let left = if i == 0 { 0.0 } else { u.x[u.fx(i - 1, j)] };
                (v - left) / hx
            } else {
                let right = if i + 2 == nx { 0.0 } else { u.x[u.fx(i + 1, j)] };
                (right - v) / hx
            };
            // Transverse velocity at this face: average of the four
            // surrounding y-faces, walls contributing zero.
            let mut vy = 0.0;
            if j > 0 {
                vy += u.y[u.fy(i, j - 1)] + u.y[u.fy(i + 1, j - 1)];
            }
            if j + 1 < ny {
                vy += u.y[u.fy(i, j)] + u.y[u.fy(i + 1, j)];
            }
            vy *= 0.25;
            let dudy = if vy >= 0.0 {
                let below = if j == 0 { -v } else { u.x[u.fx(i, j - 1)] };
                (v - below) / hy
            } else {
                let above = if j + 1 == ny { -v } else { u.x[u.fx(i, j + 1)] };
                (above - v) / hy
            };
            out.x[f] = v - dt * (v * dudx + vy * dudy);
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            let f = u.fy(i, j);
            let v = u.y[f];
            let dvdy = if v >= 0.0 {
                let below = if j == 0 { 0.0 } else { u.y[u.fy(i, j - 1)] };
                (v - below) / hy
            } else {
                let above = if j + 2 == ny { 0.0 } else { u.y[u.fy(i, j + 1)] };
                (above - v) / hy
            };
            let mut vx = 0.0;
            if i > 0 {
                vx += u.x[u.fx(i - 1, j)] + u.x[u.fx(i - 1, j + 1)];
            }
            if i + 1 < nx {
                vx += u.x[u.fx(i, j)] + u.x[u.fx(i, j + 1)];
            }
            vx *= 0.25;
            let dvdx = if vx >= 0.0 {
                let left = if i == 0 { -v } else { u.y[u.fy(i - 1, j)] };
                (v - left) / hx
            } else {
                let right = if i + 1 == nx { -v } else { u.y[u.fy(i + 1, j)] };
                (right - v) / hx
            };
            out.y[f] = v - dt * (vx * dvdx + v * dvdy);
        }
    }
    out
}

/// Electric body force -kcoup * rho * grad(phi) sampled at interior faces.
fn body_force(state: &SimState, kcoup: f64) -> VectorField {
    let grid = state.c1.grid;
    let mut f = VectorField::zero(grid);
    let rho = |i: usize, j: usize| state.c1.at(i, j) - state.c2.at(i, j);
    for j in 0..grid.ny() {
        for i in 0..grid.nx() - 1 {
            let rho_face = 0.5 * (rho(i, j) + rho(i + 1, j));
            let grad = (state.phi.at(i + 1, j) - state.phi.at(i, j)) / grid.h[0];
            let fi = f.fx(i, j);
            f.x[fi] = -kcoup * rho_face * grad;
        }
    }
    if grid.dim == 2 {
        for j in 0..grid.ny() - 1 {
            for i in 0..grid.nx() {
                let rho_face = 0.5 * (rho(i, j) + rho(i, j + 1));
                let grad = (state.phi.at(i, j + 1) - state.phi.at(i, j)) / grid.h[1];
                let fi = f.fy(i, j);
                f.y[fi] = -kcoup * rho_face * grad;
            }
        }
    }
    f
}

/// Advance the velocity over dt: upwind advection (skipped when inertia is
/// dropped), implicit viscosity, electric forcing, then projection back onto
/// the divergence-free space. Concentrations, potential, and time are left
/// untouched; the transport step owns those.
pub fn fluid_step(
    state: &SimState,
    params: &ModelParams,
    mode: FluidMode,
    dt: f64,
) -> Result<SimState, NpError> {
    if mode == FluidMode::Off {
        return Ok(state.clone());
    }
    let grid = state.u.grid;
    if grid.dim != 2 {
        return Err(NpError::FluidNeedsTwoD);
    }
    let advected = if mode == FluidMode::NavierStokes {
        advect_velocity(&state.u, dt)
    } else {
        state.u.clone()
    };
    let coeff = dt * params.nu;
    let ux = viscous_solve(grid, 0, coeff, &advected.x)
        .map_err(|source| NpError::Solver { context: "viscous update (x)", source })?;
    let uy = viscous_solve(grid, 1, coeff, &advected.y)
        .map_err(|source| NpError::Solver { context: "viscous update (y)", source })?;
    let mut u = VectorField { grid, x: ux, y: uy };

    let force = body_force(state, params.kcoup);
    for (v, f) in u.x.iter_mut().zip(&force.x) {
        *v += dt * f;
    }
    for (v, f) in u.y.iter_mut().zip(&force.y) {
        *v += dt * f;
    }

    let (u_proj, q) = project_divergence_free(&u)
        .map_err(|source| NpError::Solver { context: "pressure projection", source })?;
    let p = ScalarField { grid, values: q.values.iter().map(|v| v / dt).collect() };
    Ok(SimState {
        t: state.t,
        c1: state.c1.clone(),
        c2: state.c2.clone(),
        phi: state.phi.clone(),
        u: u_proj,
        p,
    })
}

/// Smooth, exactly divergence-free random velocity built from a node-based
/// stream function; used by the self-check battery and tests.
pub fn random_divergence_free(grid: Grid, seed: u64) -> VectorField {
    assert_eq!(grid.dim, 2, "stream-function construction needs two axes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nx, ny) = (grid.nx(), grid.ny());
    let (lx, ly) = (grid.extents[0], grid.extents[1]);
    // Three random low-wavenumber modes keep the field smooth. The stream
    // function must vanish on the whole boundary (no-slip compatibility), so
    // the modes are pure sine products with integer wavenumbers.
    let modes: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                rng.gen_range(1i32..4) as f64,
                rng.gen_range(1i32..4) as f64,
            )
        })
        .collect();
    let psi = |a: usize, b: usize| -> f64 {
        let (x, y) = (a as f64 * grid.h[0], b as f64 * grid.h[1]);
        modes
            .iter()
            .map(|(amp, kx, ky)| {
                amp * (std::f64::consts::PI * kx * x / lx).sin()
                    * (std::f64::consts::PI * ky * y / ly).sin()
            })
            .sum()
    };
    let mut u = VectorField::zero(grid);
    for j in 0..ny {
        for i in 0..nx - 1 {
            let f = u.fx(i, j);
            u.x[f] = (psi(i + 1, j + 1) - psi(i + 1, j)) / grid.h[1];
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            let f = u.fy(i, j);
            u.y[f] = -(psi(i + 1, j + 1) - psi(i, j + 1)) / grid.h[0];
        }
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::npns::VALENCES;
    use std::f64::consts::PI;

    fn plane(n: usize) -> Grid {
        build_grid(2, &[1.0, 1.0], &[n, n]).expect("unit square grid")
    }

    fn resting_state(grid: Grid, c1: ScalarField, c2: ScalarField, phi: ScalarField) -> SimState {
        SimState {
            t: 0.0,
            c1,
            c2,
            phi,
            u: VectorField::zero(grid),
            p: ScalarField::constant(grid, 0.0),
        }
    }

    #[test]
    fn kinetic_energy_of_a_uniform_face_field() {
        let g = plane(8);
        let mut u = VectorField::zero(g);
        for v in u.x.iter_mut() {
            *v = 3.0;
        }
        // 7x8 interior x-faces at value 3, cell volume 1/64.
        let expected = 0.5 * 9.0 * 56.0 / 64.0;
        assert!((kinetic_energy(&u) - expected).abs() <= 1e-14);
    }

    #[test]
    fn stream_function_field_is_divergence_free() {
        let g = plane(16);
        let u = random_divergence_free(g, 7);
        assert!(u.linf() > 0.0);
        let div = divergence(&u);
        assert!(
            div.linf() <= 1e-12 * u.linf().max(1.0),
            "divergence {} too large",
            div.linf()
        );
    }

    #[test]
    fn projection_annihilates_gradient_fields() {
        let g = plane(16);
        let q = ScalarField::from_fn(g, |x, y| (PI * x).cos() * (2.0 * PI * y).sin());
        let mut u = VectorField::zero(g);
        for j in 0..g.ny() {
            for i in 0..g.nx() - 1 {
                let f = u.fx(i, j);
                u.x[f] = (q.at(i + 1, j) - q.at(i, j)) / g.h[0];
            }
        }
        for j in 0..g.ny() - 1 {
            for i in 0..g.nx() {
                let f = u.fy(i, j);
                u.y[f] = (q.at(i, j + 1) - q.at(i, j)) / g.h[1];
            }
        }
        let scale = u.linf();
        let (projected, _) = project_divergence_free(&u).unwrap();
        assert!(
            projected.linf() <= 1e-9 * scale,
            "gradient residue {} of scale {scale}",
            projected.linf()
        );
    }

    #[test]
    fn electric_force_aligned_with_a_gradient_leaves_the_fluid_at_rest() {
        let g = plane(16);
        let _ = VALENCES;
        let c1 = ScalarField::from_fn(g, |x, _| 1.0 + 0.4 * (2.0 * PI * x).sin());
        let c2 = ScalarField::constant(g, 1.0);
        let phi = ScalarField::from_fn(g, |x, _| 0.3 * (PI * x).cos());
        let state = resting_state(g, c1, c2, phi);
        let params = ModelParams { epsilon: 0.1, d1: 1.0, d2: 1.0, nu: 0.2, kcoup: 2.0 };
        let next = fluid_step(&state, &params, FluidMode::NavierStokes, 1e-2).unwrap();
        // The force scale is kcoup * |rho| * |grad phi| * dt.
        assert!(
            next.u.linf() <= 1e-9,
            "planar gradient force must project away, left {}",
            next.u.linf()
        );
    }

    #[test]
    fn unforced_kinetic_energy_decays_every_step() {
        let g = plane(16);
        let c = ScalarField::constant(g, 1.0);
        let mut state = resting_state(g, c.clone(), c, ScalarField::constant(g, 0.0));
        state.u = random_divergence_free(g, 42);
        let params = ModelParams { epsilon: 0.1, d1: 1.0, d2: 1.0, nu: 0.05, kcoup: 1.0 };
        let mut ke = kinetic_energy(&state.u);
        assert!(ke > 0.0);
        for _ in 0..10 {
            state = fluid_step(&state, &params, FluidMode::NavierStokes, 1e-3).unwrap();
            let ke_next = kinetic_energy(&state.u);
            assert!(ke_next < ke, "energy must strictly decay: {ke_next} vs {ke}");
            ke = ke_next;
        }
    }

    #[test]
    fn disabled_fluid_mode_is_a_no_op() {
        let g = plane(8);
        let c = ScalarField::constant(g, 1.0);
        let mut state = resting_state(g, c.clone(), c, ScalarField::constant(g, 0.0));
        state.u = random_divergence_free(g, 3);
        let params = ModelParams { epsilon: 0.1, d1: 1.0, d2: 1.0, nu: 0.05, kcoup: 1.0 };
        let next = fluid_step(&state, &params, FluidMode::Off, 1e-3).unwrap();
        assert_eq!(next.u.x, state.u.x);
        assert_eq!(next.u.y, state.u.y);
    }
}
