//! A seeded battery of runtime invariant checks spanning the whole library:
//! quadrature, the elliptic solver, the equilibrium problems, the transport
//! scheme, the flow solver, and the observables. Each check draws its data
//! from one deterministic stream, so a failing seed reproduces exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{
    charge_and_salt, decay_fit, en_quadratic_monitor, interior_sup, min_laplacian_of_square,
    norms, record,
};
use crate::grid::{
    bernoulli, build_grid, integrate, laplacian, BoundaryData, BoundaryValues, Grid, ScalarField,
    VectorField,
};
use crate::npns::{
    fluid_step, init_state, kinetic_energy, np_step, random_divergence_free, stability_bound,
    BoundarySpec, Family, FluidMode, ModelParams, SimState,
};
use crate::pb::{pb_solve, PbVariant};

/// Result of one named check.
pub struct CheckOutcome {
    pub name: &'static str,
    pub detail: Result<(), String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.detail.is_ok()
    }
}

/// One terminal line per check: a fixed-width verdict, the index, the name,
/// and the failure detail if any.
pub fn format_line(index: usize, total: usize, outcome: &CheckOutcome) -> String {
    match &outcome.detail {
        Ok(()) => format!("ok   [{index:>2}/{total}] {}", outcome.name),
        Err(reason) => format!("FAIL [{index:>2}/{total}] {}: {reason}", outcome.name),
    }
}

fn fail(msg: impl Into<String>) -> Result<(), String> {
    Err(msg.into())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn line(n: usize) -> Grid {
    build_grid(1, &[1.0], &[n]).expect("line grid")
}

fn square(n: usize) -> Grid {
    build_grid(2, &[1.0, 1.0], &[n, n]).expect("square grid")
}

fn smooth_positive(grid: Grid, rng: &mut ChaCha8Rng) -> ScalarField {
    let a = rng.gen_range(0.05..0.4);
    let b = rng.gen_range(0.05..0.4);
    let (k1, k2) = (rng.gen_range(1..4) as f64, rng.gen_range(1..4) as f64);
    ScalarField::from_fn(grid, |x, y| {
        1.0 + a * (std::f64::consts::PI * k1 * x).sin()
            + b * (std::f64::consts::PI * k2 * (x + y)).cos() * 0.5
    })
}

fn unit_params(epsilon: f64, d1: f64, d2: f64) -> ModelParams {
    ModelParams { epsilon, d1, d2, nu: 1.0, kcoup: 1.0 }
}

fn blocking_bc(grid: &Grid, w: &BoundaryValues) -> BoundarySpec {
    BoundarySpec::new(grid, BoundaryData::from_values(w), Family::Bl).expect("blocking walls")
}

// ---------------------------------------------------------------------------
// Individual checks
// ---------------------------------------------------------------------------

fn cell_volumes_tile_the_domain(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let dim = if rng.gen_bool(0.5) { 1 } else { 2 };
    let cells = [rng.gen_range(3..40usize), rng.gen_range(3..40usize)];
    let extents = [rng.gen_range(0.5..3.0f64), rng.gen_range(0.5..3.0f64)];
    let g = build_grid(dim, &extents[..dim], &cells[..dim]).map_err(|e| e.to_string())?;
    let tiled = g.n_cells() as f64 * g.cell_volume();
    ensure((tiled - g.domain_measure()).abs() <= 1e-12 * g.domain_measure(), || {
        format!("cells tile {tiled}, domain measures {}", g.domain_measure())
    })
}

fn laplacian_annihilates_linear_fields(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let g = square(rng.gen_range(8..24));
    let (a, b, c) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let lin = |x: f64, y: f64| a + b * x + c * y;
    let f = ScalarField::from_fn(g, lin);
    let bc = BoundaryData::from_values(&BoundaryValues::from_fn(&g, |_, x, y| lin(x, y)));
    let lap = laplacian(&f, &bc);
    let scale = 1.0 + f.linf();
    ensure(lap.linf() <= 1e-9 * scale, || {
        format!("affine field has nonzero discrete laplacian {:e}", lap.linf())
    })
}

fn sealed_walls_make_the_laplacian_conservative(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let g = square(rng.gen_range(8..20));
    let f = smooth_positive(g, rng);
    let lap = laplacian(&f, &BoundaryData::uniform_flux(&g, 0.0));
    let total = integrate(&lap);
    ensure(total.abs() <= 1e-11 * (1.0 + lap.linf()), || {
        format!("flux-free laplacian integrates to {total:e}")
    })
}

fn drift_weights_obey_the_reflection_identity(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for _ in 0..200 {
        let theta = rng.gen_range(-30.0..30.0);
        let lhs = bernoulli(-theta);
        let rhs = theta.exp() * bernoulli(theta);
        if (lhs - rhs).abs() > 1e-12 * lhs.abs().max(1.0) {
            return fail(format!("B(-t) = e^t B(t) violated at t={theta}: {lhs} vs {rhs}"));
        }
    }
    Ok(())
}

fn potential_solves_meet_their_residual_contract(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let g = if rng.gen_bool(0.5) { line(64) } else { square(16) };
    let rho = smooth_positive(g, rng);
    let w = BoundaryValues::from_fn(&g, |_, x, y| 0.2 * (x - y));
    let eps = rng.gen_range(0.05..1.0);
    let (phi, report) = crate::elliptic::solve_poisson(eps, &rho, &w).map_err(|e| e.to_string())?;
    ensure(report.residual_linf <= 1e-10 * rho.linf().max(1.0) && phi.linf().is_finite(), || {
        format!("potential solve residual {:e}", report.residual_linf)
    })
}

fn trivial_equilibria_are_exactly_neutral(_rng: &mut ChaCha8Rng) -> Result<(), String> {
    let g = line(256);
    let w0 = BoundaryValues::uniform(&g, 0.0);
    let us2 = pb_solve(&g, &PbVariant::Us2 { z1: 1.0, z2: 1.0 }, 1.0, &w0, 1e-12)
        .map_err(|e| e.to_string())?;
    let wc = BoundaryValues::uniform(&g, 0.7);
    let bl =
        pb_solve(&g, &PbVariant::Bl { i0: 1.0 }, 1e-2, &wc, 1e-12).map_err(|e| e.to_string())?;
    ensure(us2.converged && us2.rho.linf() <= 1e-11, || {
        format!("two-sided trivial solve keeps charge {:e}", us2.rho.linf())
    })?;
    ensure(bl.converged && bl.rho.linf() <= 1e-11, || {
        format!("blocking trivial solve keeps charge {:e}", bl.rho.linf())
    })
}

fn mirrored_selective_problems_negate_the_potential(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let g = line(96);
    let z = rng.gen_range(0.5..2.0);
    let i_blocked = rng.gen_range(0.5..2.0);
    let w = BoundaryValues::from_fn(&g, |side, _, _| match side {
        crate::grid::Side::Left => 0.3,
        _ => -0.1,
    });
    let cation = pb_solve(&g, &PbVariant::UsCation { z1: z, i2: i_blocked }, 0.05, &w, 1e-8)
        .map_err(|e| e.to_string())?;
    let anion =
        pb_solve(&g, &PbVariant::UsAnion { z2: z, i1: i_blocked }, 0.05, &w.negated(), 1e-8)
            .map_err(|e| e.to_string())?;
    let mirrored: Vec<f64> = cation.phi.values.iter().map(|v| -v).collect();
    ensure(anion.phi.values == mirrored, || {
        "one-sided problems are not exact mirrors of each other".to_string()
    })
}

fn equilibrium_concentrations_follow_the_potential(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let g = line(128);
    let w = BoundaryValues::from_fn(&g, |side, _, _| match side {
        crate::grid::Side::Left => rng.gen_range(0.1..0.5),
        _ => rng.gen_range(-0.5..-0.1),
    });
    let sol =
        pb_solve(&g, &PbVariant::Bl { i0: 1.0 }, 0.05, &w, 1e-9).map_err(|e| e.to_string())?;
    let a1: Vec<f64> =
        sol.c1.values.iter().zip(&sol.phi.values).map(|(c, p)| c * p.exp()).collect();
    let a2: Vec<f64> =
        sol.c2.values.iter().zip(&sol.phi.values).map(|(c, p)| c * (-p).exp()).collect();
    for coeffs in [&a1, &a2] {
        let first = coeffs[0];
        for v in coeffs {
            if (v - first).abs() > 1e-9 * first.abs() {
                return fail(format!(
                    "equilibrium concentration is not a pure exponential of the potential: \
                     normalization drifts from {first} to {v}"
                ));
            }
        }
    }
    Ok(())
}

fn equilibrium_charge_squared_is_subharmonic(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let g = line(160);
    let w = BoundaryValues::from_fn(&g, |side, _, _| match side {
        crate::grid::Side::Left => rng.gen_range(0.2..0.8),
        _ => rng.gen_range(-0.8..-0.2),
    });
    let sol =
        pb_solve(&g, &PbVariant::Bl { i0: 1.0 }, 0.02, &w, 1e-9).map_err(|e| e.to_string())?;
    let floor = min_laplacian_of_square(&sol.rho)
        .ok_or_else(|| "domain too small for interior stencils".to_string())?;
    let bound = -1e-6 * sol.rho.linf().powi(2);
    ensure(floor >= bound, || {
        format!("squared charge dips below subharmonicity: {floor:e} < {bound:e}")
    })
}

fn equilibrium_potential_respects_wall_bounds(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let g = line(128);
    let (wl, wr) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
    let w = BoundaryValues::from_fn(&g, |side, _, _| match side {
        crate::grid::Side::Left => wl,
        _ => wr,
    });
    let sol =
        pb_solve(&g, &PbVariant::Bl { i0: 1.0 }, 0.05, &w, 1e-8).map_err(|e| e.to_string())?;
    ensure(sol.phi.min() >= w.min() - 1e-8 && sol.phi.max() <= w.max() + 1e-8, || {
        format!(
            "potential [{}, {}] leaves the wall range [{}, {}]",
            sol.phi.min(),
            sol.phi.max(),
            w.min(),
            w.max()
        )
    })
}

fn impermeable_walls_conserve_mass(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let g = line(48);
    let params = unit_params(0.5, 1.0, 1.5);
    let w = BoundaryValues::from_fn(&g, |side, _, _| match side {
        crate::grid::Side::Left => 0.2,
        _ => -0.3,
    });
    let bc = blocking_bc(&g, &w);
    let c1 = smooth_positive(g, rng);
    let c2 = smooth_positive(g, rng);
    let mut state = init_state(c1, c2, VectorField::zero(g), &params, &bc, FluidMode::Off)
        .map_err(|e| e.to_string())?;
    let (m1, m2) = (integrate(&state.c1), integrate(&state.c2));
    for _ in 0..15 {
        let dt = 0.5 * stability_bound(&state, &params, &bc);
        state = np_step(&state, &params, &bc, dt).map_err(|e| e.to_string())?;
    }
    let (e1, e2) = (
        (integrate(&state.c1) - m1).abs() / m1,
        (integrate(&state.c2) - m2).abs() / m2,
    );
    ensure(e1 <= 1e-11 && e2 <= 1e-11, || {
        format!("sealed run leaks mass: relative drifts {e1:e}, {e2:e}")
    })
}

fn equilibria_are_transport_fixed_points(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let g = line(64);
    let eps = 0.1;
    let w = BoundaryValues::from_fn(&g, |side, _, _| match side {
        crate::grid::Side::Left => rng.gen_range(0.05..0.3),
        _ => rng.gen_range(-0.3..-0.05),
    });
    let sol =
        pb_solve(&g, &PbVariant::Bl { i0: 1.0 }, eps, &w, 1e-10).map_err(|e| e.to_string())?;
    let params = unit_params(eps, 1.0, 2.0);
    let bc = blocking_bc(&g, &w);
    let state = init_state(
        sol.c1.clone(),
        sol.c2.clone(),
        VectorField::zero(g),
        &params,
        &bc,
        FluidMode::Off,
    )
    .map_err(|e| e.to_string())?;
    let dt = 0.5 * stability_bound(&state, &params, &bc);
    let next = np_step(&state, &params, &bc, dt).map_err(|e| e.to_string())?;
    let drift = next
        .c1
        .values
        .iter()
        .zip(&state.c1.values)
        .chain(next.c2.values.iter().zip(&state.c2.values))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    ensure(drift <= 1e-11, || format!("one step moves the equilibrium by {drift:e}"))
}

fn electroneutral_runs_keep_their_ledger(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let g = line(48);
    let params = unit_params(0.2, 1.0, 2.5);
    let w = BoundaryValues::from_fn(&g, |side, _, _| match side {
        crate::grid::Side::Left => 0.15,
        _ => -0.1,
    });
    let bc =
        BoundarySpec::new(&g, BoundaryData::from_values(&w), Family::En).expect("electroneutral");
    let amp = rng.gen_range(0.01..0.1);
    let c1 = ScalarField::from_fn(g, |x, _| 1.0 + amp * (std::f64::consts::PI * x).sin());
    let c2 = ScalarField::from_fn(g, |x, _| 1.0 - amp * (std::f64::consts::PI * x).sin());
    let mut state = init_state(c1, c2, VectorField::zero(g), &params, &bc, FluidMode::Off)
        .map_err(|e| e.to_string())?;
    let first = record(&state, &params, &bc, 0.1).map_err(|e| e.to_string())?;
    let mut prev_q = first.q;
    for _ in 0..15 {
        let dt = 0.5 * stability_bound(&state, &params, &bc);
        state = np_step(&state, &params, &bc, dt).map_err(|e| e.to_string())?;
        let rec = record(&state, &params, &bc, 0.1).map_err(|e| e.to_string())?;
        if rec.q > prev_q + 1e-10 {
            return fail(format!("quadratic ledger rises: {prev_q} -> {}", rec.q));
        }
        prev_q = rec.q;
        if (rec.lininv - first.lininv).abs() > 1e-10 * first.lininv.abs().max(1.0) {
            return fail(format!(
                "linear invariant drifts from {} to {}",
                first.lininv, rec.lininv
            ));
        }
    }
    let q = en_quadratic_monitor(&state, &params, &bc.family).map_err(|e| e.to_string())?;
    ensure(q.q >= q.p && q.p >= 0.0, || {
        format!("quadratic form ordering broken: q={}, p={}", q.q, q.p)
    })
}

fn prescribed_walls_respect_the_ceiling(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let g = line(48);
    let params = unit_params(0.3, 1.0, 1.0);
    let w = BoundaryValues::from_fn(&g, |side, _, _| match side {
        crate::grid::Side::Left => 0.2,
        _ => -0.2,
    });
    let gamma = BoundaryValues::uniform(&g, 1.0);
    let bc = BoundarySpec::new(
        &g,
        BoundaryData::from_values(&w),
        Family::Di { gamma1: gamma.clone(), gamma2: gamma },
    )
    .expect("prescribed walls");
    let a = rng.gen_range(0.1..0.9);
    let c0 = ScalarField::from_fn(g, |x, _| {
        2.0 - a * (std::f64::consts::PI * x).sin().powi(2)
    });
    let mut state =
        init_state(c0.clone(), c0, VectorField::zero(g), &params, &bc, FluidMode::Off)
            .map_err(|e| e.to_string())?;
    let ceiling = 2.0 * (1.0 + 1e-8);
    for _ in 0..15 {
        let dt = 0.5 * stability_bound(&state, &params, &bc);
        state = np_step(&state, &params, &bc, dt).map_err(|e| e.to_string())?;
        let worst = state.c1.max().max(state.c2.max());
        if worst > ceiling {
            return fail(format!("concentration {worst} exceeds the ceiling {ceiling}"));
        }
    }
    Ok(())
}

fn species_swap_mirrors_trajectories(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let g = line(40);
    let params = unit_params(0.4, 1.3, 1.3);
    let w = BoundaryValues::from_fn(&g, |side, _, _| match side {
        crate::grid::Side::Left => 0.25,
        _ => -0.15,
    });
    let bc = blocking_bc(&g, &w);
    let bc_m = blocking_bc(&g, &w.negated());
    let c1 = smooth_positive(g, rng);
    let c2 = smooth_positive(g, rng);
    let mut a = init_state(
        c1.clone(),
        c2.clone(),
        VectorField::zero(g),
        &params,
        &bc,
        FluidMode::Off,
    )
    .map_err(|e| e.to_string())?;
    let mut b =
        init_state(c2, c1, VectorField::zero(g), &params, &bc_m, FluidMode::Off)
            .map_err(|e| e.to_string())?;
    for _ in 0..5 {
        let dt = 0.5 * stability_bound(&a, &params, &bc);
        a = np_step(&a, &params, &bc, dt).map_err(|e| e.to_string())?;
        b = np_step(&b, &params, &bc_m, dt).map_err(|e| e.to_string())?;
    }
    let neg_phi: Vec<f64> = a.phi.values.iter().map(|v| -v).collect();
    ensure(a.c1.values == b.c2.values && a.c2.values == b.c1.values && neg_phi == b.phi.values, || {
        "species swap with a negated wall potential is not an exact mirror".to_string()
    })
}

fn viscous_flow_dissipates_energy(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let g = square(16);
    let params = unit_params(1.0, 1.0, 1.0);
    let w = BoundaryValues::uniform(&g, 0.0);
    let bc = blocking_bc(&g, &w);
    let c = ScalarField::constant(g, 1.0);
    let u = random_divergence_free(g, rng.gen());
    let mut state = init_state(c.clone(), c, u, &params, &bc, FluidMode::NavierStokes)
        .map_err(|e| e.to_string())?;
    let mut ke = kinetic_energy(&state.u);
    for _ in 0..5 {
        state = fluid_step(&state, &params, FluidMode::NavierStokes, 1e-3)
            .map_err(|e| e.to_string())?;
        let next = kinetic_energy(&state.u);
        if next >= ke {
            return fail(format!("kinetic energy rose from {ke} to {next}"));
        }
        ke = next;
    }
    let div = crate::grid::divergence(&state.u).linf();
    ensure(div <= 1e-10 * state.u.linf().max(1.0), || {
        format!("projected velocity keeps divergence {div:e}")
    })
}

fn gradient_forces_leave_the_fluid_at_rest(_rng: &mut ChaCha8Rng) -> Result<(), String> {
    let g = square(12);
    let params = unit_params(1.0, 1.0, 3.0);
    // A charge and potential varying along one axis only: the electric force
    // is a pure gradient, absorbed entirely by the pressure.
    let c1 = ScalarField::from_fn(g, |x, _| 1.0 + 0.3 * x);
    let c2 = ScalarField::constant(g, 1.0);
    let state = SimState {
        t: 0.0,
        c1,
        c2,
        phi: ScalarField::from_fn(g, |x, _| 0.5 * x * x),
        u: VectorField::zero(g),
        p: ScalarField::constant(g, 0.0),
    };
    let next =
        fluid_step(&state, &params, FluidMode::NavierStokes, 1e-3).map_err(|e| e.to_string())?;
    ensure(next.u.linf() <= 1e-9, || {
        format!("gradient force spins up the fluid to {:e}", next.u.linf())
    })
}

fn norm_chain_is_ordered(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let g = if rng.gen_bool(0.5) { line(64) } else { square(12) };
    let c1 = smooth_positive(g, rng);
    let c2 = smooth_positive(g, rng);
    let (rho, _) = charge_and_salt(&c1, &c2);
    let (l1, l2, linf) = norms(&rho);
    let m = g.domain_measure();
    ensure(
        l1 <= l2 * m.sqrt() * (1.0 + 1e-12) && l2 * m.sqrt() <= linf * m * (1.0 + 1e-12),
        || format!("norm chain violated: l1={l1}, l2={l2}, linf={linf}, measure={m}"),
    )
}

fn interior_supremum_shrinks_with_margin(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let g = line(96);
    let f = smooth_positive(g, rng);
    let s1 = interior_sup(&f, 0.1).map_err(|e| e.to_string())?;
    let s2 = interior_sup(&f, 0.2).map_err(|e| e.to_string())?;
    let s3 = interior_sup(&f, 0.3).map_err(|e| e.to_string())?;
    ensure(s1 >= s2 && s2 >= s3, || {
        format!("interior supremum grows with margin: {s1}, {s2}, {s3}")
    })
}

fn decay_fit_recovers_exact_exponentials(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let lambda = rng.gen_range(0.5..30.0);
    let c = rng.gen_range(0.1..5.0);
    let series: Vec<(f64, f64)> =
        (0..60).map(|k| (k as f64 * 0.01, c * (-lambda * k as f64 * 0.01).exp())).collect();
    let fit = decay_fit(&series, None).map_err(|e| e.to_string())?;
    ensure(
        (fit.lambda - lambda).abs() <= 1e-10 * lambda && (fit.c - c).abs() <= 1e-9 * c,
        || format!("synthetic rate {lambda} fitted as {}, prefactor {c} as {}", fit.lambda, fit.c),
    )
}

/// Run the whole battery with one seed. Checks run in a fixed order, each
/// with its own derived stream, so single failures reproduce in isolation.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    type CheckFn = fn(&mut ChaCha8Rng) -> Result<(), String>;
    let checks: &[(&'static str, CheckFn)] = &[
        ("cell volumes tile the domain", cell_volumes_tile_the_domain),
        ("discrete laplacian annihilates affine fields", laplacian_annihilates_linear_fields),
        ("sealed walls make the laplacian conservative", sealed_walls_make_the_laplacian_conservative),
        ("drift weights obey the reflection identity", drift_weights_obey_the_reflection_identity),
        ("potential solves meet their residual contract", potential_solves_meet_their_residual_contract),
        ("trivial equilibria are exactly neutral", trivial_equilibria_are_exactly_neutral),
        ("mirrored selective problems negate the potential", mirrored_selective_problems_negate_the_potential),
        ("equilibrium concentrations follow the potential", equilibrium_concentrations_follow_the_potential),
        ("equilibrium charge squared is subharmonic", equilibrium_charge_squared_is_subharmonic),
        ("equilibrium potential respects wall bounds", equilibrium_potential_respects_wall_bounds),
        ("impermeable walls conserve mass", impermeable_walls_conserve_mass),
        ("equilibria are transport fixed points", equilibria_are_transport_fixed_points),
        ("electroneutral runs keep their ledger", electroneutral_runs_keep_their_ledger),
        ("prescribed walls respect the ceiling", prescribed_walls_respect_the_ceiling),
        ("species swap mirrors trajectories", species_swap_mirrors_trajectories),
        ("viscous flow dissipates energy", viscous_flow_dissipates_energy),
        ("gradient forces leave the fluid at rest", gradient_forces_leave_the_fluid_at_rest),
        ("norm chain is ordered", norm_chain_is_ordered),
        ("interior supremum shrinks with margin", interior_supremum_shrinks_with_margin),
        ("decay fit recovers exact exponentials", decay_fit_recovers_exact_exponentials),
    ];
    checks
        .iter()
        .enumerate()
        .map(|(i, (name, f))| {
            // Independent stream per check: failures replay without the rest.
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((i as u64 + 1) << 32));
            CheckOutcome { name, detail: f(&mut rng) }
        })
        .collect()
}
