//! Observables recorded along simulations: charge/salt decompositions, norms
//! and interior suprema, the electroneutral quadratic ledger, exponential
//! decay fits, and maximum-principle monitoring.

use crate::grid::{integrate, ScalarField};
use crate::npns::{kinetic_energy, BoundarySpec, Family, ModelParams, SimState};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DiagError {
    #[error("c{species} must be positive for electrochemical potentials; cell {cell} has {value}")]
    NonPositiveConcentration { species: usize, cell: usize, value: f64 },
    #[error("margin {margin} must lie in [0, {limit}) (half the smallest extent)")]
    MarginTooLarge { margin: f64, limit: f64 },
    #[error("no cell center is at least {margin} away from every boundary")]
    EmptyInterior { margin: f64 },
    #[error("the quadratic ledger is defined for the electroneutral family, not {family}")]
    NotElectroneutral { family: &'static str },
    #[error("maximum-principle monitoring covers the Dirichlet and electroneutral families, not {family}")]
    NoMaximumPrinciple { family: &'static str },
    #[error("decay fit needs at least 3 usable points, got {got}")]
    TooFewPoints { got: usize },
    #[error("decay fit window [{0}, {1}] is empty or inverted")]
    BadWindow(f64, f64),
    #[error("trajectory has no records")]
    EmptyTrajectory,
}

/// Charge rho = c1 - c2 and salt sigma = c1 + c2.
pub fn charge_and_salt(c1: &ScalarField, c2: &ScalarField) -> (ScalarField, ScalarField) {
    let grid = c1.grid;
    let rho = c1.values.iter().zip(&c2.values).map(|(a, b)| a - b).collect();
    let sigma = c1.values.iter().zip(&c2.values).map(|(a, b)| a + b).collect();
    (ScalarField { grid, values: rho }, ScalarField { grid, values: sigma })
}

/// Electrochemical potentials log(ci) + zi*phi; defined only for strictly
/// positive concentrations.
pub fn electrochemical_potentials(
    c1: &ScalarField,
    c2: &ScalarField,
    phi: &ScalarField,
) -> Result<(ScalarField, ScalarField), DiagError> {
    for (species, c) in [(1usize, c1), (2usize, c2)] {
        for (cell, &v) in c.values.iter().enumerate() {
            if !(v > 0.0) {
                return Err(DiagError::NonPositiveConcentration { species, cell, value: v });
            }
        }
    }
    let grid = c1.grid;
    let mu1 = c1.values.iter().zip(&phi.values).map(|(c, p)| c.ln() + p).collect();
    let mu2 = c2.values.iter().zip(&phi.values).map(|(c, p)| c.ln() - p).collect();
    Ok((ScalarField { grid, values: mu1 }, ScalarField { grid, values: mu2 }))
}

/// Quadrature-consistent L1, L2, and sup norms of a field.
pub fn norms(f: &ScalarField) -> (f64, f64, f64) {
    let vol = f.grid.cell_volume();
    let l1: f64 = f.values.iter().map(|v| v.abs()).sum::<f64>() * vol;
    let l2: f64 = (f.values.iter().map(|v| v * v).sum::<f64>() * vol).sqrt();
    (l1, l2, f.linf())
}

/// Supremum of |f| over cells whose centers keep at least `margin` distance
/// from every boundary. The margin must leave a nonempty interior set.
pub fn interior_sup(f: &ScalarField, margin: f64) -> Result<f64, DiagError> {
    let grid = f.grid;
    let limit = if grid.dim == 1 {
        grid.extents[0] / 2.0
    } else {
        (grid.extents[0] / 2.0).min(grid.extents[1] / 2.0)
    };
    if !(margin >= 0.0) || margin >= limit {
        return Err(DiagError::MarginTooLarge { margin, limit });
    }
    let mut sup: Option<f64> = None;
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let (x, y) = grid.cell_center(i, j);
            let mut dist = x.min(grid.extents[0] - x);
            if grid.dim == 2 {
                dist = dist.min(y.min(grid.extents[1] - y));
            }
            if dist >= margin {
                let v = f.at(i, j).abs();
                sup = Some(sup.map_or(v, |s: f64| s.max(v)));
            }
        }
    }
    sup.ok_or(DiagError::EmptyInterior { margin })
}

/// Minimum over all cells of the discrete Laplacian of f^2, using centered
/// second differences where both neighbors exist and shifted one-sided second
/// differences at cells on the edge of the index range (so no boundary data
/// for f^2 is needed). A nonnegative value certifies that f^2 has no strict
/// interior maximum. Returns None when an axis has fewer than three cells.
pub fn min_laplacian_of_square(f: &ScalarField) -> Option<f64> {
    let grid = f.grid;
    let (nx, ny) = (grid.nx(), grid.ny());
    let sq = |i: usize, j: usize| {
        let v = f.at(i, j);
        v * v
    };
    // Second difference along one axis, shifted inward at the edge cells.
    let second = |g: &dyn Fn(usize) -> f64, n: usize, h2: f64, i: usize| {
        let c = i.clamp(1, n - 2);
        (g(c - 1) - 2.0 * g(c) + g(c + 1)) / h2
    };
    if (grid.dim == 1 && nx < 3) || (grid.dim == 2 && (nx < 3 || ny < 3)) {
        return None;
    }
    let hx2 = grid.h[0] * grid.h[0];
    let mut min: Option<f64> = None;
    for j in 0..ny {
        for i in 0..nx {
            let gx = |k: usize| sq(k, j);
            let mut lap = second(&gx, nx, hx2, i);
            if grid.dim == 2 {
                let hy2 = grid.h[1] * grid.h[1];
                let gy = |k: usize| sq(i, k);
                lap += second(&gy, ny, hy2, j);
            }
            min = Some(min.map_or(lap, |m: f64| m.min(lap)));
        }
    }
    min
}

/// The electroneutral quadratic ledger: the decaying functional Q, its salt
/// part Q1, the dissipation R, and the charge part P with Q >= P >= 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnQuadratic {
    pub q: f64,
    pub q1: f64,
    pub r: f64,
    pub p: f64,
}

pub fn en_quadratic_monitor(
    state: &SimState,
    params: &ModelParams,
    family: &Family,
) -> Result<EnQuadratic, DiagError> {
    if !matches!(family, Family::En) {
        return Err(DiagError::NotElectroneutral { family: family.name() });
    }
    let grid = state.c1.grid;
    let vol = grid.cell_volume();
    let (rho, sigma) = charge_and_salt(&state.c1, &state.c2);
    let measure = grid.domain_measure();
    let rho_bar = integrate(&rho) / measure;
    let sigma_bar = integrate(&sigma) / measure;
    let delta = params.delta();
    let dcap = params.dcap();
    let d1d2 = params.d1 * params.d2;
    let sqrt_d = dcap.sqrt();

    let mut q1 = 0.0;
    let mut rho_sq = 0.0;
    for (r, s) in rho.values.iter().zip(&sigma.values) {
        let combo = (delta / sqrt_d) * (r - rho_bar) + sqrt_d * (s - sigma_bar);
        q1 += combo * combo;
        rho_sq += r * r;
    }
    q1 *= 0.5 * vol;
    rho_sq *= vol;
    let charge_coeff = dcap / 2.0 - delta * delta / (2.0 * dcap);
    let p = charge_coeff * rho_sq / d1d2;
    let q = (charge_coeff * rho_sq + q1) / d1d2;

    // Gradient dissipation with the electroneutral ghost closure: the charge
    // reflects oddly (ghost = -interior), the salt evenly (zero gradient).
    let mut r_acc = 0.0;
    let (nx, ny) = (grid.nx(), grid.ny());
    for j in 0..ny {
        for i in 0..nx - 1 {
            let dr = (rho.at(i + 1, j) - rho.at(i, j)) / grid.h[0];
            let ds = (sigma.at(i + 1, j) - sigma.at(i, j)) / grid.h[0];
            r_acc += dr * dr + ds * ds;
        }
    }
    if grid.dim == 2 {
        for j in 0..ny - 1 {
            for i in 0..nx {
                let dr = (rho.at(i, j + 1) - rho.at(i, j)) / grid.h[1];
                let ds = (sigma.at(i, j + 1) - sigma.at(i, j)) / grid.h[1];
                r_acc += dr * dr + ds * ds;
            }
        }
    }
    for &side in grid.sides() {
        let h = grid.normal_h(side);
        for k in 0..grid.side_face_count(side) {
            let (i, j) = grid.boundary_cell(side, k);
            let dr = 2.0 * rho.at(i, j) / h;
            r_acc += dr * dr;
        }
    }
    Ok(EnQuadratic { q, q1, r: r_acc * vol, p })
}

/// One output row of a simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass1: f64,
    pub mass2: f64,
    pub rho_l1: f64,
    pub rho_l2: f64,
    pub rho_linf: f64,
    pub rho_intsup: f64,
    pub max_c1: f64,
    pub max_c2: f64,
    pub q: f64,
    pub q1: f64,
    pub r: f64,
    pub p: f64,
    pub ke: f64,
    pub lininv: f64,
}

impl DiagnosticsRecord {
    pub const COLUMNS: [&'static str; 15] = [
        "t", "mass1", "mass2", "rho_l1", "rho_l2", "rho_linf", "rho_intsup", "max_c1", "max_c2",
        "q", "q1", "r", "p", "ke", "lininv",
    ];

    pub fn values(&self) -> [f64; 15] {
        [
            self.t,
            self.mass1,
            self.mass2,
            self.rho_l1,
            self.rho_l2,
            self.rho_linf,
            self.rho_intsup,
            self.max_c1,
            self.max_c2,
            self.q,
            self.q1,
            self.r,
            self.p,
            self.ke,
            self.lininv,
        ]
    }
}

/// Sample every observable of a state. The quadratic ledger columns are NaN
/// outside the electroneutral family, where they are not defined.
pub fn record(
    state: &SimState,
    params: &ModelParams,
    bc: &BoundarySpec,
    margin: f64,
) -> Result<DiagnosticsRecord, DiagError> {
    let (rho, sigma) = charge_and_salt(&state.c1, &state.c2);
    let (rho_l1, rho_l2, rho_linf) = norms(&rho);
    let rho_intsup = interior_sup(&rho, margin)?;
    let measure = state.c1.grid.domain_measure();
    let ledger = match &bc.family {
        Family::En => {
            let e = en_quadratic_monitor(state, params, &bc.family)?;
            [e.q, e.q1, e.r, e.p]
        }
        _ => [f64::NAN; 4],
    };
    Ok(DiagnosticsRecord {
        t: state.t,
        mass1: integrate(&state.c1),
        mass2: integrate(&state.c2),
        rho_l1,
        rho_l2,
        rho_linf,
        rho_intsup,
        max_c1: state.c1.max(),
        max_c2: state.c2.max(),
        q: ledger[0],
        q1: ledger[1],
        r: ledger[2],
        p: ledger[3],
        ke: kinetic_energy(&state.u),
        lininv: params.delta() * integrate(&rho) / measure
            + params.dcap() * integrate(&sigma) / measure,
    })
}

/// Result of fitting norm(t) ~ c * exp(-lambda * t) by least squares on the
/// logarithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub lambda: f64,
    pub c: f64,
    pub window: (f64, f64),
    pub residual: f64,
    pub n_points: usize,
}

/// Fit an exponential decay rate over a time window (default: the series with
/// its first 20% dropped). Points are consumed in order and the series is
/// truncated at the first value below 1e-14, where the logarithm turns into
/// rounding noise.
pub fn decay_fit(
    series: &[(f64, f64)],
    window: Option<(f64, f64)>,
) -> Result<DecayFit, DiagError> {
    if series.is_empty() {
        return Err(DiagError::TooFewPoints { got: 0 });
    }
    let (t_first, t_last) = (series[0].0, series[series.len() - 1].0);
    let (w0, w1) = window.unwrap_or((t_first + 0.2 * (t_last - t_first), t_last));
    if !(w1 > w0) {
        return Err(DiagError::BadWindow(w0, w1));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(t, v) in series {
        if v < 1e-14 {
            break;
        }
        if t >= w0 && t <= w1 {
            xs.push(t);
            ys.push(v.ln());
        }
    }
    let n = xs.len();
    if n < 3 {
        return Err(DiagError::TooFewPoints { got: n });
    }
    let nf = n as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let slope = (nf * sxy - sx * sy) / (nf * sxx - sx * sx);
    let intercept = (sy - slope * sx) / nf;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let d = y - (intercept + slope * x);
            d * d
        })
        .sum::<f64>()
        / nf)
        .sqrt();
    Ok(DecayFit { lambda: -slope, c: intercept.exp(), window: (w0, w1), residual, n_points: n })
}

/// Verdict of maximum-principle monitoring over a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxPrincipleReport {
    /// The bound: boundary data and initial maxima for the Dirichlet family,
    /// initial maxima alone for the electroneutral one.
    pub gamma: f64,
    pub worst_ratio: f64,
    pub pass: bool,
}

/// Check sup ci(t) <= Gamma * (1 + 1e-8) along a recorded trajectory. Only
/// the Dirichlet and electroneutral families obey this comparison principle.
pub fn max_principle_monitor(
    records: &[DiagnosticsRecord],
    bc: &BoundarySpec,
) -> Result<MaxPrincipleReport, DiagError> {
    let first = records.first().ok_or(DiagError::EmptyTrajectory)?;
    let initial_max = first.max_c1.max(first.max_c2);
    let gamma = match &bc.family {
        Family::Di { gamma1, gamma2 } => initial_max.max(gamma1.max()).max(gamma2.max()),
        Family::En => initial_max,
        other => return Err(DiagError::NoMaximumPrinciple { family: other.name() }),
    };
    let worst = records.iter().fold(0.0f64, |m, r| m.max(r.max_c1.max(r.max_c2)));
    let worst_ratio = worst / gamma;
    Ok(MaxPrincipleReport { gamma, worst_ratio, pass: worst_ratio <= 1.0 + 1e-8 })
}
