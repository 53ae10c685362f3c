//! Experiment configuration: a strict TOML schema covering the domain, the
//! physical parameters, the wall data, the time grid, the initial fields,
//! and the experiment driver. Parsing is total — every error names the key
//! it occurred at — and unknown keys are rejected so misspellings cannot
//! silently fall back to defaults.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cli::expr::{self, Expr};
use crate::grid::{build_grid, BoundaryData, BoundaryValues, Grid, ScalarField, Side, VectorField};
use crate::npns::{
    random_divergence_free, BoundarySpec, Family, FluidMode, ModelParams, NpError, TimeGrid,
};
use crate::pb::PbVariant;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not valid TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config cannot be rendered: {0}")]
    Render(#[from] toml::ser::Error),
    #[error("config error at `{path}`: {reason}")]
    Invalid { path: String, reason: String },
}

fn invalid<T>(path: impl Into<String>, reason: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid { path: path.into(), reason: reason.into() })
}

// ---------------------------------------------------------------------------
// Raw schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainSection,
    pub params: ParamsSection,
    pub bc: BcSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fluid: Option<FluidSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitSection>,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub dim: usize,
    pub extents: Vec<f64>,
    pub cells: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub epsilon: f64,
    pub d1: f64,
    pub d2: f64,
    /// Viscosity; only matters when flow is on. Defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    /// Electric body-force coupling; only matters when flow is on. Defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kcoup: Option<f64>,
}

/// A scalar wall quantity: one expression for the whole boundary, or one
/// expression per side. Expressions see the face-center coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueSpec {
    Uniform(String),
    PerSide(BTreeMap<String, String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyTag {
    Bl,
    Di,
    Us,
    En,
}

impl FamilyTag {
    pub fn name(self) -> &'static str {
        match self {
            FamilyTag::Bl => "bl",
            FamilyTag::Di => "di",
            FamilyTag::Us => "us",
            FamilyTag::En => "en",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcSection {
    pub family: FamilyTag,
    /// Side sets for the selective family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s1: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s2: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<ValueSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma2: Option<ValueSpec>,
    /// Wall potential; always required.
    pub w: ValueSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FluidTag {
    Off,
    Stokes,
    NavierStokes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidSection {
    pub mode: FluidTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub dt_max: f64,
    pub t_end: f64,
    pub output_every: f64,
}

/// Initial velocity: at rest, or a seeded random smooth divergence-free field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum USpec {
    Named(String),
    Random { random: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub c1: String,
    pub c2: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<USpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    PbSolve,
    Simulate,
    Sweep,
    DecayStudy,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::PbSolve => "pb-solve",
            Kind::Simulate => "simulate",
            Kind::Sweep => "sweep",
            Kind::DecayStudy => "decay-study",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: Kind,
    /// Strictly decreasing positive permittivities (sweep only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_list: Option<Vec<f64>>,
    /// Interior margin for the electroneutrality column. Default 0.25.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    /// Fit window for the decay study. Default: drop the first 20%.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<[f64; 2]>,
}

// ---------------------------------------------------------------------------
// Resolved form
// ---------------------------------------------------------------------------

/// A wall expression bound to sides, reusable across refined grids.
#[derive(Debug, Clone)]
pub enum WallExpr {
    Uniform(Expr),
    PerSide(Vec<(Side, Expr)>),
}

impl WallExpr {
    /// Evaluate on a grid's boundary faces. Sides without an expression get
    /// the neutral value 1 (only reachable for selective-wall concentrations
    /// off their side set, which no computation reads).
    pub fn boundary_values(&self, grid: &Grid) -> BoundaryValues {
        BoundaryValues::from_fn(grid, |side, x, y| match self {
            WallExpr::Uniform(e) => e.eval(x, y),
            WallExpr::PerSide(list) => list
                .iter()
                .find(|(s, _)| *s == side)
                .map(|(_, e)| e.eval(x, y))
                .unwrap_or(1.0),
        })
    }
}

/// Initial fields evaluated on the configured grid.
#[derive(Debug, Clone)]
pub struct InitFields {
    pub c1: ScalarField,
    pub c2: ScalarField,
    pub u: VectorField,
}

/// A fully validated configuration, with every object the drivers need.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub kind: Kind,
    pub grid: Grid,
    pub params: ModelParams,
    pub bc: BoundarySpec,
    pub fluid: FluidMode,
    pub time: Option<TimeGrid>,
    pub init: Option<InitFields>,
    pub margin: f64,
    pub eps_list: Vec<f64>,
    pub fit_window: Option<(f64, f64)>,
    /// Wall potential, re-evaluable on refined grids (sweeps).
    pub w: WallExpr,
    /// The equilibrium problem encoded by the walls (pb-solve and sweep).
    pub variant: Option<PbVariant>,
}

// ---------------------------------------------------------------------------
// Parsing and validation
// ---------------------------------------------------------------------------

/// Parse and fully validate a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text)?;
    resolve(&cfg)?;
    Ok(cfg)
}

/// Render a configuration back to TOML.
pub fn to_toml(cfg: &ExperimentConfig) -> Result<String, ConfigError> {
    Ok(toml::to_string(cfg)?)
}

fn positive(path: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        invalid(path, format!("must be a positive finite number, got {v}"))
    }
}

fn sides_for_dim(dim: usize) -> &'static [Side] {
    if dim == 1 {
        &[Side::Left, Side::Right]
    } else {
        &[Side::Left, Side::Right, Side::Bottom, Side::Top]
    }
}

fn side_from_name(path: &str, name: &str, dim: usize) -> Result<Side, ConfigError> {
    let side = match name {
        "left" => Side::Left,
        "right" => Side::Right,
        "bottom" => Side::Bottom,
        "top" => Side::Top,
        other => {
            return invalid(
                path,
                format!("unknown side `{other}` (expected left, right, bottom, top)"),
            )
        }
    };
    if !sides_for_dim(dim).contains(&side) {
        return invalid(path, format!("side `{name}` does not exist in a {dim}d domain"));
    }
    Ok(side)
}

fn parse_checked_expr(path: &str, src: &str, dim: usize) -> Result<Expr, ConfigError> {
    let e = match expr::parse(src) {
        Ok(e) => e,
        Err(err) => return invalid(path, err.to_string()),
    };
    if dim == 1 && e.uses_y() {
        return invalid(path, "the coordinate y is unavailable in a 1d domain");
    }
    Ok(e)
}

/// Resolve a wall quantity. `required_sides` is the set of sides the
/// quantity must cover; a per-side table must name exactly those sides.
fn resolve_value_spec(
    path: &str,
    spec: &ValueSpec,
    dim: usize,
    required_sides: &[Side],
) -> Result<WallExpr, ConfigError> {
    match spec {
        ValueSpec::Uniform(src) => Ok(WallExpr::Uniform(parse_checked_expr(path, src, dim)?)),
        ValueSpec::PerSide(map) => {
            let mut list = Vec::new();
            for (name, src) in map {
                let side = side_from_name(&format!("{path}.{name}"), name, dim)?;
                if !required_sides.contains(&side) {
                    return invalid(
                        format!("{path}.{name}"),
                        "this side is not covered by the quantity",
                    );
                }
                list.push((side, parse_checked_expr(&format!("{path}.{name}"), src, dim)?));
            }
            for side in required_sides {
                if !list.iter().any(|(s, _)| s == side) {
                    return invalid(path, format!("missing side `{}`", side.name()));
                }
            }
            Ok(WallExpr::PerSide(list))
        }
    }
}

fn check_boundary_finite(
    path: &str,
    vals: &BoundaryValues,
    grid: &Grid,
) -> Result<(), ConfigError> {
    for side in grid.sides() {
        for k in 0..grid.side_face_count(*side) {
            if !vals.at(grid, *side, k).is_finite() {
                return invalid(
                    path,
                    format!("evaluates to a non-finite value on side {}", side.name()),
                );
            }
        }
    }
    Ok(())
}

fn bc_error_path(err: &NpError) -> String {
    match err {
        NpError::NonPositiveGamma { species, .. } | NpError::SelectiveNotUniform { species, .. } => {
            format!("bc.gamma{species}")
        }
        NpError::NoSelectiveSides | NpError::DuplicateSide { .. } | NpError::SideNotOnGrid { .. } => {
            "bc.s1".to_string()
        }
        _ => "bc".to_string(),
    }
}

fn bc_error_reason(err: &NpError) -> String {
    match err {
        NpError::SelectiveNotUniform { .. } => {
            format!("the boundary chemistry must be constant in space and time: {err}")
        }
        _ => err.to_string(),
    }
}

struct ResolvedBc {
    bc: BoundarySpec,
    w: WallExpr,
    /// Selective side sets (empty for other families).
    s1: Vec<Side>,
    s2: Vec<Side>,
}

fn resolve_bc(cfg: &ExperimentConfig, grid: &Grid) -> Result<ResolvedBc, ConfigError> {
    let dim = grid.dim;
    let section = &cfg.bc;
    let all = sides_for_dim(dim);

    let w = resolve_value_spec("bc.w", &section.w, dim, all)?;
    let w_vals = w.boundary_values(grid);
    check_boundary_finite("bc.w", &w_vals, grid)?;

    let forbid = |key: &str, present: bool| -> Result<(), ConfigError> {
        if present {
            invalid(
                format!("bc.{key}"),
                format!("not used by family {}", section.family.name()),
            )
        } else {
            Ok(())
        }
    };

    let resolve_sides = |key: &str, names: &[String]| -> Result<Vec<Side>, ConfigError> {
        let mut sides = Vec::new();
        for name in names {
            sides.push(side_from_name(&format!("bc.{key}"), name, dim)?);
        }
        Ok(sides)
    };

    let resolve_gamma = |key: &str,
                         spec: &Option<ValueSpec>,
                         required: &[Side]|
     -> Result<BoundaryValues, ConfigError> {
        let path = format!("bc.{key}");
        let spec = match spec {
            Some(s) => s,
            None => return invalid(path, "required by this family"),
        };
        let wall = resolve_value_spec(&path, spec, dim, required)?;
        let vals = wall.boundary_values(grid);
        check_boundary_finite(&path, &vals, grid)?;
        Ok(vals)
    };

    let (family, s1, s2) = match section.family {
        FamilyTag::Bl | FamilyTag::En => {
            forbid("gamma1", section.gamma1.is_some())?;
            forbid("gamma2", section.gamma2.is_some())?;
            forbid("s1", section.s1.is_some())?;
            forbid("s2", section.s2.is_some())?;
            let family =
                if section.family == FamilyTag::Bl { Family::Bl } else { Family::En };
            (family, Vec::new(), Vec::new())
        }
        FamilyTag::Di => {
            forbid("s1", section.s1.is_some())?;
            forbid("s2", section.s2.is_some())?;
            let gamma1 = resolve_gamma("gamma1", &section.gamma1, all)?;
            let gamma2 = resolve_gamma("gamma2", &section.gamma2, all)?;
            (Family::Di { gamma1, gamma2 }, Vec::new(), Vec::new())
        }
        FamilyTag::Us => {
            let s1 = match &section.s1 {
                Some(names) => resolve_sides("s1", names)?,
                None => return invalid("bc.s1", "required by family us (may be empty)"),
            };
            let s2 = match &section.s2 {
                Some(names) => resolve_sides("s2", names)?,
                None => return invalid("bc.s2", "required by family us (may be empty)"),
            };
            let gamma_for = |key: &str,
                             spec: &Option<ValueSpec>,
                             sides: &[Side]|
             -> Result<BoundaryValues, ConfigError> {
                if sides.is_empty() {
                    if spec.is_some() {
                        return invalid(
                            format!("bc.{key}"),
                            "given, but the species' side set is empty",
                        );
                    }
                    Ok(BoundaryValues::uniform(grid, 1.0))
                } else {
                    resolve_gamma(key, spec, sides)
                }
            };
            let gamma1 = gamma_for("gamma1", &section.gamma1, &s1)?;
            let gamma2 = gamma_for("gamma2", &section.gamma2, &s2)?;
            (
                Family::Us { s1: s1.clone(), s2: s2.clone(), gamma1, gamma2 },
                s1,
                s2,
            )
        }
    };

    let bc = BoundarySpec::new(grid, BoundaryData::from_values(&w_vals), family)
        .map_err(|e| ConfigError::Invalid { path: bc_error_path(&e), reason: bc_error_reason(&e) })?;
    Ok(ResolvedBc { bc, w, s1, s2 })
}

fn resolve_init(
    cfg: &ExperimentConfig,
    grid: &Grid,
    needed_by: &str,
) -> Result<InitFields, ConfigError> {
    let section = match &cfg.init {
        Some(s) => s,
        None => return invalid("init", format!("required {needed_by}")),
    };
    let mut fields = Vec::new();
    for (key, src) in [("c1", &section.c1), ("c2", &section.c2)] {
        let path = format!("init.{key}");
        let e = parse_checked_expr(&path, src, grid.dim)?;
        let f = ScalarField::from_fn(*grid, |x, y| e.eval(x, y));
        for (cell, v) in f.values.iter().enumerate() {
            if !v.is_finite() {
                return invalid(&path, format!("evaluates to a non-finite value at cell {cell}"));
            }
            if *v < 0.0 {
                return invalid(&path, format!("negative ({v}) at cell {cell}"));
            }
        }
        fields.push(f);
    }
    let c2 = fields.pop().expect("two fields");
    let c1 = fields.pop().expect("two fields");
    let u = match &section.u {
        None => VectorField::zero(*grid),
        Some(USpec::Named(name)) if name == "zero" => VectorField::zero(*grid),
        Some(USpec::Named(other)) => {
            return invalid(
                "init.u",
                format!("expected \"zero\" or {{ random = <seed> }}, got \"{other}\""),
            )
        }
        Some(USpec::Random { random }) => {
            if grid.dim != 2 {
                return invalid("init.u", "a random velocity field needs a 2d domain");
            }
            random_divergence_free(*grid, *random)
        }
    };
    Ok(InitFields { c1, c2, u })
}

/// Derive the equilibrium problem encoded by blocking or selective walls.
fn derive_variant(
    rbc: &ResolvedBc,
    family: FamilyTag,
    grid: &Grid,
    init: &Option<InitFields>,
) -> Result<PbVariant, ConfigError> {
    let masses = || -> Result<(f64, f64), ConfigError> {
        let init = init.as_ref().expect("init presence checked by caller");
        Ok((crate::grid::integrate(&init.c1), crate::grid::integrate(&init.c2)))
    };
    match family {
        FamilyTag::Bl => {
            let (m1, m2) = masses()?;
            if (m1 - m2).abs() > 1e-10 * m1.abs().max(m2.abs()).max(1e-300) {
                return invalid(
                    "init",
                    format!(
                        "the blocking equilibrium requires equal species masses, got {m1} and {m2}"
                    ),
                );
            }
            Ok(PbVariant::Bl { i0: 0.5 * (m1 + m2) })
        }
        FamilyTag::Us => {
            let w_vals = rbc.w.boundary_values(grid);
            let (gamma1, gamma2) = match &rbc.bc.family {
                Family::Us { gamma1, gamma2, .. } => (gamma1, gamma2),
                _ => unreachable!("family tag is us"),
            };
            // The boundary electrochemical potential is constant on each side
            // set (validated), so one face determines the constant.
            let mu = |sides: &[Side], gamma: &BoundaryValues, valence: f64| -> Option<f64> {
                let side = *sides.first()?;
                let g = gamma.at(grid, side, 0);
                let w = w_vals.at(grid, side, 0);
                Some(g.ln() + valence * w)
            };
            let z1 = mu(&rbc.s1, gamma1, 1.0).map(|m| (-m).exp());
            let z2 = mu(&rbc.s2, gamma2, -1.0).map(|m| (-m).exp());
            match (z1, z2) {
                (Some(z1), Some(z2)) => Ok(PbVariant::Us2 { z1, z2 }),
                (Some(z1), None) => {
                    let (_, m2) = masses()?;
                    Ok(PbVariant::UsCation { z1, i2: m2 })
                }
                (None, Some(z2)) => {
                    let (m1, _) = masses()?;
                    Ok(PbVariant::UsAnion { z2, i1: m1 })
                }
                (None, None) => unreachable!("at least one side set is nonempty (validated)"),
            }
        }
        other => invalid(
            "bc.family",
            format!("equilibrium solves support families bl and us, not {}", other.name()),
        ),
    }
}

/// Validate a parsed configuration completely and build the runtime objects.
pub fn resolve(cfg: &ExperimentConfig) -> Result<Resolved, ConfigError> {
    // Domain.
    let d = &cfg.domain;
    if d.dim != 1 && d.dim != 2 {
        return invalid("domain.dim", format!("must be 1 or 2, got {}", d.dim));
    }
    if d.extents.len() != d.dim {
        return invalid(
            "domain.extents",
            format!("expected {} entries for a {}d domain, got {}", d.dim, d.dim, d.extents.len()),
        );
    }
    if d.cells.len() != d.dim {
        return invalid(
            "domain.cells",
            format!("expected {} entries for a {}d domain, got {}", d.dim, d.dim, d.cells.len()),
        );
    }
    for (a, &e) in d.extents.iter().enumerate() {
        positive(&format!("domain.extents[{a}]"), e)?;
    }
    let grid = build_grid(d.dim, &d.extents, &d.cells)
        .map_err(|e| ConfigError::Invalid { path: "domain".into(), reason: e.to_string() })?;

    // Parameters.
    let p = &cfg.params;
    let params = ModelParams {
        epsilon: positive("params.epsilon", p.epsilon)?,
        d1: positive("params.d1", p.d1)?,
        d2: positive("params.d2", p.d2)?,
        nu: positive("params.nu", p.nu.unwrap_or(1.0))?,
        kcoup: positive("params.kcoup", p.kcoup.unwrap_or(1.0))?,
    };

    // Walls.
    let rbc = resolve_bc(cfg, &grid)?;

    // Kind-dependent section usage.
    let kind = cfg.experiment.kind;
    let is_dynamic = matches!(kind, Kind::Simulate | Kind::DecayStudy);
    if !is_dynamic {
        if cfg.time.is_some() {
            return invalid("time", format!("not used by kind {}", kind.name()));
        }
        if cfg.fluid.is_some() {
            return invalid("fluid", format!("not used by kind {}", kind.name()));
        }
    }

    // Fluid.
    let fluid = match cfg.fluid.as_ref().map(|f| f.mode) {
        None | Some(FluidTag::Off) => FluidMode::Off,
        Some(mode) => {
            if grid.dim != 2 {
                return invalid("fluid.mode", "flow needs a 2d domain");
            }
            match mode {
                FluidTag::Stokes => FluidMode::Stokes,
                FluidTag::NavierStokes => FluidMode::NavierStokes,
                FluidTag::Off => unreachable!(),
            }
        }
    };

    // Time grid.
    let time = match (&cfg.time, is_dynamic) {
        (Some(t), true) => {
            let dt_max = positive("time.dt_max", t.dt_max)?;
            let t_end = positive("time.t_end", t.t_end)?;
            let output_every = positive("time.output_every", t.output_every)?;
            if output_every > t_end {
                return invalid("time.output_every", "must not exceed time.t_end");
            }
            Some(TimeGrid { dt_max, t_end, output_every })
        }
        (None, true) => return invalid("time", format!("required by kind {}", kind.name())),
        (None, false) => None,
        (Some(_), false) => unreachable!("rejected above"),
    };

    // Initial fields: dynamics always need them; equilibrium solves need
    // them exactly when a species mass closes the problem.
    let needs_masses = matches!(
        (kind, cfg.bc.family, &cfg.bc.s1, &cfg.bc.s2),
        (Kind::PbSolve | Kind::Sweep, FamilyTag::Bl, _, _)
    ) || (matches!(kind, Kind::PbSolve | Kind::Sweep)
        && cfg.bc.family == FamilyTag::Us
        && (cfg.bc.s1.as_ref().is_some_and(|s| s.is_empty())
            || cfg.bc.s2.as_ref().is_some_and(|s| s.is_empty())));
    let init = if is_dynamic {
        Some(resolve_init(cfg, &grid, &format!("by kind {}", kind.name()))?)
    } else if needs_masses {
        Some(resolve_init(cfg, &grid, "to fix the species masses of this equilibrium problem")?)
    } else {
        if cfg.init.is_some() {
            return invalid("init", format!("not used by this {} configuration", kind.name()));
        }
        None
    };

    // Experiment keys.
    let ex = &cfg.experiment;
    let margin = match ex.margin {
        Some(m) => {
            let half = 0.5 * d.extents.iter().cloned().fold(f64::INFINITY, f64::min);
            if !(m.is_finite() && m > 0.0 && m < half) {
                return invalid(
                    "experiment.margin",
                    format!("must lie in (0, {half}) for this domain, got {m}"),
                );
            }
            m
        }
        None => 0.25,
    };
    let eps_list = match (kind, &ex.eps_list) {
        (Kind::Sweep, Some(list)) => {
            if list.is_empty() {
                return invalid("experiment.eps_list", "must not be empty");
            }
            for (i, &e) in list.iter().enumerate() {
                positive(&format!("experiment.eps_list[{i}]"), e)?;
                if i > 0 && e >= list[i - 1] {
                    return invalid(
                        "experiment.eps_list",
                        "entries must be strictly decreasing",
                    );
                }
            }
            list.clone()
        }
        (Kind::Sweep, None) => {
            return invalid("experiment.eps_list", "required for kind sweep")
        }
        (_, Some(_)) => {
            return invalid("experiment.eps_list", format!("only used by kind sweep, not {}", kind.name()))
        }
        (_, None) => Vec::new(),
    };
    let fit_window = match (kind, &ex.fit_window) {
        (Kind::DecayStudy, Some([t0, t1])) => {
            let t_end = time.as_ref().expect("dynamic kind has a time grid").t_end;
            if !(t0.is_finite() && t1.is_finite() && *t0 >= 0.0 && t1 > t0 && *t1 <= t_end) {
                return invalid(
                    "experiment.fit_window",
                    format!("needs 0 <= t0 < t1 <= t_end, got [{t0}, {t1}]"),
                );
            }
            Some((*t0, *t1))
        }
        (Kind::DecayStudy, None) => None,
        (_, Some(_)) => {
            return invalid(
                "experiment.fit_window",
                format!("only used by kind decay-study, not {}", kind.name()),
            )
        }
        (_, None) => None,
    };

    // The equilibrium problem behind pb-solve and sweep.
    let variant = if matches!(kind, Kind::PbSolve | Kind::Sweep) {
        Some(derive_variant(&rbc, cfg.bc.family, &grid, &init)?)
    } else {
        None
    };

    Ok(Resolved {
        kind,
        grid,
        params,
        bc: rbc.bc,
        fluid,
        time,
        init,
        margin,
        eps_list,
        fit_window,
        w: rbc.w,
        variant,
    })
}
