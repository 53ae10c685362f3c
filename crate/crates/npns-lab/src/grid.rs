//! Uniform cell-centered grids in 1D/2D, fields living on them, and the
//! discrete operators shared by every solver: ghost-cell Laplacian, midpoint
//! quadrature, and exponentially fitted (Scharfetter-Gummel) edge fluxes.

use thiserror::Error;

pub const MIN_CELLS_PER_AXIS: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("dim must be 1 or 2, got {0}")]
    BadDim(usize),
    #[error("extent along axis {axis} must be positive, got {value}")]
    NonPositiveExtent { axis: usize, value: f64 },
    #[error("need at least {MIN_CELLS_PER_AXIS} cells along axis {axis}, got {got}")]
    TooFewCells { axis: usize, got: usize },
}

/// Boundary side, also the canonical enumeration order of boundary faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Bottom => "bottom",
            Side::Top => "top",
        }
    }
}

/// Uniform cell-centered mesh. In 1D the second axis is a single degenerate
/// row: `cells[1] == 1` and only `Left`/`Right` boundaries exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub extents: [f64; 2],
    pub cells: [usize; 2],
    pub h: [f64; 2],
}

pub fn build_grid(dim: usize, extents: &[f64], cells: &[usize]) -> Result<Grid, GridError> {
    if dim != 1 && dim != 2 {
        return Err(GridError::BadDim(dim));
    }
    assert_eq!(extents.len(), dim, "extents length must equal dim");
    assert_eq!(cells.len(), dim, "cells length must equal dim");
    let mut ex = [1.0f64; 2];
    let mut nc = [1usize; 2];
    for a in 0..dim {
        if !(extents[a] > 0.0) || !extents[a].is_finite() {
            return Err(GridError::NonPositiveExtent { axis: a, value: extents[a] });
        }
        if cells[a] < MIN_CELLS_PER_AXIS {
            return Err(GridError::TooFewCells { axis: a, got: cells[a] });
        }
        ex[a] = extents[a];
        nc[a] = cells[a];
    }
    let h = [ex[0] / nc[0] as f64, ex[1] / nc[1] as f64];
    Ok(Grid { dim, extents: ex, cells: nc, h })
}

impl Grid {
    #[inline]
    pub fn nx(&self) -> usize {
        self.cells[0]
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.cells[1]
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    /// Row-major cell index.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx() && j < self.ny());
        j * self.cells[0] + i
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        if self.dim == 1 {
            self.h[0]
        } else {
            self.h[0] * self.h[1]
        }
    }

    pub fn domain_measure(&self) -> f64 {
        if self.dim == 1 {
            self.extents[0]
        } else {
            self.extents[0] * self.extents[1]
        }
    }

    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (i as f64 + 0.5) * self.h[0],
            if self.dim == 1 { 0.0 } else { (j as f64 + 0.5) * self.h[1] },
        )
    }

    pub fn sides(&self) -> &'static [Side] {
        if self.dim == 1 {
            &[Side::Left, Side::Right]
        } else {
            &[Side::Left, Side::Right, Side::Bottom, Side::Top]
        }
    }

    /// Number of boundary faces on one side.
    pub fn side_face_count(&self, side: Side) -> usize {
        match side {
            Side::Left | Side::Right => self.ny(),
            Side::Bottom | Side::Top => {
                assert!(self.dim == 2, "bottom/top sides exist only in 2D");
                self.nx()
            }
        }
    }

    pub fn boundary_face_count(&self) -> usize {
        if self.dim == 1 {
            2
        } else {
            2 * self.ny() + 2 * self.nx()
        }
    }

    /// Offset of a side's block in the canonical boundary-face order
    /// (left block, right block, then bottom and top in 2D).
    pub fn boundary_face_offset(&self, side: Side) -> usize {
        let ny = self.ny();
        let nx = self.nx();
        match side {
            Side::Left => 0,
            Side::Right => ny,
            Side::Bottom => 2 * ny,
            Side::Top => 2 * ny + nx,
        }
    }

    #[inline]
    pub fn boundary_face_index(&self, side: Side, k: usize) -> usize {
        debug_assert!(k < self.side_face_count(side));
        self.boundary_face_offset(side) + k
    }

    /// Interior cell adjacent to the k-th face of a side.
    #[inline]
    pub fn boundary_cell(&self, side: Side, k: usize) -> (usize, usize) {
        match side {
            Side::Left => (0, k),
            Side::Right => (self.nx() - 1, k),
            Side::Bottom => (k, 0),
            Side::Top => (k, self.ny() - 1),
        }
    }

    /// Face-center coordinates of the k-th boundary face of a side.
    pub fn boundary_face_center(&self, side: Side, k: usize) -> (f64, f64) {
        let ymid = |k: usize| (k as f64 + 0.5) * self.h[1];
        let xmid = |k: usize| (k as f64 + 0.5) * self.h[0];
        match side {
            Side::Left => (0.0, if self.dim == 1 { 0.0 } else { ymid(k) }),
            Side::Right => (self.extents[0], if self.dim == 1 { 0.0 } else { ymid(k) }),
            Side::Bottom => (xmid(k), 0.0),
            Side::Top => (xmid(k), self.extents[1]),
        }
    }

    /// Grid spacing perpendicular to a side.
    #[inline]
    pub fn normal_h(&self, side: Side) -> f64 {
        match side {
            Side::Left | Side::Right => self.h[0],
            Side::Bottom | Side::Top => self.h[1],
        }
    }

    /// Cell whose center is nearest to the domain center (ties to lower index).
    pub fn center_cell(&self) -> (usize, usize) {
        let pick = |n: usize| if n % 2 == 0 { n / 2 - 1 } else { n / 2 };
        (pick(self.nx()), if self.dim == 1 { 0 } else { pick(self.ny()) })
    }
}

/// One cell-centered value per cell, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn constant(grid: Grid, v: f64) -> Self {
        ScalarField { grid, values: vec![v; grid.n_cells()] }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n_cells());
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let (x, y) = grid.cell_center(i, j);
                values.push(f(x, y));
            }
        }
        ScalarField { grid, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }
}

/// Face-normal components on interior faces (staggered layout). `x` holds the
/// (nx-1)*ny vertical-face components, `y` the nx*(ny-1) horizontal-face ones
/// (empty in 1D). Boundary faces carry no storage: no-slip walls and
/// family-specific boundary fluxes are handled where they arise.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl VectorField {
    pub fn zero(grid: Grid) -> Self {
        let nxf = (grid.nx() - 1) * grid.ny();
        let nyf = if grid.dim == 2 { grid.nx() * (grid.ny() - 1) } else { 0 };
        VectorField { grid, x: vec![0.0; nxf], y: vec![0.0; nyf] }
    }

    /// Index of the x-face between cells (i,j) and (i+1,j).
    #[inline]
    pub fn fx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.grid.nx() - 1 && j < self.grid.ny());
        j * (self.grid.nx() - 1) + i
    }

    /// Index of the y-face between cells (i,j) and (i,j+1).
    #[inline]
    pub fn fy(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.grid.nx() && j < self.grid.ny() - 1);
        j * self.grid.nx() + i
    }

    pub fn linf(&self) -> f64 {
        let mx = self.x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.y.iter().fold(mx, |m, v| m.max(v.abs()))
    }
}

/// Per-face boundary condition for a scalar solve: either a prescribed value
/// at the wall or a prescribed outward normal derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceBc {
    Value(f64),
    Flux(f64),
}

/// One `FaceBc` per boundary face, in the canonical side-block order.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    pub faces: Vec<FaceBc>,
}

impl BoundaryData {
    pub fn uniform_value(grid: &Grid, w: f64) -> Self {
        BoundaryData { faces: vec![FaceBc::Value(w); grid.boundary_face_count()] }
    }

    pub fn uniform_flux(grid: &Grid, g: f64) -> Self {
        BoundaryData { faces: vec![FaceBc::Flux(g); grid.boundary_face_count()] }
    }

    pub fn from_values(vals: &BoundaryValues) -> Self {
        BoundaryData { faces: vals.values.iter().map(|&w| FaceBc::Value(w)).collect() }
    }

    #[inline]
    pub fn at(&self, grid: &Grid, side: Side, k: usize) -> FaceBc {
        self.faces[grid.boundary_face_index(side, k)]
    }

    /// Same conditions with every `Value`/`Flux` payload zeroed; subtracting
    /// this operator's action splits an affine solve into linear + offset.
    pub fn homogenized(&self) -> Self {
        BoundaryData {
            faces: self
                .faces
                .iter()
                .map(|f| match f {
                    FaceBc::Value(_) => FaceBc::Value(0.0),
                    FaceBc::Flux(_) => FaceBc::Flux(0.0),
                })
                .collect(),
        }
    }
}

/// One plain value per boundary face (potentials, Dirichlet concentrations).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryValues {
    pub values: Vec<f64>,
}

impl BoundaryValues {
    pub fn uniform(grid: &Grid, w: f64) -> Self {
        BoundaryValues { values: vec![w; grid.boundary_face_count()] }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(Side, f64, f64) -> f64) -> Self {
        let mut values = vec![0.0; grid.boundary_face_count()];
        for &side in grid.sides() {
            for k in 0..grid.side_face_count(side) {
                let (x, y) = grid.boundary_face_center(side, k);
                values[grid.boundary_face_index(side, k)] = f(side, x, y);
            }
        }
        BoundaryValues { values }
    }

    #[inline]
    pub fn at(&self, grid: &Grid, side: Side, k: usize) -> f64 {
        self.values[grid.boundary_face_index(side, k)]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    pub fn negated(&self) -> Self {
        BoundaryValues { values: self.values.iter().map(|v| -v).collect() }
    }

    pub fn shifted(&self, delta: f64) -> Self {
        BoundaryValues { values: self.values.iter().map(|v| v + delta).collect() }
    }
}

/// Midpoint quadrature; exact for cellwise-constant and (by symmetry) linear f.
pub fn integrate(f: &ScalarField) -> f64 {
    let s: f64 = f.values.iter().sum();
    s * f.grid.cell_volume()
}

/// Face-normal gradient at a boundary face, oriented along the +axis
/// direction, from a ghost cell: Dirichlet ghosts reflect (ghost = 2w - f_in),
/// prescribed outward fluxes substitute directly.
#[inline]
pub fn boundary_face_gradient(side: Side, f_in: f64, bc: FaceBc, h: f64) -> f64 {
    match (side, bc) {
        // +axis gradient at a low-side face: (f_in - ghost)/h.
        (Side::Left | Side::Bottom, FaceBc::Value(w)) => 2.0 * (f_in - w) / h,
        // Outward normal there is -axis, so d f/d axis = -flux.
        (Side::Left | Side::Bottom, FaceBc::Flux(g)) => -g,
        (Side::Right | Side::Top, FaceBc::Value(w)) => 2.0 * (w - f_in) / h,
        (Side::Right | Side::Top, FaceBc::Flux(g)) => g,
    }
}

/// Discrete Laplacian: 3-point (1D) / 5-point (2D) divergence of face
/// gradients, with boundary faces closed by `bc`.
pub fn laplacian(f: &ScalarField, bc: &BoundaryData) -> ScalarField {
    let g = f.grid;
    assert_eq!(
        bc.faces.len(),
        g.boundary_face_count(),
        "boundary data must cover every boundary face"
    );
    let (nx, ny) = (g.nx(), g.ny());
    let hx = g.h[0];
    let mut out = vec![0.0; g.n_cells()];

    for j in 0..ny {
        let row = j * nx;
        let gl = boundary_face_gradient(Side::Left, f.values[row], bc.at(&g, Side::Left, j), hx);
        let gr = boundary_face_gradient(
            Side::Right,
            f.values[row + nx - 1],
            bc.at(&g, Side::Right, j),
            hx,
        );
        let mut prev = gl;
        for i in 0..nx {
            let next = if i + 1 < nx {
                (f.values[row + i + 1] - f.values[row + i]) / hx
            } else {
                gr
            };
            out[row + i] += (next - prev) / hx;
            prev = next;
        }
    }

    if g.dim == 2 {
        let hy = g.h[1];
        for i in 0..nx {
            let gb =
                boundary_face_gradient(Side::Bottom, f.values[i], bc.at(&g, Side::Bottom, i), hy);
            let gt = boundary_face_gradient(
                Side::Top,
                f.values[(ny - 1) * nx + i],
                bc.at(&g, Side::Top, i),
                hy,
            );
            let mut prev = gb;
            for j in 0..ny {
                let next = if j + 1 < ny {
                    (f.values[(j + 1) * nx + i] - f.values[j * nx + i]) / hy
                } else {
                    gt
                };
                out[j * nx + i] += (next - prev) / hy;
                prev = next;
            }
        }
    }

    ScalarField { grid: g, values: out }
}

/// Bernoulli function t/(e^t - 1), the exponential fitting weight.
/// Series branch keeps the removable singularity smooth through t = 0.
#[inline]
pub fn bernoulli(t: f64) -> f64 {
    if t.abs() < 1e-5 {
        1.0 - t / 2.0 + t * t / 12.0
    } else if t > 0.0 {
        // t/(e^t - 1) rewritten to stay finite for large positive t.
        let e = (-t).exp();
        t * e / (1.0 - e)
    } else {
        t / (t.exp() - 1.0)
    }
}

/// Electrodiffusive flux across interior faces, exponentially fitted so that
/// discrete Boltzmann states c = exp(-valence*phi)/Z carry exactly zero flux.
/// Oriented along the +axis direction; boundary faces are the caller's
/// responsibility.
pub fn edge_flux(
    c: &ScalarField,
    phi: &ScalarField,
    valence: f64,
    diffusivity: f64,
) -> VectorField {
    let g = c.grid;
    assert_eq!(g, phi.grid, "c and phi must share a grid");
    let (nx, ny) = (g.nx(), g.ny());
    let mut out = VectorField::zero(g);

    let dx = diffusivity / g.h[0];
    for j in 0..ny {
        let row = j * nx;
        for i in 0..nx - 1 {
            let theta = valence * (phi.values[row + i + 1] - phi.values[row + i]);
            out.x[j * (nx - 1) + i] = dx
                * (bernoulli(theta) * c.values[row + i]
                    - bernoulli(-theta) * c.values[row + i + 1]);
        }
    }
    if g.dim == 2 {
        let dy = diffusivity / g.h[1];
        for j in 0..ny - 1 {
            for i in 0..nx {
                let lo = j * nx + i;
                let hi = (j + 1) * nx + i;
                let theta = valence * (phi.values[hi] - phi.values[lo]);
                out.y[j * nx + i] =
                    dy * (bernoulli(theta) * c.values[lo] - bernoulli(-theta) * c.values[hi]);
            }
        }
    }
    out
}

/// Net outflow divergence of interior-face fluxes per cell (boundary faces
/// contribute zero here).
pub fn divergence(flux: &VectorField) -> ScalarField {
    let g = flux.grid;
    let (nx, ny) = (g.nx(), g.ny());
    let mut out = vec![0.0; g.n_cells()];
    for j in 0..ny {
        for i in 0..nx {
            let mut d = 0.0;
            if i + 1 < nx {
                d += flux.x[flux.fx(i, j)] / g.h[0];
            }
            if i > 0 {
                d -= flux.x[flux.fx(i - 1, j)] / g.h[0];
            }
            if g.dim == 2 {
                if j + 1 < ny {
                    d += flux.y[flux.fy(i, j)] / g.h[1];
                }
                if j > 0 {
                    d -= flux.y[flux.fy(i, j - 1)] / g.h[1];
                }
            }
            out[j * nx + i] = d;
        }
    }
    ScalarField { grid: g, values: out }
}
