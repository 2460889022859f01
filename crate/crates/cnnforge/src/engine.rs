//! Transient dynamics of a 2D grid of locally coupled nonlinear cells.
//!
//! Each cell `(i, j)` carries a state `x`, a constant input `u`, and an
//! output `y` obtained from the state through a piecewise-linear saturation.
//! The state evolves as
//!
//! ```text
//! C dx/dt = -x/R_x + sum A*y + sum B*u + sum Cst*x + sum D*phi(y_n - y) + I
//! ```
//!
//! where the sums run over the 3x3 neighborhood and `A`, `B`, `Cst`, `D` are
//! space-invariant cloning templates. Useful output is sampled mid-transient,
//! not at equilibrium.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("non-finite activation")]
    NonFiniteActivation,
    #[error("index out of grid: ({row}, {col})")]
    IndexOutOfGrid { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    DimensionMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("template '{name}' is invalid: {reason}")]
    InvalidTemplate { name: String, reason: String },
    #[error("divergent dynamics at t={time}")]
    DivergentDynamics { time: f64 },
    #[error("bound undefined for extended templates")]
    BoundUndefined,
    #[error("3x3 templates require neighborhood radius 1, grid has radius {0}")]
    RadiusUnsupported(usize),
}

/// How out-of-grid neighbors are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Virtual cells with `x = y = u = 0`.
    Zero,
    /// Virtual cells mirror the nearest edge cell (clamped indexing).
    Replicate,
}

/// Grid geometry: dimensions, neighborhood radius, and boundary handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub radius: usize,
    pub boundary: Boundary,
}

impl GridSpec {
    /// Grid with radius 1 (3x3 neighborhoods) and zero boundary.
    pub fn new(rows: usize, cols: usize) -> Result<Self, EngineError> {
        Self::with_boundary(rows, cols, Boundary::Zero)
    }

    pub fn with_boundary(
        rows: usize,
        cols: usize,
        boundary: Boundary,
    ) -> Result<Self, EngineError> {
        if rows == 0 || cols == 0 {
            return Err(EngineError::InvalidGrid(format!(
                "grid must be at least 1x1, got {rows}x{cols}"
            )));
        }
        Ok(GridSpec {
            rows,
            cols,
            radius: 1,
            boundary,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }
}

/// An `M x N` real-valued grid of cell activations, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl CellField {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CellField {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn constant(rows: usize, cols: usize, value: f64) -> Self {
        CellField {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    /// Builds a field from row-major values; rejects wrong counts and
    /// non-finite entries.
    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, EngineError> {
        if values.len() != rows * cols {
            return Err(EngineError::InvalidGrid(format!(
                "expected {} values for a {rows}x{cols} field, got {}",
                rows * cols,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(EngineError::NonFiniteActivation);
        }
        Ok(CellField { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> Result<f64, EngineError> {
        if row >= self.rows || col >= self.cols {
            return Err(EngineError::IndexOutOfGrid { row, col });
        }
        Ok(self.values[row * self.cols + col])
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) -> Result<(), EngineError> {
        if row >= self.rows || col >= self.cols {
            return Err(EngineError::IndexOutOfGrid { row, col });
        }
        self.values[row * self.cols + col] = value;
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest absolute difference against another field of the same shape.
    pub fn max_abs_diff(&self, other: &CellField) -> Result<f64, EngineError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(EngineError::DimensionMismatch {
                expected_rows: self.rows,
                expected_cols: self.cols,
                rows: other.rows,
                cols: other.cols,
            });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }

    fn same_shape(&self, rows: usize, cols: usize) -> Result<(), EngineError> {
        if self.rows != rows || self.cols != cols {
            return Err(EngineError::DimensionMismatch {
                expected_rows: rows,
                expected_cols: cols,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(())
    }
}

/// Nonlinearity applied to the output difference `y_neighbor - y_cell`
/// inside the extended template term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffNonlinearity {
    /// `phi(z) = z`
    Identity,
    /// `phi(z) = 0.5 (|z + 1| - |z - 1|)`
    PwlDiff,
    /// `phi(z) = z^3`
    CubicDiff,
}

impl DiffNonlinearity {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            DiffNonlinearity::Identity => z,
            DiffNonlinearity::PwlDiff => pwl(z),
            DiffNonlinearity::CubicDiff => z * z * z,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DiffNonlinearity::Identity => "identity",
            DiffNonlinearity::PwlDiff => "pwl_diff",
            DiffNonlinearity::CubicDiff => "cubic_diff",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(DiffNonlinearity::Identity),
            "pwl_diff" => Some(DiffNonlinearity::PwlDiff),
            "cubic_diff" => Some(DiffNonlinearity::CubicDiff),
            _ => None,
        }
    }
}

/// One generative model: the four 3x3 cloning templates, the difference
/// nonlinearity selector, the bias, and the transient horizon.
///
/// Stencils are row-major: entry `(dr + 1) * 3 + (dc + 1)` weights the
/// neighbor at offset `(dr, dc)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub name: String,
    /// Feedback template `A`, applied to neighbor outputs `y`.
    pub feedback: [f64; 9],
    /// Input template `B`, applied to neighbor inputs `u`.
    pub input: [f64; 9],
    /// State template `Cst`, applied to neighbor states `x`.
    pub state: [f64; 9],
    /// Extended nonlinear template `D`, applied to `phi(y_neighbor - y_cell)`.
    pub nonlinear: [f64; 9],
    pub d_nl: DiffNonlinearity,
    /// Bias `I`.
    pub bias: f64,
    /// Transient horizon for this model.
    pub t_final: f64,
}

impl TemplateSet {
    /// All-zero templates and bias; useful as a starting point.
    pub fn zeroed(name: impl Into<String>) -> Self {
        TemplateSet {
            name: name.into(),
            feedback: [0.0; 9],
            input: [0.0; 9],
            state: [0.0; 9],
            nonlinear: [0.0; 9],
            d_nl: DiffNonlinearity::Identity,
            bias: 0.0,
            t_final: 2.5,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let finite = self.feedback.iter().all(|v| v.is_finite())
            && self.input.iter().all(|v| v.is_finite())
            && self.state.iter().all(|v| v.is_finite())
            && self.nonlinear.iter().all(|v| v.is_finite())
            && self.bias.is_finite();
        if !finite {
            return Err(EngineError::InvalidTemplate {
                name: self.name.clone(),
                reason: "non-finite entry".into(),
            });
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(EngineError::InvalidTemplate {
                name: self.name.clone(),
                reason: format!("t_final must be positive, got {}", self.t_final),
            });
        }
        Ok(())
    }

    pub fn has_state_term(&self) -> bool {
        self.state.iter().any(|v| *v != 0.0)
    }

    pub fn has_nonlinear_term(&self) -> bool {
        self.nonlinear.iter().any(|v| *v != 0.0)
    }
}

/// Integration method for the cell ODEs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Euler,
    Rk4,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Euler => "euler",
            Method::Rk4 => "rk4",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "euler" => Some(Method::Euler),
            "rk4" => Some(Method::Rk4),
            _ => None,
        }
    }
}

/// Time stepping and circuit constants for a transient run.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationConfig {
    pub dt: f64,
    pub method: Method,
    /// Cell capacitance `C`.
    pub capacitance: f64,
    /// Leak coefficient `R_x`.
    pub r_x: f64,
    /// Times at which outputs are recorded; empty means "at the horizon only".
    pub checkpoint_times: Vec<f64>,
    /// States with magnitude above this abort the run as divergent.
    pub blowup_guard: f64,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig {
            dt: 0.05,
            method: Method::Rk4,
            capacitance: 1.0,
            r_x: 1.0,
            checkpoint_times: Vec::new(),
            blowup_guard: 1e6,
        }
    }
}

impl IntegrationConfig {
    fn validate(&self, t_final: f64) -> Result<(), EngineError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(EngineError::InvalidConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.dt > t_final {
            return Err(EngineError::InvalidConfig(format!(
                "dt {} exceeds horizon {t_final}",
                self.dt
            )));
        }
        if !(self.capacitance.is_finite() && self.capacitance > 0.0) {
            return Err(EngineError::InvalidConfig("capacitance must be positive".into()));
        }
        if !(self.r_x.is_finite() && self.r_x > 0.0) {
            return Err(EngineError::InvalidConfig("r_x must be positive".into()));
        }
        if !(self.blowup_guard.is_finite() && self.blowup_guard > 0.0) {
            return Err(EngineError::InvalidConfig("blowup_guard must be positive".into()));
        }
        let mut prev = 0.0;
        for &c in &self.checkpoint_times {
            if !(c.is_finite() && c > prev) {
                return Err(EngineError::InvalidConfig(format!(
                    "checkpoint times must be strictly increasing and positive, got {c} after {prev}"
                )));
            }
            prev = c;
        }
        if prev > t_final + 1e-12 {
            return Err(EngineError::InvalidConfig(format!(
                "checkpoint {prev} exceeds horizon {t_final}"
            )));
        }
        Ok(())
    }

    /// Checkpoints actually used for a given horizon.
    pub fn resolve_checkpoints(&self, t_final: f64) -> Vec<f64> {
        if self.checkpoint_times.is_empty() {
            vec![t_final]
        } else {
            self.checkpoint_times.clone()
        }
    }
}

/// Outputs recorded along a transient plus the state at the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TransientResult {
    /// One `(time, output field)` entry per requested checkpoint.
    pub outputs: Vec<(f64, CellField)>,
    /// State `x` at the horizon.
    pub final_state: CellField,
}

#[inline]
fn pwl(x: f64) -> f64 {
    0.5 * ((x + 1.0).abs() - (x - 1.0).abs())
}

/// Piecewise-linear cell output: `0.5 (|x + 1| - |x - 1|)`.
///
/// Linear for `|x| <= 1`, saturates at `sign(x)` beyond.
pub fn pwl_output(x: f64) -> Result<f64, EngineError> {
    if !x.is_finite() {
        return Err(EngineError::NonFiniteActivation);
    }
    Ok(pwl(x))
}

/// One logical neighborhood position: the offset from the center cell and
/// the resolved source cell (`None` for a virtual zero-valued cell).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub row_offset: isize,
    pub col_offset: isize,
    pub source: Option<(usize, usize)>,
}

/// The `(2r+1)^2` logical neighborhood positions of cell `(i, j)` under the
/// Chebyshev metric, with out-of-grid positions resolved per the boundary
/// mode.
pub fn neighborhood_offsets(
    spec: &GridSpec,
    row: usize,
    col: usize,
) -> Result<Vec<Neighbor>, EngineError> {
    if row >= spec.rows || col >= spec.cols {
        return Err(EngineError::IndexOutOfGrid { row, col });
    }
    let r = spec.radius as isize;
    let mut out = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    for dr in -r..=r {
        for dc in -r..=r {
            let ni = row as isize + dr;
            let nj = col as isize + dc;
            let in_grid =
                ni >= 0 && nj >= 0 && (ni as usize) < spec.rows && (nj as usize) < spec.cols;
            let source = if in_grid {
                Some((ni as usize, nj as usize))
            } else {
                match spec.boundary {
                    Boundary::Zero => None,
                    Boundary::Replicate => Some((
                        ni.clamp(0, spec.rows as isize - 1) as usize,
                        nj.clamp(0, spec.cols as isize - 1) as usize,
                    )),
                }
            };
            out.push(Neighbor {
                row_offset: dr,
                col_offset: dc,
                source,
            });
        }
    }
    Ok(out)
}

fn validate_run_inputs(
    spec: &GridSpec,
    x: &CellField,
    u: &CellField,
    tpl: &TemplateSet,
    cfg: &IntegrationConfig,
) -> Result<(), EngineError> {
    if spec.radius != 1 {
        return Err(EngineError::RadiusUnsupported(spec.radius));
    }
    x.same_shape(spec.rows, spec.cols)?;
    u.same_shape(spec.rows, spec.cols)?;
    tpl.validate()?;
    cfg.validate(tpl.t_final)?;
    Ok(())
}

/// Precomputed per-cell constants: the input-template sum plus the bias.
/// Both are constant over a transient because `u` does not change.
fn input_drive(spec: &GridSpec, u: &[f64], tpl: &TemplateSet) -> Vec<f64> {
    let (rows, cols) = (spec.rows, spec.cols);
    let mut drive = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = tpl.bias;
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let w = tpl.input[((dr + 1) * 3 + (dc + 1)) as usize];
                    if w == 0.0 {
                        continue;
                    }
                    let ni = i as isize + dr;
                    let nj = j as isize + dc;
                    let un = resolve(spec, u, ni, nj);
                    acc += w * un;
                }
            }
            drive[i * cols + j] = acc;
        }
    }
    drive
}

#[inline]
fn resolve(spec: &GridSpec, field: &[f64], ni: isize, nj: isize) -> f64 {
    if ni >= 0 && nj >= 0 && (ni as usize) < spec.rows && (nj as usize) < spec.cols {
        field[ni as usize * spec.cols + nj as usize]
    } else {
        match spec.boundary {
            Boundary::Zero => 0.0,
            Boundary::Replicate => {
                let ci = ni.clamp(0, spec.rows as isize - 1) as usize;
                let cj = nj.clamp(0, spec.cols as isize - 1) as usize;
                field[ci * spec.cols + cj]
            }
        }
    }
}

/// Core stencil sweep: writes `dx/dt` into `out` given state `x`, its
/// outputs `y`, and the precomputed input drive.
///
/// Interior cells take an unrolled fast path; border cells resolve each
/// neighbor through the boundary mode. Note that under a zero boundary a
/// virtual neighbor still contributes `d * phi(0 - y_cell)` to the
/// nonlinear term.
fn derivative_sweep(
    spec: &GridSpec,
    x: &[f64],
    y: &[f64],
    drive: &[f64],
    tpl: &TemplateSet,
    inv_c: f64,
    inv_rx: f64,
    out: &mut [f64],
) {
    let (rows, cols) = (spec.rows, spec.cols);
    let a = &tpl.feedback;
    let c = &tpl.state;
    let d = &tpl.nonlinear;
    let use_state = tpl.has_state_term();
    let use_nonlinear = tpl.has_nonlinear_term();
    let d_nl = tpl.d_nl;

    for i in 0..rows {
        let interior_row = i > 0 && i + 1 < rows;
        for j in 0..cols {
            let idx = i * cols + j;
            let mut acc = drive[idx] - x[idx] * inv_rx;
            if interior_row && j > 0 && j + 1 < cols {
                let up = idx - cols;
                let dn = idx + cols;
                acc += a[0] * y[up - 1]
                    + a[1] * y[up]
                    + a[2] * y[up + 1]
                    + a[3] * y[idx - 1]
                    + a[4] * y[idx]
                    + a[5] * y[idx + 1]
                    + a[6] * y[dn - 1]
                    + a[7] * y[dn]
                    + a[8] * y[dn + 1];
                if use_state {
                    acc += c[0] * x[up - 1]
                        + c[1] * x[up]
                        + c[2] * x[up + 1]
                        + c[3] * x[idx - 1]
                        + c[4] * x[idx]
                        + c[5] * x[idx + 1]
                        + c[6] * x[dn - 1]
                        + c[7] * x[dn]
                        + c[8] * x[dn + 1];
                }
                if use_nonlinear {
                    let yc = y[idx];
                    acc += d[0] * d_nl.apply(y[up - 1] - yc)
                        + d[1] * d_nl.apply(y[up] - yc)
                        + d[2] * d_nl.apply(y[up + 1] - yc)
                        + d[3] * d_nl.apply(y[idx - 1] - yc)
                        + d[4] * d_nl.apply(0.0)
                        + d[5] * d_nl.apply(y[idx + 1] - yc)
                        + d[6] * d_nl.apply(y[dn - 1] - yc)
                        + d[7] * d_nl.apply(y[dn] - yc)
                        + d[8] * d_nl.apply(y[dn + 1] - yc);
                }
            } else {
                let yc = y[idx];
                for dr in -1isize..=1 {
                    for dc in -1isize..=1 {
                        let t = ((dr + 1) * 3 + (dc + 1)) as usize;
                        let ni = i as isize + dr;
                        let nj = j as isize + dc;
                        let yn = resolve(spec, y, ni, nj);
                        acc += a[t] * yn;
                        if use_state {
                            acc += c[t] * resolve(spec, x, ni, nj);
                        }
                        if use_nonlinear {
                            acc += d[t] * d_nl.apply(yn - yc);
                        }
                    }
                }
            }
            out[idx] = acc * inv_c;
        }
    }
}

/// Instantaneous `dx/dt` for every cell under template `tpl`.
pub fn cell_derivative(
    spec: &GridSpec,
    x: &CellField,
    u: &CellField,
    tpl: &TemplateSet,
    cfg: &IntegrationConfig,
) -> Result<CellField, EngineError> {
    if spec.radius != 1 {
        return Err(EngineError::RadiusUnsupported(spec.radius));
    }
    x.same_shape(spec.rows, spec.cols)?;
    u.same_shape(spec.rows, spec.cols)?;
    tpl.validate()?;
    let inv_c = 1.0 / cfg.capacitance;
    let inv_rx = 1.0 / cfg.r_x;
    let drive = input_drive(spec, u.values(), tpl);
    let y: Vec<f64> = x.values().iter().map(|&v| pwl(v)).collect();
    let mut out = vec![0.0; spec.cell_count()];
    derivative_sweep(spec, x.values(), &y, &drive, tpl, inv_c, inv_rx, &mut out);
    if !out.iter().all(|v| v.is_finite()) {
        return Err(EngineError::DivergentDynamics { time: 0.0 });
    }
    CellField::from_values(spec.rows, spec.cols, out)
}

struct Stepper<'a> {
    spec: &'a GridSpec,
    tpl: &'a TemplateSet,
    drive: Vec<f64>,
    inv_c: f64,
    inv_rx: f64,
    y: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    xt: Vec<f64>,
}

/// Fills `y` with `pwl(state)` and `out` with the derivative field.
#[allow(clippy::too_many_arguments)]
fn eval_derivative(
    spec: &GridSpec,
    tpl: &TemplateSet,
    drive: &[f64],
    inv_c: f64,
    inv_rx: f64,
    state: &[f64],
    y: &mut [f64],
    out: &mut [f64],
) {
    for (yv, xv) in y.iter_mut().zip(state) {
        *yv = pwl(*xv);
    }
    derivative_sweep(spec, state, y, drive, tpl, inv_c, inv_rx, out);
}

impl<'a> Stepper<'a> {
    fn new(spec: &'a GridSpec, u: &[f64], tpl: &'a TemplateSet, cfg: &IntegrationConfig) -> Self {
        let n = spec.cell_count();
        Stepper {
            spec,
            tpl,
            drive: input_drive(spec, u, tpl),
            inv_c: 1.0 / cfg.capacitance,
            inv_rx: 1.0 / cfg.r_x,
            y: vec![0.0; n],
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            xt: vec![0.0; n],
        }
    }

    fn step_euler(&mut self, x: &mut [f64], h: f64) {
        eval_derivative(
            self.spec, self.tpl, &self.drive, self.inv_c, self.inv_rx, x, &mut self.y,
            &mut self.k1,
        );
        for (xv, k) in x.iter_mut().zip(&self.k1) {
            *xv += h * k;
        }
    }

    fn step_rk4(&mut self, x: &mut [f64], h: f64) {
        let half = 0.5 * h;
        let n = x.len();
        eval_derivative(
            self.spec, self.tpl, &self.drive, self.inv_c, self.inv_rx, x, &mut self.y,
            &mut self.k1,
        );
        for i in 0..n {
            self.xt[i] = x[i] + half * self.k1[i];
        }
        eval_derivative(
            self.spec, self.tpl, &self.drive, self.inv_c, self.inv_rx, &self.xt, &mut self.y,
            &mut self.k2,
        );
        for i in 0..n {
            self.xt[i] = x[i] + half * self.k2[i];
        }
        eval_derivative(
            self.spec, self.tpl, &self.drive, self.inv_c, self.inv_rx, &self.xt, &mut self.y,
            &mut self.k3,
        );
        for i in 0..n {
            self.xt[i] = x[i] + h * self.k3[i];
        }
        eval_derivative(
            self.spec, self.tpl, &self.drive, self.inv_c, self.inv_rx, &self.xt, &mut self.y,
            &mut self.k4,
        );
        let sixth = h / 6.0;
        for i in 0..n {
            x[i] += sixth * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }

    fn step(&mut self, method: Method, x: &mut [f64], h: f64) {
        match method {
            Method::Euler => self.step_euler(x, h),
            Method::Rk4 => self.step_rk4(x, h),
        }
    }
}

/// Number of full `dt` steps and the remainder needed to advance from
/// `from` to `to`. Remainders below `1e-9 * dt` are dropped as roundoff.
///
/// This schedule is part of the integration contract: checkpoints are hit
/// by shortening the last step of each segment.
pub fn segment_steps(from: f64, to: f64, dt: f64) -> (u64, f64) {
    let span = to - from;
    if span <= 0.0 {
        return (0, 0.0);
    }
    let n = (span / dt).floor();
    let n_full = if n < 0.0 { 0 } else { n as u64 };
    let rem = span - n_full as f64 * dt;
    if rem < 1e-9 * dt {
        (n_full, 0.0)
    } else {
        (n_full, rem)
    }
}

/// Integrates the cell dynamics from `t = 0` to the template's horizon,
/// recording the output field at every checkpoint.
///
/// `x0` defaults to `u` when absent: the same field drives both the input
/// and the initial state.
pub fn run_transient(
    spec: &GridSpec,
    u: &CellField,
    x0: Option<&CellField>,
    tpl: &TemplateSet,
    cfg: &IntegrationConfig,
) -> Result<TransientResult, EngineError> {
    let x_init = x0.unwrap_or(u);
    validate_run_inputs(spec, x_init, u, tpl, cfg)?;
    let checkpoints = cfg.resolve_checkpoints(tpl.t_final);

    let mut x = x_init.values().to_vec();
    let mut stepper = Stepper::new(spec, u.values(), tpl, cfg);
    let mut outputs = Vec::with_capacity(checkpoints.len());
    let mut t_prev = 0.0;

    check_guard(&x, 0.0, cfg.blowup_guard)?;

    let mut marks: Vec<f64> = checkpoints.clone();
    if *marks.last().unwrap() < tpl.t_final - 1e-12 {
        marks.push(tpl.t_final);
    }
    for &mark in &marks {
        let (n_full, rem) = segment_steps(t_prev, mark, cfg.dt);
        for s in 0..n_full {
            stepper.step(cfg.method, &mut x, cfg.dt);
            check_guard(&x, t_prev + (s + 1) as f64 * cfg.dt, cfg.blowup_guard)?;
        }
        if rem > 0.0 {
            stepper.step(cfg.method, &mut x, rem);
            check_guard(&x, mark, cfg.blowup_guard)?;
        }
        t_prev = mark;
        if checkpoints.contains(&mark) {
            let y_field: Vec<f64> = x.iter().map(|&v| pwl(v)).collect();
            outputs.push((mark, CellField::from_values(spec.rows, spec.cols, y_field)?));
        }
    }

    let final_state = CellField::from_values(spec.rows, spec.cols, x)?;
    Ok(TransientResult {
        outputs,
        final_state,
    })
}

fn check_guard(x: &[f64], time: f64, guard: f64) -> Result<(), EngineError> {
    for &v in x {
        if !v.is_finite() || v.abs() > guard {
            return Err(EngineError::DivergentDynamics { time });
        }
    }
    Ok(())
}

/// Worst-case steady-state magnitude for the classic template class
/// (`Cst = D = 0`): `1 + R_x (sum|A| + sum|B| + |I|)`.
///
/// States initialized within the bound and driven by `|u| <= 1` never
/// leave it.
pub fn steady_state_bound(tpl: &TemplateSet, cfg: &IntegrationConfig) -> Result<f64, EngineError> {
    if tpl.has_state_term() || tpl.has_nonlinear_term() {
        return Err(EngineError::BoundUndefined);
    }
    tpl.validate()?;
    let sum_a: f64 = tpl.feedback.iter().map(|v| v.abs()).sum();
    let sum_b: f64 = tpl.input.iter().map(|v| v.abs()).sum();
    Ok(1.0 + cfg.r_x * (sum_a + sum_b + tpl.bias.abs()))
}
