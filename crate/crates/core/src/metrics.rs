//! Relative errors between variants and iteration rates of active-set runs.

use std::fmt::Write as _;

use crate::error::{Error, Result, ResultExt};
use crate::grid::GridHierarchy;
use crate::medium::PermeabilityField;
use crate::sparse::CsrMatrix;

pub fn norm_squared(m: &CsrMatrix, u: &[f64]) -> f64 {
    m.quadratic_form(u).max(0.0)
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| a - b).collect()
}

/// `(E^L, E^a)` of `u_cem` against `u_fe`, with `m` the plain mass matrix and
/// `a` the stiffness matrix.
pub fn relative_errors(u_fe: &[f64], u_cem: &[f64], a: &CsrMatrix, m: &CsrMatrix) -> Result<(f64, f64)> {
    let d = diff(u_fe, u_cem);
    let (rl, ra) = (norm_squared(m, u_fe), norm_squared(a, u_fe));
    if rl == 0.0 || ra == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(((norm_squared(m, &d) / rl).sqrt(), (norm_squared(a, &d) / ra).sqrt()))
}

/// `‖u‖_a²` by element-wise 2×2 Gauss quadrature of `κ |∇u|²`.
pub fn energy_by_quadrature(g: &GridHierarchy, kappa: &PermeabilityField, u: &[f64]) -> f64 {
    let h = g.h();
    let gp = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    let mut total = 0.0;
    for e in 0..g.n_elements() {
        let [u0, u1, u2, u3] = g.element_nodes(e).map(|n| u[n]);
        let mut s = 0.0;
        for &xi in &gp {
            for &eta in &gp {
                let dx = ((u1 - u0) * (1.0 - eta) + (u2 - u3) * eta) / h;
                let dy = ((u3 - u0) * (1.0 - xi) + (u2 - u1) * xi) / h;
                s += 0.25 * (dx * dx + dy * dy);
            }
        }
        total += kappa.get(e) * s * h * h;
    }
    total
}

/// `T_k = ‖u_k − u_*‖ / ‖u_{k−1} − u_*‖`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Rate {
    Value(f64),
    /// `u_{k−1}` already equals `u_*`.
    Exact,
}

impl Rate {
    pub fn value(self) -> f64 {
        match self {
            Rate::Value(v) => v,
            Rate::Exact => 0.0,
        }
    }
}

/// Rates for `k = 1..k₀` with `u_*` the last iterate.
pub fn iteration_rates(history: &[Vec<f64>], m: &CsrMatrix) -> Vec<Rate> {
    let Some(star) = history.last() else {
        return Vec::new();
    };
    let dist: Vec<f64> = history.iter().map(|u| norm_squared(m, &diff(u, star)).sqrt()).collect();
    dist.windows(2)
        .map(|w| if w[0] == 0.0 { Rate::Exact } else { Rate::Value(w[1] / w[0]) })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorRow {
    pub k: usize,
    pub e_l: Option<f64>,
    pub e_a: Option<f64>,
    pub t_cem_l: Option<Rate>,
    pub t_cem_a: Option<Rate>,
    pub t_fe_l: Option<Rate>,
    pub t_fe_a: Option<Rate>,
}

/// Per-iteration comparison of a fine and a multiscale run. Rows extend to
/// the longer run; cells a run does not reach are empty.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub rows: Vec<ErrorRow>,
}

pub const CSV_HEADER: &str = "k,E_L,E_a,T_cem_L,T_cem_a,T_fe_L,T_fe_a";

/// Scientific notation with six significant digits and a two-digit signed
/// exponent, e.g. `9.28000e-03`.
pub fn sci(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let s = format!("{v:.5e}");
    let (mant, exp) = s.split_once('e').expect("exponent present");
    let e: i32 = exp.parse().expect("integer exponent");
    format!("{mant}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
}

impl ErrorReport {
    pub fn new(fe: &[Vec<f64>], cem: &[Vec<f64>], a: &CsrMatrix, m: &CsrMatrix) -> Result<Self> {
        let n = fe.len().max(cem.len());
        let (cl, ca) = (iteration_rates(cem, m), iteration_rates(cem, a));
        let (fl, fa) = (iteration_rates(fe, m), iteration_rates(fe, a));
        let rate = |r: &[Rate], k: usize| if k == 0 { None } else { r.get(k - 1).copied() };
        let mut rows = Vec::with_capacity(n);
        for k in 0..n {
            let (e_l, e_a) = match (fe.get(k), cem.get(k)) {
                (Some(f), Some(c)) => {
                    let (l, e) = relative_errors(f, c, a, m).context_with(|| format!("errors at iteration {k}"))?;
                    (Some(l), Some(e))
                }
                _ => (None, None),
            };
            rows.push(ErrorRow {
                k,
                e_l,
                e_a,
                t_cem_l: rate(&cl, k),
                t_cem_a: rate(&ca, k),
                t_fe_l: rate(&fl, k),
                t_fe_a: rate(&fa, k),
            });
        }
        Ok(Self { rows })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let num = |v: Option<f64>| v.map(sci).unwrap_or_default();
        let rate = |r: Option<Rate>| num(r.map(Rate::value));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.k,
                num(r.e_l),
                num(r.e_a),
                rate(r.t_cem_l),
                rate(r.t_cem_a),
                rate(r.t_fe_l),
                rate(r.t_fe_a)
            );
        }
        out
    }
}
