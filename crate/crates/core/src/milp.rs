//! Linear and mixed-integer models of the storage problem, written as LP or
//! MPS text for external solvers.
//!
//! Variables are ordered `x_1..x_m, y_1..y_m, zeta_1..zeta_m, V_1..V_m`. In
//! the integer model the purchase variables count blocks of `h_x`, so the
//! physical purchase is `h_x * x_t`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Instance, Solution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    /// `f64::INFINITY` when unbounded.
    pub upper: f64,
    pub integer: bool,
    /// Physical value per model unit.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub name: String,
    /// `(variable index, coefficient)` pairs.
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelDocument {
    pub name: String,
    pub variables: Vec<Variable>,
    /// Minimized.
    pub objective: Vec<(usize, f64)>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFormat {
    Lp,
    Mps,
}

impl ModelFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ModelFormat::Lp => "lp",
            ModelFormat::Mps => "mps",
        }
    }
}

impl FromStr for ModelFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lp" | "lp-text" => Ok(ModelFormat::Lp),
            "mps" | "mps-text" => Ok(ModelFormat::Mps),
            other => Err(Error::invalid(format!(
                "unknown model format `{other}` (expected lp or mps)"
            ))),
        }
    }
}

/// Builds the full model. `relaxed` drops integrality of the purchases.
pub fn build_model(inst: &Instance, relaxed: bool) -> Result<ModelDocument> {
    let retention = inst.spec().loss.retention().ok_or(Error::Unsupported(
        "linear dynamics rows require a linear loss function",
    ))?;
    let spec = inst.spec();
    let m = inst.horizon();
    let h_x = inst.disc().h_x;
    let (x_scale, integer) = if relaxed { (1.0, false) } else { (h_x, true) };
    let (ix, iy, iz, iv) = (0, m, 2 * m, 3 * m);

    let mut variables = Vec::with_capacity(4 * m);
    for t in 1..=m {
        variables.push(Variable {
            name: format!("x{t}"),
            lower: spec.buy_min / x_scale,
            upper: spec.buy_max / x_scale,
            integer,
            scale: x_scale,
        });
    }
    for t in 1..=m {
        variables.push(Variable {
            name: format!("y{t}"),
            lower: 0.0,
            upper: spec.charge_max,
            integer: false,
            scale: 1.0,
        });
    }
    for t in 1..=m {
        variables.push(Variable {
            name: format!("zeta{t}"),
            lower: 0.0,
            upper: f64::INFINITY,
            integer: false,
            scale: 1.0,
        });
    }
    for t in 1..=m {
        variables.push(Variable {
            name: format!("v{t}"),
            lower: spec.cap_min,
            upper: spec.cap_max,
            integer: false,
            scale: 1.0,
        });
    }

    let objective = inst
        .prices()
        .iter()
        .enumerate()
        .map(|(t, &p)| (ix + t, p * x_scale))
        .collect();

    let mut rows = Vec::with_capacity(3 * m + 1);
    for t in 0..m {
        // V_t - (1 - beta) V_{t-1} - eta_in y_t + zeta_t / eta_out = 0
        let mut coeffs = vec![(iv + t, 1.0)];
        let mut rhs = 0.0;
        if t == 0 {
            rhs = retention * inst.v_init();
        } else {
            coeffs.push((iv + t - 1, -retention));
        }
        coeffs.push((iy + t, -spec.eta_in));
        coeffs.push((iz + t, 1.0 / spec.eta_out));
        rows.push(Row {
            name: format!("dyn{}", t + 1),
            coeffs,
            sense: Sense::Eq,
            rhs,
        });
    }
    for t in 0..m {
        rows.push(Row {
            name: format!("bal{}", t + 1),
            coeffs: vec![(ix + t, x_scale), (iy + t, -1.0), (iz + t, 1.0)],
            sense: Sense::Eq,
            rhs: inst.consumption()[t],
        });
    }
    for t in 0..m {
        rows.push(Row {
            name: format!("ylim{}", t + 1),
            coeffs: vec![(iy + t, 1.0), (ix + t, -x_scale)],
            sense: Sense::Le,
            rhs: 0.0,
        });
    }
    rows.push(Row {
        name: "final".into(),
        coeffs: vec![(iv + m - 1, 1.0)],
        sense: Sense::Ge,
        rhs: inst.v_final(),
    });

    let kind = if relaxed { "lp" } else { "milp" };
    Ok(ModelDocument {
        name: format!("storage_{kind}_m{m}"),
        variables,
        objective,
        rows,
    })
}

/// Worst violations of a numeric assignment.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Residuals {
    pub rows: f64,
    pub bounds: f64,
    pub integrality: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.rows.max(self.bounds).max(self.integrality)
    }
}

impl ModelDocument {
    /// Model-space assignment for physical trajectories (purchases divided
    /// by the variable scale).
    pub fn assignment(
        &self,
        x: &[f64],
        y: &[f64],
        zeta: &[f64],
        levels: &[f64],
    ) -> Result<Vec<f64>> {
        let m = self.variables.len() / 4;
        if [x.len(), y.len(), zeta.len(), levels.len()]
            .iter()
            .any(|&l| l != m)
        {
            return Err(Error::invalid(format!("trajectories must have {m} steps")));
        }
        let mut values = Vec::with_capacity(4 * m);
        values.extend(
            x.iter()
                .zip(&self.variables[..m])
                .map(|(v, var)| v / var.scale),
        );
        values.extend_from_slice(y);
        values.extend_from_slice(zeta);
        values.extend_from_slice(levels);
        Ok(values)
    }

    /// Assignment from a solution's purchases with the given (typically
    /// exactly simulated) fill levels.
    pub fn assignment_for(&self, sol: &Solution, levels: &[f64]) -> Result<Vec<f64>> {
        self.assignment(&sol.x, &sol.y, &sol.zeta, levels)
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().map(|&(i, c)| c * values[i]).sum()
    }

    pub fn residuals(&self, values: &[f64]) -> Residuals {
        let mut r = Residuals::default();
        for row in &self.rows {
            let lhs: f64 = row.coeffs.iter().map(|&(i, c)| c * values[i]).sum();
            let viol = match row.sense {
                Sense::Eq => (lhs - row.rhs).abs(),
                Sense::Le => (lhs - row.rhs).max(0.0),
                Sense::Ge => (row.rhs - lhs).max(0.0),
            };
            r.rows = r.rows.max(viol);
        }
        for (var, &v) in self.variables.iter().zip(values) {
            r.bounds = r.bounds.max(var.lower - v).max(v - var.upper);
            if var.integer {
                r.integrality = r.integrality.max((v - v.round()).abs());
            }
        }
        r
    }

    pub fn to_lp(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "\\ {}", self.name);
        if let Some(v) = self.variables.iter().find(|v| v.integer) {
            let _ = writeln!(
                out,
                "\\ purchase variables count blocks of {} kWh",
                num(v.scale)
            );
        }
        out.push_str("Minimize\n");
        write_lp_expr(&mut out, " obj:", &self.objective, &self.variables);
        out.push_str("Subject To\n");
        for row in &self.rows {
            let op = match row.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let label = format!(" {}:", row.name);
            let mut line = String::new();
            write_lp_expr(&mut line, &label, &row.coeffs, &self.variables);
            line.pop();
            let _ = writeln!(out, "{line} {op} {}", num(row.rhs));
        }
        out.push_str("Bounds\n");
        for v in &self.variables {
            if v.upper.is_infinite() {
                let _ = writeln!(out, " {} >= {}", v.name, num(v.lower));
            } else {
                let _ = writeln!(out, " {} <= {} <= {}", num(v.lower), v.name, num(v.upper));
            }
        }
        let ints: Vec<&str> = self
            .variables
            .iter()
            .filter(|v| v.integer)
            .map(|v| v.name.as_str())
            .collect();
        if !ints.is_empty() {
            out.push_str("General\n");
            for chunk in ints.chunks(10) {
                let _ = writeln!(out, " {}", chunk.join(" "));
            }
        }
        out.push_str("End\n");
        out
    }

    /// Free-format MPS with integer markers around integral columns.
    pub fn to_mps(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "NAME          {}", self.name);
        out.push_str("ROWS\n N  obj\n");
        for row in &self.rows {
            let tag = match row.sense {
                Sense::Le => "L",
                Sense::Ge => "G",
                Sense::Eq => "E",
            };
            let _ = writeln!(out, " {tag}  {}", row.name);
        }

        let mut columns: Vec<Vec<(&str, f64)>> = vec![Vec::new(); self.variables.len()];
        for &(i, c) in &self.objective {
            columns[i].push(("obj", c));
        }
        for row in &self.rows {
            for &(i, c) in &row.coeffs {
                columns[i].push((row.name.as_str(), c));
            }
        }
        out.push_str("COLUMNS\n");
        let mut in_int = false;
        let mut markers = 0;
        for (var, entries) in self.variables.iter().zip(&columns) {
            if var.integer != in_int {
                let kind = if var.integer { "INTORG" } else { "INTEND" };
                let _ = writeln!(out, "    MARKER{markers:<6} 'MARKER'  '{kind}'");
                markers += 1;
                in_int = var.integer;
            }
            for (row, c) in entries {
                let _ = writeln!(out, "    {:<10} {:<10} {}", var.name, row, num(*c));
            }
        }
        if in_int {
            let _ = writeln!(out, "    MARKER{markers:<6} 'MARKER'  'INTEND'");
        }
        out.push_str("RHS\n");
        for row in self.rows.iter().filter(|r| r.rhs != 0.0) {
            let _ = writeln!(out, "    RHS        {:<10} {}", row.name, num(row.rhs));
        }
        out.push_str("BOUNDS\n");
        for v in &self.variables {
            if v.upper.is_finite() && v.lower == v.upper {
                let _ = writeln!(out, " FX BND        {:<10} {}", v.name, num(v.lower));
                continue;
            }
            // Integer columns get explicit bounds: some readers default them to [0, 1].
            if v.lower != 0.0 || v.integer {
                let _ = writeln!(out, " LO BND        {:<10} {}", v.name, num(v.lower));
            }
            if v.upper.is_finite() {
                let _ = writeln!(out, " UP BND        {:<10} {}", v.name, num(v.upper));
            } else if v.integer {
                let _ = writeln!(out, " PL BND        {}", v.name);
            }
        }
        out.push_str("ENDATA\n");
        out
    }
}

fn write_lp_expr(out: &mut String, label: &str, terms: &[(usize, f64)], vars: &[Variable]) {
    out.push_str(label);
    let mut col = label.len();
    for (n, &(i, c)) in terms.iter().enumerate() {
        let sign = if c < 0.0 { "-" } else { "+" };
        let term = if n == 0 && c >= 0.0 {
            format!(" {} {}", num(c.abs()), vars[i].name)
        } else {
            format!(" {sign} {} {}", num(c.abs()), vars[i].name)
        };
        if col + term.len() > 200 {
            out.push_str("\n   ");
            col = 3;
        }
        col += term.len();
        out.push_str(&term);
    }
    if terms.is_empty() {
        out.push_str(" 0");
    }
    out.push('\n');
}

/// At most 12 significant digits, shortest form.
pub fn num(v: f64) -> String {
    let rounded: f64 = format!("{v:.11e}").parse().unwrap_or(v);
    let s = format!("{rounded}");
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

/// Writes the model; the caller picks the path (conventionally `<instance-id>.<lp|mps>`).
pub fn write_model_file(doc: &ModelDocument, path: &Path, format: ModelFormat) -> Result<()> {
    let text = match format {
        ModelFormat::Lp => doc.to_lp(),
        ModelFormat::Mps => doc.to_mps(),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
