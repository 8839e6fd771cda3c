//! CSV tables: header row, comma separated, LF line endings, floats at 17
//! significant digits.

use std::io::Write;

use neumann_core::trace::OptTrace;
use neumann_core::{strichartz_bound, strichartz_holds};

/// Fixed 17-significant-digit rendering used by every float column.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Upper bound on `μ_k` at area `m` implied by `m μ_k ≤ 2πk²`.
pub fn mu_bound(k: usize, m: f64) -> f64 {
    strichartz_bound(k) / m
}

pub fn audit(k: usize, m: f64, mu_k: f64) -> &'static str {
    if strichartz_holds(k, m, mu_k) {
        "pass"
    } else {
        "fail"
    }
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

pub fn write_table<W: Write>(out: W, header: &[&str], rows: &[Vec<String>]) -> csv::Result<()> {
    let mut w = writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub const TRACE_HEADER: [&str; 10] = [
    "restart",
    "stage",
    "epsilon",
    "iteration",
    "objective",
    "eigenvalues",
    "mass",
    "step",
    "cluster_size",
    "accepted",
];

/// One row per trace record; the cluster eigenvalues share a column,
/// separated by spaces.
pub fn write_trace<W: Write>(out: W, trace: &OptTrace) -> csv::Result<()> {
    let rows: Vec<Vec<String>> = trace
        .records
        .iter()
        .map(|r| {
            let eigs: Vec<String> = r.eigenvalues.iter().map(|&e| float(e)).collect();
            vec![
                r.restart.to_string(),
                r.stage.to_string(),
                float(r.epsilon),
                r.iteration.to_string(),
                float(r.objective),
                eigs.join(" "),
                float(r.mass),
                float(r.step),
                r.cluster_size.to_string(),
                r.accepted.to_string(),
            ]
        })
        .collect();
    write_table(out, &TRACE_HEADER, &rows)
}

/// Final result of one optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub k: usize,
    pub mass: f64,
    pub mu_k: f64,
}

impl Summary {
    pub fn bound(&self) -> f64 {
        mu_bound(self.k, self.mass)
    }

    pub fn audit(&self) -> &'static str {
        audit(self.k, self.mass, self.mu_k)
    }

    pub fn line(&self) -> String {
        format!(
            "m={} mu_k={} bound={} strichartz={}",
            self.mass,
            self.mu_k,
            self.bound(),
            self.audit()
        )
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let row = vec![
            self.k.to_string(),
            float(self.mass),
            float(self.mu_k),
            float(self.bound()),
            self.audit().to_string(),
        ];
        write_table(out, &["k", "m", "mu_k", "bound", "strichartz"], &[row])
    }
}
