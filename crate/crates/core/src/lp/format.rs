use std::fmt::Write as _;
use std::io::{self, Write};

use super::{LinearProgram, Relation};

fn term(out: &mut String, first: bool, coef: f64, name: &str) {
    if coef < 0.0 {
        let _ = write!(out, " - {} {}", -coef, name);
    } else if first {
        let _ = write!(out, " {coef} {name}");
    } else {
        let _ = write!(out, " + {coef} {name}");
    }
}

/// Writes `lp` in CPLEX LP text format. `binaries` are listed in a
/// `Binaries` section.
pub fn write_lp_format<W: Write>(lp: &LinearProgram, binaries: &[usize], mut w: W) -> io::Result<()> {
    let names: Vec<String> = (0..lp.num_vars).map(|j| lp.var_name(j)).collect();
    let mut s = String::new();
    s.push_str("\\ written by nvselect\nMinimize\n obj:");
    let mut first = true;
    for (j, &c) in lp.objective.iter().enumerate() {
        if c != 0.0 {
            term(&mut s, first, c, &names[j]);
            first = false;
        }
    }
    if first {
        s.push_str(" 0");
    }
    s.push_str("\nSubject To\n");
    for (i, row) in lp.rows.iter().enumerate() {
        let _ = write!(s, " c{i}:");
        let mut first = true;
        for &(j, a) in &row.coeffs {
            if a != 0.0 {
                term(&mut s, first, a, &names[j]);
                first = false;
            }
        }
        if first {
            s.push_str(" 0 x0");
        }
        let rel = match row.relation {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        };
        let _ = writeln!(s, " {rel} {}", row.rhs);
    }
    s.push_str("Bounds\n");
    for (j, &(lo, hi)) in lp.var_bounds.iter().enumerate() {
        let name = &names[j];
        match (lo.is_finite(), hi.is_finite()) {
            (false, false) => {
                let _ = writeln!(s, " {name} free");
            }
            (true, true) if lo == hi => {
                let _ = writeln!(s, " {name} = {lo}");
            }
            (true, true) => {
                let _ = writeln!(s, " {lo} <= {name} <= {hi}");
            }
            (true, false) if lo == 0.0 => {}
            (true, false) => {
                let _ = writeln!(s, " {name} >= {lo}");
            }
            (false, true) => {
                let _ = writeln!(s, " -inf <= {name} <= {hi}");
            }
        }
    }
    if !binaries.is_empty() {
        s.push_str("Binaries\n");
        for &j in binaries {
            let _ = writeln!(s, " {}", names[j]);
        }
    }
    s.push_str("End\n");
    w.write_all(s.as_bytes())
}
