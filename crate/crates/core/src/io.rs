//! Locale-free CSV helpers shared by the report writers.

use std::io::Write;

use crate::error::Result;

/// 17 significant digits, scientific notation, `.` separator.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a CSV table; `provenance` becomes a leading `# ...` comment line.
pub fn write_csv<W: Write>(
    mut w: W,
    provenance: Option<&str>,
    header: &[&str],
    rows: &[Vec<f64>],
) -> Result<()> {
    if let Some(p) = provenance {
        writeln!(w, "# {p}")?;
    }
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Two-column `x,y` CSV for plotting a single curve.
pub fn write_curve<W: Write>(w: W, provenance: Option<&str>, xs: &[f64], ys: &[f64]) -> Result<()> {
    let rows: Vec<Vec<f64>> = xs.iter().zip(ys).map(|(x, y)| vec![*x, *y]).collect();
    write_csv(w, provenance, &["x", "y"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_exactly() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 1.9375, 6.02214076e23] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(1.9375), "1.9375000000000000e0");
    }

    #[test]
    fn table_layout() {
        let mut out = Vec::new();
        write_csv(&mut out, Some("h"), &["a", "b"], &[vec![1.0, 2.0]]).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "# h\na,b\n1.0000000000000000e0,2.0000000000000000e0\n"
        );
    }
}
