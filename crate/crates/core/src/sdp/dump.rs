use std::io::Write;
use std::path::Path;

use super::SdpProblem;
use crate::error::Result;

/// Writes the problem data as plain text triplets for inspection or for
/// feeding to an external solver.
///
/// The first line is `blocks` followed by the block sizes. Every following
/// line is `<kind> <index> <block> <row> <col> <value>` where `kind` is `obj`,
/// `eq` or `le`, and only the lower triangle of each coefficient is listed.
/// Right-hand sides appear as `rhs <kind> <index> <value>`.
pub fn write_triplets(problem: &SdpProblem, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "blocks")?;
    for b in problem.blocks() {
        write!(out, " {}", b.size)?;
    }
    writeln!(out)?;
    for (blk, c) in problem.objective().iter().enumerate() {
        lower_triangle(&mut out, "obj", 0, blk, c)?;
    }
    for (kind, rows) in [("eq", problem.equalities()), ("le", problem.inequalities())] {
        for (k, row) in rows.iter().enumerate() {
            for t in &row.terms {
                lower_triangle(&mut out, kind, k, t.block, &t.coeff)?;
            }
            writeln!(out, "rhs {kind} {k} {:e}", row.rhs)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn lower_triangle(
    out: &mut impl Write,
    kind: &str,
    index: usize,
    block: usize,
    m: &nalgebra::DMatrix<f64>,
) -> std::io::Result<()> {
    for j in 0..m.ncols() {
        for i in j..m.nrows() {
            let v = m[(i, j)];
            if v != 0.0 {
                writeln!(out, "{kind} {index} {block} {i} {j} {v:e}")?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn writes_header_and_rows() {
        let mut p = SdpProblem::new();
        let b = p.add_block("x", 2).unwrap();
        p.add_objective(b, &DMatrix::identity(2, 2)).unwrap();
        p.add_equality(
            vec![(b, DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]))],
            1.0,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.txt");
        write_triplets(&p, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "blocks 2");
        assert!(lines.contains(&"obj 0 0 0 0 1e0"));
        assert!(lines.contains(&"eq 0 0 1 0 5e-1"));
        assert!(lines.contains(&"rhs eq 0 1e0"));
    }
}
