//! Plain-text serialization of phase-space states, wavefunctions, and
//! diagnostics tables. Values are printed with 17 significant digits so
//! a write/read cycle reproduces every f64 bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use thiserror::Error;

use crate::evolve::DiagnosticsRow;
use crate::phase_space::{PhaseSpaceGrid, Wavefunction, WignerState};

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> SnapshotError {
    SnapshotError::Malformed {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Write a state as header lines followed by an `nq x np` matrix
/// (rows over q, columns over p).
pub fn write_snapshot(state: &WignerState, path: &Path) -> Result<(), SnapshotError> {
    let grid = state.grid();
    let mut text = String::new();
    writeln!(text, "# t={:.16e}", state.time()).unwrap();
    writeln!(
        text,
        "# q: {:.16e} {:.16e} {}",
        grid.q_min, grid.q_max, grid.nq
    )
    .unwrap();
    writeln!(
        text,
        "# p: {:.16e} {:.16e} {}",
        grid.p_min, grid.p_max, grid.np
    )
    .unwrap();
    writeln!(text, "# hbar={:.16e}", grid.hbar).unwrap();
    for i in 0..grid.nq {
        let row = state.values().row(i);
        let mut first = true;
        for v in row.iter() {
            if !first {
                text.push(' ');
            }
            write!(text, "{v:.16e}").unwrap();
            first = false;
        }
        text.push('\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

/// Read a state written by [`write_snapshot`].
pub fn read_snapshot(path: &Path) -> Result<WignerState, SnapshotError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    let mut next_header = |prefix: &str| -> Result<(usize, String), SnapshotError> {
        let (idx, line) = lines
            .next()
            .ok_or_else(|| malformed(path, 0, "unexpected end of file in header"))?;
        let Some(rest) = line.strip_prefix(prefix) else {
            return Err(malformed(
                path,
                idx + 1,
                format!("expected header `{prefix}...`, got `{line}`"),
            ));
        };
        Ok((idx + 1, rest.trim().to_string()))
    };

    let (tline, tval) = next_header("# t=")?;
    let time: f64 = tval
        .parse()
        .map_err(|_| malformed(path, tline, "bad time value"))?;
    let (qline, qspec) = next_header("# q:")?;
    let qparts: Vec<&str> = qspec.split_whitespace().collect();
    if qparts.len() != 3 {
        return Err(malformed(path, qline, "q header needs `min max n`"));
    }
    let (pline, pspec) = next_header("# p:")?;
    let pparts: Vec<&str> = pspec.split_whitespace().collect();
    if pparts.len() != 3 {
        return Err(malformed(path, pline, "p header needs `min max n`"));
    }
    let (hline, hval) = next_header("# hbar=")?;
    let hbar: f64 = hval
        .parse()
        .map_err(|_| malformed(path, hline, "bad hbar value"))?;

    let parse_f = |s: &str, line: usize| -> Result<f64, SnapshotError> {
        s.parse()
            .map_err(|_| malformed(path, line, format!("bad number `{s}`")))
    };
    let q_min = parse_f(qparts[0], qline)?;
    let q_max = parse_f(qparts[1], qline)?;
    let nq: usize = qparts[2]
        .parse()
        .map_err(|_| malformed(path, qline, "bad nq"))?;
    let p_min = parse_f(pparts[0], pline)?;
    let p_max = parse_f(pparts[1], pline)?;
    let np: usize = pparts[2]
        .parse()
        .map_err(|_| malformed(path, pline, "bad np"))?;

    let grid = PhaseSpaceGrid::new(q_min, q_max, p_min, p_max, nq, np, hbar)
        .map_err(|e| malformed(path, qline, e.to_string()))?;

    let mut values = Array2::zeros((nq, np));
    let mut row = 0usize;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if row >= nq {
            return Err(malformed(path, idx + 1, "more rows than nq"));
        }
        let mut col = 0usize;
        for tok in line.split_whitespace() {
            if col >= np {
                return Err(malformed(path, idx + 1, "more columns than np"));
            }
            values[[row, col]] = parse_f(tok, idx + 1)?;
            col += 1;
        }
        if col != np {
            return Err(malformed(
                path,
                idx + 1,
                format!("row has {col} values, expected {np}"),
            ));
        }
        row += 1;
    }
    if row != nq {
        return Err(malformed(path, 0, format!("found {row} rows, expected {nq}")));
    }
    let mut state =
        WignerState::new(grid, values, time).map_err(|e| malformed(path, 0, e.to_string()))?;
    state.set_time(time);
    Ok(state)
}

/// Write a complex wavefunction: `# q: min max n` then `re im` per line.
pub fn write_wavefunction(psi: &Wavefunction, path: &Path) -> Result<(), SnapshotError> {
    let mut text = String::new();
    writeln!(
        text,
        "# q: {:.16e} {:.16e} {}",
        psi.q_min,
        psi.q_max,
        psi.nq()
    )
    .unwrap();
    for v in &psi.values {
        writeln!(text, "{:.16e} {:.16e}", v.re, v.im).unwrap();
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_wavefunction(path: &Path) -> Result<Wavefunction, SnapshotError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (hline, header) = lines
        .next()
        .ok_or_else(|| malformed(path, 0, "empty wavefunction file"))?;
    let Some(spec) = header.strip_prefix("# q:") else {
        return Err(malformed(path, hline + 1, "expected `# q: min max n` header"));
    };
    let parts: Vec<&str> = spec.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(malformed(path, hline + 1, "q header needs `min max n`"));
    }
    let q_min: f64 = parts[0]
        .parse()
        .map_err(|_| malformed(path, hline + 1, "bad q_min"))?;
    let q_max: f64 = parts[1]
        .parse()
        .map_err(|_| malformed(path, hline + 1, "bad q_max"))?;
    let n: usize = parts[2]
        .parse()
        .map_err(|_| malformed(path, hline + 1, "bad sample count"))?;

    let mut values = Vec::with_capacity(n);
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(malformed(path, idx + 1, "expected `re im`"));
        }
        let re: f64 = parts[0]
            .parse()
            .map_err(|_| malformed(path, idx + 1, "bad real part"))?;
        let im: f64 = parts[1]
            .parse()
            .map_err(|_| malformed(path, idx + 1, "bad imaginary part"))?;
        values.push(Complex64::new(re, im));
    }
    if values.len() != n {
        return Err(malformed(
            path,
            0,
            format!("found {} samples, expected {n}", values.len()),
        ));
    }
    Ok(Wavefunction {
        q_min,
        q_max,
        values,
    })
}

pub const DIAGNOSTICS_HEADER: &str =
    "t,norm,purity,negativity,q_mean,p_mean,q_var,p_var,fock_norm";

/// Write the diagnostics table as CSV with full float precision.
pub fn write_diagnostics(rows: &[DiagnosticsRow], path: &Path) -> Result<(), SnapshotError> {
    let mut text = String::new();
    writeln!(text, "{DIAGNOSTICS_HEADER}").unwrap();
    for r in rows {
        writeln!(
            text,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.time,
            r.norm,
            r.purity,
            r.negativity,
            r.q_mean,
            r.p_mean,
            r.q_var,
            r.p_var,
            r.fock_norm
        )
        .unwrap();
    }
    fs::write(path, text)?;
    Ok(())
}
