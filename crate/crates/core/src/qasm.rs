//! OpenQASM 2.0 export and a parser for the exported subset.
//!
//! Gate mapping:
//!
//! | IR                | QASM                          |
//! |-------------------|-------------------------------|
//! | `RY(t)`, `RZ(t)`  | `ry(t)`, `rz(t)`              |
//! | `U3(a, b, c)`     | `u3(b, a, c)` (equal up to global phase) |
//! | `H`, `CNOT`       | `h`, `cx`                     |
//! | `CRZ(t)`          | `crz(t)`                      |
//! | `PSWAP(t)`        | `pswap(t)`, defined below     |
//!
//! `pswap(t) = exp(-i t/4 (XX + YY))` is emitted as a gate definition built
//! from two commuting ZZ-type rotations in the X and Y bases:
//!
//! ```text
//! gate pswap(theta) a,b { h a; h b; cx a,b; rz(theta/2) b; cx a,b; h a; h b;
//!   rx(pi/2) a; rx(pi/2) b; cx a,b; rz(theta/2) b; cx a,b; rx(-pi/2) a; rx(-pi/2) b; }
//! ```
//!
//! Unbound angles are written `theta[j]` (variational) and `x[i]`
//! (encoded feature); a `// params P features F` comment records the
//! counts. The parser reads only this dialect and maps `pswap` calls back
//! to the native gate.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sim::{AngleSource, CircuitIR, GateKind, GateOp};

pub const PSWAP_DEFINITION: &str = "gate pswap(theta) a,b { h a; h b; cx a,b; rz(theta/2) b; cx a,b; h a; h b; \
rx(pi/2) a; rx(pi/2) b; cx a,b; rz(theta/2) b; cx a,b; rx(-pi/2) a; rx(-pi/2) b; }";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Qasm2,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qasm2" | "qasm" => Ok(ExportFormat::Qasm2),
            other => Err(Error::Unknown { kind: "export format", name: other.to_string() }),
        }
    }
}

/// How angles are written.
#[derive(Debug, Clone, Copy)]
pub enum Binding<'a> {
    Symbolic,
    Bound { params: &'a [f64], features: &'a [f64] },
}

fn angle_text(src: &AngleSource, binding: Binding) -> String {
    match (binding, src) {
        (Binding::Bound { params, features }, s) => format!("{}", s.resolve(params, features)),
        (Binding::Symbolic, AngleSource::Constant(v)) => format!("{v}"),
        (Binding::Symbolic, AngleSource::Variational(j)) => format!("theta[{j}]"),
        (Binding::Symbolic, AngleSource::Encoding(i)) => format!("x[{i}]"),
    }
}

pub fn export(circuit: &CircuitIR, format: ExportFormat, binding: Binding) -> Result<String> {
    match format {
        ExportFormat::Qasm2 => export_qasm(circuit, binding),
    }
}

pub fn export_qasm(circuit: &CircuitIR, binding: Binding) -> Result<String> {
    circuit.validate()?;
    if let Binding::Bound { params, features } = binding {
        circuit.check_inputs(params, features)?;
    }
    let mut s = String::from("OPENQASM 2.0;\ninclude \"qelib1.inc\";\n");
    if matches!(binding, Binding::Symbolic) {
        writeln!(s, "// params {} features {}", circuit.num_variational_params, circuit.num_encoding_features)
            .expect("writing to a String");
    }
    if circuit.count_kind(GateKind::Pswap) > 0 {
        s.push_str(PSWAP_DEFINITION);
        s.push('\n');
    }
    writeln!(s, "qreg q[{}];", circuit.num_qubits).expect("writing to a String");
    for g in &circuit.gates {
        let a: Vec<String> = g.angles.iter().map(|x| angle_text(x, binding)).collect();
        let q = &g.qubits;
        let line = match g.kind {
            GateKind::Ry => format!("ry({}) q[{}];", a[0], q[0]),
            GateKind::Rz => format!("rz({}) q[{}];", a[0], q[0]),
            GateKind::U3 => format!("u3({},{},{}) q[{}];", a[1], a[0], a[2], q[0]),
            GateKind::H => format!("h q[{}];", q[0]),
            GateKind::Cnot => format!("cx q[{}],q[{}];", q[0], q[1]),
            GateKind::Crz => format!("crz({}) q[{}],q[{}];", a[0], q[0], q[1]),
            GateKind::Pswap => format!("pswap({}) q[{}],q[{}];", a[0], q[0], q[1]),
        };
        s.push_str(&line);
        s.push('\n');
    }
    Ok(s)
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Format { what: "QASM", msg: format!("line {line}: {}", msg.into()) }
}

fn parse_index(text: &str, prefix: &str) -> Option<usize> {
    text.strip_prefix(prefix)?.strip_suffix(']')?.trim().parse().ok()
}

fn parse_angle(text: &str, line: usize) -> Result<AngleSource> {
    let t = text.trim();
    if let Some(j) = parse_index(t, "theta[") {
        return Ok(AngleSource::Variational(j));
    }
    if let Some(i) = parse_index(t, "x[") {
        return Ok(AngleSource::Encoding(i));
    }
    t.parse::<f64>().map(AngleSource::Constant).map_err(|_| perr(line, format!("unsupported angle `{t}`")))
}

fn parse_qubits(text: &str, line: usize) -> Result<Vec<usize>> {
    text.split(',')
        .map(|q| parse_index(q.trim(), "q[").ok_or_else(|| perr(line, format!("bad qubit operand `{}`", q.trim()))))
        .collect()
}

/// Parses text produced by [`export_qasm`].
pub fn parse_qasm(text: &str) -> Result<CircuitIR> {
    let mut num_qubits = None;
    let mut declared: Option<(usize, usize)> = None;
    let mut gates = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let t = raw.trim();
        if let Some(comment) = t.strip_prefix("//") {
            let words: Vec<&str> = comment.split_whitespace().collect();
            if let ["params", p, "features", f] = words[..] {
                let p = p.parse().map_err(|_| perr(line, "bad parameter count"))?;
                let f = f.parse().map_err(|_| perr(line, "bad feature count"))?;
                declared = Some((p, f));
            }
            continue;
        }
        if t.is_empty() || t.starts_with("OPENQASM") || t.starts_with("include") || t.starts_with("gate ") {
            continue;
        }
        let stmt = t.strip_suffix(';').ok_or_else(|| perr(line, "missing `;`"))?.trim();
        if let Some(rest) = stmt.strip_prefix("qreg") {
            let n = parse_index(rest.trim(), "q[").ok_or_else(|| perr(line, "bad register declaration"))?;
            num_qubits = Some(n);
            continue;
        }
        let (head, operands) = stmt.split_once(' ').ok_or_else(|| perr(line, "missing operands"))?;
        let qubits = parse_qubits(operands, line)?;
        let (name, args) = match head.split_once('(') {
            Some((name, rest)) => {
                let inner = rest.strip_suffix(')').ok_or_else(|| perr(line, "unclosed `(`"))?;
                let args = inner.split(',').map(|a| parse_angle(a, line)).collect::<Result<Vec<_>>>()?;
                (name, args)
            }
            None => (head, Vec::new()),
        };
        let (kind, angles) = match name {
            "ry" => (GateKind::Ry, args),
            "rz" => (GateKind::Rz, args),
            "u3" if args.len() == 3 => (GateKind::U3, vec![args[1], args[0], args[2]]),
            "h" => (GateKind::H, args),
            "cx" => (GateKind::Cnot, args),
            "crz" => (GateKind::Crz, args),
            "pswap" => (GateKind::Pswap, args),
            other => return Err(perr(line, format!("unsupported gate `{other}`"))),
        };
        gates.push(GateOp { kind, qubits, angles });
    }
    let num_qubits = num_qubits.ok_or_else(|| perr(0, "no qreg declaration"))?;
    let (params, features) = declared.unwrap_or_else(|| {
        let mut p = 0;
        let mut f = 0;
        for a in gates.iter().flat_map(|g| &g.angles) {
            match *a {
                AngleSource::Variational(j) => p = p.max(j + 1),
                AngleSource::Encoding(i) => f = f.max(i + 1),
                AngleSource::Constant(_) => {}
            }
        }
        (p, f)
    });
    CircuitIR::new(num_qubits, gates, params, features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::preset;

    #[test]
    fn empty_circuit() {
        let s = export_qasm(&CircuitIR::empty(1), Binding::Bound { params: &[], features: &[] }).unwrap();
        assert_eq!(s, "OPENQASM 2.0;\ninclude \"qelib1.inc\";\nqreg q[1];\n");
        assert_eq!(parse_qasm(&s).unwrap(), CircuitIR::empty(1));
    }

    #[test]
    fn sat6_simple_listing() {
        let s = export_qasm(&preset("sat6-simple").unwrap(), Binding::Symbolic).unwrap();
        let count = |p: &str| s.lines().filter(|l| l.starts_with(p)).count();
        assert_eq!(count("ry(x["), 4);
        assert_eq!(count("ry(theta["), 8);
        assert_eq!(count("cx "), 6);
        assert_eq!(count("u3("), 0);
        assert!(!s.contains("gate pswap"));
    }

    #[test]
    fn symbolic_round_trip_is_exact() {
        for name in ["sat6-complex", "eurosat-rgb", "mono-bellman"] {
            let c = preset(name).unwrap();
            assert_eq!(parse_qasm(&export_qasm(&c, Binding::Symbolic).unwrap()).unwrap(), c);
        }
    }

    #[test]
    fn format_names() {
        assert_eq!("qasm2".parse::<ExportFormat>().unwrap(), ExportFormat::Qasm2);
        assert!("qasm3".parse::<ExportFormat>().is_err());
    }

    #[test]
    fn parse_errors() {
        assert!(parse_qasm("OPENQASM 2.0;\nry(0.1) q[0];\n").is_err());
        assert!(parse_qasm("qreg q[1];\nfoo q[0];\n").is_err());
        assert!(parse_qasm("qreg q[1];\nry(y) q[0];\n").is_err());
        assert!(parse_qasm("qreg q[1];\nry(0.1) q[3];\n").is_err());
    }
}
