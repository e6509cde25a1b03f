//! Metric-driven circuit rubric, the layered circuit template, and fixed
//! presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Band;
use crate::metrics::BandMetrics;
use crate::sim::{AngleSource, CircuitIR, GateOp};

pub const DEFAULT_MAX_QUBITS: usize = 8;
/// Narrowest width the rubric will pick.
pub const MIN_RUBRIC_QUBITS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Entanglement {
    /// CNOT chain `q_i -> q_{i+1}`.
    Linear,
    /// Chain plus `q_{n-1} -> q_0`.
    Ring,
    /// Ring plus stride-2 CNOTs `q_i -> q_{(i+2) mod n}`.
    MultiScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    /// One RY per qubit per layer.
    OnePerQubit,
    /// One U3 per qubit per layer.
    ThreePerQubit,
}

/// Abstract circuit hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub qubits: usize,
    pub depth: usize,
    pub entanglement: Entanglement,
    pub parameterization: Parameterization,
    pub reupload: bool,
}

impl CircuitSpec {
    pub fn new(
        qubits: usize,
        depth: usize,
        entanglement: Entanglement,
        parameterization: Parameterization,
        reupload: bool,
    ) -> Self {
        Self { qubits, depth, entanglement, parameterization, reupload }
    }

    pub fn validate(&self) -> Result<()> {
        if self.qubits == 0 || self.qubits > crate::sim::MAX_QUBITS {
            return Err(Error::QubitCount(self.qubits));
        }
        if self.depth == 0 {
            return Err(Error::invalid("circuit depth must be at least 1"));
        }
        Ok(())
    }

    pub fn num_variational_params(&self) -> usize {
        let per = match self.parameterization {
            Parameterization::OnePerQubit => 1,
            Parameterization::ThreePerQubit => 3,
        };
        self.qubits * self.depth * per
    }
}

/// Class boundaries and depth ranges for the rubric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RubricThresholds {
    pub entropy_low: f64,
    pub entropy_high: f64,
    pub variance_low: f64,
    pub variance_high: f64,
    pub edge_low: f64,
    pub edge_high: f64,
    /// Flatness at or above this makes `Q >= H` strict (ceil instead of floor).
    pub flatness_strict: f64,
    pub depth_low: (usize, usize),
    pub depth_med: (usize, usize),
    pub depth_high: (usize, usize),
    pub depth_cap: usize,
}

impl Default for RubricThresholds {
    fn default() -> Self {
        Self {
            entropy_low: 4.0,
            entropy_high: 6.9,
            variance_low: 1000.0,
            variance_high: 5000.0,
            edge_low: 0.20,
            edge_high: 0.45,
            flatness_strict: 0.70,
            depth_low: (1, 2),
            depth_med: (2, 4),
            depth_high: (4, 6),
            depth_cap: 4,
        }
    }
}

impl RubricThresholds {
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("entropy", self.entropy_low, self.entropy_high),
            ("variance", self.variance_low, self.variance_high),
            ("edge", self.edge_low, self.edge_high),
        ];
        for (name, lo, hi) in pairs {
            if !(lo > 0.0 && lo < hi) {
                return Err(Error::invalid(format!("{name} cutoffs must satisfy 0 < low < high")));
            }
        }
        if self.flatness_strict <= 0.0 {
            return Err(Error::invalid("flatness cutoff must be positive"));
        }
        for (lo, hi) in [self.depth_low, self.depth_med, self.depth_high] {
            if lo == 0 || lo > hi {
                return Err(Error::invalid("depth ranges must satisfy 1 <= low <= high"));
            }
        }
        if self.depth_cap == 0 {
            return Err(Error::invalid("depth cap must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Level {
    Low,
    Med,
    High,
}

fn level(v: f64, lo: f64, hi: f64) -> Level {
    if v < lo {
        Level::Low
    } else if v < hi {
        Level::Med
    } else {
        Level::High
    }
}

/// Maps band metrics to circuit hyperparameters.
///
/// * width: `ceil(H)` when flatness is high, otherwise `floor(H)`, clamped to
///   `[4, max_q]`;
/// * depth: floor of the midpoint of the entropy class's depth range, capped;
/// * entanglement: linear / ring / multi-scale for low / medium / high edge
///   density;
/// * parameterization: RY for low variance, U3 for medium, U3 with
///   re-uploading for high.
pub fn design_circuit(metrics: &BandMetrics, thresholds: &RubricThresholds, max_q: usize) -> CircuitSpec {
    let t = thresholds;
    let h = metrics.entropy.max(0.0);
    let raw_q = if metrics.flatness >= t.flatness_strict { h.ceil() } else { h.floor() } as usize;
    let max_q = max_q.max(MIN_RUBRIC_QUBITS);
    let qubits = raw_q.clamp(MIN_RUBRIC_QUBITS, max_q);

    let (lo, hi) = match level(h, t.entropy_low, t.entropy_high) {
        Level::Low => t.depth_low,
        Level::Med => t.depth_med,
        Level::High => t.depth_high,
    };
    let depth = ((lo + hi) / 2).min(t.depth_cap).max(1);

    let entanglement = match level(metrics.edge_density, t.edge_low, t.edge_high) {
        Level::Low => Entanglement::Linear,
        Level::Med => Entanglement::Ring,
        Level::High => Entanglement::MultiScale,
    };
    let (parameterization, reupload) = match level(metrics.variance, t.variance_low, t.variance_high) {
        Level::Low => (Parameterization::OnePerQubit, false),
        Level::Med => (Parameterization::ThreePerQubit, false),
        Level::High => (Parameterization::ThreePerQubit, true),
    };
    CircuitSpec { qubits, depth, entanglement, parameterization, reupload }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rotation {
    Ry,
    U3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Entangler {
    None,
    Cnot(Entanglement),
    /// H on even qubits, CNOT to the odd neighbour; placed before rotations.
    BellPairs,
    /// Variational CRZ ring plus variational PSWAP on opposite pairs.
    CrzRingPswap,
}

struct Template {
    qubits: usize,
    layers: usize,
    rotation: Rotation,
    entangler: Entangler,
    reupload: bool,
}

struct Builder {
    gates: Vec<GateOp>,
    params: usize,
}

impl Builder {
    fn param(&mut self) -> AngleSource {
        self.params += 1;
        AngleSource::Variational(self.params - 1)
    }

    fn encode(&mut self, q: usize) {
        for i in 0..q {
            self.gates.push(GateOp::ry(i, AngleSource::Encoding(i)));
        }
    }

    fn rotate(&mut self, q: usize, rot: Rotation) {
        for i in 0..q {
            let g = match rot {
                Rotation::Ry => GateOp::ry(i, self.param()),
                Rotation::U3 => {
                    let (a, b, c) = (self.param(), self.param(), self.param());
                    GateOp::u3(i, a, b, c)
                }
            };
            self.gates.push(g);
        }
    }

    fn entangle(&mut self, q: usize, e: Entangler) {
        match e {
            Entangler::None | Entangler::BellPairs => {}
            Entangler::Cnot(kind) => {
                for i in 0..q.saturating_sub(1) {
                    self.gates.push(GateOp::cnot(i, i + 1));
                }
                if matches!(kind, Entanglement::Ring | Entanglement::MultiScale) && q > 2 {
                    self.gates.push(GateOp::cnot(q - 1, 0));
                }
                if kind == Entanglement::MultiScale && q > 2 {
                    for i in 0..q {
                        self.gates.push(GateOp::cnot(i, (i + 2) % q));
                    }
                }
            }
            Entangler::CrzRingPswap => {
                for i in 0..q {
                    let a = self.param();
                    self.gates.push(GateOp::crz(i, (i + 1) % q, a));
                }
                for i in 0..q / 2 {
                    let a = self.param();
                    self.gates.push(GateOp::pswap(i, i + q / 2, a));
                }
            }
        }
    }

    fn bell_pairs(&mut self, q: usize) {
        for i in (0..q.saturating_sub(1)).step_by(2) {
            self.gates.push(GateOp::h(i));
            self.gates.push(GateOp::cnot(i, i + 1));
        }
    }
}

impl Template {
    fn build(&self) -> Result<CircuitIR> {
        let q = self.qubits;
        let mut b = Builder { gates: Vec::new(), params: 0 };
        for layer in 0..self.layers {
            if layer == 0 || self.reupload {
                b.encode(q);
            }
            if self.entangler == Entangler::BellPairs {
                b.bell_pairs(q);
            }
            b.rotate(q, self.rotation);
            b.entangle(q, self.entangler);
        }
        CircuitIR::new(q, b.gates, b.params, q)
    }
}

/// Compiles a spec to gates: an RY encoding block, then `depth` layers of
/// rotations followed by the entangler. With re-uploading the encoding block
/// is repeated at the start of every layer.
///
/// Any width from 1 to the simulator limit is accepted here; the rubric is
/// what enforces the minimum of four.
pub fn instantiate(spec: &CircuitSpec) -> Result<CircuitIR> {
    spec.validate()?;
    Template {
        qubits: spec.qubits,
        layers: spec.depth,
        rotation: match spec.parameterization {
            Parameterization::OnePerQubit => Rotation::Ry,
            Parameterization::ThreePerQubit => Rotation::U3,
        },
        entangler: Entangler::Cnot(spec.entanglement),
        reupload: spec.reupload,
    }
    .build()
}

/// Fixed circuits: the per-band designs for both datasets and the
/// monolithic baselines used in ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    EurosatRgb,
    EurosatNdvi,
    EurosatEvi,
    EurosatEntropy,
    Sat6Complex,
    Sat6Simple,
    MonoRy,
    MonoBellman,
    MonoRealamp,
}

impl Preset {
    pub const ALL: [Preset; 9] = [
        Preset::EurosatRgb,
        Preset::EurosatNdvi,
        Preset::EurosatEvi,
        Preset::EurosatEntropy,
        Preset::Sat6Complex,
        Preset::Sat6Simple,
        Preset::MonoRy,
        Preset::MonoBellman,
        Preset::MonoRealamp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::EurosatRgb => "eurosat-rgb",
            Preset::EurosatNdvi => "eurosat-ndvi",
            Preset::EurosatEvi => "eurosat-evi",
            Preset::EurosatEntropy => "eurosat-entropy",
            Preset::Sat6Complex => "sat6-complex",
            Preset::Sat6Simple => "sat6-simple",
            Preset::MonoRy => "mono-ry",
            Preset::MonoBellman => "mono-bellman",
            Preset::MonoRealamp => "mono-realamp",
        }
    }

    /// The layered spec this preset is built from, where one exists.
    pub fn spec(self) -> Option<CircuitSpec> {
        use Entanglement::*;
        use Parameterization::*;
        Some(match self {
            Preset::EurosatRgb => CircuitSpec::new(6, 3, MultiScale, ThreePerQubit, false),
            Preset::EurosatNdvi => CircuitSpec::new(8, 3, Ring, ThreePerQubit, false),
            Preset::EurosatEvi => CircuitSpec::new(4, 4, Ring, ThreePerQubit, true),
            Preset::EurosatEntropy => CircuitSpec::new(7, 4, Linear, ThreePerQubit, false),
            Preset::Sat6Simple | Preset::MonoRealamp => CircuitSpec::new(4, 2, Linear, OnePerQubit, false),
            Preset::Sat6Complex | Preset::MonoRy | Preset::MonoBellman => return None,
        })
    }

    pub fn circuit(self) -> CircuitIR {
        let built = match self.spec() {
            Some(spec) => instantiate(&spec),
            None => {
                let (qubits, layers, rotation, entangler, reupload) = match self {
                    Preset::Sat6Complex => (8, 4, Rotation::U3, Entangler::CrzRingPswap, true),
                    Preset::MonoRy => (4, 2, Rotation::Ry, Entangler::None, false),
                    Preset::MonoBellman => (4, 2, Rotation::Ry, Entangler::BellPairs, false),
                    _ => unreachable!("layered presets are handled above"),
                };
                Template { qubits, layers, rotation, entangler, reupload }.build()
            }
        };
        built.expect("preset templates are valid")
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Unknown { kind: "preset", name: s.to_string() })
    }
}

pub fn preset(name: &str) -> Result<CircuitIR> {
    Ok(name.parse::<Preset>()?.circuit())
}

/// A circuit bound to one band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandCircuit {
    pub band: Band,
    /// Human-readable origin, e.g. a preset name.
    pub name: String,
    pub circuit: CircuitIR,
}

/// Named band-to-circuit assignments.
///
/// * `eurosat`: RGB -> eurosat-rgb, EVI -> eurosat-evi, NDVI -> eurosat-ndvi,
///   Entropy -> eurosat-entropy (37 outputs per patch);
/// * `sat6`: sat6-complex everywhere except EVI -> sat6-simple (44 outputs);
/// * `toy`: small band-specific circuits for desk-scale runs;
/// * `mono-ry`, `mono-bellman`, `mono-realamp`: one preset for every band.
pub fn assignment(name: &str) -> Result<Vec<BandCircuit>> {
    let pick = |f: &dyn Fn(Band) -> Result<(String, CircuitIR)>| -> Result<Vec<BandCircuit>> {
        Band::ALL
            .iter()
            .map(|&band| {
                let (name, circuit) = f(band)?;
                Ok(BandCircuit { band, name, circuit })
            })
            .collect()
    };
    let from_preset = |p: Preset| Ok((p.name().to_string(), p.circuit()));
    match name {
        "eurosat" => pick(&|b| {
            from_preset(match b {
                Band::R | Band::G | Band::B => Preset::EurosatRgb,
                Band::Evi => Preset::EurosatEvi,
                Band::Ndvi => Preset::EurosatNdvi,
                Band::Entropy => Preset::EurosatEntropy,
            })
        }),
        "sat6" => pick(&|b| {
            from_preset(if b == Band::Evi { Preset::Sat6Simple } else { Preset::Sat6Complex })
        }),
        "toy" => pick(&|b| {
            use Entanglement::*;
            use Parameterization::*;
            let spec = match b {
                Band::R | Band::G | Band::B => CircuitSpec::new(2, 1, Linear, OnePerQubit, false),
                Band::Evi => CircuitSpec::new(2, 2, Ring, ThreePerQubit, true),
                Band::Ndvi => CircuitSpec::new(3, 1, Ring, ThreePerQubit, false),
                Band::Entropy => CircuitSpec::new(2, 1, Linear, OnePerQubit, false),
            };
            Ok((format!("toy-{}", b.name().to_ascii_lowercase()), instantiate(&spec)?))
        }),
        other => {
            let p: Preset = other
                .parse()
                .map_err(|_| Error::Unknown { kind: "circuit assignment", name: other.to_string() })?;
            if !matches!(p, Preset::MonoRy | Preset::MonoBellman | Preset::MonoRealamp) {
                return Err(Error::Unknown { kind: "circuit assignment", name: other.to_string() });
            }
            pick(&|_| from_preset(p))
        }
    }
}

/// Rubric-designed circuits from per-band metrics.
pub fn assignment_from_metrics(
    metrics: &[(Band, BandMetrics)],
    thresholds: &RubricThresholds,
    max_q: usize,
) -> Result<Vec<BandCircuit>> {
    thresholds.validate()?;
    metrics
        .iter()
        .map(|(band, m)| {
            let spec = design_circuit(m, thresholds, max_q);
            Ok(BandCircuit { band: *band, name: format!("rubric-{}", band.name()), circuit: instantiate(&spec)? })
        })
        .collect()
}
