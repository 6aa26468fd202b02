//! Backend registry and circuit-record ingestion, plus episode workload generation.

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{QNodeSpec, QTask, TaskStatus};

pub const DEFAULT_SHOTS: u32 = 1024;

const BUNDLED_BACKENDS: &str = include_str!("../data/backends.csv");
const BUNDLED_CIRCUITS: &str = include_str!("../data/circuits.csv");

/// Precomputed metrics of one benchmark circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitRecord {
    pub app_name: String,
    pub qubits: u32,
    pub base_depth: u32,
    pub gates: BTreeSet<String>,
    pub default_shots: u32,
}

/// The quantum nodes of a data center and their transpilation depth overheads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRegistry {
    pub nodes: Vec<QNodeSpec>,
    pub overhead: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct BackendRow {
    name: String,
    qubits: i64,
    qv: i64,
    d1cps: f64,
    #[serde(default)]
    gates: String,
    #[serde(default)]
    topology: String,
    overhead: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct CircuitRow {
    app: String,
    qubits: i64,
    base_depth: i64,
    #[serde(default)]
    gates: String,
    shots: Option<i64>,
}

fn gate_set(s: &str) -> BTreeSet<String> {
    s.split(';')
        .map(str::trim)
        .filter(|g| !g.is_empty())
        .map(str::to_owned)
        .collect()
}

fn positive_u32(v: i64, what: &str, source: &str, row: usize) -> Result<u32> {
    u32::try_from(v)
        .ok()
        .filter(|&x| x >= 1)
        .ok_or_else(|| Error::Parse {
            source_name: source.to_owned(),
            row,
            message: format!("{what} must be a positive integer, got {v}"),
        })
}

impl BackendRegistry {
    /// Parses a backends CSV with columns `name,qubits,qv,d1cps,gates,topology,overhead`.
    /// Rows are numbered from 1 (the first data row) in errors.
    pub fn from_csv_str(text: &str, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut nodes = Vec::new();
        let mut overhead = Vec::new();
        let mut names = HashSet::new();
        for (i, row) in rdr.deserialize::<BackendRow>().enumerate() {
            let row_no = i + 1;
            let perr = |message: String| Error::Parse {
                source_name: source.to_owned(),
                row: row_no,
                message,
            };
            let row = row.map_err(|e| perr(e.to_string()))?;
            if row.name.is_empty() {
                return Err(perr("empty node name".into()));
            }
            if !names.insert(row.name.clone()) {
                return Err(perr(format!("duplicate node name {:?}", row.name)));
            }
            let qubits = positive_u32(row.qubits, "qubits", source, row_no)?;
            let qv = positive_u32(row.qv, "qv", source, row_no)?;
            if qv < 2 || !qv.is_power_of_two() {
                return Err(perr(format!("qv must be a power of two >= 2, got {qv}")));
            }
            if !(row.d1cps.is_finite() && row.d1cps > 0.0) {
                return Err(perr(format!("d1cps must be positive, got {}", row.d1cps)));
            }
            let oh = row.overhead.unwrap_or(1.0);
            if !(oh.is_finite() && oh >= 1.0) {
                return Err(perr(format!("overhead must be >= 1.0, got {oh}")));
            }
            nodes.push(QNodeSpec {
                id: nodes.len(),
                name: row.name,
                qubits,
                quantum_volume: qv,
                d1cps: row.d1cps,
                gate_set: gate_set(&row.gates),
                topology: row.topology,
            });
            overhead.push(oh);
        }
        if nodes.is_empty() {
            return Err(Error::Parse {
                source_name: source.to_owned(),
                row: 0,
                message: "registry has no nodes".into(),
            });
        }
        Ok(BackendRegistry { nodes, overhead })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text, &path.display().to_string())
    }

    /// The bundled ten-node default registry.
    pub fn bundled() -> Self {
        Self::from_csv_str(BUNDLED_BACKENDS, "bundled backends.csv")
            .expect("bundled registry is valid")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Depth of a circuit with `base_depth` layers after transpiling to `node_id`.
    pub fn effective_depth(&self, base_depth: u32, node_id: usize) -> u64 {
        effective_depth(base_depth, self.overhead[node_id])
    }

    pub fn max_d1cps(&self) -> f64 {
        self.nodes.iter().map(|n| n.d1cps).fold(0.0, f64::max)
    }
}

/// `ceil(base_depth * overhead)`, snapping products that are integral up to float
/// rounding so that e.g. `100 * 1.37` gives 137 and not 138.
pub fn effective_depth(base_depth: u32, overhead: f64) -> u64 {
    let product = f64::from(base_depth) * overhead;
    let nearest = product.round();
    let depth = if (product - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        product.ceil()
    };
    (depth as u64).max(1)
}

pub fn parse_circuits(text: &str, source: &str) -> Result<Vec<CircuitRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<CircuitRow>().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Parse {
            source_name: source.to_owned(),
            row: row_no,
            message: e.to_string(),
        })?;
        out.push(CircuitRecord {
            app_name: row.app,
            qubits: positive_u32(row.qubits, "qubits", source, row_no)?,
            base_depth: positive_u32(row.base_depth, "base_depth", source, row_no)?,
            gates: gate_set(&row.gates),
            default_shots: match row.shots {
                Some(s) => positive_u32(s, "shots", source, row_no)?,
                None => DEFAULT_SHOTS,
            },
        });
    }
    Ok(out)
}

pub fn load_circuits(path: impl AsRef<Path>) -> Result<Vec<CircuitRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_circuits(&text, &path.display().to_string())
}

/// The bundled circuit-metric dataset (twelve applications, 2 to 50 qubits).
pub fn bundled_circuits() -> Vec<CircuitRecord> {
    parse_circuits(BUNDLED_CIRCUITS, "bundled circuits.csv").expect("bundled circuits are valid")
}

pub fn max_base_depth(records: &[CircuitRecord]) -> u32 {
    records.iter().map(|r| r.base_depth).max().unwrap_or(1)
}

/// The tasks of one episode, sorted by arrival.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeWorkload {
    pub tasks: Vec<QTask>,
    pub window: f64,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DumpHeader {
    seed: u64,
    window: f64,
    n: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct DumpHeaderLine {
    workload: DumpHeader,
}

/// Draws `n` tasks uniformly (with replacement) from `records`, arriving as a Poisson
/// process on `[0, window)` conditioned on exactly `n` arrivals.
pub fn generate_episode_workload(
    records: &[CircuitRecord],
    seed: u64,
    n: usize,
    window: f64,
) -> Result<EpisodeWorkload> {
    if records.is_empty() {
        return Err(Error::usage(
            "cannot generate a workload from an empty record set",
        ));
    }
    if n == 0 {
        return Err(Error::usage("workload must contain at least one task"));
    }
    if !(window.is_finite() && window > 0.0) {
        return Err(Error::usage(format!(
            "window must be positive, got {window}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..records.len())).collect();
    let mut arrivals: Vec<f64> = (0..n)
        .map(|_| {
            let a = rng.random::<f64>() * window;
            if a < window {
                a
            } else {
                window.next_down()
            }
        })
        .collect();
    arrivals.sort_by(f64::total_cmp);

    let tasks = picks
        .into_iter()
        .zip(arrivals)
        .enumerate()
        .map(|(id, (pick, arrival))| {
            let r = &records[pick];
            QTask {
                id,
                app: r.app_name.clone(),
                qubits: r.qubits,
                base_depth: r.base_depth,
                gates: r.gates.clone(),
                shots: r.default_shots,
                topology: String::new(),
                arrival,
                status: TaskStatus::Pending,
                replacement_count: 0,
            }
        })
        .collect();
    Ok(EpisodeWorkload {
        tasks,
        window,
        seed,
    })
}

impl EpisodeWorkload {
    /// Writes a header line `{"workload":{seed,window,n}}` followed by one task per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = DumpHeaderLine {
            workload: DumpHeader {
                seed: self.seed,
                window: self.window,
                n: self.tasks.len(),
            },
        };
        let io = |e| Error::io("<workload dump>", e);
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n").map_err(io)?;
        for t in &self.tasks {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Format("empty workload dump".into()))?
            .map_err(|e| Error::io("<workload dump>", e))?;
        let header: DumpHeaderLine = serde_json::from_str(&header_line)?;
        let mut tasks = Vec::with_capacity(header.workload.n);
        for line in lines {
            let line = line.map_err(|e| Error::io("<workload dump>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            tasks.push(serde_json::from_str::<QTask>(&line)?);
        }
        if tasks.len() != header.workload.n {
            return Err(Error::Format(format!(
                "header announces {} tasks, found {}",
                header.workload.n,
                tasks.len()
            )));
        }
        Ok(EpisodeWorkload {
            tasks,
            window: header.workload.window,
            seed: header.workload.seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }
}

/// Registry of `(qubits, d1cps)` nodes with unit overhead, for tests.
#[cfg(test)]
pub(crate) fn test_registry(nodes: &[(u32, f64)]) -> BackendRegistry {
    BackendRegistry {
        nodes: nodes
            .iter()
            .enumerate()
            .map(|(id, &(qubits, d1cps))| QNodeSpec {
                id,
                name: format!("n{id}"),
                qubits,
                quantum_volume: 32,
                d1cps,
                gate_set: BTreeSet::new(),
                topology: String::new(),
            })
            .collect(),
        overhead: vec![1.0; nodes.len()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "name,qubits,qv,d1cps,gates,topology,overhead\n";

    #[test]
    fn bundled_registry_spans_16_to_127_qubits() {
        let reg = BackendRegistry::bundled();
        assert_eq!(reg.len(), 10);
        let min = reg.nodes.iter().map(|n| n.qubits).min().unwrap();
        let max = reg.nodes.iter().map(|n| n.qubits).max().unwrap();
        assert_eq!((min, max), (16, 127));
        assert!(reg.nodes.iter().enumerate().all(|(i, n)| n.id == i));
    }

    #[test]
    fn bundled_circuits_cover_twelve_apps() {
        let recs = bundled_circuits();
        let apps: HashSet<_> = recs.iter().map(|r| r.app_name.as_str()).collect();
        assert_eq!(apps.len(), 12);
        assert!(recs
            .iter()
            .all(|r| (2..=50).contains(&r.qubits) && r.base_depth >= 1));
    }

    #[test]
    fn single_node_registry() {
        let reg = BackendRegistry::from_csv_str(&format!("{HEADER}a,5,8,100,cx;rz,line,\n"), "t")
            .unwrap();
        assert_eq!(reg.len(), 1);
        assert_eq!(reg.overhead, vec![1.0]);
        assert_eq!(reg.nodes[0].gate_set.len(), 2);
    }

    #[test]
    fn registry_errors_name_the_row() {
        let bad = |body: &str| {
            BackendRegistry::from_csv_str(&format!("{HEADER}{body}"), "t").unwrap_err()
        };
        let e = bad("a,5,8,100,,,\nb,5,8,0,,,\n");
        assert!(matches!(e, Error::Parse { row: 2, .. }), "{e}");
        assert!(matches!(
            bad("a,5,12,100,,,\n"),
            Error::Parse { row: 1, .. }
        ));
        assert!(matches!(
            bad("a,5,8,100,,,\na,5,8,100,,,\n"),
            Error::Parse { row: 2, .. }
        ));
        assert!(matches!(
            bad("a,5,8,100,,,0.5\n"),
            Error::Parse { row: 1, .. }
        ));
        assert!(BackendRegistry::from_csv_str(HEADER, "t").is_err());
    }

    #[test]
    fn effective_depth_examples() {
        assert_eq!(effective_depth(100, 1.0), 100);
        assert_eq!(effective_depth(100, 1.37), 137);
        assert_eq!(effective_depth(3, 1.5), 5);
        assert_eq!(effective_depth(10, 1.01), 11);
    }

    #[test]
    fn workload_shape() {
        let recs = bundled_circuits();
        let w = generate_episode_workload(&recs, 7, 60, 60.0).unwrap();
        assert_eq!(w.tasks.len(), 60);
        assert!(w.tasks.windows(2).all(|p| p[0].arrival <= p[1].arrival));
        assert!(w.tasks.iter().all(|t| (0.0..60.0).contains(&t.arrival)));
        assert!(w.tasks.iter().enumerate().all(|(i, t)| t.id == i));

        let one = generate_episode_workload(&recs, 1, 1, 5.0).unwrap();
        assert_eq!(one.tasks.len(), 1);
        assert!((0.0..5.0).contains(&one.tasks[0].arrival));

        assert_eq!(w, generate_episode_workload(&recs, 7, 60, 60.0).unwrap());
        assert_ne!(w, generate_episode_workload(&recs, 8, 60, 60.0).unwrap());
    }

    #[test]
    fn workload_errors() {
        assert!(matches!(
            generate_episode_workload(&[], 0, 5, 1.0),
            Err(Error::Usage(_))
        ));
        let recs = bundled_circuits();
        assert!(generate_episode_workload(&recs, 0, 0, 1.0).is_err());
        assert!(generate_episode_workload(&recs, 0, 1, 0.0).is_err());
    }

    #[test]
    fn shots_default_and_override() {
        let recs = parse_circuits(
            "app,qubits,base_depth,gates,shots\nx,3,10,cx,\ny,3,10,cx,4096\n",
            "t",
        )
        .unwrap();
        assert_eq!(recs[0].default_shots, DEFAULT_SHOTS);
        assert_eq!(recs[1].default_shots, 4096);
        assert!(parse_circuits("app,qubits,base_depth,gates,shots\nx,3,0,cx,\n", "t").is_err());
    }

    #[test]
    fn dump_round_trip_is_byte_identical() {
        let w = generate_episode_workload(&bundled_circuits(), 3, 20, 60.0).unwrap();
        let mut a = Vec::new();
        w.write_jsonl(&mut a).unwrap();
        let back = EpisodeWorkload::read_jsonl(a.as_slice()).unwrap();
        assert_eq!(back, w);
        let mut b = Vec::new();
        back.write_jsonl(&mut b).unwrap();
        assert_eq!(a, b);
    }
}
