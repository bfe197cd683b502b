//! Topology file format: a TOML document with `[[bus]]` and `[[branch]]`
//! tables. Impedances are given per phase in ohms and converted to per-unit
//! on load using `base_kv` / `base_mva`.

use std::path::Path;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::topology::{Branch, Bus, CustomerGroup, FeederTopology, PhaseSet, Phasor};
use super::GridError;

#[derive(Debug, Serialize, Deserialize)]
struct TopologyFile {
    base_kv: f64,
    #[serde(default = "default_base_mva")]
    base_mva: f64,
    slack_bus: u32,
    #[serde(rename = "bus")]
    buses: Vec<BusEntry>,
    #[serde(rename = "branch")]
    branches: Vec<BranchEntry>,
}

fn default_base_mva() -> f64 {
    1.0
}

fn default_phases() -> String {
    "abc".to_string()
}

#[derive(Debug, Serialize, Deserialize)]
struct BusEntry {
    id: u32,
    #[serde(default = "default_phases")]
    phases: String,
    #[serde(default)]
    groups: Vec<GroupEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupEntry {
    id: String,
    size_kw: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BranchEntry {
    from: u32,
    to: u32,
    #[serde(default = "default_phases")]
    phases: String,
    /// One resistance per phase in the branch's phase set, ohms.
    r_ohm: Vec<f64>,
    x_ohm: Vec<f64>,
    /// Optional mutual coupling applied to every off-diagonal pair, ohms.
    #[serde(default)]
    r_mutual_ohm: f64,
    #[serde(default)]
    x_mutual_ohm: f64,
}

pub fn load_topology(path: &Path) -> Result<FeederTopology, GridError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GridError::File(format!("{}: {e}", path.display())))?;
    parse_topology(&text)
}

pub fn parse_topology(text: &str) -> Result<FeederTopology, GridError> {
    let file: TopologyFile =
        toml::from_str(text).map_err(|e| GridError::File(e.to_string()))?;
    let zb = file.base_kv * file.base_kv / file.base_mva;

    let mut buses = Vec::with_capacity(file.buses.len());
    for b in &file.buses {
        let phases = PhaseSet::from_str(&b.phases)
            .ok_or_else(|| GridError::File(format!("bus {}: bad phase set '{}'", b.id, b.phases)))?;
        buses.push(Bus {
            id: b.id,
            phases,
            groups: b
                .groups
                .iter()
                .map(|g| CustomerGroup {
                    id: g.id.clone(),
                    size_kw: g.size_kw,
                })
                .collect(),
        });
    }

    let mut branches = Vec::with_capacity(file.branches.len());
    for (bi, e) in file.branches.iter().enumerate() {
        let phases = PhaseSet::from_str(&e.phases)
            .ok_or_else(|| GridError::File(format!("branch {bi}: bad phase set '{}'", e.phases)))?;
        if e.r_ohm.len() != phases.len() || e.x_ohm.len() != phases.len() {
            return Err(GridError::File(format!(
                "branch {bi}: expected {} r_ohm/x_ohm entries for phases '{}'",
                phases.len(),
                e.phases
            )));
        }
        let mut z = [[Phasor::new(0.0, 0.0); 3]; 3];
        for (slot, p) in phases.iter().enumerate() {
            z[p.index()][p.index()] = Complex::new(e.r_ohm[slot] / zb, e.x_ohm[slot] / zb);
        }
        if e.r_mutual_ohm != 0.0 || e.x_mutual_ohm != 0.0 {
            let zm = Complex::new(e.r_mutual_ohm / zb, e.x_mutual_ohm / zb);
            for p in phases.iter() {
                for q in phases.iter() {
                    if p != q {
                        z[p.index()][q.index()] = zm;
                    }
                }
            }
        }
        branches.push(Branch {
            from: e.from,
            to: e.to,
            phases,
            z,
        });
    }

    Ok(FeederTopology {
        base_kv: file.base_kv,
        base_mva: file.base_mva,
        slack_bus: file.slack_bus,
        buses,
        branches,
    })
}

pub fn save_topology(topo: &FeederTopology, path: &Path) -> Result<(), GridError> {
    let text = render_topology(topo)?;
    std::fs::write(path, text)
        .map_err(|e| GridError::File(format!("{}: {e}", path.display())))
}

pub fn render_topology(topo: &FeederTopology) -> Result<String, GridError> {
    let zb = topo.z_base_ohm();
    let file = TopologyFile {
        base_kv: topo.base_kv,
        base_mva: topo.base_mva,
        slack_bus: topo.slack_bus,
        buses: topo
            .buses
            .iter()
            .map(|b| BusEntry {
                id: b.id,
                phases: b.phases.to_string(),
                groups: b
                    .groups
                    .iter()
                    .map(|g| GroupEntry {
                        id: g.id.clone(),
                        size_kw: g.size_kw,
                    })
                    .collect(),
            })
            .collect(),
        branches: topo
            .branches
            .iter()
            .map(|br| {
                let mut r = Vec::new();
                let mut x = Vec::new();
                for p in br.phases.iter() {
                    let z = br.z[p.index()][p.index()];
                    r.push(z.re * zb);
                    x.push(z.im * zb);
                }
                // First off-diagonal pair stands for the uniform mutual term.
                let mut zm = Complex::new(0.0, 0.0);
                let present: Vec<_> = br.phases.iter().collect();
                if present.len() >= 2 {
                    zm = br.z[present[0].index()][present[1].index()];
                }
                BranchEntry {
                    from: br.from,
                    to: br.to,
                    phases: br.phases.to_string(),
                    r_ohm: r,
                    x_ohm: x,
                    r_mutual_ohm: zm.re * zb,
                    x_mutual_ohm: zm.im * zb,
                }
            })
            .collect(),
    };
    toml::to_string_pretty(&file).map_err(|e| GridError::File(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::super::synth::thirteen_bus_feeder;
    use super::super::topology::validate_topology;
    use super::*;

    #[test]
    fn thirteen_bus_round_trips() {
        let topo = thirteen_bus_feeder();
        let text = render_topology(&topo).unwrap();
        let back = parse_topology(&text).unwrap();
        assert!(validate_topology(&back).ok());
        assert_eq!(back.buses.len(), topo.buses.len());
        assert_eq!(back.branches.len(), topo.branches.len());
        for (a, b) in topo.branches.iter().zip(back.branches.iter()) {
            for p in 0..3 {
                assert!((a.z[p][p] - b.z[p][p]).norm() < 1e-12);
            }
        }
        for (a, b) in topo.buses.iter().zip(back.buses.iter()) {
            assert_eq!(a.groups, b.groups);
        }
    }

    #[test]
    fn minimal_document_parses() {
        let text = r#"
base_kv = 4.16
slack_bus = 1

[[bus]]
id = 1

[[bus]]
id = 2
groups = [{ id = "g02", size_kw = 40.0 }]

[[branch]]
from = 1
to = 2
r_ohm = [0.1, 0.1, 0.1]
x_ohm = [0.2, 0.2, 0.2]
"#;
        let topo = parse_topology(text).unwrap();
        assert!(validate_topology(&topo).ok());
        assert_eq!(topo.base_mva, 1.0);
        let zb = topo.z_base_ohm();
        assert!((topo.branches[0].z[0][0].re - 0.1 / zb).abs() < 1e-15);
    }

    #[test]
    fn wrong_impedance_arity_rejected() {
        let text = r#"
base_kv = 4.16
slack_bus = 1
[[bus]]
id = 1
[[bus]]
id = 2
[[branch]]
from = 1
to = 2
r_ohm = [0.1]
x_ohm = [0.2, 0.2, 0.2]
"#;
        assert!(matches!(parse_topology(text), Err(GridError::File(_))));
    }
}
