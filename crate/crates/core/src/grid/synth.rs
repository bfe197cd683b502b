use num_complex::Complex;
use rand::Rng;

use super::topology::{Branch, Bus, CustomerGroup, FeederTopology, PhaseSet, Phasor};

fn z_diag(r: f64, x: f64) -> [[Phasor; 3]; 3] {
    let mut z = [[Phasor::new(0.0, 0.0); 3]; 3];
    for p in 0..3 {
        z[p][p] = Phasor::new(r, x);
    }
    z
}

fn z_diag3(rx: [(f64, f64); 3]) -> [[Phasor; 3]; 3] {
    let mut z = [[Phasor::new(0.0, 0.0); 3]; 3];
    for p in 0..3 {
        z[p][p] = Phasor::new(rx[p].0, rx[p].1);
    }
    z
}

/// The bundled 13-bus example feeder: a 4.16 kV radial network with a main
/// trunk, three laterals, three junction buses without load, and one
/// aggregated customer group per load bus. Impedances are stored in pu on a
/// 1 MVA base.
pub fn thirteen_bus_feeder() -> FeederTopology {
    let base_kv = 4.16;
    let base_mva = 1.0;
    let zb = base_kv * base_kv / base_mva; // 17.3 ohm

    let bus = |id: u32, groups: Vec<CustomerGroup>| Bus {
        id,
        phases: PhaseSet::abc(),
        groups,
    };
    let grp = |id: &str, size_kw: f64| CustomerGroup {
        id: id.to_string(),
        size_kw,
    };
    // Light per-phase unbalance on a few sections.
    let line = |from: u32, to: u32, r_ohm: f64, x_ohm: f64| Branch {
        from,
        to,
        phases: PhaseSet::abc(),
        z: z_diag(r_ohm / zb, x_ohm / zb),
    };
    let line3 = |from: u32, to: u32, rx: [(f64, f64); 3]| Branch {
        from,
        to,
        phases: PhaseSet::abc(),
        z: z_diag3([
            (rx[0].0 / zb, rx[0].1 / zb),
            (rx[1].0 / zb, rx[1].1 / zb),
            (rx[2].0 / zb, rx[2].1 / zb),
        ]),
    };

    FeederTopology {
        base_kv,
        base_mva,
        slack_bus: 1,
        buses: vec![
            bus(1, vec![]),
            bus(2, vec![]), // junction
            bus(3, vec![grp("g03", 55.0)]),
            bus(4, vec![grp("g04", 40.0)]),
            bus(5, vec![grp("g05", 50.0)]),
            bus(6, vec![grp("g06", 90.0)]),
            bus(7, vec![grp("g07", 65.0)]),
            bus(8, vec![grp("g08", 35.0)]),
            bus(9, vec![grp("g09", 45.0)]),
            bus(10, vec![grp("g10", 30.0)]),
            bus(11, vec![]), // junction
            bus(12, vec![grp("g12", 110.0)]),
            bus(13, vec![grp("g13", 75.0)]),
        ],
        branches: vec![
            line(1, 2, 0.10, 0.24),
            line(2, 3, 0.18, 0.30),
            line(3, 4, 0.22, 0.34),
            line(4, 5, 0.20, 0.32),
            line3(3, 6, [(0.26, 0.38), (0.27, 0.39), (0.25, 0.37)]),
            line(6, 7, 0.24, 0.33),
            line(4, 8, 0.28, 0.36),
            line(8, 9, 0.30, 0.38),
            line(5, 10, 0.26, 0.35),
            line(2, 11, 0.14, 0.26),
            line3(11, 12, [(0.21, 0.31), (0.20, 0.30), (0.22, 0.32)]),
            line(12, 13, 0.25, 0.34),
        ],
    }
}

#[derive(Debug, Clone)]
pub struct RandomFeederConfig {
    pub n_buses: usize,
    /// Per-branch resistance range, pu.
    pub r_range: (f64, f64),
    /// X/R ratio range.
    pub xr_range: (f64, f64),
    /// Groups receive sizes in this range, kW.
    pub size_range: (f64, f64),
    /// Probability that a non-slack bus hosts a customer group.
    pub group_probability: f64,
}

impl Default for RandomFeederConfig {
    fn default() -> Self {
        RandomFeederConfig {
            n_buses: 10,
            r_range: (0.002, 0.015),
            xr_range: (0.8, 1.8),
            size_range: (20.0, 120.0),
            group_probability: 0.8,
        }
    }
}

/// Random radial feeder: each new bus attaches to a uniformly chosen existing
/// bus, which makes the graph a tree by construction.
pub fn random_radial_feeder<R: Rng>(config: &RandomFeederConfig, rng: &mut R) -> FeederTopology {
    assert!(config.n_buses >= 2);
    let mut buses = vec![Bus {
        id: 1,
        phases: PhaseSet::abc(),
        groups: Vec::new(),
    }];
    let mut branches = Vec::new();
    for id in 2..=config.n_buses as u32 {
        let parent = buses[rng.gen_range(0..buses.len())].id;
        let r = rng.gen_range(config.r_range.0..config.r_range.1);
        let x = r * rng.gen_range(config.xr_range.0..config.xr_range.1);
        branches.push(Branch {
            from: parent,
            to: id,
            phases: PhaseSet::abc(),
            z: z_diag(r, x),
        });
        let groups = if rng.gen_bool(config.group_probability) {
            vec![CustomerGroup {
                id: format!("g{id:02}"),
                size_kw: rng.gen_range(config.size_range.0..config.size_range.1),
            }]
        } else {
            Vec::new()
        };
        buses.push(Bus {
            id,
            phases: PhaseSet::abc(),
            groups,
        });
    }
    FeederTopology {
        base_kv: 4.16,
        base_mva: 1.0,
        slack_bus: 1,
        buses,
        branches,
    }
}

/// Balanced per-bus injections from per-group active powers (kW) at a fixed
/// power factor, spread equally over each bus's phases.
pub fn balanced_injections(
    topo: &FeederTopology,
    group_kw: &dyn Fn(&str) -> f64,
    power_factor: f64,
) -> Vec<[Phasor; 3]> {
    let tan_phi = (power_factor.acos()).tan();
    topo.buses
        .iter()
        .map(|bus| {
            let p_kw: f64 = bus.groups.iter().map(|g| group_kw(&g.id)).sum();
            let p_pu = topo.kw_to_pu(p_kw);
            let q_pu = p_pu * tan_phi;
            let n = bus.phases.len().max(1) as f64;
            let mut inj = [Complex::new(0.0, 0.0); 3];
            for p in bus.phases.iter() {
                inj[p.index()] = Phasor::new(p_pu / n, q_pu / n);
            }
            inj
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::topology::{validate_topology, Feeder};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent radiality oracle: recursive DFS that must visit every bus
    /// exactly once without revisiting.
    fn dfs_is_radial(topo: &FeederTopology) -> bool {
        use std::collections::{BTreeMap, BTreeSet};
        let mut adj: BTreeMap<u32, Vec<(u32, usize)>> = BTreeMap::new();
        for (bi, br) in topo.branches.iter().enumerate() {
            adj.entry(br.from).or_default().push((br.to, bi));
            adj.entry(br.to).or_default().push((br.from, bi));
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![(topo.slack_bus, usize::MAX)];
        seen.insert(topo.slack_bus);
        while let Some((u, via)) = stack.pop() {
            for &(v, bi) in adj.get(&u).into_iter().flatten() {
                if bi == via {
                    continue;
                }
                if !seen.insert(v) {
                    return false; // revisit => cycle
                }
                stack.push((v, bi));
            }
        }
        seen.len() == topo.buses.len()
    }

    #[test]
    fn thirteen_bus_feeder_validates() {
        let topo = thirteen_bus_feeder();
        assert!(validate_topology(&topo).ok());
        assert!(dfs_is_radial(&topo));
        assert_eq!(topo.buses.len(), 13);
        assert_eq!(topo.branches.len(), 12);
        assert_eq!(topo.group_ids().len(), 10);
        Feeder::new(topo).unwrap();
    }

    #[test]
    fn random_feeders_are_radial() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [2usize, 3, 8, 25] {
            let cfg = RandomFeederConfig {
                n_buses: n,
                ..Default::default()
            };
            let topo = random_radial_feeder(&cfg, &mut rng);
            assert!(validate_topology(&topo).ok(), "n={n}");
            assert!(dfs_is_radial(&topo), "n={n}");
        }
    }
}
