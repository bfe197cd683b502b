use std::path::Path;

use crate::grid::Phase;

use super::BcseError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementKind {
    CustomerP,
    CustomerQ,
    SubstationVPmu,
    FlowP,
    FlowQ,
}

impl MeasurementKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MeasurementKind::CustomerP => "customer_P",
            MeasurementKind::CustomerQ => "customer_Q",
            MeasurementKind::SubstationVPmu => "substation_V_pmu",
            MeasurementKind::FlowP => "flow_P",
            MeasurementKind::FlowQ => "flow_Q",
        }
    }

    pub fn parse(s: &str) -> Option<MeasurementKind> {
        match s {
            "customer_P" => Some(MeasurementKind::CustomerP),
            "customer_Q" => Some(MeasurementKind::CustomerQ),
            "substation_V_pmu" => Some(MeasurementKind::SubstationVPmu),
            "flow_P" => Some(MeasurementKind::FlowP),
            "flow_Q" => Some(MeasurementKind::FlowQ),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementLocation {
    Bus(u32),
    /// Branch endpoints as declared; orientation is resolved by the model.
    Branch(u32, u32),
}

impl std::fmt::Display for MeasurementLocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MeasurementLocation::Bus(id) => write!(f, "{id}"),
            MeasurementLocation::Branch(a, b) => write!(f, "{a}-{b}"),
        }
    }
}

impl MeasurementLocation {
    pub fn parse(s: &str) -> Option<MeasurementLocation> {
        if let Some((a, b)) = s.split_once('-') {
            Some(MeasurementLocation::Branch(
                a.trim().parse().ok()?,
                b.trim().parse().ok()?,
            ))
        } else {
            Some(MeasurementLocation::Bus(s.trim().parse().ok()?))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementSource {
    Meter,
    Pmu,
    Pseudo,
}

impl MeasurementSource {
    pub fn as_str(self) -> &'static str {
        match self {
            MeasurementSource::Meter => "meter",
            MeasurementSource::Pmu => "pmu",
            MeasurementSource::Pseudo => "pseudo",
        }
    }

    pub fn parse(s: &str) -> Option<MeasurementSource> {
        match s {
            "meter" => Some(MeasurementSource::Meter),
            "pmu" => Some(MeasurementSource::Pmu),
            "pseudo" => Some(MeasurementSource::Pseudo),
            _ => None,
        }
    }
}

/// One (pseudo-)measurement in per-unit. `phase: None` means a three-phase
/// total for power kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub kind: MeasurementKind,
    pub location: MeasurementLocation,
    pub phase: Option<Phase>,
    pub z: f64,
    pub sigma: f64,
    pub source: MeasurementSource,
}

pub const MEASUREMENT_HEADER: [&str; 6] =
    ["kind", "location", "phase", "value_pu", "sigma_pu", "source"];

pub fn save_measurement_csv(
    measurements: &[Measurement],
    path: &Path,
    provenance: Option<&str>,
) -> Result<(), BcseError> {
    let mut out = String::new();
    if let Some(p) = provenance {
        out.push_str(&format!("# {p}\n"));
    }
    out.push_str(&MEASUREMENT_HEADER.join(","));
    out.push('\n');
    for m in measurements {
        let phase = m.phase.map(|p| p.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{phase},{:.12e},{:.12e},{}\n",
            m.kind.as_str(),
            m.location,
            m.z,
            m.sigma,
            m.source.as_str()
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_measurement_csv(path: &Path) -> Result<Vec<Measurement>, BcseError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| BcseError::Csv("empty file".into()))?;
    if header.split(',').collect::<Vec<_>>() != MEASUREMENT_HEADER {
        return Err(BcseError::Csv(format!("bad header '{header}'")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(BcseError::Csv(format!("row {}: expected 6 fields", i + 1)));
        }
        let kind = MeasurementKind::parse(fields[0])
            .ok_or_else(|| BcseError::Csv(format!("row {}: bad kind '{}'", i + 1, fields[0])))?;
        let location = MeasurementLocation::parse(fields[1])
            .ok_or_else(|| BcseError::Csv(format!("row {}: bad location '{}'", i + 1, fields[1])))?;
        let phase = match fields[2].trim() {
            "" => None,
            s => Some(
                Phase::from_char(s.chars().next().unwrap())
                    .ok_or_else(|| BcseError::Csv(format!("row {}: bad phase '{s}'", i + 1)))?,
            ),
        };
        let z: f64 = fields[3]
            .trim()
            .parse()
            .map_err(|e| BcseError::Csv(format!("row {}: bad value: {e}", i + 1)))?;
        let sigma: f64 = fields[4]
            .trim()
            .parse()
            .map_err(|e| BcseError::Csv(format!("row {}: bad sigma: {e}", i + 1)))?;
        let source = MeasurementSource::parse(fields[5].trim())
            .ok_or_else(|| BcseError::Csv(format!("row {}: bad source '{}'", i + 1, fields[5])))?;
        if sigma <= 0.0 {
            return Err(BcseError::BadSigma(sigma));
        }
        out.push(Measurement {
            kind,
            location,
            phase,
            z,
            sigma,
            source,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let ms = vec![
            Measurement {
                kind: MeasurementKind::CustomerP,
                location: MeasurementLocation::Bus(4),
                phase: Some(Phase::B),
                z: 0.0123,
                sigma: 1e-4,
                source: MeasurementSource::Pseudo,
            },
            Measurement {
                kind: MeasurementKind::FlowQ,
                location: MeasurementLocation::Branch(3, 6),
                phase: None,
                z: -0.4,
                sigma: 2e-3,
                source: MeasurementSource::Meter,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        save_measurement_csv(&ms, &path, Some("manifest_sha256=x")).unwrap();
        let back = load_measurement_csv(&path).unwrap();
        assert_eq!(ms, back);
    }

    #[test]
    fn nonpositive_sigma_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(
            &path,
            "kind,location,phase,value_pu,sigma_pu,source\ncustomer_P,4,a,1.0,0.0,meter\n",
        )
        .unwrap();
        assert!(matches!(
            load_measurement_csv(&path),
            Err(BcseError::BadSigma(_))
        ));
    }
}
