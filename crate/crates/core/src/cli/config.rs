//! Run configuration: a TOML file with named sections, plus `section.key=value`
//! overrides applied before deserialization.

use serde::{Deserialize, Serialize};

use crate::dirac::{ForcingKind, ForcingProfile, Scheme, StepControl};
use crate::flow::{MatrixScheme, MatrixStepControl};
use crate::potential::{make_canonical_honeycomb, FourierPotential};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub potential: PotentialSection,
    pub basis: BasisSection,
    pub forcing: ForcingSection,
    pub dirac: DiracSection,
    pub supercell: SupercellSection,
    pub scan: ScanSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialSection {
    /// `canonical` or `coefficients`.
    pub name: String,
    pub v0: f64,
    /// Rows `[m, n, re, im]`.
    pub coefficients: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSection {
    pub cutoff: u32,
    /// Cutoff for full monodromies, which are the expensive step.
    pub monodromy_cutoff: u32,
    pub bands: usize,
    pub samples_per_leg: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForcingSection {
    /// `circular`, `zero` or `table`.
    pub kind: String,
    pub r: f64,
    pub omega: f64,
    /// Required for `zero` and `table`; checked against `omega` when both are set.
    pub t_per: Option<f64>,
    pub samples: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiracSection {
    /// Band limit; `0` selects `0.25·μ(0)/v_D`.
    pub d0: f64,
    pub n_radial: usize,
    pub n_angular: usize,
    pub scheme: Scheme,
    pub tol: f64,
    pub wkb_xi: Vec<f64>,
    pub coverage_ladder: Vec<f64>,
    /// Ring spacing in units of `1/v_D`, so each ring advances the phase
    /// by the same amount whatever the velocity.
    pub coverage_step: f64,
    pub coverage_angles: usize,
    pub coverage_bins: usize,
    /// `v_D` for the coverage and WKB scans; `0` uses the measured value.
    pub coverage_v_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupercellSection {
    pub n: usize,
    pub m: usize,
    pub dt: f64,
    pub horizon_periods: usize,
    pub epsilon: f64,
    /// Envelope Fourier modes `[a, b, re1, im1, re2, im2]` on the torus
    /// `L = εN`.
    pub envelope: Vec<[f64; 6]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub epsilon: f64,
    /// Window half-width as a fraction of the effective gap `g̃`.
    pub window_fraction: f64,
    pub eps_list: Vec<f64>,
    pub rings: usize,
    pub per_ring: usize,
    pub xi: [f64; 2],
    pub scheme: MatrixScheme,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
    /// Any of `csv`, `json`.
    pub formats: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            potential: PotentialSection::default(),
            basis: BasisSection::default(),
            forcing: ForcingSection::default(),
            dirac: DiracSection::default(),
            supercell: SupercellSection::default(),
            scan: ScanSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl Default for PotentialSection {
    fn default() -> Self {
        PotentialSection { name: "canonical".into(), v0: 10.0, coefficients: Vec::new() }
    }
}

impl Default for BasisSection {
    fn default() -> Self {
        BasisSection { cutoff: 5, monodromy_cutoff: 3, bands: 8, samples_per_leg: 40 }
    }
}

impl Default for ForcingSection {
    fn default() -> Self {
        ForcingSection { kind: "circular".into(), r: 1.0, omega: 2.0, t_per: None, samples: Vec::new() }
    }
}

impl Default for DiracSection {
    fn default() -> Self {
        DiracSection {
            d0: 0.0,
            n_radial: 16,
            n_angular: 32,
            scheme: Scheme::Cf4,
            tol: 1e-10,
            wkb_xi: vec![10.0, 20.0, 40.0, 80.0, 160.0],
            coverage_ladder: (1..=40).map(|i| 0.25 * i as f64).collect(),
            coverage_step: 0.002,
            coverage_angles: 4,
            coverage_bins: 720,
            coverage_v_d: 1.0,
        }
    }
}

impl Default for SupercellSection {
    fn default() -> Self {
        SupercellSection {
            n: 3,
            m: 16,
            dt: 1e-3,
            horizon_periods: 1,
            epsilon: 0.125,
            envelope: vec![[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]],
        }
    }
}

impl Default for ScanSection {
    fn default() -> Self {
        ScanSection {
            epsilon: 0.125,
            window_fraction: 0.5,
            eps_list: vec![0.125, 0.0625, 0.03125],
            rings: 1,
            per_ring: 6,
            xi: [0.0, 0.0],
            scheme: MatrixScheme::Cf4,
            tol: 1e-4,
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { directory: "out".into(), formats: vec!["csv".into(), "json".into()] }
    }
}

/// Parse or validation failure, reported with exit code 65.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl RunConfig {
    /// Parses TOML text, applies `section.key=value` overrides, validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig =
            RunConfig::deserialize(toml::Value::Table(doc)).map_err(|e| ConfigError(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &str, why: &str| Err(ConfigError(format!("config field {field}: {why}")));
        let scalars = [
            ("potential.v0", self.potential.v0),
            ("forcing.r", self.forcing.r),
            ("forcing.omega", self.forcing.omega),
            ("dirac.d0", self.dirac.d0),
            ("dirac.tol", self.dirac.tol),
            ("dirac.coverage_step", self.dirac.coverage_step),
            ("dirac.coverage_v_d", self.dirac.coverage_v_d),
            ("supercell.dt", self.supercell.dt),
            ("supercell.epsilon", self.supercell.epsilon),
            ("scan.epsilon", self.scan.epsilon),
            ("scan.window_fraction", self.scan.window_fraction),
            ("scan.tol", self.scan.tol),
        ];
        for (name, x) in scalars {
            if !x.is_finite() {
                return bad(name, "must be finite");
            }
        }
        if let Some(t) = self.forcing.t_per {
            if !(t.is_finite() && t > 0.0) {
                return bad("forcing.t_per", "must be finite and positive");
            }
            if self.forcing.kind == "circular" && (t * self.forcing.omega - 2.0 * std::f64::consts::PI).abs() > 1e-9 {
                return bad("forcing.t_per", "T_per·omega must equal 2π");
            }
        }
        if self.scan.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return bad("scan.eps_list", "must be strictly decreasing");
        }
        if self.scan.eps_list.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return bad("scan.eps_list", "entries must be finite and positive");
        }
        if !["canonical", "coefficients"].contains(&self.potential.name.as_str()) {
            return bad("potential.name", "expected `canonical` or `coefficients`");
        }
        if !["circular", "zero", "table"].contains(&self.forcing.kind.as_str()) {
            return bad("forcing.kind", "expected `circular`, `zero` or `table`");
        }
        if self.potential.coefficients.iter().flatten().any(|x| !x.is_finite()) {
            return bad("potential.coefficients", "entries must be finite");
        }
        for f in &self.output.formats {
            if f != "csv" && f != "json" {
                return bad("output.formats", "expected `csv` and/or `json`");
            }
        }
        Ok(())
    }

    pub fn potential(&self) -> FourierPotential {
        match self.potential.name.as_str() {
            "coefficients" => FourierPotential::from_coefficients(
                self.potential
                    .coefficients
                    .iter()
                    .map(|r| ((r[0] as i32, r[1] as i32), num_complex::Complex64::new(r[2], r[3]))),
            ),
            _ => make_canonical_honeycomb(self.potential.v0),
        }
    }

    pub fn forcing(&self) -> crate::Result<ForcingProfile> {
        let f = &self.forcing;
        match f.kind.as_str() {
            "zero" => ForcingProfile::zero(f.t_per.unwrap_or(2.0 * std::f64::consts::PI / f.omega)),
            "table" => {
                let t = f.t_per.ok_or_else(|| crate::Error::refused("table forcing needs forcing.t_per"))?;
                ForcingProfile::new(t, ForcingKind::Tabulated { samples: f.samples.clone() })
            }
            _ => ForcingProfile::circular(f.r, f.omega),
        }
    }

    pub fn step_control(&self) -> StepControl {
        StepControl { scheme: self.dirac.scheme, tol: self.dirac.tol, ..StepControl::default() }
    }

    pub fn matrix_control(&self) -> MatrixStepControl {
        MatrixStepControl { scheme: self.scan.scheme, tol: self.scan.tol, ..MatrixStepControl::default() }
    }

    pub fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("override `{spec}`: expected section.key=value")))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| ConfigError(format!("override `{spec}`: expected section.key=value")))?;
    let raw = raw.trim();
    // values are TOML literals; bare words fall back to strings
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let sec = doc
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .ok_or_else(|| ConfigError(format!("override `{spec}`: `{section}` is not a section")))?;
    sec.insert(key.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let cfg = RunConfig::parse("[forcing]\nr = 0.5\n[scan]\neps_list = [0.2, 0.1]\n", &[]).unwrap();
        let again = RunConfig::parse(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.forcing.r, 0.5);
    }

    #[test]
    fn overrides_and_validation() {
        let cfg = RunConfig::parse("", &["forcing.omega=3.0".into(), "output.directory=results".into()]).unwrap();
        assert_eq!(cfg.forcing.omega, 3.0);
        assert_eq!(cfg.output.directory, "results");
        assert!(RunConfig::parse("", &["scan.eps_list=[0.1, 0.2]".into()]).is_err());
        assert!(RunConfig::parse("", &["forcing.t_per=1.0".into()]).is_err());
        let err = RunConfig::parse("[forcing]\nr = \"x\"\n", &[]).unwrap_err();
        assert!(err.0.contains("line") || err.0.contains("r"), "{}", err.0);
        assert!(RunConfig::parse("[nope]\na = 1\n", &[]).is_err());
    }
}
