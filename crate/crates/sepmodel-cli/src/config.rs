//! Run configuration: built-in defaults, then the TOML file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sepmodel::exterior::{EdgeBc, Grading, Variant};
use sepmodel::experiments::Scenario;
use sepmodel::mesh::Side;

/// Keys accepted in a config file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub n_ref: Option<u32>,
    pub lb: Option<f64>,
    pub ub: Option<f64>,
    pub radius: Option<f64>,
    pub n_nodes: Option<usize>,
    pub node_exponent: Option<f64>,
    pub refine: Option<usize>,
    pub alpha: Option<f64>,
    pub omega: Option<f64>,
    pub models: Option<Vec<String>>,
    pub table_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub scenario: Option<String>,
    pub probe: Option<[f64; 2]>,
    pub alphas: Option<Vec<f64>>,
    pub h_inner: Option<f64>,
    pub rim_segments: Option<usize>,
    pub flip_samples: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Flag values; `None` keeps the config or default value.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub n_ref: Option<u32>,
    pub table_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub scenario: Option<String>,
    pub alpha: Option<f64>,
    pub omega: Option<f64>,
    pub models: Option<Vec<String>>,
}

/// Effective configuration, echoed into every JSON summary.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub n_ref: u32,
    pub lb: f64,
    pub ub: f64,
    pub radius: f64,
    pub n_nodes: usize,
    pub node_exponent: f64,
    pub refine: usize,
    pub alpha: f64,
    pub omega: f64,
    pub models: Vec<String>,
    pub table_dir: PathBuf,
    pub out_dir: PathBuf,
    pub scenario: String,
    pub probe: [f64; 2],
    pub alphas: Vec<f64>,
    pub h_inner: f64,
    pub rim_segments: usize,
    pub flip_samples: usize,
    /// Worker count does not change results and stays out of the hash.
    #[serde(skip)]
    pub threads: usize,
    #[serde(skip)]
    pub n_ref_explicit: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = Grading::default();
        RunConfig {
            n_ref: 5,
            lb: 1.0,
            ub: 1000.0,
            radius: 30.0,
            n_nodes: 16,
            node_exponent: -0.5,
            refine: 3,
            alpha: -0.5,
            omega: 7.5,
            models: ["smwdiag", "smwapprox", "tdcirc", "linear", "mma(0)", "mma(-5)", "mma(-10)"]
                .map(String::from)
                .to_vec(),
            table_dir: PathBuf::from("tables"),
            out_dir: PathBuf::from("out"),
            scenario: "homogeneous:1".into(),
            probe: [0.5, 0.25],
            alphas: vec![-2.0, -1.0, -0.5, -0.2, 0.5, 1.0],
            h_inner: g.h_inner,
            rim_segments: g.rim_segments,
            flip_samples: 50,
            threads: 0,
            n_ref_explicit: false,
        }
    }
}

impl RunConfig {
    pub fn resolve(file: Option<FileConfig>, flags: &Overrides) -> Result<Self> {
        let mut c = RunConfig::default();
        if let Some(f) = file {
            macro_rules! take {
                ($($field:ident),*) => { $( if let Some(v) = f.$field { c.$field = v; } )* };
            }
            c.n_ref_explicit = f.n_ref.is_some();
            take!(n_ref, lb, ub, radius, n_nodes, node_exponent, refine, alpha, omega, models, table_dir, out_dir,
                threads, scenario, probe, alphas, h_inner, rim_segments, flip_samples);
        }
        if let Some(v) = flags.n_ref {
            c.n_ref = v;
            c.n_ref_explicit = true;
        }
        if let Some(v) = &flags.table_dir {
            c.table_dir = v.clone();
        }
        if let Some(v) = &flags.out_dir {
            c.out_dir = v.clone();
        }
        if let Some(v) = flags.threads {
            c.threads = v;
        }
        if let Some(v) = &flags.scenario {
            c.scenario = v.clone();
        }
        if let Some(v) = flags.alpha {
            c.alpha = v;
        }
        if let Some(v) = flags.omega {
            c.omega = v;
        }
        if let Some(v) = &flags.models {
            c.models = v.clone();
        }
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lb > 0.0 && self.lb < self.ub) {
            bail!("bounds must satisfy 0 < lb < ub, got [{}, {}]", self.lb, self.ub);
        }
        if self.n_nodes < 2 {
            bail!("n_nodes must be at least 2");
        }
        for m in &self.models {
            m.parse::<sepmodel::models::ModelKind>().with_context(|| format!("model list entry {m:?}"))?;
        }
        self.parse_scenario()?;
        Ok(())
    }

    /// Short SHA-256 digest of the effective configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn grading(&self) -> Grading {
        Grading { h_inner: self.h_inner, rim_segments: self.rim_segments }
    }

    /// `homogeneous[:v]`, `radial[:r1,r2,cx,cy]` or `custom:PATH`.
    pub fn parse_scenario(&self) -> Result<Scenario> {
        let (name, arg) = match self.scenario.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (self.scenario.trim(), None),
        };
        Ok(match (name, arg) {
            ("homogeneous", None) => Scenario::Homogeneous(self.lb),
            ("homogeneous", Some(v)) => Scenario::Homogeneous(v.parse().context("homogeneous value")?),
            ("radial", None) => Scenario::radial_default(self.lb, self.ub),
            ("radial", Some(a)) => {
                let v: Vec<f64> = a.split(',').map(|x| x.trim().parse()).collect::<std::result::Result<_, _>>()?;
                if v.len() != 4 {
                    bail!("radial scenario takes r1,r2,cx,cy");
                }
                Scenario::Radial { r1: v[0], r2: v[1], center: [v[2], v[3]], inner: self.ub, outer: self.lb }
            }
            ("custom", Some(p)) => Scenario::Custom(read_values(Path::new(p))?),
            _ => bail!("unknown scenario {:?}; use homogeneous[:v], radial[:r1,r2,cx,cy] or custom:PATH", self.scenario),
        })
    }

    /// Whether the scenario is the homogeneous field with value `v`.
    pub fn is_homogeneous(&self, v: f64) -> bool {
        matches!(self.parse_scenario(), Ok(Scenario::Homogeneous(x)) if x == v)
    }

    pub fn is_default_radial(&self) -> bool {
        matches!(self.parse_scenario(), Ok(s) if s == Scenario::radial_default(self.lb, self.ub))
    }

    /// The reference table settings.
    pub fn standard_nodes(&self) -> bool {
        self.n_nodes == 16 && self.lb == 1.0 && self.ub == 1000.0 && self.node_exponent == -0.5 && self.radius == 30.0
    }
}

/// One value per line; the last comma-separated field counts, so design
/// files written by `binary-step` can be read back. Non-numeric lines are skipped.
fn read_values(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .filter_map(|l| l.rsplit(',').next().and_then(|x| x.trim().parse().ok()))
        .collect())
}

pub fn variant_name(v: Variant) -> String {
    match v {
        Variant::Interior => "interior".into(),
        Variant::Boundary { side, bc } => format!("{}-{}", side_name(side), bc_name(bc)),
    }
}

pub fn parse_variant(s: &str) -> Result<Variant> {
    if s == "interior" {
        return Ok(Variant::Interior);
    }
    let (side, bc) = s.split_once('-').with_context(|| format!("variant {s:?}: expected interior or SIDE-BC"))?;
    let bc = match bc {
        "dirichlet" => EdgeBc::Dirichlet,
        "neumann" => EdgeBc::Neumann,
        _ => bail!("unknown boundary condition {bc:?}"),
    };
    Ok(Variant::Boundary { side: parse_side(side)?, bc })
}

pub fn parse_side(s: &str) -> Result<Side> {
    Ok(match s {
        "left" => Side::Left,
        "bottom" => Side::Bottom,
        "right" => Side::Right,
        "top" => Side::Top,
        _ => bail!("unknown side {s:?}"),
    })
}

pub fn side_name(s: Side) -> &'static str {
    match s {
        Side::Left => "left",
        Side::Bottom => "bottom",
        Side::Right => "right",
        Side::Top => "top",
    }
}

fn bc_name(b: EdgeBc) -> &'static str {
    match b {
        EdgeBc::Dirichlet => "dirichlet",
        EdgeBc::Neumann => "neumann",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: FileConfig = toml::from_str("n_ref = 3\nomega = 2.0\nscenario = \"radial\"").unwrap();
        let flags = Overrides { omega: Some(4.0), ..Default::default() };
        let c = RunConfig::resolve(Some(file), &flags).unwrap();
        assert_eq!(c.n_ref, 3);
        assert_eq!(c.omega, 4.0);
        assert!(c.n_ref_explicit);
        assert!(c.is_default_radial());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("nref = 3").is_err());
    }

    #[test]
    fn hash_tracks_content_not_threads() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.threads = 7;
        assert_eq!(a.hash(), b.hash());
        b.omega = 1.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn variants_roundtrip() {
        for s in ["interior", "top-neumann", "left-dirichlet"] {
            assert_eq!(variant_name(parse_variant(s).unwrap()), s);
        }
        assert!(parse_variant("top").is_err());
    }

    #[test]
    fn scenarios_parse() {
        let mut c = RunConfig::default();
        assert!(c.is_homogeneous(1.0));
        c.scenario = "radial:0.1,0.3,0.5,0.5".into();
        assert!(matches!(c.parse_scenario().unwrap(), Scenario::Radial { r1, .. } if r1 == 0.1));
        c.scenario = "spiral".into();
        assert!(c.parse_scenario().is_err());
    }
}
