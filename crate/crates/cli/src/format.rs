//! On-disk JSON formats: MDP files, θ files, baseline tables and feature tables.

use std::fs;
use std::io;
use std::path::Path;

use pgcompat_core::{FeatureTable, Mdp, MdpTables};
use serde::{Deserialize, Serialize};

use crate::report::to_json_string;

/// Failure to read or interpret an input file. Always an input error.
#[derive(Debug)]
pub struct FormatError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for FormatError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for FormatError {}

fn err(path: &Path, message: impl Into<String>) -> FormatError {
    FormatError {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|e| err(path, e.to_string()))
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, FormatError> {
    // serde_json's message already carries "at line L column C".
    serde_json::from_str(text).map_err(|e| err(path, format!("parse error: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    pub terminal: Vec<bool>,
}

impl MdpFile {
    pub fn from_mdp(mdp: &Mdp) -> Self {
        let t = mdp.tables();
        let (ns, na) = (t.num_states, t.num_actions);
        Self {
            num_states: ns,
            num_actions: na,
            gamma: t.gamma,
            transition: (0..ns)
                .map(|s| (0..na).map(|a| mdp.transition_row(s, a).to_vec()).collect())
                .collect(),
            reward: t.reward.chunks(na).map(<[f64]>::to_vec).collect(),
            initial: t.initial.clone(),
            terminal: t.terminal.clone(),
        }
    }

    /// Flattens nested arrays, reporting ragged rows by position.
    pub fn to_tables(&self) -> Result<MdpTables, String> {
        let (ns, na) = (self.num_states, self.num_actions);
        if self.transition.len() != ns {
            return Err(format!(
                "transition has {} rows, expected {ns}",
                self.transition.len()
            ));
        }
        let mut transition = Vec::with_capacity(ns * na * ns);
        for (s, per_action) in self.transition.iter().enumerate() {
            if per_action.len() != na {
                return Err(format!(
                    "transition[{s}] has {} actions, expected {na}",
                    per_action.len()
                ));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != ns {
                    return Err(format!(
                        "transition[{s}][{a}] has length {}, expected {ns}",
                        row.len()
                    ));
                }
                transition.extend_from_slice(row);
            }
        }
        let reward = flatten_2d("reward", &self.reward, ns, na)?;
        Ok(MdpTables {
            num_states: ns,
            num_actions: na,
            transition,
            reward,
            gamma: self.gamma,
            initial: self.initial.clone(),
            terminal: self.terminal.clone(),
        })
    }
}

fn flatten_2d(name: &str, rows: &[Vec<f64>], ns: usize, na: usize) -> Result<Vec<f64>, String> {
    if rows.len() != ns {
        return Err(format!("{name} has {} rows, expected {ns}", rows.len()));
    }
    let mut out = Vec::with_capacity(ns * na);
    for (s, row) in rows.iter().enumerate() {
        if row.len() != na {
            return Err(format!(
                "{name}[{s}] has length {}, expected {na}",
                row.len()
            ));
        }
        out.extend_from_slice(row);
    }
    Ok(out)
}

/// Reads and validates an MDP. Every violation is listed in the error.
pub fn load_mdp(path: &Path) -> Result<Mdp, FormatError> {
    let file: MdpFile = parse(path, &read(path)?)?;
    let tables = file.to_tables().map_err(|m| err(path, m))?;
    Mdp::try_new(tables).map_err(|e| err(path, e.to_string()))
}

pub fn mdp_to_json(mdp: &Mdp) -> String {
    to_json_string(&MdpFile::from_mdp(mdp))
}

pub fn write_text(path: &Path, text: &str) -> io::Result<()> {
    fs::write(path, text)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ThetaFile {
    Flat(Vec<f64>),
    Wrapped { theta: Vec<f64> },
}

/// θ as a flat array, or `{"theta": [...]}`.
pub fn load_theta(path: &Path) -> Result<Vec<f64>, FormatError> {
    let parsed: ThetaFile = parse(path, &read(path)?)?;
    Ok(match parsed {
        ThetaFile::Flat(t) | ThetaFile::Wrapped { theta: t } => t,
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BaselineFile {
    Bare(Vec<Vec<f64>>),
    Wrapped { baseline: Vec<Vec<f64>> },
}

/// A `[s][a]` table, bare or as `{"baseline": [[...]]}`; returned flat.
pub fn load_baseline_table(path: &Path, ns: usize, na: usize) -> Result<Vec<f64>, FormatError> {
    let parsed: BaselineFile = parse(path, &read(path)?)?;
    let rows = match parsed {
        BaselineFile::Bare(r) | BaselineFile::Wrapped { baseline: r } => r,
    };
    flatten_2d("baseline", &rows, ns, na).map_err(|m| err(path, m))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FeatureFile {
    Bare(Vec<Vec<Vec<f64>>>),
    Wrapped { features: Vec<Vec<Vec<f64>>> },
}

/// A `[s][a][k]` feature table, bare or as `{"features": [[[...]]]}`.
pub fn load_features(path: &Path, ns: usize, na: usize) -> Result<FeatureTable, FormatError> {
    let parsed: FeatureFile = parse(path, &read(path)?)?;
    let rows = match parsed {
        FeatureFile::Bare(r) | FeatureFile::Wrapped { features: r } => r,
    };
    let dim = rows.first().and_then(|r| r.first()).map_or(0, Vec::len);
    if rows.len() != ns {
        return Err(err(
            path,
            format!("features has {} rows, expected {ns}", rows.len()),
        ));
    }
    let mut data = Vec::with_capacity(ns * na * dim);
    for (s, per_action) in rows.iter().enumerate() {
        if per_action.len() != na {
            return Err(err(
                path,
                format!(
                    "features[{s}] has {} actions, expected {na}",
                    per_action.len()
                ),
            ));
        }
        for (a, phi) in per_action.iter().enumerate() {
            if phi.len() != dim {
                return Err(err(
                    path,
                    format!(
                        "features[{s}][{a}] has length {}, expected {dim}",
                        phi.len()
                    ),
                ));
            }
            data.extend_from_slice(phi);
        }
    }
    FeatureTable::new(ns, na, dim, data).map_err(|e| err(path, e.to_string()))
}
