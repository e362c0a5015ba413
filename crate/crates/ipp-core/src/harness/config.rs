//! Line-oriented `key=value` configuration files for experiments and
//! synthetic map specs. Unknown keys are rejected; every diagnostic carries
//! its line number.

use std::path::PathBuf;

use thiserror::Error;

use crate::grid::GridCoord;
use crate::planner::PlannerParams;
use crate::terrain::{SyntheticClass, SyntheticMapSpec, DEFAULT_CELL_SIZE_PX};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("config: missing required key `{0}`")]
    Missing(&'static str),
    #[error("config: {0}")]
    Invalid(String),
}

/// Which planner drives the data-collection missions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlannerKind {
    Ipp,
    BigLawnmower,
    SmallLawnmower,
}

impl PlannerKind {
    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::Ipp => "ipp",
            PlannerKind::BigLawnmower => "big_lawnmower",
            PlannerKind::SmallLawnmower => "small_lawnmower",
        }
    }

    fn parse(text: &str) -> Option<Self> {
        match text {
            "ipp" => Some(PlannerKind::Ipp),
            "big_lawnmower" => Some(PlannerKind::BigLawnmower),
            "small_lawnmower" => Some(PlannerKind::SmallLawnmower),
            _ => None,
        }
    }
}

/// Where the world comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MapSource {
    /// A saved map bundle directory.
    Bundle(PathBuf),
    /// A synthetic spec file plus generation seed.
    Synthetic { spec_path: PathBuf, seed: u64 },
}

/// Fully parsed experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub map_source: MapSource,
    pub planner: PlannerKind,
    pub missions: usize,
    pub budget: usize,
    /// One start per mission; a single entry repeats for every mission.
    pub starts: Vec<GridCoord>,
    pub k: usize,
    pub params: PlannerParams,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Start position of mission `m` (1-based).
    pub fn start_for_mission(&self, mission: usize) -> GridCoord {
        if self.starts.len() == 1 {
            self.starts[0]
        } else {
            self.starts[mission - 1]
        }
    }
}

struct LineParser<'a> {
    line: usize,
    raw: &'a str,
}

impl LineParser<'_> {
    fn err(&self, message: impl Into<String>) -> ConfigError {
        ConfigError::Line {
            line: self.line,
            message: message.into(),
        }
    }

    fn value<T: std::str::FromStr>(&self, value: &str, what: &str) -> Result<T, ConfigError> {
        value
            .trim()
            .parse()
            .map_err(|_| self.err(format!("invalid {what}: {value:?}")))
    }
}

fn lines(text: &str) -> impl Iterator<Item = (LineParser<'_>, &str, &str)> {
    text.lines().enumerate().filter_map(|(idx, raw)| {
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            return None;
        }
        let parser = LineParser {
            line: idx + 1,
            raw: trimmed,
        };
        match trimmed.split_once('=') {
            Some((key, value)) => Some((parser, key.trim(), value.trim())),
            None => Some((parser, "", "")),
        }
    })
}

/// Parse an experiment config. Defaults: `k=20`, `f0=0.5`, `c_visited=2.0`,
/// `c_border=1.0`, `border_radius=2`, `w_grad=0.5`, `c_forward=0.5`.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut map_path: Option<PathBuf> = None;
    let mut spec_path: Option<PathBuf> = None;
    let mut seed: Option<u64> = None;
    let mut planner: Option<PlannerKind> = None;
    let mut missions: Option<usize> = None;
    let mut budget: Option<usize> = None;
    let mut starts: Vec<GridCoord> = Vec::new();
    let mut k: Option<usize> = None;
    let mut params = PlannerParams::default();
    let mut out_dir: Option<PathBuf> = None;

    fn set_once<T>(
        slot: &mut Option<T>,
        value: T,
        parser: &LineParser<'_>,
        key: &str,
    ) -> Result<(), ConfigError> {
        if slot.is_some() {
            return Err(parser.err(format!("duplicate key `{key}`")));
        }
        *slot = Some(value);
        Ok(())
    }

    for (parser, key, value) in lines(text) {
        if key.is_empty() {
            return Err(parser.err(format!("expected key=value, got {:?}", parser.raw)));
        }
        match key {
            "map" => set_once(&mut map_path, PathBuf::from(value), &parser, key)?,
            "synthetic_spec" => set_once(&mut spec_path, PathBuf::from(value), &parser, key)?,
            "seed" => set_once(&mut seed, parser.value(value, "seed")?, &parser, key)?,
            "planner" => {
                let kind = PlannerKind::parse(value)
                    .ok_or_else(|| parser.err(format!("unknown planner {value:?}")))?;
                set_once(&mut planner, kind, &parser, key)?;
            }
            "missions" => {
                let m: usize = parser.value(value, "missions")?;
                if m == 0 {
                    return Err(parser.err("missions must be at least 1"));
                }
                set_once(&mut missions, m, &parser, key)?;
            }
            "budget" => set_once(&mut budget, parser.value(value, "budget")?, &parser, key)?,
            "start" => {
                let (row, col) = value.split_once(',').ok_or_else(|| {
                    parser.err(format!("expected start=<row>,<col>, got {value:?}"))
                })?;
                starts.push(GridCoord::new(
                    parser.value(row, "start row")?,
                    parser.value(col, "start col")?,
                ));
            }
            "k" => {
                let v: usize = parser.value(value, "k")?;
                if v == 0 {
                    return Err(parser.err("k must be at least 1"));
                }
                set_once(&mut k, v, &parser, key)?;
            }
            "f0" => params.prior_familiarity = parser.value(value, "f0")?,
            "c_visited" => params.visited_penalty = parser.value(value, "c_visited")?,
            "c_border" => params.border_penalty = parser.value(value, "c_border")?,
            "border_radius" => params.border_radius = parser.value(value, "border_radius")?,
            "w_grad" => params.gradient_weight = parser.value(value, "w_grad")?,
            "c_forward" => params.forward_penalty = parser.value(value, "c_forward")?,
            "out" => set_once(&mut out_dir, PathBuf::from(value), &parser, key)?,
            other => return Err(parser.err(format!("unknown key `{other}`"))),
        }
    }

    let map_source = match (map_path, spec_path) {
        (Some(_), Some(_)) => {
            return Err(ConfigError::Invalid(
                "`map` and `synthetic_spec` are mutually exclusive".into(),
            ))
        }
        (Some(path), None) => {
            if seed.is_some() {
                return Err(ConfigError::Invalid(
                    "`seed` is only valid with `synthetic_spec`".into(),
                ));
            }
            MapSource::Bundle(path)
        }
        (None, Some(spec_path)) => MapSource::Synthetic {
            spec_path,
            seed: seed.ok_or(ConfigError::Missing("seed"))?,
        },
        (None, None) => return Err(ConfigError::Missing("map or synthetic_spec")),
    };
    let missions = missions.ok_or(ConfigError::Missing("missions"))?;
    if starts.is_empty() {
        return Err(ConfigError::Missing("start"));
    }
    if starts.len() != 1 && starts.len() != missions {
        return Err(ConfigError::Invalid(format!(
            "{} start positions for {} missions (give 1 or one per mission)",
            starts.len(),
            missions
        )));
    }
    Ok(ExperimentConfig {
        map_source,
        planner: planner.ok_or(ConfigError::Missing("planner"))?,
        missions,
        budget: budget.ok_or(ConfigError::Missing("budget"))?,
        starts,
        k: k.unwrap_or(20),
        params,
        out_dir,
    })
}

/// Serialize a config back to the file format; `parse_config` of the result
/// yields an equal config.
pub fn serialize_config(config: &ExperimentConfig) -> String {
    let mut out = String::new();
    match &config.map_source {
        MapSource::Bundle(path) => out.push_str(&format!("map={}\n", path.display())),
        MapSource::Synthetic { spec_path, seed } => {
            out.push_str(&format!("synthetic_spec={}\n", spec_path.display()));
            out.push_str(&format!("seed={seed}\n"));
        }
    }
    out.push_str(&format!("planner={}\n", config.planner.name()));
    out.push_str(&format!("missions={}\n", config.missions));
    out.push_str(&format!("budget={}\n", config.budget));
    for start in &config.starts {
        out.push_str(&format!("start={},{}\n", start.row, start.col));
    }
    out.push_str(&format!("k={}\n", config.k));
    out.push_str(&format!("f0={}\n", config.params.prior_familiarity));
    out.push_str(&format!("c_visited={}\n", config.params.visited_penalty));
    out.push_str(&format!("c_border={}\n", config.params.border_penalty));
    out.push_str(&format!("border_radius={}\n", config.params.border_radius));
    out.push_str(&format!("w_grad={}\n", config.params.gradient_weight));
    out.push_str(&format!("c_forward={}\n", config.params.forward_penalty));
    if let Some(dir) = &config.out_dir {
        out.push_str(&format!("out={}\n", dir.display()));
    }
    out
}

/// Parse a synthetic map spec file. Required: `grid_rows`, `grid_cols`,
/// `region_seeds`, and at least one `class=<name>:<r>,<g>,<b>` line (class
/// ids follow file order). Optional: `cell_size` (default 128), `noise`
/// (default 0), `rare_fraction` (rare class = last listed).
pub fn parse_synthetic_spec(text: &str) -> Result<SyntheticMapSpec, ConfigError> {
    let mut grid_rows: Option<usize> = None;
    let mut grid_cols: Option<usize> = None;
    let mut cell_size: Option<usize> = None;
    let mut noise: Option<u8> = None;
    let mut region_seeds: Option<usize> = None;
    let mut rare_fraction: Option<f64> = None;
    let mut classes: Vec<SyntheticClass> = Vec::new();

    for (parser, key, value) in lines(text) {
        match key {
            "grid_rows" => grid_rows = Some(parser.value(value, "grid_rows")?),
            "grid_cols" => grid_cols = Some(parser.value(value, "grid_cols")?),
            "cell_size" => cell_size = Some(parser.value(value, "cell_size")?),
            "noise" => noise = Some(parser.value(value, "noise")?),
            "region_seeds" => region_seeds = Some(parser.value(value, "region_seeds")?),
            "rare_fraction" => rare_fraction = Some(parser.value(value, "rare_fraction")?),
            "class" => {
                let (name, rgb) = value
                    .split_once(':')
                    .ok_or_else(|| parser.err("expected class=<name>:<r>,<g>,<b>"))?;
                let parts: Vec<&str> = rgb.split(',').collect();
                if parts.len() != 3 {
                    return Err(parser.err("expected three comma-separated channel values"));
                }
                let mut mean_rgb = [0u8; 3];
                for (slot, part) in mean_rgb.iter_mut().zip(&parts) {
                    *slot = parser.value(part, "channel value")?;
                }
                classes.push(SyntheticClass {
                    name: name.trim().to_string(),
                    mean_rgb,
                });
            }
            "" => return Err(parser.err(format!("expected key=value, got {:?}", parser.raw))),
            other => return Err(parser.err(format!("unknown key `{other}`"))),
        }
    }

    if classes.is_empty() {
        return Err(ConfigError::Missing("class"));
    }
    Ok(SyntheticMapSpec {
        grid_rows: grid_rows.ok_or(ConfigError::Missing("grid_rows"))?,
        grid_cols: grid_cols.ok_or(ConfigError::Missing("grid_cols"))?,
        cell_size_px: cell_size.unwrap_or(DEFAULT_CELL_SIZE_PX),
        classes,
        noise_amplitude: noise.unwrap_or(0),
        region_seeds: region_seeds.ok_or(ConfigError::Missing("region_seeds"))?,
        rare_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
map=worlds/site_a
planner=ipp
missions=3
budget=40
start=2,2
";

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let config = parse_config(MINIMAL).unwrap();
        assert_eq!(config.k, 20);
        assert_eq!(config.params.prior_familiarity, 0.5);
        assert_eq!(config.params.visited_penalty, 2.0);
        assert_eq!(config.params.border_penalty, 1.0);
        assert_eq!(config.params.border_radius, 2);
        assert_eq!(config.params.gradient_weight, 0.5);
        assert_eq!(config.params.forward_penalty, 0.5);
        assert_eq!(config.starts, vec![GridCoord::new(2, 2)]);
        assert_eq!(config.start_for_mission(3), GridCoord::new(2, 2));
        assert!(config.out_dir.is_none());
    }

    #[test]
    fn zero_k_reports_its_line() {
        let text = format!("{MINIMAL}k=0\n");
        match parse_config(&text).unwrap_err() {
            ConfigError::Line { line, message } => {
                assert_eq!(line, 6);
                assert!(message.contains('k'), "{message}");
            }
            other => panic!("expected line error, got {other}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}warp_speed=9\n");
        assert!(matches!(
            parse_config(&text),
            Err(ConfigError::Line { line: 6, .. })
        ));
    }

    #[test]
    fn serialization_round_trips() {
        let text = "\
synthetic_spec=spec.txt
seed=7
planner=big_lawnmower
missions=2
budget=10
start=0,0
start=3,4
k=5
f0=0.25
out=results
";
        let config = parse_config(text).unwrap();
        let reparsed = parse_config(&serialize_config(&config)).unwrap();
        assert_eq!(config, reparsed);
    }

    #[test]
    fn synthetic_source_requires_seed() {
        let text = "\
synthetic_spec=spec.txt
planner=ipp
missions=1
budget=5
start=0,0
";
        assert!(matches!(
            parse_config(text),
            Err(ConfigError::Missing("seed"))
        ));
    }

    #[test]
    fn start_count_must_match_missions() {
        let text = "\
map=w
planner=ipp
missions=3
budget=5
start=0,0
start=1,1
";
        assert!(matches!(parse_config(text), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn map_and_synthetic_spec_conflict() {
        let text = "\
map=w
synthetic_spec=s
seed=1
planner=ipp
missions=1
budget=5
start=0,0
";
        assert!(matches!(parse_config(text), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn synthetic_spec_file_parses() {
        let text = "\
# four-class world
grid_rows=32
grid_cols=30
class=grass:60,170,60
class=beach:210,180,90
class=other:150,60,60
class=tree:70,110,200
noise=8
region_seeds=24
rare_fraction=0.05
";
        let spec = parse_synthetic_spec(text).unwrap();
        assert_eq!(spec.grid_rows, 32);
        assert_eq!(spec.grid_cols, 30);
        assert_eq!(spec.cell_size_px, 128);
        assert_eq!(spec.classes.len(), 4);
        assert_eq!(spec.classes[3].name, "tree");
        assert_eq!(spec.noise_amplitude, 8);
        assert_eq!(spec.rare_fraction, Some(0.05));
    }

    #[test]
    fn synthetic_spec_rejects_malformed_class_lines() {
        let text = "\
grid_rows=4
grid_cols=4
region_seeds=2
class=grass:60,170
";
        assert!(matches!(
            parse_synthetic_spec(text),
            Err(ConfigError::Line { line: 4, .. })
        ));
    }
}
