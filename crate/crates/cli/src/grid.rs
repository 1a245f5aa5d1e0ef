//! Scenario grids such as `n=200,500:d=3,5:kind=null,alt2,alt4`.

use ellipkit::simharness::ScenarioKind;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub n: Vec<usize>,
    pub d: Vec<usize>,
    pub kinds: Vec<ScenarioKind>,
}

impl Grid {
    /// Cells in `n`, then `d`, then `kind` order.
    pub fn cells(&self) -> Vec<(usize, usize, ScenarioKind)> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &d in &self.d {
                for &kind in &self.kinds {
                    out.push((n, d, kind));
                }
            }
        }
        out
    }
}

fn parse_kind(s: &str) -> Result<ScenarioKind, String> {
    if s == "null" {
        return Ok(ScenarioKind::NullGaussian);
    }
    match s.strip_prefix("alt").map(str::parse::<u32>) {
        Some(Ok(df)) if df > 0 => Ok(ScenarioKind::AltChisq { df }),
        _ => Err(format!("unknown kind {s:?}; expected null or altDF such as alt2")),
    }
}

fn parse_list<T>(key: &str, values: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    let items: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if items.is_empty() {
        return Err(format!("grid key {key} has no values"));
    }
    items.into_iter().map(f).collect()
}

fn parse_size(s: &str) -> Result<usize, String> {
    s.parse().map_err(|_| format!("{s:?} is not a non-negative integer"))
}

pub fn parse_grid(spec: &str) -> Result<Grid, String> {
    let (mut n, mut d, mut kinds) = (None, None, None);
    for part in spec.split(':').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, values) = part
            .split_once('=')
            .ok_or_else(|| format!("grid segment {part:?} is not key=values"))?;
        let key = key.trim();
        let duplicate = match key {
            "n" => n.replace(parse_list(key, values, parse_size)?).is_some(),
            "d" => d.replace(parse_list(key, values, parse_size)?).is_some(),
            "kind" => kinds.replace(parse_list(key, values, parse_kind)?).is_some(),
            other => return Err(format!("unknown grid key {other:?}; expected n, d or kind")),
        };
        if duplicate {
            return Err(format!("grid key {key} given twice"));
        }
    }
    match (n, d, kinds) {
        (Some(n), Some(d), Some(kinds)) => Ok(Grid { n, d, kinds }),
        _ => Err("grid must give n=..., d=... and kind=...".into()),
    }
}
