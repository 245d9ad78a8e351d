//! One-axis parameter sweeps over a base run config.

use std::str::FromStr;

use crate::config::RunConfig;
use crate::error::{PalError, Result};
use crate::harness::run_pal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    NumTasks,
    MissingRate,
    UpDim,
    Reg,
    PoolSize,
    PromptLength,
    PromptLayers,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 7] = [
        SweepAxis::NumTasks,
        SweepAxis::MissingRate,
        SweepAxis::UpDim,
        SweepAxis::Reg,
        SweepAxis::PoolSize,
        SweepAxis::PromptLength,
        SweepAxis::PromptLayers,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::NumTasks => "num_tasks",
            SweepAxis::MissingRate => "missing_rate",
            SweepAxis::UpDim => "up_dim",
            SweepAxis::Reg => "reg",
            SweepAxis::PoolSize => "pool_size",
            SweepAxis::PromptLength => "prompt_length",
            SweepAxis::PromptLayers => "prompt_layers",
        }
    }

    fn aliases(self) -> &'static [&'static str] {
        match self {
            SweepAxis::NumTasks => &["k"],
            SweepAxis::MissingRate => &["eta_miss"],
            SweepAxis::UpDim => &["d_up"],
            SweepAxis::Reg => &["eta_reg"],
            _ => &[],
        }
    }

    /// Dotted config key the axis writes to.
    pub fn key(self) -> &'static str {
        match self {
            SweepAxis::NumTasks => "stream.num_tasks",
            SweepAxis::MissingRate => "stream.missing_rate",
            SweepAxis::UpDim => "analytic.up_dim",
            SweepAxis::Reg => "analytic.reg",
            SweepAxis::PoolSize => "pool.pool_size",
            SweepAxis::PromptLength => "pool.prompt_length",
            SweepAxis::PromptLayers => "encoder.prompt_layers",
        }
    }

    /// Returns a copy of `cfg` with the axis set to `value`, validated.
    pub fn apply(self, cfg: &RunConfig, value: &str) -> Result<RunConfig> {
        let mut out = cfg.clone();
        let bad = |what: &str| PalError::Config {
            key: self.key().to_string(),
            message: format!("cannot parse `{value}` as {what}"),
        };
        let int = || value.trim().parse::<usize>().map_err(|_| bad("an integer"));
        let real = || value.trim().parse::<f64>().map_err(|_| bad("a number"));
        match self {
            SweepAxis::NumTasks => out.stream.num_tasks = int()?,
            SweepAxis::MissingRate => out.stream.missing_rate = real()?,
            SweepAxis::UpDim => out.analytic.up_dim = int()?,
            SweepAxis::Reg => out.analytic.reg = real()?,
            SweepAxis::PoolSize => out.pool.pool_size = int()?,
            SweepAxis::PromptLength => out.pool.prompt_length = int()?,
            SweepAxis::PromptLayers => {
                out.encoder.prompt_layers =
                    parse_layers(value).ok_or_else(|| bad("layers (`2`, `0..2`, `0+3`)"))?
            }
        }
        out.validate()?;
        Ok(out)
    }
}

impl FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let lower = s.to_ascii_lowercase();
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.name() == lower || a.aliases().contains(&lower.as_str()))
            .ok_or_else(|| {
                let names: Vec<&str> = SweepAxis::ALL.iter().map(|a| a.name()).collect();
                format!(
                    "unknown sweep axis `{s}` (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

/// `"2"` → `[2]`, `"0..3"` → `[0, 1, 2]`, `"0+2"` → `[0, 2]`, `""` → `[]`.
fn parse_layers(value: &str) -> Option<Vec<usize>> {
    let v = value.trim();
    if v.is_empty() {
        return Some(Vec::new());
    }
    if let Some((a, b)) = v.split_once("..") {
        let (a, b) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
        return Some((a..b).collect());
    }
    v.split('+').map(|p| p.trim().parse().ok()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub acc: f64,
    pub fg: Option<f64>,
}

pub fn run_sweep(cfg: &RunConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<SweepRow>> {
    // Validate every point before spending time on any of them.
    let configs = values
        .iter()
        .map(|v| axis.apply(cfg, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (value, point) in values.iter().zip(&configs) {
        let outcome = run_pal(point)?;
        rows.push(SweepRow {
            value: value.trim().to_string(),
            acc: outcome.average_accuracy(),
            fg: outcome.forgetting(),
        });
    }
    Ok(rows)
}

pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut out = format!("{},acc,fg\n", axis.name());
    for r in rows {
        let fg = r.fg.map(|f| f.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", r.value, r.acc, fg));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_names_and_aliases() {
        assert_eq!("K".parse::<SweepAxis>().unwrap(), SweepAxis::NumTasks);
        assert_eq!("eta_reg".parse::<SweepAxis>().unwrap(), SweepAxis::Reg);
        assert_eq!(
            "prompt_layers".parse::<SweepAxis>().unwrap(),
            SweepAxis::PromptLayers
        );
        assert!("depth".parse::<SweepAxis>().is_err());
    }

    #[test]
    fn layer_syntax() {
        assert_eq!(parse_layers("2"), Some(vec![2]));
        assert_eq!(parse_layers("0..3"), Some(vec![0, 1, 2]));
        assert_eq!(parse_layers("1+3"), Some(vec![1, 3]));
        assert_eq!(parse_layers(""), Some(vec![]));
        assert_eq!(parse_layers("a"), None);
    }

    #[test]
    fn apply_validates() {
        let cfg = RunConfig::default();
        assert_eq!(
            SweepAxis::NumTasks
                .apply(&cfg, "10")
                .unwrap()
                .stream
                .num_tasks,
            10
        );
        assert!(SweepAxis::NumTasks
            .apply(&cfg, "3")
            .unwrap_err()
            .is_config());
        assert!(SweepAxis::Reg.apply(&cfg, "x").unwrap_err().is_config());
        assert!(SweepAxis::PromptLayers
            .apply(&cfg, "7")
            .unwrap_err()
            .is_config());
        assert_eq!(
            SweepAxis::PromptLayers
                .apply(&cfg, "0..2")
                .unwrap()
                .encoder
                .prompt_layers,
            vec![0, 1]
        );
    }
}
