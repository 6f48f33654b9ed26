use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spa_core::propagation::StackConfig;

/// Columns of the metrics table, in output order.
pub const METRIC_COLUMNS: [&str; 5] = [
    "mean_offdiag_cosine",
    "min_offdiag_cosine",
    "max_diag",
    "min_diag",
    "collapse_distance",
];

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputControls {
    /// Blocks whose kernels are written; defaults to the last block.
    #[serde(default)]
    pub blocks: Option<Vec<usize>>,
    #[serde(default = "yes")]
    pub raw: bool,
    #[serde(default = "yes")]
    pub normalized: bool,
    /// Metric columns to keep; defaults to all of [`METRIC_COLUMNS`].
    #[serde(default)]
    pub metrics: Option<Vec<String>>,
}

/// A kernel-evolution run: the stack fields at top level plus an optional
/// `[output]` table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub stack: StackConfig,
    pub output: OutputControls,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        let output = match table.remove("output") {
            Some(v) => v
                .try_into::<OutputControls>()
                .context("invalid [output] section")?,
            None => OutputControls {
                raw: true,
                normalized: true,
                ..Default::default()
            },
        };
        let stack: StackConfig = toml::Value::Table(table)
            .try_into()
            .context("invalid stack configuration")?;
        let config = Self { stack, output };
        config.check()?;
        Ok(config)
    }

    fn check(&self) -> Result<()> {
        self.stack.validate()?;
        for &b in self.blocks().iter() {
            if b > self.stack.depth {
                bail!("output block {b} exceeds depth {}", self.stack.depth);
            }
        }
        for m in self.output.metrics.iter().flatten() {
            if !METRIC_COLUMNS.contains(&m.as_str()) {
                bail!(
                    "unknown metric {m:?}, expected one of {}",
                    METRIC_COLUMNS.join(", ")
                );
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> Vec<usize> {
        self.output
            .blocks
            .clone()
            .unwrap_or_else(|| vec![self.stack.depth])
    }

    pub fn metric_columns(&self) -> Vec<&'static str> {
        match &self.output.metrics {
            None => METRIC_COLUMNS.to_vec(),
            Some(sel) => METRIC_COLUMNS
                .iter()
                .copied()
                .filter(|c| sel.iter().any(|s| s == c))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use spa_core::propagation::{InputKernel, Method, NormPlacement};

    const BASIC: &str = r#"
depth = 10
seq_len = 16
gamma_final = 0.01
repeated_fraction = 0.02
input = "sampled"
seed = 4

[block]
method = "espa"
heads = 8

[[overrides]]
first = 2
last = 3
block = { method = "softmax_alibi", heads = 8, shortcut_weight = 1.0, residual_weight = 1.0, norm_placement = "post" }

[output]
blocks = [1, 10]
metrics = ["max_diag"]
"#;

    #[test]
    fn parses_flat_config() {
        let c = RunConfig::parse(BASIC).unwrap();
        assert_eq!(c.stack.depth, 10);
        assert_eq!(c.stack.input, InputKernel::Sampled);
        assert_eq!(c.stack.block.method, Method::Espa);
        assert_eq!(c.stack.block_spec(2).norm_placement, NormPlacement::Post);
        assert_eq!(c.blocks(), vec![1, 10]);
        assert_eq!(c.metric_columns(), vec!["max_diag"]);
        assert!(c.output.raw && c.output.normalized);
    }

    #[test]
    fn defaults_to_last_block_and_all_metrics() {
        let c = RunConfig::parse("depth = 3\n[block]\nmethod = \"value_skipinit\"\n").unwrap();
        assert_eq!(c.stack.seq_len, 100);
        assert_eq!(c.blocks(), vec![3]);
        assert_eq!(c.metric_columns().len(), 5);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse("depth = 3\ncolour = 1\n[block]\nmethod = \"espa\"\n").is_err());
        assert!(RunConfig::parse("depth = 3\n[block]\nmethod = \"espa\"\nextra = 2\n").is_err());
        assert!(RunConfig::parse("depth = 3\n[block]\nmethod = \"espa\"\n").is_err());
        assert!(RunConfig::parse("depth = 3\n[block]\nmethod = \"nope\"\n").is_err());
        assert!(RunConfig::parse(&BASIC.replace("blocks = [1, 10]", "blocks = [11]")).is_err());
        assert!(RunConfig::parse(&BASIC.replace("[\"max_diag\"]", "[\"rank\"]")).is_err());
        assert!(RunConfig::parse(&BASIC.replace("[output]", "[output]\nfoo = 1")).is_err());
        assert!(RunConfig::parse("not toml [").is_err());
    }
}
