//! Feature and label loading shared by the subcommands.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, ValueEnum};
use dhash::dataset::{load_labels, parse_csv, read_raw, CsvOptions};
use dhash::synth::{generate, ClusterSpec};
use dhash::FeatureMatrix;

use crate::usage;

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatArg {
    Csv,
    Raw,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelCol {
    Last,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Feature matrix file.
    #[arg(long, conflicts_with = "synth")]
    pub features: Option<PathBuf>,
    /// One label per line, aligned with the feature rows.
    #[arg(long, conflicts_with_all = ["synth", "label_col"])]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    /// The CSV file starts with a header line.
    #[arg(long)]
    pub header: bool,
    /// Read labels from a CSV column instead of a separate file.
    #[arg(long, value_enum)]
    pub label_col: Option<LabelCol>,
    /// Generate data instead of reading it, e.g. clusters:k=10,n=5000,d=64,spread=1.
    #[arg(long)]
    pub synth: Option<ClusterSpec>,
    /// Seed for `--synth`.
    #[arg(long, default_value_t = 0)]
    pub synth_seed: u64,
}

pub struct Dataset {
    pub features: FeatureMatrix,
    pub labels: Option<Vec<String>>,
}

impl DataArgs {
    pub fn load_required(&self) -> anyhow::Result<Dataset> {
        if let Some(spec) = &self.synth {
            let (features, ids) = generate(spec, self.synth_seed)?;
            return Ok(Dataset {
                features,
                labels: Some(ids.iter().map(usize::to_string).collect()),
            });
        }
        let path = self
            .features
            .as_ref()
            .ok_or_else(|| usage("pass --features or --synth"))?;
        let label_last = self.label_col.is_some();
        let (features, mut labels) = match self.format {
            FormatArg::Csv => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                parse_csv(
                    &text,
                    CsvOptions {
                        header: self.header,
                        label_last,
                    },
                )
                .with_context(|| format!("parsing {}", path.display()))?
            }
            FormatArg::Raw => {
                if label_last {
                    return Err(usage("--label-col applies to CSV input only"));
                }
                let f = std::fs::File::open(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                (
                    read_raw(std::io::BufReader::new(f))
                        .with_context(|| format!("parsing {}", path.display()))?,
                    None,
                )
            }
        };
        if let Some(lp) = &self.labels {
            let l = load_labels(lp).with_context(|| format!("reading {}", lp.display()))?;
            if l.len() != features.rows() {
                anyhow::bail!(
                    "{} has {} labels for {} feature rows",
                    lp.display(),
                    l.len(),
                    features.rows()
                );
            }
            labels = Some(l);
        }
        Ok(Dataset { features, labels })
    }
}
