use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Deserialize;

use lccm::data::{DatasetMeta, Schema};
use lccm::em::{EmOptions, ModelKind, RestartPlan};
use lccm::mixture::CovarianceStructure;

use crate::ConfigError;

/// Flags shared by the commands that read a dataset and specify a model.
/// Every flag overrides the corresponding config file entry.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Long-format CSV, one row per person, situation and alternative.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// TOML column mapping. Defaults to the dataset's `.meta` sidecar.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// mnl, lccm or gbm-lccm.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// full, tied, diagonal or spherical (gbm-lccm only).
    #[arg(long)]
    pub structure: Option<String>,
    /// plan (the full restart plan), kmeans or random.
    #[arg(long)]
    pub init: Option<String>,
    /// Cap on the number of restarts taken from the plan.
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continuous characteristic to standardize; repeatable.
    #[arg(long = "standardize")]
    pub standardize: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum SchemaEntry {
    Path(PathBuf),
    Inline(Box<Schema>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data: Option<PathBuf>,
    schema: Option<SchemaEntry>,
    model: Option<String>,
    classes: Option<usize>,
    structure: Option<String>,
    init: Option<String>,
    restarts: Option<usize>,
    trials: Option<usize>,
    incremental: Option<usize>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
    #[serde(default)]
    standardize: Vec<String>,
    out: Option<PathBuf>,
    folds: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Plan,
    KMeans,
    Random,
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: PathBuf,
    pub schema: Schema,
    pub kind: ModelKind,
    pub classes: usize,
    pub init: InitMode,
    pub plan: RestartPlan,
    pub standardize: Vec<String>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub folds: Option<usize>,
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

pub fn read_schema(path: &Path) -> Result<Schema> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading schema {}", path.display()))?;
    toml::from_str(&text).map_err(|e| config_error(format!("schema {}: {e}", path.display())))
}

fn parse_kind(tag: &str, structure: Option<&str>) -> Result<ModelKind> {
    let structure = structure
        .map(|s| s.parse::<CovarianceStructure>().map_err(|e| config_error(e.to_string())))
        .transpose()?;
    match (tag, structure) {
        ("mnl", None) => Ok(ModelKind::Mnl),
        ("lccm", None) => Ok(ModelKind::Lccm),
        ("gbm-lccm", s) => Ok(ModelKind::Gbm(s.unwrap_or(CovarianceStructure::Full))),
        ("mnl" | "lccm", Some(_)) => Err(config_error(format!("a covariance structure does not apply to {tag}"))),
        (other, _) => Err(config_error(format!("unknown model `{other}` (expected mnl, lccm or gbm-lccm)"))),
    }
}

impl RunConfig {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let (file, base) = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                let file: FileConfig =
                    toml::from_str(&text).map_err(|e| config_error(format!("config {}: {e}", path.display())))?;
                (file, path.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        // Paths in the config file are relative to the file itself.
        let rebase = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        let data = args
            .data
            .clone()
            .or_else(|| file.data.clone().map(rebase))
            .ok_or_else(|| config_error("no dataset given (--data)"))?;
        let schema = match (&args.schema, file.schema.clone()) {
            (Some(path), _) => read_schema(path)?,
            (None, Some(SchemaEntry::Path(p))) => read_schema(&rebase(p))?,
            (None, Some(SchemaEntry::Inline(s))) => *s,
            (None, None) => {
                let meta = DatasetMeta::path_for(&data);
                if !meta.exists() {
                    return Err(config_error(format!("no schema given and no {} found", meta.display())));
                }
                DatasetMeta::read(&meta)?.schema
            }
        };

        let tag = args.model.clone().or(file.model).unwrap_or_else(|| "gbm-lccm".into());
        let structure = args.structure.clone().or(file.structure);
        let kind = parse_kind(&tag, structure.as_deref())?;
        let default_classes = if kind == ModelKind::Mnl { 1 } else { 2 };
        let classes = args.classes.or(file.classes).unwrap_or(default_classes);
        if classes == 0 {
            return Err(config_error("classes must be at least 1"));
        }
        if kind == ModelKind::Mnl && classes != 1 {
            return Err(config_error("mnl has exactly one class"));
        }
        let init = match args.init.clone().or(file.init).as_deref().unwrap_or("plan") {
            "plan" => InitMode::Plan,
            "kmeans" if matches!(kind, ModelKind::Gbm(_)) => InitMode::KMeans,
            "kmeans" => return Err(config_error("kmeans initialization needs gbm-lccm")),
            "random" => InitMode::Random,
            other => return Err(config_error(format!("unknown init `{other}` (expected plan, kmeans or random)"))),
        };

        let defaults = EmOptions::default();
        let em = EmOptions {
            tol: args.tol.or(file.tol).unwrap_or(defaults.tol),
            max_iter: args.max_iter.or(file.max_iter).unwrap_or(defaults.max_iter),
            ..defaults
        };
        if !(em.tol > 0.0) || em.max_iter == 0 {
            return Err(config_error("tolerance and iteration limit must be positive"));
        }
        let plan = RestartPlan {
            seed: args.seed.or(file.seed).unwrap_or(0),
            trials: file.trials.unwrap_or(5),
            incremental: file.incremental.unwrap_or(5),
            max_restarts: args.restarts.or(file.restarts),
            em,
            ..RestartPlan::default()
        };
        if plan.max_restarts == Some(0) || plan.trials == 0 {
            return Err(config_error("at least one restart is required"));
        }
        let standardize = if args.standardize.is_empty() { file.standardize } else { args.standardize.clone() };
        if let Some(missing) = standardize.iter().find(|n| !schema.continuous.contains(n)) {
            return Err(config_error(format!("cannot standardize `{missing}`: not a continuous characteristic")));
        }
        if file.folds == Some(0) {
            return Err(config_error("folds must be positive"));
        }
        Ok(Self {
            data,
            schema,
            kind,
            classes,
            init,
            plan,
            standardize,
            out: args.out.clone().or_else(|| file.out.map(rebase)),
            threads: file.threads,
            folds: file.folds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    const SCHEMA: &str = r#"
person = "id"
situation = "trip"
alternative = "mode"
chosen = "choice"
continuous = ["age"]
binary = ["female"]

[[attributes]]
name = "time"
column = "time"
"#;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "schema.toml", SCHEMA);
        let cfg = write(
            dir.path(),
            "run.toml",
            "data = \"train.csv\"\nschema = \"schema.toml\"\nmodel = \"gbm-lccm\"\nclasses = 3\nstructure = \"tied\"\nseed = 4\nstandardize = [\"age\"]\n",
        );
        let args = RunArgs { config: Some(cfg), classes: Some(2), seed: Some(9), ..RunArgs::default() };
        let run = RunConfig::resolve(&args).unwrap();
        assert_eq!(run.classes, 2);
        assert_eq!(run.plan.seed, 9);
        assert_eq!(run.kind, ModelKind::Gbm(CovarianceStructure::Tied));
        assert_eq!(run.data, dir.path().join("train.csv"));
        assert_eq!(run.schema.attributes[0].name, "time");
        assert_eq!(run.standardize, vec!["age".to_string()]);
    }

    #[test]
    fn inline_schema() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("data = \"d.csv\"\nmodel = \"mnl\"\n[schema]\n{SCHEMA}");
        let text = text.replace("[[attributes]]", "[[schema.attributes]]");
        let args = RunArgs { config: Some(write(dir.path(), "run.toml", &text)), ..RunArgs::default() };
        let run = RunConfig::resolve(&args).unwrap();
        assert_eq!(run.kind, ModelKind::Mnl);
        assert_eq!(run.classes, 1);
        assert_eq!(run.schema.person, "id");
    }

    #[test]
    fn rejects_inconsistent_settings() {
        let dir = tempfile::tempdir().unwrap();
        let schema = write(dir.path(), "schema.toml", SCHEMA);
        let base = RunArgs { data: Some("x.csv".into()), schema: Some(schema), ..RunArgs::default() };
        let bad = [
            RunArgs { model: Some("mnl".into()), classes: Some(2), ..base.clone() },
            RunArgs { model: Some("lccm".into()), structure: Some("tied".into()), ..base.clone() },
            RunArgs { model: Some("probit".into()), ..base.clone() },
            RunArgs { structure: Some("banded".into()), ..base.clone() },
            RunArgs { classes: Some(0), ..base.clone() },
            RunArgs { model: Some("lccm".into()), init: Some("kmeans".into()), ..base.clone() },
            RunArgs { standardize: vec!["income".into()], ..base.clone() },
            RunArgs { tol: Some(-1.0), ..base.clone() },
        ];
        for args in bad {
            let err = RunConfig::resolve(&args).unwrap_err();
            assert!(err.downcast_ref::<ConfigError>().is_some(), "{err:#}");
        }
        assert!(RunConfig::resolve(&base).is_ok());
    }
}
