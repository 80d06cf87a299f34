//! Run configuration: built-in defaults, then the TOML file, then flags.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use nle_core::keywords::KeywordLexicon;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LabelerKind {
    #[default]
    Builtin,
    External,
}

/// Contents of a `--config` file. Every key is optional.
///
/// ```toml
/// jobs = 4
/// [corpus]
/// report_root = "files"
/// metadata = "metadata.csv"
/// [pipeline]
/// labeler = "builtin"
/// [lexicon]
/// history = ["history of", "prior"]
/// [evaluate]
/// threshold = 0.4
/// ```
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub jobs: Option<usize>,
    pub corpus: CorpusSection,
    pub pipeline: PipelineSection,
    /// Keyword lists given inline; missing lists keep their defaults.
    pub lexicon: Option<KeywordLexicon>,
    pub evaluate: EvaluateSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub report_root: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub out: Option<PathBuf>,
    pub labeler: Option<LabelerKind>,
    pub labels_file: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub mention_lexicon: Option<PathBuf>,
    pub dedup_ignore_certainty: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub threshold: Option<f64>,
    pub pathologies: Option<Vec<String>>,
    pub clev_labeler: Option<LabelerKind>,
    pub clev_labels_file: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: FileConfig = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.resolve_relative_to(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Paths in a config file are relative to the file's directory.
    fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        let c = &mut self.corpus;
        for p in [&mut c.report_root, &mut c.metadata, &mut c.splits, &mut c.manifest] {
            fix(p);
        }
        let p = &mut self.pipeline;
        for p in [&mut p.out, &mut p.labels_file, &mut p.lexicon, &mut p.mention_lexicon] {
            fix(p);
        }
        fix(&mut self.evaluate.clev_labels_file);
    }
}

/// Flag value if given, else the file value.
pub fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}
