//! Persistence and presentation: record and result tables, run manifests,
//! figures, configuration files and the command implementations behind the
//! CLI.

use thiserror::Error;

pub mod commands;
pub mod config;
pub mod figure;
pub mod manifest;
pub mod table;

pub use config::{Config, GenSection, LexiconPaths, PlotSection, RunSection, StatsSection, SummarySpec};
pub use figure::{emit_figure, render_svg, FigureKind, FigureSpec};
pub use manifest::RunManifest;
pub use table::{
    read_table, read_table_str, write_preferences, write_stat_results, write_summary, write_table, write_table_string,
    TableFormat,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("table line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("figure `{kind}` needs column `{column}`")]
    MissingColumn { kind: String, column: String },
    #[error("unknown figure kind `{0}`; known kinds: pronoun_surprisal, pronoun_similarity, rc_similarity_who, rc_surprisal, rc_similarity_verb")]
    UnknownFigure(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ReportError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `contents`, creating parent directories.
pub fn write_file(path: &std::path::Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, contents).map_err(io_err(path))
}
