//! Command implementations behind the CLI.

mod report;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::corpus::{self, Dataset, Origin, Polarity, Stance, TokenStats};
use crate::gateway::{generate_persuasion_pair, GatewayError, RefusalCues};
use crate::metrics::Lexicon;
use crate::plan::{ExperimentPlan, PlanError};
use crate::session::{self, BatchError, BatchOptions, BatchSummary, JudgmentRecord};

pub use report::{build_report, paired_contributions, Report, ReportInput, ReportOptions, ReportRow, NA, TABLES};

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("{0}")]
    Validation(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("{failed} of {total} items failed")]
    Partial { failed: usize, total: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunnerError {
    /// 1 validation, 2 backend failure, 3 partial completion.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Plan(PlanError::Backend(_)) | RunnerError::Backend(_) => 2,
            RunnerError::Partial { .. } => 3,
            RunnerError::Plan(_) | RunnerError::Validation(_) | RunnerError::Io { .. } => 1,
        }
    }
}

impl From<BatchError> for RunnerError {
    fn from(e: BatchError) -> Self {
        match e {
            BatchError::Plan(p) => RunnerError::Plan(p),
            BatchError::Io { path, source } => RunnerError::Io { path, source },
            other => RunnerError::Validation(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GenerationSummary {
    pub claims: usize,
    pub generated: usize,
    pub skipped_existing: usize,
    pub refused: Vec<String>,
    pub failed: Vec<(String, String)>,
}

/// Default location for generated stances: the plan's stance file, else `<output>/llm_stances.jsonl`.
pub fn default_stance_path(plan: &ExperimentPlan) -> PathBuf {
    plan.corpus
        .stances
        .clone()
        .unwrap_or_else(|| plan.output.join("llm_stances.jsonl"))
}

/// Generates one supporting and one refuting stance per claim with the plan's
/// first backend. Claims that already have both LLM stances in `out` are skipped.
pub fn cmd_generate_persuasion(plan: &ExperimentPlan, out: &Path) -> Result<GenerationSummary, RunnerError> {
    let spec = plan
        .backends
        .first()
        .ok_or_else(|| RunnerError::Validation("plan has no backends".into()))?;
    let backend = spec.build(plan.seed)?;
    let templates = plan.template_set()?;
    let claims = corpus::read_claims(&plan.corpus.claims).map_err(|e| RunnerError::Validation(e.to_string()))?;
    let mut stances: Vec<Stance> = if out.is_file() {
        corpus::read_stances(out).map_err(|e| RunnerError::Validation(e.to_string()))?
    } else {
        Vec::new()
    };
    let has = |stances: &[Stance], id: &str, p: Polarity| {
        stances
            .iter()
            .any(|s| s.claim_id == id && s.origin == Origin::Llm && s.polarity == p)
    };
    let refusals = RefusalCues::default();
    let mut summary = GenerationSummary {
        claims: claims.len(),
        ..GenerationSummary::default()
    };
    let mut fresh = Vec::new();
    for claim in &claims {
        if has(&stances, &claim.id, Polarity::Support) && has(&stances, &claim.id, Polarity::Refute) {
            summary.skipped_existing += 1;
            continue;
        }
        match generate_persuasion_pair(&backend, &plan.generation, &templates, &refusals, claim) {
            Ok(pair) => {
                stances.retain(|s| !(s.claim_id == claim.id && s.origin == Origin::Llm));
                fresh.push(pair.supporting);
                fresh.push(pair.refuting);
                summary.generated += 1;
            }
            Err(GatewayError::Refusal { claim_id, .. }) => {
                log::info!("skipping claim {claim_id}: model refused");
                summary.refused.push(claim_id);
            }
            Err(e) => {
                log::warn!("claim {}: {e}", claim.id);
                summary.failed.push((claim.id.clone(), e.to_string()));
            }
        }
    }
    stances.extend(fresh);
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent).map_err(|source| RunnerError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    corpus::write_stances(out, &stances).map_err(|e| RunnerError::Validation(e.to_string()))?;
    if !summary.refused.is_empty() {
        log::info!("{} claims refused, {} generated", summary.refused.len(), summary.generated);
    }
    if !summary.failed.is_empty() {
        return Err(if summary.generated == 0 && summary.skipped_existing == 0 {
            RunnerError::Backend(summary.failed[0].1.clone())
        } else {
            RunnerError::Partial {
                failed: summary.failed.len(),
                total: summary.claims,
            }
        });
    }
    Ok(summary)
}

/// Runs the plan's batch; any failed cell turns the result into an error carrying the exit class.
pub fn cmd_run(plan: &ExperimentPlan, options: &BatchOptions) -> Result<BatchSummary, RunnerError> {
    let summary = session::run_batch(plan, options)?;
    if summary.failed_cells > 0 {
        let nothing_done = summary.complete_cells == 0;
        log::warn!("{} of {} cells failed", summary.failed_cells, summary.total_cells);
        return Err(if nothing_done {
            RunnerError::Backend(format!("all {} attempted cells failed", summary.failed_cells))
        } else {
            RunnerError::Partial {
                failed: summary.failed_cells,
                total: summary.total_cells,
            }
        });
    }
    Ok(summary)
}

#[derive(Debug, Clone, Default)]
pub struct ReportSources {
    pub run_dirs: Vec<PathBuf>,
    pub verdict_files: Vec<PathBuf>,
    pub claims_files: Vec<PathBuf>,
}

/// Reads the sources, computes every table and writes them under `out`.
pub fn cmd_report(sources: &ReportSources, options: &ReportOptions, out: &Path) -> Result<Report, RunnerError> {
    let mut input = ReportInput::default();
    for dir in &sources.run_dirs {
        input.add_run_dir(dir, options.allow_partial)?;
    }
    for f in &sources.verdict_files {
        input.add_verdict_file(f)?;
    }
    for f in &sources.claims_files {
        input.add_claims_file(f)?;
    }
    let report = build_report(&input, options);
    for w in &report.warnings {
        log::warn!("{w}");
    }
    report.write(out)?;
    Ok(report)
}

/// Normalises a human verdict file into judgment records at `out`.
pub fn cmd_import_verdicts(input: &Path, out: &Path) -> Result<Vec<JudgmentRecord>, RunnerError> {
    let records = session::import_human_verdicts(input).map_err(|e| RunnerError::Validation(e.to_string()))?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    std::fs::write(out, text).map_err(|source| RunnerError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    Ok(records)
}

pub fn cmd_token_stats(claims: &Path, stances: Option<&Path>) -> Result<TokenStats, RunnerError> {
    let corpus = corpus::load_canonical(claims, stances).map_err(|e| RunnerError::Validation(e.to_string()))?;
    let (cs, ss): (Vec<_>, Vec<_>) = corpus.into_iter().unzip();
    let stances: Vec<Stance> = ss.into_iter().flatten().collect();
    corpus::token_stats(&cs, &stances).map_err(|e| RunnerError::Validation(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LexiconSummary {
    pub categories: Vec<(String, usize)>,
    pub missing_for_dimensions: Vec<String>,
}

/// Parses a lexicon file; a parse error is a validation failure, missing dimension categories are reported.
pub fn cmd_lexicon_validate(path: &Path) -> Result<LexiconSummary, RunnerError> {
    let lex = Lexicon::load(path).map_err(|e| RunnerError::Validation(e.to_string()))?;
    let present: BTreeSet<&str> = lex.categories().collect();
    Ok(LexiconSummary {
        categories: lex.categories().map(|c| (c.to_string(), lex.pattern_count(c))).collect(),
        missing_for_dimensions: crate::metrics::REQUIRED_CATEGORIES
            .iter()
            .filter(|c| !present.contains(**c))
            .map(|c| c.to_string())
            .collect(),
    })
}

/// Converts a raw dataset file into canonical claim and stance files.
pub fn cmd_convert(raw: &Path, format: Dataset, claims_out: &Path, stances_out: &Path) -> Result<(usize, usize), RunnerError> {
    let parsed = corpus::parse_claims(raw, format).map_err(|e| RunnerError::Validation(e.to_string()))?;
    corpus::write_canonical(claims_out, stances_out, &parsed).map_err(|e| RunnerError::Validation(e.to_string()))?;
    Ok((parsed.len(), parsed.iter().map(|(_, s)| s.len()).sum()))
}
