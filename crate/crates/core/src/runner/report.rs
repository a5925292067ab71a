//! Report tables computed from persisted run directories and verdict files.
//!
//! Every table is long-form CSV with the columns of [`ReportRow`]. Cells with
//! no data are written with `NA` and `n = 0` rather than dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::RunnerError;
use crate::corpus::{Origin, Polarity, Veracity};
use crate::metrics::{
    correctness_rate, deliberation_metrics, lexicon_scores, mcc, persuasion_dimensions, stage_sets, structural_profile,
    DimensionScores, IdfTable, JudgmentSet, Lexicon, Stopwords,
};
use crate::persona::{Demographic, RoundKind};
use crate::session::{
    Condition, GroupKind, JudgmentRecord, Manifest, Session, SubjectKind, JUDGMENTS_FILE, MANIFEST_FILE, SESSIONS_FILE,
};
use crate::stats::{chi_squared, fisher_exact, paired_t, permutation_mcc, TestResult, DEFAULT_PERMUTATIONS};

pub const NA: &str = "NA";
const ALL: &str = "all";

pub const TABLES: [&str; 8] = ["cr", "delta_cr", "mcc", "linguistic", "liwc", "deliberation", "flips", "significance"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub table: String,
    pub subject: String,
    pub backend: String,
    pub demographic: String,
    pub group_kind: String,
    pub condition: String,
    pub metric: String,
    pub value: Option<f64>,
    pub n: usize,
    pub test_kind: Option<String>,
    pub p_value: Option<f64>,
}

impl ReportRow {
    fn new(table: &str, metric: &str, value: Option<f64>, n: usize) -> Self {
        ReportRow {
            table: table.into(),
            subject: NA.into(),
            backend: NA.into(),
            demographic: NA.into(),
            group_kind: NA.into(),
            condition: NA.into(),
            metric: metric.into(),
            value: value.filter(|v| v.is_finite()),
            n,
            test_kind: None,
            p_value: None,
        }
    }

    fn subject(mut self, s: &str) -> Self {
        self.subject = s.into();
        self
    }
    fn backend(mut self, s: &str) -> Self {
        self.backend = s.into();
        self
    }
    fn demographic(mut self, s: &str) -> Self {
        self.demographic = s.into();
        self
    }
    fn group_kind(mut self, s: &str) -> Self {
        self.group_kind = s.into();
        self
    }
    fn condition(mut self, s: &str) -> Self {
        self.condition = s.into();
        self
    }
    fn test(mut self, r: &TestResult) -> Self {
        self.test_kind = Some(r.kind.as_str().into());
        self.p_value = Some(r.p_value);
        self
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub lexicon: Lexicon,
    pub stopwords: Stopwords,
    pub permutations: usize,
    pub seed: u64,
    /// Accept run directories whose manifest says `partial`.
    pub allow_partial: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            lexicon: Lexicon::default(),
            stopwords: Stopwords::default(),
            permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
            allow_partial: false,
        }
    }
}

/// Everything a report is computed from.
#[derive(Debug, Clone, Default)]
pub struct ReportInput {
    pub sessions: Vec<Session>,
    pub judgments: Vec<JudgmentRecord>,
    /// Truth labels for judgments that do not carry their own.
    pub claim_veracity: BTreeMap<String, Veracity>,
    pub warnings: Vec<String>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, RunnerError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(RunnerError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| RunnerError::Validation(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn run_subdirs(dir: &Path) -> Result<Vec<PathBuf>, RunnerError> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(RunnerError::Io {
                path: dir.to_path_buf(),
                source,
            })
        }
    };
    let mut runs: Vec<(u32, PathBuf)> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            name.strip_prefix('r')?.parse::<u32>().ok().map(|i| (i, e.path()))
        })
        .collect();
    runs.sort();
    Ok(runs.into_iter().map(|(_, p)| p).collect())
}

impl ReportInput {
    /// Reads every `r*/` subdirectory of a run directory.
    pub fn add_run_dir(&mut self, dir: &Path, allow_partial: bool) -> Result<(), RunnerError> {
        if dir.join(MANIFEST_FILE).is_file() {
            let manifest = Manifest::read(dir).map_err(|e| RunnerError::Validation(e.to_string()))?;
            if manifest.status != "complete" {
                if !allow_partial {
                    return Err(RunnerError::Validation(format!(
                        "{} is a partial run; pass the partial flag to report on it",
                        dir.display()
                    )));
                }
                self.warnings.push(format!("{} is a partial run", dir.display()));
            }
        }
        let runs = run_subdirs(dir)?;
        if runs.is_empty() {
            self.warnings.push(format!("{} contains no run data", dir.display()));
        }
        for run in runs {
            self.sessions.extend(read_jsonl::<Session>(&run.join(SESSIONS_FILE))?);
            self.judgments.extend(read_jsonl::<JudgmentRecord>(&run.join(JUDGMENTS_FILE))?);
        }
        Ok(())
    }

    pub fn add_claims_file(&mut self, path: &Path) -> Result<(), RunnerError> {
        for c in crate::corpus::read_claims(path).map_err(|e| RunnerError::Validation(e.to_string()))? {
            self.claim_veracity.insert(c.id, c.veracity);
        }
        Ok(())
    }

    /// Truth labels from claims files, judgments and sessions, in that priority.
    fn veracity_index(&self) -> BTreeMap<String, Veracity> {
        let mut out: BTreeMap<String, Veracity> = BTreeMap::new();
        for s in &self.sessions {
            out.insert(s.claim.id.clone(), s.claim.veracity);
        }
        for j in &self.judgments {
            if let Some(v) = j.veracity {
                out.insert(j.claim_id.clone(), v);
            }
        }
        out.extend(self.claim_veracity.iter().map(|(k, v)| (k.clone(), *v)));
        out
    }

    pub fn add_verdict_file(&mut self, path: &Path) -> Result<(), RunnerError> {
        let records = crate::session::import_human_verdicts(path).map_err(|e| RunnerError::Validation(e.to_string()))?;
        if records.is_empty() {
            self.warnings.push(format!("{} holds no verdicts", path.display()));
        }
        self.judgments.extend(records);
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn table(&self, name: &str) -> impl Iterator<Item = &ReportRow> {
        let name = name.to_string();
        self.rows.iter().filter(move |r| r.table == name)
    }

    /// Writes one CSV per table, the combined `metrics.csv`, plot data and `summary.txt`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, RunnerError> {
        fs::create_dir_all(dir).map_err(|source| RunnerError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut written = Vec::new();
        for table in TABLES {
            let path = dir.join(format!("{table}.csv"));
            write_csv(&path, self.table(table))?;
            written.push(path);
        }
        let path = dir.join("metrics.csv");
        write_csv(&path, self.rows.iter())?;
        written.push(path);
        for (name, table, metric) in [
            ("plot_cr.tsv", "cr", "cr"),
            ("plot_delta_cr.tsv", "delta_cr", "delta_cr"),
            ("plot_flips.tsv", "flips", "flip_rate"),
        ] {
            let path = dir.join(name);
            let mut out = String::from("x\tseries\tvalue\n");
            for r in self.table(table).filter(|r| r.metric == metric) {
                let series = [&r.subject, &r.backend, &r.group_kind, &r.condition]
                    .iter()
                    .filter(|s| s.as_str() != NA)
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join("/");
                let _ = writeln!(out, "{}\t{}\t{}", r.demographic, series, fmt_opt(r.value));
            }
            write_file(&path, &out)?;
            written.push(path);
        }
        let path = dir.join("summary.txt");
        write_file(&path, &self.summary())?;
        written.push(path);
        Ok(written)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "rows: {}", self.rows.len());
        for table in TABLES {
            let rows: Vec<&ReportRow> = self.table(table).collect();
            let absent = rows.iter().filter(|r| r.value.is_none()).count();
            let _ = writeln!(s, "{table}: {} rows, {absent} absent", rows.len());
        }
        let pooled: Vec<&ReportRow> = self
            .table("delta_cr")
            .filter(|r| r.metric == "delta_cr" && r.demographic == ALL)
            .collect();
        for r in pooled {
            let _ = writeln!(
                s,
                "delta_cr {} {} {}: {} (n={})",
                r.backend,
                r.condition,
                r.group_kind,
                fmt_opt(r.value),
                r.n
            );
        }
        for r in self.table("significance").filter(|r| r.demographic == ALL) {
            let _ = writeln!(
                s,
                "{} {} {} {}: statistic {} p {} (n={})",
                r.metric,
                r.backend,
                r.condition,
                r.test_kind.as_deref().unwrap_or(NA),
                fmt_opt(r.value),
                fmt_opt(r.p_value),
                r.n
            );
        }
        if !self.warnings.is_empty() {
            let _ = writeln!(s, "warnings:");
            for w in &self.warnings {
                let _ = writeln!(s, "  {w}");
            }
        }
        s
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), RunnerError> {
    fs::write(path, text).map_err(|source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_csv<'a>(path: &Path, rows: impl Iterator<Item = &'a ReportRow>) -> Result<(), RunnerError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| RunnerError::Validation(format!("{}: {e}", path.display()));
    w.write_record([
        "table",
        "subject",
        "backend",
        "demographic",
        "group_kind",
        "condition",
        "metric",
        "value",
        "n",
        "test_kind",
        "p_value",
    ])
    .map_err(err)?;
    for r in rows {
        w.write_record([
            r.table.as_str(),
            &r.subject,
            &r.backend,
            &r.demographic,
            &r.group_kind,
            &r.condition,
            &r.metric,
            &fmt_opt(r.value),
            &r.n.to_string(),
            r.test_kind.as_deref().unwrap_or(NA),
            &fmt_opt(r.p_value),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| RunnerError::Validation(e.to_string()))?;
    fs::write(path, bytes).map_err(|source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn source_of(s: &Session) -> &'static str {
    match s.pair.supporting.origin {
        Origin::Human => "human-stances",
        Origin::Llm => "llm-stances",
    }
}

fn subject_of(r: &JudgmentRecord) -> &'static str {
    match r.subject.kind {
        SubjectKind::LlmPersona => "llm",
        SubjectKind::HumanImported => "human",
    }
}

fn condition_str(c: Condition) -> &'static str {
    match c {
        Condition::WithPersuasion => "p",
        Condition::NoPersuasion => "no-p",
    }
}

/// Per-agent correctness change in {−1, 0, +1}; `None` when unscoreable.
fn contribution(s: &Session, agent: usize) -> Option<f64> {
    let truth = s.claim.veracity.truth()?;
    let a = &s.agents[agent];
    let i = a.verdict_at(RoundKind::Initial)?;
    let f = a.verdict_at(RoundKind::Final)?;
    Some((f == truth) as i32 as f64 - (i == truth) as i32 as f64)
}

struct Ctx<'a> {
    input: &'a ReportInput,
    truth: BTreeMap<String, Veracity>,
    options: &'a ReportOptions,
    rows: Vec<ReportRow>,
    warnings: Vec<String>,
}

pub fn build_report(input: &ReportInput, options: &ReportOptions) -> Report {
    let mut ctx = Ctx {
        input,
        truth: input.veracity_index(),
        options,
        rows: Vec::new(),
        warnings: input.warnings.clone(),
    };
    ctx.cr_tables();
    ctx.delta_cr_tables();
    ctx.mcc_table();
    ctx.linguistic_table();
    ctx.session_text_tables();
    ctx.flip_table();
    let excluded_sessions = input
        .sessions
        .iter()
        .flat_map(|s| s.agents.iter().flat_map(|a| &a.entries))
        .filter(|e| e.parse_error.is_some())
        .count();
    if excluded_sessions > 0 {
        ctx.warnings.push(format!("{excluded_sessions} session stage responses had no parseable verdict"));
    }
    let excluded_judgments = input.judgments.iter().filter(|j| j.verdict.is_none()).count();
    if excluded_judgments > 0 {
        ctx.warnings.push(format!("{excluded_judgments} judgments had no parseable verdict"));
    }
    Report {
        rows: ctx.rows,
        warnings: ctx.warnings,
    }
}

impl Ctx<'_> {
    fn session_backends(&self) -> Vec<String> {
        let set: BTreeSet<String> = self.input.sessions.iter().map(|s| s.backend.clone()).collect();
        if set.is_empty() {
            vec![NA.to_string()]
        } else {
            set.into_iter().collect()
        }
    }

    fn sources(&self) -> Vec<&'static str> {
        let set: BTreeSet<&'static str> = self.input.sessions.iter().map(source_of).collect();
        if set.is_empty() {
            vec!["human-stances"]
        } else {
            set.into_iter().collect()
        }
    }

    /// Single-agent and imported correctness rates, with p vs no-p tests.
    fn cr_tables(&mut self) {
        let mut subjects: BTreeMap<(&str, String), Vec<&JudgmentRecord>> = BTreeMap::new();
        for j in &self.input.judgments {
            let backend = if j.subject.kind == SubjectKind::HumanImported {
                NA.to_string()
            } else {
                j.backend.clone().unwrap_or_else(|| NA.to_string())
            };
            subjects.entry((subject_of(j), backend)).or_default().push(j);
        }
        if subjects.is_empty() {
            subjects.insert(("llm", NA.to_string()), Vec::new());
        }
        for ((subject, backend), records) in subjects {
            let demos: Vec<String> = Demographic::ALL.iter().map(|d| d.to_string()).chain([ALL.to_string()]).collect();
            for demo in &demos {
                let mut counts = [[0u64; 2]; 2];
                for (ci, cond) in [Condition::WithPersuasion, Condition::NoPersuasion].into_iter().enumerate() {
                    let mut set = JudgmentSet::default();
                    let mut excluded = 0;
                    for r in records
                        .iter()
                        .filter(|r| r.condition == cond && (demo == ALL || r.subject.demographic.as_str() == demo))
                    {
                        let veracity = r
                            .veracity
                            .or_else(|| self.truth.get(&r.claim_id).copied())
                            .unwrap_or(Veracity::Unverified);
                        if !set.push(&r.claim_id, r.verdict.as_ref().map(|v| v.value), veracity) {
                            excluded += 1;
                        }
                    }
                    let cr = correctness_rate(&set).ok();
                    let correct = set.entries().iter().filter(|e| e.verdict == e.truth).count() as u64;
                    counts[ci] = [correct, set.len() as u64 - correct];
                    let base = |m: &str, v: Option<f64>, n: usize| {
                        ReportRow::new("cr", m, v, n)
                            .subject(subject)
                            .backend(&backend)
                            .demographic(demo)
                            .condition(condition_str(cond))
                    };
                    self.rows.push(base("cr", cr, set.len()));
                    self.rows.push(base("excluded", Some(excluded as f64), excluded));
                }
                let n = (counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1]) as usize;
                let row = |m: &str| {
                    ReportRow::new("significance", m, None, n)
                        .subject(subject)
                        .backend(&backend)
                        .demographic(demo)
                        .condition("p-vs-no-p")
                };
                match chi_squared(counts) {
                    Ok(r) => {
                        if let Some(w) = &r.warning {
                            self.warnings.push(format!("cr {subject}/{backend}/{demo}: {w}"));
                        }
                        let mut out = row("cr_p_vs_no_p").test(&r);
                        out.value = Some(r.statistic);
                        self.rows.push(out);
                    }
                    Err(_) => {
                        let mut out = row("cr_p_vs_no_p");
                        out.test_kind = Some("chi_squared".into());
                        self.rows.push(out);
                    }
                }
                if n > 0 {
                    let r = fisher_exact(counts);
                    let mut out = row("cr_p_vs_no_p").test(&r);
                    out.value = Some(r.statistic).filter(|v| v.is_finite());
                    self.rows.push(out);
                } else {
                    let mut out = row("cr_p_vs_no_p");
                    out.test_kind = Some("fisher_exact".into());
                    self.rows.push(out);
                }
            }
        }
    }

    fn delta_cr_tables(&mut self) {
        let sessions = &self.input.sessions;
        for backend in self.session_backends() {
            for source in self.sources() {
                let in_scope = |s: &Session| s.backend == backend && source_of(s) == source;
                let demos: Vec<Option<Demographic>> =
                    Demographic::ALL.iter().copied().map(Some).chain([None]).collect();
                for demo in &demos {
                    let demo_name = demo.map_or(ALL.to_string(), |d| d.to_string());
                    for kind in [GroupKind::Hom, GroupKind::Het] {
                        let (i, f, excluded) = stage_sets(sessions.iter().filter(|s| in_scope(s)), |s, idx| {
                            s.group.kind() == kind && demo.is_none_or(|d| s.agents[idx].demographic == d)
                        });
                        let (cri, crf) = (correctness_rate(&i).ok(), correctness_rate(&f).ok());
                        let delta = cri.zip(crf).map(|(a, b)| b - a);
                        let base = |m: &str, v: Option<f64>, n: usize| {
                            ReportRow::new("delta_cr", m, v, n)
                                .backend(&backend)
                                .demographic(&demo_name)
                                .group_kind(&kind.to_string())
                                .condition(source)
                        };
                        self.rows.push(base("cr_initial", cri, i.len()));
                        self.rows.push(base("cr_final", crf, f.len()));
                        self.rows.push(base("delta_cr", delta, i.len()));
                        self.rows.push(base("excluded", Some(excluded as f64), excluded));
                    }
                    // Paired Hom vs Het contributions for the same claim, pair and run.
                    let (hom, het) = paired_contributions(sessions.iter().filter(|s| in_scope(s)), *demo);
                    let row = ReportRow::new("significance", "delta_cr_hom_vs_het", None, hom.len())
                        .backend(&backend)
                        .demographic(&demo_name)
                        .group_kind("hom-vs-het")
                        .condition(source);
                    self.rows.push(match paired_t(&hom, &het) {
                        Ok(r) => {
                            let mut out = row.test(&r);
                            out.value = Some(r.statistic);
                            out
                        }
                        Err(_) => {
                            let mut out = row;
                            out.test_kind = Some("paired_t".into());
                            out
                        }
                    });
                }
            }
        }
    }

    fn mcc_table(&mut self) {
        type Key = (String, Demographic, Condition);
        let majority = |records: Vec<&JudgmentRecord>| -> BTreeMap<Key, i8> {
            let mut sums: BTreeMap<Key, i32> = BTreeMap::new();
            for r in records {
                if let Some(v) = &r.verdict {
                    *sums
                        .entry((r.claim_id.clone(), r.subject.demographic, r.condition))
                        .or_default() += v.value as i32;
                }
            }
            sums.into_iter().filter(|(_, s)| *s != 0).map(|(k, s)| (k, s.signum() as i8)).collect()
        };
        let human = majority(
            self.input
                .judgments
                .iter()
                .filter(|j| j.subject.kind == SubjectKind::HumanImported)
                .collect(),
        );
        let mut llm_backends: BTreeSet<String> = self
            .input
            .judgments
            .iter()
            .filter(|j| j.subject.kind == SubjectKind::LlmPersona)
            .map(|j| j.backend.clone().unwrap_or_else(|| NA.into()))
            .collect();
        if llm_backends.is_empty() {
            llm_backends.insert(NA.into());
        }
        for backend in llm_backends {
            let llm = majority(
                self.input
                    .judgments
                    .iter()
                    .filter(|j| {
                        j.subject.kind == SubjectKind::LlmPersona
                            && j.backend.clone().unwrap_or_else(|| NA.into()) == backend
                    })
                    .collect(),
            );
            for cond in [Condition::WithPersuasion, Condition::NoPersuasion] {
                let demos: Vec<Option<Demographic>> =
                    Demographic::ALL.iter().copied().map(Some).chain([None]).collect();
                for demo in demos {
                    let (mut a, mut b) = (Vec::new(), Vec::new());
                    for (key, hv) in &human {
                        if key.2 != cond || demo.is_some_and(|d| d != key.1) {
                            continue;
                        }
                        if let Some(lv) = llm.get(key) {
                            a.push(*hv);
                            b.push(*lv);
                        }
                    }
                    let demo_name = demo.map_or(ALL.to_string(), |d| d.to_string());
                    let base = |m: &str, v: Option<f64>| {
                        ReportRow::new("mcc", m, v, a.len())
                            .subject("human-vs-llm")
                            .backend(&backend)
                            .demographic(&demo_name)
                            .condition(condition_str(cond))
                    };
                    match mcc(&a, &b) {
                        Ok(m) => {
                            let mut row = base("mcc", Some(m.value));
                            if let Ok(t) = permutation_mcc(&a, &b, self.options.permutations, self.options.seed) {
                                row = row.test(&t);
                            }
                            self.rows.push(row);
                            self.rows.push(base("degenerate", Some(m.degenerate as u8 as f64)));
                        }
                        Err(_) => self.rows.push(base("mcc", None)),
                    }
                }
            }
        }
    }

    /// Structural and lexicon profiles of the persuasion texts used in sessions.
    fn linguistic_table(&mut self) {
        let mut seen = BTreeSet::new();
        let mut texts: BTreeMap<(Origin, Polarity), Vec<&str>> = BTreeMap::new();
        for s in &self.input.sessions {
            for st in [&s.pair.supporting, &s.pair.refuting] {
                if seen.insert((st.claim_id.as_str(), st.polarity, st.text.as_str())) {
                    texts.entry((st.origin, st.polarity)).or_default().push(&st.text);
                }
            }
        }
        for origin in [Origin::Human, Origin::Llm] {
            for polarity in [Polarity::Support, Polarity::Refute] {
                let group = texts.get(&(origin, polarity)).cloned().unwrap_or_default();
                let profiles: Vec<_> = group.iter().filter_map(|t| structural_profile(t).ok()).collect();
                let scores: Vec<DimensionScores> =
                    group.iter().filter_map(|t| lexicon_scores(t, &self.options.lexicon).ok()).collect();
                let subject = match origin {
                    Origin::Human => "human",
                    Origin::Llm => "llm",
                };
                let cond = match polarity {
                    Polarity::Support => "support",
                    Polarity::Refute => "refute",
                };
                let mut push = |m: &str, xs: Vec<f64>| {
                    let n = xs.len();
                    self.rows
                        .push(ReportRow::new("linguistic", m, mean(&xs), n).subject(subject).condition(cond));
                };
                push("avg_length", profiles.iter().map(|p| p.avg_length).collect());
                push("ttr", profiles.iter().map(|p| p.ttr).collect());
                push("ari", profiles.iter().map(|p| p.ari).collect());
                push("fkgl", profiles.iter().map(|p| p.fkgl).collect());
                for dim in DimensionScores::DIMENSIONS {
                    push(dim, scores.iter().filter_map(|s| s.get(dim)).collect());
                }
            }
        }
    }

    /// Per-agent response text measures: composites, deliberation scores and length/readability shifts.
    fn session_text_tables(&mut self) {
        let sessions = &self.input.sessions;
        let docs: Vec<&str> = sessions
            .iter()
            .flat_map(|s| s.agents.iter().flat_map(|a| a.entries.iter().map(|e| e.response.as_str())))
            .collect();
        let idf = IdfTable::build(docs.iter().copied()).ok();
        if idf.is_none() && !sessions.is_empty() {
            self.warnings.push("fewer than 2 responses; specificity unavailable".into());
        }
        for backend in self.session_backends() {
            for kind in [GroupKind::Hom, GroupKind::Het] {
                let demos: Vec<Option<Demographic>> =
                    Demographic::ALL.iter().copied().map(Some).chain([None]).collect();
                for demo in demos {
                    let mut composites: BTreeMap<String, Vec<f64>> = BTreeMap::new();
                    let mut delib: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
                    let mut shape: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
                    for s in sessions.iter().filter(|s| s.backend == backend && s.group.kind() == kind) {
                        let interaction: Vec<&str> = [s.pair.supporting.text.as_str(), s.pair.refuting.text.as_str()]
                            .into_iter()
                            .chain(s.agents.iter().flat_map(|a| {
                                a.entries
                                    .iter()
                                    .filter(|e| matches!(e.stage, RoundKind::Discuss1 | RoundKind::Discuss2))
                                    .map(|e| e.response.as_str())
                            }))
                            .collect();
                        for agent in s.agents.iter().filter(|a| demo.is_none_or(|d| a.demographic == d)) {
                            let (Some(init), Some(fin)) =
                                (agent.entry(RoundKind::Initial), agent.entry(RoundKind::Final))
                            else {
                                continue;
                            };
                            if let Ok(changes) = persuasion_dimensions(&init.response, &fin.response, &self.options.lexicon)
                            {
                                for (name, c) in changes {
                                    composites.entry(format!("{name}_initial")).or_default().push(c.initial);
                                    composites.entry(format!("{name}_final")).or_default().push(c.final_value);
                                    composites.entry(format!("{name}_delta")).or_default().push(c.delta);
                                }
                            }
                            if let Some(idf) = &idf {
                                if let Ok(d) = deliberation_metrics(
                                    &init.response,
                                    &fin.response,
                                    &interaction,
                                    idf,
                                    &self.options.lexicon,
                                    &self.options.stopwords,
                                ) {
                                    delib.entry("emotional_shift").or_default().push(d.emotional_shift);
                                    delib.entry("coverage").or_default().push(d.coverage);
                                    delib.entry("specificity").or_default().push(d.specificity);
                                }
                            }
                            if let (Ok(a), Ok(b)) = (structural_profile(&init.response), structural_profile(&fin.response)) {
                                shape.entry("length_delta").or_default().push(b.avg_length - a.avg_length);
                                shape.entry("ttr_final").or_default().push(b.ttr);
                                shape.entry("fkgl_initial").or_default().push(a.fkgl);
                                shape.entry("fkgl_final").or_default().push(b.fkgl);
                                shape.entry("fkgl_delta").or_default().push(b.fkgl - a.fkgl);
                            }
                        }
                    }
                    let demo_name = demo.map_or(ALL.to_string(), |d| d.to_string());
                    let row = |table: &str, m: &str, xs: &[f64]| {
                        ReportRow::new(table, m, mean(xs), xs.len())
                            .backend(&backend)
                            .demographic(&demo_name)
                            .group_kind(&kind.to_string())
                    };
                    for c in DimensionScores::COMPOSITES {
                        for suffix in ["initial", "final", "delta"] {
                            let m = format!("{c}_{suffix}");
                            let xs = composites.get(&m).cloned().unwrap_or_default();
                            self.rows.push(row("liwc", &m, &xs));
                        }
                    }
                    for m in ["emotional_shift", "coverage", "specificity"] {
                        let xs = delib.get(m).cloned().unwrap_or_default();
                        self.rows.push(row("deliberation", m, &xs));
                    }
                    for m in ["length_delta", "ttr_final", "fkgl_initial", "fkgl_final", "fkgl_delta"] {
                        let xs = shape.get(m).cloned().unwrap_or_default();
                        self.rows.push(row("linguistic", m, &xs).subject("agent"));
                    }
                }
            }
        }
    }

    fn flip_table(&mut self) {
        for backend in self.session_backends() {
            for kind in [GroupKind::Hom, GroupKind::Het] {
                let scoped: Vec<Session> = self
                    .input
                    .sessions
                    .iter()
                    .filter(|s| s.backend == backend && s.group.kind() == kind)
                    .cloned()
                    .collect();
                let rates = crate::metrics::stance_flip_rate(&scoped);
                let (mut flips, mut eligible) = (0, 0);
                for d in Demographic::ALL {
                    let r = rates.get(&d);
                    flips += r.map_or(0, |r| r.flips);
                    eligible += r.map_or(0, |r| r.eligible);
                    self.rows.push(
                        ReportRow::new("flips", "flip_rate", r.map(|r| r.rate), r.map_or(0, |r| r.eligible))
                            .backend(&backend)
                            .demographic(d.as_str())
                            .group_kind(&kind.to_string()),
                    );
                }
                let pooled = (eligible > 0).then(|| 100.0 * flips as f64 / eligible as f64);
                self.rows.push(
                    ReportRow::new("flips", "flip_rate", pooled, eligible)
                        .backend(&backend)
                        .demographic(ALL)
                        .group_kind(&kind.to_string()),
                );
            }
        }
    }
}

/// For each (run, claim, pair) with both a Hom session of `demo` and a Het
/// session containing `demo`, the mean contribution of `demo` agents in each.
/// With `demo = None` every demographic's pairs are pooled.
pub fn paired_contributions<'a>(
    sessions: impl Iterator<Item = &'a Session>,
    demo: Option<Demographic>,
) -> (Vec<f64>, Vec<f64>) {
    type Key = (u32, String, String, String, Demographic);
    let mut hom: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    let mut het: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for s in sessions {
        for (idx, agent) in s.agents.iter().enumerate() {
            if demo.is_some_and(|d| d != agent.demographic) {
                continue;
            }
            let Some(c) = contribution(s, idx) else { continue };
            let key = (
                s.run_index,
                s.claim.id.clone(),
                s.pair.supporting.text.clone(),
                s.pair.refuting.text.clone(),
                agent.demographic,
            );
            match s.group.kind() {
                GroupKind::Hom => hom.entry(key).or_default().push(c),
                GroupKind::Het => het.entry(key).or_default().push(c),
            }
        }
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (key, h) in &hom {
        if let Some(t) = het.get(key) {
            a.push(mean(h).expect("non-empty"));
            b.push(mean(t).expect("non-empty"));
        }
    }
    (a, b)
}
