//! Pure aggregation over records files: accuracy tables, length-correctness
//! distributions, order-by-length error heatmaps, pairwise correct-answer
//! overlap, and budget-sweep summaries.
//!
//! Errored records count as incorrect in accuracy but are excluded from
//! length distributions; both choices can be overridden via [`AnalysisOptions`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runner::GenerationRecord;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("empty input: no records to aggregate")]
    EmptyInput,
    #[error("record {0} is missing its order field")]
    MissingOrder(String),
    #[error("record {0} is missing its {1} field")]
    MissingGroup(String, &'static str),
    #[error("empty intersection: the two runs share no sample ids")]
    EmptyIntersection,
    #[error("budget sweep needs at least two budgets")]
    NotEnoughBudgets,
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
}

/// How to fold records into aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalysisOptions {
    /// Count errored records as incorrect answers (accuracy, overlap).
    pub errored_as_incorrect: bool,
    /// Include errored records in length distributions.
    pub include_errored_lengths: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            errored_as_incorrect: true,
            include_errored_lengths: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupAxis {
    Order,
    Taxonomy,
    None,
}

impl GroupAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "order" => Some(GroupAxis::Order),
            "taxonomy" => Some(GroupAxis::Taxonomy),
            "none" => Some(GroupAxis::None),
            _ => None,
        }
    }
}

fn group_key(record: &GenerationRecord, axis: GroupAxis) -> Result<Option<String>, AnalysisError> {
    match axis {
        GroupAxis::None => Ok(None),
        GroupAxis::Order => record
            .order
            .map(|o| Some(o.to_string()))
            .ok_or_else(|| AnalysisError::MissingGroup(record.sample_id.clone(), "order")),
        GroupAxis::Taxonomy => record
            .taxonomy
            .clone()
            .map(Some)
            .ok_or_else(|| AnalysisError::MissingGroup(record.sample_id.clone(), "taxonomy")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl GroupStats {
    fn new(count: usize, correct: usize) -> Self {
        Self {
            count,
            correct,
            accuracy: if count == 0 {
                0.0
            } else {
                correct as f64 / count as f64
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub overall: f64,
    pub total: usize,
    pub correct: usize,
    pub group_axis: GroupAxis,
    pub by_group: BTreeMap<String, GroupStats>,
}

pub fn accuracy_report(
    records: &[GenerationRecord],
    axis: GroupAxis,
) -> Result<AccuracyReport, AnalysisError> {
    accuracy_report_with(records, axis, AnalysisOptions::default())
}

pub fn accuracy_report_with(
    records: &[GenerationRecord],
    axis: GroupAxis,
    opts: AnalysisOptions,
) -> Result<AccuracyReport, AnalysisError> {
    let filtered: Vec<&GenerationRecord> = records
        .iter()
        .filter(|r| opts.errored_as_incorrect || r.error.is_none())
        .collect();
    if filtered.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut by_group: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut total = 0usize;
    let mut correct = 0usize;
    for r in &filtered {
        total += 1;
        if r.correct {
            correct += 1;
        }
        if let Some(key) = group_key(r, axis)? {
            let entry = by_group.entry(key).or_insert((0, 0));
            entry.0 += 1;
            if r.correct {
                entry.1 += 1;
            }
        }
    }
    Ok(AccuracyReport {
        overall: correct as f64 / total as f64,
        total,
        correct,
        group_axis: axis,
        by_group: by_group
            .into_iter()
            .map(|(k, (n, c))| (k, GroupStats::new(n, c)))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    Chars,
    Tokens,
}

impl LengthUnit {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "chars" => Some(LengthUnit::Chars),
            "tokens" => Some(LengthUnit::Tokens),
            _ => None,
        }
    }

    fn of(self, r: &GenerationRecord) -> usize {
        match self {
            LengthUnit::Chars => r.n_chars,
            LengthUnit::Tokens => r.n_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: u64,
    pub correct: usize,
    pub incorrect: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub unit: LengthUnit,
    pub bin_width: u64,
    /// Contiguous bins from 0; `lower` is the inclusive lower bound.
    pub bins: Vec<HistogramBin>,
}

pub fn length_histogram(
    records: &[GenerationRecord],
    unit: LengthUnit,
    bin_width: u64,
) -> Result<HistogramReport, AnalysisError> {
    length_histogram_with(records, unit, bin_width, AnalysisOptions::default())
}

pub fn length_histogram_with(
    records: &[GenerationRecord],
    unit: LengthUnit,
    bin_width: u64,
    opts: AnalysisOptions,
) -> Result<HistogramReport, AnalysisError> {
    assert!(bin_width > 0, "bin_width must be positive");
    let filtered: Vec<&GenerationRecord> = records
        .iter()
        .filter(|r| opts.include_errored_lengths || r.error.is_none())
        .collect();
    if filtered.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let max_bin = filtered
        .iter()
        .map(|r| unit.of(r) as u64 / bin_width)
        .max()
        .unwrap_or(0);
    let mut bins: Vec<HistogramBin> = (0..=max_bin)
        .map(|i| HistogramBin {
            lower: i * bin_width,
            correct: 0,
            incorrect: 0,
        })
        .collect();
    for r in &filtered {
        let idx = (unit.of(r) as u64 / bin_width) as usize;
        if r.correct {
            bins[idx].correct += 1;
        } else {
            bins[idx].incorrect += 1;
        }
    }
    Ok(HistogramReport {
        unit,
        bin_width,
        bins,
    })
}

/// Incorrect-answer counts over belief order (rows 0..=4) by response-length
/// bin (chars).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMatrix {
    pub bin_width: u64,
    /// Lower bounds of the length bins (columns).
    pub bin_lowers: Vec<u64>,
    /// `cells[order][bin]` = incorrect count.
    pub cells: Vec<Vec<usize>>,
}

pub const HEATMAP_ORDERS: usize = 5;

pub fn error_heatmap(
    records: &[GenerationRecord],
    bin_width: u64,
) -> Result<HeatmapMatrix, AnalysisError> {
    error_heatmap_with(records, bin_width, AnalysisOptions::default())
}

pub fn error_heatmap_with(
    records: &[GenerationRecord],
    bin_width: u64,
    opts: AnalysisOptions,
) -> Result<HeatmapMatrix, AnalysisError> {
    assert!(bin_width > 0, "bin_width must be positive");
    let filtered: Vec<&GenerationRecord> = records
        .iter()
        .filter(|r| opts.include_errored_lengths || r.error.is_none())
        .collect();
    if filtered.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let max_bin = filtered
        .iter()
        .map(|r| r.n_chars as u64 / bin_width)
        .max()
        .unwrap_or(0);
    let n_bins = (max_bin + 1) as usize;
    let mut cells = vec![vec![0usize; n_bins]; HEATMAP_ORDERS];
    for r in &filtered {
        let order = r
            .order
            .ok_or_else(|| AnalysisError::MissingOrder(r.sample_id.clone()))?;
        if r.correct {
            continue;
        }
        let idx = (r.n_chars as u64 / bin_width) as usize;
        cells[order.min(4) as usize][idx] += 1;
    }
    Ok(HeatmapMatrix {
        bin_width,
        bin_lowers: (0..n_bins as u64).map(|i| i * bin_width).collect(),
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OverlapCell {
    pub both_correct: usize,
    pub only_a: usize,
    pub only_b: usize,
    pub neither: usize,
}

impl OverlapCell {
    pub fn total(&self) -> usize {
        self.both_correct + self.only_a + self.only_b + self.neither
    }
}

/// Agreement between two runs' correct answers, over the sample ids present
/// in both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub group_axis: GroupAxis,
    pub universe: usize,
    pub overall: OverlapCell,
    pub by_group: BTreeMap<String, OverlapCell>,
}

pub fn overlap_report(
    records_a: &[GenerationRecord],
    records_b: &[GenerationRecord],
    axis: GroupAxis,
) -> Result<OverlapReport, AnalysisError> {
    let index_b: BTreeMap<&str, &GenerationRecord> = records_b
        .iter()
        .map(|r| (r.sample_id.as_str(), r))
        .collect();
    let mut overall = OverlapCell::default();
    let mut by_group: BTreeMap<String, OverlapCell> = BTreeMap::new();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for a in records_a {
        let Some(b) = index_b.get(a.sample_id.as_str()) else {
            continue;
        };
        if !seen.insert(a.sample_id.as_str()) {
            continue;
        }
        let cell_of = |c: &mut OverlapCell| match (a.correct, b.correct) {
            (true, true) => c.both_correct += 1,
            (true, false) => c.only_a += 1,
            (false, true) => c.only_b += 1,
            (false, false) => c.neither += 1,
        };
        cell_of(&mut overall);
        if let Some(key) = group_key(a, axis)? {
            cell_of(by_group.entry(key).or_default());
        }
    }
    if overall.total() == 0 {
        return Err(AnalysisError::EmptyIntersection);
    }
    Ok(OverlapReport {
        group_axis: axis,
        universe: overall.total(),
        overall,
        by_group,
    })
}

/// A thinking budget: a token limit or unlimited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget(pub Option<u64>);

impl Budget {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "unlimited" | "none" | "inf" => Some(Budget(None)),
            n => n.parse::<u64>().ok().map(|v| Budget(Some(v))),
        }
    }

    pub fn label(&self) -> String {
        match self.0 {
            Some(v) => v.to_string(),
            None => "unlimited".to_string(),
        }
    }

    /// Unlimited sorts after every finite budget.
    fn sort_key(&self) -> u64 {
        self.0.unwrap_or(u64::MAX)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub budget: Budget,
    pub accuracy: f64,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub best_budget: Budget,
    pub entries: Vec<SweepEntry>,
}

/// Pick the best budget by overall accuracy; ties go to the smaller budget.
pub fn budget_sweep_summary(
    results: &[(Budget, AccuracyReport)],
) -> Result<SweepSummary, AnalysisError> {
    if results.len() < 2 {
        return Err(AnalysisError::NotEnoughBudgets);
    }
    let mut sorted: Vec<&(Budget, AccuracyReport)> = results.iter().collect();
    sorted.sort_by_key(|(b, _)| b.sort_key());
    let mut best = &sorted[0].0;
    let mut best_acc = sorted[0].1.overall;
    for (budget, report) in sorted.iter().skip(1) {
        if report.overall > best_acc {
            best = budget;
            best_acc = report.overall;
        }
    }
    Ok(SweepSummary {
        best_budget: *best,
        entries: sorted
            .iter()
            .map(|(b, r)| SweepEntry {
                budget: *b,
                accuracy: r.overall,
                best: b == best,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    JsonLines,
    Svg,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(ReportFormat::Csv),
            "json-lines" | "json" => Some(ReportFormat::JsonLines),
            "svg" => Some(ReportFormat::Svg),
            _ => None,
        }
    }
}

/// Any report that `emit_report` can render.
pub enum Report<'a> {
    Accuracy(&'a AccuracyReport),
    Histogram(&'a HistogramReport),
    Heatmap(&'a HeatmapMatrix),
    Overlap(&'a OverlapReport),
    Sweep(&'a SweepSummary),
}

/// Render a report in the requested format. CSV layouts are fixed; the
/// structured format is the report serialized on one line with stable key
/// order; SVG is available for histogram and heatmap.
pub fn emit_report(report: &Report, format: ReportFormat) -> Result<String, AnalysisError> {
    match format {
        ReportFormat::JsonLines => {
            let value = match report {
                Report::Accuracy(r) => serde_json::to_string(r),
                Report::Histogram(r) => serde_json::to_string(r),
                Report::Heatmap(r) => serde_json::to_string(r),
                Report::Overlap(r) => serde_json::to_string(r),
                Report::Sweep(r) => serde_json::to_string(r),
            };
            Ok(format!("{}\n", value.expect("reports serialize")))
        }
        ReportFormat::Csv => Ok(match report {
            Report::Accuracy(r) => accuracy_csv(r),
            Report::Histogram(r) => histogram_csv(r),
            Report::Heatmap(r) => heatmap_csv(r),
            Report::Overlap(r) => overlap_csv(r),
            Report::Sweep(r) => sweep_csv(r),
        }),
        ReportFormat::Svg => match report {
            Report::Histogram(r) => Ok(histogram_svg(r)),
            Report::Heatmap(r) => Ok(heatmap_svg(r)),
            _ => Err(AnalysisError::UnsupportedFormat(
                "svg is only available for histogram and heatmap reports".into(),
            )),
        },
    }
}

fn accuracy_csv(r: &AccuracyReport) -> String {
    let mut out = String::from("group,count,correct,accuracy\n");
    for (key, stats) in &r.by_group {
        out.push_str(&format!(
            "{key},{},{},{:.3}\n",
            stats.count, stats.correct, stats.accuracy
        ));
    }
    out.push_str(&format!("all,{},{},{:.3}\n", r.total, r.correct, r.overall));
    out
}

fn histogram_csv(r: &HistogramReport) -> String {
    let mut out = String::from("bin_lower,correct,incorrect\n");
    for bin in &r.bins {
        out.push_str(&format!(
            "{},{},{}\n",
            bin.lower, bin.correct, bin.incorrect
        ));
    }
    out
}

fn heatmap_csv(r: &HeatmapMatrix) -> String {
    let mut out = String::from("order");
    for lower in &r.bin_lowers {
        out.push_str(&format!(",{lower}"));
    }
    out.push('\n');
    for (order, row) in r.cells.iter().enumerate() {
        out.push_str(&order.to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

fn overlap_csv(r: &OverlapReport) -> String {
    let mut out = String::from("group,both_correct,only_a,only_b,neither\n");
    for (key, c) in &r.by_group {
        out.push_str(&format!(
            "{key},{},{},{},{}\n",
            c.both_correct, c.only_a, c.only_b, c.neither
        ));
    }
    let c = &r.overall;
    out.push_str(&format!(
        "all,{},{},{},{}\n",
        c.both_correct, c.only_a, c.only_b, c.neither
    ));
    out
}

fn sweep_csv(r: &SweepSummary) -> String {
    let mut out = String::from("budget,accuracy,best\n");
    for e in &r.entries {
        out.push_str(&format!(
            "{},{:.3},{}\n",
            e.budget.label(),
            e.accuracy,
            if e.best { 1 } else { 0 }
        ));
    }
    out
}

const SVG_BAR_WIDTH: usize = 8;
const SVG_HEIGHT: usize = 240;

fn histogram_svg(r: &HistogramReport) -> String {
    let max = r
        .bins
        .iter()
        .map(|b| b.correct.max(b.incorrect))
        .max()
        .unwrap_or(1)
        .max(1);
    let width = r.bins.len() * SVG_BAR_WIDTH * 2 + 20;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{}\">\n",
        SVG_HEIGHT + 20
    );
    for (i, bin) in r.bins.iter().enumerate() {
        let x = 10 + i * SVG_BAR_WIDTH * 2;
        for (j, (count, color)) in [(bin.correct, "#4c9f4c"), (bin.incorrect, "#c0504d")]
            .iter()
            .enumerate()
        {
            let h = count * SVG_HEIGHT / max;
            out.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
                x + j * SVG_BAR_WIDTH,
                SVG_HEIGHT - h + 10,
                SVG_BAR_WIDTH,
                h,
                color
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}

fn heatmap_svg(r: &HeatmapMatrix) -> String {
    let cell = 16usize;
    let max = r
        .cells
        .iter()
        .flat_map(|row| row.iter())
        .copied()
        .max()
        .unwrap_or(1)
        .max(1);
    let width = r.bin_lowers.len() * cell + 20;
    let height = r.cells.len() * cell + 20;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\">\n"
    );
    for (row, cols) in r.cells.iter().enumerate() {
        for (col, &v) in cols.iter().enumerate() {
            let opacity = v as f64 / max as f64;
            out.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"#c0504d\" fill-opacity=\"{opacity:.3}\" stroke=\"#ddd\"/>\n",
                10 + col * cell,
                10 + row * cell,
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}
