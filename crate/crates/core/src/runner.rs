//! Experiment orchestration: expand a run configuration into per-sample
//! generation jobs, execute them with bounded concurrency, and persist one
//! record per sample plus a manifest.
//!
//! Records are appended in completion order by a single writer; each line is
//! self-identifying by sample id, so a canonical sort yields comparable
//! files. Timestamps live only in the manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::{RemoteBackend, RemoteEndpoint, ScriptedModel};
use crate::benchmarks::{
    build_prompt_with, load_samples, Benchmark, BenchmarkError, PromptSpec, PromptStyle,
    PromptVariant, TomSample,
};
use crate::benchmarks::{extract_choice, extract_open_answer, score, shuffle_options};
use crate::decode::{run_with_policy, Backend, SamplingParams, ThinkMarkers};
use crate::policies::{PolicyConfig, PolicyError};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] BenchmarkError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("record parse error at line {line}: {message}")]
    RecordParse { line: usize, message: String },
    #[error("run id mismatch: config says {expected:?}, file says {found:?}")]
    RunIdMismatch { expected: String, found: String },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    /// Deterministic scripted backend; `path` is a line-delimited file of
    /// `{"sample_id": ..., "segments": [[...], ...]}` entries ("*" is the
    /// fallback entry).
    Scripted { path: PathBuf },
    Remote {
        base_url: String,
        #[serde(default = "default_api_key_env")]
        api_key_env: String,
        #[serde(default = "default_timeout_secs")]
        request_timeout_secs: u64,
        #[serde(default = "default_max_retries")]
        max_retries: u32,
        #[serde(default = "default_backoff_ms")]
        retry_backoff_ms: u64,
    },
}

fn default_api_key_env() -> String {
    crate::backends::DEFAULT_API_KEY_ENV.to_string()
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    1000
}

impl BackendConfig {
    pub fn is_scripted(&self) -> bool {
        matches!(self, BackendConfig::Scripted { .. })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BenchmarkConfig {
    pub path: PathBuf,
    pub kind: Benchmark,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub run_id: String,
    pub backend: BackendConfig,
    pub model_name: String,
    #[serde(default)]
    pub sampling: SamplingParams,
    pub policy: PolicyConfig,
    pub benchmark: BenchmarkConfig,
    pub variant: PromptVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffle_seed: Option<u64>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub think_markers: ThinkMarkers,
    /// Cap on the number of samples (replication configs parameterize this).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cot_instruction: Option<String>,
    /// Whole-generation attempts per sample before recording it as errored.
    #[serde(default = "default_retry_attempts")]
    pub retry_attempts: u32,
    #[serde(default = "default_retry_backoff_ms")]
    pub retry_backoff_ms: u64,
}

fn default_concurrency() -> usize {
    1
}
fn default_retry_attempts() -> u32 {
    3
}
fn default_retry_backoff_ms() -> u64 {
    1000
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let text = fs::read_to_string(&path)?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| RunError::Config(format!("{}: {e}", path.as_ref().display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.run_id.is_empty() {
            return Err(RunError::Config("run_id must be non-empty".into()));
        }
        if self.concurrency < 1 {
            return Err(RunError::Config("concurrency must be at least 1".into()));
        }
        self.sampling
            .validate()
            .map_err(|e| RunError::Config(format!("sampling: {e}")))?;
        self.policy
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        if self.policy.is_t2m() && self.variant != PromptVariant::T2mBase {
            return Err(RunError::Config(
                "the t2m policy requires the t2m_base prompt variant".into(),
            ));
        }
        if self.variant == PromptVariant::NoOptions && !self.benchmark.kind.is_extractive() {
            return Err(RunError::Config(format!(
                "the no_options variant requires an extractive benchmark; {} is not",
                self.benchmark.kind.as_str()
            )));
        }
        Ok(())
    }

    fn prompt_style(&self) -> PromptStyle {
        match &self.cot_instruction {
            Some(text) => PromptStyle {
                cot_instruction: text.clone(),
            },
            None => PromptStyle::default(),
        }
    }
}

/// One completed generation with benchmark scoring attached; one line of the
/// records file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub sample_id: String,
    pub variant: String,
    pub policy: String,
    pub transcript: String,
    pub think_text: String,
    pub answer_text: String,
    pub n_tokens: usize,
    pub n_think_tokens: usize,
    pub n_chars: usize,
    pub wait_count: usize,
    pub injections: Vec<RecordInjection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<String>,
    pub correct: bool,
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordInjection {
    pub token_index: usize,
    pub reason: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTotals {
    pub samples: usize,
    pub correct: usize,
    pub errored: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: RunConfig,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub totals: RunTotals,
    pub records_file: String,
    /// SHA-256 of the records file bytes.
    pub records_digest: String,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Execute every sample in the config's dataset and write records + manifest.
pub fn run_experiment(config: &RunConfig) -> Result<RunManifest, RunError> {
    run_internal(config, &BTreeSet::new(), false)
}

/// Re-run only the samples missing from a partial records file; the final
/// file is the union.
pub fn resume(config: &RunConfig, records_path: &Path) -> Result<RunManifest, RunError> {
    let manifest_path = records_path
        .parent()
        .unwrap_or(Path::new("."))
        .join(MANIFEST_FILE);
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path)?;
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| RunError::Config(format!("manifest: {e}")))?;
        if manifest.run_id != config.run_id {
            return Err(RunError::RunIdMismatch {
                expected: config.run_id.clone(),
                found: manifest.run_id,
            });
        }
    }
    let done: BTreeSet<String> = if records_path.exists() {
        read_records(records_path)?
            .into_iter()
            .map(|r| r.sample_id)
            .collect()
    } else {
        BTreeSet::new()
    };
    run_internal(config, &done, true)
}

struct Job {
    sample: TomSample,
    prompt: PromptSpec,
    segments: Option<Vec<Vec<String>>>,
}

fn run_internal(
    config: &RunConfig,
    skip: &BTreeSet<String>,
    append: bool,
) -> Result<RunManifest, RunError> {
    config.validate()?;
    let started = now_ms();

    // Dataset problems surface before any generation starts.
    let mut samples = load_samples(&config.benchmark.path, config.benchmark.kind)?;
    if let Some(limit) = config.sample_limit {
        samples.truncate(limit);
    }
    if let Some(seed) = config.shuffle_seed {
        samples = samples.iter().map(|s| shuffle_options(s, seed)).collect();
    }
    let style = config.prompt_style();
    let scripts = match &config.backend {
        BackendConfig::Scripted { path } => Some(load_scripts(path)?),
        BackendConfig::Remote { .. } => None,
    };

    let mut jobs = Vec::new();
    for sample in samples {
        if skip.contains(&sample.id) {
            continue;
        }
        let prompt = build_prompt_with(&sample, config.variant, &style)?;
        let segments = match &scripts {
            Some(map) => Some(segments_for(map, &sample.id)?),
            None => None,
        };
        jobs.push(Job {
            sample,
            prompt,
            segments,
        });
    }

    fs::create_dir_all(&config.output_dir)?;
    let records_path = config.output_dir.join(RECORDS_FILE);
    let file = if append {
        fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&records_path)?
    } else {
        fs::File::create(&records_path)?
    };
    let mut writer = BufWriter::new(file);

    let queue: Mutex<std::collections::VecDeque<Job>> = Mutex::new(jobs.into());
    let (tx, rx) = mpsc::channel::<GenerationRecord>();
    let workers = config.concurrency.max(1);

    std::thread::scope(|scope| -> Result<(), RunError> {
        for _ in 0..workers {
            let tx = tx.clone();
            let queue = &queue;
            scope.spawn(move || loop {
                let job = match queue.lock().unwrap().pop_front() {
                    Some(job) => job,
                    None => break,
                };
                let record = execute_job(config, job);
                if tx.send(record).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // Single appending writer, flushing per record for crash safety.
        for record in rx {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(writer, "{line}").map_err(RunError::Io)?;
            writer.flush().map_err(RunError::Io)?;
        }
        Ok(())
    })?;
    drop(writer);

    // Totals are recomputed from the file so the manifest can never drift.
    let all_records = read_records(&records_path)?;
    let totals = RunTotals {
        samples: all_records.len(),
        correct: all_records.iter().filter(|r| r.correct).count(),
        errored: all_records.iter().filter(|r| r.error.is_some()).count(),
    };
    let digest = hex_digest(&fs::read(&records_path)?);
    let manifest = RunManifest {
        run_id: config.run_id.clone(),
        config: config.clone(),
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        totals,
        records_file: RECORDS_FILE.to_string(),
        records_digest: digest,
    };
    let manifest_path = config.output_dir.join(MANIFEST_FILE);
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(manifest)
}

fn execute_job(config: &RunConfig, job: Job) -> GenerationRecord {
    let start = Instant::now();
    let mut last_error: Option<String> = None;
    for attempt in 0..config.retry_attempts.max(1) {
        let mut backend: Box<dyn Backend> = match (&config.backend, &job.segments) {
            (BackendConfig::Scripted { .. }, Some(segments)) => {
                Box::new(ScriptedModel::from_texts(segments.clone()))
            }
            (
                BackendConfig::Remote {
                    base_url,
                    api_key_env,
                    request_timeout_secs,
                    max_retries,
                    retry_backoff_ms,
                },
                _,
            ) => Box::new(RemoteBackend::new(
                RemoteEndpoint {
                    base_url: base_url.clone(),
                    model_name: config.model_name.clone(),
                    api_key_env: api_key_env.clone(),
                    request_timeout_secs: *request_timeout_secs,
                    max_retries: *max_retries,
                    retry_backoff_ms: *retry_backoff_ms,
                },
                config.sampling.clone(),
            )),
            (BackendConfig::Scripted { .. }, None) => unreachable!("scripts load before execution"),
        };
        let mut policy = match config
            .policy
            .build(&config.think_markers, Some(&job.prompt))
        {
            Ok(policy) => policy,
            Err(e) => {
                last_error = Some(e.to_string());
                break;
            }
        };
        match run_with_policy(
            backend.as_mut(),
            &job.prompt,
            policy.as_mut(),
            &config.sampling,
            &config.think_markers,
        ) {
            Ok(gen) => {
                let predicted = match config.variant {
                    PromptVariant::NoOptions => extract_open_answer(&gen.answer_text),
                    _ => {
                        extract_choice(&gen.answer_text, &job.sample.options).map(|c| c.to_string())
                    }
                };
                let correct = predicted
                    .as_deref()
                    .map(|p| score(&job.sample, p, config.variant))
                    .unwrap_or(false);
                // Scripted runs report zero latency so records stay
                // byte-comparable across reruns.
                let latency_ms = if config.backend.is_scripted() {
                    0
                } else {
                    start.elapsed().as_millis() as u64
                };
                return GenerationRecord {
                    sample_id: job.sample.id.clone(),
                    variant: config.variant.as_str().to_string(),
                    policy: config.policy.descriptor(),
                    transcript: gen.transcript,
                    think_text: gen.think_text,
                    answer_text: gen.answer_text,
                    n_tokens: gen.n_tokens,
                    n_think_tokens: gen.n_think_tokens,
                    n_chars: gen.n_chars,
                    wait_count: gen.wait_count,
                    injections: gen
                        .injections
                        .into_iter()
                        .map(|i| RecordInjection {
                            token_index: i.position,
                            reason: i.reason.as_str().to_string(),
                            text: i.text,
                        })
                        .collect(),
                    predicted,
                    correct,
                    truncated: gen.truncated,
                    error: None,
                    latency_ms,
                    order: Some(job.sample.order),
                    taxonomy: job.sample.taxonomy.map(|t| t.as_str().to_string()),
                };
            }
            Err(e) => {
                let retryable = matches!(e, crate::decode::BackendError::Unavailable(_));
                last_error = Some(e.to_string());
                if retryable && attempt + 1 < config.retry_attempts.max(1) {
                    std::thread::sleep(Duration::from_millis(
                        config
                            .retry_backoff_ms
                            .saturating_mul(1u64 << attempt.min(16)),
                    ));
                    continue;
                }
                break;
            }
        }
    }
    errored_record(
        config,
        &job,
        last_error.unwrap_or_else(|| "unknown error".into()),
    )
}

fn errored_record(config: &RunConfig, job: &Job, error: String) -> GenerationRecord {
    GenerationRecord {
        sample_id: job.sample.id.clone(),
        variant: config.variant.as_str().to_string(),
        policy: config.policy.descriptor(),
        transcript: String::new(),
        think_text: String::new(),
        answer_text: String::new(),
        n_tokens: 0,
        n_think_tokens: 0,
        n_chars: 0,
        wait_count: 0,
        injections: Vec::new(),
        predicted: None,
        correct: false,
        truncated: false,
        error: Some(error),
        latency_ms: 0,
        order: Some(job.sample.order),
        taxonomy: job.sample.taxonomy.map(|t| t.as_str().to_string()),
    }
}

/// Scripted fixture: sample id -> token-text segments.
pub type ScriptMap = BTreeMap<String, Vec<Vec<String>>>;

#[derive(Debug, Deserialize)]
struct ScriptEntry {
    sample_id: String,
    segments: Vec<Vec<String>>,
}

pub fn load_scripts(path: &Path) -> Result<ScriptMap, RunError> {
    let text = fs::read_to_string(path)?;
    let mut map = ScriptMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ScriptEntry = serde_json::from_str(line).map_err(|e| RunError::RecordParse {
            line: i + 1,
            message: format!("script entry: {e}"),
        })?;
        map.insert(entry.sample_id, entry.segments);
    }
    Ok(map)
}

fn segments_for(map: &ScriptMap, sample_id: &str) -> Result<Vec<Vec<String>>, RunError> {
    map.get(sample_id)
        .or_else(|| map.get("*"))
        .cloned()
        .ok_or_else(|| {
            RunError::Config(format!(
                "script fixture has no entry for sample {sample_id:?} and no \"*\" fallback"
            ))
        })
}

pub fn read_records(path: &Path) -> Result<Vec<GenerationRecord>, RunError> {
    let text = fs::read_to_string(path)?;
    parse_records(&text)
}

pub fn parse_records(text: &str) -> Result<Vec<GenerationRecord>, RunError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: GenerationRecord =
            serde_json::from_str(line).map_err(|e| RunError::RecordParse {
                line: i + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

/// Records serialized one per line, sorted by sample id — the byte-comparable
/// form used for determinism checks.
pub fn canonical_records_bytes(records: &[GenerationRecord]) -> Vec<u8> {
    let mut sorted: Vec<&GenerationRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let mut out = Vec::new();
    for r in sorted {
        out.extend_from_slice(
            serde_json::to_string(r)
                .expect("record serializes")
                .as_bytes(),
        );
        out.push(b'\n');
    }
    out
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn write_fixture_dataset(dir: &Path) -> PathBuf {
        let path = dir.join("samples.jsonl");
        let lines = [
            r#"{"id":"s1","benchmark":"hitom","context":"The ball is in the box.","question":"Where is the ball?","options":[["A","box"],["B","bag"]],"gold_label":"A","gold_text":"box","order":0}"#,
            r#"{"id":"s2","benchmark":"hitom","context":"The pen is in the bag.","question":"Where is the pen?","options":[["A","box"],["B","bag"]],"gold_label":"B","gold_text":"bag","order":1}"#,
            r#"{"id":"s3","benchmark":"hitom","context":"The cat sat on the mat.","question":"Where is the cat?","options":[["A","mat"],["B","box"]],"gold_label":"A","gold_text":"mat","order":2}"#,
        ];
        fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    fn write_fixture_scripts(dir: &Path) -> PathBuf {
        let path = dir.join("scripts.jsonl");
        let lines = [
            r#"{"sample_id":"s1","segments":[[" reasoning","</think>"," Answer:"," A"]]}"#,
            r#"{"sample_id":"s2","segments":[[" reasoning","</think>"," Answer:"," B"]]}"#,
            r#"{"sample_id":"s3","segments":[[" reasoning","</think>"," Answer:"," B"]]}"#,
        ];
        fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    fn config(dir: &Path) -> RunConfig {
        RunConfig {
            run_id: "test-run".into(),
            backend: BackendConfig::Scripted {
                path: write_fixture_scripts(dir),
            },
            model_name: "scripted".into(),
            sampling: SamplingParams::default(),
            policy: PolicyConfig::Vanilla,
            benchmark: BenchmarkConfig {
                path: write_fixture_dataset(dir),
                kind: Benchmark::Hitom,
            },
            variant: PromptVariant::WithOptions,
            shuffle_seed: None,
            concurrency: 2,
            output_dir: dir.join("out"),
            think_markers: ThinkMarkers::default(),
            sample_limit: None,
            cot_instruction: None,
            retry_attempts: 3,
            retry_backoff_ms: 1,
        }
    }

    #[test]
    fn three_sample_fixture_run() {
        let dir = TempDir::new().unwrap();
        let cfg = config(dir.path());
        let manifest = run_experiment(&cfg).unwrap();
        assert_eq!(manifest.totals.samples, 3);
        assert_eq!(manifest.totals.correct, 2); // s3 answers B, gold A
        assert_eq!(manifest.totals.errored, 0);
        let records = read_records(&cfg.output_dir.join(RECORDS_FILE)).unwrap();
        assert_eq!(records.len(), 3);
        let s3 = records.iter().find(|r| r.sample_id == "s3").unwrap();
        assert!(!s3.correct);
        assert_eq!(s3.predicted.as_deref(), Some("B"));
        assert_eq!(s3.latency_ms, 0);
        // manifest digest matches file bytes
        let bytes = fs::read(cfg.output_dir.join(RECORDS_FILE)).unwrap();
        assert_eq!(manifest.records_digest, hex_digest(&bytes));
    }

    #[test]
    fn rerun_is_byte_identical_after_canonical_sort() {
        let dir = TempDir::new().unwrap();
        let mut cfg = config(dir.path());
        cfg.concurrency = 3;
        run_experiment(&cfg).unwrap();
        let first =
            canonical_records_bytes(&read_records(&cfg.output_dir.join(RECORDS_FILE)).unwrap());
        let mut cfg2 = cfg.clone();
        cfg2.output_dir = dir.path().join("out2");
        run_experiment(&cfg2).unwrap();
        let second =
            canonical_records_bytes(&read_records(&cfg2.output_dir.join(RECORDS_FILE)).unwrap());
        assert_eq!(first, second);
    }

    #[test]
    fn resume_executes_only_missing_samples() {
        let dir = TempDir::new().unwrap();
        let cfg = config(dir.path());
        run_experiment(&cfg).unwrap();
        let records_path = cfg.output_dir.join(RECORDS_FILE);
        // keep only two of three records
        let records = read_records(&records_path).unwrap();
        let kept: Vec<&GenerationRecord> = records.iter().filter(|r| r.sample_id != "s2").collect();
        let mut text = String::new();
        for r in &kept {
            text.push_str(&serde_json::to_string(r).unwrap());
            text.push('\n');
        }
        fs::write(&records_path, text).unwrap();

        let manifest = resume(&cfg, &records_path).unwrap();
        assert_eq!(manifest.totals.samples, 3);
        let after = read_records(&records_path).unwrap();
        assert_eq!(after.len(), 3);
        // the resumed record landed at the end
        assert_eq!(after.last().unwrap().sample_id, "s2");
    }

    #[test]
    fn resume_with_complete_file_runs_nothing() {
        let dir = TempDir::new().unwrap();
        let cfg = config(dir.path());
        run_experiment(&cfg).unwrap();
        let records_path = cfg.output_dir.join(RECORDS_FILE);
        let before = fs::read(&records_path).unwrap();
        let manifest = resume(&cfg, &records_path).unwrap();
        assert_eq!(manifest.totals.samples, 3);
        assert_eq!(fs::read(&records_path).unwrap(), before);
    }

    #[test]
    fn resume_rejects_run_id_mismatch() {
        let dir = TempDir::new().unwrap();
        let cfg = config(dir.path());
        run_experiment(&cfg).unwrap();
        let mut other = cfg.clone();
        other.run_id = "different".into();
        let err = resume(&other, &cfg.output_dir.join(RECORDS_FILE)).unwrap_err();
        assert!(matches!(err, RunError::RunIdMismatch { .. }), "{err}");
    }

    #[test]
    fn corrupted_partial_line_names_the_line() {
        let dir = TempDir::new().unwrap();
        let cfg = config(dir.path());
        run_experiment(&cfg).unwrap();
        let records_path = cfg.output_dir.join(RECORDS_FILE);
        let mut text = fs::read_to_string(&records_path).unwrap();
        text.push_str("{broken\n");
        fs::write(&records_path, text).unwrap();
        // drop the manifest so the parse error is what surfaces
        fs::remove_file(cfg.output_dir.join(MANIFEST_FILE)).unwrap();
        let err = resume(&cfg, &records_path).unwrap_err();
        assert!(
            matches!(err, RunError::RecordParse { line: 4, .. }),
            "{err}"
        );
    }

    #[test]
    fn invalid_config_combinations_rejected() {
        let dir = TempDir::new().unwrap();
        let mut cfg = config(dir.path());
        cfg.policy = PolicyConfig::T2m {
            tau: 3,
            target_word: "wait".into(),
            case_sensitive: false,
            preset_sentence: "choose from: ".into(),
        };
        assert!(matches!(cfg.validate(), Err(RunError::Config(_))));
        cfg.variant = PromptVariant::T2mBase;
        assert!(cfg.validate().is_ok());

        let mut cfg = config(dir.path());
        cfg.benchmark.kind = Benchmark::Tomato;
        cfg.variant = PromptVariant::NoOptions;
        assert!(matches!(cfg.validate(), Err(RunError::Config(_))));

        let mut cfg = config(dir.path());
        cfg.concurrency = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn dataset_errors_propagate_before_any_generation() {
        let dir = TempDir::new().unwrap();
        let mut cfg = config(dir.path());
        fs::write(&cfg.benchmark.path, "not json\n").unwrap();
        cfg.output_dir = dir.path().join("never");
        let err = run_experiment(&cfg).unwrap_err();
        assert!(matches!(err, RunError::Dataset(_)), "{err}");
        assert!(!cfg.output_dir.exists());
    }

    #[test]
    fn missing_script_entry_is_config_error() {
        let dir = TempDir::new().unwrap();
        let mut cfg = config(dir.path());
        let scripts = dir.path().join("partial_scripts.jsonl");
        fs::write(&scripts, r#"{"sample_id":"s1","segments":[["x"]]}"#).unwrap();
        cfg.backend = BackendConfig::Scripted { path: scripts };
        assert!(matches!(run_experiment(&cfg), Err(RunError::Config(_))));
    }

    #[test]
    fn record_multiset_independent_of_concurrency() {
        let dir = TempDir::new().unwrap();
        let mut cfg = config(dir.path());
        cfg.concurrency = 1;
        run_experiment(&cfg).unwrap();
        let serial =
            canonical_records_bytes(&read_records(&cfg.output_dir.join(RECORDS_FILE)).unwrap());
        let mut cfg = config(dir.path());
        cfg.concurrency = 4;
        cfg.output_dir = dir.path().join("out4");
        run_experiment(&cfg).unwrap();
        let parallel =
            canonical_records_bytes(&read_records(&cfg.output_dir.join(RECORDS_FILE)).unwrap());
        assert_eq!(serial, parallel);
    }

    #[test]
    fn backend_down_still_writes_errored_records_and_manifest() {
        let dir = TempDir::new().unwrap();
        let mut cfg = config(dir.path());
        std::env::set_var("TOMLAB_DOWN_TEST_KEY", "super-secret-value");
        cfg.backend = BackendConfig::Remote {
            base_url: "http://127.0.0.1:9".into(),
            api_key_env: "TOMLAB_DOWN_TEST_KEY".into(),
            request_timeout_secs: 1,
            max_retries: 0,
            retry_backoff_ms: 1,
        };
        cfg.retry_attempts = 2;
        cfg.retry_backoff_ms = 1;
        let manifest = run_experiment(&cfg).unwrap();
        assert_eq!(manifest.totals.samples, 3);
        assert_eq!(manifest.totals.correct, 0);
        assert_eq!(manifest.totals.errored, 3);
        let records = read_records(&cfg.output_dir.join(RECORDS_FILE)).unwrap();
        assert!(records.iter().all(|r| r.error.is_some() && !r.correct));
        // no secret material in any persisted output
        let manifest_bytes = fs::read(cfg.output_dir.join(MANIFEST_FILE)).unwrap();
        let record_bytes = fs::read(cfg.output_dir.join(RECORDS_FILE)).unwrap();
        for bytes in [&manifest_bytes, &record_bytes] {
            assert!(!String::from_utf8_lossy(bytes).contains("super-secret-value"));
        }
    }

    #[test]
    fn record_roundtrip_preserves_fields() {
        let record = GenerationRecord {
            sample_id: "s".into(),
            variant: "with_options".into(),
            policy: "s2f(tau=3)".into(),
            transcript: "t".into(),
            think_text: "th".into(),
            answer_text: "a".into(),
            n_tokens: 3,
            n_think_tokens: 1,
            n_chars: 5,
            wait_count: 2,
            injections: vec![RecordInjection {
                token_index: 1,
                reason: "wait_trigger".into(),
                text: "x".into(),
            }],
            predicted: Some("A".into()),
            correct: true,
            truncated: false,
            error: None,
            latency_ms: 0,
            order: Some(2),
            taxonomy: Some("belief".into()),
        };
        let line = serde_json::to_string(&record).unwrap();
        let parsed: GenerationRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(parsed, record);
    }
}
