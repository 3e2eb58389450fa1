use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::ops::AddAssign;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use groundkit::BBox;
use serde::{Deserialize, Serialize};

use crate::client::{Capability, RetryClient, StageClient};
use crate::config::{CaptionSource, EngineConfig};
use crate::error::EngineError;
use crate::manifest::ManifestRecord;
use crate::phrases::{extract_noun_phrases, filter_abstract, Lexicon, PhraseKind};
use crate::stages::{
    caption_image, ground_phrases, phrase_conditioned_caption, verify_and_rewrite, Diagnostic,
    Stage, StageError, VerifyOutcome,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub phrase: String,
    pub kind: PhraseKind,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub referring: Option<String>,
    /// Stages that contributed to this region.
    pub stages: Vec<Stage>,
}

/// Image caption plus grounded regions with their descriptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTriplet {
    pub id: String,
    pub uri: String,
    pub caption: String,
    pub regions: Vec<Region>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    /// Phrases found by the chunker.
    pub extracted: usize,
    /// Phrases that survived the abstract-noun filter.
    pub filtered: usize,
    /// Regions with a box.
    pub grounded: usize,
    /// Regions with a valid one-sentence caption.
    pub captioned: usize,
    /// Region captions flagged as not one sentence.
    pub flagged: usize,
    /// Regions with an accepted referring expression.
    pub accepted: usize,
    pub rejected: usize,
}

impl AddAssign for StageCounts {
    fn add_assign(&mut self, o: Self) {
        self.extracted += o.extracted;
        self.filtered += o.filtered;
        self.grounded += o.grounded;
        self.captioned += o.captioned;
        self.flagged += o.flagged;
        self.accepted += o.accepted;
        self.rejected += o.rejected;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Annotated { triplet: AnnotationTriplet },
    Skipped { reason: String },
    Failed { stage: Stage, error: String },
}

/// Everything produced for one manifest entry; one checkpoint line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub index: usize,
    pub id: String,
    pub outcome: Outcome,
    pub counts: StageCounts,
    pub diagnostics: Vec<Diagnostic>,
}

/// One client per capability.
#[derive(Clone)]
pub struct Clients {
    pub caption: Arc<dyn StageClient>,
    pub ground: Arc<dyn StageClient>,
    pub region_caption: Arc<dyn StageClient>,
    pub verify_rewrite: Arc<dyn StageClient>,
}

impl Clients {
    pub fn uniform(client: Arc<dyn StageClient>) -> Self {
        Clients {
            caption: client.clone(),
            ground: client.clone(),
            region_caption: client.clone(),
            verify_rewrite: client,
        }
    }

    pub fn get(&self, cap: Capability) -> &Arc<dyn StageClient> {
        match cap {
            Capability::Caption => &self.caption,
            Capability::Ground => &self.ground,
            Capability::RegionCaption => &self.region_caption,
            Capability::VerifyRewrite => &self.verify_rewrite,
        }
    }

    fn with_retry(&self, retries: u32, backoff: Duration) -> Self {
        let wrap = |c: &Arc<dyn StageClient>| -> Arc<dyn StageClient> {
            Arc::new(RetryClient::new(c.clone(), retries, backoff))
        };
        Clients {
            caption: wrap(&self.caption),
            ground: wrap(&self.ground),
            region_caption: wrap(&self.region_caption),
            verify_rewrite: wrap(&self.verify_rewrite),
        }
    }
}

pub type Predicate = Arc<dyn Fn(&ManifestRecord) -> Result<(), String> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Continue from `<out>.ckpt` instead of starting over.
    pub resume: bool,
    /// Stop once this many new images are done, leaving the checkpoint.
    pub stop_after: Option<usize>,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunOptions {
            out: out.into(),
            resume: false,
            stop_after: None,
        }
    }
}

pub fn checkpoint_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".ckpt");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub id: String,
    pub stage: Stage,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDiagnostic {
    pub id: String,
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub images: usize,
    pub annotated: usize,
    pub skipped: usize,
    pub failed: usize,
    /// Entries taken from an existing checkpoint.
    pub resumed: usize,
    /// False when the run stopped early; the output file is then not written.
    pub complete: bool,
    pub regions: usize,
    pub counts: StageCounts,
    pub failures: Vec<Failure>,
    pub diagnostics: Vec<ImageDiagnostic>,
}

impl RunReport {
    /// True when any image failed or produced a diagnostic.
    pub fn has_warnings(&self) -> bool {
        self.failed > 0 || !self.diagnostics.is_empty()
    }
}

pub struct Pipeline {
    config: EngineConfig,
    clients: Clients,
    lexicon: Lexicon,
    predicates: Vec<Predicate>,
}

impl Pipeline {
    /// Wraps every client with the configured retry budget.
    pub fn new(config: EngineConfig, clients: Clients) -> Result<Self, EngineError> {
        config.validate()?;
        let clients = clients.with_retry(config.retries, Duration::from_millis(config.backoff_ms));
        Ok(Pipeline {
            config,
            clients,
            lexicon: Lexicon::bundled().clone(),
            predicates: Vec::new(),
        })
    }

    pub fn with_lexicon(mut self, lexicon: Lexicon) -> Self {
        self.lexicon = lexicon;
        self
    }

    /// Adds an admission rule checked after the configured filter.
    pub fn with_predicate(mut self, p: Predicate) -> Self {
        self.predicates.push(p);
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Runs every stage for one image. Stage errors become a `Failed`
    /// outcome rather than an `Err`.
    pub fn annotate(&self, index: usize, rec: &ManifestRecord) -> ImageResult {
        let mut counts = StageCounts::default();
        let mut diags = Vec::new();
        let outcome = match self.admit(rec) {
            Err(reason) => Outcome::Skipped { reason },
            Ok(()) => match self.annotate_inner(rec, &mut counts, &mut diags) {
                Ok(triplet) => Outcome::Annotated { triplet },
                Err(e) => Outcome::Failed {
                    stage: e.stage,
                    error: e.source.to_string(),
                },
            },
        };
        ImageResult {
            index,
            id: rec.id.clone(),
            outcome,
            counts,
            diagnostics: diags,
        }
    }

    fn admit(&self, rec: &ManifestRecord) -> Result<(), String> {
        self.config.filter.check(rec)?;
        self.predicates.iter().try_for_each(|p| p(rec))
    }

    fn annotate_inner(
        &self,
        rec: &ManifestRecord,
        counts: &mut StageCounts,
        diags: &mut Vec<Diagnostic>,
    ) -> Result<AnnotationTriplet, StageError> {
        let image = rec.image_ref();
        let caption = match self.config.caption_source {
            CaptionSource::Model => caption_image(&image, self.clients.caption.as_ref())?,
            CaptionSource::Manifest => rec.caption.clone().ok_or_else(|| StageError {
                stage: Stage::Caption,
                source: crate::client::ClientError::Fixture("manifest entry has no caption".into()),
            })?,
        };
        let caption = caption.trim().to_string();
        let mut regions = Vec::new();
        if caption.is_empty() {
            diags.push(Diagnostic::new(Stage::Caption, "empty caption"));
        } else {
            let phrases = extract_noun_phrases(&caption, &self.lexicon);
            counts.extracted = phrases.len();
            let phrases = filter_abstract(phrases, &self.config.blocklist);
            counts.filtered = phrases.len();
            let (grounded, ground_diags) = ground_phrases(
                &image,
                &phrases,
                self.clients.ground.as_ref(),
                &self.config.grounding(),
            )?;
            diags.extend(ground_diags);
            counts.grounded = grounded.len();
            for g in grounded {
                let mut region = Region {
                    bbox: g.bbox,
                    phrase: g.phrase.text.clone(),
                    kind: g.phrase.kind,
                    score: g.score,
                    detail: None,
                    referring: None,
                    stages: vec![Stage::Ground],
                };
                let rc = phrase_conditioned_caption(
                    &image,
                    &g.bbox,
                    &region.phrase,
                    self.clients.region_caption.as_ref(),
                )?;
                if rc.one_sentence {
                    counts.captioned += 1;
                    region.stages.push(Stage::RegionCaption);
                    region.detail = Some(rc.text);
                } else {
                    counts.flagged += 1;
                    diags.push(Diagnostic::new(
                        Stage::RegionCaption,
                        format!("caption for {:?} is not one sentence", region.phrase),
                    ));
                }
                if let Some(detail) = &region.detail {
                    match verify_and_rewrite(
                        detail,
                        &region.phrase,
                        self.clients.verify_rewrite.as_ref(),
                    )? {
                        VerifyOutcome::Accepted(r) => {
                            counts.accepted += 1;
                            region.stages.push(Stage::VerifyRewrite);
                            region.referring = Some(r);
                        }
                        VerifyOutcome::Rejected(why) => {
                            counts.rejected += 1;
                            diags.push(Diagnostic::new(
                                Stage::VerifyRewrite,
                                format!("{:?}: {why}", region.phrase),
                            ));
                        }
                    }
                }
                regions.push(region);
            }
        }
        Ok(AnnotationTriplet {
            id: rec.id.clone(),
            uri: rec.uri.clone(),
            caption,
            regions,
        })
    }

    /// Annotates the manifest with a checkpoint at `<out>.ckpt`. The
    /// triplet file is written in manifest order once every image is done,
    /// after which the checkpoint is removed.
    pub fn run(
        &self,
        manifest: &[ManifestRecord],
        opts: &RunOptions,
    ) -> Result<RunReport, EngineError> {
        let ckpt = checkpoint_path(&opts.out);
        let mut done: BTreeMap<usize, ImageResult> = BTreeMap::new();
        if opts.resume && ckpt.exists() {
            done = load_checkpoint(&ckpt, manifest)?;
        } else {
            File::create(&ckpt).map_err(|e| EngineError::io(&ckpt, e))?;
        }
        let resumed = done.len();
        let mut file = OpenOptions::new()
            .append(true)
            .open(&ckpt)
            .map_err(|e| EngineError::io(&ckpt, e))?;

        let pending: Vec<usize> = (0..manifest.len())
            .filter(|i| !done.contains_key(i))
            .collect();
        let next = AtomicUsize::new(0);
        let stop = AtomicBool::new(opts.stop_after == Some(0));
        let mut write_err = None;
        let mut fresh = 0;
        let workers = self.config.worker_count().min(pending.len()).max(1);
        std::thread::scope(|s| {
            let (tx, rx) = mpsc::channel();
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, stop, pending) = (&next, &stop, &pending);
                s.spawn(move || loop {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&i) = pending.get(k) else { break };
                    if tx.send(self.annotate(i, &manifest[i])).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            let limit = opts.stop_after.unwrap_or(usize::MAX);
            for r in rx {
                // Results still in flight after the limit are dropped, as a kill would.
                if write_err.is_some() || fresh >= limit {
                    continue;
                }
                let line = serde_json::to_string(&r).expect("results serialize") + "\n";
                if let Err(e) = file.write_all(line.as_bytes()).and_then(|_| file.flush()) {
                    write_err = Some(EngineError::io(&ckpt, e));
                    stop.store(true, Ordering::SeqCst);
                    continue;
                }
                done.insert(r.index, r);
                fresh += 1;
                if fresh >= limit {
                    stop.store(true, Ordering::SeqCst);
                }
            }
        });
        if let Some(e) = write_err {
            return Err(e);
        }
        drop(file);

        let complete = done.len() == manifest.len();
        if complete {
            write_triplets(&opts.out, done.values())?;
            std::fs::remove_file(&ckpt).map_err(|e| EngineError::io(&ckpt, e))?;
        }
        let mut report = summarize(manifest.len(), done.values());
        report.resumed = resumed;
        report.complete = complete;
        Ok(report)
    }
}

fn summarize<'a>(images: usize, results: impl Iterator<Item = &'a ImageResult>) -> RunReport {
    let mut r = RunReport {
        images,
        ..RunReport::default()
    };
    for res in results {
        r.counts += res.counts;
        r.diagnostics
            .extend(res.diagnostics.iter().map(|d| ImageDiagnostic {
                id: res.id.clone(),
                stage: d.stage,
                message: d.message.clone(),
            }));
        match &res.outcome {
            Outcome::Annotated { triplet } => {
                r.annotated += 1;
                r.regions += triplet.regions.len();
            }
            Outcome::Skipped { .. } => r.skipped += 1,
            Outcome::Failed { stage, error } => {
                r.failed += 1;
                r.failures.push(Failure {
                    id: res.id.clone(),
                    stage: *stage,
                    error: error.clone(),
                });
            }
        }
    }
    r
}

/// Reads checkpoint entries, dropping an unterminated final line left by
/// an interrupted write and truncating the file to match.
fn load_checkpoint(
    path: &Path,
    manifest: &[ManifestRecord],
) -> Result<BTreeMap<usize, ImageResult>, EngineError> {
    let text = std::fs::read_to_string(path).map_err(|e| EngineError::io(path, e))?;
    let valid = text.rfind('\n').map_or(0, |p| p + 1);
    if valid < text.len() {
        let f = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|e| EngineError::io(path, e))?;
        f.set_len(valid as u64)
            .map_err(|e| EngineError::io(path, e))?;
    }
    let mut out = BTreeMap::new();
    for (n, line) in text[..valid].lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ImageResult = serde_json::from_str(line).map_err(|e| EngineError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        match manifest.get(r.index) {
            Some(m) if m.id == r.id => {}
            _ => {
                return Err(EngineError::Checkpoint(format!(
                    "entry {} ({}) is not in the manifest",
                    r.index, r.id
                )))
            }
        }
        out.insert(r.index, r);
    }
    Ok(out)
}

fn write_triplets<'a>(
    out: &Path,
    results: impl Iterator<Item = &'a ImageResult>,
) -> Result<(), EngineError> {
    let mut text = String::new();
    for r in results {
        if let Outcome::Annotated { triplet } = &r.outcome {
            text.push_str(&serde_json::to_string(triplet).expect("triplets serialize"));
            text.push('\n');
        }
    }
    let mut tmp = out.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, text).map_err(|e| EngineError::io(&tmp, e))?;
    std::fs::rename(&tmp, out).map_err(|e| EngineError::io(out, e))
}

/// Reads a triplet store written by [`Pipeline::run`].
pub fn read_triplets(path: &Path) -> Result<Vec<AnnotationTriplet>, EngineError> {
    let text = std::fs::read_to_string(path).map_err(|e| EngineError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| EngineError::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{ClientError, MockClient, StageReply, StageRequest};

    fn rec(id: &str) -> ManifestRecord {
        ManifestRecord {
            id: id.into(),
            uri: format!("mem://{id}"),
            width: 640.0,
            height: 480.0,
            tags: Vec::new(),
            caption: None,
        }
    }

    fn mock() -> Pipeline {
        Pipeline::new(
            EngineConfig::default(),
            Clients::uniform(Arc::new(MockClient)),
        )
        .unwrap()
    }

    #[test]
    fn annotate_produces_consistent_counts() {
        let p = mock();
        for i in 0..20 {
            let r = p.annotate(i, &rec(&format!("img{i}")));
            let Outcome::Annotated { triplet } = r.outcome else {
                panic!()
            };
            assert_eq!(triplet.regions.len(), r.counts.grounded);
            assert_eq!(r.counts.captioned + r.counts.flagged, r.counts.grounded);
            assert_eq!(r.counts.accepted + r.counts.rejected, r.counts.captioned);
            assert!(r.counts.filtered <= r.counts.extracted);
            for region in &triplet.regions {
                assert!(!region.phrase.is_empty());
                assert!(!crate::phrases::DEFAULT_ABSTRACT_NOUNS.contains(
                    &region
                        .phrase
                        .split_whitespace()
                        .last()
                        .unwrap()
                        .to_lowercase()
                        .as_str()
                ));
                if let Some(text) = &region.referring {
                    assert!(crate::stages::check_referring(text).is_ok());
                }
            }
        }
    }

    #[test]
    fn stage_failure_is_isolated() {
        let broken = |r: &StageRequest| match r {
            StageRequest::Ground { .. } => Err(ClientError::Transport("down".into())),
            other => MockClient.call(other),
        };
        let p = Pipeline::new(EngineConfig::default(), Clients::uniform(Arc::new(broken))).unwrap();
        let r = p.annotate(0, &rec("x"));
        assert!(matches!(
            r.outcome,
            Outcome::Failed {
                stage: Stage::Ground,
                ..
            }
        ));
    }

    #[test]
    fn filtered_images_are_skipped() {
        let p = mock().with_predicate(Arc::new(|r: &ManifestRecord| {
            if r.id.starts_with("skip") {
                Err("by predicate".into())
            } else {
                Ok(())
            }
        }));
        assert!(matches!(
            p.annotate(0, &rec("skip-1")).outcome,
            Outcome::Skipped { .. }
        ));
        assert!(matches!(
            p.annotate(0, &rec("keep")).outcome,
            Outcome::Annotated { .. }
        ));
    }

    #[test]
    fn manifest_captions_bypass_the_caption_client() {
        let no_caption = |r: &StageRequest| match r {
            StageRequest::Caption { .. } => Err(ClientError::Remote("unused".into())),
            other => MockClient.call(other),
        };
        let p = Pipeline::new(
            EngineConfig::conversation(),
            Clients::uniform(Arc::new(no_caption)),
        )
        .unwrap();
        let mut m = rec("c");
        m.caption = Some("A tall giraffe eats leaves.".into());
        let Outcome::Annotated { triplet } = p.annotate(0, &m).outcome else {
            panic!()
        };
        assert_eq!(triplet.caption, "A tall giraffe eats leaves.");
        m.caption = None;
        assert!(matches!(
            p.annotate(0, &m).outcome,
            Outcome::Failed {
                stage: Stage::Caption,
                ..
            }
        ));
    }

    #[test]
    fn empty_manifest_gives_empty_output() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("t.jsonl");
        let report = mock().run(&[], &RunOptions::new(&out)).unwrap();
        assert!(report.complete);
        assert_eq!(report.counts, StageCounts::default());
        assert_eq!(std::fs::read_to_string(&out).unwrap(), "");
        assert!(!checkpoint_path(&out).exists());
    }

    #[test]
    fn checkpoint_rejects_foreign_entries() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("t.jsonl");
        let p = mock();
        let m = [rec("a"), rec("b")];
        let opts = RunOptions {
            stop_after: Some(1),
            ..RunOptions::new(&out)
        };
        let r = p.run(&m, &opts).unwrap();
        assert!(!r.complete);
        let other = [rec("z"), rec("y")];
        let resume = RunOptions {
            resume: true,
            ..RunOptions::new(&out)
        };
        assert!(matches!(
            p.run(&other, &resume),
            Err(EngineError::Checkpoint(_))
        ));
    }

    #[test]
    fn reply_kind_mismatch_fails_the_image() {
        let wrong = |_: &StageRequest| {
            Ok(StageReply::Caption {
                caption: "x".into(),
            })
        };
        let clients = Clients {
            ground: Arc::new(wrong),
            ..Clients::uniform(Arc::new(MockClient))
        };
        let p = Pipeline::new(EngineConfig::default(), clients).unwrap();
        let r = p.annotate(0, &rec("q"));
        if r.counts.filtered > 0 {
            assert!(matches!(
                r.outcome,
                Outcome::Failed {
                    stage: Stage::Ground,
                    ..
                }
            ));
        }
    }
}
