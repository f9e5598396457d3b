//! Acceptance gate. Each criterion prints one PASS/FAIL line (written
//! straight to stdout so it shows up without `--nocapture`) and the test fails
//! if any criterion fails or overruns its time budget.

mod common;

use std::collections::HashMap;
use std::io::Write as _;
use std::net::SocketAddr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use restory_core::aligner::{align, AlignError, AlignmentConfig};
use restory_core::captioner::{caption_sequence, PromptTemplates};
use restory_core::ingest::{sample_indices, CropBox, FrameEntry, FrameRecord, SamplingRate};
use restory_core::project::{Backends, Project, ProjectConfig};
use restory_core::providers::cache::MemoryCache;
use restory_core::providers::mock::{Counting, MockDetector, MockEmbedder, MockVlm};
use restory_core::providers::{
    CaptionClient, CaptionRequest, CaptionRole, EmbeddingVector, ProviderError, RetryPolicy, VisionLanguageModel,
};
use restory_core::similarity::{cosine, weighted_similarity, Alpha, SimilarityBreakdown, SimilarityMatrix};
use restory_core::storyboard::{
    apply_edit, parse_manifest, render, CurationEdit, EgoMotionPolicy, RenderFormat, Status, Storyboard,
    StoryboardError, StoryboardKind, StoryboardSlot,
};
use restory_core::{FrameCaptions, Strategy};
use serde_json::{json, Value};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

#[test]
fn acceptance_criteria() {
    let criteria = [
        Criterion { name: "weighted-metric", budget: Duration::from_secs(1), run: weighted_metric },
        Criterion { name: "cosine", budget: Duration::from_secs(1), run: cosine_suite },
        Criterion { name: "greedy-oracle", budget: Duration::from_secs(5), run: greedy_oracle },
        Criterion { name: "monotone-dp-oracle", budget: Duration::from_secs(30), run: monotone_oracle },
        Criterion { name: "prompt-chain", budget: Duration::from_secs(1), run: prompt_chain },
        Criterion { name: "sampling", budget: Duration::from_secs(1), run: sampling_contract },
        Criterion { name: "end-to-end-determinism", budget: Duration::from_secs(10), run: end_to_end_determinism },
        Criterion { name: "manifest-round-trip", budget: Duration::from_secs(2), run: manifest_round_trip },
        Criterion { name: "curation-semantics", budget: Duration::from_secs(2), run: curation_semantics },
        Criterion { name: "api-contract", budget: Duration::from_secs(10), run: api_contract },
    ];
    let mut failures = Vec::new();
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; took {elapsed:?}, budget {:?}", c.budget)),
            other => other,
        };
        match outcome {
            Ok(detail) => emit(&format!("ACCEPTANCE PASS {:<24} {:>8.1?}  {detail}", c.name, elapsed)),
            Err(reason) => {
                emit(&format!("ACCEPTANCE FAIL {:<24} {:>8.1?}  {reason}", c.name, elapsed));
                failures.push(c.name);
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- weighted

fn weighted_metric() -> Outcome {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p: f64 = r.random_range(-1.0..=1.0);
        let c: f64 = r.random_range(-1.0..=1.0);
        let a: f64 = r.random_range(0.0..=1.0);
        let expected = a * p + (1.0 - a) * c;
        let got = weighted_similarity(p, c, a).map_err(|e| e.to_string())?;
        worst = worst.max((got - expected).abs());
        let b = SimilarityBreakdown::new(p, c, Alpha::new(a).unwrap());
        ensure!((b.weighted_sim - expected).abs() <= 1e-12, "breakdown differs at ({p}, {c}, {a})");
    }
    ensure!(worst <= 1e-12, "max deviation {worst:e}");
    ensure!(weighted_similarity(0.5, 0.5, 1.1).is_err(), "alpha above 1 accepted");
    ensure!(weighted_similarity(0.5, 0.5, -0.1).is_err(), "alpha below 0 accepted");

    // default alpha when the config leaves it out
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("storyboards")).unwrap();
    std::fs::create_dir_all(dir.path().join("videos")).unwrap();
    std::fs::write(dir.path().join("restory.toml"), "[alignment]\nstrategy = \"greedy\"\n").unwrap();
    let cfg = ProjectConfig::load(dir.path()).map_err(|e| e.to_string())?;
    ensure!(cfg.alignment.alpha.get() == 0.2, "config default alpha is {}", cfg.alignment.alpha.get());
    ensure!(AlignmentConfig::default().alpha.get() == 0.2, "AlignmentConfig default alpha differs");
    Ok(format!("1000 triples, max |err| {worst:.1e}; default alpha 0.2"))
}

// ------------------------------------------------------------------ cosine

fn unit(values: Vec<f32>) -> EmbeddingVector {
    EmbeddingVector::normalized(values, "test").unwrap()
}

fn cosine_suite() -> Outcome {
    let v = unit(vec![0.3, -1.2, 2.5, 0.7]);
    let neg = unit(v.values.iter().map(|x| -x).collect());
    let e1 = unit(vec![1.0, 0.0, 0.0, 0.0]);
    let e2 = unit(vec![0.0, 1.0, 0.0, 0.0]);
    let c = |a: &EmbeddingVector, b: &EmbeddingVector| cosine(a, b).map_err(|e| e.to_string());
    ensure!((c(&v, &v)? - 1.0).abs() <= 1e-6, "identity {}", c(&v, &v)?);
    ensure!((c(&v, &neg)? + 1.0).abs() <= 1e-6, "antipodal {}", c(&v, &neg)?);
    ensure!(c(&e1, &e2)?.abs() <= 1e-6, "orthogonal {}", c(&e1, &e2)?);

    let mut r = rng(2);
    let mut worst_oracle = 0.0f64;
    for i in 0..1000 {
        let dim = if i % 2 == 0 { 16 } else { 384 };
        let a = unit((0..dim).map(|_| r.random_range(-1.0f32..1.0)).collect());
        let b = unit((0..dim).map(|_| r.random_range(-1.0f32..1.0)).collect());
        let ab = c(&a, &b)?;
        ensure!(ab.to_bits() == c(&b, &a)?.to_bits(), "asymmetry on pair {i}");
        let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
        let na: f64 = a.values.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.values.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        worst_oracle = worst_oracle.max((ab - dot / (na * nb)).abs());
    }
    ensure!(worst_oracle <= 1e-6, "deviation from dot/(|a||b|) {worst_oracle:e}");
    let short = unit(vec![1.0, 0.0]);
    ensure!(cosine(&short, &e1).is_err(), "dimension mismatch not reported");
    Ok(format!("identity/antipodal/orthogonal within 1e-6; 1000 pairs symmetric; oracle err {worst_oracle:.1e}"))
}

// ------------------------------------------------------------------ greedy

fn random_rows(r: &mut ChaCha8Rng, slots: usize, frames: usize, quantized: bool) -> Vec<Vec<f64>> {
    (0..slots)
        .map(|_| {
            (0..frames)
                .map(|_| if quantized { f64::from(r.random_range(-16i32..=16)) / 16.0 } else { r.random_range(-1.0..1.0) })
                .collect()
        })
        .collect()
}

fn first_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}

fn chosen(rows: &[Vec<f64>], strategy: Strategy) -> Result<Vec<usize>, AlignError> {
    let cfg = AlignmentConfig { strategy, alpha: Alpha::new(1.0).unwrap(), ..AlignmentConfig::default() };
    Ok(align(&SimilarityMatrix::from_weighted_rows(rows), &cfg)?.chosen())
}

fn greedy_oracle() -> Outcome {
    let mut r = rng(3);
    let mut ties = 0;
    for case in 0..200 {
        let slots = r.random_range(1..=10);
        let frames = r.random_range(1..=20);
        let rows = random_rows(&mut r, slots, frames, case % 2 == 0);
        let expected: Vec<usize> = rows.iter().map(|row| first_argmax(row)).collect();
        ties += rows.iter().filter(|row| row.iter().filter(|&&x| x == row[first_argmax(row)]).count() > 1).count();
        let got = chosen(&rows, Strategy::Greedy).map_err(|e| e.to_string())?;
        ensure!(got == expected, "case {case}: greedy {got:?}, oracle {expected:?}");
    }

    let mut r = rng(4);
    for case in 0..20 {
        let factor: f64 = r.random_range(0.01..100.0);
        let slots = r.random_range(1..=5);
        let frames = r.random_range(slots..=10);
        let rows = random_rows(&mut r, slots, frames, false);
        let scaled: Vec<Vec<f64>> = rows.iter().map(|row| row.iter().map(|x| x * factor).collect()).collect();
        for strategy in [Strategy::Greedy, Strategy::Monotone] {
            let a = chosen(&rows, strategy).map_err(|e| e.to_string())?;
            let b = chosen(&scaled, strategy).map_err(|e| e.to_string())?;
            ensure!(a == b, "scale {factor} case {case} {strategy:?}: {a:?} vs {b:?}");
        }
    }
    Ok(format!("200 matrices match per-row scan ({ties} tied rows); 20 scale factors invariant"))
}

// ---------------------------------------------------------------- monotone

fn increasing(n: usize, m: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, left: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for j in start..=m - left {
            cur.push(j);
            go(j + 1, left - 1, m, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, m, &mut Vec::new(), &mut out);
    out
}

fn monotone_oracle() -> Outcome {
    let mut r = rng(5);
    let mut exact_checks = 0;
    for case in 0..200 {
        let slots = r.random_range(1..=5);
        let frames = r.random_range(slots..=10);
        let quantized = case % 2 == 0;
        let rows = random_rows(&mut r, slots, frames, quantized);
        let score = |seq: &[usize]| seq.iter().enumerate().map(|(i, &j)| rows[i][j]).sum::<f64>();
        // enumeration in lexicographic order; keep the first strict maximum
        let mut best: Option<(f64, Vec<usize>)> = None;
        for seq in increasing(slots, frames) {
            let s = score(&seq);
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, seq));
            }
        }
        let (best_score, best_seq) = best.unwrap();

        let cfg = AlignmentConfig { strategy: Strategy::Monotone, alpha: Alpha::new(1.0).unwrap(), ..Default::default() };
        let result = align(&SimilarityMatrix::from_weighted_rows(&rows), &cfg).map_err(|e| e.to_string())?;
        let got = result.chosen();
        ensure!(got.windows(2).all(|w| w[0] < w[1]), "case {case}: not increasing {got:?}");
        ensure!(
            (result.total_score - best_score).abs() <= 1e-9,
            "case {case}: total {} vs enumeration {best_score}",
            result.total_score
        );
        ensure!((score(&got) - result.total_score).abs() <= 1e-9, "case {case}: total does not match choices");
        if quantized {
            ensure!(got == best_seq, "case {case}: {got:?} vs lexicographic optimum {best_seq:?}");
            exact_checks += 1;
        }
    }
    for (slots, frames) in [(3, 2), (5, 4), (2, 1)] {
        let rows = random_rows(&mut r, slots, frames, false);
        match chosen(&rows, Strategy::Monotone) {
            Err(AlignError::Infeasible { .. }) => {}
            other => return Err(format!("{slots}x{frames} should be infeasible, got {other:?}")),
        }
    }
    Ok(format!("200 matrices equal enumeration ({exact_checks} with exact tie-broken indices); infeasible cases error"))
}

// ------------------------------------------------------------ prompt chain

#[derive(Default)]
struct Recorder {
    calls: Mutex<Vec<(CaptionRole, String)>>,
}

impl VisionLanguageModel for Recorder {
    fn model_name(&self) -> &str {
        "recorder"
    }
    fn complete(&self, request: &CaptionRequest<'_>) -> Result<String, ProviderError> {
        self.calls.lock().unwrap().push((request.role, request.prompt.to_string()));
        MockVlm::default().complete(request)
    }
}

fn frame_record(dir: &Path, video: &str, i: usize) -> FrameRecord {
    let path = dir.join(format!("{video}_{i}.png"));
    let bytes = format!("image {video} {i}");
    std::fs::write(&path, &bytes).unwrap();
    let hash = restory_core::digest::sha256_hex(bytes.as_bytes());
    FrameRecord {
        video_id: video.into(),
        frame_index: i,
        timestamp_ms: i as u64 * 500,
        image_ref: path,
        content_hash: hash.clone(),
        source_hash: hash,
        crop_box: None,
        person_detected: false,
    }
}

fn prompt_chain() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let frames: Vec<FrameRecord> = (0..4).map(|i| frame_record(dir.path(), "chain", i)).collect();
    let recorder = Arc::new(Recorder::default());
    let client = CaptionClient::new(recorder.clone(), Arc::new(MemoryCache::default()), RetryPolicy::none());
    let captions = caption_sequence(&frames, &PromptTemplates::default(), &client).map_err(|e| e.to_string())?;
    let calls = recorder.calls.lock().unwrap().clone();
    ensure!(calls.len() == 8, "expected 8 VLM calls, saw {}", calls.len());
    let p2: Vec<&String> = calls.iter().filter(|(role, _)| *role == CaptionRole::Context).map(|(_, p)| p).collect();
    ensure!(p2.len() == 4, "expected 4 P2 prompts");
    for i in 0..4 {
        ensure!(p2[i].contains(&captions[i].pose_caption), "P2 of frame {i} lacks its own pose caption");
        if i > 0 {
            ensure!(p2[i].contains(&captions[i - 1].context_caption), "P2 of frame {i} lacks C_c of frame {}", i - 1);
        }
    }
    for other in &captions {
        ensure!(!p2[0].contains(&other.context_caption), "frame 0 P2 carries a previous answer");
    }
    ensure!(!p2[0].contains("A moment ago"), "frame 0 P2 uses the chained template");
    Ok("4 frames, 8 calls; P2(i) embeds C_c(i-1) verbatim, P2(0) embeds none".into())
}

// ---------------------------------------------------------------- sampling

fn entries(times: &[u64]) -> Vec<FrameEntry> {
    times.iter().map(|&t| FrameEntry { path: PathBuf::from(format!("{t}.png")), timestamp_ms: t }).collect()
}

/// Independent statement of the rule: grid targets k*1000*den/num ms up to
/// the duration, a closing target at the duration when the grid stops short,
/// nearest entry per target with ties to the earlier one, consecutive repeats
/// dropped.
fn sampling_oracle(times: &[u64], num: u64, den: u64) -> Vec<usize> {
    let duration = *times.last().unwrap();
    let mut targets: Vec<f64> = Vec::new();
    let mut k = 0u64;
    loop {
        let t = (k * 1000 * den) as f64 / num as f64;
        if t > duration as f64 + 1e-9 {
            break;
        }
        targets.push(t);
        k += 1;
    }
    if targets.last().is_some_and(|&t| t < duration as f64 - 1e-9) {
        targets.push(duration as f64);
    }
    let mut picks: Vec<usize> = Vec::new();
    for t in targets {
        let mut best = 0;
        for (i, &ts) in times.iter().enumerate() {
            if (ts as f64 - t).abs() < (times[best] as f64 - t).abs() {
                best = i;
            }
        }
        if picks.last() != Some(&best) {
            picks.push(best);
        }
    }
    picks
}

fn sampling_contract() -> Outcome {
    let two_hz = SamplingRate::new(2, 1).map_err(|e| e.to_string())?;
    let dense: Vec<u64> = (0..=100).map(|i| i * 100).collect();
    let picks = sample_indices(&entries(&dense), 10_000, two_hz);
    let stamps: Vec<u64> = picks.iter().map(|&i| dense[i]).collect();
    let grid: Vec<u64> = (0..=20).map(|k| k * 500).collect();
    ensure!(stamps == grid, "10 s at 2 Hz gave {} frames: {stamps:?}", stamps.len());

    let mut r = rng(6);
    let rates = [(2, 1), (1, 1), (3, 1), (1, 2), (5, 2)];
    for case in 0..300 {
        let n = r.random_range(1..=40);
        let mut t = r.random_range(0..300u64);
        let mut times = Vec::with_capacity(n);
        for _ in 0..n {
            times.push(t);
            t += r.random_range(1..700u64);
        }
        let (num, den) = rates[case % rates.len()];
        let rate = SamplingRate::new(num, den).map_err(|e| e.to_string())?;
        let got = sample_indices(&entries(&times), *times.last().unwrap(), rate);
        let expected = sampling_oracle(&times, num, den);
        ensure!(got == expected, "case {case} ({num}/{den} Hz) {times:?}: {got:?} vs oracle {expected:?}");
    }
    Ok("10 s @ 2 Hz -> 21 frames on the 0.5 s grid; 300 irregular fixtures agree with the nearest-timestamp oracle".into())
}

// ------------------------------------------------------------- end to end

fn provider_line(out: &str) -> Option<String> {
    out.lines().find(|l| l.starts_with("provider calls:")).map(String::from)
}

fn manifest_of(out: &str) -> Option<PathBuf> {
    out.lines().find_map(|l| l.strip_prefix("manifest: ")).map(PathBuf::from)
}

fn end_to_end_determinism() -> Outcome {
    let first = common::demo_project();
    let other = common::demo_project();
    let mut manifests = Vec::new();
    let mut lines = Vec::new();
    for project in [first.path(), first.path(), other.path()] {
        let out = common::restory(project, &["generate", "driveby", "offer_release"]);
        ensure!(out.status.success(), "generate failed: {}", common::stderr(&out));
        let text = common::stdout(&out);
        let path = manifest_of(&text).ok_or("no manifest path printed")?;
        manifests.push(std::fs::read(path).map_err(|e| e.to_string())?);
        lines.push(provider_line(&text).ok_or("no provider call line printed")?);
    }
    ensure!(manifests[0] == manifests[1], "rerun changed storyboard.json");
    ensure!(manifests[0] == manifests[2], "fresh project produced a different storyboard.json");
    ensure!(lines[0] != "provider calls: vlm 0, embedder 0, detector 0", "first run made no provider calls");
    ensure!(lines[1] == "provider calls: vlm 0, embedder 0, detector 0", "rerun made calls: {}", lines[1]);
    Ok(format!("3 runs byte-identical ({} bytes); first run {}; rerun 0 calls", manifests[0].len(), &lines[0][16..]))
}

// ----------------------------------------------------------- manifest i/o

fn random_text(r: &mut ChaCha8Rng) -> String {
    const PIECES: &[&str] = &[
        "standing", "arms crossed", "\"quoted\"", "back\\slash", "new\nline", "tab\there", "<b>", "&amp;", "café",
        "人", "🙂", "", " ", "{p1_answer}",
    ];
    (0..r.random_range(0..6)).map(|_| PIECES[r.random_range(0..PIECES.len())]).collect::<Vec<_>>().join(" ")
}

fn random_float(r: &mut ChaCha8Rng) -> f64 {
    match r.random_range(0..5) {
        0 => r.random_range(-1.0..1.0),
        1 => r.random_range(-1.0..1.0) * 1e-300,
        2 => r.random_range(-1.0..1.0) * 1e300,
        3 => f64::from(r.random_range(-8i32..8)) / 8.0,
        _ => 1.0 / f64::from(r.random_range(1..1000i32)),
    }
}

fn random_storyboard(r: &mut ChaCha8Rng, case: usize) -> Storyboard {
    let n = r.random_range(1..=8);
    let kind = [StoryboardKind::Reference, StoryboardKind::Generated, StoryboardKind::Curated][r.random_range(0..3)];
    let policy = match r.random_range(0..3) {
        0 => None,
        1 => Some(EgoMotionPolicy::CopyReference),
        _ => Some(EgoMotionPolicy::FromInputVideo),
    };
    let slots = (0..n)
        .map(|i| {
            let video = format!("video{}", r.random_range(0..3));
            let frame_index = r.random_range(0..500);
            let hash = format!("{:064x}", r.random::<u128>());
            StoryboardSlot {
                slot_index: i,
                frame: FrameRecord {
                    video_id: video.clone(),
                    frame_index,
                    timestamp_ms: r.random_range(0..10_000_000),
                    image_ref: PathBuf::from(format!("media/{case}/{i}.png")),
                    content_hash: hash.clone(),
                    source_hash: if r.random_bool(0.5) { hash } else { format!("{:064x}", r.random::<u128>()) },
                    crop_box: r.random_bool(0.5).then(|| CropBox {
                        x: r.random_range(0..100),
                        y: r.random_range(0..100),
                        width: r.random_range(1..100),
                        height: r.random_range(1..100),
                    }),
                    person_detected: r.random_bool(0.5),
                },
                captions: FrameCaptions {
                    video_id: video,
                    frame_index,
                    pose_caption: random_text(r),
                    context_caption: random_text(r),
                    model_name: random_text(r),
                    p1_prompt_hash: format!("{:x}", r.random::<u64>()),
                    p2_prompt_hash: format!("{:x}", r.random::<u64>()),
                },
                ego_motion_to_next: (i + 1 < n && r.random_bool(0.8)).then(|| random_text(r)),
                breakdown: r.random_bool(0.7).then(|| {
                    let (p, c) = (random_float(r), random_float(r));
                    SimilarityBreakdown::new(p, c, Alpha::new(r.random_range(0.0..=1.0)).unwrap())
                }),
            }
        })
        .collect();
    let edits = (0..r.random_range(0..4))
        .map(|_| match r.random_range(0..3) {
            0 => CurationEdit::SwapSlots { a: r.random_range(0..n), b: r.random_range(0..n) },
            1 => CurationEdit::ReplaceFrame { a: r.random_range(0..n), b: r.random_range(0..50) },
            _ => CurationEdit::Approve,
        })
        .collect();
    Storyboard {
        id: format!("board-{case}"),
        kind,
        status: if r.random_bool(0.5) { Status::Draft } else { Status::Approved },
        reference_storyboard_id: r.random_bool(0.5).then(|| random_text(r)),
        input_video_id: r.random_bool(0.5).then(|| random_text(r)),
        config_digest: r.random_bool(0.5).then(|| format!("{:064x}", r.random::<u128>())),
        ego_motion_policy: policy,
        slots,
        edit_history: edits,
    }
}

fn manifest_round_trip() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut r = rng(7);
    for case in 0..50 {
        let sb = random_storyboard(&mut r, case);
        for slot in &sb.slots {
            let p = root.path().join(&slot.frame.image_ref);
            std::fs::create_dir_all(p.parent().unwrap()).unwrap();
            std::fs::write(p, b"img").unwrap();
        }
        let out = root.path().join("out").join(&sb.id);
        let path = render(&sb, RenderFormat::Manifest, &out, root.path()).map_err(|e| e.to_string())?;
        let parsed = parse_manifest(&path).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(parsed == sb, "case {case}: round-trip changed the storyboard");
        let again = render(&parsed, RenderFormat::Manifest, &root.path().join("again"), root.path()).unwrap();
        ensure!(std::fs::read(&path).unwrap() == std::fs::read(again).unwrap(), "case {case}: re-render differs");
    }
    Ok("50 randomized storyboards: parse(render(s)) == s, re-render byte-identical".into())
}

// ---------------------------------------------------------------- curation

fn generated_demo() -> Result<(tempfile::TempDir, Storyboard, ProjectConfig), String> {
    let dir = common::demo_project();
    let cfg = ProjectConfig::load(dir.path()).map_err(|e| e.to_string())?;
    let report = Project::open(cfg.clone())
        .and_then(|p| p.generate("driveby", "offer_release"))
        .map_err(|e| e.to_string())?;
    Ok((dir, report.storyboard, cfg))
}

fn curation_semantics() -> Outcome {
    let mut r = rng(8);
    let mut swaps = 0;
    for case in 0..50 {
        let mut sb = random_storyboard(&mut r, case);
        sb.kind = StoryboardKind::Generated;
        sb.status = Status::Draft;
        let n = sb.slots.len();
        let (a, b) = (r.random_range(0..n), r.random_range(0..n));
        let once = apply_edit(&sb, CurationEdit::SwapSlots { a, b }, None).map_err(|e| e.to_string())?;
        let twice = apply_edit(&once, CurationEdit::SwapSlots { a, b }, None).map_err(|e| e.to_string())?;
        ensure!(twice.slots == sb.slots, "case {case}: swap({a},{b}) twice is not the identity");
        ensure!(twice.version() == sb.version() + 2, "case {case}: history not appended");
        if a != b {
            ensure!(once.slots[a].frame == sb.slots[b].frame, "case {case}: swap did not move frames");
            ensure!(once.slots[a].ego_motion_to_next == sb.slots[a].ego_motion_to_next, "ego motion moved with frame");
        }
        swaps += 1;
    }

    let (_dir, generated, _) = generated_demo()?;
    let approved = apply_edit(&generated, CurationEdit::Approve, None).map_err(|e| e.to_string())?;
    for edit in [CurationEdit::SwapSlots { a: 0, b: 1 }, CurationEdit::ReplaceFrame { a: 0, b: 1 }, CurationEdit::Approve] {
        match apply_edit(&approved, edit, None) {
            Err(StoryboardError::AlreadyApproved(_)) => {}
            other => return Err(format!("{edit:?} on approved storyboard gave {other:?}")),
        }
    }

    // version-token conflict through the server
    let (dir, generated, cfg) = generated_demo()?;
    let server = InProcessServer::start(cfg)?;
    let uri = format!("/api/storyboards/{}/edits", generated.id);
    let (s1, _) = server.post(&uri, json!({"kind": "swap_slots", "a": 0, "b": 1, "version": 0}))?;
    let (s2, body) = server.post(&uri, json!({"kind": "swap_slots", "a": 1, "b": 2, "version": 0}))?;
    ensure!(s1 == 200, "first edit got {s1}");
    ensure!(s2 == 409, "stale edit got {s2}: {body}");
    drop(dir);
    Ok(format!("{swaps} swap involutions; approved boards reject all edits; stale version -> 409"))
}

// ------------------------------------------------------------ api contract

struct InProcessServer {
    _runtime: tokio::runtime::Runtime,
    base: String,
    client: reqwest::blocking::Client,
}

impl InProcessServer {
    fn start(config: ProjectConfig) -> Result<Self, String> {
        let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
        let state = restory_server::AppState::load(config, None).map_err(|e| e.to_string())?;
        let addr: SocketAddr = "127.0.0.1:0".parse().unwrap();
        let listener = runtime.block_on(restory_server::bind(addr)).map_err(|e| e.to_string())?;
        let base = format!("http://{}", listener.local_addr().map_err(|e| e.to_string())?);
        runtime.spawn(restory_server::run(listener, state));
        Ok(Self { _runtime: runtime, base, client: reqwest::blocking::Client::new() })
    }

    fn get(&self, path: &str) -> Result<(u16, Value), String> {
        let resp = self.client.get(format!("{}{path}", self.base)).send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        Ok((status, resp.json().unwrap_or(Value::Null)))
    }

    fn post(&self, path: &str, body: Value) -> Result<(u16, Value), String> {
        let resp = self.client.post(format!("{}{path}", self.base)).json(&body).send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        Ok((status, resp.json().unwrap_or(Value::Null)))
    }
}

fn count_files(dir: &Path) -> usize {
    let Ok(entries) = std::fs::read_dir(dir) else { return 0 };
    entries
        .filter_map(|e| e.ok())
        .map(|e| if e.path().is_dir() { count_files(&e.path()) } else { 1 })
        .sum()
}

fn api_contract() -> Outcome {
    let dir = common::demo_project();
    let cfg = ProjectConfig::load(dir.path()).map_err(|e| e.to_string())?;
    let embedder = Counting::new(MockEmbedder::default());
    let embed_calls: Arc<AtomicUsize> = embedder.calls();
    let backends = Backends {
        vlm: Arc::new(MockVlm::from_script_file(cfg.mock_captions.as_ref().unwrap()).map_err(|e| e.to_string())?),
        embedder: Arc::new(embedder),
        detector: Arc::new(MockDetector::default()),
    };
    let project = Project::with_backends(cfg.clone(), backends).map_err(|e| e.to_string())?;
    let id = project.generate("driveby", "offer_release").map_err(|e| e.to_string())?.storyboard.id;
    let embeds_after_generate = embed_calls.load(Ordering::SeqCst);
    let cached_embeddings = count_files(&cfg.cache_dir().join("embedding"));

    let server = InProcessServer::start(cfg.clone())?;
    let mut checks: HashMap<&str, bool> = HashMap::new();

    let (status, health) = server.get("/api/health")?;
    checks.insert("health", status == 200 && health == json!({"status": "ok"}));

    let (status, sb) = server.get(&format!("/api/storyboards/{id}"))?;
    checks.insert("get storyboard", status == 200 && sb["storyboard"]["slots"].as_array().map(Vec::len) == Some(5));
    checks.insert("get unknown storyboard 404", server.get("/api/storyboards/missing")?.0 == 404);

    let (status, alignment) = server.get(&format!("/api/alignments/{id}"))?;
    let top_k = alignment["alignment"]["config"]["top_k"].as_u64().unwrap_or(0) as usize;
    let slots = alignment["alignment"]["slots"].as_array().cloned().unwrap_or_default();
    checks.insert("get alignment", status == 200 && slots.len() == 5);
    checks.insert("embedded candidates <= top_k", slots.iter().all(|s| s["candidates"].as_array().is_some_and(|c| c.len() <= top_k)));
    checks.insert("get unknown alignment 404", server.get("/api/alignments/missing")?.0 == 404);

    let mut candidates_ok = true;
    for k in [1, 3, top_k, 50] {
        let (status, body) = server.get(&format!("/api/alignments/{id}/slots/2/candidates?k={k}"))?;
        let len = body["candidates"].as_array().map_or(usize::MAX, Vec::len);
        candidates_ok &= status == 200 && len == k.min(13);
    }
    let (_, default_k) = server.get(&format!("/api/alignments/{id}/slots/2/candidates"))?;
    candidates_ok &= default_k["candidates"].as_array().is_some_and(|c| c.len() <= top_k);
    checks.insert("candidates length", candidates_ok);

    let recompute = format!("/api/alignments/{id}/recompute");
    let (status, same) = server.post(&recompute, json!({"alpha": 0.2, "strategy": "greedy"}))?;
    checks.insert(
        "recompute equal params",
        status == 200
            && same["alignment"]["slots"] == alignment["alignment"]["slots"]
            && same["alignment"]["total_score"] == alignment["alignment"]["total_score"],
    );
    let (status, pose_only) = server.post(&recompute, json!({"alpha": 1.0, "strategy": "monotone"}))?;
    checks.insert("recompute what-if", status == 200 && pose_only["id"] != same["id"]);
    checks.insert(
        "recompute zero embed calls",
        embed_calls.load(Ordering::SeqCst) == embeds_after_generate
            && count_files(&cfg.cache_dir().join("embedding")) == cached_embeddings,
    );
    let (status, body) = server.post(&recompute, json!({"alpha": 1.5}))?;
    checks.insert("recompute bad alpha 422", status == 422 && body["error"].is_string() && body["message"].is_string());
    checks.insert("recompute unknown 404", server.post("/api/alignments/missing/recompute", json!({}))?.0 == 404);

    let edits = format!("/api/storyboards/{id}/edits");
    let (status, _) = server.post(&edits, json!({"kind": "swap_slots", "a": 0, "b": 1, "version": 0}))?;
    let on_disk = parse_manifest(&cfg.storyboard_dir(&id).join("storyboard.json")).map_err(|e| e.to_string())?;
    checks.insert("edit persists", status == 200 && on_disk.version() == 1);
    checks.insert(
        "replace out of range 422",
        server.post(&edits, json!({"kind": "replace_frame", "a": 0, "b": 999, "version": 1}))?.0 == 422,
    );
    checks.insert("approve", server.post(&edits, json!({"kind": "approve", "version": 1}))?.0 == 200);
    checks.insert(
        "edit approved 409",
        server.post(&edits, json!({"kind": "swap_slots", "a": 0, "b": 1, "version": 2}))?.0 == 409,
    );
    checks.insert(
        "edit unknown 404",
        server.post("/api/storyboards/missing/edits", json!({"kind": "approve", "version": 0}))?.0 == 404,
    );
    let (status, export) = server.post(&format!("/api/storyboards/{id}/export"), json!({}))?;
    checks.insert(
        "export",
        status == 200
            && export["manifest"].as_str().is_some_and(|p| Path::new(p).is_file())
            && export["html"].as_str().is_some_and(|p| Path::new(p).is_file()),
    );
    drop(dir);

    let mut failed: Vec<&str> = checks.iter().filter(|(_, ok)| !**ok).map(|(name, _)| *name).collect();
    failed.sort();
    ensure!(failed.is_empty(), "failed checks: {failed:?}");
    Ok(format!("{} endpoint checks", checks.len()))
}
