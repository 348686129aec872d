//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a criterion fails that is not listed in `KNOWN_FAILURES`.

use std::collections::BTreeSet;
use std::process::Command;
use std::time::Instant;

use forge::service::Service;
use forge_core::analysis::{default_sweep, precision_curve, LabelSource, PairLabel};
use forge_core::dataset::{compose_grid, extract_quadrant, Slot, Task, TrainingManifest, CANVAS, TILE};
use forge_core::eval::{expand_quadruplets, metric_agreement, triplet_agreement, AgreementTriplet, BenchmarkQuadruplet, Capture, Choice};
use forge_core::graph::{build_graph, degree_stats, format_percent, Edge, GraphParams};
use forge_core::guidance::{cfg_dual, cfg_single, GuidanceConfig};
use forge_core::image::RgbImage;
use forge_core::knn::recall_eval;
use forge_core::label::{pair_id, SampleSpec};
use forge_core::synth::{planted_groups, planted_pairs, random_unit_matrix, row_cosine, GroupSpec};
use forge_core::{analysis, FeatureMatrix, Index, IndexConfig, KnnGraph, SimilarityBand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The published "2.4%" for 64,991 of 8,067,907 objects does not follow from
/// its own counts (they give 0.8%).
const KNOWN_FAILURES: &[&str] = &["stats-table"];

struct Outcome {
    ok: bool,
    detail: String,
}

fn check(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn oracle_topk(m: &FeatureMatrix, q: usize, k: usize) -> Vec<(usize, f32)> {
    let mut best: Vec<(usize, f32)> = Vec::with_capacity(k + 1);
    let qa = m.row(q);
    for r in 0..m.len() {
        if r == q {
            continue;
        }
        let mut acc = 0.0f64;
        for (x, y) in qa.iter().zip(m.row(r)) {
            acc += *x as f64 * *y as f64;
        }
        let s = acc as f32;
        let pos = best
            .iter()
            .position(|&(id, bs)| s > bs || (s == bs && r < id))
            .unwrap_or(best.len());
        if pos < k {
            best.insert(pos, (r, s));
            best.truncate(k);
        }
    }
    best
}

fn exact_knn() -> Outcome {
    let m = random_unit_matrix(10_000, 64, 11);
    let oracle: Vec<Vec<(usize, f32)>> = (0..m.len()).map(|q| oracle_topk(&m, q, 16)).collect();
    let start = Instant::now();
    let index = Index::build(&m, &IndexConfig::exact()).unwrap();
    for k in [1usize, 5, 16] {
        let got = index.query_all(k).unwrap();
        for (q, list) in got.iter().enumerate() {
            let got: Vec<(usize, f32)> = list.neighbors.iter().map(|n| (n.id, n.similarity)).collect();
            if got[..] != oracle[q][..k] {
                return check(false, format!("k={} query {} differs from brute force", k, q));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("10000x64, k in {{1,5,16}} identical, index time {:.2}s", secs))
}

fn planted() -> forge_core::synth::PlantedGroups {
    planted_groups(&GroupSpec {
        groups: 1000,
        group_size: 4,
        seed: 5,
        ..GroupSpec::default()
    })
}

fn approximate_recall() -> Outcome {
    let p = planted();
    let mut min_within = f32::MAX;
    let mut max_cross = f32::MIN;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..p.matrix.len() {
        for j in 0..p.matrix.len() {
            if i != j && p.group_of[i] == p.group_of[j] {
                min_within = min_within.min(row_cosine(&p.matrix, i, j));
            }
        }
        let j = rng.random_range(0..p.matrix.len());
        if p.group_of[i] != p.group_of[j] {
            max_cross = max_cross.max(row_cosine(&p.matrix, i, j));
        }
    }
    let exact = Index::build(&p.matrix, &IndexConfig::exact()).unwrap();
    let approx = Index::build(&p.matrix, &IndexConfig::partitioned()).unwrap();
    let ids: Vec<usize> = (0..p.matrix.len()).collect();
    let recall = recall_eval(&approx, &exact, &ids, 3).unwrap();
    check(
        recall >= 0.95 && min_within >= 0.95 && max_cross < 0.5,
        format!(
            "recall@3 {:.4} with {} probes (within-group min {:.3}, sampled cross-group max {:.3})",
            recall,
            approx.probes().unwrap_or(0),
            min_within,
            max_cross
        ),
    )
}

fn planted_recovery() -> Outcome {
    let spec = GroupSpec {
        groups: 1000,
        group_size: 4,
        seed: 5,
        ..GroupSpec::default()
    };
    let p = planted();
    let params = GraphParams::default();
    let index = Index::build(&p.matrix, &IndexConfig::exact()).unwrap();
    let graph = build_graph(&index, &p.records, &params).unwrap();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); spec.groups];
    for (r, &g) in p.group_of.iter().enumerate() {
        members[g].push(r);
    }
    let mut expected_edges = 0;
    for (r, rec) in p.records.iter().enumerate() {
        let want: BTreeSet<u64> = members[p.group_of[r]]
            .iter()
            .filter(|&&o| o != r && params.band.contains(row_cosine(&p.matrix, r, o)))
            .map(|&o| p.records[o].id)
            .collect();
        let got: BTreeSet<u64> = graph.neighbors(rec.id).iter().map(|e| e.id).collect();
        if want != got {
            return check(false, format!("object {}: expected {:?}, got {:?}", rec.id, want, got));
        }
        expected_edges += want.len();
    }
    let stats = degree_stats(&graph, &p.records);
    let designed = 100.0 * (spec.in_band_groups() * spec.group_size) as f64 / p.records.len() as f64;
    check(
        (stats.pct_ge3 - designed).abs() <= 0.5,
        format!(
            "{} edges, none spurious; ge3 {}% vs designed {:.1}%",
            expected_edges, stats.pct_ge3, designed
        ),
    )
}

fn stats_table() -> Outcome {
    let rows: [(u64, u64, &str); 3] = [
        (55_232_441, 4_550_770, "8.2%"),
        (362_684, 17_119, "4.7%"),
        (8_067_907, 64_991, "2.4%"),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (total, count, published) in rows {
        let got = format_percent(count, total);
        if got != published {
            ok = false;
        }
        detail.push(format!("{}/{} -> {} (published {})", count, total, got, published));
    }
    check(ok, detail.join("; "))
}

fn scaling() -> Outcome {
    let n = 50_000;
    let frac_paired = 0.5;
    let p = planted_pairs(n, frac_paired, 0.95, 64, 21);
    let params = GraphParams::default();
    let cfg = IndexConfig::partitioned().with_seed(21);
    let fractions = [0.25, 0.5, 1.0];
    let curve = analysis::scaling_curve(&p.matrix, &p.records, &fractions, 21, &params, &cfg).unwrap();
    let paired = p.partner.iter().filter(|x| x.is_some()).count() as f64 / n as f64;
    let mut ok = true;
    let mut detail = Vec::new();
    for pt in &curve.points {
        let m = pt.subset_size as f64;
        let predicted = paired * (m - 1.0) / (n as f64 - 1.0);
        let rel = (pt.frac_ge1 - predicted).abs() / predicted;
        ok &= rel <= 0.10;
        detail.push(format!("q={} ge1 {:.4} vs {:.4} ({:.1}%)", pt.fraction, pt.frac_ge1, predicted, rel * 100.0));
    }
    let full = Index::build(&p.matrix, &cfg).unwrap();
    let stats = degree_stats(&build_graph(&full, &p.records, &params).unwrap(), &p.records);
    let last = curve.points.last().unwrap();
    let same = last.count_ge1 == stats.count_ge1
        && last.count_ge3 == stats.count_ge3
        && last.pct_ge1 == stats.pct_ge1
        && last.pct_ge3 == stats.pct_ge3;
    detail.push(format!("full point matches degree_stats: {}", same));
    check(ok && same, detail.join("; "))
}

/// Twenty hand-labeled pairs. Similarities avoid the 0.005 sweep grid.
fn precision_fixture() -> Vec<PairLabel> {
    let rows: [(f32, bool); 20] = [
        (0.8520, false),
        (0.8610, false),
        (0.8730, true),
        (0.8810, false),
        (0.8920, false),
        (0.9030, true),
        (0.9110, false),
        (0.9180, true),
        (0.9240, true),
        (0.9310, false),
        (0.9370, true),
        (0.9420, true),
        (0.9480, true),
        (0.9530, false),
        (0.9610, true),
        (0.9670, true),
        (0.9720, true),
        (0.9810, true),
        (0.9880, true),
        (0.9960, true),
    ];
    rows.iter()
        .enumerate()
        .map(|(i, &(s, m))| PairLabel {
            a: 2 * i as u64,
            b: 2 * i as u64 + 1,
            similarity: s,
            is_match: m,
            source: LabelSource::Human,
        })
        .collect()
}

fn precision_oracle() -> Outcome {
    let labels = precision_fixture();
    let sweep = default_sweep();
    let curve = precision_curve(&labels, &sweep).unwrap();
    // (threshold, support, matches) counted by hand from the table above
    let hand: [(f32, usize, usize); 6] = [
        (0.85, 20, 13),
        (0.90, 15, 12),
        (0.93, 11, 9),
        (0.95, 7, 6),
        (0.98, 3, 3),
        (1.0, 0, 0),
    ];
    for (t, support, matches) in hand {
        let Some(pt) = curve.at(t) else {
            return check(false, format!("no sweep point at {}", t));
        };
        let precision = (support > 0).then(|| matches as f64 / support as f64);
        if pt.support != support || pt.matches != matches || pt.precision != precision {
            return check(false, format!("threshold {}: got {:?}", t, pt));
        }
    }
    for pt in &curve.points {
        let support = labels.iter().filter(|l| l.similarity >= pt.threshold).count();
        let matches = labels.iter().filter(|l| l.similarity >= pt.threshold && l.is_match).count();
        if pt.support != support || pt.matches != matches {
            return check(false, format!("threshold {}: counts differ", pt.threshold));
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("labels.jsonl");
    let mut graph = KnnGraph::new(SimilarityBand::default(), 5);
    for l in &labels {
        graph.insert(l.a, vec![Edge { id: l.b, similarity: l.similarity }]);
    }
    let spec = SampleSpec {
        n: 20,
        seed: 3,
        lo: 0.85,
        hi: 1.0,
    };
    {
        let mut svc = Service::open(&log, "acc", &graph, spec.clone()).unwrap();
        for l in &labels {
            svc.submit(&pair_id(l.a, l.b), l.is_match).unwrap();
        }
    }
    let svc = Service::resume(&log).unwrap();
    let live = svc.session().live_precision(&sweep).unwrap();
    check(
        live == curve,
        format!("{} thresholds match hand counts; live curve after replay equal: {}", curve.points.len(), live == curve),
    )
}

fn random_tile(rng: &mut ChaCha8Rng) -> RgbImage {
    let mut data = vec![0u8; (TILE * TILE * 3) as usize];
    rng.fill(&mut data[..]);
    RgbImage::from_raw(TILE, TILE, data).unwrap()
}

fn grid_mask() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let target = random_tile(&mut rng);
    let refs: Vec<RgbImage> = (0..3).map(|_| random_tile(&mut rng)).collect();
    let (canvas, mask) = compose_grid(&target, &refs).unwrap();
    let tiles = std::iter::once(&target).chain(&refs);
    let round_trip = Slot::ALL
        .iter()
        .zip(tiles)
        .all(|(slot, tile)| extract_quadrant(&canvas, *slot).unwrap() == *tile);
    let mut placed = true;
    for row in 0..CANVAS {
        for col in 0..CANVAS {
            placed &= mask.get(row, col) == (row < TILE && col < TILE);
        }
    }
    let ones = mask.count_ones();
    check(
        round_trip && placed && ones == 262_144,
        format!("round trip {}, {} mask ones, all in top-left tile: {}", round_trip, ones, placed),
    )
}

fn guidance() -> Outcome {
    let m = random_unit_matrix(3000, 64, 13);
    let mut ok = true;
    for i in 0..1000 {
        let (a, b, c) = (m.row(3 * i), m.row(3 * i + 1), m.row(3 * i + 2));
        ok &= cfg_single(a, b, 1.0).unwrap() == b;
        ok &= cfg_single(a, b, 0.0).unwrap() == a;
        ok &= cfg_dual(a, a, a, 7.5, 1.5).unwrap() == a;
        ok &= cfg_dual(a, b, c, 0.0, 2.0).unwrap() == cfg_single(a, b, 2.0).unwrap();
    }
    let band = SimilarityBand::default();
    let ins = TrainingManifest::for_task(Task::Insertion, band, 5, 0);
    let sub = TrainingManifest::for_task(Task::SubjectGen, band, 5, 0);
    let defaults = ins.gamma_image == 2.0
        && ins.gamma_text.is_none()
        && sub.gamma_image == 1.5
        && sub.gamma_text == Some(7.5)
        && GuidanceConfig::for_task(Task::Insertion).gamma_image == 2.0
        && GuidanceConfig::for_task(Task::SubjectGen).gamma_text == Some(7.5)
        && ins.steps == 100_000
        && ins.batch_size == 128
        && ins.ref_dropout == 0.1;
    check(ok && defaults, format!("identities on 1000 vectors: {}; manifest defaults: {}", ok, defaults))
}

fn benchmark_expansion() -> Outcome {
    let quads: Vec<BenchmarkQuadruplet> = (0..34)
        .map(|o| BenchmarkQuadruplet {
            object_id: format!("obj{:02}", o),
            captures: (0..4)
                .map(|c| Capture {
                    image: format!("obj{:02}/{}.png", o, c),
                    background: format!("obj{:02}/{}_bg.png", o, c),
                })
                .collect(),
        })
        .collect();
    let samples = expand_quadruplets(&quads).unwrap();
    let excluded = samples.iter().all(|s| {
        let refs: BTreeSet<&str> = s.references.iter().map(|r| r.image.as_str()).collect();
        !refs.contains(s.ground_truth.image.as_str()) && refs.len() == 3 && s.scene == s.ground_truth.background
    });
    let ids: BTreeSet<&str> = samples.iter().map(|s| s.sample_id.as_str()).collect();
    check(
        samples.len() == 136 && excluded && ids.len() == 136,
        format!("{} samples, ground truth never among its references: {}", samples.len(), excluded),
    )
}

fn agreement() -> Outcome {
    let r = [1.0f32, 0.0];
    let near = [0.8f32, 0.6];
    let far = [0.0f32, 1.0];
    let mirror = [0.8f32, -0.6];
    let fixture = [
        (&near, &far, Choice::First),
        (&far, &near, Choice::Second),
        (&near, &far, Choice::Second),
        (&near, &mirror, Choice::First),
    ];
    let triplets: Vec<AgreementTriplet> = fixture
        .iter()
        .map(|(g1, g2, c)| AgreementTriplet {
            reference: &r,
            gen1: &g1[..],
            gen2: &g2[..],
            choice: *c,
        })
        .collect();
    // agree, agree, disagree, tie
    let hand = (1.0 + 1.0 + 0.0 + 0.5) / 4.0;
    let got = metric_agreement(&triplets).unwrap();

    let m = random_unit_matrix(3000, 16, 17);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut symmetric = true;
    for i in 0..1000 {
        let choice = if rng.random_bool(0.5) { Choice::First } else { Choice::Second };
        let flipped = if choice == Choice::First { Choice::Second } else { Choice::First };
        let a = AgreementTriplet {
            reference: m.row(3 * i),
            gen1: m.row(3 * i + 1),
            gen2: m.row(3 * i + 2),
            choice,
        };
        let b = AgreementTriplet {
            gen1: a.gen2,
            gen2: a.gen1,
            choice: flipped,
            ..a
        };
        symmetric &= triplet_agreement(&a).unwrap() == triplet_agreement(&b).unwrap();
    }
    check(
        got == hand && symmetric,
        format!("fixture accuracy {} (hand {}); permutation symmetric on 1000: {}", got, hand, symmetric),
    )
}

fn forge(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(args)
        .env("FORGE_THREADS", "4")
        .output()
        .expect("forge binary runs")
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus = root.join("corpus");
    let out = forge(&["fixture", "--out", corpus.to_str().unwrap(), "--seed", "7", "--log-level", "warn"]);
    if !out.status.success() {
        return check(false, format!("fixture failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let manifest = corpus.join("manifest.json");
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let dest = root.join(run);
        let out = forge(&[
            "pipeline_all",
            "--corpus",
            manifest.to_str().unwrap(),
            "--out",
            dest.to_str().unwrap(),
            "--seed",
            "7",
            "--log-level",
            "warn",
        ]);
        if !out.status.success() {
            return check(false, format!("pipeline run {} failed: {}", run, String::from_utf8_lossy(&out.stderr)));
        }
        files.push(std::fs::read(dest.join("examples.jsonl")).unwrap());
    }
    let lines = files[0].iter().filter(|&&b| b == b'\n').count();
    check(
        files[0] == files[1] && lines > 0,
        format!("{} examples, byte-identical across runs: {}", lines, files[0] == files[1]),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("exact-knn", exact_knn),
        ("approximate-recall", approximate_recall),
        ("planted-recovery", planted_recovery),
        ("stats-table", stats_table),
        ("subsample-scaling", scaling),
        ("precision-curve", precision_oracle),
        ("grid-mask", grid_mask),
        ("guidance", guidance),
        ("benchmark-expansion", benchmark_expansion),
        ("agreement", agreement),
        ("pipeline-determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = std::panic::catch_unwind(f).unwrap_or_else(|_| Outcome {
            ok: false,
            detail: "panicked".into(),
        });
        let known = KNOWN_FAILURES.contains(&name);
        let tag = match (o.ok, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("{} {} [{:.1}s] {}", tag, name, start.elapsed().as_secs_f64(), o.detail);
        if !o.ok && !known {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        println!("{} criteria failed", unexpected);
        std::process::exit(1);
    }
}
