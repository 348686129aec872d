use std::collections::BTreeSet;

use forge::emit::ExampleLine;
use forge::fixture::{write_fixture, FixtureSpec};
use forge::graphio::{read_graph, NeighborLine};
use forge::pipeline::{run, PipelineConfig, StageStatus};
use forge::store::Corpus;
use forge_core::dataset::Task;
use forge_core::graph::degree_stats;

fn statuses(r: &forge::pipeline::PipelineReport) -> Vec<(&str, StageStatus)> {
    r.stages.iter().map(|s| (s.stage.as_str(), s.status)).collect()
}

#[test]
fn examples_match_degree_three_nodes_and_rerun_is_cached() {
    let dir = tempfile::tempdir().unwrap();
    let fx = write_fixture(&dir.path().join("corpus"), &FixtureSpec::default()).unwrap();
    let out = dir.path().join("out");
    let cfg = PipelineConfig::new(&fx.manifest_path, &out, Task::Insertion, 11);

    let first = run(&cfg).unwrap();
    assert!(statuses(&first).iter().all(|(_, s)| *s == StageStatus::Ran));
    assert_eq!(
        statuses(&first).iter().map(|(n, _)| *n).collect::<Vec<_>>(),
        ["index", "graph", "stats", "dataset"]
    );

    // recount nodes with at least three neighbors from the graph file
    let text = std::fs::read_to_string(out.join("neighbors.jsonl")).unwrap();
    let deg3: BTreeSet<u64> = text
        .lines()
        .map(|l| serde_json::from_str::<NeighborLine>(l).unwrap())
        .filter(|l| l.nn.len() >= 3)
        .map(|l| l.id)
        .collect();
    let examples: Vec<ExampleLine> = text_lines(&out.join("examples.jsonl"));
    assert_eq!(examples.len(), deg3.len());
    assert_eq!(first.dataset.examples, deg3.len());
    assert_eq!(examples.iter().map(|e| e.target).collect::<BTreeSet<_>>(), deg3);
    for e in &examples {
        assert!(out.join(&e.grid).exists());
        assert!(e.sims.iter().all(|&s| (0.93..=0.975).contains(&s)));
    }
    let corpus = Corpus::load(&fx.manifest_path).unwrap();
    let graph = read_graph(&out.join("neighbors.jsonl")).unwrap();
    assert_eq!(first.stats, degree_stats(&graph, &corpus.records));

    let second = run(&cfg).unwrap();
    assert!(statuses(&second).iter().all(|(_, s)| *s == StageStatus::Cached));
    assert_eq!(second.stats, first.stats);
    assert_eq!(second.dataset, first.dataset);

    // switching task only re-runs the dataset stage
    let mut sub = cfg.clone();
    sub.task = Task::SubjectGen;
    let third = run(&sub).unwrap();
    assert_eq!(
        statuses(&third),
        [
            ("index", StageStatus::Cached),
            ("graph", StageStatus::Cached),
            ("stats", StageStatus::Cached),
            ("dataset", StageStatus::Ran)
        ]
    );
    // so does editing a caption
    let cap = dir.path().join("corpus/captions").join(format!("{}.txt", examples[0].target));
    std::fs::write(&cap, "a different caption\n").unwrap();
    let fourth = run(&sub).unwrap();
    assert_eq!(fourth.stages[3].status, StageStatus::Ran);
    assert_eq!(fourth.stages[2].status, StageStatus::Cached);

    // changing the band re-runs the graph and everything after it
    let mut narrow = sub.clone();
    narrow.params.band = forge_core::SimilarityBand::new(0.94, 0.975).unwrap();
    let fifth = run(&narrow).unwrap();
    assert_eq!(fifth.stages[0].status, StageStatus::Cached);
    assert!(fifth.stages[1..].iter().all(|s| s.status == StageStatus::Ran));
}

#[test]
fn missing_sidecars_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let spec = FixtureSpec {
        missing_sidecars: 40,
        ..FixtureSpec::default()
    };
    let fx = write_fixture(&dir.path().join("corpus"), &spec).unwrap();
    let out = dir.path().join("out");
    let mut cfg = PipelineConfig::new(&fx.manifest_path, &out, Task::SubjectGen, 1);
    cfg.write_grids = false;
    let r = run(&cfg).unwrap();
    assert!(r.dataset.skipped_missing_sidecar > 0);
    let examples: Vec<ExampleLine> = text_lines(&out.join("examples.jsonl"));
    assert_eq!(examples.len(), r.dataset.examples);
    assert!(examples.iter().all(|e| e.target >= 40));
}

fn text_lines<T: serde::de::DeserializeOwned>(p: &std::path::Path) -> Vec<T> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
