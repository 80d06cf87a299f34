use std::fs;

use nle_core::corpus::{load_corpus, CorpusPaths};
use nle_core::keywords::KeywordTagger;
use nle_core::mention::BuiltinLabeler;
use nle_core::pipeline::{read_dataset, write_outputs, Pipeline, PipelineOutput};
use nle_core::rules::RuleEngine;
use nle_core::synth::{generate, write_corpus, SynthConfig};
use nle_core::Report;

fn run_on(reports: &[Report], threads: usize) -> PipelineOutput {
    let tagger = KeywordTagger::new(&Default::default()).unwrap();
    let labeler = BuiltinLabeler::default();
    let rules = RuleEngine::default();
    let p = Pipeline {
        tagger: &tagger,
        labeler: &labeler,
        rules: &rules,
        dedup_ignore_certainty: false,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| p.run(reports))
}

#[test]
fn disk_round_trip_matches_in_memory() {
    let tmp = tempfile::tempdir().unwrap();
    let reports = generate(&SynthConfig { reports: 150, seed: 3, max_sentences: 6 });
    write_corpus(tmp.path(), &reports).unwrap();
    let loaded = load_corpus(&CorpusPaths {
        report_root: tmp.path().join("files"),
        metadata: Some(tmp.path().join("metadata.csv")),
        splits: Some(tmp.path().join("splits.csv")),
        manifest: None,
    })
    .unwrap();
    assert_eq!(loaded.reports.len(), reports.len());
    assert_eq!(loaded.skipped(), reports.iter().filter(|r| r.is_skipped()).count());

    let from_disk = run_on(&loaded.reports, 1);
    assert_eq!(from_disk, run_on(&reports, 1));

    let out = tmp.path().join("out");
    write_outputs(&out, &from_disk, &loaded.issues).unwrap();
    assert_eq!(read_dataset(&out).unwrap().len(), from_disk.records.len());
}

#[test]
fn output_independent_of_threads_and_input_order() {
    let reports = generate(&SynthConfig { reports: 300, seed: 9, max_sentences: 8 });
    let base = run_on(&reports, 1);
    assert_eq!(base, run_on(&reports, 4));
    let mut shuffled = reports.clone();
    shuffled.reverse();
    shuffled.rotate_left(17);
    assert_eq!(base, run_on(&shuffled, 3));
}

#[test]
fn manifest_order_does_not_matter() {
    let tmp = tempfile::tempdir().unwrap();
    let reports = generate(&SynthConfig { reports: 40, seed: 5, max_sentences: 4 });
    write_corpus(tmp.path(), &reports).unwrap();
    let mut rows: Vec<String> = reports
        .iter()
        .map(|r| format!("{},p{}/s{}.txt,{}", r.meta.study_id, r.meta.subject_id, r.meta.study_id, r.meta.subject_id))
        .collect();
    rows.reverse();
    let manifest = tmp.path().join("manifest.csv");
    fs::write(&manifest, format!("study_id,path,subject_id\n{}\n", rows.join("\n"))).unwrap();
    let paths = |manifest| CorpusPaths {
        report_root: tmp.path().join("files"),
        metadata: Some(tmp.path().join("metadata.csv")),
        splits: Some(tmp.path().join("splits.csv")),
        manifest,
    };
    let walked = load_corpus(&paths(None)).unwrap();
    let listed = load_corpus(&paths(Some(manifest))).unwrap();
    assert_eq!(walked.reports, listed.reports);
}

#[test]
fn split_partition_holds() {
    let out = run_on(&generate(&SynthConfig { reports: 200, seed: 1, max_sentences: 6 }), 2);
    let mut seen = std::collections::HashMap::new();
    for r in &out.records {
        let prev = seen.insert(r.study_id.clone(), r.split);
        assert!(prev.is_none() || prev == Some(r.split));
        assert!(r.view_position.is_frontal());
    }
}
