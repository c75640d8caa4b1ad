use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use magna::data::{load_edge_list, load_kg_dataset, load_node_dataset, write_kg_dataset, write_node_dataset, KgData};
use magna::Error;
use magna_core::graph::Triple;
use magna_core::toy::{compositional_kg, separable_nodes};
use magna_core::{Edge, Split};

fn write_files(dir: &Path, files: &[(&str, &str)]) {
    for (name, text) in files {
        fs::write(dir.join(name), text).unwrap();
    }
}

fn path_dataset(dir: &Path) {
    write_files(
        dir,
        &[
            ("features.tsv", "0\t1,0\n1\t0,1\n2\t0.5,0.5\n"),
            ("edges.tsv", "0\t1\n1\t2\n"),
            ("labels.tsv", "0\t0\n1\t1\n2\t0\n"),
            ("splits.tsv", "0\ttrain\n1\tval\n2\ttest\n"),
        ],
    );
}

fn parse_error(e: Error) -> (String, usize, String) {
    match e {
        Error::Parse { path, line, message } => {
            (path.file_name().unwrap().to_string_lossy().into_owned(), line, message)
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn path_graph_is_symmetrized() {
    let dir = tempfile::tempdir().unwrap();
    path_dataset(dir.path());
    let d = load_node_dataset(dir.path()).unwrap();
    assert_eq!(d.graph.num_edges(), 4);
    assert_eq!(d.graph.num_relations(), 1);
    assert!(!d.graph.is_directed());
    assert_eq!(d.num_classes, 2);
    assert_eq!(d.splits, vec![Split::Train, Split::Val, Split::Test]);
    let into_1: Vec<usize> = d.graph.incoming_segment(1).map(|e| d.graph.edges()[e].src).collect();
    assert_eq!(into_1, vec![0, 2]);
}

#[test]
fn relation_column_sets_relation_count() {
    let dir = tempfile::tempdir().unwrap();
    path_dataset(dir.path());
    write_files(dir.path(), &[("edges.tsv", "0\t1\t0\n1\t2\t2\n")]);
    let d = load_node_dataset(dir.path()).unwrap();
    assert_eq!(d.graph.num_relations(), 3);
}

#[test]
fn reciprocal_rows_merge_but_repeats_fail() {
    let dir = tempfile::tempdir().unwrap();
    path_dataset(dir.path());
    write_files(dir.path(), &[("edges.tsv", "0\t1\n1\t0\n1\t2\n")]);
    assert_eq!(load_node_dataset(dir.path()).unwrap().graph.num_edges(), 4);
    write_files(dir.path(), &[("edges.tsv", "0\t1\n1\t2\n0\t1\n")]);
    let (file, line, msg) = parse_error(load_node_dataset(dir.path()).unwrap_err());
    assert_eq!((file.as_str(), line), ("edges.tsv", 3));
    assert!(msg.contains("duplicate"), "{msg}");
}

#[test]
fn label_out_of_range_reports_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let features: String = (0..10).map(|i| format!("{i}\t1.0\n")).collect();
    write_files(
        dir.path(),
        &[
            ("features.tsv", &features),
            ("edges.tsv", "0\t1\n"),
            ("labels.tsv", "0\t0\n99\t1\n"),
            ("splits.tsv", ""),
        ],
    );
    let err = load_node_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("labels.tsv:2"), "{err}");
    let (_, _, msg) = parse_error(err);
    assert!(msg.contains("node id out of range"), "{msg}");
}

#[test]
fn malformed_inputs_are_reported() {
    let cases: [(&str, &str, &str, usize, &str); 5] = [
        ("features.tsv", "0\t1,0\n1\t0\n2\t1,1\n", "features.tsv", 2, "ragged"),
        ("splits.tsv", "0\ttrain\n1\tholdout\n", "splits.tsv", 2, "unknown split"),
        ("edges.tsv", "0\t5\n", "edges.tsv", 1, "node id out of range"),
        ("edges.tsv", "0 1\n", "edges.tsv", 1, "tab-separated"),
        (
            "features.tsv",
            "0\t1,x\n1\t0,1\n2\t1,1\n",
            "features.tsv",
            1,
            "invalid feature",
        ),
    ];
    for (name, text, file, line, needle) in cases {
        let dir = tempfile::tempdir().unwrap();
        path_dataset(dir.path());
        write_files(dir.path(), &[(name, text)]);
        let (f, l, msg) = parse_error(load_node_dataset(dir.path()).unwrap_err());
        assert_eq!((f.as_str(), l), (file, line), "{msg}");
        assert!(msg.contains(needle), "{msg}");
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    path_dataset(dir.path());
    fs::remove_file(dir.path().join("labels.tsv")).unwrap();
    let err = load_node_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("labels.tsv"));
}

fn edge_multiset(g: &magna_core::Graph) -> Vec<Edge> {
    let mut e = g.edges().to_vec();
    e.sort();
    e
}

#[test]
fn node_dataset_round_trips() {
    let original = separable_nodes(25, 0.4, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_node_dataset(dir.path(), &original).unwrap();
    let back = load_node_dataset(dir.path()).unwrap();
    assert_eq!(edge_multiset(&back.graph), edge_multiset(&original.graph));
    assert_eq!(back.graph.num_nodes(), original.graph.num_nodes());
    assert_eq!(back.graph.num_relations(), original.graph.num_relations());
    assert_eq!(back.features, original.features);
    assert_eq!(back.labels, original.labels);
    assert_eq!(back.splits, original.splits);

    let again = tempfile::tempdir().unwrap();
    write_node_dataset(again.path(), &back).unwrap();
    let twice = load_node_dataset(again.path()).unwrap();
    assert_eq!(twice.graph, back.graph);
}

fn write_kg(dir: &Path, train: &str, valid: &str, test: &str) {
    write_files(dir, &[("train.txt", train), ("valid.txt", valid), ("test.txt", test)]);
}

#[test]
fn single_triple_gets_its_reverse() {
    let dir = tempfile::tempdir().unwrap();
    write_kg(dir.path(), "a\tr\tb\n", "a\tr\tb\n", "a\tr\tb\n");
    let kg = load_kg_dataset(dir.path(), true).unwrap();
    let d = &kg.dataset;
    assert_eq!(d.num_relations(), 2);
    assert_eq!(edge_multiset(&d.graph), vec![Edge::new(0, 0, 1), Edge::new(1, 1, 0)]);
    assert_eq!(d.reverse_relation(d.reverse_relation(0)), 0);
}

#[test]
fn filter_index_collects_all_tails() {
    let dir = tempfile::tempdir().unwrap();
    write_kg(dir.path(), "a\tr\tb\n", "a\tr\tc\n", "c\tr\tb\n");
    let kg = load_kg_dataset(dir.path(), false).unwrap();
    let id = |s: &str| kg.entities.iter().position(|e| e == s).unwrap();
    let tails = kg.dataset.known_answers(id("a"), 0).unwrap();
    assert_eq!(*tails, BTreeSet::from([id("b"), id("c")]));
    let heads = kg.dataset.known_answers(id("b"), 1).unwrap();
    assert_eq!(*heads, BTreeSet::from([id("a"), id("c")]));
}

#[test]
fn strict_mode_rejects_unseen_entities() {
    let dir = tempfile::tempdir().unwrap();
    write_kg(dir.path(), "a\tr\tb\n", "a\tr\tz\n", "a\tr\tb\n");
    let (file, line, msg) = parse_error(load_kg_dataset(dir.path(), true).unwrap_err());
    assert_eq!((file.as_str(), line), ("valid.txt", 1));
    assert!(msg.contains('z'), "{msg}");
    let lenient = load_kg_dataset(dir.path(), false).unwrap();
    assert_eq!(lenient.dataset.num_entities, 3);
}

#[test]
fn malformed_kg_line_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_kg(dir.path(), "a\tr\tb\na\tr\n", "", "");
    let (file, line, _) = parse_error(load_kg_dataset(dir.path(), false).unwrap_err());
    assert_eq!((file.as_str(), line), ("train.txt", 2));
}

#[test]
fn kg_round_trips() {
    let d = compositional_kg(3, 4, 1, 1).unwrap();
    let kg = KgData {
        entities: (0..d.num_entities).map(|i| format!("e{i}")).collect(),
        relations: (0..d.num_base_relations).map(|k| format!("r{k}")).collect(),
        dataset: d,
    };
    let dir = tempfile::tempdir().unwrap();
    write_kg_dataset(dir.path(), &kg).unwrap();
    let back = load_kg_dataset(dir.path(), true).unwrap();
    let named = |k: &KgData, ts: &[Triple]| -> BTreeSet<(String, String, String)> {
        ts.iter()
            .map(|t| {
                (
                    k.entities[t.head].clone(),
                    k.relations[t.rel].clone(),
                    k.entities[t.tail].clone(),
                )
            })
            .collect()
    };
    assert_eq!(named(&back, &back.dataset.train), named(&kg, &kg.dataset.train));
    assert_eq!(named(&back, &back.dataset.valid), named(&kg, &kg.dataset.valid));
    assert_eq!(named(&back, &back.dataset.test), named(&kg, &kg.dataset.test));
    assert_eq!(back.dataset.graph.num_edges(), kg.dataset.graph.num_edges());
}

#[test]
fn edge_list_star() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("star.tsv");
    fs::write(&p, "0\t1\n0\t2\n3\t0\n0\t4\n5\t0\n").unwrap();
    let g = load_edge_list(&p).unwrap();
    assert_eq!(g.num_nodes(), 6);
    assert_eq!(g.incoming_segment(0).len(), 5);
    let total: usize = (0..6).map(|i| g.incoming_segment(i).len()).sum();
    assert_eq!(total, g.num_edges());
}
