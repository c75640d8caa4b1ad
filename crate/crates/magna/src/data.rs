//! TSV dataset directories.
//!
//! Node datasets hold `features.tsv`, `edges.tsv`, `labels.tsv` and
//! `splits.tsv`; knowledge graphs hold `train.txt`, `valid.txt` and
//! `test.txt`. See the crate README for the line formats.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use magna_core::graph::Triple;
use magna_core::{Edge, Graph, KgDataset, Matrix, NodeDataset, Split};

use crate::error::{Error, Result};

pub const FEATURES_FILE: &str = "features.tsv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SPLITS_FILE: &str = "splits.tsv";
pub const KG_FILES: [&str; 3] = ["train.txt", "valid.txt", "test.txt"];

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-empty lines with 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn fields<'a>(path: &Path, line: usize, text: &'a str, min: usize, max: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = text.split('\t').collect();
    if f.len() < min || f.len() > max {
        let want = if min == max {
            format!("{min}")
        } else {
            format!("{min} to {max}")
        };
        return Err(Error::parse(
            path,
            line,
            format!("expected {want} tab-separated fields, found {}", f.len()),
        ));
    }
    Ok(f)
}

fn int(path: &Path, line: usize, s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("invalid {what} `{s}`")))
}

fn node(path: &Path, line: usize, s: &str, n: usize) -> Result<usize> {
    let id = int(path, line, s, "node id")?;
    if id >= n {
        return Err(Error::parse(
            path,
            line,
            format!("node id out of range: {id} (num_nodes = {n})"),
        ));
    }
    Ok(id)
}

fn parse_features(path: &Path) -> Result<Matrix> {
    let text = read(path)?;
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for (line, l) in lines(&text) {
        let f = fields(path, line, l, 2, 2)?;
        let id = int(path, line, f[0], "node id")?;
        let values = f[1]
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(path, line, format!("invalid feature value `{v}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some((_, first_line, first)) = rows.first() {
            if first.len() != values.len() {
                return Err(Error::parse(
                    path,
                    line,
                    format!(
                        "ragged feature row: {} values, line {first_line} has {}",
                        values.len(),
                        first.len()
                    ),
                ));
            }
        }
        rows.push((id, line, values));
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::parse(path, 1, "no feature rows"));
    }
    let dim = rows[0].2.len();
    let mut data = vec![0.0; n * dim];
    let mut seen = vec![false; n];
    for (id, line, values) in rows {
        if id >= n {
            return Err(Error::parse(
                path,
                line,
                format!("node id out of range: {id} (num_nodes = {n})"),
            ));
        }
        if std::mem::replace(&mut seen[id], true) {
            return Err(Error::parse(path, line, format!("node {id} listed twice")));
        }
        data[id * dim..(id + 1) * dim].copy_from_slice(&values);
    }
    Ok(Matrix::from_vec(n, dim, data)?)
}

/// Undirected edge list of `edges.tsv`. A row whose reverse already
/// appeared names the same undirected edge and is merged; a repeated row
/// is an error.
fn parse_edges(path: &Path, n: usize) -> Result<(Vec<Edge>, usize)> {
    let text = read(path)?;
    let mut edges = Vec::new();
    let mut rows = HashMap::new();
    let mut num_relations = 1;
    for (line, l) in lines(&text) {
        let f = fields(path, line, l, 2, 3)?;
        let src = node(path, line, f[0], n)?;
        let dst = node(path, line, f[1], n)?;
        let rel = match f.get(2) {
            Some(r) => int(path, line, r, "relation id")?,
            None => 0,
        };
        num_relations = num_relations.max(rel + 1);
        if let Some(first) = rows.insert((src, rel, dst), line) {
            return Err(Error::parse(
                path,
                line,
                format!("duplicate edge {src} -> {dst} (first on line {first})"),
            ));
        }
        if src == dst || !rows.contains_key(&(dst, rel, src)) {
            edges.push(Edge::new(src, rel, dst));
        }
    }
    Ok((edges, num_relations))
}

fn parse_labels(path: &Path, n: usize) -> Result<(Vec<Option<usize>>, usize)> {
    let text = read(path)?;
    let mut labels = vec![None; n];
    for (line, l) in lines(&text) {
        let f = fields(path, line, l, 2, 2)?;
        let id = node(path, line, f[0], n)?;
        let class = int(path, line, f[1], "class id")?;
        if labels[id].replace(class).is_some() {
            return Err(Error::parse(path, line, format!("node {id} labeled twice")));
        }
    }
    let classes = labels.iter().flatten().max().map_or(0, |c| c + 1);
    Ok((labels, classes))
}

fn parse_splits(path: &Path, labels: &[Option<usize>]) -> Result<Vec<Split>> {
    let text = read(path)?;
    let n = labels.len();
    let mut splits = vec![Split::None; n];
    for (line, l) in lines(&text) {
        let f = fields(path, line, l, 2, 2)?;
        let id = node(path, line, f[0], n)?;
        let split = match f[1].trim() {
            "train" => Split::Train,
            "val" => Split::Val,
            "test" => Split::Test,
            other => return Err(Error::parse(path, line, format!("unknown split `{other}`"))),
        };
        if splits[id] != Split::None {
            return Err(Error::parse(path, line, format!("node {id} assigned to two splits")));
        }
        if labels[id].is_none() {
            return Err(Error::parse(
                path,
                line,
                format!("node {id} is in a split but has no label"),
            ));
        }
        splits[id] = split;
    }
    Ok(splits)
}

/// Loads a node-classification directory. Edges are symmetrized and get
/// relation 0 when the file has no relation column.
pub fn load_node_dataset(dir: impl AsRef<Path>) -> Result<NodeDataset> {
    let dir = dir.as_ref();
    let features = parse_features(&dir.join(FEATURES_FILE))?;
    let n = features.rows();
    let (edges, num_relations) = parse_edges(&dir.join(EDGES_FILE), n)?;
    let (labels, classes) = parse_labels(&dir.join(LABELS_FILE), n)?;
    let splits = parse_splits(&dir.join(SPLITS_FILE), &labels)?;
    let graph = Graph::undirected(n, num_relations, &edges)?;
    Ok(NodeDataset::new(graph, features, labels, classes, splits)?)
}

/// Writes `data` in the layout read by [`load_node_dataset`]. Each
/// undirected edge is written once, with the smaller id first.
pub fn write_node_dataset(dir: impl AsRef<Path>, data: &NodeDataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut s = String::new();
    for i in 0..data.features.rows() {
        let row: Vec<String> = data.features.row(i).iter().map(f64::to_string).collect();
        let _ = writeln!(s, "{i}\t{}", row.join(","));
    }
    write(&dir.join(FEATURES_FILE), &s)?;

    let with_rel = data.graph.num_relations() > 1;
    let undirected: BTreeSet<(usize, usize, usize)> = data
        .graph
        .edges()
        .iter()
        .map(|e| (e.src.min(e.dst), e.src.max(e.dst), e.rel))
        .collect();
    s.clear();
    for (a, b, r) in undirected {
        if with_rel {
            let _ = writeln!(s, "{a}\t{b}\t{r}");
        } else {
            let _ = writeln!(s, "{a}\t{b}");
        }
    }
    write(&dir.join(EDGES_FILE), &s)?;

    s.clear();
    for (i, l) in data.labels.iter().enumerate() {
        if let Some(c) = l {
            let _ = writeln!(s, "{i}\t{c}");
        }
    }
    write(&dir.join(LABELS_FILE), &s)?;

    s.clear();
    for (i, sp) in data.splits.iter().enumerate() {
        let token = match sp {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::None => continue,
        };
        let _ = writeln!(s, "{i}\t{token}");
    }
    write(&dir.join(SPLITS_FILE), &s)
}

/// A knowledge graph with the string names behind its dense ids.
#[derive(Debug, Clone)]
pub struct KgData {
    pub dataset: KgDataset,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
}

#[derive(Default)]
struct Interner {
    ids: HashMap<String, usize>,
    names: Vec<String>,
}

impl Interner {
    fn get(&self, s: &str) -> Option<usize> {
        self.ids.get(s).copied()
    }

    fn intern(&mut self, s: &str) -> usize {
        if let Some(id) = self.get(s) {
            return id;
        }
        self.ids.insert(s.to_owned(), self.names.len());
        self.names.push(s.to_owned());
        self.names.len() - 1
    }
}

/// Loads `train.txt`, `valid.txt` and `test.txt`. Names are interned in
/// order of first appearance, train first. With `strict`, a validation or
/// test triple naming an entity or relation absent from training is an
/// error; otherwise it gets a fresh id.
pub fn load_kg_dataset(dir: impl AsRef<Path>, strict: bool) -> Result<KgData> {
    let dir = dir.as_ref();
    let mut entities = Interner::default();
    let mut relations = Interner::default();
    let mut splits: Vec<Vec<Triple>> = Vec::with_capacity(3);
    for (k, file) in KG_FILES.iter().enumerate() {
        let path = dir.join(file);
        let text = read(&path)?;
        let mut triples = Vec::new();
        let mut seen = HashMap::new();
        for (line, l) in lines(&text) {
            let f = fields(&path, line, l, 3, 3)?;
            let names = [f[0].trim(), f[1].trim(), f[2].trim()];
            if names.iter().any(|s| s.is_empty()) {
                return Err(Error::parse(&path, line, "empty name"));
            }
            if strict && k > 0 {
                for (s, known) in [
                    (names[0], entities.get(names[0])),
                    (names[1], relations.get(names[1])),
                    (names[2], entities.get(names[2])),
                ] {
                    if known.is_none() {
                        return Err(Error::parse(&path, line, format!("`{s}` does not occur in training")));
                    }
                }
            }
            let t = Triple::new(
                entities.intern(names[0]),
                relations.intern(names[1]),
                entities.intern(names[2]),
            );
            if let Some(first) = seen.insert(t, line) {
                return Err(Error::parse(
                    &path,
                    line,
                    format!("duplicate triple (first on line {first})"),
                ));
            }
            triples.push(t);
        }
        splits.push(triples);
    }
    let test = splits.pop().unwrap_or_default();
    let valid = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    let dataset = KgDataset::new(entities.names.len(), relations.names.len().max(1), train, valid, test)?;
    Ok(KgData {
        dataset,
        entities: entities.names,
        relations: relations.names,
    })
}

/// Writes the three split files using the stored names.
pub fn write_kg_dataset(dir: impl AsRef<Path>, kg: &KgData) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = &kg.dataset;
    for (file, triples) in KG_FILES.iter().zip([&d.train, &d.valid, &d.test]) {
        let mut s = String::new();
        for t in triples {
            let _ = writeln!(
                s,
                "{}\t{}\t{}",
                kg.entities[t.head], kg.relations[t.rel], kg.entities[t.tail]
            );
        }
        write(&dir.join(file), &s)?;
    }
    Ok(())
}

/// Undirected graph from an edge-list file in the `edges.tsv` format,
/// with `max id + 1` nodes. A relation column is accepted and ignored.
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut pairs = Vec::new();
    for (line, l) in lines(&text) {
        let f = fields(path, line, l, 2, 3)?;
        let a = int(path, line, f[0], "node id")?;
        let b = int(path, line, f[1], "node id")?;
        pairs.push((line, a, b));
    }
    let n = pairs.iter().map(|&(_, a, b)| a.max(b) + 1).max().unwrap_or(0);
    let mut rows = HashMap::new();
    let mut edges = Vec::new();
    for (line, a, b) in pairs {
        if let Some(first) = rows.insert((a, b), line) {
            return Err(Error::parse(
                path,
                line,
                format!("duplicate edge {a} -> {b} (first on line {first})"),
            ));
        }
        if a == b || !rows.contains_key(&(b, a)) {
            edges.push(Edge::new(a, 0, b));
        }
    }
    Ok(Graph::undirected(n, 1, &edges)?)
}

/// Uniform attention `D⁻¹A` of `graph` as a dense matrix.
pub fn uniform_attention(graph: &Graph) -> Result<Matrix> {
    let values: Vec<f64> = graph
        .edges()
        .iter()
        .map(|e| 1.0 / graph.in_degree(e.dst) as f64)
        .collect();
    Ok(graph.dense_from_edges(&values)?)
}
