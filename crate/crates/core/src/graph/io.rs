//! Plain-text dataset directory: `meta.txt`, `features.csv`, `edges.csv`, `labels.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn read(dir: &Path, name: &str) -> Result<(std::path::PathBuf, String)> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::parse(&path, 0, format!("cannot read: {e}")))?;
    Ok((path, text))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

struct Meta {
    n_nodes: usize,
    n_features: usize,
    n_classes: usize,
}

fn parse_meta(dir: &Path) -> Result<Meta> {
    let (path, text) = read(dir, "meta.txt")?;
    let (mut n_nodes, mut n_features, mut n_classes) = (None, None, None);
    for (ln, line) in content_lines(&text) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(&path, ln, "expected key=value"))?;
        let value: usize = value
            .trim()
            .parse()
            .map_err(|_| Error::parse(&path, ln, format!("bad integer {value:?}")))?;
        match key.trim() {
            "n_nodes" => n_nodes = Some(value),
            "n_features" => n_features = Some(value),
            "n_classes" => n_classes = Some(value),
            other => return Err(Error::parse(&path, ln, format!("unknown key {other:?}"))),
        }
    }
    let missing = |k: &str| Error::parse(&path, 0, format!("missing {k}"));
    Ok(Meta {
        n_nodes: n_nodes.ok_or_else(|| missing("n_nodes"))?,
        n_features: n_features.ok_or_else(|| missing("n_features"))?,
        n_classes: n_classes.ok_or_else(|| missing("n_classes"))?,
    })
}

/// Reads a dataset directory; edges are canonicalised.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Graph> {
    let dir = dir.as_ref();
    let meta = parse_meta(dir)?;

    let (path, text) = read(dir, "features.csv")?;
    let mut data = Vec::with_capacity(meta.n_nodes * meta.n_features);
    let mut rows = 0;
    for (ln, line) in content_lines(&text) {
        let before = data.len();
        for field in line.split(',') {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(&path, ln, format!("bad float {field:?}")))?;
            if !x.is_finite() {
                return Err(Error::parse(&path, ln, "non-finite feature"));
            }
            data.push(x);
        }
        if data.len() - before != meta.n_features {
            return Err(Error::parse(
                &path,
                ln,
                format!(
                    "expected {} features, found {}",
                    meta.n_features,
                    data.len() - before
                ),
            ));
        }
        rows += 1;
    }
    if rows != meta.n_nodes {
        return Err(Error::parse(
            &path,
            rows,
            format!("expected {} rows, found {rows}", meta.n_nodes),
        ));
    }
    let features = Tensor::new(meta.n_nodes, meta.n_features, data)?;

    let (path, text) = read(dir, "labels.csv")?;
    let mut labels = Vec::with_capacity(meta.n_nodes);
    for (ln, line) in content_lines(&text) {
        let l: usize = line
            .parse()
            .map_err(|_| Error::parse(&path, ln, format!("bad label {line:?}")))?;
        if l >= meta.n_classes {
            return Err(Error::parse(
                &path,
                ln,
                format!("label {l} not below n_classes={}", meta.n_classes),
            ));
        }
        labels.push(l);
    }
    if labels.len() != meta.n_nodes {
        return Err(Error::parse(
            &path,
            labels.len(),
            format!("expected {} labels, found {}", meta.n_nodes, labels.len()),
        ));
    }

    let (path, text) = read(dir, "edges.csv")?;
    let mut edges = Vec::new();
    for (ln, line) in content_lines(&text) {
        let (u, v) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(&path, ln, "expected u,v"))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::parse(&path, ln, format!("bad node id {s:?}")))
        };
        let (u, v) = (parse(u)?, parse(v)?);
        if u >= meta.n_nodes || v >= meta.n_nodes {
            return Err(Error::parse(
                &path,
                ln,
                format!("endpoint not below n_nodes={}", meta.n_nodes),
            ));
        }
        edges.push((u, v));
    }

    Graph::new(features, edges, labels, meta.n_classes)
}

/// Writes `g` in the dataset directory format, creating `dir` if needed.
pub fn write_dataset(g: &Graph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("meta.txt"),
        format!(
            "n_nodes={}\nn_features={}\nn_classes={}\n",
            g.n_nodes(),
            g.n_features(),
            g.n_classes()
        ),
    )?;

    let mut s = String::new();
    for r in 0..g.n_nodes() {
        let row = g.features().row(r);
        for (j, x) in row.iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            // `{:?}` prints the shortest string that round-trips exactly.
            write!(s, "{x:?}").unwrap();
        }
        s.push('\n');
    }
    fs::write(dir.join("features.csv"), s)?;

    let mut s = String::new();
    for (u, v) in g.edges() {
        writeln!(s, "{u},{v}").unwrap();
    }
    fs::write(dir.join("edges.csv"), s)?;

    let mut s = String::new();
    for l in g.labels() {
        writeln!(s, "{l}").unwrap();
    }
    fs::write(dir.join("labels.csv"), s)?;
    Ok(())
}
