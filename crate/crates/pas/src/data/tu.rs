//! TU-format dataset reader and writer.
//!
//! Files, all 1-indexed: `{name}_A.txt` with one "i, j" edge per line (both
//! directions listed for undirected graphs), `{name}_graph_indicator.txt`
//! with one graph id per node line, `{name}_graph_labels.txt` with one
//! integer per graph, plus optional `{name}_node_labels.txt` and
//! `{name}_node_attributes.txt`.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use diffcore::Tensor;

use super::{Dataset, Graph};
use crate::error::{PasError, Result};

#[derive(Clone, Copy, Debug, Default)]
pub struct TuOptions {
    /// Concatenate node attributes after the one-hot node labels. Off by
    /// default: with labels present only the one-hot encoding is used,
    /// which reproduces the conventional loader feature counts.
    pub use_node_attr: bool,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let content = fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            PasError::MissingFile { path: path.into() }
        } else {
            PasError::Io {
                path: path.into(),
                source,
            }
        }
    })?;
    Ok(content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

fn parse_usize(file: &Path, line: usize, s: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| PasError::Parse {
        file: file.into(),
        line,
        msg: format!("expected an unsigned integer, got `{s}`"),
    })
}

fn parse_i64(file: &Path, line: usize, s: &str) -> Result<i64> {
    s.trim().parse().map_err(|_| PasError::Parse {
        file: file.into(),
        line,
        msg: format!("expected an integer, got `{s}`"),
    })
}

fn parse_f64(file: &Path, line: usize, s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| PasError::Parse {
        file: file.into(),
        line,
        msg: format!("expected a real number, got `{s}`"),
    })
}

pub fn load_tu_dataset(dir: impl AsRef<Path>, name: &str) -> Result<Dataset> {
    load_tu_dataset_with(dir, name, TuOptions::default())
}

pub fn load_tu_dataset_with(
    dir: impl AsRef<Path>,
    name: &str,
    opts: TuOptions,
) -> Result<Dataset> {
    let dir = dir.as_ref();
    let file = |suffix: &str| -> PathBuf { dir.join(format!("{name}_{suffix}.txt")) };

    // Graph indicator: 1-indexed graph id per node, contiguous and
    // non-decreasing.
    let ind_path = file("graph_indicator");
    let mut node_graph: Vec<usize> = Vec::new();
    let mut prev = 0usize;
    for (line, text) in read_lines(&ind_path)? {
        let id = parse_usize(&ind_path, line, &text)?;
        if id != prev && id != prev + 1 {
            return Err(PasError::IndicatorGap {
                file: ind_path,
                line,
                id,
                prev,
            });
        }
        prev = prev.max(id);
        if id == 0 {
            return Err(PasError::Parse {
                file: ind_path,
                line,
                msg: "graph ids are 1-indexed".into(),
            });
        }
        node_graph.push(id - 1);
    }
    let num_graphs = prev;
    if num_graphs == 0 {
        return Err(PasError::Parse {
            file: ind_path,
            line: 0,
            msg: "no nodes listed".into(),
        });
    }
    let num_nodes = node_graph.len();
    let mut node_offset = vec![0usize; num_graphs + 1];
    for &g in &node_graph {
        node_offset[g + 1] += 1;
    }
    for g in 0..num_graphs {
        node_offset[g + 1] += node_offset[g];
    }

    // Graph labels, remapped onto [0, C) in ascending value order.
    let lab_path = file("graph_labels");
    let mut raw_labels: Vec<i64> = Vec::new();
    for (line, text) in read_lines(&lab_path)? {
        raw_labels.push(parse_i64(&lab_path, line, &text)?);
    }
    if raw_labels.len() != num_graphs {
        return Err(PasError::Parse {
            file: lab_path,
            line: raw_labels.len(),
            msg: format!("{} labels for {num_graphs} graphs", raw_labels.len()),
        });
    }
    let classes: Vec<i64> = raw_labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| classes.binary_search(l).unwrap())
        .collect();

    // Adjacency: symmetrize, drop self loops, forbid cross-graph edges.
    let a_path = file("A");
    let mut adj: Vec<Tensor> = (0..num_graphs)
        .map(|g| {
            let n = node_offset[g + 1] - node_offset[g];
            Tensor::zeros(n, n)
        })
        .collect();
    for (line, text) in read_lines(&a_path)? {
        let mut parts = text.split(',');
        let (u, v) = match (parts.next(), parts.next()) {
            (Some(a), Some(b)) => (
                parse_usize(&a_path, line, a)?,
                parse_usize(&a_path, line, b)?,
            ),
            _ => {
                return Err(PasError::Parse {
                    file: a_path,
                    line,
                    msg: format!("expected `i, j`, got `{text}`"),
                })
            }
        };
        if u == 0 || v == 0 || u > num_nodes || v > num_nodes {
            return Err(PasError::Parse {
                file: a_path,
                line,
                msg: format!("node id out of range in `{text}`"),
            });
        }
        let (u, v) = (u - 1, v - 1);
        if node_graph[u] != node_graph[v] {
            return Err(PasError::CrossGraphEdge {
                file: a_path,
                line,
                u: u + 1,
                v: v + 1,
            });
        }
        if u == v {
            continue; // zero diagonal on load
        }
        let g = node_graph[u];
        let (lu, lv) = (u - node_offset[g], v - node_offset[g]);
        adj[g].set(lu, lv, 1.0);
        adj[g].set(lv, lu, 1.0);
    }

    // Node features: one-hot labels in ascending label order, then
    // attributes (always used when no labels exist, appended when
    // `use_node_attr` is set), else a constant 1.0.
    let nl_path = file("node_labels");
    let node_labels: Option<Vec<i64>> = if nl_path.exists() {
        let mut out = Vec::new();
        for (line, text) in read_lines(&nl_path)? {
            out.push(parse_i64(&nl_path, line, &text)?);
        }
        if out.len() != num_nodes {
            return Err(PasError::Parse {
                file: nl_path,
                line: out.len(),
                msg: format!("{} node labels for {num_nodes} nodes", out.len()),
            });
        }
        Some(out)
    } else {
        None
    };
    let na_path = file("node_attributes");
    let node_attrs: Option<Vec<Vec<f64>>> = if na_path.exists() {
        let mut out: Vec<Vec<f64>> = Vec::new();
        let mut width = None;
        for (line, text) in read_lines(&na_path)? {
            let row: Vec<f64> = text
                .split(',')
                .map(|s| parse_f64(&na_path, line, s))
                .collect::<Result<_>>()?;
            if *width.get_or_insert(row.len()) != row.len() {
                return Err(PasError::Parse {
                    file: na_path,
                    line,
                    msg: "ragged attribute rows".into(),
                });
            }
            out.push(row);
        }
        if out.len() != num_nodes {
            return Err(PasError::Parse {
                file: na_path,
                line: out.len(),
                msg: format!("{} attribute rows for {num_nodes} nodes", out.len()),
            });
        }
        Some(out)
    } else {
        None
    };

    let label_values: Vec<i64> = node_labels
        .as_ref()
        .map(|ls| ls.iter().copied().collect::<BTreeSet<_>>().into_iter().collect())
        .unwrap_or_default();
    let onehot_dim = label_values.len();
    let attr_dim = node_attrs.as_ref().map(|a| a[0].len()).unwrap_or(0);
    let use_onehot = onehot_dim > 0;
    let use_attrs = attr_dim > 0 && (opts.use_node_attr || !use_onehot);
    let d_in = if use_onehot || use_attrs {
        (if use_onehot { onehot_dim } else { 0 }) + (if use_attrs { attr_dim } else { 0 })
    } else {
        1
    };

    let mut feats: Vec<Tensor> = (0..num_graphs)
        .map(|g| Tensor::zeros(node_offset[g + 1] - node_offset[g], d_in))
        .collect();
    for node in 0..num_nodes {
        let g = node_graph[node];
        let row = node - node_offset[g];
        let mut col = 0;
        if use_onehot {
            let l = node_labels.as_ref().unwrap()[node];
            let pos = label_values.binary_search(&l).unwrap();
            feats[g].set(row, pos, 1.0);
            col += onehot_dim;
        }
        if use_attrs {
            for (j, &v) in node_attrs.as_ref().unwrap()[node].iter().enumerate() {
                if !v.is_finite() {
                    return Err(PasError::NonFinite(format!(
                        "node attribute at node {}",
                        node + 1
                    )));
                }
                feats[g].set(row, col + j, v);
            }
            col += attr_dim;
        }
        if col == 0 {
            feats[g].set(row, 0, 1.0);
        }
    }

    let graphs: Vec<Graph> = adj
        .into_iter()
        .zip(feats)
        .zip(labels)
        .map(|((a, f), l)| Graph::new(a, f, l))
        .collect();
    Dataset::new(name, graphs)
}

/// Writes a dataset back out in TU format. Node features are emitted as
/// `node_attributes`; adjacency entries must be 0/1.
pub fn save_tu_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| PasError::Io {
        path: dir.into(),
        source,
    })?;
    let name = &dataset.name;
    let write = |suffix: &str, content: String| -> Result<()> {
        let path = dir.join(format!("{name}_{suffix}.txt"));
        let mut f = fs::File::create(&path).map_err(|source| PasError::Io {
            path: path.clone(),
            source,
        })?;
        f.write_all(content.as_bytes()).map_err(|source| PasError::Io {
            path: path.clone(),
            source,
        })
    };

    let mut a = String::new();
    let mut indicator = String::new();
    let mut labels = String::new();
    let mut attrs = String::new();
    let mut offset = 0usize;
    for (g, graph) in dataset.graphs.iter().enumerate() {
        let n = graph.node_count();
        for i in 0..n {
            indicator.push_str(&format!("{}\n", g + 1));
            let row: Vec<String> = (0..graph.feat_dim())
                .map(|j| format!("{}", graph.feat.get(i, j)))
                .collect();
            attrs.push_str(&row.join(", "));
            attrs.push('\n');
            for j in 0..n {
                let w = graph.adj.get(i, j);
                if w != 0.0 {
                    assert!(w == 1.0, "TU serialization expects a 0/1 adjacency");
                    a.push_str(&format!("{}, {}\n", offset + i + 1, offset + j + 1));
                }
            }
        }
        labels.push_str(&format!("{}\n", graph.label));
        offset += n;
    }
    write("A", a)?;
    write("graph_indicator", indicator)?;
    write("graph_labels", labels)?;
    write("node_attributes", attrs)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path, name: &str, files: &[(&str, &str)]) {
        fs::create_dir_all(dir).unwrap();
        for (suffix, content) in files {
            fs::write(dir.join(format!("{name}_{suffix}.txt")), content).unwrap();
        }
    }

    #[test]
    fn two_graph_fixture() {
        let dir = std::env::temp_dir().join("pas_tu_fixture");
        write_fixture(
            &dir,
            "TOY",
            &[
                ("A", "1, 2\n2, 1\n3, 4\n4, 3\n"),
                ("graph_indicator", "1\n1\n2\n2\n"),
                ("graph_labels", "1\n2\n"),
            ],
        );
        let ds = load_tu_dataset(&dir, "TOY").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.feat_dim, 1); // constant feature fallback
        for g in &ds.graphs {
            assert_eq!(g.node_count(), 2);
            assert_eq!(g.adj.get(0, 1), 1.0);
            assert_eq!(g.adj.get(1, 0), 1.0);
            assert_eq!(g.adj.get(0, 0), 0.0);
            assert_eq!(g.feat.get(0, 0), 1.0);
        }
        assert_eq!(ds.graphs[0].label, 0);
        assert_eq!(ds.graphs[1].label, 1);
    }

    #[test]
    fn missing_a_file_names_it() {
        let dir = std::env::temp_dir().join("pas_tu_missing_a");
        write_fixture(
            &dir,
            "GONE",
            &[("graph_indicator", "1\n"), ("graph_labels", "1\n")],
        );
        let err = load_tu_dataset(&dir, "GONE").unwrap_err();
        assert!(err.to_string().contains("GONE_A.txt"), "{err}");
    }

    #[test]
    fn cross_graph_edge_rejected_with_line() {
        let dir = std::env::temp_dir().join("pas_tu_cross");
        write_fixture(
            &dir,
            "X",
            &[
                ("A", "1, 2\n2, 1\n2, 3\n"),
                ("graph_indicator", "1\n1\n2\n"),
                ("graph_labels", "1\n2\n"),
            ],
        );
        let err = load_tu_dataset(&dir, "X").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("X_A.txt:3"), "{msg}");
        assert!(msg.contains("crosses graph boundary"), "{msg}");
    }

    #[test]
    fn indicator_gap_rejected() {
        let dir = std::env::temp_dir().join("pas_tu_gap");
        write_fixture(
            &dir,
            "GAP",
            &[
                ("A", "1, 2\n2, 1\n"),
                ("graph_indicator", "1\n1\n3\n"),
                ("graph_labels", "1\n2\n3\n"),
            ],
        );
        let err = load_tu_dataset(&dir, "GAP").unwrap_err();
        assert!(err.to_string().contains("gap"), "{err}");
    }

    #[test]
    fn node_labels_one_hot_ascending() {
        let dir = std::env::temp_dir().join("pas_tu_onehot");
        write_fixture(
            &dir,
            "OH",
            &[
                ("A", "1, 2\n2, 1\n"),
                ("graph_indicator", "1\n1\n"),
                ("graph_labels", "1\n"),
                ("node_labels", "5\n-1\n"),
            ],
        );
        let ds = load_tu_dataset(&dir, "OH").unwrap();
        assert_eq!(ds.feat_dim, 2);
        // Node 0 has label 5 (second in ascending order), node 1 has -1.
        assert_eq!(ds.graphs[0].feat.row_slice(0), &[0.0, 1.0]);
        assert_eq!(ds.graphs[0].feat.row_slice(1), &[1.0, 0.0]);
    }

    #[test]
    fn attributes_concatenated_when_requested() {
        let dir = std::env::temp_dir().join("pas_tu_attr");
        write_fixture(
            &dir,
            "AT",
            &[
                ("A", "1, 2\n2, 1\n"),
                ("graph_indicator", "1\n1\n"),
                ("graph_labels", "0\n"),
                ("node_labels", "0\n1\n"),
                ("node_attributes", "0.5, 1.5\n2.5, 3.5\n"),
            ],
        );
        let default = load_tu_dataset(&dir, "AT").unwrap();
        assert_eq!(default.feat_dim, 2); // labels only by default
        let with_attr =
            load_tu_dataset_with(&dir, "AT", TuOptions { use_node_attr: true }).unwrap();
        assert_eq!(with_attr.feat_dim, 4);
        assert_eq!(with_attr.graphs[0].feat.row_slice(0), &[1.0, 0.0, 0.5, 1.5]);
    }

    #[test]
    fn save_load_roundtrip_preserves_graphs() {
        let dir = std::env::temp_dir().join("pas_tu_roundtrip_src");
        write_fixture(
            &dir,
            "RT",
            &[
                ("A", "1, 2\n2, 1\n3, 4\n4, 3\n4, 5\n5, 4\n"),
                ("graph_indicator", "1\n1\n2\n2\n2\n"),
                ("graph_labels", "2\n7\n"),
                ("node_attributes", "0.25\n1.0\n-3.5\n0.0\n2.0\n"),
            ],
        );
        let ds = load_tu_dataset(&dir, "RT").unwrap();
        let out = std::env::temp_dir().join("pas_tu_roundtrip_out");
        save_tu_dataset(&ds, &out).unwrap();
        let back = load_tu_dataset(&out, "RT").unwrap();
        assert_eq!(ds.graphs, back.graphs);
        assert_eq!(ds.num_classes, back.num_classes);
    }
}
