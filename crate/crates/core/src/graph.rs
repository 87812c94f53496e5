//! Attributed directed graphs, attribute schemas and datasets.
//!
//! Attribute values are stored row-major as `Option<f64>` (categorical
//! states as their integer index) next to an observation mask. An entry can
//! be unobserved while still carrying its true value: this is how held-out
//! values survive masking so that missing-data metrics can be computed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GspnError, Result};

/// Distribution family of one vertex attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttributeKind {
    Categorical { arity: usize },
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeSchema {
    attributes: Vec<AttributeKind>,
}

impl AttributeSchema {
    pub fn new(attributes: Vec<AttributeKind>) -> Result<Self> {
        let schema = Self { attributes };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(GspnError::InvalidSchema(
                "at least one attribute is required".into(),
            ));
        }
        for (a, kind) in self.attributes.iter().enumerate() {
            if let AttributeKind::Categorical { arity } = kind {
                if *arity < 2 {
                    return Err(GspnError::InvalidSchema(format!(
                        "categorical attribute {a} has arity {arity}, expected at least 2"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn kinds(&self) -> &[AttributeKind] {
        &self.attributes
    }

    pub fn kind(&self, attribute: usize) -> AttributeKind {
        self.attributes[attribute]
    }

    /// Indices of continuous attributes, ascending.
    pub fn continuous(&self) -> Vec<usize> {
        self.attributes
            .iter()
            .enumerate()
            .filter(|(_, k)| matches!(k, AttributeKind::Continuous))
            .map(|(a, _)| a)
            .collect()
    }

    /// `(attribute index, arity)` of categorical attributes, ascending.
    pub fn categorical(&self) -> Vec<(usize, usize)> {
        self.attributes
            .iter()
            .enumerate()
            .filter_map(|(a, k)| match k {
                AttributeKind::Categorical { arity } => Some((a, *arity)),
                AttributeKind::Continuous => None,
            })
            .collect()
    }

    /// Checks that `value` is admissible for `attribute`.
    pub fn check_value(&self, attribute: usize, value: f64) -> std::result::Result<(), String> {
        match self.attributes.get(attribute) {
            None => Err(format!("attribute index {attribute} out of range")),
            Some(AttributeKind::Continuous) => {
                if value.is_finite() {
                    Ok(())
                } else {
                    Err(format!("continuous value {value} is not finite"))
                }
            }
            Some(AttributeKind::Categorical { arity }) => {
                if value.fract() != 0.0 || value < 0.0 || value >= *arity as f64 {
                    Err(format!(
                        "categorical value {value} outside [0, {arity}) for arity {arity}"
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// A directed attributed graph `g = (V, E, X)` with an observation mask.
///
/// Incoming adjacency is precomputed in compressed form with sources sorted
/// ascending, so neighborhood iteration order never depends on the order of
/// the edge list.
#[derive(Debug, Clone)]
pub struct Graph {
    num_vertices: usize,
    num_attributes: usize,
    edges: Vec<(usize, usize)>,
    values: Vec<Option<f64>>,
    observed: Vec<bool>,
    label: Option<usize>,
    in_offsets: Vec<usize>,
    in_sources: Vec<usize>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.num_vertices == other.num_vertices
            && self.num_attributes == other.num_attributes
            && self.edges == other.edges
            && self.values == other.values
            && self.observed == other.observed
            && self.label == other.label
    }
}

impl Graph {
    /// Builds a graph whose observed entries are exactly the `Some` values.
    pub fn new(
        num_vertices: usize,
        edges: Vec<(usize, usize)>,
        rows: Vec<Vec<Option<f64>>>,
        label: Option<usize>,
    ) -> Result<Self> {
        let observed = rows
            .iter()
            .map(|r| r.iter().map(Option::is_some).collect())
            .collect();
        Self::with_mask(num_vertices, edges, rows, observed, label)
    }

    /// Builds a graph with an explicit mask. Entries with `observed == false`
    /// may still hold their (hidden) true value.
    pub fn with_mask(
        num_vertices: usize,
        edges: Vec<(usize, usize)>,
        rows: Vec<Vec<Option<f64>>>,
        mask: Vec<Vec<bool>>,
        label: Option<usize>,
    ) -> Result<Self> {
        let invalid = |message: String| GspnError::InvalidGraph { graph: 0, message };
        if rows.len() != num_vertices || mask.len() != num_vertices {
            return Err(invalid(format!(
                "expected {num_vertices} attribute rows, got {} rows and {} mask rows",
                rows.len(),
                mask.len()
            )));
        }
        let num_attributes = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(num_vertices * num_attributes);
        let mut observed = Vec::with_capacity(num_vertices * num_attributes);
        for (v, (row, mrow)) in rows.into_iter().zip(mask).enumerate() {
            if row.len() != num_attributes || mrow.len() != num_attributes {
                return Err(invalid(format!(
                    "vertex {v} has {} values and {} mask entries, expected {num_attributes}",
                    row.len(),
                    mrow.len()
                )));
            }
            for (a, (x, o)) in row.into_iter().zip(mrow).enumerate() {
                if o && x.is_none() {
                    return Err(invalid(format!(
                        "vertex {v}, attribute {a} is marked observed but has no value"
                    )));
                }
                values.push(x);
                observed.push(o);
            }
        }

        let mut seen = std::collections::BTreeSet::new();
        for &(u, v) in &edges {
            if u >= num_vertices || v >= num_vertices {
                return Err(invalid(format!(
                    "edge ({u}, {v}) has an endpoint outside [0, {num_vertices})"
                )));
            }
            if u == v {
                return Err(invalid(format!("self-loop on vertex {u}")));
            }
            if !seen.insert((u, v)) {
                return Err(invalid(format!("duplicate edge ({u}, {v})")));
            }
        }

        let mut in_offsets = vec![0usize; num_vertices + 1];
        for &(_, v) in &edges {
            in_offsets[v + 1] += 1;
        }
        for v in 0..num_vertices {
            in_offsets[v + 1] += in_offsets[v];
        }
        let mut in_sources = vec![0usize; edges.len()];
        let mut fill = in_offsets.clone();
        for &(u, v) in &edges {
            in_sources[fill[v]] = u;
            fill[v] += 1;
        }
        for v in 0..num_vertices {
            in_sources[in_offsets[v]..in_offsets[v + 1]].sort_unstable();
        }

        Ok(Self {
            num_vertices,
            num_attributes,
            edges,
            values,
            observed,
            label,
            in_offsets,
            in_sources,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_attributes(&self) -> usize {
        self.num_attributes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    /// Stored value, observed or not.
    pub fn value(&self, v: usize, a: usize) -> Option<f64> {
        self.values[v * self.num_attributes + a]
    }

    pub fn is_observed(&self, v: usize, a: usize) -> bool {
        self.observed[v * self.num_attributes + a]
    }

    /// Value if observed, `None` if masked.
    pub fn observed_value(&self, v: usize, a: usize) -> Option<f64> {
        let i = v * self.num_attributes + a;
        if self.observed[i] {
            self.values[i]
        } else {
            None
        }
    }

    pub fn row(&self, v: usize) -> &[Option<f64>] {
        &self.values[v * self.num_attributes..(v + 1) * self.num_attributes]
    }

    pub fn mask_row(&self, v: usize) -> &[bool] {
        &self.observed[v * self.num_attributes..(v + 1) * self.num_attributes]
    }

    /// Sorted in-neighbors of `v`, i.e. every `u` with an edge `u -> v`.
    pub fn in_neighbors(&self, v: usize) -> Result<&[usize]> {
        if v >= self.num_vertices {
            return Err(GspnError::VertexOutOfRange {
                vertex: v,
                num_vertices: self.num_vertices,
            });
        }
        Ok(self.in_neighbors_unchecked(v))
    }

    pub(crate) fn in_neighbors_unchecked(&self, v: usize) -> &[usize] {
        &self.in_sources[self.in_offsets[v]..self.in_offsets[v + 1]]
    }

    /// Number of masked entries that still carry a ground-truth value.
    pub fn num_held_out(&self) -> usize {
        self.values
            .iter()
            .zip(&self.observed)
            .filter(|(x, o)| !**o && x.is_some())
            .count()
    }

    pub fn num_masked(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }

    /// Returns a copy with a different mask; values are untouched.
    pub fn remasked(&self, observed: Vec<bool>) -> Self {
        assert_eq!(observed.len(), self.observed.len());
        let mut g = self.clone();
        for (i, o) in observed.iter().enumerate() {
            assert!(
                !*o || g.values[i].is_some(),
                "cannot observe a missing value"
            );
        }
        g.observed = observed;
        g
    }

    /// Returns a copy where `(v, a)` holds `value` and is observed.
    pub fn with_value(&self, v: usize, a: usize, value: f64) -> Self {
        let mut g = self.clone();
        let i = v * self.num_attributes + a;
        g.values[i] = Some(value);
        g.observed[i] = true;
        g
    }

    /// Returns a copy where every vertex id `v` becomes `perm[v]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        assert_eq!(perm.len(), self.num_vertices);
        let mut rows = vec![Vec::new(); self.num_vertices];
        let mut mask = vec![Vec::new(); self.num_vertices];
        for v in 0..self.num_vertices {
            rows[perm[v]] = self.row(v).to_vec();
            mask[perm[v]] = self.mask_row(v).to_vec();
        }
        let edges = self
            .edges
            .iter()
            .map(|&(u, v)| (perm[u], perm[v]))
            .collect();
        Graph::with_mask(self.num_vertices, edges, rows, mask, self.label)
    }

    /// Returns a copy with the edge list reordered; adjacency is unchanged.
    pub fn with_edge_order(&self, edges: Vec<(usize, usize)>) -> Result<Self> {
        let rows = (0..self.num_vertices)
            .map(|v| self.row(v).to_vec())
            .collect();
        let mask = (0..self.num_vertices)
            .map(|v| self.mask_row(v).to_vec())
            .collect();
        Graph::with_mask(self.num_vertices, edges, rows, mask, self.label)
    }

    /// Out-edge shortest-path distance from `source` to every vertex, i.e. the
    /// depth at which `source` first appears in each vertex's computational
    /// tree. `None` when unreachable.
    pub fn hop_distances_from(&self, source: usize) -> Vec<Option<usize>> {
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); self.num_vertices];
        for &(u, v) in &self.edges {
            out[u].push(v);
        }
        let mut dist = vec![None; self.num_vertices];
        let mut queue = std::collections::VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap();
            for &w in &out[u] {
                if dist[w].is_none() {
                    dist[w] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    fn validate_against(&self, schema: &AttributeSchema, graph: usize) -> Result<()> {
        if self.num_attributes != schema.len() && self.num_vertices > 0 {
            return Err(GspnError::InvalidGraph {
                graph,
                message: format!(
                    "vertices have {} attributes, schema declares {}",
                    self.num_attributes,
                    schema.len()
                ),
            });
        }
        for v in 0..self.num_vertices {
            for a in 0..self.num_attributes {
                if let Some(x) = self.value(v, a) {
                    schema
                        .check_value(a, x)
                        .map_err(|message| GspnError::SchemaViolation {
                            graph,
                            vertex: v,
                            attribute: a,
                            message,
                        })?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: AttributeSchema,
    graphs: Vec<Graph>,
    num_classes: Option<usize>,
}

/// Summary counts reported after loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DatasetStats {
    pub graphs: usize,
    pub vertices: usize,
    pub edges: usize,
    pub masked_entries: usize,
    pub fully_masked_vertices: usize,
}

impl Dataset {
    pub fn new(
        schema: AttributeSchema,
        graphs: Vec<Graph>,
        num_classes: Option<usize>,
    ) -> Result<Self> {
        if num_classes == Some(0) {
            return Err(GspnError::InvalidSchema(
                "num_classes must be positive".into(),
            ));
        }
        for (i, g) in graphs.iter().enumerate() {
            g.validate_against(&schema, i)?;
            if let (Some(y), Some(k)) = (g.label(), num_classes) {
                if y >= k {
                    return Err(GspnError::InvalidGraph {
                        graph: i,
                        message: format!("label {y} outside [0, {k})"),
                    });
                }
            }
        }
        Ok(Self {
            schema,
            graphs,
            num_classes,
        })
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Sub-dataset with the graphs at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn with_graphs(&self, graphs: Vec<Graph>) -> Result<Self> {
        Self::new(self.schema.clone(), graphs, self.num_classes)
    }

    pub fn stats(&self) -> DatasetStats {
        let mut s = DatasetStats {
            graphs: self.graphs.len(),
            ..Default::default()
        };
        for g in &self.graphs {
            s.vertices += g.num_vertices();
            s.edges += g.num_edges();
            s.masked_entries += g.num_masked();
            s.fully_masked_vertices += (0..g.num_vertices())
                .filter(|&v| g.mask_row(v).iter().all(|o| !o))
                .count();
        }
        s
    }

    /// Reads and validates a dataset in the JSON interchange format.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| GspnError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let ds = Self::from_json_str(&text)?;
        let stats = ds.stats();
        if stats.fully_masked_vertices > 0 {
            log::warn!(
                "{}: {} of {} vertices have every attribute missing",
                path.display(),
                stats.fully_masked_vertices,
                stats.vertices
            );
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|source| GspnError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text).map_err(|e| GspnError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let schema = AttributeSchema::new(file.schema)?;
        let mut graphs = Vec::with_capacity(file.graphs.len());
        for (i, gf) in file.graphs.into_iter().enumerate() {
            let mut edges: Vec<(usize, usize)> =
                gf.edges.into_iter().map(|[u, v]| (u, v)).collect();
            for [u, v] in gf.undirected_edges.unwrap_or_default() {
                edges.push((u, v));
                edges.push((v, u));
            }
            let mask = match gf.mask {
                Some(m) => m,
                None => {
                    gf.x.iter()
                        .map(|r| r.iter().map(Option::is_some).collect())
                        .collect()
                }
            };
            let g = Graph::with_mask(gf.n, edges, gf.x, mask, gf.y).map_err(|e| match e {
                GspnError::InvalidGraph { message, .. } => {
                    GspnError::InvalidGraph { graph: i, message }
                }
                other => other,
            })?;
            graphs.push(g);
        }
        Self::new(schema, graphs, file.num_classes)
    }

    pub fn to_json_string(&self) -> String {
        let graphs = self
            .graphs
            .iter()
            .map(|g| {
                let x: Vec<Vec<Option<f64>>> =
                    (0..g.num_vertices()).map(|v| g.row(v).to_vec()).collect();
                let hidden = g.num_held_out() > 0;
                GraphFile {
                    n: g.num_vertices(),
                    edges: g.edges().iter().map(|&(u, v)| [u, v]).collect(),
                    undirected_edges: None,
                    x,
                    mask: hidden.then(|| {
                        (0..g.num_vertices())
                            .map(|v| g.mask_row(v).to_vec())
                            .collect()
                    }),
                    y: g.label(),
                }
            })
            .collect();
        let file = DatasetFile {
            schema: self.schema.attributes.clone(),
            num_classes: self.num_classes,
            graphs,
        };
        serde_json::to_string(&file).expect("dataset serialization cannot fail")
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    schema: Vec<AttributeKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_classes: Option<usize>,
    graphs: Vec<GraphFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    n: usize,
    #[serde(default)]
    edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    undirected_edges: Option<Vec<[usize; 2]>>,
    x: Vec<Vec<Option<f64>>>,
    /// Optional explicit observation mask; when present, `x` may carry the
    /// hidden true value of masked entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<Vec<Vec<bool>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cont_schema(d: usize) -> AttributeSchema {
        AttributeSchema::new(vec![AttributeKind::Continuous; d]).unwrap()
    }

    #[test]
    fn undirected_edges_expand_to_both_directions() {
        let text = r#"{"schema":[{"kind":"continuous"}],
            "graphs":[{"n":2,"undirected_edges":[[0,1]],"x":[[0.5],[1.5]]}]}"#;
        let ds = Dataset::from_json_str(text).unwrap();
        assert_eq!(ds.graphs()[0].edges(), &[(0, 1), (1, 0)]);
    }

    #[test]
    fn empty_graph_list_is_valid() {
        let ds =
            Dataset::from_json_str(r#"{"schema":[{"kind":"continuous"}],"graphs":[]}"#).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn out_of_range_category_names_attribute() {
        let text = r#"{"schema":[{"kind":"continuous"},{"kind":"categorical","arity":3}],
            "graphs":[{"n":1,"x":[[0.0,5]]}]}"#;
        match Dataset::from_json_str(text) {
            Err(GspnError::SchemaViolation {
                graph: 0,
                vertex: 0,
                attribute: 1,
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "{\"schema\": [\n{\"kind\": \"continuous\"}\n],\n\"graphs\": [oops]}";
        match Dataset::from_json_str(text) {
            Err(GspnError::Parse { line: 4, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_self_loops_and_duplicates() {
        let rows = vec![vec![Some(0.0)]; 2];
        assert!(Graph::new(2, vec![(0, 0)], rows.clone(), None).is_err());
        assert!(Graph::new(2, vec![(0, 1), (0, 1)], rows.clone(), None).is_err());
        assert!(Graph::new(2, vec![(0, 2)], rows, None).is_err());
    }

    #[test]
    fn rejects_bad_schema() {
        assert!(AttributeSchema::new(vec![]).is_err());
        assert!(AttributeSchema::new(vec![AttributeKind::Categorical { arity: 1 }]).is_err());
    }

    #[test]
    fn in_neighbors_sorted() {
        let rows = vec![vec![Some(0.0)]; 3];
        let g = Graph::new(3, vec![(2, 1), (0, 1)], rows, None).unwrap();
        assert_eq!(g.in_neighbors(1).unwrap(), &[0, 2]);
        assert!(g.in_neighbors(0).unwrap().is_empty());
        assert!(g.in_neighbors(3).is_err());

        let rows = vec![vec![Some(0.0)]; 2];
        let g = Graph::new(2, vec![(1, 0), (0, 1)], rows, None).unwrap();
        assert_eq!(g.in_neighbors(0).unwrap(), &[1]);
    }

    #[test]
    fn hidden_truth_survives_round_trip() {
        let g = Graph::with_mask(
            2,
            vec![(0, 1)],
            vec![vec![Some(1.0), Some(2.0)], vec![None, Some(3.0)]],
            vec![vec![true, false], vec![false, true]],
            Some(0),
        )
        .unwrap();
        let ds = Dataset::new(cont_schema(2), vec![g], Some(2)).unwrap();
        let back = Dataset::from_json_str(&ds.to_json_string()).unwrap();
        assert_eq!(ds, back);
        assert_eq!(back.graphs()[0].num_held_out(), 1);
        assert_eq!(back.stats().fully_masked_vertices, 0);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let g = Graph::new(1, vec![], vec![vec![Some(0.0)]], Some(3)).unwrap();
        assert!(Dataset::new(cont_schema(1), vec![g], Some(2)).is_err());
    }

    #[test]
    fn hop_distances_follow_out_edges() {
        let rows = vec![vec![Some(0.0)]; 4];
        let g = Graph::new(4, vec![(0, 1), (1, 2), (3, 0)], rows, None).unwrap();
        assert_eq!(
            g.hop_distances_from(0),
            vec![Some(0), Some(1), Some(2), None]
        );
    }
}
