//! Heterogeneous multi-instance network: in-memory model and file I/O.
//!
//! A network is a typed graph in which exactly one node type is the *bag*
//! type; every bag-type node owns a dense instance matrix (n_i × d) and a
//! label set. Non-bag nodes carry structure only. The on-disk format is the
//! line-oriented `HMIN v1` text format documented on [`Hmin::save`].

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Index into the network's node-type table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeTypeId(pub usize);

/// Index into the network's relation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub usize);

/// File-visible node identifier. Globally unique across all types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

/// Label identifier from the declared label universe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelId(pub u32);

#[derive(Debug, Clone)]
pub struct NodeType {
    pub name: String,
    pub is_bag: bool,
}

#[derive(Debug, Clone)]
pub struct Relation {
    pub name: String,
    pub type_a: NodeTypeId,
    pub type_b: NodeTypeId,
    pub directed: bool,
}

/// An edge as declared in the file (one record per `E` line).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TypedEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub relation: RelationId,
}

/// A bag node's payload: its instance matrix and label set.
#[derive(Debug, Clone)]
pub struct Bag {
    pub node: NodeId,
    /// n_i × d, dense.
    pub instances: Array2<f64>,
    /// Sorted, deduplicated label ids.
    pub labels: Vec<LabelId>,
}

impl Bag {
    pub fn num_instances(&self) -> usize {
        self.instances.nrows()
    }

    pub fn has_label(&self, l: LabelId) -> bool {
        self.labels.binary_search(&l).is_ok()
    }
}

/// One finding from [`Hmin::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Finding {
    NoBagType,
    MultipleBagTypes,
    BagNodeWithoutBag { node: NodeId },
    BagForNonBagNode { node: NodeId },
    InstanceDimMismatch { node: NodeId, got: usize, expected: usize },
    AsymmetricEdge { src: NodeId, dst: NodeId },
    LabelOutOfUniverse { node: NodeId, label: LabelId },
    EmptyBag { node: NodeId },
}

/// Immutable heterogeneous multi-instance network.
///
/// Nodes are stored sorted by id; `dense index` below always means the
/// position in that sorted order, which downstream embedding tables use as
/// their row index.
#[derive(Debug, Clone)]
pub struct Hmin {
    types: Vec<NodeType>,
    relations: Vec<Relation>,
    /// (id, type), sorted by id.
    nodes: Vec<(NodeId, NodeTypeId)>,
    id_to_index: HashMap<NodeId, usize>,
    /// Per dense node index: (neighbor dense index, relation), sorted by
    /// neighbor id then relation.
    adjacency: Vec<Vec<(usize, RelationId)>>,
    /// Edges exactly as declared (directed edges once, undirected once).
    edges: Vec<TypedEdge>,
    /// Sorted by bag node id.
    bags: Vec<Bag>,
    bag_index: HashMap<NodeId, usize>,
    /// (id, name), sorted by id.
    labels: Vec<(LabelId, String)>,
    instance_dim: usize,
}

impl Hmin {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn instance_dim(&self) -> usize {
        self.instance_dim
    }

    pub fn types(&self) -> &[NodeType] {
        &self.types
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn edges(&self) -> &[TypedEdge] {
        &self.edges
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    /// Sorted label universe.
    pub fn labels(&self) -> &[(LabelId, String)] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    /// Position of `l` in the sorted label universe.
    pub fn label_index(&self, l: LabelId) -> Option<usize> {
        self.labels.binary_search_by_key(&l, |(id, _)| *id).ok()
    }

    pub fn type_by_name(&self, name: &str) -> Option<NodeTypeId> {
        self.types
            .iter()
            .position(|t| t.name == name)
            .map(NodeTypeId)
    }

    /// The unique bag type.
    pub fn bag_type(&self) -> NodeTypeId {
        NodeTypeId(
            self.types
                .iter()
                .position(|t| t.is_bag)
                .expect("validated network has a bag type"),
        )
    }

    pub fn node_type(&self, node: NodeId) -> Result<NodeTypeId> {
        self.index_of(node).map(|i| self.nodes[i].1)
    }

    /// Dense index of `node` (its position in id-sorted order).
    pub fn index_of(&self, node: NodeId) -> Result<usize> {
        self.id_to_index
            .get(&node)
            .copied()
            .ok_or(Error::UnknownNode(node.0))
    }

    pub fn node_at(&self, index: usize) -> NodeId {
        self.nodes[index].0
    }

    /// Bag-type node ids, sorted.
    pub fn bag_nodes(&self) -> Vec<NodeId> {
        let bt = self.bag_type();
        self.nodes
            .iter()
            .filter(|(_, t)| *t == bt)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn bag(&self, node: NodeId) -> Option<&Bag> {
        self.bag_index.get(&node).map(|&i| &self.bags[i])
    }

    /// All neighbors of `node` regardless of type, sorted by id (duplicates
    /// collapse when two relations connect the same pair).
    pub fn neighbors(&self, node: NodeId) -> Result<Vec<NodeId>> {
        let i = self.index_of(node)?;
        let mut out: Vec<NodeId> = self.adjacency[i]
            .iter()
            .map(|&(j, _)| self.nodes[j].0)
            .collect();
        out.dedup();
        Ok(out)
    }

    /// Neighbors of `node` whose type is `t`, in ascending id order.
    pub fn neighbors_of_type(&self, node: NodeId, t: NodeTypeId) -> Result<Vec<NodeId>> {
        let i = self.index_of(node)?;
        let mut out: Vec<NodeId> = self.adjacency[i]
            .iter()
            .filter(|&&(j, _)| self.nodes[j].1 == t)
            .map(|&(j, _)| self.nodes[j].0)
            .collect();
        out.dedup();
        Ok(out)
    }

    /// Check every structural invariant; returns an empty report for a valid
    /// network. Never mutates.
    pub fn validate(&self) -> Vec<Finding> {
        let mut findings = Vec::new();
        let bag_types: Vec<usize> = self
            .types
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_bag)
            .map(|(i, _)| i)
            .collect();
        match bag_types.len() {
            0 => findings.push(Finding::NoBagType),
            1 => {}
            _ => findings.push(Finding::MultipleBagTypes),
        }
        if let Some(&bt) = bag_types.first() {
            for &(id, t) in &self.nodes {
                if t == NodeTypeId(bt) && !self.bag_index.contains_key(&id) {
                    findings.push(Finding::BagNodeWithoutBag { node: id });
                }
            }
            for bag in &self.bags {
                if self.nodes[self.id_to_index[&bag.node]].1 != NodeTypeId(bt) {
                    findings.push(Finding::BagForNonBagNode { node: bag.node });
                }
            }
        }
        for bag in &self.bags {
            if bag.num_instances() == 0 {
                findings.push(Finding::EmptyBag { node: bag.node });
            }
            if bag.instances.ncols() != self.instance_dim {
                findings.push(Finding::InstanceDimMismatch {
                    node: bag.node,
                    got: bag.instances.ncols(),
                    expected: self.instance_dim,
                });
            }
            for &l in &bag.labels {
                if self.label_index(l).is_none() {
                    findings.push(Finding::LabelOutOfUniverse {
                        node: bag.node,
                        label: l,
                    });
                }
            }
        }
        // Undirected relations must appear in both adjacency lists.
        for (i, adj) in self.adjacency.iter().enumerate() {
            for &(j, r) in adj {
                if !self.relations[r.0].directed
                    && !self.adjacency[j].contains(&(i, r))
                {
                    findings.push(Finding::AsymmetricEdge {
                        src: self.nodes[i].0,
                        dst: self.nodes[j].0,
                    });
                }
            }
        }
        findings
    }

    /// Load a network from the `HMIN v1` text format.
    pub fn load(path: &Path) -> Result<Hmin> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parse the `HMIN v1` text format from a string.
    pub fn parse(text: &str) -> Result<Hmin> {
        let mut builder = Builder::default();
        let mut lines = text.lines().enumerate().peekable();

        let header = loop {
            match lines.next() {
                Some((n, line)) => {
                    let line = strip_comment(line);
                    if line.is_empty() {
                        continue;
                    }
                    break (n + 1, line);
                }
                None => {
                    return Err(Error::MalformedHeader {
                        line: 1,
                        detail: "empty file".into(),
                    })
                }
            }
        };
        if header.1 != "HMIN v1" {
            return Err(Error::MalformedHeader {
                line: header.0,
                detail: format!("expected 'HMIN v1', got '{}'", header.1),
            });
        }

        while let Some((n, raw)) = lines.next() {
            let lineno = n + 1;
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let mut tok = line.split_whitespace();
            let tag = tok.next().unwrap();
            let rest: Vec<&str> = tok.collect();
            match tag {
                "T" => builder.node_type(lineno, &rest)?,
                "R" => builder.relation(lineno, &rest)?,
                "N" => builder.node(lineno, &rest)?,
                "E" => builder.edge(lineno, &rest)?,
                "L" => builder.label(lineno, &rest)?,
                "B" => {
                    let (node, n_i, d) = builder.bag_header(lineno, &rest)?;
                    let mut rows: Vec<f64> = Vec::with_capacity(n_i * d);
                    for _ in 0..n_i {
                        let (rn, rraw) = next_content_line(&mut lines).ok_or_else(|| {
                            Error::MalformedRecord {
                                line: lineno,
                                detail: format!("bag {} truncated: expected {} instance rows", node.0, n_i),
                            }
                        })?;
                        let vals: std::result::Result<Vec<f64>, _> = rraw
                            .split_whitespace()
                            .map(|s| s.parse::<f64>())
                            .collect();
                        let vals = vals.map_err(|e| Error::MalformedRecord {
                            line: rn,
                            detail: format!("bad float: {e}"),
                        })?;
                        if vals.len() != d {
                            return Err(Error::DimensionMismatch {
                                line: rn,
                                expected: d,
                                got: vals.len(),
                            });
                        }
                        rows.extend(vals);
                    }
                    let (yn, yraw) = next_content_line(&mut lines).ok_or_else(|| {
                        Error::MalformedRecord {
                            line: lineno,
                            detail: format!("bag {} missing Y line", node.0),
                        }
                    })?;
                    builder.bag(lineno, yn, node, n_i, d, rows, &yraw)?;
                }
                other => {
                    return Err(Error::MalformedRecord {
                        line: lineno,
                        detail: format!("unknown record tag '{other}'"),
                    })
                }
            }
        }
        builder.finish()
    }

    /// Write the network back out in `HMIN v1` format.
    ///
    /// ```text
    /// HMIN v1
    /// T <type_name> [BAG]
    /// R <relation_name> <type_a> <type_b> [DIRECTED]
    /// N <node_id> <type_name>
    /// E <relation_name> <src_id> <dst_id>
    /// L <label_id> <label_name>
    /// B <node_id> <n_i> <d>
    /// <n_i lines of d floats>
    /// Y <label_id>...
    /// ```
    ///
    /// Floats use Rust's shortest round-trip formatting, so save→load is the
    /// identity. Output ordering is canonical (nodes, edges, bags by id), so
    /// equal networks serialize to identical bytes.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("HMIN v1\n");
        for t in &self.types {
            if t.is_bag {
                let _ = writeln!(s, "T {} BAG", t.name);
            } else {
                let _ = writeln!(s, "T {}", t.name);
            }
        }
        for r in &self.relations {
            let a = &self.types[r.type_a.0].name;
            let b = &self.types[r.type_b.0].name;
            if r.directed {
                let _ = writeln!(s, "R {} {} {} DIRECTED", r.name, a, b);
            } else {
                let _ = writeln!(s, "R {} {} {}", r.name, a, b);
            }
        }
        for &(id, t) in &self.nodes {
            let _ = writeln!(s, "N {} {}", id.0, self.types[t.0].name);
        }
        let mut edges = self.edges.clone();
        edges.sort_by_key(|e| (e.relation, e.src, e.dst));
        for e in &edges {
            let _ = writeln!(s, "E {} {} {}", self.relations[e.relation.0].name, e.src.0, e.dst.0);
        }
        for (id, name) in &self.labels {
            let _ = writeln!(s, "L {} {}", id.0, name);
        }
        for bag in &self.bags {
            let _ = writeln!(
                s,
                "B {} {} {}",
                bag.node.0,
                bag.num_instances(),
                self.instance_dim
            );
            for row in bag.instances.rows() {
                let mut first = true;
                for v in row {
                    if !first {
                        s.push(' ');
                    }
                    let _ = write!(s, "{v}");
                    first = false;
                }
                s.push('\n');
            }
            s.push('Y');
            for l in &bag.labels {
                let _ = write!(s, " {}", l.0);
            }
            s.push('\n');
        }
        s
    }

    /// Structural equality up to node ordering (ordering is canonical in
    /// memory, so this compares the canonical forms).
    pub fn structurally_equal(&self, other: &Hmin) -> bool {
        self.to_text() == other.to_text()
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => line[..i].trim(),
        None => line.trim(),
    }
}

fn next_content_line<'a, I>(lines: &mut I) -> Option<(usize, String)>
where
    I: Iterator<Item = (usize, &'a str)>,
{
    for (n, raw) in lines {
        let line = strip_comment(raw);
        if !line.is_empty() {
            return Some((n + 1, line.to_string()));
        }
    }
    None
}

/// Accumulates records during parsing, then assembles the indexed network.
#[derive(Default)]
struct Builder {
    types: Vec<NodeType>,
    relations: Vec<Relation>,
    nodes: Vec<(NodeId, NodeTypeId, usize)>, // (id, type, decl line)
    edges: Vec<(TypedEdge, usize)>,
    labels: Vec<(LabelId, String, usize)>,
    bags: Vec<(Bag, usize)>,
    instance_dim: Option<usize>,
}

impl Builder {
    fn type_id(&self, name: &str) -> Option<NodeTypeId> {
        self.types
            .iter()
            .position(|t| t.name == name)
            .map(NodeTypeId)
    }

    fn node_type(&mut self, line: usize, rest: &[&str]) -> Result<()> {
        let (name, flag) = match rest {
            [name] => (*name, false),
            [name, "BAG"] => (*name, true),
            _ => {
                return Err(Error::MalformedRecord {
                    line,
                    detail: "T expects: T <type_name> [BAG]".into(),
                })
            }
        };
        if self.type_id(name).is_some() {
            return Err(Error::MalformedRecord {
                line,
                detail: format!("duplicate type name '{name}'"),
            });
        }
        if flag && self.types.iter().any(|t| t.is_bag) {
            return Err(Error::MalformedRecord {
                line,
                detail: "more than one BAG type declared".into(),
            });
        }
        self.types.push(NodeType {
            name: name.to_string(),
            is_bag: flag,
        });
        Ok(())
    }

    fn relation(&mut self, line: usize, rest: &[&str]) -> Result<()> {
        let (name, a, b, directed) = match rest {
            [name, a, b] => (*name, *a, *b, false),
            [name, a, b, "DIRECTED"] => (*name, *a, *b, true),
            _ => {
                return Err(Error::MalformedRecord {
                    line,
                    detail: "R expects: R <relation_name> <type_a> <type_b> [DIRECTED]".into(),
                })
            }
        };
        let ta = self.type_id(a).ok_or_else(|| Error::MalformedRecord {
            line,
            detail: format!("relation '{name}' references unknown type '{a}'"),
        })?;
        let tb = self.type_id(b).ok_or_else(|| Error::MalformedRecord {
            line,
            detail: format!("relation '{name}' references unknown type '{b}'"),
        })?;
        if self.relations.iter().any(|r| r.name == name) {
            return Err(Error::MalformedRecord {
                line,
                detail: format!("duplicate relation name '{name}'"),
            });
        }
        self.relations.push(Relation {
            name: name.to_string(),
            type_a: ta,
            type_b: tb,
            directed,
        });
        Ok(())
    }

    fn node(&mut self, line: usize, rest: &[&str]) -> Result<()> {
        let [id, tname] = rest else {
            return Err(Error::MalformedRecord {
                line,
                detail: "N expects: N <node_id> <type_name>".into(),
            });
        };
        let id: u32 = id.parse().map_err(|_| Error::MalformedRecord {
            line,
            detail: format!("bad node id '{id}'"),
        })?;
        let t = self
            .type_id(tname)
            .ok_or_else(|| Error::MalformedRecord {
                line,
                detail: format!("node {id} has unknown type '{tname}'"),
            })?;
        if self.nodes.iter().any(|(n, _, _)| n.0 == id) {
            return Err(Error::DuplicateNode { line, id });
        }
        self.nodes.push((NodeId(id), t, line));
        Ok(())
    }

    fn edge(&mut self, line: usize, rest: &[&str]) -> Result<()> {
        let [rname, src, dst] = rest else {
            return Err(Error::MalformedRecord {
                line,
                detail: "E expects: E <relation_name> <src_id> <dst_id>".into(),
            });
        };
        let rel = self
            .relations
            .iter()
            .position(|r| r.name == *rname)
            .ok_or_else(|| Error::MalformedRecord {
                line,
                detail: format!("edge references unknown relation '{rname}'"),
            })?;
        let parse = |s: &str| -> Result<u32> {
            s.parse().map_err(|_| Error::MalformedRecord {
                line,
                detail: format!("bad node id '{s}'"),
            })
        };
        self.edges.push((
            TypedEdge {
                src: NodeId(parse(src)?),
                dst: NodeId(parse(dst)?),
                relation: RelationId(rel),
            },
            line,
        ));
        Ok(())
    }

    fn label(&mut self, line: usize, rest: &[&str]) -> Result<()> {
        let [id, name] = rest else {
            return Err(Error::MalformedRecord {
                line,
                detail: "L expects: L <label_id> <label_name>".into(),
            });
        };
        let id: u32 = id.parse().map_err(|_| Error::MalformedRecord {
            line,
            detail: format!("bad label id '{id}'"),
        })?;
        if self.labels.iter().any(|(l, _, _)| l.0 == id) {
            return Err(Error::MalformedRecord {
                line,
                detail: format!("duplicate label id {id}"),
            });
        }
        self.labels.push((LabelId(id), name.to_string(), line));
        Ok(())
    }

    fn bag_header(&mut self, line: usize, rest: &[&str]) -> Result<(NodeId, usize, usize)> {
        let [id, n_i, d] = rest else {
            return Err(Error::MalformedRecord {
                line,
                detail: "B expects: B <node_id> <n_i> <d>".into(),
            });
        };
        let id: u32 = id.parse().map_err(|_| Error::MalformedRecord {
            line,
            detail: format!("bad node id '{id}'"),
        })?;
        let n_i: usize = n_i.parse().map_err(|_| Error::MalformedRecord {
            line,
            detail: format!("bad instance count '{n_i}'"),
        })?;
        let d: usize = d.parse().map_err(|_| Error::MalformedRecord {
            line,
            detail: format!("bad instance dimension '{d}'"),
        })?;
        if n_i == 0 {
            return Err(Error::MalformedRecord {
                line,
                detail: format!("bag {id} declares zero instances"),
            });
        }
        Ok((NodeId(id), n_i, d))
    }

    #[allow(clippy::too_many_arguments)]
    fn bag(
        &mut self,
        line: usize,
        y_line: usize,
        node: NodeId,
        n_i: usize,
        d: usize,
        rows: Vec<f64>,
        y: &str,
    ) -> Result<()> {
        match self.instance_dim {
            None => self.instance_dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::DimensionMismatch {
                    line,
                    expected,
                    got: d,
                })
            }
            _ => {}
        }
        let mut tok = y.split_whitespace();
        match tok.next() {
            Some("Y") => {}
            _ => {
                return Err(Error::MalformedRecord {
                    line: y_line,
                    detail: format!("bag {} expects a Y line after its instances", node.0),
                })
            }
        }
        let mut labels = Vec::new();
        for t in tok {
            let id: u32 = t.parse().map_err(|_| Error::MalformedRecord {
                line: y_line,
                detail: format!("bad label id '{t}'"),
            })?;
            labels.push(LabelId(id));
        }
        labels.sort();
        labels.dedup();
        if self.bags.iter().any(|(b, _)| b.node == node) {
            return Err(Error::MalformedRecord {
                line,
                detail: format!("duplicate bag record for node {}", node.0),
            });
        }
        let instances = Array2::from_shape_vec((n_i, d), rows)
            .expect("row count and dim already checked");
        self.bags.push((
            Bag {
                node,
                instances,
                labels,
            },
            line,
        ));
        Ok(())
    }

    fn finish(self) -> Result<Hmin> {
        if !self.types.iter().any(|t| t.is_bag) {
            return Err(Error::MalformedRecord {
                line: 0,
                detail: "no type carries the BAG flag".into(),
            });
        }
        let mut nodes: Vec<(NodeId, NodeTypeId)> =
            self.nodes.iter().map(|&(id, t, _)| (id, t)).collect();
        nodes.sort_by_key(|(id, _)| *id);
        let id_to_index: HashMap<NodeId, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, &(id, _))| (id, i))
            .collect();

        let mut adjacency: Vec<Vec<(usize, RelationId)>> = vec![Vec::new(); nodes.len()];
        let mut edges = Vec::with_capacity(self.edges.len());
        for (e, line) in &self.edges {
            let si = *id_to_index
                .get(&e.src)
                .ok_or(Error::DanglingEdge { line: *line, id: e.src.0 })?;
            let di = *id_to_index
                .get(&e.dst)
                .ok_or(Error::DanglingEdge { line: *line, id: e.dst.0 })?;
            adjacency[si].push((di, e.relation));
            if !self.relations[e.relation.0].directed {
                adjacency[di].push((si, e.relation));
            }
            edges.push(*e);
        }
        for (i, adj) in adjacency.iter_mut().enumerate() {
            adj.sort_by_key(|&(j, r)| (nodes[j].0, r));
            adj.dedup();
            let _ = i;
        }

        let mut labels: Vec<(LabelId, String)> = self
            .labels
            .into_iter()
            .map(|(id, name, _)| (id, name))
            .collect();
        labels.sort_by_key(|(id, _)| *id);

        let mut bags: Vec<Bag> = Vec::with_capacity(self.bags.len());
        for (bag, line) in self.bags {
            if !id_to_index.contains_key(&bag.node) {
                return Err(Error::MalformedRecord {
                    line,
                    detail: format!("bag references undeclared node {}", bag.node.0),
                });
            }
            bags.push(bag);
        }
        bags.sort_by_key(|b| b.node);
        let bag_index: HashMap<NodeId, usize> = bags
            .iter()
            .enumerate()
            .map(|(i, b)| (b.node, i))
            .collect();

        Ok(Hmin {
            types: self.types,
            relations: self.relations,
            nodes,
            id_to_index,
            adjacency,
            edges,
            bags,
            bag_index,
            labels,
            instance_dim: self.instance_dim.unwrap_or(0),
        })
    }
}

/// Assemble a network directly from parts; used by the synthetic generator.
/// Applies the same canonicalization and checks as the file loader.
pub struct HminBuilder {
    inner: Builder,
}

impl Default for HminBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl HminBuilder {
    pub fn new() -> Self {
        HminBuilder {
            inner: Builder::default(),
        }
    }

    pub fn add_type(&mut self, name: &str, is_bag: bool) -> NodeTypeId {
        self.inner.types.push(NodeType {
            name: name.to_string(),
            is_bag,
        });
        NodeTypeId(self.inner.types.len() - 1)
    }

    pub fn add_relation(&mut self, name: &str, a: NodeTypeId, b: NodeTypeId) -> RelationId {
        self.inner.relations.push(Relation {
            name: name.to_string(),
            type_a: a,
            type_b: b,
            directed: false,
        });
        RelationId(self.inner.relations.len() - 1)
    }

    pub fn add_node(&mut self, id: u32, t: NodeTypeId) {
        self.inner.nodes.push((NodeId(id), t, 0));
    }

    pub fn add_edge(&mut self, relation: RelationId, src: u32, dst: u32) {
        self.inner.edges.push((
            TypedEdge {
                src: NodeId(src),
                dst: NodeId(dst),
                relation,
            },
            0,
        ));
    }

    pub fn add_label(&mut self, id: u32, name: &str) {
        self.inner.labels.push((LabelId(id), name.to_string(), 0));
    }

    pub fn add_bag(&mut self, node: u32, instances: Array2<f64>, mut labels: Vec<LabelId>) {
        labels.sort();
        labels.dedup();
        if self.inner.instance_dim.is_none() {
            self.inner.instance_dim = Some(instances.ncols());
        }
        self.inner.bags.push((
            Bag {
                node: NodeId(node),
                instances,
                labels,
            },
            0,
        ));
    }

    pub fn finish(self) -> Result<Hmin> {
        self.inner.finish()
    }
}
