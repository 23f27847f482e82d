//! Directed acyclic graphs on latent nodes.
//!
//! Nodes are stored 0-based; every textual format (edge lists, JSON) uses the
//! 1-based labels `1..=q`.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LcdError, Result};

/// Default node cap for exhaustive enumerations.
pub const DEFAULT_ENUMERATION_CAP: usize = 6;

/// A DAG on nodes `0..q`. Edge `(j, i)` means `j → i` (j is a parent of i).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dag {
    q: usize,
    edges: BTreeSet<(usize, usize)>,
}

/// One-step and transitive relations of a node.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NodeRelations {
    pub children: BTreeSet<usize>,
    pub parents: BTreeSet<usize>,
    pub descendants: BTreeSet<usize>,
    pub ancestors: BTreeSet<usize>,
}

impl Dag {
    pub fn empty(q: usize) -> Self {
        Dag { q, edges: BTreeSet::new() }
    }

    /// Builds a DAG from 0-based `(parent, child)` pairs.
    pub fn new(q: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (j, i) in edges {
            if j >= q {
                return Err(LcdError::NodeOutOfRange { node: j, q });
            }
            if i >= q {
                return Err(LcdError::NodeOutOfRange { node: i, q });
            }
            if i == j {
                return Err(LcdError::InvalidInput(format!("self-loop on node {}", j + 1)));
            }
            if !set.insert((j, i)) {
                return Err(LcdError::InvalidInput(format!("duplicate edge {} -> {}", j + 1, i + 1)));
            }
        }
        let dag = Dag { q, edges: set };
        dag.topological_order()?;
        Ok(dag)
    }

    /// Builds a DAG from 1-based `(parent, child)` pairs.
    pub fn from_labeled(q: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut zero_based = Vec::with_capacity(edges.len());
        for &(j, i) in edges {
            if j == 0 || i == 0 {
                return Err(LcdError::NodeOutOfRange { node: 0, q });
            }
            zero_based.push((j - 1, i - 1));
        }
        Dag::new(q, zero_based)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    /// 1-based edge list, as used in the JSON formats.
    pub fn labeled_edges(&self) -> Vec<[usize; 2]> {
        self.edges.iter().map(|&(j, i)| [j + 1, i + 1]).collect()
    }

    fn check_node(&self, j: usize) -> Result<()> {
        if j < self.q {
            Ok(())
        } else {
            Err(LcdError::NodeOutOfRange { node: j, q: self.q })
        }
    }

    pub fn children(&self, j: usize) -> BTreeSet<usize> {
        self.edges.iter().filter(|e| e.0 == j).map(|e| e.1).collect()
    }

    pub fn parents(&self, i: usize) -> BTreeSet<usize> {
        self.edges.iter().filter(|e| e.1 == i).map(|e| e.0).collect()
    }

    fn reach(&self, start: usize, forward: bool) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            let next = if forward { self.children(v) } else { self.parents(v) };
            for w in next {
                if seen.insert(w) {
                    stack.push(w);
                }
            }
        }
        seen
    }

    /// Nodes reachable from `j` by a nonempty directed path.
    pub fn descendants(&self, j: usize) -> BTreeSet<usize> {
        self.reach(j, true)
    }

    pub fn ancestors(&self, j: usize) -> BTreeSet<usize> {
        self.reach(j, false)
    }

    pub fn relations(&self, j: usize) -> Result<NodeRelations> {
        self.check_node(j)?;
        Ok(NodeRelations {
            children: self.children(j),
            parents: self.parents(j),
            descendants: self.descendants(j),
            ancestors: self.ancestors(j),
        })
    }

    /// Kahn's algorithm; errors on a directed cycle.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let mut indeg = vec![0usize; self.q];
        for &(_, i) in &self.edges {
            indeg[i] += 1;
        }
        let mut ready: Vec<usize> = (0..self.q).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(self.q);
        while let Some(v) = ready.pop() {
            order.push(v);
            for w in self.children(v) {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    ready.push(w);
                }
            }
        }
        if order.len() == self.q {
            Ok(order)
        } else {
            Err(LcdError::Cyclic)
        }
    }

    pub fn transitive_closure(&self) -> Dag {
        let mut edges = BTreeSet::new();
        for j in 0..self.q {
            for i in self.descendants(j) {
                edges.insert((j, i));
            }
        }
        Dag { q: self.q, edges }
    }

    /// Every DAG on the same labels whose transitive closure equals that of `self`.
    ///
    /// Closure edges not implied by any two-step path through the closure are
    /// mandatory; the remaining ones are toggled.
    pub fn same_closure_dags(&self, cap: usize) -> Result<Vec<Dag>> {
        if self.q > cap {
            return Err(LcdError::CapExceeded { q: self.q, cap });
        }
        let closure = self.transitive_closure();
        let (mandatory, optional): (Vec<_>, Vec<_>) = closure.edges.iter().copied().partition(|&(j, i)| {
            !(0..self.q).any(|m| closure.has_edge(j, m) && closure.has_edge(m, i))
        });
        if optional.len() > 24 {
            return Err(LcdError::CapExceeded { q: self.q, cap });
        }
        let mut out = Vec::new();
        for mask in 0u32..(1u32 << optional.len()) {
            let mut edges: BTreeSet<(usize, usize)> = mandatory.iter().copied().collect();
            for (bit, &e) in optional.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    edges.insert(e);
                }
            }
            let candidate = Dag { q: self.q, edges };
            if candidate.transitive_closure() == closure {
                out.push(candidate);
            }
        }
        out.sort_by_key(|d| (d.edge_count(), d.edges.iter().copied().collect::<Vec<_>>()));
        Ok(out)
    }

    /// Edge-set distance: +1 per missing or spurious edge, +2 per reversed edge.
    pub fn structural_error(truth: &Dag, estimate: &Dag) -> Result<usize> {
        if truth.q != estimate.q {
            return Err(LcdError::ShapeMismatch(format!(
                "graphs on {} and {} nodes",
                truth.q, estimate.q
            )));
        }
        let mut err = 0;
        for a in 0..truth.q {
            for b in (a + 1)..truth.q {
                let t = (truth.has_edge(a, b), truth.has_edge(b, a));
                let e = (estimate.has_edge(a, b), estimate.has_edge(b, a));
                err += match (t, e) {
                    (x, y) if x == y => 0,
                    ((true, false), (false, true)) | ((false, true), (true, false)) => 2,
                    _ => 1,
                };
            }
        }
        Ok(err)
    }

    /// Random DAG with edges `j → i` only for `j > i`, each kept with probability `rho`.
    pub fn sample<R: Rng + ?Sized>(q: usize, rho: f64, rng: &mut R) -> Result<Dag> {
        if q == 0 {
            return Err(LcdError::InvalidInput("q must be positive".into()));
        }
        if !(0.0..=1.0).contains(&rho) {
            return Err(LcdError::InvalidInput(format!("edge density {rho} outside [0, 1]")));
        }
        let mut edges = BTreeSet::new();
        for j in 0..q {
            for i in 0..j {
                if rng.random::<f64>() < rho {
                    edges.insert((j, i));
                }
            }
        }
        Ok(Dag { q, edges })
    }

    /// Parses `"3->2,2->1"` or one `j -> i` per line (1-based labels).
    ///
    /// The node count is the largest label, unless `q` is given.
    pub fn parse(text: &str, q: Option<usize>) -> Result<Dag> {
        let mut pairs = Vec::new();
        for part in text.split([',', '\n', ';']) {
            let part = part.trim();
            if part.is_empty() || part.starts_with('#') {
                continue;
            }
            let (a, b) = part
                .split_once("->")
                .ok_or_else(|| LcdError::Parse(format!("expected `j -> i`, got `{part}`")))?;
            let j: usize = a.trim().parse().map_err(|_| LcdError::Parse(format!("bad node `{}`", a.trim())))?;
            let i: usize = b.trim().parse().map_err(|_| LcdError::Parse(format!("bad node `{}`", b.trim())))?;
            pairs.push((j, i));
        }
        let max_label = pairs.iter().map(|&(j, i)| j.max(i)).max().unwrap_or(0);
        let q = q.unwrap_or(max_label);
        Dag::from_labeled(q, &pairs)
    }

    /// One `j -> i` per line.
    pub fn to_text(&self) -> String {
        self.edges.iter().map(|&(j, i)| format!("{} -> {}\n", j + 1, i + 1)).collect()
    }
}

impl fmt::Display for Dag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.edges.is_empty() {
            return write!(f, "(empty on {} nodes)", self.q);
        }
        // Highest parent first reads naturally for the canonical labeling.
        let mut edges: Vec<_> = self.edges.iter().copied().collect();
        edges.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)));
        let parts: Vec<String> = edges.iter().map(|&(j, i)| format!("{}->{}", j + 1, i + 1)).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Serialized form: `{"q": .., "edges": [[j, i], ...]}` with 1-based labels.
#[derive(Serialize, Deserialize)]
struct DagRepr {
    q: usize,
    edges: Vec<[usize; 2]>,
}

impl Serialize for Dag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DagRepr { q: self.q, edges: self.labeled_edges() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Dag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = DagRepr::deserialize(d)?;
        let pairs: Vec<(usize, usize)> = r.edges.iter().map(|e| (e[0], e[1])).collect();
        Dag::from_labeled(r.q, &pairs).map_err(serde::de::Error::custom)
    }
}
