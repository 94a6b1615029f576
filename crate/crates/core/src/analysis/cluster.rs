use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView1;
use rayon::prelude::*;
use serde_json::{json, Value};

use super::LabelVectorSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Linkage {
    #[default]
    Average,
    Single,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Distance {
    /// `1 - cos(a, b)`; rows of zero norm sit at distance 1 from everything.
    #[default]
    Cosine,
    Euclidean,
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "average" => Ok(Linkage::Average),
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            other => Err(Error::InvalidConfig(format!("unknown linkage `{other}`"))),
        }
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Linkage::Average => "average",
            Linkage::Single => "single",
            Linkage::Complete => "complete",
        })
    }
}

impl FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cosine" => Ok(Distance::Cosine),
            "euclidean" => Ok(Distance::Euclidean),
            other => Err(Error::InvalidConfig(format!("unknown distance `{other}`"))),
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distance::Cosine => "cosine",
            Distance::Euclidean => "euclidean",
        })
    }
}

impl Distance {
    fn between(self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        if a == b {
            return 0.0;
        }
        match self {
            Distance::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Distance::Cosine => {
                let denom = a.dot(&a).sqrt() * b.dot(&b).sqrt();
                let cos = if denom == 0.0 { 0.0 } else { a.dot(&b) / denom };
                (1.0 - cos).max(0.0)
            }
        }
    }
}

/// One agglomeration step. Node ids `0..n` are leaves; merge `i` creates
/// node `n + i`. `left` is the child holding the smaller leaf index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

/// A binary merge tree over labelled leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    names: Vec<String>,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn n_leaves(&self) -> usize {
        self.names.len()
    }

    pub fn root(&self) -> Option<usize> {
        match self.names.len() {
            0 => None,
            n => Some(2 * n - 2),
        }
    }

    pub fn height(&self, node: usize) -> f64 {
        if node < self.n_leaves() {
            0.0
        } else {
            self.merges[node - self.n_leaves()].height
        }
    }

    pub fn children(&self, node: usize) -> Option<(usize, usize)> {
        (node >= self.n_leaves()).then(|| {
            let m = &self.merges[node - self.n_leaves()];
            (m.left, m.right)
        })
    }

    /// Leaves in drawing order, left subtrees first.
    pub fn leaf_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.n_leaves());
        let mut stack: Vec<usize> = self.root().into_iter().collect();
        while let Some(node) = stack.pop() {
            match self.children(node) {
                Some((l, r)) => {
                    stack.push(r);
                    stack.push(l);
                }
                None => order.push(node),
            }
        }
        order
    }

    /// Flat cluster id per leaf after undoing the last `k - 1` merges.
    /// Clusters are numbered by their smallest leaf index.
    pub fn cut(&self, k: usize) -> Vec<usize> {
        let n = self.n_leaves();
        let k = k.clamp(1.min(n), n);
        self.assign(n - k)
    }

    /// Flat cluster id per leaf, joining only merges at or below `height`.
    pub fn cut_at_height(&self, height: f64) -> Vec<usize> {
        let applied = self.merges.iter().take_while(|m| m.height <= height).count();
        self.assign(applied)
    }

    fn assign(&self, applied: usize) -> Vec<usize> {
        let n = self.n_leaves();
        // union-find over node ids
        let mut parent: Vec<usize> = (0..n + applied).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (i, m) in self.merges.iter().take(applied).enumerate() {
            parent[m.left] = n + i;
            parent[m.right] = n + i;
        }
        let mut label_of_root = std::collections::HashMap::new();
        (0..n)
            .map(|leaf| {
                let r = find(&mut parent, leaf);
                let next = label_of_root.len();
                *label_of_root.entry(r).or_insert(next)
            })
            .collect()
    }

    /// Nested `{name, height, children}` form.
    pub fn to_json(&self) -> Value {
        fn node(d: &Dendrogram, id: usize) -> Value {
            match d.children(id) {
                None => json!({ "name": d.names[id], "height": 0.0 }),
                Some((l, r)) => json!({
                    "name": format!("node{id}"),
                    "height": d.height(id),
                    "children": [node(d, l), node(d, r)],
                }),
            }
        }
        self.root().map_or(Value::Null, |r| node(self, r))
    }
}

/// Agglomerative clustering of the set's rows.
///
/// Each step merges the closest pair of clusters; equal distances go to the
/// pair with the smallest (lower, higher) leaf indices.
pub fn agglomerate(set: &LabelVectorSet, linkage: Linkage, distance: Distance) -> Dendrogram {
    let n = set.len();
    let rows = set.matrix();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| distance.between(rows.row(i), rows.row(j))).collect())
        .collect();
    let mut dist = vec![vec![0.0; n]; n];
    for (i, row) in upper.iter().enumerate() {
        for (k, &d) in row.iter().enumerate() {
            dist[i][i + 1 + k] = d;
            dist[i + 1 + k][i] = d;
        }
    }

    // slot i holds the cluster whose smallest leaf is i
    let mut active: Vec<usize> = (0..n).collect();
    let mut node = (0..n).collect::<Vec<_>>();
    let mut size = vec![1usize; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    while active.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for (ai, &a) in active.iter().enumerate() {
            for &b in &active[ai + 1..] {
                if dist[a][b] < best.0 {
                    best = (dist[a][b], a, b);
                }
            }
        }
        let (height, a, b) = best;
        merges.push(Merge {
            left: node[a],
            right: node[b],
            height,
            size: size[a] + size[b],
        });

        for &k in active.iter().filter(|&&k| k != a && k != b) {
            let (da, db) = (dist[k][a], dist[k][b]);
            let d = match linkage {
                Linkage::Single => da.min(db),
                Linkage::Complete => da.max(db),
                Linkage::Average => {
                    // written as min + non-negative step so rounding never
                    // drops below either input
                    let (lo, hi, w_hi) = if da <= db {
                        (da, db, size[b])
                    } else {
                        (db, da, size[a])
                    };
                    lo + (hi - lo) * w_hi as f64 / (size[a] + size[b]) as f64
                }
            };
            dist[k][a] = d;
            dist[a][k] = d;
        }
        size[a] += size[b];
        node[a] = n + merges.len() - 1;
        active.retain(|&k| k != b);
    }

    Dendrogram {
        names: set.names().to_vec(),
        merges,
    }
}
