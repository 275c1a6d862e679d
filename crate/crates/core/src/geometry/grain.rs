use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::subspace::GrainBasis;
use super::tube::{tubes_intersect, RepresentationField};
use crate::error::Result;

/// Token → grain map. Grain ids are numbered in order of each grain's first token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrainAssignment {
    pub grain_of: Vec<usize>,
    pub n_grains: usize,
    pub subspaces: Option<Vec<GrainBasis>>,
}

impl GrainAssignment {
    /// Relabels an arbitrary labelling canonically.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut map = BTreeMap::new();
        let mut grain_of = Vec::with_capacity(labels.len());
        for &l in labels {
            let next = map.len();
            grain_of.push(*map.entry(l).or_insert(next));
        }
        Self {
            grain_of,
            n_grains: map.len(),
            subspaces: None,
        }
    }

    pub fn members(&self, grain: usize) -> Vec<usize> {
        self.grain_of
            .iter()
            .enumerate()
            .filter(|(_, &g)| g == grain)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_grains];
        for &g in &self.grain_of {
            s[g] += 1;
        }
        s
    }

    /// `{"assignment": {token: grain}, "n_grains": m, "basis_dims": [...]}`.
    pub fn to_json(&self) -> serde_json::Value {
        let assignment: serde_json::Map<String, serde_json::Value> = self
            .grain_of
            .iter()
            .enumerate()
            .map(|(i, g)| (i.to_string(), serde_json::Value::from(*g)))
            .collect();
        let dims: Vec<usize> = self
            .subspaces
            .as_ref()
            .map(|s| s.iter().map(|b| b.rank).collect())
            .unwrap_or_default();
        serde_json::json!({
            "assignment": assignment,
            "n_grains": self.n_grains,
            "basis_dims": dims,
        })
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Connected components of the tube intersection graph.
pub fn grain_decompose(field: &RepresentationField) -> Result<GrainAssignment> {
    let n = field.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if uf.find(i) != uf.find(j) && tubes_intersect(&field.tubes[i], &field.tubes[j])? {
                uf.union(i, j);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    Ok(GrainAssignment::from_labels(&roots))
}
