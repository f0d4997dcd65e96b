use std::collections::HashMap;

use super::{Mesh, VertexOrigin};
use crate::error::{Error, Result};

/// Maximum number of closure sweeps before refinement is declared failed.
pub const DEFAULT_CLOSURE_DEPTH: usize = 50;

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

const TET_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

impl Mesh {
    /// Newest-vertex bisection of the marked tetrahedra followed by the
    /// conforming closure.
    pub fn bisect(&self, marked: &[usize]) -> Result<Mesh> {
        self.bisect_with_depth(marked, DEFAULT_CLOSURE_DEPTH)
    }

    pub fn bisect_with_depth(&self, marked: &[usize], max_depth: usize) -> Result<Mesh> {
        if marked.is_empty() {
            return Ok(self.clone());
        }
        let mut mesh = self.clone();
        mesh.level += 1;
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();

        let mut flagged = vec![false; mesh.n_tets()];
        for &t in marked {
            if t >= flagged.len() {
                return Err(Error::DimensionMismatch {
                    expected: format!("tet index < {}", flagged.len()),
                    found: t.to_string(),
                });
            }
            flagged[t] = true;
        }

        let mut sweeps = 0;
        loop {
            if sweeps >= max_depth {
                return Err(Error::RefinementFailure { depth: max_depth });
            }
            sweeps += 1;
            let n_before = mesh.tets.len();
            let mut new_tets = Vec::with_capacity(n_before + flagged.iter().filter(|&&f| f).count());
            let mut new_tags = Vec::with_capacity(new_tets.capacity());
            for t in 0..n_before {
                if !flagged[t] {
                    new_tets.push(mesh.tets[t]);
                    new_tags.push(mesh.tags[t]);
                    continue;
                }
                let tet = mesh.tets[t];
                let k = mesh.tags[t] as usize;
                let z = mesh.midpoint(&mut midpoints, tet[0], tet[k]);
                let next_tag = if k > 1 { k as u8 - 1 } else { 3 };

                let mut first = tet;
                first[k] = z;
                let mut second = [0usize; 4];
                second[..k].copy_from_slice(&tet[1..=k]);
                second[k] = z;
                second[k + 1..].copy_from_slice(&tet[k + 1..]);

                new_tets.push(first);
                new_tags.push(next_tag);
                new_tets.push(second);
                new_tags.push(next_tag);
            }
            mesh.tets = new_tets;
            mesh.tags = new_tags;

            // closure: any tet that still owns a bisected edge has a hanging vertex
            flagged = mesh
                .tets
                .iter()
                .map(|tet| {
                    TET_EDGES
                        .iter()
                        .any(|&(a, b)| midpoints.contains_key(&edge_key(tet[a], tet[b])))
                })
                .collect();
            if !flagged.iter().any(|&f| f) {
                break;
            }
        }
        Ok(mesh)
    }

    fn midpoint(&mut self, cache: &mut HashMap<(usize, usize), usize>, a: usize, b: usize) -> usize {
        let key = edge_key(a, b);
        if let Some(&m) = cache.get(&key) {
            return m;
        }
        let p = (self.vertices[a] + self.vertices[b]) * 0.5;
        let id = self.vertices.len();
        let on_boundary = self.on_boundary(&p);
        self.vertices.push(p);
        self.boundary.push(on_boundary);
        self.origins.push(VertexOrigin::Midpoint(key.0, key.1));
        cache.insert(key, id);
        id
    }
}
