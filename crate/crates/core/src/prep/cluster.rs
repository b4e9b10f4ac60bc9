//! Segmenting an unordered point set into ordered strokes.

use std::collections::{HashMap, VecDeque};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geom::{centroid, Point};

/// Neighbors per point in the spectral affinity graph.
pub const SPECTRAL_NEIGHBORS: usize = 8;

const KMEANS_MAX_ITERS: usize = 300;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ClusterMethod {
    /// Pixel-lattice connectivity, split at branch points.
    #[default]
    #[serde(rename = "components")]
    Components,
    /// k-NN affinity graph, spectral embedding and k-means.
    #[serde(rename = "spectral")]
    Spectral,
}

impl std::str::FromStr for ClusterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "components" => Ok(ClusterMethod::Components),
            "spectral" => Ok(ClusterMethod::Spectral),
            other => Err(Error::invalid(format!(
                "unknown cluster method {other:?}, expected components or spectral"
            ))),
        }
    }
}

/// Partitions `points` into ordered polylines. Every input point appears in
/// exactly one output stroke; strokes are sorted by their leftmost point.
pub fn cluster_strokes(
    points: &[Point],
    method: ClusterMethod,
    k_hint: usize,
) -> Result<Vec<Vec<Point>>> {
    if points.is_empty() {
        return Err(Error::invalid("cannot cluster an empty point set"));
    }
    let groups = match method {
        ClusterMethod::Components => component_paths(points),
        ClusterMethod::Spectral => {
            if k_hint < 1 {
                return Err(Error::invalid("spectral clustering needs k_hint >= 1"));
            }
            spectral_groups(points, k_hint)
                .into_iter()
                .map(|g| chain_nearest(points, &g))
                .collect()
        }
    };
    let mut strokes: Vec<Vec<Point>> = groups
        .into_iter()
        .filter(|g| !g.is_empty())
        .map(|g| g.into_iter().map(|i| points[i]).collect())
        .collect();
    strokes.sort_by(|a, b| {
        let la = leftmost(a);
        let lb = leftmost(b);
        la.x.total_cmp(&lb.x).then(la.y.total_cmp(&lb.y))
    });
    Ok(strokes)
}

fn leftmost(stroke: &[Point]) -> Point {
    stroke
        .iter()
        .copied()
        .min_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)))
        .expect("non-empty stroke")
}

type Cell = (i64, i64);

/// Points binned to unit lattice cells with m-adjacency between cells:
/// 8-connected, except diagonal links already covered by a shared
/// 4-neighbor.
struct Lattice {
    keys: Vec<Cell>,
    members: Vec<Vec<usize>>,
    adj: Vec<Vec<usize>>,
}

impl Lattice {
    fn build(points: &[Point]) -> Self {
        let mut index: HashMap<Cell, usize> = HashMap::new();
        let mut keys = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        for (i, p) in points.iter().enumerate() {
            let key = (p.x.floor() as i64, p.y.floor() as i64);
            let id = *index.entry(key).or_insert_with(|| {
                keys.push(key);
                members.push(Vec::new());
                keys.len() - 1
            });
            members[id].push(i);
        }
        let adj = keys
            .iter()
            .map(|&(x, y)| {
                let mut out = Vec::new();
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let Some(&n) = index.get(&(x + dx, y + dy)) else {
                            continue;
                        };
                        if dx != 0
                            && dy != 0
                            && (index.contains_key(&(x + dx, y)) || index.contains_key(&(x, y + dy)))
                        {
                            continue;
                        }
                        out.push(n);
                    }
                }
                out.sort_unstable();
                out
            })
            .collect();
        Lattice { keys, members, adj }
    }

    fn len(&self) -> usize {
        self.keys.len()
    }
}

/// Branch-point decomposition of the lattice graph into cell paths,
/// returned as point-index sequences.
fn component_paths(points: &[Point]) -> Vec<Vec<usize>> {
    let lat = Lattice::build(points);
    let n = lat.len();
    let branch: Vec<bool> = lat.adj.iter().map(|a| a.len() >= 3).collect();

    // Chains: components of the graph restricted to non-branch cells, each of
    // which is a simple path or a cycle.
    let mut chain_of = vec![usize::MAX; n];
    let mut chains: Vec<Vec<usize>> = Vec::new();
    let sub_adj = |c: usize| -> Vec<usize> {
        lat.adj[c].iter().copied().filter(|&m| !branch[m]).collect()
    };
    for seed in 0..n {
        if branch[seed] || chain_of[seed] != usize::MAX {
            continue;
        }
        let comp = bfs(seed, sub_adj);
        let by_key = |a: &usize, b: &usize| lat.keys[*a].cmp(&lat.keys[*b]);
        let start = comp
            .iter()
            .copied()
            .filter(|&c| sub_adj(c).len() <= 1)
            .min_by(by_key)
            .unwrap_or_else(|| comp.iter().copied().min_by(by_key).unwrap());
        let mut path = vec![start];
        let mut prev = usize::MAX;
        let mut cur = start;
        chain_of[start] = chains.len();
        loop {
            let mut next: Vec<usize> = sub_adj(cur)
                .into_iter()
                .filter(|&m| m != prev && chain_of[m] == usize::MAX)
                .collect();
            next.sort_by(|a, b| lat.keys[*a].cmp(&lat.keys[*b]));
            let Some(&m) = next.first() else { break };
            chain_of[m] = chains.len();
            path.push(m);
            prev = cur;
            cur = m;
        }
        chains.push(path);
    }

    // Junctions: connected groups of branch cells, each merged into its
    // largest adjacent chain or emitted on its own.
    let mut seen = vec![false; n];
    for seed in 0..n {
        if !branch[seed] || seen[seed] {
            continue;
        }
        let junction = bfs(seed, |c| {
            lat.adj[c].iter().copied().filter(|&m| branch[m]).collect()
        });
        for &c in &junction {
            seen[c] = true;
        }
        let touches = |cell: usize| junction.iter().any(|j| lat.adj[*j].contains(&cell));
        let host = junction
            .iter()
            .flat_map(|&j| lat.adj[j].iter().copied())
            .filter(|&m| !branch[m])
            .map(|m| chain_of[m])
            .max_by(|&a, &b| chains[a].len().cmp(&chains[b].len()).then(b.cmp(&a)));
        match host {
            Some(h) => {
                let chain = &mut chains[h];
                let last = *chain.last().unwrap();
                if touches(last) {
                    let ordered = chain_cells_from(&lat, &junction, last);
                    chain.extend(ordered);
                } else {
                    let first = chain[0];
                    let mut ordered = chain_cells_from(&lat, &junction, first);
                    ordered.reverse();
                    ordered.append(chain);
                    *chain = ordered;
                }
            }
            None => {
                let start = *junction
                    .iter()
                    .min_by(|a, b| lat.keys[**a].cmp(&lat.keys[**b]))
                    .unwrap();
                let mut ordered = vec![start];
                ordered.extend(chain_cells_from(
                    &lat,
                    &junction.iter().copied().filter(|&c| c != start).collect::<Vec<_>>(),
                    start,
                ));
                chains.push(ordered);
            }
        }
    }

    chains
        .into_iter()
        .map(|cells| {
            cells
                .into_iter()
                .flat_map(|c| lat.members[c].iter().copied())
                .collect()
        })
        .collect()
}

/// Orders `cells` by greedy nearest-neighbor chaining from `anchor`, which is
/// not itself included.
fn chain_cells_from(lat: &Lattice, cells: &[usize], anchor: usize) -> Vec<usize> {
    let dist = |a: usize, b: usize| {
        let (ka, kb) = (lat.keys[a], lat.keys[b]);
        let (dx, dy) = ((ka.0 - kb.0) as f64, (ka.1 - kb.1) as f64);
        dx * dx + dy * dy
    };
    let mut left: Vec<usize> = cells.to_vec();
    let mut out = Vec::with_capacity(left.len());
    let mut cur = anchor;
    while !left.is_empty() {
        let (pos, _) = left
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| {
                dist(cur, a)
                    .total_cmp(&dist(cur, b))
                    .then(lat.keys[a].cmp(&lat.keys[b]))
            })
            .unwrap();
        cur = left.swap_remove(pos);
        out.push(cur);
    }
    out
}

fn bfs(seed: usize, neighbors: impl Fn(usize) -> Vec<usize>) -> Vec<usize> {
    let mut seen = std::collections::HashSet::from([seed]);
    let mut queue = VecDeque::from([seed]);
    let mut out = Vec::new();
    while let Some(c) = queue.pop_front() {
        out.push(c);
        for m in neighbors(c) {
            if seen.insert(m) {
                queue.push_back(m);
            }
        }
    }
    out
}

/// Greedy nearest-neighbor ordering of `group`, starting from the point
/// farthest from the group centroid.
fn chain_nearest(points: &[Point], group: &[usize]) -> Vec<usize> {
    if group.len() <= 1 {
        return group.to_vec();
    }
    let members: Vec<Point> = group.iter().map(|&i| points[i]).collect();
    let c = centroid(&members).unwrap();
    let start = group
        .iter()
        .copied()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            points[*a]
                .dist(c)
                .total_cmp(&points[*b].dist(c))
                .then(ib.cmp(ia))
        })
        .map(|(_, i)| i)
        .unwrap();
    let mut left: Vec<usize> = group.iter().copied().filter(|&i| i != start).collect();
    let mut out = vec![start];
    let mut cur = start;
    while !left.is_empty() {
        let (pos, _) = left
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| {
                points[cur]
                    .dist(points[a])
                    .total_cmp(&points[cur].dist(points[b]))
                    .then(a.cmp(&b))
            })
            .unwrap();
        cur = left.remove(pos);
        out.push(cur);
    }
    out
}

/// Normalized spectral clustering (row-normalized top-k eigenvectors of
/// `D^{-1/2} W D^{-1/2}`, then k-means). Returns point-index groups.
fn spectral_groups(points: &[Point], k_hint: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    let k = k_hint.min(n);
    if k == 1 || n == 1 {
        return vec![(0..n).collect()];
    }
    let nn = SPECTRAL_NEIGHBORS.min(n - 1);

    let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(n * nn);
    for i in 0..n {
        let mut by_dist: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (points[i].dist(points[j]), j))
            .collect();
        by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        edges.extend(by_dist.into_iter().take(nn).map(|(d, j)| (i, j, d)));
    }
    let mut lengths: Vec<f64> = edges.iter().map(|e| e.2).collect();
    lengths.sort_by(f64::total_cmp);
    let median = lengths[lengths.len() / 2];
    let sigma = if median > 0.0 { median } else { 1.0 };

    let mut w = DMatrix::<f64>::zeros(n, n);
    for (i, j, d) in edges {
        let a = (-(d * d) / (2.0 * sigma * sigma)).exp();
        w[(i, j)] = a;
        w[(j, i)] = a;
    }
    let deg: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let normalized = DMatrix::from_fn(n, n, |i, j| w[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    let eig = normalized.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let embedding: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row: Vec<f64> = order[..k].iter().map(|&c| eig.eigenvectors[(i, c)]).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.into_iter().map(|v| v / norm).collect()
            } else {
                row
            }
        })
        .collect();

    let labels = kmeans(&embedding, k);
    let mut groups = vec![Vec::new(); k];
    for (i, l) in labels.into_iter().enumerate() {
        groups[l].push(i);
    }
    groups.retain(|g| !g.is_empty());
    groups
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd iterations with deterministic farthest-point seeding.
fn kmeans(rows: &[Vec<f64>], k: usize) -> Vec<usize> {
    let mut centers = vec![rows[0].clone()];
    while centers.len() < k {
        let far = (0..rows.len())
            .max_by(|&a, &b| {
                let da = centers.iter().map(|c| sq_dist(&rows[a], c)).fold(f64::INFINITY, f64::min);
                let db = centers.iter().map(|c| sq_dist(&rows[b], c)).fold(f64::INFINITY, f64::min);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .unwrap();
        centers.push(rows[far].clone());
    }

    let dim = rows[0].len();
    let mut labels = vec![usize::MAX; rows.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, row) in rows.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(row, &centers[a]).total_cmp(&sq_dist(row, &centers[b])))
                .unwrap();
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let mut sum = vec![0.0; dim];
            let mut count = 0usize;
            for (row, _) in rows.iter().zip(&labels).filter(|(_, &l)| l == c) {
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += v;
                }
                count += 1;
            }
            if count > 0 {
                *center = sum.into_iter().map(|s| s / count as f64).collect();
            }
        }
    }
    labels
}
