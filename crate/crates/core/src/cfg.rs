//! Control-flow graph over basic blocks, plus Brandes betweenness
//! centrality (directed, unweighted, unnormalized) for the ACFG features.

use crate::asm::{AsmError, FunctionUnit};
use std::collections::{BTreeMap, VecDeque};

/// Edge list and successor/predecessor maps for one function.
///
/// Edge order is deterministic: source blocks in order, taken edge before
/// fallthrough.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cfg {
    pub edges: Vec<(usize, usize)>,
    pub succs: Vec<Vec<usize>>,
    pub preds: Vec<Vec<usize>>,
    labels: BTreeMap<String, usize>,
}

impl Cfg {
    pub fn build(f: &FunctionUnit) -> Result<Cfg, AsmError> {
        let n = f.blocks.len();
        let edges = f.edges()?;
        let mut succs = vec![Vec::new(); n];
        let mut preds = vec![Vec::new(); n];
        for &(s, t) in &edges {
            succs[s].push(t);
            preds[t].push(s);
        }
        let labels = f
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (b.label.clone(), i))
            .collect();
        Ok(Cfg {
            edges,
            succs,
            preds,
            labels,
        })
    }

    pub fn block_count(&self) -> usize {
        self.succs.len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.get(label).copied()
    }

    pub fn out_degree(&self, block: usize) -> usize {
        self.succs[block].len()
    }
}

/// Brandes' algorithm for directed unweighted graphs; endpoints excluded,
/// no normalization. Input is the successor list per node.
pub fn betweenness(succs: &[Vec<usize>]) -> Vec<f64> {
    let n = succs.len();
    let mut centrality = vec![0.0; n];
    if n <= 2 {
        return centrality;
    }
    for source in 0..n {
        let mut stack = Vec::with_capacity(n);
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut sigma = vec![0.0f64; n];
        let mut dist = vec![-1i64; n];
        sigma[source] = 1.0;
        dist[source] = 0;
        let mut queue = VecDeque::new();
        queue.push_back(source);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in &succs[v] {
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        let mut delta = vec![0.0f64; n];
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != source {
                centrality[w] += delta[w];
            }
        }
    }
    centrality
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse_function;

    #[test]
    fn straight_line_has_no_edges() {
        let f = parse_function("fn f:\nentry:\n  nop\n  ret\n").unwrap();
        let cfg = Cfg::build(&f).unwrap();
        assert!(cfg.edges.is_empty());
    }

    #[test]
    fn diamond_has_four_edges() {
        let src = "fn f:\nentry:\n  cmp r0, 0\n  je right\nleft:\n  jmp join\nright:\n  nop\njoin:\n  ret\n";
        let f = parse_function(src).unwrap();
        let cfg = Cfg::build(&f).unwrap();
        assert_eq!(cfg.edges.len(), 4);
        assert_eq!(cfg.succs[0], vec![2, 1]); // taken before fallthrough
        assert_eq!(cfg.preds[3], vec![1, 2]);
    }

    #[test]
    fn loop_back_edge_and_header_preds() {
        let src = "fn f:\nentry:\n  mov r1, 0\nhead:\n  add r1, 1\n  cmp r1, 3\n  jne head\nexit:\n  ret\n";
        let f = parse_function(src).unwrap();
        let cfg = Cfg::build(&f).unwrap();
        let head = cfg.index_of("head").unwrap();
        assert!(cfg.edges.contains(&(head, head)));
        assert_eq!(cfg.preds[head].len(), 2);
    }

    /// Brute-force betweenness: enumerate all shortest paths per pair via
    /// BFS path counting, which is an independent restatement of the
    /// definition.
    fn brute_force(succs: &[Vec<usize>]) -> Vec<f64> {
        let n = succs.len();
        let mut score = vec![0.0; n];
        for s in 0..n {
            for t in 0..n {
                if s == t {
                    continue;
                }
                let paths = all_shortest_paths(succs, s, t);
                if paths.is_empty() {
                    continue;
                }
                let total = paths.len() as f64;
                for v in 0..n {
                    if v == s || v == t {
                        continue;
                    }
                    let through = paths.iter().filter(|p| p.contains(&v)).count() as f64;
                    score[v] += through / total;
                }
            }
        }
        score
    }

    fn all_shortest_paths(succs: &[Vec<usize>], s: usize, t: usize) -> Vec<Vec<usize>> {
        // BFS distance, then DFS enumeration restricted to distance-increasing edges.
        let n = succs.len();
        let mut dist = vec![usize::MAX; n];
        dist[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            for &w in &succs[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    q.push_back(w);
                }
            }
        }
        if dist[t] == usize::MAX {
            return Vec::new();
        }
        let mut paths = Vec::new();
        let mut path = vec![s];
        dfs(succs, &dist, t, &mut path, &mut paths);
        paths
    }

    fn dfs(
        succs: &[Vec<usize>],
        dist: &[usize],
        t: usize,
        path: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        let v = *path.last().unwrap();
        if v == t {
            out.push(path.clone());
            return;
        }
        for &w in &succs[v] {
            if dist[w] == dist[v] + 1 {
                path.push(w);
                dfs(succs, dist, t, path, out);
                path.pop();
            }
        }
    }

    #[test]
    fn brandes_matches_brute_force_on_small_graphs() {
        let graphs: Vec<Vec<Vec<usize>>> = vec![
            vec![vec![1], vec![2], vec![]],
            vec![vec![1, 2], vec![3], vec![3], vec![]],
            vec![vec![1], vec![2, 3], vec![4], vec![4], vec![5], vec![1]],
            vec![vec![1, 2], vec![3, 4], vec![4], vec![5], vec![5], vec![]],
        ];
        for succs in graphs {
            let fast = betweenness(&succs);
            let slow = brute_force(&succs);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-9, "{fast:?} vs {slow:?}");
            }
        }
    }

    #[test]
    fn brandes_exhaustive_random_graphs_up_to_eight_nodes() {
        // Seeded sweep over random digraphs with <= 8 nodes.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(42);
        for _ in 0..60 {
            let n = rng.gen_range(1..=8usize);
            let mut succs = vec![Vec::new(); n];
            for s in 0..n {
                for t in 0..n {
                    if s != t && rng.gen_bool(0.3) {
                        succs[s].push(t);
                    }
                }
            }
            let fast = betweenness(&succs);
            let slow = brute_force(&succs);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
