use nwfpp::nwgraph::WeightedGraph;

/// Shortest path weight and hopcount by enumerating simple paths. Weights are
/// summed from `u` outward, as Dijkstra does.
pub fn brute_force(g: &WeightedGraph, u: usize, v: usize) -> (f64, u32) {
    fn go(g: &WeightedGraph, x: usize, v: usize, w: f64, h: u32, seen: &mut Vec<bool>, best: &mut (f64, u32)) {
        if x == v {
            if w < best.0 {
                *best = (w, h);
            }
            return;
        }
        for inc in g.neighbors(x) {
            let y = inc.to as usize;
            if !seen[y] {
                seen[y] = true;
                go(g, y, v, w + inc.weight, h + 1, seen, best);
                seen[y] = false;
            }
        }
    }
    let mut seen = vec![false; g.n()];
    seen[u] = true;
    let mut best = (f64::INFINITY, 0);
    go(g, u, v, 0.0, 0, &mut seen, &mut best);
    best
}
