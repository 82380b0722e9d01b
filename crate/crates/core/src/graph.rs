//! Bipartite address/torrent graph, co-occurrence projections, edge and
//! flag filters, and exact centrality.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::net::Ipv4Addr;
use std::path::Path;

use thiserror::Error;

use crate::magnet::InfoHash;
use crate::store::Store;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("no links pass the filter")]
    EmptyResult,
    #[error("graph file {path}: {message}")]
    File { path: String, message: String },
}

/// Filters applied while turning store links into bipartite edges. All
/// present conditions must hold.
#[derive(Debug, Clone, Default)]
pub struct NodeFilter {
    /// Keep only torrents whose category is in the set.
    pub categories: Option<BTreeSet<String>>,
    /// Keep only torrents whose interest_category is in the set.
    pub interest_categories: Option<BTreeSet<String>>,
    /// Keep only torrents by this uploader.
    pub uploader: Option<String>,
    /// Keep only addresses with at least this many distinct torrent
    /// links (counted before the other filters).
    pub min_links: Option<usize>,
    /// Keep only addresses carrying this flag label.
    pub flag_label: Option<String>,
}

/// Two node classes and the links between them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BipartiteGraph {
    pub ip_nodes: BTreeSet<Ipv4Addr>,
    pub torrent_nodes: BTreeSet<InfoHash>,
    pub edges: BTreeSet<(Ipv4Addr, InfoHash)>,
}

impl BipartiteGraph {
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

/// One distinct hash_ip link per passing pair.
pub fn build_bipartite(store: &Store, filter: &NodeFilter) -> Result<BipartiteGraph, GraphError> {
    let link_counts = store.link_counts_per_ip();
    let mut graph = BipartiteGraph::default();
    for link in store.links() {
        let Some(torrent) = store.torrent(&link.info_hash) else {
            continue;
        };
        if let Some(cats) = &filter.categories {
            if !cats.contains(&torrent.category) {
                continue;
            }
        }
        if let Some(cats) = &filter.interest_categories {
            match &torrent.interest_category {
                Some(c) if cats.contains(c) => {}
                _ => continue,
            }
        }
        if let Some(uploader) = &filter.uploader {
            if &torrent.uploader != uploader {
                continue;
            }
        }
        if let Some(min) = filter.min_links {
            if link_counts.get(&link.ip).copied().unwrap_or(0) < min {
                continue;
            }
        }
        if let Some(label) = &filter.flag_label {
            match store.ip(link.ip) {
                Some(profile) if profile.flags.contains(label) => {}
                _ => continue,
            }
        }
        graph.ip_nodes.insert(link.ip);
        graph.torrent_nodes.insert(link.info_hash);
        graph.edges.insert((link.ip, link.info_hash));
    }
    if graph.edges.is_empty() {
        return Err(GraphError::EmptyResult);
    }
    Ok(graph)
}

/// Which side of the bipartite graph survives a projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionSide {
    Ip,
    Content,
}

/// Node identity in a projected graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Ip(Ipv4Addr),
    Torrent(InfoHash),
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeId::Ip(ip) => write!(f, "{ip}"),
            NodeId::Torrent(hash) => write!(f, "{hash}"),
        }
    }
}

/// Undirected weighted graph over one node class. Edges are stored
/// once, keyed by the canonically ordered pair, no self-loops.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedGraph {
    pub nodes: BTreeSet<NodeId>,
    pub edges: BTreeMap<(NodeId, NodeId), u64>,
    /// Edges kept for structure but marked for hiding in exports
    /// (extended-subgraph displays).
    pub display_suppressed: BTreeSet<(NodeId, NodeId)>,
}

impl WeightedGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn add_edge(&mut self, a: NodeId, b: NodeId, weight: u64) {
        assert!(a != b, "self-loop");
        assert!(weight >= 1, "zero-weight edge");
        let key = if a < b { (a, b) } else { (b, a) };
        self.nodes.insert(a);
        self.nodes.insert(b);
        self.edges.insert(key, weight);
    }

    pub fn weight(&self, a: NodeId, b: NodeId) -> Option<u64> {
        let key = if a < b { (a, b) } else { (b, a) };
        self.edges.get(&key).copied()
    }

    pub fn neighbors(&self, node: NodeId) -> Vec<NodeId> {
        // adjacency is derived, not stored; fine at these sizes
        let mut out = Vec::new();
        for &(a, b) in self.edges.keys() {
            if a == node {
                out.push(b);
            } else if b == node {
                out.push(a);
            }
        }
        out
    }

    fn adjacency(&self) -> (Vec<NodeId>, HashMap<NodeId, usize>, Vec<Vec<usize>>) {
        let ids: Vec<NodeId> = self.nodes.iter().copied().collect();
        let index: HashMap<NodeId, usize> = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        let mut adj = vec![Vec::new(); ids.len()];
        for &(a, b) in self.edges.keys() {
            let (ia, ib) = (index[&a], index[&b]);
            adj[ia].push(ib);
            adj[ib].push(ia);
        }
        (ids, index, adj)
    }
}

/// Collapse the bipartite graph onto one side. The weight of an edge is
/// the number of DISTINCT opposite-side nodes the endpoints share:
/// swarm co-membership for addresses, shared downloaders for torrents.
/// Repeated sightings never inflate weights.
pub fn project(bipartite: &BipartiteGraph, side: ProjectionSide) -> WeightedGraph {
    // incidence lists per surviving node, opposite side as sorted sets
    let mut incidence: BTreeMap<NodeId, BTreeSet<u64>> = BTreeMap::new();
    let mut opposite_index: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut next = 0u64;
    for &(ip, hash) in &bipartite.edges {
        let (keep, other) = match side {
            ProjectionSide::Ip => (NodeId::Ip(ip), NodeId::Torrent(hash)),
            ProjectionSide::Content => (NodeId::Torrent(hash), NodeId::Ip(ip)),
        };
        let other_ix = *opposite_index.entry(other).or_insert_with(|| {
            next += 1;
            next
        });
        incidence.entry(keep).or_default().insert(other_ix);
    }

    let mut graph = WeightedGraph::default();
    for &node in incidence.keys() {
        graph.nodes.insert(node);
    }
    // invert: for each opposite-side node, the retained nodes touching it
    let mut groups: BTreeMap<u64, Vec<NodeId>> = BTreeMap::new();
    for (&node, touched) in &incidence {
        for &ix in touched {
            groups.entry(ix).or_default().push(node);
        }
    }
    let mut weights: BTreeMap<(NodeId, NodeId), u64> = BTreeMap::new();
    for members in groups.values() {
        for i in 0..members.len() {
            for j in (i + 1)..members.len() {
                let (a, b) = (members[i], members[j]);
                let key = if a < b { (a, b) } else { (b, a) };
                *weights.entry(key).or_insert(0) += 1;
            }
        }
    }
    graph.edges = weights;
    graph
}

/// Keep the ⌈fraction·|E|⌉ heaviest edges; ties at the cut weight are
/// all included, so the survivor count can exceed the ceiling. Nodes
/// left without edges are dropped.
pub fn filter_top_fraction(graph: &WeightedGraph, fraction: f64) -> WeightedGraph {
    assert!(
        fraction > 0.0 && fraction <= 1.0,
        "fraction must be in (0, 1]"
    );
    if graph.edges.is_empty() {
        return graph.clone();
    }
    let keep = (fraction * graph.edges.len() as f64).ceil() as usize;
    let keep = keep.clamp(1, graph.edges.len());
    let mut weights: Vec<u64> = graph.edges.values().copied().collect();
    weights.sort_unstable_by(|a, b| b.cmp(a));
    let cut = weights[keep - 1];

    let mut out = WeightedGraph::default();
    for (&(a, b), &w) in &graph.edges {
        if w >= cut {
            out.add_edge(a, b, w);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlagMode {
    /// Flagged nodes and edges among them only.
    FlaggedOnly,
    /// Flagged nodes plus their direct neighbors, with every edge among
    /// the retained nodes. Plain-to-plain edges stay in the graph (the
    /// metrics need the complete retained edge set) but are marked
    /// display-suppressed for exports.
    ExtendedOneHop,
}

/// Cut the graph down around the nodes carrying `label`.
/// `flagged: node -> has label` must cover every graph node it needs;
/// missing nodes count as unflagged.
pub fn subgraph_flagged(
    graph: &WeightedGraph,
    flagged: &dyn Fn(NodeId) -> bool,
    mode: FlagMode,
) -> WeightedGraph {
    let mut keep: BTreeSet<NodeId> = graph
        .nodes
        .iter()
        .copied()
        .filter(|&n| flagged(n))
        .collect();
    if mode == FlagMode::ExtendedOneHop {
        for &(a, b) in graph.edges.keys() {
            if flagged(a) {
                keep.insert(b);
            }
            if flagged(b) {
                keep.insert(a);
            }
        }
    }
    let mut out = WeightedGraph::default();
    out.nodes = keep.clone();
    for (&(a, b), &w) in &graph.edges {
        if keep.contains(&a) && keep.contains(&b) {
            out.edges.insert((a, b), w);
            if mode == FlagMode::ExtendedOneHop && !flagged(a) && !flagged(b) {
                out.display_suppressed.insert((a, b));
            }
        }
    }
    out
}

/// Centrality scores for one node; annotation fields are filled by the
/// report layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralityRow {
    pub node: NodeId,
    pub betweenness: f64,
    pub degree: usize,
    pub normalized_degree: f64,
}

/// Exact betweenness centrality over unweighted shortest paths
/// (Brandes' dependency accumulation, O(|V|·|E|)). Undirected scores
/// are halved and normalized by 2/((n−1)(n−2)) into [0,1]; rows sort by
/// score descending, node id ascending as the tie-break.
pub fn betweenness(graph: &WeightedGraph) -> Vec<CentralityRow> {
    let (ids, _, adj) = graph.adjacency();
    let n = ids.len();
    let mut score = vec![0.0f64; n];

    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![-1i64; n];
    let mut delta = vec![0.0f64; n];
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut queue: VecDeque<usize> = VecDeque::new();

    for s in 0..n {
        for v in 0..n {
            sigma[v] = 0.0;
            dist[v] = -1;
            delta[v] = 0.0;
            preds[v].clear();
        }
        order.clear();
        queue.clear();

        sigma[s] = 1.0;
        dist[s] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &w in &adj[v] {
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
        for &w in order.iter().rev() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                score[w] += delta[w];
            }
        }
    }

    let norm = if n >= 3 {
        // each undirected pair was counted twice; fold the 1/2 into
        // the [0,1] normalization
        1.0 / ((n - 1) as f64 * (n - 2) as f64)
    } else {
        0.0
    };
    let degree_norm = if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
    let degrees = degree_map(graph);
    let mut rows: Vec<CentralityRow> = ids
        .iter()
        .enumerate()
        .map(|(i, &node)| {
            let degree = degrees.get(&node).copied().unwrap_or(0);
            CentralityRow {
                node,
                betweenness: score[i] * norm,
                degree,
                normalized_degree: degree as f64 * degree_norm,
            }
        })
        .collect();
    sort_rows_by_betweenness(&mut rows);
    rows
}

/// Raw and normalized degree (degree/(n−1)), sorted by degree
/// descending, node id ascending.
pub fn degree(graph: &WeightedGraph) -> Vec<CentralityRow> {
    let degrees = degree_map(graph);
    let n = graph.nodes.len();
    let degree_norm = if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
    let mut rows: Vec<CentralityRow> = graph
        .nodes
        .iter()
        .map(|&node| {
            let d = degrees.get(&node).copied().unwrap_or(0);
            CentralityRow {
                node,
                betweenness: 0.0,
                degree: d,
                normalized_degree: d as f64 * degree_norm,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.degree.cmp(&a.degree).then(a.node.cmp(&b.node)));
    rows
}

fn degree_map(graph: &WeightedGraph) -> BTreeMap<NodeId, usize> {
    let mut degrees: BTreeMap<NodeId, usize> = BTreeMap::new();
    for &node in &graph.nodes {
        degrees.insert(node, 0);
    }
    for &(a, b) in graph.edges.keys() {
        *degrees.get_mut(&a).unwrap() += 1;
        *degrees.get_mut(&b).unwrap() += 1;
    }
    degrees
}

fn sort_rows_by_betweenness(rows: &mut [CentralityRow]) {
    rows.sort_by(|a, b| {
        b.betweenness
            .partial_cmp(&a.betweenness)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.node.cmp(&b.node))
    });
}

/// The k heaviest edges, weight descending with the canonical pair id
/// as tie-break. k beyond |E| returns all edges.
pub fn top_pairs(graph: &WeightedGraph, k: usize) -> Vec<(NodeId, NodeId, u64)> {
    let mut pairs: Vec<(NodeId, NodeId, u64)> = graph
        .edges
        .iter()
        .map(|(&(a, b), &w)| (a, b, w))
        .collect();
    pairs.sort_by(|x, y| y.2.cmp(&x.2).then((x.0, x.1).cmp(&(y.0, y.1))));
    pairs.truncate(k);
    pairs
}

// ---- interchange ----

/// Write `<stem>.nodes.csv` and `<stem>.edges.csv` under `dir`.
pub fn export_csv(graph: &WeightedGraph, dir: &Path, stem: &str) -> Result<(), GraphError> {
    let file_err = |p: &Path, e: String| GraphError::File {
        path: p.display().to_string(),
        message: e,
    };
    std::fs::create_dir_all(dir).map_err(|e| file_err(dir, e.to_string()))?;
    let nodes_path = dir.join(format!("{stem}.nodes.csv"));
    let mut w = csv::Writer::from_path(&nodes_path)
        .map_err(|e| file_err(&nodes_path, e.to_string()))?;
    w.write_record(["node"])
        .map_err(|e| file_err(&nodes_path, e.to_string()))?;
    for node in &graph.nodes {
        w.write_record([node_tag(*node)])
            .map_err(|e| file_err(&nodes_path, e.to_string()))?;
    }
    w.flush().map_err(|e| file_err(&nodes_path, e.to_string()))?;

    let edges_path = dir.join(format!("{stem}.edges.csv"));
    let mut w = csv::Writer::from_path(&edges_path)
        .map_err(|e| file_err(&edges_path, e.to_string()))?;
    w.write_record(["source", "target", "weight", "display_suppressed"])
        .map_err(|e| file_err(&edges_path, e.to_string()))?;
    for (&(a, b), &weight) in &graph.edges {
        let suppressed = graph.display_suppressed.contains(&(a, b));
        w.write_record([
            node_tag(a),
            node_tag(b),
            weight.to_string(),
            if suppressed { "1" } else { "0" }.to_string(),
        ])
        .map_err(|e| file_err(&edges_path, e.to_string()))?;
    }
    w.flush().map_err(|e| file_err(&edges_path, e.to_string()))?;
    Ok(())
}

/// Read a graph back from the two files [`export_csv`] writes.
pub fn import_csv(dir: &Path, stem: &str) -> Result<WeightedGraph, GraphError> {
    let file_err = |p: &Path, e: String| GraphError::File {
        path: p.display().to_string(),
        message: e,
    };
    let mut graph = WeightedGraph::default();

    let nodes_path = dir.join(format!("{stem}.nodes.csv"));
    let mut reader = csv::Reader::from_path(&nodes_path)
        .map_err(|e| file_err(&nodes_path, e.to_string()))?;
    for row in reader.records() {
        let row = row.map_err(|e| file_err(&nodes_path, e.to_string()))?;
        graph
            .nodes
            .insert(parse_node_tag(&row[0]).map_err(|e| file_err(&nodes_path, e))?);
    }

    let edges_path = dir.join(format!("{stem}.edges.csv"));
    let mut reader = csv::Reader::from_path(&edges_path)
        .map_err(|e| file_err(&edges_path, e.to_string()))?;
    for row in reader.records() {
        let row = row.map_err(|e| file_err(&edges_path, e.to_string()))?;
        if row.len() < 3 {
            return Err(file_err(&edges_path, "edge row needs 3+ columns".to_string()));
        }
        let a = parse_node_tag(&row[0]).map_err(|e| file_err(&edges_path, e))?;
        let b = parse_node_tag(&row[1]).map_err(|e| file_err(&edges_path, e))?;
        let weight: u64 = row[2]
            .parse()
            .map_err(|_| file_err(&edges_path, format!("bad weight {:?}", &row[2])))?;
        let key = if a < b { (a, b) } else { (b, a) };
        graph.edges.insert(key, weight);
        graph.nodes.insert(a);
        graph.nodes.insert(b);
        if row.len() >= 4 && row[3].trim() == "1" {
            graph.display_suppressed.insert(key);
        }
    }
    Ok(graph)
}

/// One-way export for external visualizers (graphviz dot, undirected).
/// Suppressed edges render with `style=invis`.
pub fn export_dot(graph: &WeightedGraph, path: &Path) -> Result<(), GraphError> {
    use std::fmt::Write as _;
    let mut out = String::from("graph g {\n");
    for node in &graph.nodes {
        let _ = writeln!(out, "  \"{}\";", node_tag(*node));
    }
    for (&(a, b), &w) in &graph.edges {
        let style = if graph.display_suppressed.contains(&(a, b)) {
            ", style=invis"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "  \"{}\" -- \"{}\" [weight={w}, label={w}{style}];",
            node_tag(a),
            node_tag(b)
        );
    }
    out.push_str("}\n");
    std::fs::write(path, out).map_err(|e| GraphError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn node_tag(node: NodeId) -> String {
    match node {
        NodeId::Ip(ip) => format!("ip:{ip}"),
        NodeId::Torrent(hash) => format!("torrent:{hash}"),
    }
}

fn parse_node_tag(tag: &str) -> Result<NodeId, String> {
    if let Some(rest) = tag.strip_prefix("ip:") {
        return rest
            .parse()
            .map(NodeId::Ip)
            .map_err(|_| format!("bad ip node {tag:?}"));
    }
    if let Some(rest) = tag.strip_prefix("torrent:") {
        return rest
            .parse()
            .map(NodeId::Torrent)
            .map_err(|e| format!("bad torrent node {tag:?}: {e}"));
    }
    Err(format!("node tag {tag:?} has no class prefix"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::TorrentRecord;
    use crate::tracker::PeerObservation;
    use rand::prelude::*;

    fn hash(b: u8) -> InfoHash {
        InfoHash::new([b; 20])
    }

    fn ip(a: u8, b: u8) -> Ipv4Addr {
        Ipv4Addr::new(10, 0, a, b)
    }

    fn n(a: u8, b: u8) -> NodeId {
        NodeId::Ip(ip(a, b))
    }

    fn store_with_links(links: &[(u8, Ipv4Addr)]) -> Store {
        let mut store = Store::new();
        let hashes: BTreeSet<u8> = links.iter().map(|&(h, _)| h).collect();
        for h in hashes {
            store
                .upsert_torrent(TorrentRecord {
                    info_hash: hash(h),
                    title: format!("t{h}"),
                    category: "Porn".into(),
                    subcategory: String::new(),
                    uploaded_at: String::new(),
                    size_bytes: 0,
                    seeders: 1,
                    leechers: 0,
                    uploader: "up".into(),
                    magnet: String::new(),
                    interest_category: None,
                })
                .unwrap();
        }
        let obs: Vec<PeerObservation> = links
            .iter()
            .enumerate()
            .map(|(i, &(h, addr))| PeerObservation {
                info_hash: hash(h),
                ip: addr,
                port: 6881,
                observed_at: i as i64,
            })
            .collect();
        store.record_observations(&obs);
        store
    }

    #[test]
    fn bipartite_counts_nodes_and_edges() {
        let store = store_with_links(&[(1, ip(0, 1)), (1, ip(0, 2)), (2, ip(0, 1))]);
        let g = build_bipartite(&store, &NodeFilter::default()).unwrap();
        assert_eq!(g.edge_count(), 3);
        assert_eq!(g.ip_nodes.len(), 2);
        assert_eq!(g.torrent_nodes.len(), 2);
    }

    #[test]
    fn over_restrictive_filter_is_an_error() {
        let store = store_with_links(&[(1, ip(0, 1))]);
        let filter = NodeFilter {
            min_links: Some(7),
            ..NodeFilter::default()
        };
        assert_eq!(
            build_bipartite(&store, &filter).unwrap_err(),
            GraphError::EmptyResult
        );
    }

    #[test]
    fn shared_torrents_weight_ip_projection() {
        // A,B share {t1,t2}; C only on t1
        let store = store_with_links(&[
            (1, ip(0, 1)),
            (1, ip(0, 2)),
            (1, ip(0, 3)),
            (2, ip(0, 1)),
            (2, ip(0, 2)),
        ]);
        let g = build_bipartite(&store, &NodeFilter::default()).unwrap();
        let p = project(&g, ProjectionSide::Ip);
        assert_eq!(p.weight(n(0, 1), n(0, 2)), Some(2));
        assert_eq!(p.weight(n(0, 1), n(0, 3)), Some(1));
        assert_eq!(p.weight(n(0, 2), n(0, 3)), Some(1));
    }

    #[test]
    fn disjoint_ips_get_no_edge() {
        let store = store_with_links(&[(1, ip(0, 1)), (2, ip(0, 2))]);
        let g = build_bipartite(&store, &NodeFilter::default()).unwrap();
        let p = project(&g, ProjectionSide::Ip);
        assert_eq!(p.edge_count(), 0);
        assert_eq!(p.node_count(), 2);
    }

    #[test]
    fn content_projection_counts_shared_downloaders() {
        let store = store_with_links(&[
            (1, ip(0, 1)),
            (2, ip(0, 1)),
            (1, ip(0, 2)),
            (2, ip(0, 2)),
            (3, ip(0, 2)),
        ]);
        let g = build_bipartite(&store, &NodeFilter::default()).unwrap();
        let p = project(&g, ProjectionSide::Content);
        let t = |b: u8| NodeId::Torrent(hash(b));
        assert_eq!(p.weight(t(1), t(2)), Some(2));
        assert_eq!(p.weight(t(1), t(3)), Some(1));
        assert_eq!(p.weight(t(2), t(3)), Some(1));
    }

    /// Independent oracle: double loop over node pairs, intersecting
    /// neighbor sets read straight from the bipartite edge list.
    fn brute_force_ip_weights(
        g: &BipartiteGraph,
    ) -> BTreeMap<(Ipv4Addr, Ipv4Addr), u64> {
        let ips: Vec<Ipv4Addr> = g.ip_nodes.iter().copied().collect();
        let mut out = BTreeMap::new();
        for i in 0..ips.len() {
            for j in (i + 1)..ips.len() {
                let shared = g
                    .torrent_nodes
                    .iter()
                    .filter(|&&t| {
                        g.edges.contains(&(ips[i], t)) && g.edges.contains(&(ips[j], t))
                    })
                    .count() as u64;
                if shared > 0 {
                    out.insert((ips[i], ips[j]), shared);
                }
            }
        }
        out
    }

    #[test]
    fn projection_matches_brute_force_on_random_bipartites() {
        let mut rng = StdRng::seed_from_u64(0x5eed);
        for _ in 0..40 {
            let n_ips = rng.random_range(2..=12usize);
            let n_torrents = rng.random_range(1..=12usize);
            let mut g = BipartiteGraph::default();
            for a in 0..n_ips {
                for t in 0..n_torrents {
                    if rng.random_bool(0.3) {
                        let addr = ip(1, a as u8);
                        let h = hash(t as u8);
                        g.ip_nodes.insert(addr);
                        g.torrent_nodes.insert(h);
                        g.edges.insert((addr, h));
                    }
                }
            }
            let projected = project(&g, ProjectionSide::Ip);
            let expected = brute_force_ip_weights(&g);
            let got: BTreeMap<(Ipv4Addr, Ipv4Addr), u64> = projected
                .edges
                .iter()
                .map(|(&(a, b), &w)| match (a, b) {
                    (NodeId::Ip(x), NodeId::Ip(y)) => ((x, y), w),
                    _ => unreachable!("ip projection emitted a torrent node"),
                })
                .collect();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn top_fraction_keeps_ceiling_with_inclusive_ties() {
        let mut g = WeightedGraph::default();
        for i in 0..100u8 {
            g.add_edge(n(1, i), n(2, i), (i + 1) as u64);
        }
        let kept = filter_top_fraction(&g, 0.1);
        assert_eq!(kept.edge_count(), 10);
        let min_kept = kept.edges.values().min().copied().unwrap();
        assert_eq!(min_kept, 91);
        assert!(kept.edges.values().all(|&w| (91..=100).contains(&w)));

        // tie flood: all equal weights and fraction 0.5 keeps everything
        let mut flat = WeightedGraph::default();
        for i in 0..10u8 {
            flat.add_edge(n(3, i), n(4, i), 7);
        }
        assert_eq!(filter_top_fraction(&flat, 0.5).edge_count(), 10);

        // ceiling floor: tiny fraction keeps at least one edge
        assert!(filter_top_fraction(&g, 0.0001).edge_count() >= 1);

        // isolated nodes disappear
        let kept = filter_top_fraction(&g, 0.1);
        assert_eq!(kept.node_count(), 20);
    }

    #[test]
    fn flagged_star_subgraphs() {
        let mut g = WeightedGraph::default();
        let center = n(0, 0);
        for leaf in 1..=3u8 {
            g.add_edge(center, n(0, leaf), 1);
        }
        let is_flagged = |node: NodeId| node == center;

        let only = subgraph_flagged(&g, &is_flagged, FlagMode::FlaggedOnly);
        assert_eq!(only.node_count(), 1);
        assert_eq!(only.edge_count(), 0);

        let extended = subgraph_flagged(&g, &is_flagged, FlagMode::ExtendedOneHop);
        assert_eq!(extended.node_count(), 4);
        assert_eq!(extended.edge_count(), 3);
        assert!(extended.display_suppressed.is_empty());
    }

    #[test]
    fn extended_subgraph_keeps_plain_edges_but_marks_them() {
        // flagged F; neighbors A, B; A-B is a plain-plain edge that
        // must survive for the metrics yet be marked for display
        let mut g = WeightedGraph::default();
        let (f, a, b, outside) = (n(0, 1), n(0, 2), n(0, 3), n(0, 4));
        g.add_edge(f, a, 1);
        g.add_edge(f, b, 2);
        g.add_edge(a, b, 3);
        g.add_edge(b, outside, 4); // outside is two hops from f, so it drops
        let is_flagged = |node: NodeId| node == f;
        let extended = subgraph_flagged(&g, &is_flagged, FlagMode::ExtendedOneHop);
        assert_eq!(extended.node_count(), 3); // f, a, b
        assert_eq!(extended.edge_count(), 3);
        let key = if a < b { (a, b) } else { (b, a) };
        assert!(extended.display_suppressed.contains(&key));
        assert_eq!(extended.display_suppressed.len(), 1);
    }

    #[test]
    fn path_betweenness_is_zero_one_zero() {
        let mut g = WeightedGraph::default();
        let (a, b, c) = (n(0, 1), n(0, 2), n(0, 3));
        g.add_edge(a, b, 1);
        g.add_edge(b, c, 1);
        let rows = betweenness(&g);
        assert_eq!(rows[0].node, b);
        assert!((rows[0].betweenness - 1.0).abs() < 1e-12);
        assert!(rows[1].betweenness.abs() < 1e-12);
        assert!(rows[2].betweenness.abs() < 1e-12);
    }

    #[test]
    fn complete_graph_has_no_bridges() {
        let mut g = WeightedGraph::default();
        let nodes: Vec<NodeId> = (1..=4u8).map(|i| n(0, i)).collect();
        for i in 0..4 {
            for j in (i + 1)..4 {
                g.add_edge(nodes[i], nodes[j], 1);
            }
        }
        for row in betweenness(&g) {
            assert!(row.betweenness.abs() < 1e-12);
        }
    }

    /// Exhaustive oracle: enumerate every shortest path between every
    /// ordered pair by BFS layer walking, count pass-throughs.
    fn oracle_betweenness(g: &WeightedGraph) -> BTreeMap<NodeId, f64> {
        let ids: Vec<NodeId> = g.nodes.iter().copied().collect();
        let mut pass: BTreeMap<NodeId, f64> = ids.iter().map(|&v| (v, 0.0)).collect();
        for &s in &ids {
            for &t in &ids {
                if s >= t {
                    continue;
                }
                let paths = all_shortest_paths(g, s, t);
                if paths.is_empty() {
                    continue;
                }
                let total = paths.len() as f64;
                for path in &paths {
                    for &v in &path[1..path.len() - 1] {
                        *pass.get_mut(&v).unwrap() += 1.0 / total;
                    }
                }
            }
        }
        let n = ids.len();
        if n >= 3 {
            let norm = 2.0 / ((n - 1) as f64 * (n - 2) as f64);
            for v in pass.values_mut() {
                *v *= norm;
            }
        }
        pass
    }

    fn all_shortest_paths(g: &WeightedGraph, s: NodeId, t: NodeId) -> Vec<Vec<NodeId>> {
        // BFS distances, then DFS over strictly-descending-distance
        // predecessors from t back to s
        let mut dist: BTreeMap<NodeId, i64> = BTreeMap::new();
        dist.insert(s, 0);
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for w in g.neighbors(v) {
                if !dist.contains_key(&w) {
                    dist.insert(w, dist[&v] + 1);
                    queue.push_back(w);
                }
            }
        }
        if !dist.contains_key(&t) {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut stack = vec![vec![t]];
        while let Some(path) = stack.pop() {
            let head = *path.last().unwrap();
            if head == s {
                let mut forward = path.clone();
                forward.reverse();
                out.push(forward);
                continue;
            }
            for w in g.neighbors(head) {
                if dist.get(&w) == Some(&(dist[&head] - 1)) {
                    let mut next = path.clone();
                    next.push(w);
                    stack.push(next);
                }
            }
        }
        out
    }

    #[test]
    fn betweenness_matches_exhaustive_oracle_on_random_graphs() {
        let mut rng = StdRng::seed_from_u64(0xbeef);
        let mut tested = 0;
        while tested < 30 {
            let size = rng.random_range(4..=10usize);
            let mut g = WeightedGraph::default();
            let nodes: Vec<NodeId> = (0..size).map(|i| n(2, i as u8)).collect();
            // random spanning tree first so the graph is connected
            for i in 1..size {
                let parent = rng.random_range(0..i);
                g.add_edge(nodes[i], nodes[parent], 1);
            }
            for i in 0..size {
                for j in (i + 1)..size {
                    if rng.random_bool(0.25) {
                        g.add_edge(nodes[i], nodes[j], 1);
                    }
                }
            }
            let expected = oracle_betweenness(&g);
            for row in betweenness(&g) {
                let want = expected[&row.node];
                assert!(
                    (row.betweenness - want).abs() <= 1e-9,
                    "node {:?}: got {} want {}",
                    row.node,
                    row.betweenness,
                    want
                );
            }
            tested += 1;
        }
    }

    #[test]
    fn tree_betweenness_sums_match_pair_traversals() {
        // path of 5: oracle pair traversal count per interior node
        let mut g = WeightedGraph::default();
        let nodes: Vec<NodeId> = (1..=5u8).map(|i| n(3, i)).collect();
        for w in nodes.windows(2) {
            g.add_edge(w[0], w[1], 1);
        }
        let rows = betweenness(&g);
        let by_node: BTreeMap<NodeId, f64> =
            rows.iter().map(|r| (r.node, r.betweenness)).collect();
        let expected = oracle_betweenness(&g);
        for (node, want) in expected {
            assert!((by_node[&node] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn degree_star_and_isolated() {
        let mut g = WeightedGraph::default();
        let center = n(0, 0);
        for leaf in 1..=3u8 {
            g.add_edge(center, n(0, leaf), 1);
        }
        g.nodes.insert(n(0, 9)); // isolated
        let rows = degree(&g);
        assert_eq!(rows[0].node, center);
        assert_eq!(rows[0].degree, 3);
        assert!((rows[0].normalized_degree - 3.0 / 4.0).abs() < 1e-12);
        let isolated = rows.iter().find(|r| r.node == n(0, 9)).unwrap();
        assert_eq!(isolated.degree, 0);
        assert_eq!(isolated.normalized_degree, 0.0);
    }

    #[test]
    fn normalized_degree_for_table_shaped_fixture() {
        // a 106-node graph where one node has degree 45
        let mut g = WeightedGraph::default();
        let hub = n(5, 0);
        for i in 1..=45u8 {
            g.add_edge(hub, n(5, i), 1);
        }
        for i in 46..=105u8 {
            g.add_edge(n(5, i), n(5, 1), 1);
        }
        assert_eq!(g.node_count(), 106);
        let rows = degree(&g);
        let hub_row = rows.iter().find(|r| r.node == hub).unwrap();
        assert_eq!(hub_row.degree, 45);
        assert!((hub_row.normalized_degree - 45.0 / 105.0).abs() < 1e-12);
        assert_eq!(format!("{:.3}", hub_row.normalized_degree), "0.429");
    }

    #[test]
    fn top_pairs_sorts_and_truncates() {
        let mut g = WeightedGraph::default();
        let (a, b, c) = (n(0, 1), n(0, 2), n(0, 3));
        g.add_edge(a, b, 34);
        g.add_edge(a, c, 30);
        g.add_edge(b, c, 25);
        let top = top_pairs(&g, 2);
        assert_eq!(top, vec![(a, b, 34), (a, c, 30)]);
        assert_eq!(top_pairs(&g, 10).len(), 3);

        // equal weights fall back to canonical pair order
        let mut flat = WeightedGraph::default();
        flat.add_edge(n(1, 2), n(1, 1), 5);
        flat.add_edge(n(1, 4), n(1, 3), 5);
        let top = top_pairs(&flat, 2);
        assert_eq!(top[0].0, n(1, 1));
        assert_eq!(top[1].0, n(1, 3));
    }

    #[test]
    fn csv_round_trip_and_dot_export() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = WeightedGraph::default();
        g.add_edge(n(0, 1), n(0, 2), 3);
        g.add_edge(NodeId::Torrent(hash(7)), n(0, 1), 2);
        g.display_suppressed.insert((n(0, 1), n(0, 2)));
        export_csv(&g, dir.path(), "test").unwrap();
        let back = import_csv(dir.path(), "test").unwrap();
        assert_eq!(back, g);

        let dot_path = dir.path().join("test.dot");
        export_dot(&g, &dot_path).unwrap();
        let text = std::fs::read_to_string(&dot_path).unwrap();
        assert!(text.starts_with("graph g {"));
        assert!(text.contains("style=invis"));
        assert!(text.contains("weight=3"));
    }

    #[test]
    fn projection_incidence_symmetry_small_fixture() {
        // sum of ip-edge weights equals sum over torrent pairs of
        // shared-ip counts computed the transposed way
        let store = store_with_links(&[
            (1, ip(0, 1)),
            (1, ip(0, 2)),
            (2, ip(0, 1)),
            (2, ip(0, 2)),
            (3, ip(0, 1)),
            (3, ip(0, 3)),
        ]);
        let g = build_bipartite(&store, &NodeFilter::default()).unwrap();
        let ip_side = project(&g, ProjectionSide::Ip);
        let content_side = project(&g, ProjectionSide::Content);
        // both totals count co-membership pairs across the same incidence
        let ip_total: u64 = ip_side.edges.values().sum();
        let torrent_pairs_via_ips: u64 = content_side.edges.values().sum();
        // identity: Σ_t C(d_t,2) = Σ ip-pair shared counts; Σ_ip C(d_ip,2) = Σ torrent-pair shared
        let mut by_torrent: BTreeMap<InfoHash, u64> = BTreeMap::new();
        let mut by_ip: BTreeMap<Ipv4Addr, u64> = BTreeMap::new();
        for &(a, t) in &g.edges {
            *by_torrent.entry(t).or_insert(0) += 1;
            *by_ip.entry(a).or_insert(0) += 1;
        }
        let choose2 = |d: u64| d * d.saturating_sub(1) / 2;
        let sum_t: u64 = by_torrent.values().map(|&d| choose2(d)).sum();
        let sum_ip: u64 = by_ip.values().map(|&d| choose2(d)).sum();
        assert_eq!(ip_total, sum_t);
        assert_eq!(torrent_pairs_via_ips, sum_ip);
    }
}
