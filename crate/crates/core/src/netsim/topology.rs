use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, RngStream, Tick};

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Client,
    Shuffler,
    Gateway,
    Server,
}

/// Advertised capabilities of a node that volunteers as an open shuffler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Volunteer {
    pub buffer_capacity: usize,
    /// Relative bandwidth, higher is better.
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub role: Role,
    /// Manufacturer tag, consulted by vendor-restricted shuffling policies.
    pub vendor: u32,
    pub volunteer: Option<Volunteer>,
    /// Grid coordinates `(row, col)` for mesh clients.
    pub grid: Option<(u32, u32)>,
}

/// Per-link loss and latency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkModel {
    pub base_plr: f64,
    pub latency_base: Tick,
    /// Half-width of the uniform integer jitter added to `latency_base`.
    pub latency_jitter: Tick,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            base_plr: 0.0,
            latency_base: 1,
            latency_jitter: 0,
        }
    }
}

impl LinkModel {
    pub fn lossy(base_plr: f64) -> Self {
        LinkModel {
            base_plr,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.base_plr) {
            return Err(Error::config(format!("packet loss rate {} outside [0, 1]", self.base_plr)));
        }
        if self.latency_base == 0 {
            return Err(Error::config("link latency must be positive"));
        }
        if self.latency_jitter > self.latency_base {
            return Err(Error::config("latency jitter may not exceed the base latency"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub link: LinkModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Star,
    StarWithShuffler,
    Mesh,
    Custom,
}

impl std::str::FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "star" => Ok(TopologyKind::Star),
            "star_with_shuffler" | "star-with-shuffler" => Ok(TopologyKind::StarWithShuffler),
            "mesh" => Ok(TopologyKind::Mesh),
            other => Err(Error::config(format!("unknown topology kind `{other}`"))),
        }
    }
}

/// Construction parameters for the built-in topologies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyParams {
    /// Links leaving clients (client to server, shuffler or mesh peer).
    pub access: LinkModel,
    /// Links from shufflers and gateways to the server.
    pub uplink: LinkModel,
    /// Mesh grid shape `(rows, cols)`; near-square when absent.
    pub grid: Option<(u32, u32)>,
    /// Fraction of clients that volunteer as open shufflers.
    pub volunteer_fraction: f64,
    pub volunteer_capacity: usize,
    /// Number of distinct vendor tags assigned uniformly to clients.
    pub vendors: u32,
}

impl Default for TopologyParams {
    fn default() -> Self {
        TopologyParams {
            access: LinkModel::default(),
            uplink: LinkModel::default(),
            grid: None,
            volunteer_fraction: 0.0,
            volunteer_capacity: 64,
            vendors: 1,
        }
    }
}

/// A network of clients, relays and exactly one server, with static
/// shortest-path routes toward the server.
#[derive(Debug, Clone)]
pub struct Topology {
    pub kind: TopologyKind,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    /// Outgoing edge indices per node, sorted by destination id.
    out: Vec<Vec<usize>>,
    server: NodeId,
    /// Next hop toward the server; `None` for the server and unreachable nodes.
    next_hop: Vec<Option<(NodeId, usize)>>,
    distance: Vec<Option<u32>>,
}

impl Topology {
    /// Builds a topology from explicit nodes and directed edges. Node ids must
    /// be `0..nodes.len()` in order.
    pub fn custom(kind: TopologyKind, nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self> {
        for (i, n) in nodes.iter().enumerate() {
            if n.id as usize != i {
                return Err(Error::config(format!("node at index {i} has id {}", n.id)));
            }
        }
        let servers: Vec<NodeId> = nodes.iter().filter(|n| n.role == Role::Server).map(|n| n.id).collect();
        let server = match servers.as_slice() {
            [s] => *s,
            _ => {
                return Err(Error::config(format!(
                    "topology needs exactly one server, found {}",
                    servers.len()
                )))
            }
        };
        let mut out = vec![Vec::new(); nodes.len()];
        for (i, e) in edges.iter().enumerate() {
            e.link.validate()?;
            if e.from as usize >= nodes.len() || e.to as usize >= nodes.len() {
                return Err(Error::config(format!("edge {}->{} references a missing node", e.from, e.to)));
            }
            out[e.from as usize].push(i);
        }
        for list in &mut out {
            list.sort_by_key(|&i| edges[i].to);
        }

        // BFS outward from the server over reversed edges.
        let mut incoming = vec![Vec::new(); nodes.len()];
        for (i, e) in edges.iter().enumerate() {
            incoming[e.to as usize].push(i);
        }
        for list in &mut incoming {
            list.sort_by_key(|&i| edges[i].from);
        }
        let mut next_hop = vec![None; nodes.len()];
        let mut distance = vec![None; nodes.len()];
        distance[server as usize] = Some(0);
        let mut queue = VecDeque::from([server]);
        while let Some(at) = queue.pop_front() {
            let d = distance[at as usize].unwrap();
            for &ei in &incoming[at as usize] {
                let from = edges[ei].from;
                if distance[from as usize].is_none() {
                    distance[from as usize] = Some(d + 1);
                    next_hop[from as usize] = Some((at, ei));
                    queue.push_back(from);
                }
            }
        }
        let topo = Topology {
            kind,
            nodes,
            edges,
            out,
            server,
            next_hop,
            distance,
        };
        if let Some(c) = topo.clients().find(|&c| topo.distance[c as usize].is_none()) {
            return Err(Error::Routing(format!("client {c} has no path to the server")));
        }
        Ok(topo)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id as usize)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut Node> {
        self.nodes.get_mut(id as usize)
    }

    pub fn server(&self) -> NodeId {
        self.server
    }

    pub fn clients(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(|n| n.role == Role::Client).map(|n| n.id)
    }

    pub fn client_count(&self) -> usize {
        self.clients().count()
    }

    /// Node hosting client number `index` (0-based, in id order).
    pub fn client_node(&self, index: usize) -> Option<NodeId> {
        self.clients().nth(index)
    }

    /// Directed neighbors of `node`, ascending by id.
    pub fn neighbors(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.out[node as usize].iter().map(|&i| self.edges[i].to)
    }

    pub fn link(&self, from: NodeId, to: NodeId) -> Option<&LinkModel> {
        self.out
            .get(from as usize)?
            .iter()
            .map(|&i| &self.edges[i])
            .find(|e| e.to == to)
            .map(|e| &e.link)
    }

    /// Hop distance from `node` to the server.
    pub fn hops_to_server(&self, node: NodeId) -> Option<u32> {
        self.distance.get(node as usize).copied().flatten()
    }

    /// Shortest path from `node` to the server, endpoints included.
    pub fn route(&self, node: NodeId) -> Result<Vec<NodeId>> {
        if node as usize >= self.nodes.len() {
            return Err(Error::Routing(format!("node {node} is not in the topology")));
        }
        let mut path = vec![node];
        let mut at = node;
        while at != self.server {
            match self.next_hop[at as usize] {
                Some((nh, _)) => {
                    path.push(nh);
                    at = nh;
                }
                None => return Err(Error::Routing(format!("no route from node {node} to the server"))),
            }
        }
        Ok(path)
    }

    /// Links traversed from `node` to the server, in order.
    pub fn route_links(&self, node: NodeId) -> Result<Vec<(NodeId, NodeId, LinkModel)>> {
        let path = self.route(node)?;
        Ok(path
            .windows(2)
            .map(|w| {
                let (_, ei) = self.next_hop[w[0] as usize].unwrap();
                (w[0], w[1], self.edges[ei].link)
            })
            .collect())
    }

    /// Undirected hop distances from `from` to every node (BFS).
    pub fn hop_distances(&self, from: NodeId) -> Vec<Option<u32>> {
        let mut undirected = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            undirected[e.from as usize].push(e.to);
            undirected[e.to as usize].push(e.from);
        }
        let mut dist = vec![None; self.nodes.len()];
        dist[from as usize] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(at) = queue.pop_front() {
            let d = dist[at as usize].unwrap();
            for &nb in &undirected[at as usize] {
                if dist[nb as usize].is_none() {
                    dist[nb as usize] = Some(d + 1);
                    queue.push_back(nb);
                }
            }
        }
        dist
    }

    /// Human-readable summary used by `topology --show`.
    pub fn describe(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let count = |r: Role| self.nodes.iter().filter(|n| n.role == r).count();
        let _ = writeln!(
            s,
            "kind: {:?}\nnodes: {} (clients {}, shufflers {}, gateways {}, server 1)\nedges: {}",
            self.kind,
            self.nodes.len(),
            count(Role::Client),
            count(Role::Shuffler),
            count(Role::Gateway),
            self.edges.len()
        );
        let max_hops = self.clients().filter_map(|c| self.hops_to_server(c)).max().unwrap_or(0);
        let volunteers = self.nodes.iter().filter(|n| n.volunteer.is_some()).count();
        let _ = writeln!(s, "max client hops to server: {max_hops}\nopen shufflers: {volunteers}");
        for c in self.clients().take(8) {
            let route = self.route(c).map(|r| format!("{r:?}")).unwrap_or_else(|e| e.to_string());
            let _ = writeln!(s, "  route {c}: {route}");
        }
        s
    }
}

fn node(id: NodeId, role: Role) -> Node {
    Node {
        id,
        role,
        vendor: 0,
        volunteer: None,
        grid: None,
    }
}

/// Builds one of the standard topologies.
///
/// Node ids: the server is 0. A star-with-shuffler puts the shuffler at 1, a
/// mesh puts its gateway at 1; clients follow. Mesh clients fill a grid in
/// row-major order, link to their four neighbors in both directions, and the
/// client in the far corner of the grid uplinks to the gateway.
pub fn build_topology(
    kind: TopologyKind,
    n_clients: usize,
    params: &TopologyParams,
    rng: &mut RngStream,
) -> Result<Topology> {
    if n_clients == 0 {
        return Err(Error::config("a topology needs at least one client"));
    }
    if !(0.0..=1.0).contains(&params.volunteer_fraction) {
        return Err(Error::config("volunteer fraction must lie in [0, 1]"));
    }
    let mut nodes = vec![node(0, Role::Server)];
    let mut edges = Vec::new();
    let first_client: NodeId;
    match kind {
        TopologyKind::Star => {
            first_client = 1;
            for i in 0..n_clients as NodeId {
                nodes.push(node(first_client + i, Role::Client));
                edges.push(Edge { from: first_client + i, to: 0, link: params.access });
            }
        }
        TopologyKind::StarWithShuffler => {
            nodes.push(node(1, Role::Shuffler));
            edges.push(Edge { from: 1, to: 0, link: params.uplink });
            first_client = 2;
            for i in 0..n_clients as NodeId {
                nodes.push(node(first_client + i, Role::Client));
                edges.push(Edge { from: first_client + i, to: 1, link: params.access });
            }
        }
        TopologyKind::Mesh => {
            nodes.push(node(1, Role::Gateway));
            edges.push(Edge { from: 1, to: 0, link: params.uplink });
            first_client = 2;
            let (rows, cols) = match params.grid {
                Some((r, c)) if (r as usize) * (c as usize) >= n_clients && r > 0 && c > 0 => (r, c),
                Some((r, c)) => {
                    return Err(Error::config(format!("{r}x{c} grid cannot hold {n_clients} clients")))
                }
                None => {
                    let cols = (n_clients as f64).sqrt().ceil() as u32;
                    (n_clients.div_ceil(cols as usize) as u32, cols)
                }
            };
            let at = |r: u32, c: u32| -> Option<NodeId> {
                let idx = (r * cols + c) as usize;
                (r < rows && c < cols && idx < n_clients).then_some(first_client + idx as NodeId)
            };
            for i in 0..n_clients as u32 {
                let mut n = node(first_client + i, Role::Client);
                n.grid = Some((i / cols, i % cols));
                nodes.push(n);
            }
            for i in 0..n_clients as u32 {
                let (r, c) = (i / cols, i % cols);
                let me = first_client + i;
                for (dr, dc) in [(0i64, 1i64), (1, 0)] {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if let Some(other) = at(nr as u32, nc as u32) {
                        edges.push(Edge { from: me, to: other, link: params.access });
                        edges.push(Edge { from: other, to: me, link: params.access });
                    }
                }
            }
            let corner = at(rows - 1, cols - 1).unwrap_or(first_client + n_clients as NodeId - 1);
            edges.push(Edge { from: corner, to: 1, link: params.access });
            edges.push(Edge { from: 1, to: corner, link: params.access });
        }
        TopologyKind::Custom => {
            return Err(Error::config("custom topologies are built with Topology::custom"));
        }
    }
    for n in nodes.iter_mut().filter(|n| n.role == Role::Client) {
        if params.vendors > 1 {
            n.vendor = rng.random_range(0..params.vendors);
        }
        if params.volunteer_fraction > 0.0 && rng.random::<f64>() < params.volunteer_fraction {
            n.volunteer = Some(Volunteer {
                buffer_capacity: params.volunteer_capacity,
                bandwidth: 1.0,
            });
        }
    }
    Topology::custom(kind, nodes, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SeedTree;

    fn build(kind: TopologyKind, n: usize, params: TopologyParams) -> Topology {
        build_topology(kind, n, &params, &mut SeedTree::new(1).stream("topology", &[])).unwrap()
    }

    #[test]
    fn star_shape() {
        let t = build(TopologyKind::Star, 3, TopologyParams::default());
        assert_eq!(t.nodes().len(), 4);
        assert_eq!(t.edges().len(), 3);
        assert!(t.edges().iter().all(|e| e.to == t.server()));
    }

    #[test]
    fn star_with_shuffler_paths() {
        let t = build(TopologyKind::StarWithShuffler, 2, TopologyParams::default());
        for c in t.clients() {
            assert_eq!(t.route(c).unwrap().len() - 1, 2);
            assert_eq!(t.route(c).unwrap()[1], 1);
        }
    }

    /// Independent BFS over grid coordinates.
    fn grid_bfs(rows: i32, cols: i32, from: (i32, i32), to: (i32, i32)) -> u32 {
        let mut dist = vec![vec![u32::MAX; cols as usize]; rows as usize];
        dist[from.0 as usize][from.1 as usize] = 0;
        let mut q = VecDeque::from([from]);
        while let Some((r, c)) = q.pop_front() {
            for (dr, dc) in [(0, 1), (1, 0), (0, -1), (-1, 0)] {
                let (nr, nc) = (r + dr, c + dc);
                if nr >= 0 && nc >= 0 && nr < rows && nc < cols && dist[nr as usize][nc as usize] == u32::MAX {
                    dist[nr as usize][nc as usize] = dist[r as usize][c as usize] + 1;
                    q.push_back((nr, nc));
                }
            }
        }
        dist[to.0 as usize][to.1 as usize]
    }

    #[test]
    fn mesh_corner_to_corner() {
        let params = TopologyParams {
            grid: Some((3, 3)),
            ..Default::default()
        };
        let t = build(TopologyKind::Mesh, 9, params);
        let corner = t.client_node(0).unwrap();
        let route = t.route(corner).unwrap();
        // mesh relays up to the client at the opposite corner, then the gateway
        let far = route[route.len() - 3];
        assert_eq!(t.node(far).unwrap().grid, Some((2, 2)));
        let mesh_hops = route.iter().position(|&n| n == far).unwrap() as u32;
        assert_eq!(mesh_hops, grid_bfs(3, 3, (0, 0), (2, 2)));
        assert_eq!(mesh_hops, 4);
        assert_eq!(&route[route.len() - 2..], &[1, 0]);
        // every mesh edge has its reverse
        for e in t.edges().iter().filter(|e| e.from >= 2 && e.to >= 2) {
            assert!(t.link(e.to, e.from).is_some());
        }
        assert!(t.clients().all(|c| t.neighbors(c).count() <= 5));
    }

    #[test]
    fn mesh_routes_are_shortest() {
        let t = build(TopologyKind::Mesh, 20, TopologyParams::default());
        let corner = t.nodes().iter().find(|n| n.grid.is_some() && t.link(n.id, 1).is_some()).unwrap();
        let (cr, cc) = corner.grid.unwrap();
        for c in t.clients() {
            let (r, col) = t.node(c).unwrap().grid.unwrap();
            let want = (cr as i64 - r as i64).unsigned_abs() + (cc as i64 - col as i64).unsigned_abs() + 2;
            // 20 clients on a 4x5 grid: full rectangle so Manhattan distance is exact
            assert_eq!(t.hops_to_server(c).unwrap() as u64, want);
        }
    }

    #[test]
    fn invalid_inputs() {
        let mut rng = SeedTree::new(0).stream("t", &[]);
        assert!(build_topology(TopologyKind::Star, 0, &TopologyParams::default(), &mut rng).is_err());
        let bad = TopologyParams {
            access: LinkModel::lossy(1.5),
            ..Default::default()
        };
        assert!(build_topology(TopologyKind::Star, 2, &bad, &mut rng).is_err());
        let small = TopologyParams {
            grid: Some((2, 2)),
            ..Default::default()
        };
        assert!(build_topology(TopologyKind::Mesh, 9, &small, &mut rng).is_err());
        assert!("ring".parse::<TopologyKind>().is_err());
    }

    #[test]
    fn unreachable_client_rejected() {
        let nodes = vec![node(0, Role::Server), node(1, Role::Client), node(2, Role::Client)];
        let edges = vec![Edge { from: 1, to: 0, link: LinkModel::default() }];
        assert!(matches!(
            Topology::custom(TopologyKind::Custom, nodes, edges),
            Err(Error::Routing(_))
        ));
    }

    #[test]
    fn volunteers_and_vendors_are_seeded() {
        let params = TopologyParams {
            volunteer_fraction: 0.5,
            vendors: 3,
            ..Default::default()
        };
        let a = build(TopologyKind::Mesh, 50, params.clone());
        let b = build(TopologyKind::Mesh, 50, params);
        assert_eq!(a.nodes(), b.nodes());
        let v = a.nodes().iter().filter(|n| n.volunteer.is_some()).count();
        assert!(v > 10 && v < 40);
    }
}
