//! Feynman graphs as half-edge structures: enumeration of isomorphism
//! classes by exhaustive perfect matchings on vertex stars, automorphism
//! counting, connected decomposition and the oriented transfer graphs of
//! homotopy transfer.

use crate::num::{odd_double_factorial, Rat};
use num_traits::{One, Zero};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("total number of half-edges is odd")]
    OddHalfEdges,
    #[error("half-edge budget exceeded: {found} > cap {cap} (raise the cap explicitly)")]
    CapExceeded { found: usize, cap: usize },
    #[error("orientation constraints are infeasible: {0} outgoing vs {1} incoming half-edges")]
    OrientationInfeasible(usize, usize),
    #[error("graph is not connected")]
    NotConnected,
    #[error("infeasible leaf count {0} for {1} graphs")]
    InfeasibleLeaves(usize, &'static str),
}

/// Orientation tag of a half-edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Orient {
    None,
    Out,
    In,
}

/// A finite graph: vertices, half-edges, incidence, and a fixed-point-free
/// involution (the perfect matching into edges). Optional per-vertex colors
/// and per-half-edge parity/orientation tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    pub vertex_count: usize,
    /// half-edge -> vertex
    pub incidence: Vec<u32>,
    /// fixed-point-free involution on half-edges
    pub matching: Vec<u32>,
    pub vertex_color: Vec<u32>,
    pub he_parity: Vec<u8>,
    pub he_orient: Vec<Orient>,
}

impl Graph {
    pub fn new(vertex_count: usize, incidence: Vec<u32>, matching: Vec<u32>) -> Self {
        let he = incidence.len();
        let g = Graph {
            vertex_count,
            incidence,
            matching,
            vertex_color: vec![0; vertex_count],
            he_parity: vec![0; he],
            he_orient: vec![Orient::None; he],
        };
        g.validate();
        g
    }

    pub fn with_colors(mut self, colors: Vec<u32>) -> Self {
        assert_eq!(colors.len(), self.vertex_count);
        self.vertex_color = colors;
        self
    }

    pub fn with_orientations(mut self, orient: Vec<Orient>) -> Self {
        assert_eq!(orient.len(), self.incidence.len());
        self.he_orient = orient;
        self
    }

    pub fn with_parities(mut self, parity: Vec<u8>) -> Self {
        assert_eq!(parity.len(), self.incidence.len());
        self.he_parity = parity;
        self
    }

    fn validate(&self) {
        let n = self.incidence.len();
        assert_eq!(self.matching.len(), n);
        for h in 0..n {
            let m = self.matching[h] as usize;
            assert_ne!(m, h, "matching has a fixed point");
            assert_eq!(self.matching[m] as usize, h, "matching is not an involution");
            assert!((self.incidence[h] as usize) < self.vertex_count);
        }
    }

    pub fn half_edge_count(&self) -> usize {
        self.incidence.len()
    }

    pub fn edge_count(&self) -> usize {
        self.incidence.len() / 2
    }

    /// Edges as canonical (min half-edge, max half-edge) pairs.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for h in 0..self.matching.len() as u32 {
            let m = self.matching[h as usize];
            if h < m {
                out.push((h, m));
            }
        }
        out
    }

    pub fn valency(&self, v: usize) -> usize {
        self.incidence.iter().filter(|&&u| u as usize == v).count()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count as i64 - self.edge_count() as i64
    }

    fn component_labels(&self) -> Vec<usize> {
        let mut uf: Vec<usize> = (0..self.vertex_count).collect();
        fn find(uf: &mut Vec<usize>, x: usize) -> usize {
            if uf[x] != x {
                let r = find(uf, uf[x]);
                uf[x] = r;
            }
            uf[x]
        }
        for (a, b) in self.edges() {
            let va = self.incidence[a as usize] as usize;
            let vb = self.incidence[b as usize] as usize;
            let (ra, rb) = (find(&mut uf, va), find(&mut uf, vb));
            if ra != rb {
                uf[ra] = rb;
            }
        }
        (0..self.vertex_count).map(|v| find(&mut uf, v)).collect()
    }

    pub fn is_connected(&self) -> bool {
        if self.vertex_count == 0 {
            return false; // the empty graph has zero components
        }
        let labels = self.component_labels();
        labels.iter().all(|&l| l == labels[0])
    }

    /// Number of independent loops of a connected graph (first Betti number).
    pub fn loop_number(&self) -> Result<i64, GraphError> {
        if !self.is_connected() {
            return Err(GraphError::NotConnected);
        }
        Ok(1 - self.euler_characteristic())
    }

    /// Splits into connected components (re-indexed standalone graphs).
    pub fn components(&self) -> Vec<Graph> {
        let labels = self.component_labels();
        let mut roots: Vec<usize> = labels.clone();
        roots.sort_unstable();
        roots.dedup();
        roots
            .into_iter()
            .map(|root| {
                let vmap: BTreeMap<usize, u32> = labels
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l == root)
                    .enumerate()
                    .map(|(new, (old, _))| (old, new as u32))
                    .collect();
                let hmap: BTreeMap<usize, u32> = self
                    .incidence
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| labels[v as usize] == root)
                    .enumerate()
                    .map(|(new, (old, _))| (old, new as u32))
                    .collect();
                let mut incidence = vec![0u32; hmap.len()];
                let mut matching = vec![0u32; hmap.len()];
                let mut parity = vec![0u8; hmap.len()];
                let mut orient = vec![Orient::None; hmap.len()];
                for (&old, &new) in hmap.iter() {
                    incidence[new as usize] = vmap[&(self.incidence[old] as usize)];
                    matching[new as usize] = hmap[&(self.matching[old] as usize)];
                    parity[new as usize] = self.he_parity[old];
                    orient[new as usize] = self.he_orient[old];
                }
                let colors = vmap.keys().map(|&old| self.vertex_color[old]).collect();
                Graph::new(vmap.len(), incidence, matching)
                    .with_colors(colors)
                    .with_parities(parity)
                    .with_orientations(orient)
            })
            .collect()
    }

    /// Decomposition into pairwise non-isomorphic connected components with
    /// multiplicities, sorted by canonical key.
    pub fn connected_decompose(&self) -> Vec<(Graph, usize)> {
        let mut seen: BTreeMap<String, (Graph, usize)> = BTreeMap::new();
        for comp in self.components() {
            let key = comp.canonical_key();
            seen.entry(key).or_insert_with(|| (comp, 0)).1 += 1;
        }
        seen.into_values().collect()
    }

    // -- canonical form ----------------------------------------------------

    /// Typed multigraph data: for each ordered vertex pair and edge type a
    /// multiplicity. Undirected edges are stored on (min,max) and loops on
    /// (v,v); directed edges on (tail, head) with directed loops on (v,v).
    fn typed_adjacency(&self) -> BTreeMap<(u32, u32, u8), u32> {
        let mut adj: BTreeMap<(u32, u32, u8), u32> = BTreeMap::new();
        for (a, b) in self.edges() {
            let (va, vb) = (self.incidence[a as usize], self.incidence[b as usize]);
            let directed = self.he_orient[a as usize] != Orient::None;
            let ptype = self.he_parity[a as usize].max(self.he_parity[b as usize]);
            let ty = ptype | ((directed as u8) << 1);
            let key = if directed {
                // tail = Out half-edge
                if self.he_orient[a as usize] == Orient::Out {
                    (va, vb, ty)
                } else {
                    (vb, va, ty)
                }
            } else if va <= vb {
                (va, vb, ty)
            } else {
                (vb, va, ty)
            };
            *adj.entry(key).or_insert(0) += 1;
        }
        adj
    }

    fn vertex_signature(&self) -> Vec<(u32, Vec<(Orient, u8, u32)>)> {
        // (color, sorted multiset of (orientation, parity, count) over star)
        (0..self.vertex_count)
            .map(|v| {
                let mut star: BTreeMap<(Orient, u8), u32> = BTreeMap::new();
                for h in 0..self.incidence.len() {
                    if self.incidence[h] as usize == v {
                        *star.entry((self.he_orient[h], self.he_parity[h])).or_insert(0) += 1;
                    }
                }
                (
                    self.vertex_color[v],
                    star.into_iter().map(|((o, p), c)| (o, p, c)).collect(),
                )
            })
            .collect()
    }

    /// Canonical string key: minimal serialized typed adjacency over all
    /// vertex relabelings compatible with the (color, star signature)
    /// classes. A complete isomorphism invariant for tagged graphs.
    pub fn canonical_key(&self) -> String {
        let n = self.vertex_count;
        let sigs = self.vertex_signature();
        let mut class_of: Vec<usize> = vec![0; n];
        let mut classes: Vec<(u32, Vec<(Orient, u8, u32)>)> = Vec::new();
        for v in 0..n {
            let pos = classes.iter().position(|s| *s == sigs[v]);
            class_of[v] = match pos {
                Some(p) => p,
                None => {
                    classes.push(sigs[v].clone());
                    classes.len() - 1
                }
            };
        }
        let mut class_order: Vec<usize> = (0..classes.len()).collect();
        class_order.sort_by(|&a, &b| classes[a].cmp(&classes[b]));
        let class_rank: Vec<usize> = {
            let mut r = vec![0; classes.len()];
            for (rank, &c) in class_order.iter().enumerate() {
                r[c] = rank;
            }
            r
        };
        let adj = self.typed_adjacency();
        // vertices grouped by class rank; assign new labels within groups
        let mut slots: Vec<Vec<usize>> = vec![Vec::new(); classes.len()];
        for v in 0..n {
            slots[class_rank[class_of[v]]].push(v);
        }
        let offsets: Vec<u32> = {
            let mut off = Vec::with_capacity(slots.len());
            let mut acc = 0u32;
            for s in slots.iter() {
                off.push(acc);
                acc += s.len() as u32;
            }
            off
        };
        let mut best: Option<Vec<(u32, u32, u8, u32)>> = None;
        let mut perm: Vec<u32> = vec![0; n];
        canon_rec(0, &slots, &offsets, &mut perm, &adj, &mut best);
        let entries = best.unwrap_or_default();
        let class_part: Vec<String> = class_order
            .iter()
            .map(|&c| format!("{:?}x{}", classes[c], slots[class_rank[c]].len()))
            .collect();
        format!("{};{:?}", class_part.join("|"), entries)
    }

    /// Exact order of the automorphism group: vertex automorphisms of the
    /// typed multigraph found by backtracking, times the star factors
    /// (edge-multiplicity permutations, loop flips for undirected loops).
    pub fn automorphism_order(&self) -> Rat {
        let n = self.vertex_count;
        let adj = self.typed_adjacency();
        let sigs = self.vertex_signature();
        let mut count: u64 = 0;
        let mut perm: Vec<usize> = vec![usize::MAX; n];
        let mut used = vec![false; n];
        aut_rec(0, n, &sigs, &adj, &mut perm, &mut used, &mut count);
        let mut order = Rat::from_integer(count.into());
        for (&(a, b, t), &c) in adj.iter() {
            let directed = t & 2 != 0;
            if a == b && !directed {
                order *= crate::num::factorial(c as u64);
                order *= Rat::from_integer(num_bigint::BigInt::from(2u32).pow(c));
            } else {
                order *= crate::num::factorial(c as u64);
            }
        }
        order
    }

    /// Stable serialization: canonical edge list plus tag arrays.
    pub fn serialize(&self) -> String {
        let mut s = format!(
            "vertices {}\nhalf_edges {}\n",
            self.vertex_count,
            self.incidence.len()
        );
        s.push_str("incidence");
        for v in self.incidence.iter() {
            s.push_str(&format!(" {}", v));
        }
        s.push('\n');
        s.push_str("edges");
        for (a, b) in self.edges() {
            s.push_str(&format!(" {}-{}", a, b));
        }
        s.push('\n');
        if self.vertex_color.iter().any(|&c| c != 0) {
            s.push_str("colors");
            for c in self.vertex_color.iter() {
                s.push_str(&format!(" {}", c));
            }
            s.push('\n');
        }
        if self.he_parity.iter().any(|&p| p != 0) {
            s.push_str("parity");
            for p in self.he_parity.iter() {
                s.push_str(&format!(" {}", p));
            }
            s.push('\n');
        }
        if self.he_orient.iter().any(|&o| o != Orient::None) {
            s.push_str("orient");
            for o in self.he_orient.iter() {
                s.push_str(match o {
                    Orient::None => " .",
                    Orient::Out => " >",
                    Orient::In => " <",
                });
            }
            s.push('\n');
        }
        s
    }
}

fn canon_rec(
    slot_idx: usize,
    slots: &[Vec<usize>],
    offsets: &[u32],
    perm: &mut Vec<u32>,
    adj: &BTreeMap<(u32, u32, u8), u32>,
    best: &mut Option<Vec<(u32, u32, u8, u32)>>,
) {
    if slot_idx == slots.len() {
        let mut entries: Vec<(u32, u32, u8, u32)> = adj
            .iter()
            .map(|(&(a, b, t), &c)| {
                let (pa, pb) = (perm[a as usize], perm[b as usize]);
                let directed = t & 2 != 0;
                if directed || pa <= pb {
                    (pa, pb, t, c)
                } else {
                    (pb, pa, t, c)
                }
            })
            .collect();
        entries.sort_unstable();
        match best {
            None => *best = Some(entries),
            Some(b) if entries < *b => *best = Some(entries),
            _ => {}
        }
        return;
    }
    let members = &slots[slot_idx];
    let offset = offsets[slot_idx];
    let len = members.len();
    let mut order: Vec<usize> = (0..len).collect();
    permute(&mut order, 0, &mut |arrangement| {
        for (i, &j) in arrangement.iter().enumerate() {
            perm[members[j]] = offset + i as u32;
        }
        canon_rec(slot_idx + 1, slots, offsets, perm, adj, best);
    });
}

fn aut_rec(
    v: usize,
    n: usize,
    sigs: &[(u32, Vec<(Orient, u8, u32)>)],
    adj: &BTreeMap<(u32, u32, u8), u32>,
    perm: &mut Vec<usize>,
    used: &mut Vec<bool>,
    count: &mut u64,
) {
    if v == n {
        *count += 1;
        return;
    }
    for w in 0..n {
        if !used[w] && sigs[v] == sigs[w] {
            perm[v] = w;
            used[w] = true;
            let ok = adj.iter().all(|(&(a, b, t), &c)| {
                let (a, b) = (a as usize, b as usize);
                if perm[a] == usize::MAX || perm[b] == usize::MAX {
                    return true;
                }
                let (pa, pb) = (perm[a] as u32, perm[b] as u32);
                let directed = t & 2 != 0;
                let key = if directed || pa <= pb { (pa, pb, t) } else { (pb, pa, t) };
                adj.get(&key) == Some(&c)
            });
            if ok {
                aut_rec(v + 1, n, sigs, adj, perm, used, count);
            }
            perm[v] = usize::MAX;
            used[w] = false;
        }
    }
}

/// Vertex-count-per-valency profile.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValencyProfile {
    /// valency -> number of vertices
    pub counts: BTreeMap<u32, u32>,
}

impl ValencyProfile {
    pub fn new(counts: &[(u32, u32)]) -> Self {
        ValencyProfile {
            counts: counts.iter().filter(|(_, c)| *c > 0).copied().collect(),
        }
    }

    pub fn half_edges(&self) -> usize {
        self.counts.iter().map(|(d, c)| (*d as usize) * (*c as usize)).sum()
    }

    pub fn vertex_count(&self) -> usize {
        self.counts.values().map(|&c| c as usize).sum()
    }

    /// The order of the total isomorphism group prod_d V_d! * (d!)^{V_d}.
    pub fn group_order(&self) -> Rat {
        let mut acc = Rat::one();
        for (&d, &c) in self.counts.iter() {
            acc *= crate::num::factorial(c as u64);
            for _ in 0..c {
                acc *= crate::num::factorial(d as u64);
            }
        }
        acc
    }

    /// The groupoid volume (2m-1)!! / prod V_d! d!^{V_d}.
    pub fn groupoid_volume(&self) -> Rat {
        let m = self.half_edges() / 2;
        odd_double_factorial(m as u64) / self.group_order()
    }

    /// Vertex stars: incidence list and vertex count, valencies ascending.
    pub fn stars(&self) -> (Vec<u32>, usize) {
        let mut incidence = Vec::new();
        let mut v = 0u32;
        for (&d, &c) in self.counts.iter() {
            for _ in 0..c {
                for _ in 0..d {
                    incidence.push(v);
                }
                v += 1;
            }
        }
        (incidence, v as usize)
    }
}

/// An isomorphism class of graphs in a profile.
#[derive(Debug, Clone)]
pub struct IsoClass {
    pub canonical_form: Graph,
    pub aut_order: Rat,
    /// number of labeled matchings isomorphic to this graph
    pub labeled_count: u64,
    pub key: String,
}

impl IsoClass {
    pub fn components(&self) -> Vec<(Graph, usize)> {
        self.canonical_form.connected_decompose()
    }
}

/// Walks all perfect matchings on `0..n` in deterministic order.
pub fn for_each_matching<F: FnMut(&[u32])>(n: usize, mut f: F) {
    assert!(n % 2 == 0);
    let mut matching: Vec<u32> = vec![u32::MAX; n];
    fn rec<F: FnMut(&[u32])>(matching: &mut Vec<u32>, f: &mut F) {
        let first = match matching.iter().position(|&m| m == u32::MAX) {
            Some(i) => i,
            None => {
                f(matching);
                return;
            }
        };
        for j in first + 1..matching.len() {
            if matching[j] == u32::MAX {
                matching[first] = j as u32;
                matching[j] = first as u32;
                rec(matching, f);
                matching[first] = u32::MAX;
                matching[j] = u32::MAX;
            }
        }
    }
    rec(&mut matching, &mut f);
}

/// Exhaustive enumeration of isomorphism classes for a valency profile.
/// `cap_half_edges` defaults to 16; larger profiles are refused.
pub fn enumerate(
    profile: &ValencyProfile,
    cap_half_edges: Option<usize>,
) -> Result<Vec<IsoClass>, GraphError> {
    let cap = cap_half_edges.unwrap_or(16);
    let he = profile.half_edges();
    if he % 2 != 0 {
        return Err(GraphError::OddHalfEdges);
    }
    if he > cap {
        return Err(GraphError::CapExceeded { found: he, cap });
    }
    let (incidence, nv) = profile.stars();
    let mut classes: BTreeMap<String, (Graph, u64)> = BTreeMap::new();
    if he == 0 {
        let g = Graph::new(nv, incidence, Vec::new());
        let key = g.canonical_key();
        classes.insert(key, (g, 1));
    } else {
        for_each_matching(he, |matching| {
            let g = Graph::new(nv, incidence.clone(), matching.to_vec());
            let key = g.canonical_key();
            classes.entry(key).or_insert_with(|| (g, 0)).1 += 1;
        });
    }
    let group = profile.group_order();
    let mut out = Vec::new();
    for (key, (g, count)) in classes.into_iter() {
        let aut = group.clone() / Rat::from_integer(count.into());
        out.push(IsoClass { canonical_form: g, aut_order: aut, labeled_count: count, key });
    }
    Ok(out)
}

/// Sum of 1/|Aut| over connected classes of a profile, computed by counting
/// connected matchings only (no canonicalization). Used by the Stirling
/// coefficients, where profiles exceed the default enumeration cap.
pub fn connected_groupoid_volume(profile: &ValencyProfile) -> Result<Rat, GraphError> {
    let he = profile.half_edges();
    if he % 2 != 0 {
        return Err(GraphError::OddHalfEdges);
    }
    let (incidence, nv) = profile.stars();
    if he == 0 {
        return Ok(Rat::zero()); // the empty graph is not connected
    }
    let threads = crate::io::worker_count();
    let count = if threads <= 1 || he < 8 {
        count_connected_matchings(&incidence, nv, he, None)
    } else {
        // split on the partner of half-edge 0
        let partners: Vec<usize> = (1..he).collect();
        let chunks: Vec<Vec<usize>> = partners
            .chunks(partners.len().div_ceil(threads))
            .map(|c| c.to_vec())
            .collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .iter()
                .map(|chunk| {
                    let inc = &incidence;
                    scope.spawn(move || {
                        chunk
                            .iter()
                            .map(|&p| count_connected_matchings(inc, nv, he, Some(p)))
                            .sum::<u64>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).sum()
        })
    };
    Ok(Rat::from_integer(count.into()) / profile.group_order())
}

fn count_connected_matchings(
    incidence: &[u32],
    nv: usize,
    he: usize,
    first_partner: Option<usize>,
) -> u64 {
    let mut matching: Vec<u32> = vec![u32::MAX; he];
    let mut count = 0u64;
    fn connected(incidence: &[u32], matching: &[u32], nv: usize) -> bool {
        let mut uf: Vec<usize> = (0..nv).collect();
        fn find(uf: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while uf[r] != r {
                r = uf[r];
            }
            let mut c = x;
            while uf[c] != c {
                let n = uf[c];
                uf[c] = r;
                c = n;
            }
            r
        }
        for h in 0..matching.len() {
            let m = matching[h] as usize;
            if h < m {
                let (a, b) = (incidence[h] as usize, incidence[m] as usize);
                let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
                if ra != rb {
                    uf[ra] = rb;
                }
            }
        }
        let r0 = find(&mut uf, 0);
        (1..nv).all(|v| find(&mut uf, v) == r0)
    }
    fn rec(matching: &mut Vec<u32>, incidence: &[u32], nv: usize, count: &mut u64) {
        let first = match matching.iter().position(|&m| m == u32::MAX) {
            Some(i) => i,
            None => {
                if connected(incidence, matching, nv) {
                    *count += 1;
                }
                return;
            }
        };
        for j in first + 1..matching.len() {
            if matching[j] == u32::MAX {
                matching[first] = j as u32;
                matching[j] = first as u32;
                rec(matching, incidence, nv, count);
                matching[first] = u32::MAX;
                matching[j] = u32::MAX;
            }
        }
    }
    match first_partner {
        Some(p) => {
            matching[0] = p as u32;
            matching[p] = 0;
            rec(&mut matching, incidence, nv, &mut count);
        }
        None => rec(&mut matching, incidence, nv, &mut count),
    }
    count
}

/// Kind of transfer graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferKind {
    Tree,
    OneLoop,
}

/// Enumerates connected oriented graphs with `k` leaves whose internal
/// vertices are trivalent with 2 incoming / 1 outgoing half-edges: binary
/// rooted trees, or oriented cycles with trees rooted on them.
///
/// Leaves are modelled as color-1 univalent vertices with an outgoing
/// half-edge; the tree root is a color-2 univalent vertex with an incoming
/// half-edge.
pub fn enumerate_transfer_graphs(
    k: usize,
    kind: TransferKind,
) -> Result<Vec<IsoClass>, GraphError> {
    let (internal, roots) = match kind {
        TransferKind::Tree => {
            if k < 1 {
                return Err(GraphError::InfeasibleLeaves(k, "tree"));
            }
            (k - 1, 1usize)
        }
        TransferKind::OneLoop => {
            if k < 1 {
                return Err(GraphError::InfeasibleLeaves(k, "one-loop"));
            }
            (k, 0)
        }
    };
    let mut incidence: Vec<u32> = Vec::new();
    let mut orient: Vec<Orient> = Vec::new();
    let mut colors: Vec<u32> = Vec::new();
    let mut v = 0u32;
    for _ in 0..internal {
        incidence.extend_from_slice(&[v, v, v]);
        orient.extend_from_slice(&[Orient::In, Orient::In, Orient::Out]);
        colors.push(0);
        v += 1;
    }
    for _ in 0..k {
        incidence.push(v);
        orient.push(Orient::Out);
        colors.push(1);
        v += 1;
    }
    for _ in 0..roots {
        incidence.push(v);
        orient.push(Orient::In);
        colors.push(2);
        v += 1;
    }
    let nv = v as usize;
    let outs: Vec<usize> = orient
        .iter()
        .enumerate()
        .filter(|(_, o)| **o == Orient::Out)
        .map(|(i, _)| i)
        .collect();
    let ins: Vec<usize> = orient
        .iter()
        .enumerate()
        .filter(|(_, o)| **o == Orient::In)
        .map(|(i, _)| i)
        .collect();
    if outs.len() != ins.len() {
        return Err(GraphError::OrientationInfeasible(outs.len(), ins.len()));
    }
    // total group: same-color vertex permutations x per-vertex in-slot swaps
    let mut group = crate::num::factorial(internal as u64)
        * crate::num::factorial(k as u64)
        * crate::num::factorial(roots as u64);
    for _ in 0..internal {
        group *= crate::num::int(2);
    }
    let mut classes: BTreeMap<String, (Graph, u64)> = BTreeMap::new();
    let m = outs.len();
    let mut assign: Vec<usize> = (0..m).collect();
    permute(&mut assign, 0, &mut |assignment| {
        let mut matching = vec![0u32; incidence.len()];
        for (oi, &ii) in assignment.iter().enumerate() {
            let a = outs[oi];
            let b = ins[ii];
            matching[a] = b as u32;
            matching[b] = a as u32;
        }
        let g = Graph::new(nv, incidence.clone(), matching)
            .with_colors(colors.clone())
            .with_orientations(orient.clone());
        if !g.is_connected() {
            return;
        }
        let loops = 1 - g.euler_characteristic();
        let want = match kind {
            TransferKind::Tree => 0,
            TransferKind::OneLoop => 1,
        };
        if loops != want {
            return;
        }
        let key = g.canonical_key();
        classes.entry(key).or_insert_with(|| (g, 0)).1 += 1;
    });
    Ok(classes
        .into_iter()
        .map(|(key, (g, count))| IsoClass {
            canonical_form: g,
            aut_order: group.clone() / Rat::from_integer(count.into()),
            labeled_count: count,
            key,
        })
        .collect())
}

fn permute<F: FnMut(&[usize])>(v: &mut Vec<usize>, i: usize, f: &mut F) {
    if i == v.len() {
        f(v);
        return;
    }
    for j in i..v.len() {
        v.swap(i, j);
        permute(v, i + 1, f);
        v.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{int, rat};

    #[test]
    fn census_two_trivalent() {
        // profile {V_3 = 2}: theta (aut 12) and dumbbell (aut 8)
        let profile = ValencyProfile::new(&[(3, 2)]);
        let classes = enumerate(&profile, None).unwrap();
        assert_eq!(classes.len(), 2);
        let mut auts: Vec<Rat> = classes.iter().map(|c| c.aut_order.clone()).collect();
        auts.sort();
        assert_eq!(auts, vec![int(8), int(12)]);
        let vol: Rat = classes.iter().map(|c| int(1) / c.aut_order.clone()).sum();
        assert_eq!(vol, rat(5, 24));
        assert_eq!(vol, profile.groupoid_volume());
    }

    #[test]
    fn census_figure_eight() {
        let profile = ValencyProfile::new(&[(4, 1)]);
        let classes = enumerate(&profile, None).unwrap();
        assert_eq!(classes.len(), 1);
        assert_eq!(classes[0].aut_order, int(8));
    }

    #[test]
    fn polygon_aut_orders() {
        for n in 3..=6u32 {
            let profile = ValencyProfile::new(&[(2, n)]);
            let classes = enumerate(&profile, None).unwrap();
            let polygon = classes
                .iter()
                .find(|c| {
                    c.canonical_form.is_connected()
                        && c.canonical_form.loop_number().unwrap() == 1
                        && c.canonical_form.edges().iter().all(|&(a, b)| {
                            c.canonical_form.incidence[a as usize]
                                != c.canonical_form.incidence[b as usize]
                        })
                })
                .unwrap();
            assert_eq!(polygon.aut_order, int(2 * n as i64), "n = {}", n);
        }
    }

    #[test]
    fn aut_search_matches_orbit_stabilizer() {
        for profile in [
            ValencyProfile::new(&[(3, 2)]),
            ValencyProfile::new(&[(4, 2)]),
            ValencyProfile::new(&[(1, 2), (3, 2)]),
            ValencyProfile::new(&[(2, 2), (4, 1)]),
        ] {
            for class in enumerate(&profile, None).unwrap() {
                assert_eq!(
                    class.canonical_form.automorphism_order(),
                    class.aut_order,
                    "mismatch in {:?}",
                    profile
                );
            }
        }
    }

    #[test]
    fn single_edge_aut() {
        let profile = ValencyProfile::new(&[(1, 2)]);
        let classes = enumerate(&profile, None).unwrap();
        assert_eq!(classes.len(), 1);
        assert_eq!(classes[0].aut_order, int(2));
    }

    #[test]
    fn euler_and_loops() {
        let profile = ValencyProfile::new(&[(3, 2)]);
        for class in enumerate(&profile, None).unwrap() {
            let g = &class.canonical_form;
            assert_eq!(g.euler_characteristic(), -1);
            if g.is_connected() {
                assert_eq!(g.loop_number().unwrap(), 2);
            }
        }
        let fig8 = &enumerate(&ValencyProfile::new(&[(4, 1)]), None).unwrap()[0];
        assert_eq!(fig8.canonical_form.loop_number().unwrap(), 2);
    }

    #[test]
    fn trees_have_chi_one() {
        let profile = ValencyProfile::new(&[(1, 2), (2, 2)]);
        for c in enumerate(&profile, None).unwrap() {
            if c.canonical_form.is_connected() && c.canonical_form.loop_number().unwrap() == 0 {
                assert_eq!(c.canonical_form.euler_characteristic(), 1);
            }
        }
    }

    #[test]
    fn groupoid_volume_identity_various_profiles() {
        for profile in [
            ValencyProfile::new(&[(3, 2)]),
            ValencyProfile::new(&[(4, 2)]),
            ValencyProfile::new(&[(3, 2), (4, 1)]),
            ValencyProfile::new(&[(2, 3)]),
            ValencyProfile::new(&[(1, 4), (3, 2)]),
        ] {
            let classes = enumerate(&profile, None).unwrap();
            let vol: Rat = classes.iter().map(|c| int(1) / c.aut_order.clone()).sum();
            assert_eq!(vol, profile.groupoid_volume(), "profile {:?}", profile);
        }
    }

    #[test]
    fn disconnected_aut_factorization() {
        // two disjoint single edges: aut = 2 (swap comps) * 2 * 2 = 8
        let profile = ValencyProfile::new(&[(1, 4)]);
        let classes = enumerate(&profile, None).unwrap();
        let two_edges = classes
            .iter()
            .find(|c| {
                let d = c.canonical_form.connected_decompose();
                d.len() == 1 && d[0].1 == 2
            })
            .unwrap();
        assert_eq!(two_edges.aut_order, int(8));
        assert_eq!(two_edges.canonical_form.automorphism_order(), int(8));
    }

    #[test]
    fn enumeration_deterministic() {
        let profile = ValencyProfile::new(&[(3, 2), (1, 2)]);
        let a = enumerate(&profile, None).unwrap();
        let b = enumerate(&profile, None).unwrap();
        let ka: Vec<&String> = a.iter().map(|c| &c.key).collect();
        let kb: Vec<&String> = b.iter().map(|c| &c.key).collect();
        assert_eq!(ka, kb);
    }

    #[test]
    fn canonical_idempotent_and_relabel_invariant() {
        let profile = ValencyProfile::new(&[(3, 2)]);
        for class in enumerate(&profile, None).unwrap() {
            let g = &class.canonical_form;
            let k1 = g.canonical_key();
            let n = g.vertex_count as u32;
            let relabeled = Graph::new(
                g.vertex_count,
                g.incidence.iter().map(|&v| n - 1 - v).collect(),
                g.matching.clone(),
            );
            assert_eq!(relabeled.canonical_key(), k1);
        }
    }

    #[test]
    fn cap_refusal() {
        let profile = ValencyProfile::new(&[(4, 5)]);
        match enumerate(&profile, None) {
            Err(GraphError::CapExceeded { found: 20, cap: 16 }) => {}
            other => panic!("expected cap refusal, got {:?}", other.map(|v| v.len())),
        }
    }

    #[test]
    fn odd_half_edge_total_rejected() {
        let profile = ValencyProfile::new(&[(3, 1)]);
        assert_eq!(enumerate(&profile, None).unwrap_err(), GraphError::OddHalfEdges);
    }

    #[test]
    fn empty_profile_gives_empty_graph() {
        let profile = ValencyProfile::new(&[]);
        let classes = enumerate(&profile, None).unwrap();
        assert_eq!(classes.len(), 1);
        assert_eq!(classes[0].canonical_form.vertex_count, 0);
        assert_eq!(classes[0].aut_order, int(1));
    }

    #[test]
    fn transfer_trees_small() {
        let t2 = enumerate_transfer_graphs(2, TransferKind::Tree).unwrap();
        assert_eq!(t2.len(), 1);
        assert_eq!(t2[0].aut_order, int(2));
        let t3 = enumerate_transfer_graphs(3, TransferKind::Tree).unwrap();
        assert_eq!(t3.len(), 1);
        assert_eq!(t3[0].aut_order, int(2));
    }

    #[test]
    fn transfer_one_loop_small() {
        let w1 = enumerate_transfer_graphs(1, TransferKind::OneLoop).unwrap();
        assert_eq!(w1.len(), 1);
        let w2 = enumerate_transfer_graphs(2, TransferKind::OneLoop).unwrap();
        // the wheel with two single-leaf spikes
        let wheel = w2
            .iter()
            .find(|c| c.canonical_form.vertex_count == 4)
            .unwrap();
        assert_eq!(wheel.aut_order, int(2));
    }

    #[test]
    fn oriented_two_cycle_aut() {
        let g = Graph::new(2, vec![0, 0, 1, 1], vec![2, 3, 0, 1]).with_orientations(vec![
            Orient::Out,
            Orient::In,
            Orient::Out,
            Orient::In,
        ]);
        assert_eq!(g.automorphism_order(), int(2));
    }

    #[test]
    fn connected_volume_matches_enumeration() {
        for profile in [
            ValencyProfile::new(&[(3, 2)]),
            ValencyProfile::new(&[(4, 2)]),
            ValencyProfile::new(&[(3, 4)]),
        ] {
            let classes = enumerate(&profile, None).unwrap();
            let direct: Rat = classes
                .iter()
                .filter(|c| c.canonical_form.is_connected())
                .map(|c| int(1) / c.aut_order.clone())
                .sum();
            assert_eq!(connected_groupoid_volume(&profile).unwrap(), direct);
        }
    }
}
