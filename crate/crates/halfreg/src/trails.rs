//! The auxiliary directed color multigraph built from two rows of a colored
//! matrix, trail/circuit generation with exact rational probabilities, and
//! Eulerian cycle decomposition.
//!
//! For rows `u`, `u'` the graph has one vertex per color and one edge per
//! column `v`, directed from `color(u, v)` to `color(u', v)` and labeled `v`.
//! Swapping the two cells of a column flips the direction of its edge, which
//! is what makes trails usable as repair scripts.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use rand::Rng;
use thiserror::Error;

use crate::model::ColorMatrix;

#[derive(Debug, Error)]
pub enum TrailError {
    #[error("auxiliary graph requires two distinct rows")]
    SameRow,
    #[error("degree precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("color {color} has no non-loop outgoing edge")]
    NoNonLoopEdge { color: usize },
    #[error("invalid trail: {0}")]
    InvalidTrail(String),
    #[error("color {color} is not balanced")]
    NotBalanced { color: usize },
}

/// Directed edge-labeled multigraph on colors; labels are column indices and
/// each column contributes exactly one edge.
#[derive(Debug, Clone)]
pub struct ColorMultigraph {
    k: usize,
    edges: Vec<(usize, usize)>,
    out: Vec<Vec<usize>>,
    in_deg: Vec<usize>,
}

impl ColorMultigraph {
    /// Builds the graph from two rows of a color matrix.
    pub fn build(mat: &ColorMatrix, u: usize, u2: usize) -> Result<Self, TrailError> {
        if u == u2 {
            return Err(TrailError::SameRow);
        }
        Ok(Self::from_rows(mat.k(), mat.row(u), mat.row(u2)))
    }

    /// `row_a` supplies edge tails, `row_b` edge heads.
    pub fn from_rows(k: usize, row_a: &[usize], row_b: &[usize]) -> Self {
        debug_assert_eq!(row_a.len(), row_b.len());
        let mut edges = Vec::with_capacity(row_a.len());
        let mut out = vec![Vec::new(); k];
        let mut in_deg = vec![0usize; k];
        for (v, (&a, &b)) in row_a.iter().zip(row_b).enumerate() {
            edges.push((a, b));
            out[a].push(v);
            in_deg[b] += 1;
        }
        Self { k, edges, out, in_deg }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of edges; always the number of columns of the source matrix.
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, label: usize) -> (usize, usize) {
        self.edges[label]
    }

    pub fn out_degree(&self, c: usize) -> usize {
        self.out[c].len()
    }

    pub fn in_degree(&self, c: usize) -> usize {
        self.in_deg[c]
    }

    pub fn out_labels(&self, c: usize) -> &[usize] {
        &self.out[c]
    }

    pub fn is_balanced(&self) -> bool {
        (0..self.k).all(|c| self.out_degree(c) == self.in_degree(c))
    }

    /// Ascending labels of non-loop outgoing edges of `c` not yet used.
    pub fn available(&self, c: usize, used: &[bool]) -> Vec<usize> {
        self.out[c]
            .iter()
            .copied()
            .filter(|&v| !used[v] && self.edges[v].0 != self.edges[v].1)
            .collect()
    }

    fn check_trail_precondition(&self, c_s: usize, c_e: usize) -> Result<(), TrailError> {
        for c in 0..self.k {
            if c != c_e && self.out_degree(c) < self.in_degree(c) {
                return Err(TrailError::PreconditionViolated(format!(
                    "color {c} has out-degree {} < in-degree {}",
                    self.out_degree(c),
                    self.in_degree(c)
                )));
            }
        }
        if c_s != c_e && self.out_degree(c_s) <= self.in_degree(c_s) {
            return Err(TrailError::PreconditionViolated(format!(
                "start color {c_s} needs strictly more outgoing than incoming edges"
            )));
        }
        Ok(())
    }
}

/// A trail (or circuit, when `start == end`) with its exact generation
/// probability: the product over steps of one over the number of available
/// outgoing edges at that step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trail {
    pub(crate) start: usize,
    pub(crate) labels: Vec<usize>,
    pub(crate) colors: Vec<usize>,
    pub(crate) prob: BigRational,
}

impl Trail {
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        *self.colors.last().unwrap_or(&self.start)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Colors entered by each step, in order.
    pub fn colors(&self) -> &[usize] {
        &self.colors
    }

    pub fn prob(&self) -> &BigRational {
        &self.prob
    }
}

/// Incremental trail builder shared by the random generator, the
/// deterministic finder and the kernel's step-by-step walks.
#[derive(Debug, Clone)]
pub struct TrailWalker<'a> {
    graph: &'a ColorMultigraph,
    used: Vec<bool>,
    current: usize,
    start: usize,
    target: usize,
    labels: Vec<usize>,
    colors: Vec<usize>,
    prob: BigRational,
}

impl<'a> TrailWalker<'a> {
    pub fn new(graph: &'a ColorMultigraph, start: usize, target: usize) -> Self {
        Self {
            graph,
            used: vec![false; graph.edge_count()],
            current: start,
            start,
            target,
            labels: Vec::new(),
            colors: Vec::new(),
            prob: BigRational::one(),
        }
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn steps(&self) -> usize {
        self.labels.len()
    }

    pub fn colors(&self) -> &[usize] {
        &self.colors
    }

    /// A walk is complete on its first arrival at the target; the start
    /// vertex only counts once at least one step was taken.
    pub fn arrived(&self) -> bool {
        !self.labels.is_empty() && self.current == self.target
    }

    pub fn available(&self) -> Vec<usize> {
        self.graph.available(self.current, &self.used)
    }

    /// Takes the edge `label`, charging `1/choice_count` to the probability.
    pub fn take(&mut self, label: usize, choice_count: usize) {
        debug_assert!(!self.used[label]);
        let (from, to) = self.graph.edge(label);
        debug_assert_eq!(from, self.current);
        debug_assert_ne!(from, to);
        self.used[label] = true;
        self.current = to;
        self.labels.push(label);
        self.colors.push(to);
        self.prob *= BigRational::new(BigInt::one(), BigInt::from(choice_count));
    }

    pub fn into_trail(self) -> Trail {
        Trail {
            start: self.start,
            labels: self.labels,
            colors: self.colors,
            prob: self.prob,
        }
    }
}

/// Random trail from `c_s` to `c_e` (a circuit when they coincide), stepping
/// uniformly over the available non-loop, label-unused outgoing edges.
pub fn sample_trail<R: Rng>(
    graph: &ColorMultigraph,
    c_s: usize,
    c_e: usize,
    rng: &mut R,
) -> Result<Trail, TrailError> {
    graph.check_trail_precondition(c_s, c_e)?;
    let mut walker = TrailWalker::new(graph, c_s, c_e);
    loop {
        let avail = walker.available();
        if avail.is_empty() {
            debug_assert_eq!(walker.steps(), 0, "walk can only stall on its first step");
            return Err(TrailError::NoNonLoopEdge { color: c_s });
        }
        let pick = avail[rng.gen_range(0..avail.len())];
        walker.take(pick, avail.len());
        if walker.arrived() {
            return Ok(walker.into_trail());
        }
    }
}

/// Deterministic trail from `c_s` to `c_e`: always the smallest available
/// label. Used by the repair lemmas, where any trail suffices.
pub fn find_trail_deterministic(
    graph: &ColorMultigraph,
    c_s: usize,
    c_e: usize,
) -> Result<Trail, TrailError> {
    graph.check_trail_precondition(c_s, c_e)?;
    let mut walker = TrailWalker::new(graph, c_s, c_e);
    loop {
        let avail = walker.available();
        if avail.is_empty() {
            return Err(TrailError::PreconditionViolated(format!(
                "color {c_s} has no non-loop outgoing edge"
            )));
        }
        walker.take(avail[0], avail.len());
        if walker.arrived() {
            return Ok(walker.into_trail());
        }
    }
}

/// Deterministic trail for the repair lemmas, tolerant of the 3-defect
/// degree pattern where a second color besides the target runs an edge
/// deficit. A greedy smallest-label walk can only stall at a deficit color;
/// stalling at the wrong one discards that walk and re-walks the remaining
/// edges, which then carry a single deficit at the target.
pub(crate) fn find_repair_trail(
    graph: &ColorMultigraph,
    c_s: usize,
    c_e: usize,
) -> Result<Trail, TrailError> {
    let mut used = vec![false; graph.edge_count()];
    for _attempt in 0..2 {
        let mut walker = TrailWalker::new(graph, c_s, c_e);
        let mut walked: Vec<usize> = Vec::new();
        loop {
            let avail: Vec<usize> = graph
                .available(walker.current(), &used)
                .into_iter()
                .filter(|&v| !walked.contains(&v))
                .collect();
            match avail.first() {
                Some(&label) => {
                    walked.push(label);
                    walker.take(label, avail.len());
                }
                None => break,
            }
        }
        if walker.current() == c_e && walker.steps() > 0 {
            return Ok(walker.into_trail());
        }
        if walker.steps() == 0 {
            return Err(TrailError::PreconditionViolated(format!(
                "color {c_s} has no non-loop outgoing edge"
            )));
        }
        for label in walked {
            used[label] = true;
        }
    }
    Err(TrailError::PreconditionViolated(format!(
        "no trail from {c_s} to {c_e}; degree pattern unsupported"
    )))
}

/// Recomputes the exact generation probability of an edge sequence by
/// replaying it: at every step the charge is one over the count of non-loop,
/// unused outgoing edges of the current color.
pub fn trail_probability_replay(
    graph: &ColorMultigraph,
    labels: &[usize],
) -> Result<BigRational, TrailError> {
    if labels.is_empty() {
        return Err(TrailError::InvalidTrail("empty edge sequence".into()));
    }
    let mut used = vec![false; graph.edge_count()];
    let mut prob = BigRational::one();
    let mut current = graph.edge(labels[0]).0;
    for &label in labels {
        if label >= graph.edge_count() {
            return Err(TrailError::InvalidTrail(format!("no edge labeled {label}")));
        }
        let (from, to) = graph.edge(label);
        if from != current {
            return Err(TrailError::InvalidTrail(format!(
                "edge {label} starts at color {from}, walk is at {current}"
            )));
        }
        if from == to {
            return Err(TrailError::InvalidTrail(format!("edge {label} is a loop")));
        }
        if used[label] {
            return Err(TrailError::InvalidTrail(format!("label {label} reused")));
        }
        let avail = graph.available(current, &used).len();
        debug_assert!(avail >= 1);
        prob *= BigRational::new(BigInt::one(), BigInt::from(avail));
        used[label] = true;
        current = to;
    }
    Ok(prob)
}

/// Partitions the edge set of a balanced graph into directed cycles via
/// repeated smallest-label walks; a cycle is peeled as soon as the walk
/// revisits a color, so every non-trivial cycle visits each color at most
/// once. Loops come out as one-edge cycles.
pub fn eulerian_cycle_decomposition(
    graph: &ColorMultigraph,
) -> Result<Vec<Vec<usize>>, TrailError> {
    if let Some(color) = (0..graph.k()).find(|&c| graph.out_degree(c) != graph.in_degree(c)) {
        return Err(TrailError::NotBalanced { color });
    }
    let mut used = vec![false; graph.edge_count()];
    let mut cycles = Vec::new();
    let next_unused = |c: usize, used: &[bool]| -> Option<usize> {
        graph.out_labels(c).iter().copied().find(|&v| !used[v])
    };
    for start in 0..graph.k() {
        while next_unused(start, &used).is_some() {
            let mut path_labels: Vec<usize> = Vec::new();
            let mut path_colors: Vec<usize> = vec![start];
            let mut pos_of: Vec<Option<usize>> = vec![None; graph.k()];
            pos_of[start] = Some(0);
            let mut current = start;
            loop {
                let label = match next_unused(current, &used) {
                    Some(v) => v,
                    None => {
                        debug_assert!(path_labels.is_empty());
                        break;
                    }
                };
                used[label] = true;
                let (_, to) = graph.edge(label);
                path_labels.push(label);
                path_colors.push(to);
                if let Some(p) = pos_of[to] {
                    cycles.push(path_labels[p..].to_vec());
                    for &c in &path_colors[p + 1..] {
                        if c != to {
                            pos_of[c] = None;
                        }
                    }
                    path_labels.truncate(p);
                    path_colors.truncate(p + 1);
                    current = to;
                    if path_labels.is_empty() {
                        break;
                    }
                } else {
                    pos_of[to] = Some(path_colors.len() - 1);
                    current = to;
                }
            }
        }
    }
    Ok(cycles)
}
