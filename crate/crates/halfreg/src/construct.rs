//! Deterministic construction of a realization: one simple bipartite factor
//! per color, their (multigraph) union, and the exceed-number reduction loop
//! that swaps parallel edges away until the union is the full grid.

use thiserror::Error;

use crate::model::{
    extend_with_nonedge_color, validate, ColorMatrix, ColoredRealization, DegreeMatrix,
    ValidationReport,
};

#[derive(Debug, Error)]
pub enum ConstructError {
    #[error("degree matrix fails existence conditions: {0}")]
    InvalidMatrix(ValidationReport),
    #[error("factor is infeasible: {0}")]
    Infeasible(String),
    #[error("union is already simple")]
    AlreadySimple,
    #[error("reduction case analysis exhausted: {0}")]
    CaseAnalysisExhausted(String),
}

/// 0/1 incidence matrix of one color's factor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorGraph {
    n: usize,
    m: usize,
    cells: Vec<bool>,
}

impl FactorGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.cells[u * self.m + v]
    }

    pub fn row_sum(&self, u: usize) -> usize {
        (0..self.m).filter(|&v| self.has_edge(u, v)).count()
    }

    pub fn col_sum(&self, v: usize) -> usize {
        (0..self.n).filter(|&u| self.has_edge(u, v)).count()
    }
}

/// Builds a 0/1 matrix with constant row sum `d` and column sums `f_row`.
///
/// Rows are processed in index order; each places its `d` ones on the
/// columns of largest remaining demand, ties broken by smallest index. Under
/// the preconditions the largest-residual rule never strands demand, so the
/// greedy always completes.
pub fn realize_factor(n: usize, d: usize, f_row: &[usize]) -> Result<FactorGraph, ConstructError> {
    let m = f_row.len();
    let total: usize = f_row.iter().sum();
    if n * d != total {
        return Err(ConstructError::Infeasible(format!(
            "n*d = {} but column demands sum to {total}",
            n * d
        )));
    }
    if d > m {
        return Err(ConstructError::Infeasible(format!(
            "row degree {d} exceeds {m} columns"
        )));
    }
    if let Some((v, &demand)) = f_row.iter().enumerate().find(|(_, &x)| x > n) {
        return Err(ConstructError::Infeasible(format!(
            "column {v} demands {demand} > n = {n}"
        )));
    }
    let mut residual = f_row.to_vec();
    let mut cells = vec![false; n * m];
    let mut order: Vec<usize> = (0..m).collect();
    for u in 0..n {
        order.sort_by_key(|&v| (std::cmp::Reverse(residual[v]), v));
        for &v in order.iter().take(d) {
            debug_assert!(residual[v] > 0, "greedy placement stranded demand");
            residual[v] -= 1;
            cells[u * m + v] = true;
        }
    }
    debug_assert!(residual.iter().all(|&r| r == 0));
    Ok(FactorGraph { n, m, cells })
}

/// Union of the per-color factors: an `n x m x k` 0/1 tensor plus the cached
/// pair multiplicities.
#[derive(Debug, Clone)]
pub struct MultiUnion {
    n: usize,
    m: usize,
    k: usize,
    tensor: Vec<bool>,
    mult: Vec<usize>,
}

impl MultiUnion {
    pub fn from_factors(factors: &[FactorGraph]) -> Self {
        let n = factors[0].n;
        let m = factors[0].m;
        let k = factors.len();
        let mut union = Self {
            n,
            m,
            k,
            tensor: vec![false; n * m * k],
            mult: vec![0; n * m],
        };
        for (i, g) in factors.iter().enumerate() {
            assert_eq!((g.n, g.m), (n, m));
            for u in 0..n {
                for v in 0..m {
                    if g.has_edge(u, v) {
                        union.add(u, v, i);
                    }
                }
            }
        }
        union
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn has(&self, u: usize, v: usize, i: usize) -> bool {
        self.tensor[(u * self.m + v) * self.k + i]
    }

    pub fn multiplicity(&self, u: usize, v: usize) -> usize {
        self.mult[u * self.m + v]
    }

    fn add(&mut self, u: usize, v: usize, i: usize) {
        let idx = (u * self.m + v) * self.k + i;
        assert!(!self.tensor[idx], "layer {i} already has edge ({u},{v})");
        self.tensor[idx] = true;
        self.mult[u * self.m + v] += 1;
    }

    fn remove(&mut self, u: usize, v: usize, i: usize) {
        let idx = (u * self.m + v) * self.k + i;
        assert!(self.tensor[idx], "layer {i} has no edge ({u},{v})");
        self.tensor[idx] = false;
        self.mult[u * self.m + v] -= 1;
    }

    /// Moves the color-`i` edge at column `v` from row `from` to row `to`.
    fn transfer(&mut self, from: usize, to: usize, v: usize, i: usize) {
        self.remove(from, v, i);
        self.add(to, v, i);
    }

    pub fn layer_row_sum(&self, i: usize, u: usize) -> usize {
        (0..self.m).filter(|&v| self.has(u, v, i)).count()
    }

    pub fn layer_col_sum(&self, i: usize, v: usize) -> usize {
        (0..self.n).filter(|&u| self.has(u, v, i)).count()
    }

    /// The union is the full simple grid exactly when every pair carries one
    /// edge; then each cell's unique color yields the realization.
    pub fn into_color_matrix(self) -> Result<ColorMatrix, ConstructError> {
        let mut cells = Vec::with_capacity(self.n * self.m);
        for u in 0..self.n {
            for v in 0..self.m {
                if self.multiplicity(u, v) != 1 {
                    return Err(ConstructError::CaseAnalysisExhausted(format!(
                        "pair ({u},{v}) has multiplicity {}",
                        self.multiplicity(u, v)
                    )));
                }
                let color = (0..self.k).find(|&i| self.has(u, v, i)).unwrap();
                cells.push(color);
            }
        }
        ColorMatrix::from_cells(self.n, self.m, self.k, cells)
            .map_err(|e| ConstructError::CaseAnalysisExhausted(e.to_string()))
    }
}

/// Sum over pairs of `multiplicity - 1` (clamped at zero); zero exactly for
/// simple unions.
pub fn exceed_number(union: &MultiUnion) -> usize {
    union.mult.iter().map(|&c| c.saturating_sub(1)).sum()
}

/// One round of the reduction: picks the smallest anchor pair with parallel
/// edges, grows the level sets until a resolvable column appears, and swaps
/// the chain of edges. Per-color margins are conserved and the exceed number
/// strictly decreases.
pub fn reduce_exceed_step(union: &MultiUnion) -> Result<MultiUnion, ConstructError> {
    if exceed_number(union) == 0 {
        return Err(ConstructError::AlreadySimple);
    }
    let mut out = union.clone();
    let before = exceed_number(&out);
    reduce_in_place(&mut out)?;
    assert!(
        exceed_number(&out) < before,
        "exceed number failed to decrease"
    );
    Ok(out)
}

struct Level {
    cols: Vec<usize>,
    /// Color of the unique partner-row edge at each column of `cols`.
    partner_color: Vec<usize>,
}

fn reduce_in_place(union: &mut MultiUnion) -> Result<(), ConstructError> {
    let (n, m, k) = (union.n, union.m, union.k);
    // Anchor: smallest (u, v) with parallel edges.
    let (u, v) = (0..n)
        .flat_map(|u| (0..m).map(move |v| (u, v)))
        .find(|&(u, v)| union.multiplicity(u, v) >= 2)
        .expect("caller ensured a parallel pair exists");
    let u_alt = (0..n)
        .find(|&w| union.multiplicity(w, v) == 0)
        .ok_or_else(|| {
            ConstructError::CaseAnalysisExhausted(format!(
                "no empty partner row in column {v}; instance not in equality form?"
            ))
        })?;

    let mut used = vec![false; m];
    used[v] = true;
    // Color multiset between the anchor pair; level 0 is the singleton {v}.
    let mut c_prev: Vec<usize> = (0..k).map(|i| usize::from(union.has(u, v, i))).collect();
    let mut levels: Vec<Level> = Vec::new();

    loop {
        let support: Vec<usize> = (0..k).filter(|&i| c_prev[i] > 0).collect();
        let mut frontier: Vec<usize> = Vec::new();
        for w in 0..m {
            if used[w] {
                continue;
            }
            let alt: usize = support.iter().filter(|&&i| union.has(u_alt, w, i)).count();
            let own: usize = support.iter().filter(|&&i| union.has(u, w, i)).count();
            if alt > own {
                frontier.push(w);
            }
        }
        if frontier.is_empty() {
            return Err(ConstructError::CaseAnalysisExhausted(
                "frontier became empty before a resolvable column appeared".into(),
            ));
        }

        // Cases 1 and 2 resolve identically: a column where the partner row
        // holds a chain color the anchor row lacks, and moving it over does
        // not collide.
        let resolvable = frontier.iter().copied().find(|&w| {
            union.multiplicity(u_alt, w) >= 2
                || (union.multiplicity(u_alt, w) == 1 && union.multiplicity(u, w) == 0)
        });

        if let Some(w_term) = resolvable {
            let c_term = support
                .iter()
                .copied()
                .find(|&i| union.has(u_alt, w_term, i) && !union.has(u, w_term, i))
                .expect("frontier membership guarantees a transferable color");
            union.transfer(u_alt, u, w_term, c_term);
            let mut color = c_term;
            for level in levels.iter().rev() {
                let slot = (0..level.cols.len())
                    .find(|&t| union.has(u, level.cols[t], color))
                    .expect("chain color must appear on the anchor row at this level");
                let col = level.cols[slot];
                union.transfer(u, u_alt, col, color);
                let next = level.partner_color[slot];
                union.transfer(u_alt, u, col, next);
                color = next;
            }
            union.transfer(u, u_alt, v, color);
            return Ok(());
        }

        // Case 3: every frontier column has exactly one partner-row edge
        // (colored from the chain multiset) and at least one anchor-row
        // edge. Select, per chain color, enough smallest columns to cover
        // the multiset exactly.
        let mut level = Level {
            cols: Vec::new(),
            partner_color: Vec::new(),
        };
        for &c in &support {
            let mut need = c_prev[c];
            for &w in &frontier {
                if need == 0 {
                    break;
                }
                if union.has(u_alt, w, c) && !level.cols.contains(&w) {
                    level.cols.push(w);
                    level.partner_color.push(c);
                    need -= 1;
                }
            }
            if need > 0 {
                return Err(ConstructError::CaseAnalysisExhausted(format!(
                    "cannot cover chain color {c}: {need} columns missing"
                )));
            }
        }
        let mut c_next = vec![0usize; k];
        for &w in &level.cols {
            used[w] = true;
            for i in 0..k {
                if union.has(u, w, i) {
                    c_next[i] += 1;
                }
            }
        }
        levels.push(level);
        c_prev = c_next;
    }
}

/// Result of a full construction: the equality-form instance actually
/// realized, the realization, and the exceed numbers logged across the
/// reduction loop (strictly decreasing, ending at zero).
#[derive(Debug, Clone)]
pub struct Construction {
    pub equality_matrix: DegreeMatrix,
    pub realization: ColoredRealization,
    pub exceed_trace: Vec<usize>,
    pub extended: bool,
}

pub fn construct(mat: &DegreeMatrix) -> Result<Construction, ConstructError> {
    let report = validate(mat);
    if !report.ok {
        return Err(ConstructError::InvalidMatrix(report));
    }
    let eq = extend_with_nonedge_color(mat).expect("validated instance must extend");
    let extended = eq.k() != mat.k();
    let factors: Vec<FactorGraph> = (0..eq.k())
        .map(|i| realize_factor(eq.n(), eq.row_degree(i), &eq.col_degrees()[i]))
        .collect::<Result<_, _>>()?;
    let mut union = MultiUnion::from_factors(&factors);
    let mut exceed_trace = vec![exceed_number(&union)];
    while exceed_number(&union) > 0 {
        reduce_in_place(&mut union)?;
        let ex = exceed_number(&union);
        assert!(
            ex < *exceed_trace.last().unwrap(),
            "exceed number failed to decrease"
        );
        exceed_trace.push(ex);
    }
    let realization = ColoredRealization::from_matrix(union.into_color_matrix()?);
    Ok(Construction {
        equality_matrix: eq,
        realization,
        exceed_trace,
        extended,
    })
}

/// Constructs a realization of the equality form of `mat`; with an extended
/// instance the appended color id `k` stands for non-edges.
pub fn construct_realization(mat: &DegreeMatrix) -> Result<ColoredRealization, ConstructError> {
    Ok(construct(mat)?.realization)
}
