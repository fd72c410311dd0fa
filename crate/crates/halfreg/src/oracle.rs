//! Brute-force enumeration of all realizations of small instances, used as
//! the independent oracle for the existence theorem and for sampler
//! uniformity tallies.

use thiserror::Error;

use crate::model::{validate, DegreeMatrix};

/// Default cap on `n * m`; overridable per call (the CLI maps an
/// environment variable onto it).
pub const DEFAULT_SIZE_GUARD: usize = 30;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance too large to enumerate: {cells} cells exceeds guard {guard}")]
    TooLarge { cells: usize, guard: usize },
}

#[derive(Debug, Clone)]
pub struct EnumerationResult {
    pub instance: DegreeMatrix,
    pub count: usize,
    /// Canonical row-major encodings, sorted; absent in count-only mode.
    /// When the instance is not in equality form the encodings are those of
    /// its non-edge extension (pseudo-color `k` marks empty cells).
    pub encodings: Option<Vec<String>>,
}

/// Enumerates every realization of `mat` with the default size guard.
pub fn enumerate(mat: &DegreeMatrix, count_only: bool) -> Result<EnumerationResult, OracleError> {
    enumerate_guarded(mat, count_only, DEFAULT_SIZE_GUARD, None)
}

/// Enumeration with an explicit guard and an optional early-exit limit on
/// the number of realizations found.
pub fn enumerate_guarded(
    mat: &DegreeMatrix,
    count_only: bool,
    guard: usize,
    limit: Option<usize>,
) -> Result<EnumerationResult, OracleError> {
    let cells = mat.n() * mat.m();
    if cells > guard {
        return Err(OracleError::TooLarge { cells, guard });
    }
    let mut search = Search::new(mat, count_only, limit);
    if search.feasible_setup {
        search.run(0);
    }
    let mut encodings = search.encodings;
    if let Some(list) = encodings.as_mut() {
        list.sort_unstable();
    }
    Ok(EnumerationResult {
        instance: mat.clone(),
        count: search.count,
        encodings,
    })
}

/// Backtracking search over cells in row-major order. Cell states are the k
/// colors plus a pseudo-color for "no edge"; the only pruning is that every
/// choice must have positive remaining row and column budget, so the search
/// is a faithful oracle for both directions of the existence theorem.
struct Search {
    n: usize,
    m: usize,
    slots: usize,
    row_budget: Vec<usize>,
    col_budget: Vec<usize>,
    assigned: Vec<usize>,
    count: usize,
    encodings: Option<Vec<String>>,
    limit: Option<usize>,
    feasible_setup: bool,
}

impl Search {
    fn new(mat: &DegreeMatrix, count_only: bool, limit: Option<usize>) -> Self {
        let (n, m, k) = (mat.n(), mat.m(), mat.k());
        let slots = k + 1;
        let degree_total: usize = mat.row_degrees().iter().sum();
        let mut feasible_setup = degree_total <= m;
        let mut row_template = vec![0usize; slots];
        if feasible_setup {
            for i in 0..k {
                row_template[i] = mat.row_degree(i);
            }
            row_template[k] = m - degree_total;
        }
        let mut col_budget = vec![0usize; slots * m];
        for v in 0..m {
            let col_total: usize = (0..k).map(|i| mat.col_degree(i, v)).sum();
            if col_total > n {
                feasible_setup = false;
                break;
            }
            for i in 0..k {
                col_budget[i * m + v] = mat.col_degree(i, v);
            }
            col_budget[k * m + v] = n - col_total;
        }
        // Per-row budget copies so that backtracking across row boundaries
        // needs no special casing.
        let row_budget = row_template
            .iter()
            .copied()
            .cycle()
            .take(slots * n)
            .collect();
        Self {
            n,
            m,
            slots,
            row_budget,
            col_budget,
            assigned: vec![0; n * m],
            count: 0,
            encodings: if count_only { None } else { Some(Vec::new()) },
            limit,
            feasible_setup,
        }
    }

    fn hit_limit(&self) -> bool {
        self.limit.is_some_and(|cap| self.count >= cap)
    }

    fn run(&mut self, cell: usize) {
        if cell == self.n * self.m {
            self.count += 1;
            if let Some(list) = self.encodings.as_mut() {
                let key: String = if self.slots <= 10 {
                    self.assigned
                        .iter()
                        .map(|&c| char::from_digit(c as u32, 10).unwrap())
                        .collect()
                } else {
                    let parts: Vec<String> =
                        self.assigned.iter().map(|c| c.to_string()).collect();
                    parts.join(",")
                };
                list.push(key);
            }
            return;
        }
        let u = cell / self.m;
        let v = cell % self.m;
        for c in 0..self.slots {
            if self.row_budget[u * self.slots + c] == 0 || self.col_budget[c * self.m + v] == 0 {
                continue;
            }
            self.row_budget[u * self.slots + c] -= 1;
            self.col_budget[c * self.m + v] -= 1;
            self.assigned[cell] = c;
            self.run(cell + 1);
            self.row_budget[u * self.slots + c] += 1;
            self.col_budget[c * self.m + v] += 1;
            if self.hit_limit() {
                return;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SweepBounds {
    pub max_n: usize,
    pub max_m: usize,
    pub max_k: usize,
    pub max_entry: usize,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub instances: u64,
    pub valid_instances: u64,
    pub discrepancies: Vec<String>,
}

/// Exhaustively cross-validates the existence conditions against the
/// enumeration oracle: over every half-regular matrix within the bounds,
/// `validate(M).ok` must coincide with the existence of at least one
/// realization.
pub fn verify_existence_equivalence(bounds: &SweepBounds) -> SweepReport {
    let mut report = SweepReport {
        instances: 0,
        valid_instances: 0,
        discrepancies: Vec::new(),
    };
    for n in 1..=bounds.max_n {
        for m in 1..=bounds.max_m {
            for k in 1..=bounds.max_k {
                sweep_instances(n, m, k, bounds.max_entry, &mut report);
            }
        }
    }
    report
}

fn sweep_instances(n: usize, m: usize, k: usize, max_entry: usize, report: &mut SweepReport) {
    let mut d = vec![0usize; k];
    loop {
        let mut f = vec![0usize; k * m];
        loop {
            let rows: Vec<Vec<usize>> = f.chunks(m).map(|r| r.to_vec()).collect();
            let mat = DegreeMatrix::new(n, m, k, d.clone(), rows).unwrap();
            let ok = validate(&mat).ok;
            let found = enumerate_guarded(&mat, true, usize::MAX, Some(1))
                .unwrap()
                .count
                >= 1;
            report.instances += 1;
            if ok {
                report.valid_instances += 1;
            }
            if ok != found {
                report.discrepancies.push(format!(
                    "n={n} m={m} k={k} d={d:?} f={f:?}: validate={ok}, realizations={found}"
                ));
            }
            if !advance(&mut f, max_entry) {
                break;
            }
        }
        if !advance(&mut d, max_entry) {
            break;
        }
    }
}

fn advance(digits: &mut [usize], max: usize) -> bool {
    for slot in digits.iter_mut() {
        if *slot < max {
            *slot += 1;
            return true;
        }
        *slot = 0;
    }
    false
}
