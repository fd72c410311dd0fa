//! Degree matrices, colored realizations, deficiencies and the primitive
//! column-swap operation everything else is built from.
//!
//! A half-regular instance prescribes, for every color `i`, a common degree
//! `d[i]` for all row vertices and a per-column degree `f[i][v]`. A
//! realization assigns one color to every cell of the `n x m` grid so that
//! all of these counts are met exactly.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed degree matrix: {0}")]
    Malformed(String),
    #[error("degree matrix fails existence conditions: {0}")]
    InvalidMatrix(ValidationReport),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("not a near-realization: {0}")]
    NotNearRealization(String),
    #[error("unsupported defect shape: {0}")]
    BadDefectShape(String),
}

/// Half-regular bipartite degree matrix: `n` row vertices, `m` column
/// vertices, `k` colors, row-side degrees `d[i]` (identical for every row)
/// and column-side degrees `f[i][v]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeMatrix {
    n: usize,
    m: usize,
    k: usize,
    d: Vec<usize>,
    f: Vec<Vec<usize>>,
}

impl DegreeMatrix {
    pub fn new(
        n: usize,
        m: usize,
        k: usize,
        d: Vec<usize>,
        f: Vec<Vec<usize>>,
    ) -> Result<Self, ModelError> {
        if n == 0 || m == 0 || k == 0 {
            return Err(ModelError::Malformed(format!(
                "n, m, k must all be positive (got n={n}, m={m}, k={k})"
            )));
        }
        if d.len() != k {
            return Err(ModelError::Malformed(format!(
                "d has {} entries, expected k={k}",
                d.len()
            )));
        }
        if f.len() != k {
            return Err(ModelError::Malformed(format!(
                "f has {} rows, expected k={k}",
                f.len()
            )));
        }
        for (i, row) in f.iter().enumerate() {
            if row.len() != m {
                return Err(ModelError::Malformed(format!(
                    "f row {i} has {} entries, expected m={m}",
                    row.len()
                )));
            }
        }
        Ok(Self { n, m, k, d, f })
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

    /// Row-side degree of color `i` (shared by every row vertex).
    pub fn row_degree(&self, i: usize) -> usize {
        self.d[i]
    }

    pub fn row_degrees(&self) -> &[usize] {
        &self.d
    }

    /// Column-side degree of color `i` at column `v`.
    pub fn col_degree(&self, i: usize, v: usize) -> usize {
        self.f[i][v]
    }

    pub fn col_degrees(&self) -> &[Vec<usize>] {
        &self.f
    }
}

/// One failed existence condition, with enough indices to report it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Condition 1: `n * d[i]` must equal the f-row sum of color `i`.
    DegreeSumMismatch {
        color: usize,
        row_total: usize,
        col_total: usize,
    },
    /// Condition 2: the total row degree must not exceed `m`.
    ColorBudgetExceeded { total_degree: usize, m: usize },
    /// Condition 3: column `v` must not demand more than `n` edges.
    ColumnOverfull { column: usize, total: usize, n: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DegreeSumMismatch {
                color,
                row_total,
                col_total,
            } => write!(
                out,
                "condition 1 violated for color {color}: n*d = {row_total} but f-row sums to {col_total}"
            ),
            Violation::ColorBudgetExceeded { total_degree, m } => write!(
                out,
                "condition 2 violated: total row degree {total_degree} exceeds m = {m}"
            ),
            Violation::ColumnOverfull { column, total, n } => write!(
                out,
                "condition 3 violated at column {column}: demanded {total} edges but n = {n}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub ok: bool,
    /// True when the total row degree equals `m` exactly. By the existence
    /// theorem this forces every column of a valid instance to be full.
    pub equality: bool,
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            write!(out, "ok")?;
            if self.equality {
                write!(out, " (equality case)")?;
            }
            return Ok(());
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(out, "{}", parts.join("; "))
    }
}

/// Checks the three existence conditions, reporting every violation.
pub fn validate(mat: &DegreeMatrix) -> ValidationReport {
    let mut violations = Vec::new();
    for i in 0..mat.k {
        let row_total = mat.n * mat.d[i];
        let col_total: usize = mat.f[i].iter().sum();
        if row_total != col_total {
            violations.push(Violation::DegreeSumMismatch {
                color: i,
                row_total,
                col_total,
            });
        }
    }
    let total_degree: usize = mat.d.iter().sum();
    if total_degree > mat.m {
        violations.push(Violation::ColorBudgetExceeded {
            total_degree,
            m: mat.m,
        });
    }
    for v in 0..mat.m {
        let total: usize = (0..mat.k).map(|i| mat.f[i][v]).sum();
        if total > mat.n {
            violations.push(Violation::ColumnOverfull {
                column: v,
                total,
                n: mat.n,
            });
        }
    }
    ValidationReport {
        ok: violations.is_empty(),
        equality: total_degree == mat.m,
        violations,
    }
}

/// Appends the non-edge color so that all three conditions hold with
/// equality. Instances already in equality form are returned unchanged.
pub fn extend_with_nonedge_color(mat: &DegreeMatrix) -> Result<DegreeMatrix, ModelError> {
    let report = validate(mat);
    if !report.ok {
        return Err(ModelError::InvalidMatrix(report));
    }
    if report.equality {
        return Ok(mat.clone());
    }
    let total_degree: usize = mat.d.iter().sum();
    let mut d = mat.d.clone();
    d.push(mat.m - total_degree);
    let mut f = mat.f.clone();
    let extra: Vec<usize> = (0..mat.m)
        .map(|v| mat.n - (0..mat.k).map(|i| mat.f[i][v]).sum::<usize>())
        .collect();
    f.push(extra);
    DegreeMatrix::new(mat.n, mat.m, mat.k + 1, d, f)
}

/// Dense color matrix over the full `n x m` grid. Every cell carries exactly
/// one color id in `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ColorMatrix {
    n: usize,
    m: usize,
    k: usize,
    cells: Vec<usize>,
}

impl ColorMatrix {
    pub fn from_cells(n: usize, m: usize, k: usize, cells: Vec<usize>) -> Result<Self, ModelError> {
        if cells.len() != n * m {
            return Err(ModelError::DimensionMismatch(format!(
                "expected {} cells, got {}",
                n * m,
                cells.len()
            )));
        }
        if let Some(&bad) = cells.iter().find(|&&c| c >= k) {
            return Err(ModelError::Malformed(format!(
                "cell color {bad} out of range 0..{k}"
            )));
        }
        Ok(Self { n, m, k, cells })
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

    pub fn color(&self, u: usize, v: usize) -> usize {
        self.cells[u * self.m + v]
    }

    pub fn set(&mut self, u: usize, v: usize, c: usize) {
        debug_assert!(c < self.k);
        self.cells[u * self.m + v] = c;
    }

    pub fn row(&self, u: usize) -> &[usize] {
        &self.cells[u * self.m..(u + 1) * self.m]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    /// Exchanges the colors of rows `u1` and `u2` at each listed column.
    pub fn swap_rows_at(&mut self, u1: usize, u2: usize, cols: &[usize]) {
        assert!(u1 != u2, "swap requires two distinct rows");
        for &v in cols {
            let a = self.color(u1, v);
            let b = self.color(u2, v);
            self.cells[u1 * self.m + v] = b;
            self.cells[u2 * self.m + v] = a;
        }
    }

    pub fn row_color_counts(&self, u: usize) -> Vec<usize> {
        let mut counts = vec![0usize; self.k];
        for &c in self.row(u) {
            counts[c] += 1;
        }
        counts
    }

    pub fn col_color_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.k * self.m];
        for u in 0..self.n {
            for v in 0..self.m {
                counts[self.color(u, v) * self.m + v] += 1;
            }
        }
        counts
    }

    /// Row-major concatenation of color ids; the canonical state key used
    /// for enumeration sets and sampling tallies.
    pub fn canonical_key(&self) -> String {
        if self.k <= 10 {
            self.cells
                .iter()
                .map(|c| char::from_digit(*c as u32, 10).unwrap())
                .collect()
        } else {
            let parts: Vec<String> = self.cells.iter().map(|c| c.to_string()).collect();
            parts.join(",")
        }
    }

    /// FNV-1a over dimensions and cells; stable across platforms and runs.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |x: u64| {
            for byte in x.to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(self.n as u64);
        eat(self.m as u64);
        eat(self.k as u64);
        for &c in &self.cells {
            eat(c as u64);
        }
        h
    }
}

/// A color matrix together with its cached per-column color counts.
///
/// `col_counts[i * m + v]` is the number of rows showing color `i` at column
/// `v`. Row/column swaps conserve the cache, so it is never touched by
/// `swap_cells`; a full recount is available for cross-checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColoredRealization {
    mat: ColorMatrix,
    col_counts: Vec<usize>,
}

impl ColoredRealization {
    pub fn from_matrix(mat: ColorMatrix) -> Self {
        let col_counts = mat.col_color_counts();
        Self { mat, col_counts }
    }

    pub fn from_cells(n: usize, m: usize, k: usize, cells: Vec<usize>) -> Result<Self, ModelError> {
        Ok(Self::from_matrix(ColorMatrix::from_cells(n, m, k, cells)?))
    }

    pub fn n(&self) -> usize {
        self.mat.n()
    }

    pub fn m(&self) -> usize {
        self.mat.m()
    }

    pub fn k(&self) -> usize {
        self.mat.k()
    }

    pub fn matrix(&self) -> &ColorMatrix {
        &self.mat
    }

    pub fn color(&self, u: usize, v: usize) -> usize {
        self.mat.color(u, v)
    }

    pub fn row(&self, u: usize) -> &[usize] {
        self.mat.row(u)
    }

    /// Cached count of color `i` in column `v`.
    pub fn col_count(&self, i: usize, v: usize) -> usize {
        self.col_counts[i * self.mat.m() + v]
    }

    pub fn col_counts(&self) -> &[usize] {
        &self.col_counts
    }

    /// Exchanges colors between rows `u1` and `u2` at the listed columns.
    /// Column counts are invariant under this operation, so the cache is
    /// left untouched.
    pub fn swap_cells(&mut self, u1: usize, u2: usize, cols: &[usize]) {
        debug_assert!(distinct(cols), "swap columns must be distinct");
        self.mat.swap_rows_at(u1, u2, cols);
    }

    /// Recomputes column counts from scratch (test cross-check).
    pub fn recount_col_counts(&self) -> Vec<usize> {
        self.mat.col_color_counts()
    }

    pub fn canonical_key(&self) -> String {
        self.mat.canonical_key()
    }

    pub fn content_hash(&self) -> u64 {
        self.mat.content_hash()
    }
}

fn distinct(xs: &[usize]) -> bool {
    let mut seen = xs.to_vec();
    seen.sort_unstable();
    seen.windows(2).all(|w| w[0] != w[1])
}

/// True iff `real` realizes `mat`: every row shows `d[i]` cells of color `i`
/// and every column `v` shows `f[i][v]` of them. Counts are recomputed from
/// the cells rather than trusting the cache.
pub fn check_realization(
    mat: &DegreeMatrix,
    real: &ColoredRealization,
) -> Result<bool, ModelError> {
    if real.n() != mat.n() || real.m() != mat.m() || real.k() != mat.k() {
        return Err(ModelError::DimensionMismatch(format!(
            "instance is {}x{} with {} colors, realization is {}x{} with {}",
            mat.n(),
            mat.m(),
            mat.k(),
            real.n(),
            real.m(),
            real.k()
        )));
    }
    for u in 0..mat.n() {
        if real.matrix().row_color_counts(u) != mat.row_degrees() {
            return Ok(false);
        }
    }
    let counts = real.recount_col_counts();
    for i in 0..mat.k() {
        for v in 0..mat.m() {
            if counts[i * mat.m() + v] != mat.col_degree(i, v) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// A row holding one surplus edge of color `plus` and one missing edge of
/// color `minus`, all other colors exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Deficiency {
    pub row: usize,
    pub plus: usize,
    pub minus: usize,
}

/// Per-row deficiency records of `cells` against `mat`. Rows deviating in
/// any pattern other than one `+1`/one `-1` are an error. Column constraints
/// are assumed to hold (they are not inspected here).
pub fn deficiencies(mat: &DegreeMatrix, cells: &ColorMatrix) -> Result<Vec<Deficiency>, ModelError> {
    if cells.n() != mat.n() || cells.m() != mat.m() || cells.k() != mat.k() {
        return Err(ModelError::DimensionMismatch(
            "matrix dimensions do not match the instance".into(),
        ));
    }
    let mut defects = Vec::new();
    for u in 0..mat.n() {
        let counts = cells.row_color_counts(u);
        let mut plus = None;
        let mut minus = None;
        for i in 0..mat.k() {
            let want = mat.row_degree(i);
            let got = counts[i];
            if got == want {
                continue;
            }
            if got == want + 1 && plus.is_none() {
                plus = Some(i);
            } else if want >= 1 && got == want - 1 && minus.is_none() {
                minus = Some(i);
            } else {
                return Err(ModelError::NotNearRealization(format!(
                    "row {u} has color {i} count {got}, expected {want}"
                )));
            }
        }
        match (plus, minus) {
            (None, None) => {}
            (Some(plus), Some(minus)) => defects.push(Deficiency { row: u, plus, minus }),
            _ => {
                return Err(ModelError::NotNearRealization(format!(
                    "row {u} has an unmatched surplus or shortage"
                )))
            }
        }
    }
    Ok(defects)
}

/// A color matrix whose columns meet the instance exactly while up to three
/// rows carry complementary deficiencies.
#[derive(Debug, Clone)]
pub struct NearRealization {
    mat: ColorMatrix,
    defects: Vec<Deficiency>,
}

impl NearRealization {
    /// Builds and fully validates a near-realization: exact columns, and a
    /// defect list that is empty, a complementary 2-cycle, or a 3-cycle of
    /// colors.
    pub fn from_matrix(inst: &DegreeMatrix, mat: ColorMatrix) -> Result<Self, ModelError> {
        let counts = mat.col_color_counts();
        for i in 0..inst.k() {
            for v in 0..inst.m() {
                if counts[i * inst.m() + v] != inst.col_degree(i, v) {
                    return Err(ModelError::NotNearRealization(format!(
                        "column {v} has {} cells of color {i}, expected {}",
                        counts[i * inst.m() + v],
                        inst.col_degree(i, v)
                    )));
                }
            }
        }
        let defects = normalize_defects(deficiencies(inst, &mat)?)?;
        Ok(Self { mat, defects })
    }

    pub fn matrix(&self) -> &ColorMatrix {
        &self.mat
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut ColorMatrix {
        &mut self.mat
    }

    pub fn defects(&self) -> &[Deficiency] {
        &self.defects
    }

    pub(crate) fn set_defects(&mut self, defects: Vec<Deficiency>) {
        self.defects = defects;
    }

    /// Converts a defect-free near-realization into a realization.
    pub fn into_realization(self) -> Result<ColoredRealization, ModelError> {
        if !self.defects.is_empty() {
            return Err(ModelError::BadDefectShape(format!(
                "{} defects remain",
                self.defects.len()
            )));
        }
        Ok(ColoredRealization::from_matrix(self.mat))
    }
}

/// Validates the defect list shapes accepted by the repair lemmas — empty,
/// `(u1,+a,-b)/(u2,+b,-a)`, or the 3-cycle `(u1,+a,-b)/(u2,+b,-c)/(u3,+c,-a)`
/// in either orientation — and returns the list with any 3-cycle reordered
/// into that canonical orientation.
pub fn normalize_defects(defects: Vec<Deficiency>) -> Result<Vec<Deficiency>, ModelError> {
    let cyclic = |x: &Deficiency, y: &Deficiency, z: &Deficiency| {
        x.minus == y.plus && y.minus == z.plus && z.minus == x.plus
    };
    match defects.as_slice() {
        [] => Ok(defects),
        [x, y] => {
            if x.plus == y.minus && x.minus == y.plus && x.row != y.row && x.plus != x.minus {
                Ok(defects)
            } else {
                Err(ModelError::BadDefectShape(
                    "two defects must form a complementary pair".into(),
                ))
            }
        }
        [x, y, z] => {
            let rows_distinct = x.row != y.row && y.row != z.row && x.row != z.row;
            let colors_distinct = x.plus != y.plus && y.plus != z.plus && x.plus != z.plus;
            if !(rows_distinct && colors_distinct) {
                return Err(ModelError::BadDefectShape(
                    "three defects must form a color 3-cycle on distinct rows".into(),
                ));
            }
            if cyclic(x, y, z) {
                Ok(defects)
            } else if cyclic(x, z, y) {
                Ok(vec![defects[0], defects[2], defects[1]])
            } else {
                Err(ModelError::BadDefectShape(
                    "three defects must form a color 3-cycle".into(),
                ))
            }
        }
        other => Err(ModelError::BadDefectShape(format!(
            "{} defects unsupported",
            other.len()
        ))),
    }
}

/// Shape validation without reordering.
pub fn check_defect_shape(defects: &[Deficiency]) -> Result<(), ModelError> {
    normalize_defects(defects.to_vec()).map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(n: usize, m: usize, k: usize, d: &[usize], f: &[&[usize]]) -> DegreeMatrix {
        DegreeMatrix::new(
            n,
            m,
            k,
            d.to_vec(),
            f.iter().map(|row| row.to_vec()).collect(),
        )
        .unwrap()
    }

    fn latin3() -> (DegreeMatrix, ColoredRealization) {
        let inst = mat(3, 3, 3, &[1, 1, 1], &[&[1, 1, 1], &[1, 1, 1], &[1, 1, 1]]);
        let real =
            ColoredRealization::from_cells(3, 3, 3, vec![0, 1, 2, 1, 2, 0, 2, 0, 1]).unwrap();
        (inst, real)
    }

    #[test]
    fn validate_single_color_complete() {
        let report = validate(&mat(2, 3, 1, &[3], &[&[2, 2, 2]]));
        assert!(report.ok);
        assert!(report.equality);
        assert!(report.violations.is_empty());
    }

    #[test]
    fn validate_latin_instance() {
        let (inst, _) = latin3();
        let report = validate(&inst);
        assert!(report.ok);
        assert!(report.equality);
    }

    #[test]
    fn validate_degree_sum_mismatch() {
        let report = validate(&mat(2, 2, 1, &[1], &[&[1, 2]]));
        assert!(!report.ok);
        assert_eq!(
            report.violations,
            vec![Violation::DegreeSumMismatch {
                color: 0,
                row_total: 2,
                col_total: 3,
            }]
        );
        assert!(report.to_string().contains("condition 1"));
    }

    #[test]
    fn validate_reports_every_violation() {
        // Breaks condition 1 (color 1), condition 2, and condition 3 at
        // column 0.
        let report = validate(&mat(2, 2, 2, &[2, 2], &[&[2, 2], &[3, 0]]));
        assert!(!report.ok);
        assert!(report.violations.len() >= 3);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::ColorBudgetExceeded { .. })));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::ColumnOverfull { column: 0, .. })));
    }

    #[test]
    fn extend_appends_nonedge_color() {
        let extended = extend_with_nonedge_color(&mat(2, 3, 1, &[1], &[&[1, 1, 0]])).unwrap();
        assert_eq!(extended.k(), 2);
        assert_eq!(extended.row_degrees(), &[1, 2]);
        assert_eq!(extended.col_degrees()[1], vec![1, 1, 2]);
        assert!(validate(&extended).equality);
    }

    #[test]
    fn extend_keeps_equality_instances() {
        let (inst, _) = latin3();
        assert_eq!(extend_with_nonedge_color(&inst).unwrap(), inst);
    }

    #[test]
    fn extend_all_mass_to_nonedge() {
        let extended = extend_with_nonedge_color(&mat(1, 2, 1, &[0], &[&[0, 0]])).unwrap();
        assert_eq!(extended.row_degrees(), &[0, 2]);
        assert_eq!(extended.col_degrees()[1], vec![1, 1]);
    }

    #[test]
    fn extend_rejects_invalid() {
        let err = extend_with_nonedge_color(&mat(2, 2, 1, &[1], &[&[1, 2]]));
        assert!(matches!(err, Err(ModelError::InvalidMatrix(_))));
    }

    #[test]
    fn check_realization_single_color() {
        let inst = mat(2, 3, 1, &[3], &[&[2, 2, 2]]);
        let real = ColoredRealization::from_cells(2, 3, 1, vec![0; 6]).unwrap();
        assert!(check_realization(&inst, &real).unwrap());
    }

    #[test]
    fn check_realization_latin() {
        let (inst, real) = latin3();
        assert!(check_realization(&inst, &real).unwrap());
    }

    #[test]
    fn check_realization_rejects_broken_row() {
        let (inst, real) = latin3();
        // Overwriting one cell with its row-neighbor's color breaks both a
        // row count and a column count.
        let mut cells = real.matrix().cells().to_vec();
        cells[0] = cells[1];
        let broken = ColoredRealization::from_cells(3, 3, 3, cells).unwrap();
        assert!(!check_realization(&inst, &broken).unwrap());
    }

    #[test]
    fn check_realization_dimension_mismatch() {
        let (inst, _) = latin3();
        let real = ColoredRealization::from_cells(2, 3, 1, vec![0; 6]).unwrap();
        assert!(matches!(
            check_realization(&inst, &real),
            Err(ModelError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn swap_cells_equal_colors_is_noop() {
        let (_, real) = latin3();
        let mut swapped = real.clone();
        // Rows 0 and 1 share no color in any column of a Latin square, so
        // use a non-Latin matrix instead.
        let mut other =
            ColoredRealization::from_cells(2, 2, 2, vec![0, 1, 0, 1]).unwrap();
        let before = other.clone();
        other.swap_cells(0, 1, &[0]);
        assert_eq!(other, before);
        swapped.swap_cells(0, 1, &[0]);
        assert_ne!(swapped, real);
    }

    #[test]
    fn swap_cells_single_column() {
        let (_, real) = latin3();
        let mut swapped = real.clone();
        swapped.swap_cells(0, 1, &[0]);
        assert_eq!(swapped.color(0, 0), real.color(1, 0));
        assert_eq!(swapped.color(1, 0), real.color(0, 0));
        assert_eq!(swapped.color(2, 0), real.color(2, 0));
    }

    #[test]
    fn swap_cells_is_involution_and_conserves_columns() {
        let (_, real) = latin3();
        let mut swapped = real.clone();
        swapped.swap_cells(0, 2, &[0, 2]);
        assert_eq!(swapped.col_counts(), real.col_counts());
        assert_eq!(swapped.recount_col_counts(), swapped.col_counts());
        swapped.swap_cells(0, 2, &[0, 2]);
        assert_eq!(swapped, real);
    }

    #[test]
    fn deficiencies_empty_for_realization() {
        let (inst, real) = latin3();
        assert!(deficiencies(&inst, real.matrix()).unwrap().is_empty());
    }

    #[test]
    fn deficiencies_after_single_column_swap() {
        let (inst, real) = latin3();
        let mut swapped = real.clone();
        swapped.swap_cells(0, 1, &[0]);
        let a = real.color(0, 0);
        let b = real.color(1, 0);
        assert_eq!(
            deficiencies(&inst, swapped.matrix()).unwrap(),
            vec![
                Deficiency { row: 0, plus: b, minus: a },
                Deficiency { row: 1, plus: a, minus: b },
            ]
        );
    }

    #[test]
    fn deficiencies_rejects_larger_deviation() {
        let inst = mat(1, 4, 2, &[2, 2], &[&[1, 1, 0, 0], &[0, 0, 1, 1]]);
        let cells = ColorMatrix::from_cells(1, 4, 2, vec![0, 0, 0, 0]).unwrap();
        assert!(matches!(
            deficiencies(&inst, &cells),
            Err(ModelError::NotNearRealization(_))
        ));
    }

    #[test]
    fn near_realization_validates_columns_and_shape() {
        let (inst, real) = latin3();
        let mut swapped = real.clone();
        swapped.swap_cells(0, 1, &[0]);
        let near = NearRealization::from_matrix(&inst, swapped.matrix().clone()).unwrap();
        assert_eq!(near.defects().len(), 2);

        // Overwriting a cell breaks a column count.
        let mut cells = real.matrix().cells().to_vec();
        cells[0] = cells[1];
        let broken = ColorMatrix::from_cells(3, 3, 3, cells).unwrap();
        assert!(matches!(
            NearRealization::from_matrix(&inst, broken),
            Err(ModelError::NotNearRealization(_))
        ));
    }

    #[test]
    fn defect_shapes() {
        let pair = |a: usize, b: usize| {
            vec![
                Deficiency { row: 0, plus: a, minus: b },
                Deficiency { row: 1, plus: b, minus: a },
            ]
        };
        assert!(check_defect_shape(&[]).is_ok());
        assert!(check_defect_shape(&pair(0, 1)).is_ok());
        let mut bad = pair(0, 1);
        bad[1].plus = 0;
        bad[1].minus = 0;
        assert!(check_defect_shape(&bad).is_err());
        let cycle = vec![
            Deficiency { row: 0, plus: 0, minus: 1 },
            Deficiency { row: 1, plus: 1, minus: 2 },
            Deficiency { row: 2, plus: 2, minus: 0 },
        ];
        assert!(check_defect_shape(&cycle).is_ok());
        let mut broken = cycle.clone();
        broken[2].minus = 1;
        assert!(check_defect_shape(&broken).is_err());
        assert!(check_defect_shape(&[cycle[0], cycle[1], cycle[2], cycle[0]]).is_err());
    }
}
