//! Transforming realizations into each other through steps that each touch
//! at most three rows: deficiency repairs along auxiliary-graph trails,
//! cyclic permutation application with realization checkpoints, and the full
//! per-row transformation path.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ColorMatrix, ColoredRealization, NearRealization};
use crate::trails::{
    eulerian_cycle_decomposition, find_repair_trail, find_trail_deterministic, ColorMultigraph,
    TrailError,
};

#[derive(Debug, Error)]
pub enum ConnectError {
    #[error("unsupported defect shape: {0}")]
    BadDefectShape(String),
    #[error("not a cyclic permutation: {0}")]
    NotACyclicPermutation(String),
    #[error("realizations belong to different instances: {0}")]
    DifferentInstances(String),
    #[error(transparent)]
    Trail(#[from] TrailError),
}

/// One ordered batch of column swaps between two rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SwapOp {
    pub u1: usize,
    pub u2: usize,
    pub columns: Vec<usize>,
}

/// A realization-to-realization move touching at most three rows. Applying
/// the script entries in order to the predecessor yields the successor,
/// whose content hash is recorded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PerturbationStep {
    pub touched_rows: Vec<usize>,
    pub script: Vec<SwapOp>,
    pub snapshot_hash: u64,
}

impl PerturbationStep {
    pub fn apply(&self, real: &ColoredRealization) -> ColoredRealization {
        let mut next = real.clone();
        for op in &self.script {
            next.swap_cells(op.u1, op.u2, &op.columns);
        }
        next
    }
}

/// Repairs a complementary pair of deficiencies by swapping the two rows
/// along a trail between the surplus colors. Only the two defect rows
/// change.
pub fn repair_two(near: &NearRealization) -> Result<ColoredRealization, ConnectError> {
    let defects = near.defects();
    if defects.len() != 2 {
        return Err(ConnectError::BadDefectShape(format!(
            "expected 2 defects, found {}",
            defects.len()
        )));
    }
    let (a, b) = (defects[0], defects[1]);
    let mut mat = near.matrix().clone();
    let aux = ColorMultigraph::build(&mat, a.row, b.row)?;
    let trail = find_trail_deterministic(&aux, a.plus, a.minus)?;
    mat.swap_rows_at(a.row, b.row, trail.labels());
    Ok(ColoredRealization::from_matrix(mat))
}

/// Reduces a 3-cycle of deficiencies to a complementary pair: a trail
/// between the third and first surplus colors, swapped between the second
/// and third defect rows, cancels the third defect and reshapes the second.
pub fn repair_three(near: &NearRealization) -> Result<NearRealization, ConnectError> {
    let defects = near.defects();
    if defects.len() != 3 {
        return Err(ConnectError::BadDefectShape(format!(
            "expected 3 defects, found {}",
            defects.len()
        )));
    }
    let (a, b, c) = (defects[0], defects[1], defects[2]);
    let mut out = near.clone();
    let aux = ColorMultigraph::build(out.matrix(), c.row, b.row)?;
    let trail = find_repair_trail(&aux, c.plus, a.plus)?;
    out.matrix_mut().swap_rows_at(b.row, c.row, trail.labels());
    let mut reshaped = b;
    reshaped.minus = a.plus;
    out.set_defects(vec![a, reshaped]);
    Ok(out)
}

/// Builds the swap script turning `prev` into `next`; both must be
/// realizations differing on at most three rows.
fn diff_step(prev: &ColoredRealization, next: &ColoredRealization) -> PerturbationStep {
    let touched: Vec<usize> = (0..prev.n()).filter(|&u| prev.row(u) != next.row(u)).collect();
    assert!(touched.len() <= 3, "step touches {} rows", touched.len());
    let mut ops: Vec<(usize, usize, usize)> = Vec::new();
    for v in 0..prev.m() {
        let diff: Vec<usize> = touched
            .iter()
            .copied()
            .filter(|&u| prev.color(u, v) != next.color(u, v))
            .collect();
        match diff.len() {
            0 => {}
            2 => {
                debug_assert_eq!(prev.color(diff[0], v), next.color(diff[1], v));
                debug_assert_eq!(prev.color(diff[1], v), next.color(diff[0], v));
                ops.push((diff[0], diff[1], v));
            }
            3 => {
                let (a, b, c) = (diff[0], diff[1], diff[2]);
                if next.color(a, v) == prev.color(b, v)
                    && next.color(b, v) == prev.color(c, v)
                    && next.color(c, v) == prev.color(a, v)
                {
                    ops.push((a, b, v));
                    ops.push((b, c, v));
                } else {
                    debug_assert_eq!(next.color(a, v), prev.color(c, v));
                    debug_assert_eq!(next.color(c, v), prev.color(b, v));
                    debug_assert_eq!(next.color(b, v), prev.color(a, v));
                    ops.push((a, c, v));
                    ops.push((c, b, v));
                }
            }
            other => unreachable!("column {v} changed in {other} rows with conserved counts"),
        }
    }
    let mut script: Vec<SwapOp> = Vec::new();
    for (u1, u2, v) in ops {
        match script.last_mut() {
            Some(op) if op.u1 == u1 && op.u2 == u2 => op.columns.push(v),
            _ => script.push(SwapOp {
                u1,
                u2,
                columns: vec![v],
            }),
        }
    }
    PerturbationStep {
        touched_rows: touched,
        script,
        snapshot_hash: next.content_hash(),
    }
}

fn find_partner(mat: &ColorMatrix, col: usize, color: usize, exclude: usize, min: usize) -> usize {
    (min..mat.n())
        .find(|&w| w != exclude && mat.color(w, col) == color)
        .expect("a partner row carrying the needed color must exist")
}

/// Rearranges row `u` along a cyclic permutation of columns so that it
/// matches `target` there, emitting realization-to-realization steps.
///
/// The walk keeps a two-row deficiency between `u` and a partner; whenever a
/// third row gets involved the three-row state is compressed back to two
/// rows and a repaired checkpoint realization is branched off and emitted.
pub fn apply_cycle(
    real: &ColoredRealization,
    row: usize,
    cycle: &[usize],
    target: &ColoredRealization,
) -> Result<(Vec<PerturbationStep>, ColoredRealization), ConnectError> {
    apply_cycle_bounded(real, row, cycle, target, 0)
}

fn apply_cycle_bounded(
    real: &ColoredRealization,
    row: usize,
    cycle: &[usize],
    target: &ColoredRealization,
    partner_min: usize,
) -> Result<(Vec<PerturbationStep>, ColoredRealization), ConnectError> {
    if real.n() != target.n() || real.m() != target.m() || real.k() != target.k() {
        return Err(ConnectError::DifferentInstances(
            "dimension mismatch between realization and target".into(),
        ));
    }
    let r = cycle.len();
    if r == 0 {
        return Err(ConnectError::NotACyclicPermutation("empty cycle".into()));
    }
    let colors: Vec<usize> = cycle.iter().map(|&v| real.color(row, v)).collect();
    {
        let mut sorted = colors.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(ConnectError::NotACyclicPermutation(
                "cycle colors must be pairwise distinct".into(),
            ));
        }
    }
    for t in 0..r {
        if target.color(row, cycle[(t + 1) % r]) != colors[t] {
            return Err(ConnectError::NotACyclicPermutation(format!(
                "target color at column {} does not continue the cycle",
                cycle[(t + 1) % r]
            )));
        }
    }
    if r == 1 {
        return Ok((Vec::new(), real.clone()));
    }

    let mut work = real.matrix().clone();
    let mut checkpoint = real.clone();
    let mut steps = Vec::new();

    let mut partner = find_partner(&work, cycle[0], colors[r - 1], row, partner_min);
    work.swap_rows_at(row, partner, &[cycle[0]]);
    // Invariant: row has (+colors[r-1], -colors[s-1]) and partner the
    // complement, with the first s cycle columns already matching target.
    for s in 1..r - 1 {
        let q = find_partner(&work, cycle[s], colors[s - 1], row, partner_min);
        work.swap_rows_at(row, q, &[cycle[s]]);
        if q == partner {
            continue;
        }
        // Three rows deficient: compress by cancelling the old partner,
        // then branch off a repaired checkpoint.
        let aux = ColorMultigraph::build(&work, partner, q)?;
        let trail = find_repair_trail(&aux, colors[s - 1], colors[r - 1])?;
        work.swap_rows_at(partner, q, trail.labels());
        partner = q;

        let mut branch = work.clone();
        let aux = ColorMultigraph::build(&branch, row, partner)?;
        let trail = find_trail_deterministic(&aux, colors[r - 1], colors[s])?;
        branch.swap_rows_at(row, partner, trail.labels());
        let repaired = ColoredRealization::from_matrix(branch);
        steps.push(diff_step(&checkpoint, &repaired));
        checkpoint = repaired;
    }

    let q = find_partner(&work, cycle[r - 1], colors[r - 2], row, partner_min);
    work.swap_rows_at(row, q, &[cycle[r - 1]]);
    if q != partner {
        let aux = ColorMultigraph::build(&work, q, partner)?;
        let trail = find_trail_deterministic(&aux, colors[r - 1], colors[r - 2])?;
        work.swap_rows_at(q, partner, trail.labels());
    }
    let done = ColoredRealization::from_matrix(work);
    steps.push(diff_step(&checkpoint, &done));
    Ok((steps, done))
}

/// A sequence of realization-to-realization steps from `from` to `to`, each
/// touching at most three rows. Rows are matched to the target in index
/// order; fixed rows are never touched again.
pub fn transformation_path(
    from: &ColoredRealization,
    to: &ColoredRealization,
) -> Result<Vec<PerturbationStep>, ConnectError> {
    if from.n() != to.n() || from.m() != to.m() || from.k() != to.k() {
        return Err(ConnectError::DifferentInstances(
            "dimension mismatch".into(),
        ));
    }
    if from.col_counts() != to.col_counts() {
        return Err(ConnectError::DifferentInstances(
            "column color counts differ".into(),
        ));
    }
    let row_counts = from.matrix().row_color_counts(0);
    for u in 0..from.n() {
        if from.matrix().row_color_counts(u) != row_counts
            || to.matrix().row_color_counts(u) != row_counts
        {
            return Err(ConnectError::DifferentInstances(
                "row color counts differ".into(),
            ));
        }
    }

    let mut current = from.clone();
    let mut steps = Vec::new();
    for u in 0..from.n().saturating_sub(1) {
        let aux = ColorMultigraph::from_rows(from.k(), to.row(u), current.row(u));
        let cycles = eulerian_cycle_decomposition(&aux)?;
        for cycle in cycles.iter().filter(|c| c.len() >= 2) {
            let (more, next) = apply_cycle_bounded(&current, u, cycle, to, u)?;
            steps.extend(more);
            current = next;
        }
        debug_assert_eq!(current.row(u), to.row(u));
    }
    debug_assert_eq!(current, *to, "final row must be forced by column counts");
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{cyclic_latin_square, latin_instance};
    use crate::model::{check_realization, ColoredRealization, NearRealization};
    use crate::oracle::enumerate;

    fn latin3_pair() -> (crate::model::DegreeMatrix, ColoredRealization) {
        (latin_instance(3), cyclic_latin_square(3))
    }

    fn key_to_real(key: &str, n: usize, k: usize) -> ColoredRealization {
        let cells: Vec<usize> = key
            .chars()
            .map(|c| c.to_digit(10).unwrap() as usize)
            .collect();
        ColoredRealization::from_cells(n, n, k, cells).unwrap()
    }

    /// Applies the steps in order, checking validity, locality and hash at
    /// every intermediate state.
    fn validate_steps(
        inst: &crate::model::DegreeMatrix,
        from: &ColoredRealization,
        to: &ColoredRealization,
        steps: &[PerturbationStep],
    ) {
        let mut current = from.clone();
        for step in steps {
            assert!(step.touched_rows.len() <= 3);
            let next = step.apply(&current);
            assert_eq!(next.content_hash(), step.snapshot_hash);
            assert!(check_realization(inst, &next).unwrap());
            for u in 0..current.n() {
                if !step.touched_rows.contains(&u) {
                    assert_eq!(current.row(u), next.row(u), "row {u} moved unexpectedly");
                }
            }
            current = next;
        }
        assert_eq!(&current, to);
    }

    #[test]
    fn repair_two_after_single_swap() {
        let (inst, real) = latin3_pair();
        let mut broken = real.clone();
        broken.swap_cells(0, 1, &[0]);
        let near = NearRealization::from_matrix(&inst, broken.matrix().clone()).unwrap();
        let fixed = repair_two(&near).unwrap();
        assert!(check_realization(&inst, &fixed).unwrap());
        assert_eq!(fixed.row(2), real.row(2));
    }

    #[test]
    fn repair_two_with_longer_trail() {
        let (inst, real) = latin3_pair();
        let mut broken = real.clone();
        broken.swap_cells(0, 1, &[0, 1]);
        let near = NearRealization::from_matrix(&inst, broken.matrix().clone()).unwrap();
        assert_eq!(near.defects().len(), 2);
        let fixed = repair_two(&near).unwrap();
        assert!(check_realization(&inst, &fixed).unwrap());
        assert_eq!(fixed.row(2), real.row(2));
    }

    #[test]
    fn repair_two_rejects_other_defect_counts() {
        let (inst, real) = latin3_pair();
        let near = NearRealization::from_matrix(&inst, real.matrix().clone()).unwrap();
        assert!(matches!(
            repair_two(&near),
            Err(ConnectError::BadDefectShape(_))
        ));
    }

    /// Rotating the colors of one column produces the canonical 3-cycle of
    /// deficiencies while keeping every column exact.
    fn three_defect_state() -> (crate::model::DegreeMatrix, NearRealization) {
        let (inst, real) = latin3_pair();
        let mut cells = real.matrix().cells().to_vec();
        let m = real.m();
        let save = [cells[0], cells[m], cells[2 * m]];
        cells[0] = save[1];
        cells[m] = save[2];
        cells[2 * m] = save[0];
        let mat = crate::model::ColorMatrix::from_cells(3, 3, 3, cells).unwrap();
        let near = NearRealization::from_matrix(&inst, mat).unwrap();
        (inst, near)
    }

    #[test]
    fn repair_three_reduces_to_complementary_pair() {
        let (inst, near) = three_defect_state();
        assert_eq!(near.defects().len(), 3);
        let untouched = near.defects()[0].row;
        let before_row = near.matrix().row(untouched).to_vec();
        let reduced = repair_three(&near).unwrap();
        assert_eq!(reduced.defects().len(), 2);
        assert_eq!(reduced.matrix().row(untouched), before_row);
        // The reduced state must be an honest near-realization again.
        let revalidated =
            NearRealization::from_matrix(&inst, reduced.matrix().clone()).unwrap();
        assert_eq!(revalidated.defects().len(), 2);
        let fixed = repair_two(&reduced).unwrap();
        assert!(check_realization(&inst, &fixed).unwrap());
    }

    #[test]
    fn repair_three_rejects_pairs() {
        let (inst, real) = latin3_pair();
        let mut broken = real.clone();
        broken.swap_cells(0, 1, &[0]);
        let near = NearRealization::from_matrix(&inst, broken.matrix().clone()).unwrap();
        assert!(matches!(
            repair_three(&near),
            Err(ConnectError::BadDefectShape(_))
        ));
    }

    #[test]
    fn apply_cycle_identity_is_empty() {
        let (_, real) = latin3_pair();
        let (steps, done) = apply_cycle(&real, 0, &[2], &real).unwrap();
        assert!(steps.is_empty());
        assert_eq!(done, real);
    }

    #[test]
    fn apply_cycle_rejects_inconsistent_input() {
        let (_, real) = latin3_pair();
        assert!(matches!(
            apply_cycle(&real, 0, &[], &real),
            Err(ConnectError::NotACyclicPermutation(_))
        ));
        // Row 0 colors at columns 0 and 1 are distinct but the "target"
        // does not rotate them.
        assert!(matches!(
            apply_cycle(&real, 0, &[0, 1], &real),
            Err(ConnectError::NotACyclicPermutation(_))
        ));
    }

    #[test]
    fn apply_cycle_transposition_between_enumerated_squares() {
        let inst = latin_instance(4);
        let all = enumerate(&inst, false).unwrap().encodings.unwrap();
        let reals: Vec<ColoredRealization> =
            all.iter().map(|k| key_to_real(k, 4, 4)).collect();
        // Find a pair differing by a 2-cycle on row 0 and identical rows
        // elsewhere are not required: only the row-0 cycle structure is.
        let mut tested = 0;
        'outer: for a in &reals {
            for b in &reals {
                let diff: Vec<usize> = (0..4).filter(|&v| a.color(0, v) != b.color(0, v)).collect();
                if diff.len() == 2
                    && a.color(0, diff[0]) == b.color(0, diff[1])
                    && a.color(0, diff[1]) == b.color(0, diff[0])
                {
                    let cycle = vec![diff[0], diff[1]];
                    let (steps, done) = apply_cycle(a, 0, &cycle, b).unwrap();
                    let mut current = a.clone();
                    for step in &steps {
                        current = step.apply(&current);
                        assert!(check_realization(&inst, &current).unwrap());
                    }
                    assert_eq!(current, done);
                    assert_eq!(done.row(0), b.row(0));
                    tested += 1;
                    if tested >= 20 {
                        break 'outer;
                    }
                }
            }
        }
        assert!(tested > 0, "no transposition pair found");
    }

    #[test]
    fn apply_cycle_three_cycle_on_order_five() {
        let real = cyclic_latin_square(5);
        let inst = latin_instance(5);
        // Rotate three columns of row 0: target has row0 colors cycled.
        let mut target_cells = real.matrix().cells().to_vec();
        let (a, b, c) = (0usize, 1usize, 2usize);
        // Build a target row by rotating the cycle columns, then repair the
        // rest of the target square by brute force: simplest is to rotate
        // the same columns in every row block-wise, which keeps it Latin.
        let n = 5;
        for u in 0..n {
            target_cells[u * n + a] = real.color(u, b);
            target_cells[u * n + b] = real.color(u, c);
            target_cells[u * n + c] = real.color(u, a);
        }
        let target = ColoredRealization::from_cells(5, 5, 5, target_cells).unwrap();
        assert!(check_realization(&inst, &target).unwrap());
        // Row 0 cycle: target(0, pi(v)) = real(0, v) with pi = (a b c).
        let cycle = vec![b, a, c];
        for t in 0..3 {
            let v = cycle[t];
            let next = cycle[(t + 1) % 3];
            assert_eq!(target.color(0, next), real.color(0, v));
        }
        let (steps, done) = apply_cycle(&real, 0, &cycle, &target).unwrap();
        let mut current = real.clone();
        for step in &steps {
            assert!(step.touched_rows.len() <= 3);
            current = step.apply(&current);
            assert!(check_realization(&inst, &current).unwrap());
        }
        assert_eq!(current, done);
        assert_eq!(done.row(0), target.row(0));
        // Untouched columns of row 0 keep their colors.
        for v in 3..5 {
            assert_eq!(done.color(0, v), real.color(0, v));
        }
    }

    #[test]
    fn transformation_path_identity() {
        let (_, real) = latin3_pair();
        assert!(transformation_path(&real, &real).unwrap().is_empty());
    }

    #[test]
    fn transformation_path_rejects_different_instances() {
        let (_, real) = latin3_pair();
        let other = ColoredRealization::from_cells(3, 3, 3, vec![0; 9]).unwrap();
        assert!(matches!(
            transformation_path(&real, &other),
            Err(ConnectError::DifferentInstances(_))
        ));
    }

    #[test]
    fn transformation_path_connects_all_order_three_squares() {
        let inst = latin_instance(3);
        let all = enumerate(&inst, false).unwrap().encodings.unwrap();
        assert_eq!(all.len(), 12);
        let reals: Vec<ColoredRealization> =
            all.iter().map(|k| key_to_real(k, 3, 3)).collect();
        for from in &reals {
            for to in &reals {
                let steps = transformation_path(from, to).unwrap();
                validate_steps(&inst, from, to, &steps);
            }
        }
    }
}
