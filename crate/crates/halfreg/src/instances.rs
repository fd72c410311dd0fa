//! Instance builders: canonical special cases and random valid instances
//! with a known realization.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::{ColoredRealization, DegreeMatrix};

/// The all-ones `n x n` instance with `n` colors; realizations are exactly
/// the Latin squares of order `n`.
pub fn latin_instance(n: usize) -> DegreeMatrix {
    DegreeMatrix::new(n, n, n, vec![1; n], vec![vec![1; n]; n]).unwrap()
}

/// The cyclic Latin square `L[u][v] = (u + v) mod n`.
pub fn cyclic_latin_square(n: usize) -> ColoredRealization {
    let cells = (0..n)
        .flat_map(|u| (0..n).map(move |v| (u + v) % n))
        .collect();
    ColoredRealization::from_cells(n, n, n, cells).unwrap()
}

/// Random equality-form instance together with one of its realizations:
/// a random row-degree composition of `m` over `k` colors, realized by
/// independently shuffled rows; column degrees are read off the result.
pub fn random_equality_instance<R: Rng>(
    n: usize,
    m: usize,
    k: usize,
    rng: &mut R,
) -> (DegreeMatrix, ColoredRealization) {
    let mut d = vec![0usize; k];
    for _ in 0..m {
        d[rng.gen_range(0..k)] += 1;
    }
    let mut template = Vec::with_capacity(m);
    for (color, &count) in d.iter().enumerate() {
        template.extend(std::iter::repeat(color).take(count));
    }
    let mut cells = Vec::with_capacity(n * m);
    for _ in 0..n {
        let mut row = template.clone();
        row.shuffle(rng);
        cells.extend(row);
    }
    let real = ColoredRealization::from_cells(n, m, k, cells).unwrap();
    let mut f = vec![vec![0usize; m]; k];
    for (i, row) in f.iter_mut().enumerate() {
        for (v, slot) in row.iter_mut().enumerate() {
            *slot = real.col_count(i, v);
        }
    }
    let mat = DegreeMatrix::new(n, m, k, d, f).unwrap();
    (mat, real)
}

/// Random valid instance, equality-form or not: a random equality instance,
/// sometimes with its last color dropped (realizations then leave those
/// cells uncovered).
pub fn random_valid_instance<R: Rng>(
    n: usize,
    m: usize,
    k: usize,
    rng: &mut R,
) -> DegreeMatrix {
    let (mat, _) = random_equality_instance(n, m, k, rng);
    if mat.k() > 1 && rng.gen_bool(0.5) {
        let kept = mat.k() - 1;
        DegreeMatrix::new(
            n,
            m,
            kept,
            mat.row_degrees()[..kept].to_vec(),
            mat.col_degrees()[..kept].to_vec(),
        )
        .unwrap()
    } else {
        mat
    }
}
