//! The sampling engine: a lazy three-branch random perturbation over
//! realizations with exact rational path probabilities, the paired reverse
//! path for each move, Metropolis-Hastings acceptance targeting the uniform
//! distribution, and chain diagnostics.
//!
//! Every random decision of a move is recorded; the reverse probability is
//! obtained by replaying the mirrored decision sequence through the same
//! executor in forced mode, so forward and reverse paths are priced by
//! identical code. Circuit moves reverse to circuits of equal probability;
//! triple moves pair branch-for-branch with the opposite branch.

use num_bigint::{BigInt, RandBigInt};
use num_rational::BigRational;
use num_traits::{One, Signed};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::construct::{construct, ConstructError};
use crate::model::{validate, ColorMatrix, ColoredRealization, DegreeMatrix, ValidationReport};
use crate::trails::{ColorMultigraph, TrailWalker};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("degree matrix fails existence conditions: {0}")]
    InvalidMatrix(ValidationReport),
    #[error(transparent)]
    Construct(#[from] ConstructError),
    #[error("trace is not reversible: {0}")]
    NotReversible(String),
}

/// Reasons a proposal degenerates into an identity move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BailReason {
    /// Fewer rows than the branch needs (pairs need 2, triples 3).
    TooFewRows,
    /// The drawn start color has only loop out-edges.
    NoNonLoopEdge,
    /// The pivot column carries the start color on the third row; the
    /// reverse circuit prefix would have to be a complete circuit, which the
    /// mirror branch cannot produce.
    PivotClosesCircuit,
    /// The repair trail entered the pivot color early; the mirrored walk
    /// would terminate there and could not reach the cut.
    RepairHitsPivotColor,
    /// The trail ended before the drawn cut position.
    CutBeyondTrail,
    /// The cut position fails the qualification (first occurrence of its
    /// color, with a matching pivot column available).
    CutUnqualified,
}

/// Decision record of a full-circuit move between two rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CircuitDecisions {
    pub mirror: bool,
    pub rows: (usize, usize),
    pub start_color: usize,
    /// The drawn threshold; always at least the circuit length.
    pub l: usize,
    pub labels: Vec<usize>,
}

/// Decision record of a three-row move.
///
/// With `mirror = false` (branch II): `second` is the circuit-prefix
/// partner, `third` the pivot row, `repair` runs between `second` and
/// `third`, and `last` between `first` and `third`. With `mirror = true`
/// (branch III) the roles of `second` and `third` swap stages accordingly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleDecisions {
    pub mirror: bool,
    pub first: usize,
    pub second: usize,
    pub third: usize,
    pub start_color: usize,
    /// Circuit-prefix labels; the drawn integer `l` equals their count.
    pub prefix: Vec<usize>,
    /// Mirror branch only: the drawn truncation index (equals
    /// `repair.len()`).
    pub cut: Option<usize>,
    pub repair: Vec<usize>,
    pub pivot: usize,
    pub last: Vec<usize>,
}

impl TripleDecisions {
    /// The unique paired reverse decisions under the opposite branch.
    pub fn mirrored(&self) -> TripleDecisions {
        TripleDecisions {
            mirror: !self.mirror,
            first: self.first,
            second: self.third,
            third: self.second,
            start_color: self.start_color,
            prefix: reversed(&self.last),
            cut: if self.mirror { None } else { Some(self.repair.len()) },
            repair: self.repair.clone(),
            pivot: self.pivot,
            last: reversed(&self.prefix),
        }
    }
}

fn reversed(labels: &[usize]) -> Vec<usize> {
    let mut out = labels.to_vec();
    out.reverse();
    out
}

#[derive(Debug, Clone)]
pub struct CircuitTrace {
    pub decisions: CircuitDecisions,
    pub p_fwd: BigRational,
    pub p_rev: BigRational,
}

#[derive(Debug, Clone)]
pub struct TripleTrace {
    pub decisions: TripleDecisions,
    pub p_fwd: BigRational,
    pub p_rev: BigRational,
    /// Snapshot after the pivot stage (branch II) or after the truncated
    /// repair trail (branch III).
    pub g_tilde: ColorMatrix,
    /// Snapshot after the repair trail (branch II) or after the circuit
    /// prefix (branch III).
    pub g_bar: ColorMatrix,
}

#[derive(Debug, Clone)]
pub enum ProposalKind {
    Lazy,
    IdentityBail(BailReason),
    Circuit(CircuitTrace),
    Triple(TripleTrace),
}

/// Full record of one proposal: the state it was made from, the proposed
/// state, and the decision paths with their exact probabilities.
#[derive(Debug, Clone)]
pub struct ProposalTrace {
    pub origin: ColoredRealization,
    pub proposed: ColoredRealization,
    pub kind: ProposalKind,
}

impl ProposalTrace {
    pub fn is_identity(&self) -> bool {
        matches!(self.kind, ProposalKind::Lazy | ProposalKind::IdentityBail(_))
    }

    /// Exact forward path probability (constant branch factors omitted;
    /// they cancel in every ratio). Identity proposals report 1.
    pub fn p_fwd(&self) -> BigRational {
        match &self.kind {
            ProposalKind::Lazy | ProposalKind::IdentityBail(_) => BigRational::one(),
            ProposalKind::Circuit(c) => c.p_fwd.clone(),
            ProposalKind::Triple(t) => t.p_fwd.clone(),
        }
    }

    pub fn p_rev(&self) -> BigRational {
        match &self.kind {
            ProposalKind::Lazy | ProposalKind::IdentityBail(_) => BigRational::one(),
            ProposalKind::Circuit(c) => c.p_rev.clone(),
            ProposalKind::Triple(t) => t.p_rev.clone(),
        }
    }

    pub fn branch_name(&self) -> &'static str {
        match &self.kind {
            ProposalKind::Lazy => "Lazy",
            ProposalKind::IdentityBail(_) => "IdentityBail",
            ProposalKind::Circuit(c) if !c.decisions.mirror => "CircuitII",
            ProposalKind::Circuit(_) => "CircuitIII",
            ProposalKind::Triple(t) if !t.decisions.mirror => "TripleII",
            ProposalKind::Triple(_) => "TripleIII",
        }
    }
}

/// Uniform choice source: live randomness for proposing, a recorded value
/// stream for replaying a paired path.
trait DrawPolicy {
    /// Uniform draw from `0..bound`.
    fn pick_index(&mut self, bound: usize) -> Result<usize, ReplayViolation>;
    /// Uniform draw of a member of the ascending `options` slice.
    fn pick_member(&mut self, options: &[usize]) -> Result<usize, ReplayViolation>;
}

#[derive(Debug)]
struct ReplayViolation(String);

struct RandomDraw<'a, R: Rng> {
    rng: &'a mut R,
}

impl<R: Rng> DrawPolicy for RandomDraw<'_, R> {
    fn pick_index(&mut self, bound: usize) -> Result<usize, ReplayViolation> {
        debug_assert!(bound > 0);
        Ok(self.rng.gen_range(0..bound))
    }

    fn pick_member(&mut self, options: &[usize]) -> Result<usize, ReplayViolation> {
        debug_assert!(!options.is_empty());
        Ok(options[self.rng.gen_range(0..options.len())])
    }
}

struct ForcedDraw<'a> {
    values: &'a [usize],
    cursor: usize,
}

impl<'a> ForcedDraw<'a> {
    fn new(values: &'a [usize]) -> Self {
        Self { values, cursor: 0 }
    }

    fn next(&mut self) -> Result<usize, ReplayViolation> {
        let v = self
            .values
            .get(self.cursor)
            .copied()
            .ok_or_else(|| ReplayViolation("forced decision stream exhausted".into()))?;
        self.cursor += 1;
        Ok(v)
    }

    fn finished(&self) -> bool {
        self.cursor == self.values.len()
    }
}

impl DrawPolicy for ForcedDraw<'_> {
    fn pick_index(&mut self, bound: usize) -> Result<usize, ReplayViolation> {
        let v = self.next()?;
        if v >= bound {
            return Err(ReplayViolation(format!(
                "forced value {v} out of range 0..{bound}"
            )));
        }
        Ok(v)
    }

    fn pick_member(&mut self, options: &[usize]) -> Result<usize, ReplayViolation> {
        let v = self.next()?;
        if options.binary_search(&v).is_err() {
            return Err(ReplayViolation(format!(
                "forced value {v} not among {} available options",
                options.len()
            )));
        }
        Ok(v)
    }
}

/// Raw decision values in executor draw order, used to drive forced
/// replays.
fn circuit_values(d: &CircuitDecisions) -> Vec<usize> {
    let mut v = vec![d.rows.0, d.rows.1, d.start_color, d.l - 1];
    v.extend(&d.labels);
    v
}

fn triple_values(d: &TripleDecisions) -> Vec<usize> {
    let mut v = vec![d.first, d.second, d.start_color, d.prefix.len() - 1];
    v.extend(&d.prefix);
    v.push(d.third);
    match d.cut {
        // Mirror branch order: cut draw, repair walk, pivot column.
        Some(cut) => {
            v.push(cut - 1);
            v.extend(&d.repair);
            v.push(d.pivot);
        }
        // Primary branch order: pivot column, then the repair walk.
        None => {
            v.push(d.pivot);
            v.extend(&d.repair);
        }
    }
    v.extend(&d.last);
    v
}

enum ExecOutcome {
    Bail(BailReason),
    Circuit {
        decisions: CircuitDecisions,
        prob: BigRational,
        result: ColorMatrix,
    },
    Triple {
        decisions: TripleDecisions,
        prob: BigRational,
        result: ColorMatrix,
        g_tilde: ColorMatrix,
        g_bar: ColorMatrix,
    },
}

fn charge(prob: &mut BigRational, count: usize) {
    *prob *= BigRational::new(BigInt::one(), BigInt::from(count));
}

fn rows_excluding(n: usize, excluded: &[usize]) -> Vec<usize> {
    (0..n).filter(|r| !excluded.contains(r)).collect()
}

/// One branch of the perturbation algorithm, shared between live proposing
/// and forced replay. `mirror = false` runs the primary branch (circuit
/// prefix between the first two rows, repair trail through the third);
/// `mirror = true` runs its stage-reversed twin with the cut draw.
fn run_branch(
    origin: &ColorMatrix,
    mirror: bool,
    policy: &mut dyn DrawPolicy,
) -> Result<ExecOutcome, ReplayViolation> {
    let n = origin.n();
    let m = origin.m();
    let k = origin.k();
    if n < 2 {
        return Ok(ExecOutcome::Bail(BailReason::TooFewRows));
    }
    let mut prob = BigRational::one();

    let u = policy.pick_member(&rows_excluding(n, &[]))?;
    charge(&mut prob, n);
    let mate = policy.pick_member(&rows_excluding(n, &[u]))?;
    charge(&mut prob, n - 1);
    let c0 = policy.pick_index(k)?;
    charge(&mut prob, k);

    let mut state = origin.clone();
    let aux = ColorMultigraph::build(&state, u, mate).expect("rows are distinct");
    if aux.available(c0, &vec![false; m]).is_empty() {
        return Ok(ExecOutcome::Bail(BailReason::NoNonLoopEdge));
    }

    let l = policy.pick_index(m)? + 1;
    charge(&mut prob, m);

    // Circuit walk from c0 back to c0, truncated after l steps.
    let mut walker = TrailWalker::new(&aux, c0, c0);
    while walker.steps() < l {
        let avail = walker.available();
        debug_assert!(!avail.is_empty(), "balanced walks cannot stall");
        let label = policy.pick_member(&avail)?;
        charge(&mut prob, avail.len());
        walker.take(label, avail.len());
        if walker.arrived() {
            // Full circuit applied between the two rows.
            let labels = walker.into_trail().labels().to_vec();
            state.swap_rows_at(u, mate, &labels);
            return Ok(ExecOutcome::Circuit {
                decisions: CircuitDecisions {
                    mirror,
                    rows: (u, mate),
                    start_color: c0,
                    l,
                    labels,
                },
                prob,
                result: state,
            });
        }
    }
    if n < 3 {
        return Ok(ExecOutcome::Bail(BailReason::TooFewRows));
    }

    let prefix_trail = walker.into_trail();
    let prefix: Vec<usize> = prefix_trail.labels().to_vec();
    let prefix_end = prefix_trail.end();
    debug_assert_ne!(prefix_end, c0);
    state.swap_rows_at(u, mate, &prefix);

    let third = policy.pick_member(&rows_excluding(n, &[u, mate]))?;
    charge(&mut prob, n - 2);

    if !mirror {
        // Primary branch: pivot at a column showing the prefix-end color on
        // the first row, then repair trails through the third row.
        let c = prefix_end;
        let pivot_options: Vec<usize> = (0..m).filter(|&v| state.color(u, v) == c).collect();
        debug_assert_eq!(
            pivot_options.len(),
            origin.row(u).iter().filter(|&&x| x == c).count() + 1,
            "pivot candidates must be the surplus count"
        );
        let pivot = policy.pick_member(&pivot_options)?;
        charge(&mut prob, pivot_options.len());
        let c_alt = state.color(third, pivot);
        if c_alt == c0 {
            return Ok(ExecOutcome::Bail(BailReason::PivotClosesCircuit));
        }
        state.swap_rows_at(u, third, &[pivot]);
        let g_tilde = state.clone();

        // Repair trail from c0 to c between mate and third; entering the
        // pivot color early would make the mirrored walk stop there.
        let aux = ColorMultigraph::build(&state, mate, third).expect("distinct rows");
        let mut walker = TrailWalker::new(&aux, c0, c);
        loop {
            let avail = walker.available();
            debug_assert!(!avail.is_empty(), "repair walks cannot stall");
            let label = policy.pick_member(&avail)?;
            charge(&mut prob, avail.len());
            walker.take(label, avail.len());
            if walker.arrived() {
                break;
            }
            if walker.current() == c_alt {
                return Ok(ExecOutcome::Bail(BailReason::RepairHitsPivotColor));
            }
        }
        let repair: Vec<usize> = walker.into_trail().labels().to_vec();
        state.swap_rows_at(mate, third, &repair);
        let g_bar = state.clone();

        let aux = ColorMultigraph::build(&state, u, third).expect("distinct rows");
        let last = walk_to_target(&aux, c_alt, c0, policy, &mut prob)?;
        state.swap_rows_at(u, third, &last);

        Ok(ExecOutcome::Triple {
            decisions: TripleDecisions {
                mirror,
                first: u,
                second: mate,
                third,
                start_color: c0,
                prefix,
                cut: None,
                repair,
                pivot,
                last,
            },
            prob,
            result: state,
            g_tilde,
            g_bar,
        })
    } else {
        // Mirror branch: the prefix ran between the first and third-stage
        // rows; a trail toward the prefix-end color is drawn between `mate`
        // and the freshly drawn row, truncated at an exactly replayable cut.
        let c_pivot = prefix_end;
        let g_bar = state.clone();
        let aux = ColorMultigraph::build(&state, mate, third).expect("distinct rows");
        let cut = policy.pick_index(m)? + 1;
        charge(&mut prob, m);
        let mut walker = TrailWalker::new(&aux, c0, c_pivot);
        while walker.steps() < cut {
            let avail = walker.available();
            debug_assert!(!avail.is_empty(), "repair walks cannot stall");
            let label = policy.pick_member(&avail)?;
            charge(&mut prob, avail.len());
            walker.take(label, avail.len());
            if walker.arrived() && walker.steps() < cut {
                return Ok(ExecOutcome::Bail(BailReason::CutBeyondTrail));
            }
        }
        let cut_color = walker.current();
        let first_occurrence = cut_color != c0
            && !walker.colors()[..cut - 1].contains(&cut_color);
        let repair: Vec<usize> = walker.into_trail().labels().to_vec();
        state.swap_rows_at(mate, third, &repair);
        let g_tilde = state.clone();
        let pivot_options: Vec<usize> = (0..m)
            .filter(|&v| state.color(u, v) == c_pivot && state.color(mate, v) == cut_color)
            .collect();
        if !first_occurrence || pivot_options.is_empty() {
            return Ok(ExecOutcome::Bail(BailReason::CutUnqualified));
        }
        let pivot = policy.pick_member(&pivot_options)?;
        charge(&mut prob, pivot_options.len());
        state.swap_rows_at(u, mate, &[pivot]);

        let aux = ColorMultigraph::build(&state, u, third).expect("distinct rows");
        let last = walk_to_target(&aux, cut_color, c0, policy, &mut prob)?;
        state.swap_rows_at(u, third, &last);

        Ok(ExecOutcome::Triple {
            decisions: TripleDecisions {
                mirror,
                first: u,
                second: mate,
                third,
                start_color: c0,
                prefix,
                cut: Some(cut),
                repair,
                pivot,
                last,
            },
            prob,
            result: state,
            g_tilde,
            g_bar,
        })
    }
}

fn walk_to_target(
    aux: &ColorMultigraph,
    start: usize,
    target: usize,
    policy: &mut dyn DrawPolicy,
    prob: &mut BigRational,
) -> Result<Vec<usize>, ReplayViolation> {
    let mut walker = TrailWalker::new(aux, start, target);
    loop {
        let avail = walker.available();
        debug_assert!(!avail.is_empty(), "imbalanced walks cannot stall");
        let label = policy.pick_member(&avail)?;
        charge(prob, avail.len());
        walker.take(label, avail.len());
        if walker.arrived() {
            return Ok(walker.into_trail().labels().to_vec());
        }
    }
}

/// Replays the mirrored decisions of a completed move against its result,
/// returning the reverse probability and the restored state.
fn replay_reverse(
    proposed: &ColorMatrix,
    kind_mirror: bool,
    values: &[usize],
) -> Result<(BigRational, ColorMatrix), KernelError> {
    let mut forced = ForcedDraw::new(values);
    let outcome = run_branch(proposed, kind_mirror, &mut forced)
        .map_err(|e| KernelError::NotReversible(e.0))?;
    if !forced.finished() {
        return Err(KernelError::NotReversible(
            "replay left unread decisions".into(),
        ));
    }
    match outcome {
        ExecOutcome::Bail(reason) => Err(KernelError::NotReversible(format!(
            "reverse replay bailed: {reason:?}"
        ))),
        ExecOutcome::Circuit { prob, result, .. } | ExecOutcome::Triple { prob, result, .. } => {
            Ok((prob, result))
        }
    }
}

/// Draws one random perturbation of `state` with its exact forward and
/// reverse path probabilities. Never fails: degenerate draws come back as
/// identity proposals with the reason recorded.
pub fn propose<R: Rng>(state: &ColoredRealization, rng: &mut R) -> ProposalTrace {
    if rng.gen_bool(0.5) {
        return ProposalTrace {
            origin: state.clone(),
            proposed: state.clone(),
            kind: ProposalKind::Lazy,
        };
    }
    let mirror = rng.gen_bool(0.5);
    let mut policy = RandomDraw { rng };
    let outcome =
        run_branch(state.matrix(), mirror, &mut policy).expect("random draws cannot violate");
    match outcome {
        ExecOutcome::Bail(reason) => ProposalTrace {
            origin: state.clone(),
            proposed: state.clone(),
            kind: ProposalKind::IdentityBail(reason),
        },
        ExecOutcome::Circuit {
            decisions,
            prob,
            result,
        } => {
            let rev = CircuitDecisions {
                mirror: decisions.mirror,
                rows: decisions.rows,
                start_color: decisions.start_color,
                l: decisions.l,
                labels: reversed(&decisions.labels),
            };
            let (p_rev, restored) = replay_reverse(&result, rev.mirror, &circuit_values(&rev))
                .expect("circuit moves always reverse");
            assert_eq!(restored, *state.matrix(), "circuit reverse must restore");
            assert_eq!(p_rev, prob, "circuit reverses have equal probability");
            ProposalTrace {
                origin: state.clone(),
                proposed: ColoredRealization::from_matrix(result),
                kind: ProposalKind::Circuit(CircuitTrace {
                    decisions,
                    p_fwd: prob,
                    p_rev,
                }),
            }
        }
        ExecOutcome::Triple {
            decisions,
            prob,
            result,
            g_tilde,
            g_bar,
        } => {
            let rev = decisions.mirrored();
            let (p_rev, restored) = replay_reverse(&result, rev.mirror, &triple_values(&rev))
                .expect("completed triple moves always reverse");
            assert_eq!(restored, *state.matrix(), "triple reverse must restore");
            ProposalTrace {
                origin: state.clone(),
                proposed: ColoredRealization::from_matrix(result),
                kind: ProposalKind::Triple(TripleTrace {
                    decisions,
                    p_fwd: prob,
                    p_rev,
                    g_tilde,
                    g_bar,
                }),
            }
        }
    }
}

/// The unique paired inverse of a non-identity trace: same rows seen from
/// the opposite branch, reversed circuit prefixes, identical repair labels.
/// Double reversal reproduces the original decision sequence.
pub fn reverse_trace(trace: &ProposalTrace) -> Result<ProposalTrace, KernelError> {
    match &trace.kind {
        ProposalKind::Lazy | ProposalKind::IdentityBail(_) => Err(KernelError::NotReversible(
            "identity proposals have no paired reverse".into(),
        )),
        ProposalKind::Circuit(c) => {
            let rev = CircuitDecisions {
                mirror: c.decisions.mirror,
                rows: c.decisions.rows,
                start_color: c.decisions.start_color,
                l: c.decisions.l,
                labels: reversed(&c.decisions.labels),
            };
            let (p, restored) =
                replay_reverse(trace.proposed.matrix(), rev.mirror, &circuit_values(&rev))?;
            if restored != *trace.origin.matrix() {
                return Err(KernelError::NotReversible(
                    "reverse circuit did not restore the origin".into(),
                ));
            }
            Ok(ProposalTrace {
                origin: trace.proposed.clone(),
                proposed: trace.origin.clone(),
                kind: ProposalKind::Circuit(CircuitTrace {
                    decisions: rev,
                    p_fwd: p,
                    p_rev: c.p_fwd.clone(),
                }),
            })
        }
        ProposalKind::Triple(t) => {
            let rev = t.decisions.mirrored();
            let values = triple_values(&rev);
            let mut forced = ForcedDraw::new(&values);
            let outcome = run_branch(trace.proposed.matrix(), rev.mirror, &mut forced)
                .map_err(|e| KernelError::NotReversible(e.0))?;
            match outcome {
                ExecOutcome::Triple {
                    decisions,
                    prob,
                    result,
                    g_tilde,
                    g_bar,
                } => {
                    if result != *trace.origin.matrix() {
                        return Err(KernelError::NotReversible(
                            "reverse triple did not restore the origin".into(),
                        ));
                    }
                    debug_assert_eq!(decisions, rev);
                    Ok(ProposalTrace {
                        origin: trace.proposed.clone(),
                        proposed: trace.origin.clone(),
                        kind: ProposalKind::Triple(TripleTrace {
                            decisions,
                            p_fwd: prob,
                            p_rev: t.p_fwd.clone(),
                            g_tilde,
                            g_bar,
                        }),
                    })
                }
                ExecOutcome::Circuit { .. } => Err(KernelError::NotReversible(
                    "reverse of a triple replayed as a circuit".into(),
                )),
                ExecOutcome::Bail(reason) => Err(KernelError::NotReversible(format!(
                    "reverse replay bailed: {reason:?}"
                ))),
            }
        }
    }
}

/// Metropolis-Hastings acceptance probability for the uniform target:
/// `min(1, pRev/pFwd)`. Circuit and identity moves are always 1.
pub fn acceptance_ratio(trace: &ProposalTrace) -> BigRational {
    match &trace.kind {
        ProposalKind::Lazy | ProposalKind::IdentityBail(_) => BigRational::one(),
        ProposalKind::Circuit(c) => {
            debug_assert_eq!(c.p_rev, c.p_fwd);
            BigRational::one()
        }
        ProposalKind::Triple(t) => {
            let ratio = &t.p_rev / &t.p_fwd;
            if ratio >= BigRational::one() {
                BigRational::one()
            } else {
                ratio
            }
        }
    }
}

/// One Metropolis-Hastings step; the accept decision is an exact Bernoulli
/// draw on the rational ratio.
pub fn mh_step<R: Rng>(
    state: &ColoredRealization,
    rng: &mut R,
) -> (ColoredRealization, bool, ProposalTrace) {
    let trace = propose(state, rng);
    if trace.is_identity() {
        return (state.clone(), false, trace);
    }
    let ratio = acceptance_ratio(&trace);
    let accepted = if ratio == BigRational::one() {
        true
    } else {
        debug_assert!(ratio.is_positive());
        let numer = ratio.numer().to_biguint().expect("ratio is positive");
        let denom = ratio.denom().to_biguint().expect("ratio is positive");
        rng.gen_biguint_below(&denom) < numer
    };
    if accepted {
        (trace.proposed.clone(), true, trace)
    } else {
        (state.clone(), false, trace)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainMode {
    /// Assert the per-move invariants (circuit probability equality and the
    /// triple ratio bounds) while running.
    ExactReplay,
    /// Only tally diagnostics.
    DiagnosticsOnly,
}

#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub seed: u64,
    pub steps: u64,
    pub burnin: u64,
    pub thin: u64,
    pub chains: u32,
    pub mode: ChainMode,
}

impl ChainConfig {
    pub fn new(seed: u64, steps: u64) -> Self {
        Self {
            seed,
            steps,
            burnin: 0,
            thin: 1,
            chains: 1,
            mode: ChainMode::DiagnosticsOnly,
        }
    }
}

/// Move-category tallies and the extreme triple ratios seen.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub total_steps: u64,
    pub lazy_steps: u64,
    pub identity_bails: u64,
    pub circuit_moves: u64,
    pub triple_moves: u64,
    pub accepted: u64,
    pub min_ratio: Option<BigRational>,
    pub max_ratio: Option<BigRational>,
    pub empty_v_prime: u64,
}

impl Diagnostics {
    fn record(&mut self, trace: &ProposalTrace, accepted: bool) {
        self.total_steps += 1;
        match &trace.kind {
            ProposalKind::Lazy => self.lazy_steps += 1,
            ProposalKind::IdentityBail(reason) => {
                self.identity_bails += 1;
                if matches!(
                    reason,
                    BailReason::CutBeyondTrail | BailReason::CutUnqualified
                ) {
                    self.empty_v_prime += 1;
                }
            }
            ProposalKind::Circuit(_) => self.circuit_moves += 1,
            ProposalKind::Triple(t) => {
                self.triple_moves += 1;
                let ratio = &t.p_rev / &t.p_fwd;
                if self.min_ratio.as_ref().is_none_or(|m| ratio < *m) {
                    self.min_ratio = Some(ratio.clone());
                }
                if self.max_ratio.as_ref().is_none_or(|m| ratio > *m) {
                    self.max_ratio = Some(ratio);
                }
            }
        }
        if accepted {
            self.accepted += 1;
        }
    }

    pub fn merge(&mut self, other: &Diagnostics) {
        self.total_steps += other.total_steps;
        self.lazy_steps += other.lazy_steps;
        self.identity_bails += other.identity_bails;
        self.circuit_moves += other.circuit_moves;
        self.triple_moves += other.triple_moves;
        self.accepted += other.accepted;
        self.empty_v_prime += other.empty_v_prime;
        if let Some(r) = &other.min_ratio {
            if self.min_ratio.as_ref().is_none_or(|m| r < m) {
                self.min_ratio = Some(r.clone());
            }
        }
        if let Some(r) = &other.max_ratio {
            if self.max_ratio.as_ref().is_none_or(|m| r > m) {
                self.max_ratio = Some(r.clone());
            }
        }
    }
}

/// Sequential Markov chain over the realizations of one instance.
pub struct Chain {
    state: ColoredRealization,
    rng: ChaCha12Rng,
    mode: ChainMode,
    diagnostics: Diagnostics,
    ratio_lo: BigRational,
    ratio_hi: BigRational,
}

#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    pub accepted: bool,
    pub changed: bool,
}

impl Chain {
    pub fn new(initial: ColoredRealization, seed: u64, mode: ChainMode) -> Self {
        let m = BigInt::from(initial.m());
        let ratio_lo = BigRational::new(BigInt::from(2), m.pow(6));
        let ratio_hi = BigRational::from_integer(m.pow(5));
        Self {
            state: initial,
            rng: ChaCha12Rng::seed_from_u64(seed),
            mode,
            diagnostics: Diagnostics::default(),
            ratio_lo,
            ratio_hi,
        }
    }

    pub fn state(&self) -> &ColoredRealization {
        &self.state
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    pub fn step(&mut self) -> StepReport {
        let (next, accepted, trace) = mh_step(&self.state, &mut self.rng);
        if self.mode == ChainMode::ExactReplay {
            if let ProposalKind::Triple(t) = &trace.kind {
                let ratio = &t.p_rev / &t.p_fwd;
                assert!(
                    ratio >= self.ratio_lo && ratio <= self.ratio_hi,
                    "triple ratio {ratio} outside [2/m^6, m^5]"
                );
            }
        }
        self.diagnostics.record(&trace, accepted);
        let changed = accepted && next != self.state;
        self.state = next;
        StepReport { accepted, changed }
    }
}

/// Derives the RNG seed of one chain from the run seed and chain index.
pub fn chain_seed(seed: u64, chain: u32) -> u64 {
    let mut z = seed ^ (u64::from(chain)).wrapping_mul(0x9E3779B97F4A7C15);
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Runs one chain on the equality form of `mat`, feeding every thin-th
/// post-burnin state (including the state right after burn-in) to `sink`.
pub fn run_single_chain<F: FnMut(&ColoredRealization)>(
    mat: &DegreeMatrix,
    seed: u64,
    steps: u64,
    burnin: u64,
    thin: u64,
    mode: ChainMode,
    mut sink: F,
) -> Result<Diagnostics, KernelError> {
    assert!(thin >= 1, "thin must be at least 1");
    let report = validate(mat);
    if !report.ok {
        return Err(KernelError::InvalidMatrix(report));
    }
    let initial = construct(mat)?.realization;
    let mut chain = Chain::new(initial, seed, mode);
    for _ in 0..burnin {
        chain.step();
    }
    sink(chain.state());
    for i in 1..=steps {
        chain.step();
        if i % thin == 0 {
            sink(chain.state());
        }
    }
    Ok(chain.diagnostics().clone())
}

/// Runs all configured chains sequentially, tagging samples with their
/// chain index and merging diagnostics.
pub fn run_chain(
    mat: &DegreeMatrix,
    config: &ChainConfig,
) -> Result<(Vec<(u32, ColoredRealization)>, Diagnostics), KernelError> {
    let mut samples = Vec::new();
    let mut diagnostics = Diagnostics::default();
    for chain in 0..config.chains.max(1) {
        let d = run_single_chain(
            mat,
            chain_seed(config.seed, chain),
            config.steps,
            config.burnin,
            config.thin,
            config.mode,
            |state| samples.push((chain, state.clone())),
        )?;
        diagnostics.merge(&d);
    }
    Ok((samples, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{latin_instance, random_valid_instance};
    use crate::model::check_realization;
    use crate::oracle::enumerate;
    use crate::stats::uniformity_test;
    use num_traits::ToPrimitive;

    fn latin_start(n: usize) -> (DegreeMatrix, ColoredRealization) {
        let inst = latin_instance(n);
        let real = construct(&inst).unwrap().realization;
        (inst, real)
    }

    #[test]
    fn lazy_fraction_is_one_half() {
        let (_, real) = latin_start(4);
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        let draws = 10_000;
        let lazy = (0..draws)
            .filter(|_| matches!(propose(&real, &mut rng).kind, ProposalKind::Lazy))
            .count();
        let p = 0.5;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        assert!(
            ((lazy as f64) - draws as f64 * p).abs() <= 3.0 * sigma,
            "lazy count {lazy} of {draws}"
        );
    }

    #[test]
    fn loop_only_instances_always_bail() {
        let inst = DegreeMatrix::new(2, 2, 1, vec![2], vec![vec![2, 2]]).unwrap();
        let real = construct(&inst).unwrap().realization;
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..200 {
            let trace = propose(&real, &mut rng);
            match trace.kind {
                ProposalKind::Lazy => {}
                ProposalKind::IdentityBail(BailReason::NoNonLoopEdge) => {}
                other => panic!("unexpected proposal {other:?}"),
            }
            assert_eq!(trace.proposed, real);
        }
    }

    #[test]
    fn proposals_are_valid_realizations() {
        let (inst, mut real) = latin_start(4);
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let mut moves = 0;
        for _ in 0..20_000 {
            let (next, _, trace) = mh_step(&real, &mut rng);
            if !trace.is_identity() {
                moves += 1;
                assert!(
                    check_realization(&inst, &trace.proposed).unwrap(),
                    "invalid proposal from {:?}",
                    trace.branch_name()
                );
            }
            real = next;
        }
        assert!(moves > 1_000, "only {moves} non-identity proposals");
    }

    #[test]
    fn circuit_moves_have_equal_forward_and_reverse_probability() {
        let (_, mut real) = latin_start(4);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut seen = 0;
        while seen < 200 {
            let (next, _, trace) = mh_step(&real, &mut rng);
            if let ProposalKind::Circuit(c) = &trace.kind {
                assert_eq!(c.p_fwd, c.p_rev);
                assert_eq!(acceptance_ratio(&trace), BigRational::one());
                seen += 1;
            }
            real = next;
        }
    }

    #[test]
    fn triple_ratios_respect_relaxed_bounds() {
        let (_, mut real) = latin_start(4);
        let m = BigInt::from(4);
        let lo = BigRational::new(BigInt::from(2), m.pow(6));
        let hi = BigRational::from_integer(m.pow(5));
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let mut seen = 0;
        while seen < 300 {
            let (next, _, trace) = mh_step(&real, &mut rng);
            if let ProposalKind::Triple(t) = &trace.kind {
                let ratio = &t.p_rev / &t.p_fwd;
                assert!(ratio >= lo && ratio <= hi, "ratio {ratio}");
                seen += 1;
            }
            real = next;
        }
    }

    #[test]
    fn reversal_is_an_involution_on_decisions() {
        let (_, mut real) = latin_start(5);
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let mut circuits = 0;
        let mut triples = 0;
        while circuits < 50 || triples < 50 {
            let (next, _, trace) = mh_step(&real, &mut rng);
            match &trace.kind {
                ProposalKind::Circuit(c) => {
                    circuits += 1;
                    let rev = reverse_trace(&trace).unwrap();
                    assert_eq!(rev.proposed, trace.origin);
                    assert_eq!(rev.p_fwd(), trace.p_rev());
                    let back = reverse_trace(&rev).unwrap();
                    if let ProposalKind::Circuit(b) = &back.kind {
                        assert_eq!(b.decisions, c.decisions);
                    } else {
                        panic!("circuit reversed into {}", back.branch_name());
                    }
                }
                ProposalKind::Triple(t) => {
                    triples += 1;
                    let rev = reverse_trace(&trace).unwrap();
                    assert_eq!(rev.proposed, trace.origin);
                    assert_eq!(rev.p_fwd(), trace.p_rev());
                    assert_eq!(rev.p_rev(), trace.p_fwd());
                    let back = reverse_trace(&rev).unwrap();
                    if let ProposalKind::Triple(b) = &back.kind {
                        assert_eq!(b.decisions, t.decisions);
                    } else {
                        panic!("triple reversed into {}", back.branch_name());
                    }
                }
                _ => {}
            }
            real = next;
        }
    }

    #[test]
    fn reverse_trace_rejects_identity_proposals() {
        let (_, real) = latin_start(3);
        let trace = ProposalTrace {
            origin: real.clone(),
            proposed: real,
            kind: ProposalKind::Lazy,
        };
        assert!(matches!(
            reverse_trace(&trace),
            Err(KernelError::NotReversible(_))
        ));
    }

    #[test]
    fn chain_is_deterministic_per_seed() {
        let inst = latin_instance(4);
        let config = ChainConfig {
            seed: 77,
            steps: 500,
            burnin: 50,
            thin: 5,
            chains: 2,
            mode: ChainMode::ExactReplay,
        };
        let (a, da) = run_chain(&inst, &config).unwrap();
        let (b, db) = run_chain(&inst, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(da.total_steps, db.total_steps);
        assert_eq!(da.accepted, db.accepted);
        assert_eq!(a.len() as u64, 2 * (1 + 500 / 5));
    }

    #[test]
    fn zero_steps_yields_initial_state_only() {
        let inst = latin_instance(3);
        let config = ChainConfig::new(1, 0);
        let (samples, diag) = run_chain(&inst, &config).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].1, construct(&inst).unwrap().realization);
        assert_eq!(diag.total_steps, 0);
    }

    #[test]
    fn run_chain_rejects_invalid_instances() {
        let bad = DegreeMatrix::new(2, 2, 1, vec![1], vec![vec![1, 2]]).unwrap();
        assert!(matches!(
            run_chain(&bad, &ChainConfig::new(0, 1)),
            Err(KernelError::InvalidMatrix(_))
        ));
    }

    #[test]
    fn chain_states_stay_valid_and_diagnostics_balance() {
        let inst = random_valid_instance(5, 4, 3, &mut ChaCha12Rng::seed_from_u64(3));
        let built = construct(&inst).unwrap();
        let mut chain = Chain::new(built.realization, 11, ChainMode::ExactReplay);
        for _ in 0..2_000 {
            chain.step();
            assert!(check_realization(&built.equality_matrix, chain.state()).unwrap());
        }
        let d = chain.diagnostics();
        assert_eq!(
            d.lazy_steps + d.identity_bails + d.circuit_moves + d.triple_moves,
            d.total_steps
        );
        assert_eq!(d.total_steps, 2_000);
        assert!(d.accepted >= d.circuit_moves);
    }

    #[test]
    fn quick_uniformity_smoke_on_small_space() {
        // 12 Latin squares of order 3. Consecutive chain states are heavily
        // autocorrelated (half of all steps are lazy), so thin before
        // applying the iid chi-square reference.
        let inst = latin_instance(3);
        let space = enumerate(&inst, false).unwrap();
        let mut counts = std::collections::HashMap::new();
        run_single_chain(&inst, 123, 150_000, 500, 50, ChainMode::ExactReplay, |s| {
            *counts.entry(s.canonical_key()).or_insert(0u64) += 1;
        })
        .unwrap();
        assert_eq!(counts.len(), space.count, "chain must visit every state");
        let report = uniformity_test(&counts, space.count).unwrap();
        assert!(
            report.p_value > 1e-3,
            "p={} chi2={} tv={}",
            report.p_value,
            report.chi2,
            report.tv_distance
        );
        assert!(report.tv_distance < 0.05, "tv={}", report.tv_distance);
    }

    /// Walks the full decision tree of one branch: runs the executor with a
    /// forced prefix extended greedily, then backtracks over the last
    /// unexhausted decision slot.
    struct TreeDraw<'a> {
        script: &'a [usize],
        cursor: usize,
        log: Vec<(usize, Vec<usize>)>,
    }

    impl<'a> TreeDraw<'a> {
        fn new(script: &'a [usize]) -> Self {
            Self {
                script,
                cursor: 0,
                log: Vec::new(),
            }
        }

        fn choose(&mut self, options: Vec<usize>) -> usize {
            let value = if self.cursor < self.script.len() {
                assert!(options.contains(&self.script[self.cursor]));
                self.script[self.cursor]
            } else {
                options[0]
            };
            self.cursor += 1;
            self.log.push((value, options));
            value
        }
    }

    impl DrawPolicy for TreeDraw<'_> {
        fn pick_index(&mut self, bound: usize) -> Result<usize, ReplayViolation> {
            Ok(self.choose((0..bound).collect()))
        }

        fn pick_member(&mut self, options: &[usize]) -> Result<usize, ReplayViolation> {
            Ok(self.choose(options.to_vec()))
        }
    }

    /// Every decision path of one branch from `origin`, with outcome and
    /// exact probability.
    fn enumerate_branch_paths(
        origin: &ColorMatrix,
        mirror: bool,
    ) -> Vec<(ExecOutcome, BigRational)> {
        let mut paths = Vec::new();
        let mut script: Vec<usize> = Vec::new();
        loop {
            let (outcome, log) = {
                let mut policy = TreeDraw::new(&script);
                let outcome = run_branch(origin, mirror, &mut policy).unwrap();
                (outcome, policy.log)
            };
            let prob: BigRational = log
                .iter()
                .map(|(_, options)| BigRational::new(BigInt::one(), BigInt::from(options.len())))
                .product();
            paths.push((outcome, prob));
            // Backtrack to the deepest slot with an unexplored option.
            let mut depth = log.len();
            script.clear();
            loop {
                if depth == 0 {
                    return paths;
                }
                let (value, options) = &log[depth - 1];
                let idx = options.iter().position(|v| v == value).unwrap();
                if idx + 1 < options.len() {
                    script.extend(log[..depth - 1].iter().map(|(v, _)| *v));
                    script.push(options[idx + 1]);
                    break;
                }
                depth -= 1;
            }
        }
    }

    /// Exact detailed balance of the kernel on an enumerable space: for
    /// every ordered state pair, the accepted probability flow must match
    /// its reverse exactly. This pins the path-pairing acceptance with
    /// rational arithmetic and no sampling noise.
    #[test]
    fn exact_detailed_balance_on_order_three_latin() {
        let inst = latin_instance(3);
        let keys = enumerate(&inst, false).unwrap().encodings.unwrap();
        let states: Vec<ColoredRealization> = keys
            .iter()
            .map(|k| {
                let cells: Vec<usize> =
                    k.chars().map(|c| c.to_digit(10).unwrap() as usize).collect();
                ColoredRealization::from_cells(3, 3, 3, cells).unwrap()
            })
            .collect();
        let index: std::collections::HashMap<String, usize> = keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();

        let zero = BigRational::new(BigInt::from(0), BigInt::one());
        let mut flow = vec![vec![zero.clone(); states.len()]; states.len()];
        for (i, state) in states.iter().enumerate() {
            for mirror in [false, true] {
                let paths = enumerate_branch_paths(state.matrix(), mirror);
                let total: BigRational = paths.iter().map(|(_, p)| p.clone()).sum();
                assert_eq!(total, BigRational::one(), "charges must sum to one");
                for (outcome, prob) in paths {
                    match outcome {
                        ExecOutcome::Bail(_) => {}
                        ExecOutcome::Circuit { result, .. } => {
                            let j = index[&result.canonical_key()];
                            // Circuits are accepted with probability one.
                            flow[i][j] += prob;
                        }
                        ExecOutcome::Triple {
                            decisions, result, ..
                        } => {
                            let j = index[&result.canonical_key()];
                            let rev = decisions.mirrored();
                            let (p_rev, restored) =
                                replay_reverse(&result, rev.mirror, &triple_values(&rev))
                                    .expect("triple must reverse");
                            assert_eq!(&restored, state.matrix());
                            let ratio = &p_rev / &prob;
                            let alpha = if ratio >= BigRational::one() {
                                BigRational::one()
                            } else {
                                ratio
                            };
                            flow[i][j] += prob * alpha;
                        }
                    }
                }
            }
        }
        for i in 0..states.len() {
            for j in 0..states.len() {
                assert_eq!(
                    flow[i][j], flow[j][i],
                    "flow imbalance between states {i} and {j}: {} vs {}",
                    flow[i][j], flow[j][i]
                );
            }
        }
    }

    #[test]
    fn acceptance_ratio_of_identity_is_one() {
        let (_, real) = latin_start(3);
        let trace = ProposalTrace {
            origin: real.clone(),
            proposed: real,
            kind: ProposalKind::IdentityBail(BailReason::TooFewRows),
        };
        assert_eq!(acceptance_ratio(&trace), BigRational::one());
    }

    #[test]
    fn triple_ratio_never_collapses_to_zero_or_infinity() {
        let (_, mut real) = latin_start(4);
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let mut product_checked = false;
        for _ in 0..5_000 {
            let (next, _, trace) = mh_step(&real, &mut rng);
            if let ProposalKind::Triple(t) = &trace.kind {
                assert!(t.p_fwd.to_f64().unwrap() > 0.0);
                assert!(t.p_rev.to_f64().unwrap() > 0.0);
                product_checked = true;
            }
            real = next;
        }
        assert!(product_checked);
    }
}
