"""Statistical-query protocol: honest and adversarial oracles, support-recovery learners.

Queries are restricted to the structured family

    phi(y, x) = scale * sum_terms T(y) * prod_slots T_i(x_{c_i}),

which is what the upper-bound algorithms use; norms and expectations are then
exact. Honest responses obey |v - E_D[phi]| <= tau * ||phi||_{L2(D0)} with D0
the decoupled null (label marginal x input marginal).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .detect import DetectReport, Witness
from .junta import JuntaProblem, PlantedInstance
from .setsystem import coords_from_mask


class _Fail:
    """Adversary concession: no answer consistent with >= 2 surviving plantings."""

    __slots__ = ()
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "FAIL"


FAIL = _Fail()


class BudgetExceededError(RuntimeError):
    def __init__(self, transcript):
        super().__init__("query budget exhausted")
        self.transcript = transcript


@dataclass(frozen=True, eq=False)
class Query:
    """scale * sum over terms of T(y) prod_i T_i(x_{c_i}).

    Each term is (coords, tables): an ordered tuple of distinct ambient
    coordinates and the per-slot coordinate functions tabulated on X.
    """

    terms: tuple[tuple[tuple[int, ...], tuple[np.ndarray, ...]], ...]
    t_label: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        for coords, tables in self.terms:
            if len(coords) != len(tables):
                raise ValueError("each slot needs a coordinate and a table")
            if len(set(coords)) != len(coords):
                raise ValueError("coordinates within a term must be distinct")
            if any(c < 1 for c in coords):
                raise ValueError("coordinates are 1-based")

    @classmethod
    def from_witness(cls, witness: Witness, coords: Sequence[int], scale: float = 1.0) -> "Query":
        coords = tuple(int(c) for c in coords)
        if len(coords) != len(witness.coords):
            raise ValueError("tuple length must match the witness set size")
        tables = tuple(witness.t_coords[pos] for pos in witness.coords)
        return cls(((coords, tables),), witness.t_label, scale)

    def max_coordinate(self) -> int:
        return max((c for coords, _ in self.terms for c in coords), default=0)

    def l2_null_norm(self, problem: JuntaProblem) -> float:
        """||phi||_{L2(D0)} by exact summation (closed form for one term)."""
        label_sq = problem.mu_y @ np.asarray(self.t_label, float) ** 2
        marg = problem.marginal
        total = 0.0
        for (coords_a, tabs_a) in self.terms:
            map_a = dict(zip(coords_a, tabs_a))
            for (coords_b, tabs_b) in self.terms:
                map_b = dict(zip(coords_b, tabs_b))
                prod = 1.0
                for c in set(coords_a) | set(coords_b):
                    if c in map_a and c in map_b:
                        prod *= float(marg.probs @ (map_a[c] * map_b[c]))
                    elif c in map_a:
                        prod *= marg.mean(map_a[c])
                    else:
                        prod *= marg.mean(map_b[c])
                    if prod == 0.0:
                        break
                total += prod
        return abs(self.scale) * float(np.sqrt(max(label_sq * total, 0.0)))

    def describe(self) -> dict:
        return {
            "terms": [list(coords) for coords, _ in self.terms],
            "scale": self.scale,
        }


@dataclass
class Transcript:
    """Query/response log of one game session."""

    tau: float
    budget: int | None = None
    records: list = field(default_factory=list)
    outcome: frozenset | None = None

    @property
    def n_queries(self) -> int:
        return len(self.records)

    def log(self, query: Query, response, exact=None, norm=None, accepted=None):
        rec = {"t": len(self.records) + 1, **query.describe()}
        rec["response"] = None if response is FAIL else float(response)
        if exact is not None:
            rec["exact"] = float(exact)
        if norm is not None:
            rec["norm"] = float(norm)
        if accepted is not None:
            rec["accepted"] = bool(accepted)
        self.records.append(rec)

    def to_jsonl(self, fp) -> None:
        for rec in self.records:
            fp.write(json.dumps(rec, sort_keys=True) + "\n")

    def check_soundness(self) -> bool:
        """Post-hoc: every logged response obeys the tolerance contract."""
        for rec in self.records:
            if rec["response"] is None or "exact" not in rec:
                continue
            if abs(rec["response"] - rec["exact"]) > self.tau * rec["norm"] + 1e-12:
                return False
        return True


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


class HonestOracle:
    """Answers with the exact planted expectation plus bounded noise."""

    def __init__(self, instance: PlantedInstance, tau: float, noise_mode: str = "zero", seed: int = 0):
        if tau < 0:
            raise ValueError("tau must be >= 0")
        if noise_mode not in ("zero", "uniform", "adversarial_sign"):
            raise ValueError(f"unknown noise mode {noise_mode!r}")
        self.instance = instance
        self.problem = instance.problem
        self.tau = tau
        self.noise_mode = noise_mode
        self.rng = np.random.default_rng(seed)
        self._pos_of = {c: pos for pos, c in enumerate(instance.s_star, start=1)}

    @property
    def d(self) -> int:
        return self.instance.d

    def exact_expectation(self, query: Query) -> float:
        if query.max_coordinate() > self.d:
            raise ValueError("query references a coordinate beyond the ambient dimension")
        total = 0.0
        for coords, tables in query.terms:
            off_factor = 1.0
            t_coords = {}
            for c, tab in zip(coords, tables):
                pos = self._pos_of.get(c)
                if pos is None:
                    off_factor *= self.problem.marginal.mean(tab)
                    if off_factor == 0.0:
                        break
                else:
                    t_coords[pos] = tab
            else:
                if t_coords:
                    term = self.problem.joint_expectation(query.t_label, t_coords, t_coords.keys())
                else:
                    term = self.problem.label_expectation(query.t_label)
                total += off_factor * term
        return query.scale * total

    def answer(self, query: Query, transcript: Transcript | None = None) -> float:
        exact = self.exact_expectation(query)
        norm = query.l2_null_norm(self.problem)
        bound = self.tau * norm
        if self.noise_mode == "zero" or bound == 0.0:
            noise = 0.0
        elif self.noise_mode == "uniform":
            noise = self.rng.uniform(-bound, bound)
        else:  # adversarial_sign: push toward (or past) the acceptance threshold
            noise = bound if exact == 0.0 else -np.sign(exact) * bound
        v = exact + noise
        if transcript is not None:
            transcript.log(query, v, exact=exact, norm=norm)
        return v


class AdversarialOracle:
    """Answers with the fully decoupled null value whenever that is consistent
    with at least two surviving plantings, pruning only the plantings it
    contradicts; concedes (FAIL) otherwise.

    A valid (not necessarily optimal) adversary for single-term structured
    queries at enumerable scale.
    """

    MAX_D = 14
    MAX_P = 4

    def __init__(self, problem: JuntaProblem, d: int, tau: float):
        if d > self.MAX_D or problem.p > self.MAX_P:
            raise ValueError(f"adversary limited to d <= {self.MAX_D}, P <= {self.MAX_P}")
        if d < problem.p:
            raise ValueError("d must be >= P")
        self.problem = problem
        self.d = d
        self.tau = tau
        self.survivors: set[tuple[int, ...]] = set(
            itertools.permutations(range(1, d + 1), problem.p)
        )
        self._pattern_cache: dict = {}
        self.conceded = False

    def _term_expectation(self, t_label, coords, tables, assignment):
        """E over one term with `assignment` mapping slot index -> support position."""
        key = (
            t_label.tobytes(),
            tuple(t.tobytes() for t in tables),
            tuple(sorted(assignment.items())),
        )
        if key in self._pattern_cache:
            return self._pattern_cache[key]
        off = 1.0
        t_coords = {}
        for slot, tab in enumerate(tables):
            pos = assignment.get(slot)
            if pos is None:
                off *= self.problem.marginal.mean(tab)
            else:
                t_coords[pos] = tab
        if off == 0.0:
            val = 0.0
        elif t_coords:
            val = off * self.problem.joint_expectation(t_label, t_coords, t_coords.keys())
        else:
            val = off * self.problem.label_expectation(t_label)
        self._pattern_cache[key] = val
        return val

    def null_value(self, query: Query) -> float:
        total = 0.0
        mean_t = self.problem.label_expectation(query.t_label)
        for coords, tables in query.terms:
            prod = mean_t
            for tab in tables:
                prod *= self.problem.marginal.mean(tab)
                if prod == 0.0:
                    break
            total += prod
        return query.scale * total

    def answer(self, query: Query, transcript: Transcript | None = None):
        if len(query.terms) != 1:
            raise ValueError("adversary handles single-term structured queries")
        if query.max_coordinate() > self.d:
            raise ValueError("query references a coordinate beyond the ambient dimension")
        coords, tables = query.terms[0]
        t_label = np.asarray(query.t_label, float)
        norm = query.l2_null_norm(self.problem)
        null = self.null_value(query)
        tol = self.tau * norm

        # Enumerate slot->support-position patterns with at least one on-support
        # slot; plantings inducing a pattern whose expectation strays from the
        # null by more than tau*norm get pruned.
        to_prune: set[tuple[int, ...]] = set()
        positions = range(1, self.problem.p + 1)
        nslots = len(coords)
        for k in range(1, min(nslots, self.problem.p) + 1):
            for slots in itertools.combinations(range(nslots), k):
                for pos_perm in itertools.permutations(positions, k):
                    assignment = dict(zip(slots, pos_perm))
                    val = query.scale * self._term_expectation(t_label, coords, tables, assignment)
                    if abs(null - val) <= tol:
                        continue
                    # collect surviving plantings matching this exact pattern
                    for sigma in self._matching(coords, assignment):
                        to_prune.add(sigma)
        compat = len(self.survivors) - len(to_prune & self.survivors)
        if compat < 2:
            self.conceded = True
            if transcript is not None:
                transcript.log(query, FAIL, norm=norm)
            return FAIL
        self.survivors -= to_prune
        if transcript is not None:
            transcript.log(query, null, norm=norm)
        return null

    def _matching(self, coords, assignment):
        """Plantings sigma with sigma(pos) = coords[slot] exactly for the assigned
        slots and every other query coordinate off-support."""
        fixed = {pos: coords[slot] for slot, pos in assignment.items()}
        if len(set(fixed.values())) != len(fixed):
            return
        other_coords = set(coords) - set(fixed.values())
        free_positions = [p for p in range(1, self.problem.p + 1) if p not in fixed]
        pool = [c for c in range(1, self.d + 1) if c not in fixed.values() and c not in other_coords]
        for rest in itertools.permutations(pool, len(free_positions)):
            sigma = [0] * self.problem.p
            for pos, c in fixed.items():
                sigma[pos - 1] = c
            for pos, c in zip(free_positions, rest):
                sigma[pos - 1] = c
            sigma = tuple(sigma)
            if sigma in self.survivors:
                yield sigma


# ---------------------------------------------------------------------------
# Learners
# ---------------------------------------------------------------------------


def _charge(transcript: Transcript):
    if transcript.budget is not None and transcript.n_queries >= transcript.budget:
        raise BudgetExceededError(transcript)


def run_adaptive(oracle, d: int, report: DetectReport, *, budget=None, max_tuple=None):
    """Greedy frontier recovery: repeatedly confirm a detectable set that adds
    the fewest new coordinates, enumerating ordered fresh tuples (and all
    injections of recovered coordinates into old slots) until a response
    clears beta/2."""
    if report.beta is None:
        return frozenset(), Transcript(getattr(oracle, "tau", 0.0), budget)
    threshold = report.beta / 2.0
    transcript = Transcript(getattr(oracle, "tau", 0.0), budget)
    explored = 0
    assigned: dict[int, int] = {}
    s_hat: list[int] = []

    def candidate_masks():
        cands = []
        for mask in report.system.sets:
            if max_tuple is not None and mask.bit_count() > max_tuple:
                continue
            new = (mask & ~explored).bit_count()
            if new:
                cands.append((new, mask))
        return sorted(cands)

    while True:
        accepted = False
        for new_count, mask in candidate_masks():
            witness = report.witnesses[mask]
            old_pos = [p for p in witness.coords if explored >> (p - 1) & 1]
            new_pos = [p for p in witness.coords if not explored >> (p - 1) & 1]
            fresh_pool = [c for c in range(1, d + 1) if c not in s_hat]
            canonical = tuple(assigned[p] for p in old_pos) if old_pos else ()
            injections = [canonical] + [
                perm
                for perm in itertools.permutations(sorted(s_hat), len(old_pos))
                if perm != canonical
            ]
            for fresh in itertools.permutations(fresh_pool, new_count):
                for inj in injections:
                    slot_map = dict(zip(old_pos, inj))
                    slot_map.update(zip(new_pos, fresh))
                    coords = tuple(slot_map[p] for p in witness.coords)
                    _charge(transcript)
                    v = oracle.answer(Query.from_witness(witness, coords), transcript)
                    if v is FAIL:
                        transcript.outcome = frozenset(s_hat)
                        return frozenset(s_hat), transcript
                    hit = bool(abs(v) > threshold)
                    transcript.records[-1]["accepted"] = bool(hit)
                    if hit:
                        assigned.update(slot_map)
                        s_hat.extend(fresh)
                        explored |= mask
                        accepted = True
                        break
                if accepted:
                    break
            if accepted:
                break
        if not accepted:
            break
    transcript.outcome = frozenset(s_hat)
    return frozenset(s_hat), transcript


def run_nonadaptive(oracle, d: int, report: DetectReport, *, budget=None):
    """All queries fixed in advance: for every coordinate's minimal covering
    set, every ordered ambient tuple of that size; the decision map returns
    the union of coordinates in accepted tuples."""
    if report.beta is None:
        return frozenset(), Transcript(getattr(oracle, "tau", 0.0), budget)
    threshold = report.beta / 2.0
    transcript = Transcript(getattr(oracle, "tau", 0.0), budget)
    families = {}
    for i in range(1, report.p + 1):
        best = None
        for mask in report.system.sets:
            if mask >> (i - 1) & 1:
                key = (mask.bit_count(), mask)
                if best is None or key < best:
                    best = key
        if best is not None:
            families[best[1]] = None
    plan = []
    for mask in sorted(families, key=lambda m: (m.bit_count(), m)):
        witness = report.witnesses[mask]
        for tup in itertools.permutations(range(1, d + 1), mask.bit_count()):
            plan.append((witness, tup))
    recovered: set[int] = set()
    for witness, tup in plan:
        _charge(transcript)
        v = oracle.answer(Query.from_witness(witness, tup), transcript)
        if v is FAIL:
            break
        hit = bool(abs(v) > threshold)
        transcript.records[-1]["accepted"] = bool(hit)
        if hit:
            recovered.update(tup)
    transcript.outcome = frozenset(recovered)
    return frozenset(recovered), transcript


def run_grouped(oracle, d: int, report: DetectReport, *, budget=None):
    """Binary-grouping discovery of one coordinate from a leap-1 singleton
    witness: ceil(log2 d) grouped queries of norm O(1), each summing the
    singleton query over the coordinates whose index has a given bit set.

    Assumes the witness correlation is carried by a single support coordinate
    (e.g. P = 1 plantings); returns that coordinate and the support position
    used.
    """
    singles = [m for m in report.system.sets if m.bit_count() == 1]
    if not singles:
        raise ValueError("grouped learner needs a leap-1 singleton in the detectable system")
    mask = min(singles)
    witness = report.witnesses[mask]
    position = witness.coords[0]
    beta = abs(witness.beta)
    table = witness.t_coords[position]
    transcript = Transcript(getattr(oracle, "tau", 0.0), budget)
    n_bits = max(0, (d - 1).bit_length())
    scale = 1.0 / np.sqrt(d)
    threshold = beta / (2.0 * np.sqrt(d))
    index = 0
    for k in range(n_bits):
        group = [c for c in range(1, d + 1) if (c - 1) >> k & 1]
        terms = tuple(((c,), (table,)) for c in group)
        query = Query(terms, witness.t_label, scale)
        _charge(transcript)
        v = oracle.answer(query, transcript)
        if v is FAIL:
            break
        hit = bool(abs(v) > threshold)
        transcript.records[-1]["accepted"] = bool(hit)
        if hit:
            index |= 1 << k
    coord = index + 1
    transcript.outcome = frozenset([coord])
    return frozenset([coord]), transcript, position


# spec-named convenience wrappers over an honest oracle ----------------------


def honest_answer(instance: PlantedInstance, query: Query, tau: float, noise_mode: str = "zero", seed: int = 0) -> float:
    return HonestOracle(instance, tau, noise_mode, seed).answer(query)


def adversarial_answer(oracle: AdversarialOracle, query: Query, tau: float | None = None):
    if tau is not None:
        oracle.tau = tau
    return oracle.answer(query)


def adaptive_learner(instance, report, tau, *, noise_mode="zero", seed=0, budget=None, max_tuple=None):
    oracle = HonestOracle(instance, tau, noise_mode, seed)
    return run_adaptive(oracle, instance.d, report, budget=budget, max_tuple=max_tuple)


def nonadaptive_learner(instance, report, tau, *, noise_mode="zero", seed=0, budget=None):
    oracle = HonestOracle(instance, tau, noise_mode, seed)
    return run_nonadaptive(oracle, instance.d, report, budget=budget)


def grouped_learner(instance, report, d=None, *, tau=None, noise_mode="zero", seed=0, budget=None):
    d = instance.d if d is None else d
    singles = [m for m in report.system.sets if m.bit_count() == 1]
    if not singles:
        raise ValueError("grouped learner needs a leap-1 singleton in the detectable system")
    beta = abs(report.witnesses[min(singles)].beta)
    if tau is None:
        tau = beta / (4.0 * np.sqrt(d))
    oracle = HonestOracle(instance, tau, noise_mode, seed)
    s_hat, transcript, _ = run_grouped(oracle, d, report, budget=budget)
    return s_hat, transcript


# ---------------------------------------------------------------------------
# Game driver
# ---------------------------------------------------------------------------


@dataclass
class GameResult:
    verdict: str
    s_hat: frozenset
    transcript: Transcript
    detail: dict = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.verdict == "SUCCESS"


def play_game(
    instance: PlantedInstance,
    report: DetectReport,
    learner: str = "adaptive",
    oracle_kind: str = "honest",
    tau: float | None = None,
    tau_factor: float = 0.25,
    noise_mode: str = "zero",
    budget: int | None = None,
    seed: int = 0,
    max_tuple: int | None = None,
) -> GameResult:
    """Run one support-recovery game and grade the outcome."""
    if tau is None:
        if report.beta is None:
            raise ValueError("report has no detectable sets; tau must be explicit")
        if learner == "grouped":
            # grouped queries carry a 1/sqrt(d) signal, so the tolerance must
            # shrink with it (tau <= c/sqrt(d))
            singles = [m for m in report.system.sets if m.bit_count() == 1]
            if not singles:
                raise ValueError("grouped learner needs a leap-1 singleton in the detectable system")
            beta1 = abs(report.witnesses[min(singles)].beta)
            tau = tau_factor * beta1 / np.sqrt(instance.d)
        else:
            tau = tau_factor * report.beta
    if oracle_kind == "honest":
        oracle = HonestOracle(instance, tau, noise_mode, seed)
    elif oracle_kind == "adversarial":
        oracle = AdversarialOracle(instance.problem, instance.d, tau)
    else:
        raise ValueError(f"unknown oracle kind {oracle_kind!r}")

    target = frozenset(instance.s_star[i - 1] for i in coords_from_mask(report.system.support))
    detail = {"tau": tau, "target": sorted(target)}
    try:
        if learner == "adaptive":
            s_hat, transcript = run_adaptive(oracle, instance.d, report, budget=budget, max_tuple=max_tuple)
        elif learner == "nonadaptive":
            s_hat, transcript = run_nonadaptive(oracle, instance.d, report, budget=budget)
        elif learner == "grouped":
            s_hat, transcript, position = run_grouped(oracle, instance.d, report, budget=budget)
            target = frozenset([instance.s_star[position - 1]])
            detail["target"] = sorted(target)
        else:
            raise ValueError(f"unknown learner {learner!r}")
    except BudgetExceededError as exc:
        return GameResult("FAIL(budget)", frozenset(), exc.transcript, detail)

    if oracle_kind == "adversarial":
        # against the adversary there is no single planted truth; the learner
        # wins only if every surviving planting has the support it output
        survivors = oracle.survivors
        detail["survivors"] = len(survivors)
        ok = bool(survivors) and all(frozenset(s) == s_hat for s in survivors)
        verdict = "SUCCESS" if ok else "FAIL"
    else:
        verdict = "SUCCESS" if s_hat == target else "FAIL"
    return GameResult(verdict, s_hat, transcript, detail)
