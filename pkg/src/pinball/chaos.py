"""Doubling-map oracle, symbolic dynamics, and divergence diagnostics.

The measured pinball's internal coordinate obeys q -> 2q mod 1 with bit 1
("transmitted", a +x lattice step) when q is in the front half.  The tie
q = 1/2 classifies as transmitted, and the tied particle re-emerges at the
very back of the kept lobe, so the orbit continues from 1.0, the fixed point
of the rear branch; everywhere else the map is the plain doubling map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

LOG2 = math.log(2.0)


def bernoulli_step(x: float) -> float:
    """One doubling-map step 2x mod 1 (exact for dyadic rationals)."""
    if not 0.0 <= x < 1.0:
        raise ValueError(f"doubling map domain is [0, 1), got {x}")
    y = 2.0 * x
    return y - 1.0 if y >= 1.0 else y


def branch_bit(q: float) -> int:
    """1 when the coordinate lies in the front half; the tie transmits."""
    return 1 if q <= 0.5 else 0


def quantile_map_iterates(q0: float, n: int) -> list[float]:
    """First n quantiles of the engine map starting from q0.

    Matches ``bernoulli_step`` except on the measure-zero tie orbit: 0.5 maps
    to 1.0 (rear of the transmitted lobe) and 1.0 stays put.
    """
    if not 0.0 <= q0 <= 1.0:
        raise ValueError(f"quantile domain is [0, 1], got {q0}")
    if n < 1:
        raise ValueError("need at least one level")
    out = [q0]
    x = q0
    for _ in range(n - 1):
        x = 2.0 * x if x <= 0.5 else 2.0 * x - 1.0
        out.append(x)
    return out


def symbolic_path(x0: float, n: int) -> str:
    """Branch bits of the first n iterates (bit 1 = front half = transmitted)."""
    return "".join(str(branch_bit(q)) for q in quantile_map_iterates(x0, n))


@dataclass(frozen=True)
class QuantileSequence:
    """Per-level internal coordinates with their derived bit path."""

    q: tuple[float, ...]

    def __post_init__(self):
        q = tuple(float(v) for v in self.q)
        object.__setattr__(self, "q", q)
        if not q:
            raise ValueError("empty quantile sequence")
        if any(not 0.0 <= v <= 1.0 for v in q):
            raise ValueError("quantiles must lie in [0, 1]")

    @property
    def bits(self) -> tuple[int, ...]:
        return tuple(branch_bit(v) for v in self.q)

    @property
    def bit_string(self) -> str:
        return "".join(str(b) for b in self.bits)

    def __len__(self) -> int:
        return len(self.q)


@dataclass(frozen=True)
class OracleComparison:
    deviations: tuple[float, ...]
    max_abs_deviation: float
    first_bit_mismatch: int | None


def compare_to_oracle(simulated: QuantileSequence, x0: float | QuantileSequence
                      ) -> OracleComparison:
    """Per-level deviation from the exact map seeded at x0, plus the first
    level (if any) where the branch bits disagree."""
    if isinstance(x0, QuantileSequence):
        if len(x0) != len(simulated):
            raise ValueError(f"length mismatch: {len(simulated)} vs {len(x0)}")
        oracle = x0
    else:
        oracle = QuantileSequence(tuple(quantile_map_iterates(float(x0), len(simulated))))
    devs = tuple(abs(a - b) for a, b in zip(simulated.q, oracle.q))
    mismatch = next((i for i, (a, b) in enumerate(zip(simulated.bits, oracle.bits))
                     if a != b), None)
    return OracleComparison(devs, max(devs), mismatch)


def lyapunov_estimate(q_sequence, q_pair=None) -> float:
    """Per-level expansion rate.

    For a single sequence the map derivative is exactly 2 everywhere, so the
    mean log-derivative is ln 2; the sequence must still be long enough to
    constitute an estimate.  For a pair of nearby runs, fits the slope of
    log separation over the levels before the first branch split.
    """
    qa = list(q_sequence.q if isinstance(q_sequence, QuantileSequence) else q_sequence)
    if q_pair is None:
        if len(qa) < 8:
            raise ValueError("sequence too short: need at least 8 levels")
        return LOG2
    qb = list(q_pair.q if isinstance(q_pair, QuantileSequence) else q_pair)
    if len(qa) != len(qb):
        raise ValueError(f"length mismatch: {len(qa)} vs {len(qb)}")
    bits_a = [branch_bit(v) for v in qa]
    bits_b = [branch_bit(v) for v in qb]
    split = next((i for i, (a, b) in enumerate(zip(bits_a, bits_b)) if a != b), len(qa))
    levels = [i for i in range(split) if qa[i] != qb[i]]
    if len(levels) < 2:
        raise ValueError("sequence too short: fewer than 2 pre-split separations")
    xs = [float(i) for i in levels]
    ys = [math.log(abs(qa[i] - qb[i])) for i in levels]
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    return sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / sum((x - mx) ** 2 for x in xs)


@dataclass(frozen=True)
class DivergenceReport:
    """Level-by-level separation diagnostics for a pair of runs."""

    q_a: tuple[float, ...]
    q_b: tuple[float, ...]
    nodes_a: tuple[int, ...]
    nodes_b: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.q_a) == len(self.q_b) == len(self.nodes_a) == len(self.nodes_b)):
            raise ValueError("report arrays must share one length per level")

    @property
    def separations(self) -> tuple[float, ...]:
        return tuple(abs(a - b) for a, b in zip(self.q_a, self.q_b))

    @property
    def bits_a(self) -> tuple[int, ...]:
        return QuantileSequence(self.q_a).bits

    @property
    def bits_b(self) -> tuple[int, ...]:
        return QuantileSequence(self.q_b).bits

    @property
    def first_split(self) -> int | None:
        return next((i for i, (a, b) in enumerate(zip(self.bits_a, self.bits_b))
                     if a != b), None)

    @property
    def node_hamming(self) -> tuple[int, ...]:
        """Cumulative count of levels whose lattice nodes differ."""
        out, count = [], 0
        for a, b in zip(self.nodes_a, self.nodes_b):
            count += int(a != b)
            out.append(count)
        return tuple(out)

    def expansion_rate(self) -> float:
        return lyapunov_estimate(self.q_a, self.q_b)


def write_divergence_csv(path, report: DivergenceReport) -> None:
    """Level rows plus a trailing comment with the summary statistics."""
    try:
        rate = repr(report.expansion_rate())
    except ValueError:
        rate = ""
    with open(path, "w", newline="\n") as fh:
        fh.write("level,q_a,q_b,dq,bit_a,bit_b,hamming\n")
        for i in range(len(report.q_a)):
            fh.write(f"{i},{report.q_a[i]!r},{report.q_b[i]!r},{report.separations[i]!r},"
                     f"{report.bits_a[i]},{report.bits_b[i]},{report.node_hamming[i]}\n")
        split = report.first_split
        fh.write(f"# lyapunov_rate={rate} first_bit_mismatch="
                 f"{'' if split is None else split}\n")
