"""Task designs over the operating-condition box.

Two generators: full factorial grids and reduced orthogonal-array-style
designs that keep per-variable level occupancy balanced at a fraction of
the factorial size. Also loads the fixed validation/test task tables
bundled with the package.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from itertools import product
from pathlib import Path

import numpy as np

from .errors import DesignSizeError, TaskTableError, ValidationError
from .model import OperatingCondition, PhysicalRanges, VARIABLE_NAMES

TASK_TABLE_HEADER = ("task", "Tin1", "Tin2", "Tin3", "m1")

METHOD_FULL_FACTORIAL = "full-factorial"
METHOD_ORTHOGONAL = "orthogonal-array"
METHOD_OA_APPROX = "OA-approximate"

FULL_FACTORIAL_CAP = 10000


@dataclass
class TaskDesign:
    """A named list of operating conditions plus the levels behind them.

    level_spec maps each variable name to the level values used on that
    axis; method records how the tasks were arranged.
    """

    name: str
    tasks: list
    level_spec: dict
    method: str = ""

    def __post_init__(self):
        if not self.tasks:
            raise ValidationError("design has no tasks")

    def __len__(self):
        return len(self.tasks)


def _level_values(ranges: PhysicalRanges, counts):
    """Equally spaced inclusive levels; a single level sits at the midpoint."""
    values = {}
    for name, count in zip(VARIABLE_NAMES, counts):
        lo, hi = getattr(ranges, name)
        if count == 1:
            values[name] = np.array([0.5 * (lo + hi)])
        else:
            values[name] = np.linspace(lo, hi, count)
    return values


def full_factorial(ranges: PhysicalRanges = PhysicalRanges(),
                   levels=(7, 5, 3, 3),
                   max_size: int = FULL_FACTORIAL_CAP) -> TaskDesign:
    """Cartesian product of equally spaced levels on each variable.

    The default (7, 5, 3, 3) split gives the widest-range variable the most
    levels and totals 315 tasks. Designs larger than max_size raise
    DesignSizeError before any work is done.
    """
    levels = tuple(int(n) for n in levels)
    if len(levels) != len(VARIABLE_NAMES):
        raise ValidationError(f"levels must have {len(VARIABLE_NAMES)} entries, got {levels}")
    if any(n < 1 for n in levels):
        raise ValidationError(f"level counts must be >= 1, got {levels}")
    size = int(np.prod(levels))
    if size > max_size:
        raise DesignSizeError(f"full factorial of {size} tasks exceeds the cap of {max_size}")
    values = _level_values(ranges, levels)
    tasks = [OperatingCondition(*combo)
             for combo in product(*(values[name] for name in VARIABLE_NAMES))]
    return TaskDesign(name=f"FF{size}", tasks=tasks, level_spec=values,
                      method=METHOD_FULL_FACTORIAL)


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    return all(n % p for p in range(2, int(n ** 0.5) + 1))


def _oa_prime_square(q: int):
    """Level-index table for q*q runs of 4 factors at q levels.

    Columns a, b, (a+b) mod q, (a+2b) mod q over all (a, b) pairs. For
    prime q >= 3 these are four distinct members of the strength-2 family
    {b, a+c*b}; for q = 2 the last column repeats the first (only three
    distinct two-level columns exist in 4 runs), which keeps the balance
    property and distinct runs.
    """
    a, b = np.divmod(np.arange(q * q), q)
    return np.column_stack([a, b, (a + b) % q, (a + 2 * b) % q])


def _maximin_balanced_lhs(size, levels, rng, n_candidates=200):
    """Balanced random level table with the best-of-n minimum spacing.

    Each column is a shuffled multiset holding every level floor(size/levels)
    or ceil(size/levels) times; of n_candidates such tables the one whose
    closest pair (in normalized level units) is farthest apart wins.
    """
    base = np.arange(size) % levels
    best, best_score = None, -1.0
    for _ in range(n_candidates):
        table = np.column_stack([rng.permutation(base) for _ in VARIABLE_NAMES])
        u = table / max(levels - 1, 1)
        d2 = ((u[:, None, :] - u[None, :, :]) ** 2).sum(axis=2)
        np.fill_diagonal(d2, np.inf)
        score = float(d2.min())
        if score > best_score:
            best, best_score = table, score
    return best


def orthogonal_design(ranges: PhysicalRanges = PhysicalRanges(),
                      size: int = 25, levels_per_var: int = 5,
                      seed: int = 0) -> TaskDesign:
    """Balanced reduced design of `size` tasks at `levels_per_var` levels.

    Uses an exact orthogonal array when one is available at this size:
    the prime-square construction when size = levels^2 with prime levels,
    or the full grid when size = levels^4. Otherwise falls back to a
    seeded maximin balanced Latin hypercube, labeled OA-approximate.
    Every level of every variable appears floor(size/levels) or
    ceil(size/levels) times in all cases.
    """
    size = int(size)
    levels_per_var = int(levels_per_var)
    if levels_per_var < 2:
        raise ValidationError(f"levels_per_var must be >= 2, got {levels_per_var}")
    if size < levels_per_var:
        raise DesignSizeError(
            f"size {size} cannot balance {levels_per_var} levels per variable")
    if size == levels_per_var ** 2 and _is_prime(levels_per_var):
        table = _oa_prime_square(levels_per_var)
        method = METHOD_ORTHOGONAL
    elif size == levels_per_var ** 4:
        table = np.array(list(product(range(levels_per_var), repeat=4)))
        method = METHOD_ORTHOGONAL
    else:
        rng = np.random.default_rng(seed)
        table = _maximin_balanced_lhs(size, levels_per_var, rng)
        method = METHOD_OA_APPROX
    values = _level_values(ranges, (levels_per_var,) * 4)
    tasks = [OperatingCondition(*(values[name][table[i, k]]
                                  for k, name in enumerate(VARIABLE_NAMES)))
             for i in range(size)]
    return TaskDesign(name=f"L{size}", tasks=tasks, level_spec=values, method=method)


@dataclass
class DesignReport:
    """Balance and spread summary produced by validate_design."""

    name: str
    method: str
    size: int
    occupancy: dict                 # variable -> level-count array
    balanced: bool                  # occupancy within floor/ceil of size/levels
    has_duplicates: bool
    min_pairwise_distance: float    # normalized condition space
    coverage: float                 # occupied cells / ideal, k-bins-per-axis heuristic

    def summary(self) -> str:
        lines = [f"design {self.name} ({self.method}, {self.size} tasks)"]
        for name in VARIABLE_NAMES:
            occ = " ".join(str(c) for c in self.occupancy[name])
            lines.append(f"  {name}: level occupancy [{occ}]")
        lines.append(f"  balanced: {'yes' if self.balanced else 'NO'}")
        lines.append(f"  duplicates: {'YES' if self.has_duplicates else 'none'}")
        lines.append(f"  min pairwise distance: {self.min_pairwise_distance:.4f}")
        lines.append(f"  box coverage: {self.coverage:.3f}")
        return "\n".join(lines)


def validate_design(design: TaskDesign,
                    ranges: PhysicalRanges = PhysicalRanges()) -> DesignReport:
    """Check balance, duplicates, spacing and coverage of a design.

    Coverage splits each axis into k = ceil(size^(1/4)) equal bins and
    reports occupied cells over min(size, k^4), so a perfectly spread
    design scores 1.
    """
    b = ranges.bounds()
    X = np.stack([t.as_array() for t in design.tasks])
    U = (X - b[:, 0]) / (b[:, 1] - b[:, 0])
    occupancy = {}
    balanced = True
    for k, name in enumerate(VARIABLE_NAMES):
        # designs loaded from plain task tables carry no level spec; fall
        # back to the distinct values actually present
        levels = np.asarray(design.level_spec.get(name, np.unique(X[:, k])),
                            dtype=float)
        idx = np.argmin(np.abs(X[:, k][:, None] - levels[None, :]), axis=1)
        counts = np.bincount(idx, minlength=levels.size)
        occupancy[name] = counts
        lo, hi = len(design) // levels.size, -(-len(design) // levels.size)
        if counts.min() < lo or counts.max() > hi:
            balanced = False
    d2 = ((U[:, None, :] - U[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    min_dist = float(np.sqrt(d2.min())) if len(design) > 1 else float("inf")
    has_dup = min_dist == 0.0
    k_bins = int(np.ceil(len(design) ** 0.25))
    cells = {tuple(np.minimum((u * k_bins).astype(int), k_bins - 1)) for u in U}
    coverage = len(cells) / min(len(design), k_bins ** 4)
    return DesignReport(name=design.name, method=design.method, size=len(design),
                        occupancy=occupancy, balanced=balanced,
                        has_duplicates=has_dup, min_pairwise_distance=min_dist,
                        coverage=coverage)


def load_task_table(path) -> list:
    """Read operating conditions from a `task,Tin1,Tin2,Tin3,m1` CSV.

    An empty file gives an empty list; anything malformed raises
    TaskTableError naming the offending line.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [(i + 1, row) for i, row in enumerate(rows) if row and any(c.strip() for c in row)]
    if not rows:
        return []
    first_line, header = rows[0]
    if tuple(c.strip() for c in header) != TASK_TABLE_HEADER:
        raise TaskTableError(
            f"{path}: expected header {','.join(TASK_TABLE_HEADER)!r}, "
            f"got {','.join(header)!r}", line=first_line)
    tasks = []
    for lineno, row in rows[1:]:
        if len(row) != 5:
            raise TaskTableError(f"{path}: expected 5 fields, got {len(row)}", line=lineno)
        try:
            int(row[0])
            values = [float(c) for c in row[1:]]
        except ValueError as exc:
            raise TaskTableError(f"{path}: {exc}", line=lineno) from exc
        try:
            tasks.append(OperatingCondition(*values))
        except ValidationError as exc:
            raise TaskTableError(f"{path}: {exc}", line=lineno) from exc
    return tasks


def write_task_table(tasks, path):
    """Write conditions as a `task,Tin1,Tin2,Tin3,m1` CSV (1-based ids)."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TASK_TABLE_HEADER)
        for i, t in enumerate(tasks, start=1):
            writer.writerow([i] + [repr(float(v)) for v in t.as_array()])


def _bundled(name: str) -> list:
    ref = resources.files("aphtherm").joinpath("data", name)
    with resources.as_file(ref) as path:
        return load_task_table(path)


def load_validation_tasks() -> list:
    """The 19 bundled validation tasks."""
    return _bundled("validation_tasks.csv")


def load_test_tasks() -> list:
    """The 19 bundled held-out test tasks."""
    return _bundled("test_tasks.csv")
