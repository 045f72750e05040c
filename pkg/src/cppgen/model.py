"""Domain types: rate models, oriented ultrametric trees, sampling schemes.

Trees are stored in their coalescent-point-process-native form, i.e. as the
ordered sequence of node depths between consecutive tips.  The topology is
never stored; it is reconstructed on demand by the running-max rule: the
coalescence time of tips ``i < j`` is ``max(depths[i:j])``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (
    DomainError,
    ModelError,
    NewickError,
    NonBinaryError,
    NonUltrametricError,
    SchemeError,
)

__all__ = [
    "PiecewiseConstant",
    "AgeDependentRate",
    "RateModel",
    "OrientedUltrametricTree",
    "SamplingScheme",
    "parse_scheme",
    "tree_to_newick",
    "newick_to_tree",
    "count_cherries",
    "rate_model_from_json",
    "rate_model_to_json",
    "read_newick_file",
    "write_newick_file",
    "write_depths_csv",
    "read_depths_csv",
]


# ---------------------------------------------------------------------------
# Rate specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PiecewiseConstant:
    """A piecewise-constant rate on [0, T].

    ``breaks`` are the left edges of the pieces; ``breaks[0]`` must be 0 and
    the last piece extends to the model horizon.  A constant rate is the
    single-piece special case.
    """

    breaks: tuple
    values: tuple

    def __post_init__(self):
        breaks = tuple(float(b) for b in self.breaks)
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "values", values)
        if len(breaks) != len(values) or not breaks:
            raise ModelError("breaks and values must have equal, positive length")
        if breaks[0] != 0.0:
            raise ModelError("first breakpoint must be 0")
        if any(b1 <= b0 for b0, b1 in zip(breaks, breaks[1:])):
            raise ModelError("breakpoints must be strictly increasing")
        if any(v < 0 for v in values):
            raise ModelError("rate values must be >= 0")

    @classmethod
    def constant(cls, value: float) -> "PiecewiseConstant":
        return cls((0.0,), (value,))

    @property
    def is_constant(self) -> bool:
        return len(self.values) == 1

    @property
    def max(self) -> float:
        return max(self.values)

    def __call__(self, t, side: str = "right"):
        """Rate at time t; ``side="left"`` returns the limit from below at
        breakpoints (the two coincide elsewhere)."""
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.breaks, t, side=side) - 1, 0, None)
        out = np.asarray(self.values)[idx]
        return out if out.ndim else float(out)

    def integral(self, t0, t1):
        """Exact integral over [t0, t1] (t1 may be an array)."""
        cum = self._cumulative()
        return self._cum_at(cum, t1) - self._cum_at(cum, t0)

    def _cumulative(self):
        breaks = np.asarray(self.breaks)
        vals = np.asarray(self.values)
        cum = np.zeros(len(breaks))
        if len(breaks) > 1:
            cum[1:] = np.cumsum(vals[:-1] * np.diff(breaks))
        return cum

    def _cum_at(self, cum, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.breaks, t, side="right") - 1, 0, None)
        breaks = np.asarray(self.breaks)
        vals = np.asarray(self.values)
        out = cum[idx] + vals[idx] * (t - breaks[idx])
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class AgeDependentRate:
    """A death rate piecewise constant on a rectangular (time, age) grid."""

    t_breaks: tuple
    x_breaks: tuple
    values: tuple  # row i = time cell i, column j = age cell j

    def __post_init__(self):
        tb = tuple(float(b) for b in self.t_breaks)
        xb = tuple(float(b) for b in self.x_breaks)
        vals = tuple(tuple(float(v) for v in row) for row in self.values)
        object.__setattr__(self, "t_breaks", tb)
        object.__setattr__(self, "x_breaks", xb)
        object.__setattr__(self, "values", vals)
        if tb[0] != 0.0 or xb[0] != 0.0:
            raise ModelError("time and age grids must start at 0")
        if any(b1 <= b0 for b0, b1 in zip(tb, tb[1:])) or any(
            b1 <= b0 for b0, b1 in zip(xb, xb[1:])
        ):
            raise ModelError("breakpoints must be strictly increasing")
        if len(vals) != len(tb) or any(len(row) != len(xb) for row in vals):
            raise ModelError("values grid shape must match breakpoints")
        if any(v < 0 for row in vals for v in row):
            raise ModelError("rate values must be >= 0")

    @property
    def max(self) -> float:
        return max(v for row in self.values for v in row)

    def __call__(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        ti = np.clip(np.searchsorted(self.t_breaks, t, side="right") - 1, 0, None)
        xi = np.clip(np.searchsorted(self.x_breaks, x, side="right") - 1, 0, None)
        out = np.asarray(self.values)[ti, xi]
        return out if out.ndim else float(out)

    def line_knots(self, birth: float, upto: float):
        """Breakpoints of u -> rate(u, u - birth) on [birth, upto]."""
        knots = {birth, upto}
        knots.update(b for b in self.t_breaks if birth < b < upto)
        knots.update(birth + b for b in self.x_breaks if birth < birth + b < upto)
        return sorted(knots)


DeathRate = Union[PiecewiseConstant, AgeDependentRate]


@dataclass(frozen=True)
class RateModel:
    """Birth rate lambda(t), death rate mu(t, x), and horizon T.

    ``kind`` is one of ``constant``, ``time_varying``, ``age_dependent`` and
    only records how the model was specified; evaluation always goes through
    the piecewise-constant machinery.
    """

    kind: str
    lam: PiecewiseConstant
    mu: DeathRate
    T: float

    def __post_init__(self):
        if self.kind not in ("constant", "time_varying", "age_dependent"):
            raise ModelError(f"unknown model kind {self.kind!r}")
        if not (self.T > 0):
            raise ModelError("T must be > 0")
        for breaks in self._all_breaks():
            if breaks[-1] >= self.T:
                raise ModelError("breakpoints must lie strictly inside [0, T)")

    def _all_breaks(self):
        yield self.lam.breaks
        if isinstance(self.mu, PiecewiseConstant):
            yield self.mu.breaks
        else:
            yield self.mu.t_breaks

    @classmethod
    def constant(cls, lam: float, mu: float, T: float) -> "RateModel":
        return cls(
            "constant", PiecewiseConstant.constant(lam), PiecewiseConstant.constant(mu), T
        )

    @classmethod
    def time_varying(cls, lam: PiecewiseConstant, mu: PiecewiseConstant, T: float):
        return cls("time_varying", lam, mu, T)

    @classmethod
    def age_dependent(cls, lam: PiecewiseConstant, mu: AgeDependentRate, T: float):
        return cls("age_dependent", lam, mu, T)

    # -- accessors ---------------------------------------------------------

    @property
    def lambda_constant(self) -> float:
        if not self.lam.is_constant:
            raise ModelError("birth rate is not constant")
        return self.lam.values[0]

    @property
    def mu_constant(self) -> float:
        if not (isinstance(self.mu, PiecewiseConstant) and self.mu.is_constant):
            raise ModelError("death rate is not constant")
        return self.mu.values[0]

    @property
    def net_rate(self) -> float:
        """r = lambda - mu, defined for constant models only."""
        return self.lambda_constant - self.mu_constant

    def birth_rate(self, t):
        return self.lam(t)

    @property
    def birth_rate_max(self) -> float:
        return self.lam.max

    def death_rate(self, t, x):
        if isinstance(self.mu, PiecewiseConstant):
            return self.mu(t)
        return self.mu(t, x)

    @property
    def death_rate_max(self) -> float:
        return self.mu.max

    def death_cumhazard(self, birth: float, s):
        """Integral of u -> mu(u, u - birth) over [birth, s], vectorized in s."""
        s = np.asarray(s, dtype=float)
        if np.any(s < birth):
            raise DomainError("death time before birth time")
        if isinstance(self.mu, PiecewiseConstant):
            out = self.mu.integral(birth, s)
            return out
        upto = float(np.max(s)) if s.size else birth
        knots = self.mu.line_knots(birth, max(upto, birth))
        knots_arr = np.asarray(knots)
        if len(knots) == 1:
            return np.zeros_like(s) if s.ndim else 0.0
        mids = 0.5 * (knots_arr[:-1] + knots_arr[1:])
        slopes = np.asarray(self.mu(mids, mids - birth))
        cum = np.concatenate([[0.0], np.cumsum(slopes * np.diff(knots_arr))])
        out = np.interp(s, knots_arr, cum)
        return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Trees
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrientedUltrametricTree:
    """Plane oriented ultrametric tree of height ``height``.

    ``depths[i]`` is the coalescence time between tip ``i`` and tip ``i+1``
    (tips are labelled 0..N-1 left to right).  A single-tip tree has an
    empty depth sequence.
    """

    height: float
    depths: tuple = ()

    def __post_init__(self):
        depths = tuple(float(d) for d in self.depths)
        object.__setattr__(self, "depths", depths)
        if not (self.height > 0):
            raise DomainError("height must be > 0")
        if any(not (0.0 < d < self.height) for d in depths):
            raise DomainError("all node depths must lie strictly in (0, height)")

    @property
    def n_tips(self) -> int:
        return len(self.depths) + 1

    def coalescence_time(self, i: int, j: int) -> float:
        """Coalescence time of tips i < j: the running max of depths i..j-1."""
        if not (0 <= i < j < self.n_tips):
            raise DomainError("tip indices out of range")
        return max(self.depths[i:j])


def _split_segment(depths: Sequence[float], lo: int, hi: int) -> int:
    """Index of the (first) deepest node among tips lo..hi; the running-max
    rule makes it the root of that segment's subtree."""
    seg = depths[lo:hi]
    return lo + int(np.argmax(seg))


def count_cherries(tree: OrientedUltrametricTree) -> int:
    """Number of tip pairs whose MRCA has exactly those two descendants."""
    n = tree.n_tips
    if n < 2:
        return 0
    d = tree.depths
    cherries = 0
    stack = [(0, n - 1)]
    while stack:
        lo, hi = stack.pop()
        if lo == hi:
            continue
        j = _split_segment(d, lo, hi)
        if lo == j and j + 1 == hi:
            cherries += 1
            continue
        stack.append((lo, j))
        stack.append((j + 1, hi))
    return cherries


# ---------------------------------------------------------------------------
# Newick serialization
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def tree_to_newick(tree: OrientedUltrametricTree, stem: bool = False) -> str:
    """Render the tree reconstructed from its depths as a Newick string.

    Tips are labelled 0..N-1 left to right.  With ``stem=True`` a root edge
    of length ``height - max(depths)`` is prepended.  A single tip is always
    rendered with its full pendant edge (the height would be lost otherwise).
    """
    d = tree.depths
    if not d:
        return f"0:{_fmt(tree.height)};"

    def render(lo: int, hi: int, top: float) -> str:
        if lo == hi:
            return f"{lo}:{_fmt(top)}"
        j = _split_segment(d, lo, hi)
        h = d[j]
        return f"({render(lo, j, h)},{render(j + 1, hi, h)}):{_fmt(top - h)}"

    root_h = max(d)
    j = _split_segment(d, 0, len(d))
    left = render(0, j, root_h)
    right = render(j + 1, len(d), root_h)
    if stem:
        return f"({left},{right}):{_fmt(tree.height - root_h)};"
    return f"({left},{right});"


class _NewickParser:
    def __init__(self, text: str):
        self.text = text.strip()
        self.pos = 0

    def error(self, msg: str):
        raise NewickError(f"Newick parse error at position {self.pos}: {msg}")

    def peek(self):
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def parse(self):
        node = self.parse_node()
        if self.peek() != ";":
            self.error("expected ';'")
        self.pos += 1
        if self.text[self.pos :].strip():
            self.error("trailing characters after ';'")
        return node

    def parse_node(self):
        children = []
        if self.peek() == "(":
            self.pos += 1
            children.append(self.parse_node())
            while self.peek() == ",":
                self.pos += 1
                children.append(self.parse_node())
            if self.peek() != ")":
                self.error("expected ')'")
            self.pos += 1
        label = self.parse_label()
        length = None
        if self.peek() == ":":
            self.pos += 1
            length = self.parse_number()
        return (children, label, length)

    def parse_label(self):
        start = self.pos
        while self.peek() and self.peek() not in ":,();":
            self.pos += 1
        return self.text[start : self.pos]

    def parse_number(self):
        start = self.pos
        while self.peek() and self.peek() not in ",();":
            self.pos += 1
        token = self.text[start : self.pos]
        try:
            return float(token)
        except ValueError:
            self.error(f"bad edge length {token!r}")


def newick_to_tree(
    text: str, rtol: float = 1e-9, height: Optional[float] = None
) -> OrientedUltrametricTree:
    """Parse a rooted binary ultrametric Newick tree into depth form.

    The tree height is the common tip-to-origin distance, including the root
    edge when one is present; a stemless tree puts the origin at the root
    node, which is only valid if the observation time coincides with the
    deepest coalescence.  Pass ``height`` to place the origin explicitly
    (e.g. when reading stemless trees whose observation time is known).
    Non-binary or non-ultrametric input raises.
    """
    root = _NewickParser(text).parse()
    tip_depths = []
    boundaries = []

    def walk(node, dist):
        children, _label, length = node
        d = dist + (length if length is not None else 0.0)
        if not children:
            if length is None:
                raise NewickError("tip without edge length")
            tip_depths.append(d)
            return
        if len(children) != 2:
            raise NonBinaryError(
                f"node has {len(children)} children; only binary trees supported"
            )
        walk(children[0], d)
        boundaries.append(d)
        walk(children[1], d)

    walk(root, 0.0)
    span = max(tip_depths)
    dev = (span - min(tip_depths)) / span if span > 0 else 0.0
    if dev > rtol:
        raise NonUltrametricError(dev)
    if height is None:
        height = span
    elif height < span * (1.0 - rtol):
        raise NewickError(f"explicit height {height} below tip-to-root span {span}")
    # node depths are measured back from the tips, not from the origin
    depths = tuple(span - b for b in boundaries)
    return OrientedUltrametricTree(height=height, depths=depths)


# ---------------------------------------------------------------------------
# Sampling schemes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplingScheme:
    """full | bernoulli(y) | uniform_k(k).

    ``y=None`` under the Bernoulli variant means "unknown, to be estimated".
    """

    variant: str
    y: Optional[float] = None
    k: Optional[int] = None

    def __post_init__(self):
        if self.variant not in ("full", "bernoulli", "uniform_k"):
            raise DomainError(f"unknown sampling scheme {self.variant!r}")
        if self.variant == "bernoulli" and self.y is not None:
            if not (0.0 < self.y <= 1.0):
                raise DomainError("y must lie in (0, 1]")
        if self.variant == "uniform_k":
            if self.k is None or self.k < 1 or self.k != int(self.k):
                raise DomainError("k must be an integer >= 1")

    @classmethod
    def full(cls):
        return cls("full")

    @classmethod
    def bernoulli(cls, y: Optional[float]):
        return cls("bernoulli", y=y)

    @classmethod
    def uniform_k(cls, k: int):
        return cls("uniform_k", k=int(k))

    def describe(self) -> str:
        if self.variant == "full":
            return "full"
        if self.variant == "bernoulli":
            return f"bernoulli:{self.y}" if self.y is not None else "bernoulli:?"
        return f"k:{self.k}"


def parse_scheme(spec: str) -> SamplingScheme:
    """Parse "full" | "bernoulli:<y>" | "k:<int>" with positioned errors."""
    if spec == "full":
        return SamplingScheme.full()
    head, sep, arg = spec.partition(":")
    if head == "bernoulli":
        if not sep:
            raise SchemeError(spec, len(spec), "expected ':<y>'")
        try:
            y = float(arg)
        except ValueError:
            raise SchemeError(spec, len(head) + 1, f"bad probability {arg!r}") from None
        if not (0.0 < y <= 1.0):
            raise SchemeError(spec, len(head) + 1, "y must lie in (0, 1]")
        return SamplingScheme.bernoulli(y)
    if head == "k":
        if not sep:
            raise SchemeError(spec, len(spec), "expected ':<int>'")
        try:
            k = int(arg)
        except ValueError:
            raise SchemeError(spec, 2, f"bad integer {arg!r}") from None
        if k < 1:
            raise SchemeError(spec, 2, "k must be >= 1")
        return SamplingScheme.uniform_k(k)
    raise SchemeError(spec, 0, "expected 'full', 'bernoulli:<y>' or 'k:<int>'")


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

_MODEL_KEYS = {"kind", "lambda", "mu", "T"}


def _rate_from_json(obj, what: str) -> PiecewiseConstant:
    if isinstance(obj, (int, float)):
        return PiecewiseConstant.constant(float(obj))
    if isinstance(obj, dict):
        extra = set(obj) - {"breaks", "values"}
        if extra:
            raise ModelError(f"unknown keys in {what} table: {sorted(extra)}")
        return PiecewiseConstant(tuple(obj["breaks"]), tuple(obj["values"]))
    raise ModelError(f"{what} must be a number or a breaks/values table")


def rate_model_from_json(obj: dict) -> RateModel:
    if not isinstance(obj, dict):
        raise ModelError("model JSON must be an object")
    extra = set(obj) - _MODEL_KEYS
    if extra:
        raise ModelError(f"unknown keys in model JSON: {sorted(extra)}")
    missing = _MODEL_KEYS - set(obj)
    if missing:
        raise ModelError(f"missing keys in model JSON: {sorted(missing)}")
    kind = obj["kind"]
    T = float(obj["T"])
    lam = _rate_from_json(obj["lambda"], "lambda")
    mu_obj = obj["mu"]
    if kind == "age_dependent":
        if not isinstance(mu_obj, dict):
            raise ModelError("age-dependent mu must be a grid object")
        extra = set(mu_obj) - {"t_breaks", "x_breaks", "values"}
        if extra:
            raise ModelError(f"unknown keys in mu grid: {sorted(extra)}")
        mu: DeathRate = AgeDependentRate(
            tuple(mu_obj["t_breaks"]),
            tuple(mu_obj["x_breaks"]),
            tuple(tuple(row) for row in mu_obj["values"]),
        )
    else:
        mu = _rate_from_json(mu_obj, "mu")
    if kind == "constant" and not (
        lam.is_constant and isinstance(mu, PiecewiseConstant) and mu.is_constant
    ):
        raise ModelError("kind 'constant' requires scalar lambda and mu")
    return RateModel(kind, lam, mu, T)


def rate_model_to_json(model: RateModel) -> dict:
    def rate(r):
        if isinstance(r, PiecewiseConstant):
            if r.is_constant:
                return r.values[0]
            return {"breaks": list(r.breaks), "values": list(r.values)}
        return {
            "t_breaks": list(r.t_breaks),
            "x_breaks": list(r.x_breaks),
            "values": [list(row) for row in r.values],
        }

    return {"kind": model.kind, "lambda": rate(model.lam), "mu": rate(model.mu), "T": model.T}


def read_newick_file(path) -> list:
    """One tree per line, UTF-8; blank lines ignored."""
    trees = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                trees.append(newick_to_tree(line))
    return trees


def write_newick_file(path, trees, stem: bool = True):
    with open(path, "w", encoding="utf-8") as fh:
        for tree in trees:
            fh.write(tree_to_newick(tree, stem=stem) + "\n")


def write_depths_csv(path, trees):
    """Rows "rep,index,depth"; single-tip replicates contribute no rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("rep,index,depth\n")
        for rep, tree in enumerate(trees):
            for i, d in enumerate(tree.depths):
                fh.write(f"{rep},{i},{_fmt(d)}\n")


def read_depths_csv(path, height: float) -> list:
    trees = []
    rows: dict = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "rep,index,depth":
            raise ModelError(f"bad depths CSV header {header!r}")
        for line in fh:
            if not line.strip():
                continue
            rep, idx, depth = line.split(",")
            rows.setdefault(int(rep), []).append((int(idx), float(depth)))
    for rep in sorted(rows):
        depths = tuple(d for _, d in sorted(rows[rep]))
        trees.append(OrientedUltrametricTree(height=height, depths=depths))
    return trees
