"""Line-oriented text format for :class:`~fgsmooth.problem.LinearProblem`.

::

    # comments run to end of line
    vars N d_x                       # states X_0..X_N, each of dimension d_x
    dims d_0 d_1 ... d_N             # optional per-state dimensions (overrides d_x)
    prior <a_0> cov <P_0>
    prop k <F_k> <a_{k+1}> cov <Q_k>
    obs anchor i: <H_i> j: <H_j> ... resid <c> cov <R>

Matrices are row-major.  Block sizes follow from the declared dimensions and,
for observations, from the length of ``resid``.  Numbers are parsed with
:func:`float`, which does not depend on the locale.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ParseError, ProblemError
from .problem import LinearProblem, ObservationFactor, PriorFactor, PropagationFactor, VariableLayout


class _Tokens:
    def __init__(self, tokens: list[str], lineno: int):
        self.tokens = tokens
        self.pos = 0
        self.lineno = lineno

    def error(self, msg: str) -> ParseError:
        return ParseError(f"line {self.lineno}: {msg}")

    def done(self) -> bool:
        return self.pos >= len(self.tokens)

    def peek(self) -> str | None:
        return None if self.done() else self.tokens[self.pos]

    def next(self, what: str) -> str:
        if self.done():
            raise self.error(f"expected {what}, found end of line")
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def keyword(self, kw: str) -> None:
        tok = self.next(f"'{kw}'")
        if tok != kw:
            raise self.error(f"expected '{kw}', found {tok!r}")

    def integer(self, what: str) -> int:
        tok = self.next(what)
        try:
            return int(tok)
        except ValueError:
            raise self.error(f"{what} must be an integer, found {tok!r}") from None

    def numbers(self, n: int, what: str) -> np.ndarray:
        out = np.empty(n)
        for j in range(n):
            tok = self.next(f"{n} numbers for {what}")
            try:
                out[j] = float(tok)
            except ValueError:
                raise self.error(f"{what}: expected a number, found {tok!r}") from None
        return out

    def until(self, stop) -> list[float]:
        vals = []
        while not self.done() and not stop(self.peek()):
            tok = self.next("number")
            try:
                vals.append(float(tok))
            except ValueError:
                raise self.error(f"expected a number, found {tok!r}") from None
        return vals

    def end(self) -> None:
        if not self.done():
            raise self.error(f"unexpected trailing tokens {self.tokens[self.pos:]}")


def _split_line(line: str) -> list[str]:
    line = line.split("#", 1)[0]
    # "3:0" and "3: 0" are both accepted
    return line.replace(":", ": ").split()


def _is_block_label(tok: str) -> bool:
    return tok.endswith(":") and tok[:-1].lstrip("-").isdigit()


def parse_problem(text: str) -> LinearProblem:
    """Parse the text format.  Raises :class:`ParseError` on any malformed input."""
    dims: tuple[int, ...] | None = None
    prior = None
    props: list[PropagationFactor] = []
    obs: list[ObservationFactor] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = _split_line(raw)
        if not toks:
            continue
        t = _Tokens(toks, lineno)
        kind = t.next("record type")
        try:
            if kind == "vars":
                if dims is not None:
                    raise t.error("duplicate 'vars' line")
                n, d = t.integer("N"), t.integer("d_x")
                if n < 0 or d < 1:
                    raise t.error("need N >= 0 and d_x >= 1")
                dims = (d,) * (n + 1)
                t.end()
            elif kind == "dims":
                if dims is None:
                    raise t.error("'dims' must follow 'vars'")
                new = tuple(int(v) for v in t.until(lambda _: False))
                if len(new) != len(dims) or min(new) < 1:
                    raise t.error(f"'dims' needs {len(dims)} positive integers")
                if prior is not None or props or obs:
                    raise t.error("'dims' must precede every factor")
                dims = new
            else:
                if dims is None:
                    raise t.error("the first record must be 'vars N d_x'")
                if kind == "prior":
                    if prior is not None:
                        raise t.error("duplicate prior")
                    d0 = dims[0]
                    a0 = t.numbers(d0, "a_0")
                    t.keyword("cov")
                    P0 = t.numbers(d0 * d0, "P_0").reshape(d0, d0)
                    t.end()
                    prior = PriorFactor(a0, P0)
                elif kind == "prop":
                    k = t.integer("k")
                    if not 0 <= k < len(dims) - 1:
                        raise t.error(f"propagation index {k} out of range")
                    d0, d1 = dims[k], dims[k + 1]
                    F = t.numbers(d1 * d0, f"F_{k}").reshape(d1, d0)
                    a = t.numbers(d1, f"a_{k + 1}")
                    t.keyword("cov")
                    Q = t.numbers(d1 * d1, f"Q_{k}").reshape(d1, d1)
                    t.end()
                    props.append(PropagationFactor(k, F, a, Q))
                elif kind == "obs":
                    obs.append(_parse_obs(t, dims))
                else:
                    raise t.error(f"unknown record type {kind!r}")
        except ParseError:
            raise
        except ProblemError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
    if dims is None:
        raise ParseError("missing 'vars N d_x' header")
    if prior is None:
        raise ParseError("missing prior")
    try:
        return LinearProblem(VariableLayout(dims), prior, props, obs)
    except ProblemError as exc:
        raise ParseError(str(exc)) from None


def _parse_obs(t: _Tokens, dims) -> ObservationFactor:
    anchor = t.integer("anchor")
    raw_blocks = []
    while t.peek() is not None and _is_block_label(t.peek()):
        i = int(t.next("index")[:-1])
        if not 0 <= i < len(dims):
            raise t.error(f"observation references missing state {i}")
        vals = t.until(lambda tok: tok == "resid" or _is_block_label(tok))
        raw_blocks.append((i, vals))
    if not raw_blocks:
        raise t.error("observation needs at least one 'i:' block")
    t.keyword("resid")
    c = np.array(t.until(lambda tok: tok == "cov"), dtype=float)
    t.keyword("cov")
    dz = c.shape[0]
    if dz == 0:
        raise t.error("empty residual")
    R = t.numbers(dz * dz, "R").reshape(dz, dz)
    t.end()
    blocks = []
    for i, vals in raw_blocks:
        if len(vals) != dz * dims[i]:
            raise t.error(f"H_{i} needs {dz}x{dims[i]} = {dz * dims[i]} numbers, got {len(vals)}")
        blocks.append((i, np.array(vals).reshape(dz, dims[i])))
    if anchor != max(i for i, _ in blocks):
        raise t.error(f"anchor {anchor} is not the largest index of the factor")
    return ObservationFactor(blocks, c, R)


def load_problem(path: str | os.PathLike) -> LinearProblem:
    with open(path, encoding="utf-8") as fh:
        return parse_problem(fh.read())


def _nums(a: np.ndarray) -> str:
    # repr() of a Python float round-trips exactly
    return " ".join(repr(float(v)) for v in np.ravel(a))


def format_problem(p: LinearProblem) -> str:
    """Canonical text form; ``parse_problem(format_problem(p))`` reproduces ``p`` exactly."""
    dims = p.layout.dims
    lines = [f"vars {p.N} {dims[0]}"]
    if len(set(dims)) > 1:
        lines.append("dims " + " ".join(map(str, dims)))
    lines.append(f"prior {_nums(p.prior.residual)} cov {_nums(p.prior.cov)}")
    for f in p.props:
        lines.append(f"prop {f.k} {_nums(f.F)} {_nums(f.residual)} cov {_nums(f.cov)}")
    for o in p.obs:
        blocks = " ".join(f"{i}: {_nums(H)}" for i, H in o.blocks)
        lines.append(f"obs {o.anchor} {blocks} resid {_nums(o.residual)} cov {_nums(o.cov)}")
    return "\n".join(lines) + "\n"


def save_problem(p: LinearProblem, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_problem(p))
