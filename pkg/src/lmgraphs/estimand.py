"""Symbolic context-weighted adjustment estimands.

The expression tree is closed under exactly the constructs the recovery
criteria emit: conditional expectations, conditional integrals (outer
expectations), the treatment difference operator, and pattern-weighted sums.
Conditioning events reference only observed quantities: plain variables,
the treatment placeholder ``A=a``, and indicator assignments such as
``R_Y0=1``. Rendering is deterministic; the text form round-trips through
:func:`parse_text`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Union


@dataclass(frozen=True, order=True)
class Given:
    """One conditioning atom: a bare variable (value None) or an assignment
    ``var=value`` with value in {'0', '1', 'a'}."""

    var: str
    value: str | None = None

    def render(self) -> str:
        return self.var if self.value is None else f"{self.var}={self.value}"


def bare(*names: str) -> tuple[Given, ...]:
    return tuple(Given(n) for n in sorted(names))


def assign(**kv: int | str) -> tuple[Given, ...]:
    return tuple(Given(k, str(v)) for k, v in sorted(kv.items()))


def _order_given(conds: Iterable[Given]) -> tuple[Given, ...]:
    """Canonical order: bare variables (sorted), then the treatment
    assignment, then indicator assignments (sorted)."""
    conds = list(conds)
    bare_vars = sorted([c for c in conds if c.value is None], key=lambda c: c.var)
    treat = sorted([c for c in conds if c.value == "a"], key=lambda c: c.var)
    fixed = sorted(
        [c for c in conds if c.value not in (None, "a")], key=lambda c: c.var
    )
    return tuple(bare_vars + treat + fixed)


@dataclass(frozen=True)
class CondExp:
    """E[outcome | given]."""

    outcome: str
    given: tuple[Given, ...]

    def __post_init__(self):
        object.__setattr__(self, "given", _order_given(self.given))


@dataclass(frozen=True)
class Diff:
    """Difference operator over the treatment index: Δ_a body."""

    index: str
    body: "Estimand"


@dataclass(frozen=True)
class IntOver:
    """E_{vars | given} body: integral of the body over the conditional law
    of ``vars``. Empty ``given`` is a marginal outer expectation."""

    variables: tuple[str, ...]
    given: tuple[Given, ...]
    body: "Estimand"

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(sorted(self.variables)))
        object.__setattr__(self, "given", _order_given(self.given))


@dataclass(frozen=True)
class MixtureSum:
    """Sum over missingness patterns: Σ_r P(pattern_r) term_r."""

    terms: tuple[tuple[tuple[Given, ...], "Estimand"], ...]

    def __post_init__(self):
        object.__setattr__(
            self,
            "terms",
            tuple((_order_given(w), body) for w, body in self.terms),
        )


Estimand = Union[CondExp, Diff, IntOver, MixtureSum]


# --- text rendering -------------------------------------------------------------


def _render_given(conds: tuple[Given, ...]) -> str:
    return ",".join(c.render() for c in conds)


def render_text(e: Estimand) -> str:
    if isinstance(e, CondExp):
        if e.given:
            return f"E[{e.outcome}|{_render_given(e.given)}]"
        return f"E[{e.outcome}]"
    if isinstance(e, Diff):
        return f"Δ_{e.index} {render_text(e.body)}"
    if isinstance(e, IntOver):
        sub = ",".join(e.variables)
        if e.given:
            sub = f"{sub}|{_render_given(e.given)}"
        if re.fullmatch(r"\w+", sub):
            return f"E_{sub} {render_text(e.body)}"
        return f"E_{{{sub}}} {render_text(e.body)}"
    if isinstance(e, MixtureSum):
        parts = []
        for weight, body in e.terms:
            parts.append(f"P({_render_given(weight)}) {render_text(body)}")
        return " + ".join(parts)
    raise TypeError(f"not an estimand node: {e!r}")


# --- LaTeX rendering -------------------------------------------------------------


def _latex_name(name: str) -> str:
    """Y0 -> Y_{0}, R_Y0 -> R_{Y_{0}}, W -> W."""
    if name.startswith("R_"):
        return f"R_{{{_latex_name(name[2:])}}}"
    m = re.fullmatch(r"([A-Za-z]+)(\d+)", name)
    if m:
        return f"{m.group(1)}_{{{m.group(2)}}}"
    return name


def _latex_given(conds: tuple[Given, ...]) -> str:
    out = []
    for c in conds:
        if c.value is None:
            out.append(_latex_name(c.var))
        else:
            out.append(f"{_latex_name(c.var)}={c.value}")
    return ",".join(out)


def render_latex(e: Estimand) -> str:
    if isinstance(e, CondExp):
        if e.given:
            return (
                rf"\mathbb{{E}}\left[{_latex_name(e.outcome)} \mid "
                rf"{_latex_given(e.given)}\right]"
            )
        return rf"\mathbb{{E}}\left[{_latex_name(e.outcome)}\right]"
    if isinstance(e, Diff):
        return rf"\Delta_{{{e.index}}}\, {render_latex(e.body)}"
    if isinstance(e, IntOver):
        sub = ",".join(_latex_name(v) for v in e.variables)
        if e.given:
            sub = rf"{sub} \mid {_latex_given(e.given)}"
        return rf"\mathbb{{E}}_{{{sub}}}\, {render_latex(e.body)}"
    if isinstance(e, MixtureSum):
        parts = []
        for weight, body in e.terms:
            parts.append(
                rf"\mathbb{{P}}\left({_latex_given(weight)}\right)\, "
                + render_latex(body)
            )
        return " + ".join(parts)
    raise TypeError(f"not an estimand node: {e!r}")


# --- text parser (golden-test round trips) -----------------------------------------


class EstimandParseError(ValueError):
    pass


_TOKEN = re.compile(
    r"\s*(P\(|E\[|E_\{|E_|Δ_|\]|\}|\(|\)|\+|\||,|=|[A-Za-z_][A-Za-z0-9_]*|\d+)"
)


def _tokenize(text: str) -> list[str]:
    out, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise EstimandParseError(f"cannot tokenize at: {text[pos:pos+20]!r}")
        out.append(m.group(1))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, tokens: list[str]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, expect: str | None = None) -> str:
        if self.pos >= len(self.tokens):
            raise EstimandParseError("unexpected end of input")
        tok = self.tokens[self.pos]
        if expect is not None and tok != expect:
            raise EstimandParseError(f"expected {expect!r}, got {tok!r}")
        self.pos += 1
        return tok

    def parse_sum(self) -> Estimand:
        first_weight = None
        if self.peek() == "P(":
            first_weight = self.parse_weight()
        first_body = self.parse_chain()
        if first_weight is None and self.peek() != "+":
            return first_body
        terms = [((first_weight or ()), first_body)]
        while self.peek() == "+":
            self.take("+")
            weight = self.parse_weight() if self.peek() == "P(" else ()
            terms.append((weight, self.parse_chain()))
        return MixtureSum(tuple(terms))

    def parse_weight(self) -> tuple[Given, ...]:
        self.take("P(")
        conds = self.parse_given_list(")")
        self.take(")")
        return conds

    def parse_chain(self) -> Estimand:
        tok = self.peek()
        if tok == "E[":
            return self.parse_cond_exp()
        if tok in ("E_", "E_{"):
            variables, given = self.parse_subscript()
            return IntOver(variables, given, self.parse_chain())
        if tok == "Δ_":
            self.take("Δ_")
            index = self.take()
            return Diff(index, self.parse_chain())
        raise EstimandParseError(f"unexpected token {tok!r}")

    def parse_subscript(self) -> tuple[tuple[str, ...], tuple[Given, ...]]:
        tok = self.take()
        if tok == "E_":
            return (self.take(),), ()
        variables = [self.take()]
        while self.peek() == ",":
            self.take(",")
            if self.peek() == "|":  # pragma: no cover - defensive
                break
            variables.append(self.take())
        given: tuple[Given, ...] = ()
        if self.peek() == "|":
            self.take("|")
            given = self.parse_given_list("}")
        self.take("}")
        return tuple(variables), given

    def parse_cond_exp(self) -> CondExp:
        self.take("E[")
        outcome = self.take()
        given: tuple[Given, ...] = ()
        if self.peek() == "|":
            self.take("|")
            given = self.parse_given_list("]")
        self.take("]")
        return CondExp(outcome, given)

    def parse_given_list(self, closer: str) -> tuple[Given, ...]:
        conds: list[Given] = []
        while True:
            var = self.take()
            if self.peek() == "=":
                self.take("=")
                conds.append(Given(var, self.take()))
            else:
                conds.append(Given(var))
            if self.peek() == ",":
                self.take(",")
                continue
            if self.peek() == closer:
                return tuple(conds)
            raise EstimandParseError(
                f"expected ',' or {closer!r}, got {self.peek()!r}"
            )


def parse_text(text: str) -> Estimand:
    parser = _Parser(_tokenize(text))
    result = parser.parse_sum()
    if parser.peek() is not None:
        raise EstimandParseError(f"trailing tokens: {parser.tokens[parser.pos:]}")
    return result
