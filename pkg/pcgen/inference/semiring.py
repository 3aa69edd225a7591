"""
Semirings consumed by the semi-Markov chart.

Every semiring works on *payloads*: tuples of tensors with identical shapes.
The chart never looks inside a payload, it only calls `times`, `sum`, `one`
and `lift`, so swapping the semiring changes what the same recursion computes.

    real         (value,)             sum-product in linear space
    log          (value,)             log-sum-exp / +
    max          (score, decision)    max / + with the winning index
    expectation  (log_p, ratio)       entropy semiring, r stored as r / p

The expectation payload keeps p in log space and stores the accumulator as the
ratio s = r / p. Then the product rule <p1 p2, p1 r2 + p2 r1> becomes
<log p1 + log p2, s1 + s2> and the sum becomes a softmax-weighted average of the
ratios, so neither component under- or overflows on long sentences and the sign
of r rides along in s.

`SemiringElement`, `oplus`, `otimes` and `lift_potential` are the scalar-level
surface with instance checking; the chart uses the classes directly.
"""
from dataclasses import dataclass
from typing import Dict, Tuple, Type, Union

import torch

from pcgen.errors import ContractError, SemiringMismatchError

Payload = Tuple[torch.Tensor, ...]

NO_DECISION = -1


def stack(payloads, dim: int = 0) -> Payload:
    """Stack a list of payloads component-wise."""
    width = len(payloads[0])
    return tuple(torch.stack([p[k] for p in payloads], dim=dim) for k in range(width))


def index(payload: Payload, item) -> Payload:
    return tuple(t[item] for t in payload)


def unsqueeze(payload: Payload, dim: int) -> Payload:
    return tuple(t.unsqueeze(dim) for t in payload)


class Semiring:
    """Base contract. Subclasses are used as namespaces (classmethods only)."""
    name = "base"

    @classmethod
    def zero(cls, shape, dtype=torch.float64) -> Payload:
        raise NotImplementedError

    @classmethod
    def one(cls, shape, dtype=torch.float64) -> Payload:
        raise NotImplementedError

    @classmethod
    def lift(cls, log_phi: torch.Tensor) -> Payload:
        raise NotImplementedError

    @classmethod
    def plus(cls, a: Payload, b: Payload) -> Payload:
        return cls.sum(stack([a, b], dim=0), dim=0)

    @classmethod
    def times(cls, a: Payload, b: Payload) -> Payload:
        raise NotImplementedError

    @classmethod
    def sum(cls, x: Payload, dim: int) -> Payload:
        raise NotImplementedError

    @classmethod
    def times_all(cls, *payloads: Payload) -> Payload:
        cur = payloads[0]
        for p in payloads[1:]:
            cur = cls.times(cur, p)
        return cur


class RealSemiring(Semiring):
    name = "real"

    @classmethod
    def zero(cls, shape, dtype=torch.float64):
        return (torch.zeros(shape, dtype=dtype),)

    @classmethod
    def one(cls, shape, dtype=torch.float64):
        return (torch.ones(shape, dtype=dtype),)

    @classmethod
    def lift(cls, log_phi):
        return (torch.exp(log_phi),)

    @classmethod
    def times(cls, a, b):
        return (a[0] * b[0],)

    @classmethod
    def sum(cls, x, dim):
        return (x[0].sum(dim=dim),)


class LogSemiring(Semiring):
    name = "log"

    @classmethod
    def zero(cls, shape, dtype=torch.float64):
        return (torch.full(shape, float("-inf"), dtype=dtype),)

    @classmethod
    def one(cls, shape, dtype=torch.float64):
        return (torch.zeros(shape, dtype=dtype),)

    @classmethod
    def lift(cls, log_phi):
        return (log_phi,)

    @classmethod
    def times(cls, a, b):
        return (a[0] + b[0],)

    @classmethod
    def sum(cls, x, dim):
        return (torch.logsumexp(x[0], dim=dim),)


class MaxSemiring(Semiring):
    """Viterbi semiring. `sum` records the argmax position along the reduced axis.

    torch.argmax returns the first maximal index, so ties go to the smallest
    label / shortest span in the chart.
    """
    name = "max"

    @classmethod
    def zero(cls, shape, dtype=torch.float64):
        return (torch.full(shape, float("-inf"), dtype=dtype),
                torch.full(shape, NO_DECISION, dtype=torch.long))

    @classmethod
    def one(cls, shape, dtype=torch.float64):
        return (torch.zeros(shape, dtype=dtype),
                torch.full(shape, NO_DECISION, dtype=torch.long))

    @classmethod
    def lift(cls, log_phi):
        return (log_phi, torch.full(log_phi.shape, NO_DECISION, dtype=torch.long))

    @classmethod
    def plus(cls, a, b):
        take_a = a[0] >= b[0]
        return (torch.where(take_a, a[0], b[0]), torch.where(take_a, a[1], b[1]))

    @classmethod
    def times(cls, a, b):
        score = a[0] + b[0]
        decision = torch.where(a[1] != NO_DECISION, a[1], b[1])
        return (score, decision.expand(score.shape))

    @classmethod
    def sum(cls, x, dim):
        decision = torch.argmax(x[0], dim=dim)
        score = torch.gather(x[0], dim, decision.unsqueeze(dim)).squeeze(dim)
        return (score, decision)


class EntropySemiring(Semiring):
    """Expectation semiring specialised to entropy: lift(phi) = <phi, -phi log phi>."""
    name = "expectation"

    @classmethod
    def zero(cls, shape, dtype=torch.float64):
        return (torch.full(shape, float("-inf"), dtype=dtype), torch.zeros(shape, dtype=dtype))

    @classmethod
    def one(cls, shape, dtype=torch.float64):
        return (torch.zeros(shape, dtype=dtype), torch.zeros(shape, dtype=dtype))

    @classmethod
    def lift(cls, log_phi):
        # r / p = -log phi
        return (log_phi, -log_phi)

    @classmethod
    def times(cls, a, b):
        return (a[0] + b[0], a[1] + b[1])

    @classmethod
    def sum(cls, x, dim):
        log_p = torch.logsumexp(x[0], dim=dim)
        dead = torch.isneginf(log_p)
        safe = torch.where(dead, torch.zeros_like(log_p), log_p)
        weights = torch.exp(x[0] - safe.unsqueeze(dim))
        # 0 * ratio must stay 0 for zero-mass terms
        ratio = torch.where(torch.isneginf(x[0]), torch.zeros_like(x[1]), x[1])
        s = (weights * ratio).sum(dim=dim)
        return (log_p, torch.where(dead, torch.zeros_like(s), s))


SEMIRINGS: Dict[str, Type[Semiring]] = {
    RealSemiring.name: RealSemiring,
    LogSemiring.name: LogSemiring,
    MaxSemiring.name: MaxSemiring,
    EntropySemiring.name: EntropySemiring,
}

SemiringLike = Union[str, Type[Semiring]]


def get_semiring(semiring_id: SemiringLike) -> Type[Semiring]:
    if isinstance(semiring_id, type) and issubclass(semiring_id, Semiring):
        return semiring_id
    try:
        return SEMIRINGS[semiring_id]
    except KeyError:
        raise ContractError(f"unknown semiring '{semiring_id}' (expected one of {sorted(SEMIRINGS)})")


@dataclass(frozen=True)
class SemiringElement:
    """A scalar semiring value tagged with its semiring."""
    semiring: str
    payload: Payload

    def values(self) -> Tuple[float, ...]:
        """Natural-domain view: (v,), (log v,), (score, decision) or (p, r)."""
        if self.semiring == EntropySemiring.name:
            log_p, ratio = self.payload
            p = float(torch.exp(log_p))
            return (p, p * float(ratio))
        if self.semiring == MaxSemiring.name:
            return (float(self.payload[0]), int(self.payload[1]))
        return (float(self.payload[0]),)


def make_element(semiring_id: SemiringLike, *values) -> SemiringElement:
    """Build an element from its natural-domain values (inverse of `values`)."""
    sr = get_semiring(semiring_id)
    f64 = lambda v: torch.tensor(float(v), dtype=torch.float64)  # noqa: E731
    if sr is EntropySemiring:
        p, r = values
        if p < 0:
            raise ContractError("expectation semiring mass must be non-negative")
        if p == 0:
            if r != 0:
                raise ContractError("expectation semiring element <0, r> requires r = 0")
            return SemiringElement(sr.name, sr.zero(()))
        return SemiringElement(sr.name, (torch.log(f64(p)), f64(r / p)))
    if sr is MaxSemiring:
        score = values[0]
        decision = values[1] if len(values) > 1 else NO_DECISION
        return SemiringElement(sr.name, (f64(score), torch.tensor(int(decision), dtype=torch.long)))
    return SemiringElement(sr.name, (f64(values[0]),))


def zero(semiring_id: SemiringLike) -> SemiringElement:
    sr = get_semiring(semiring_id)
    return SemiringElement(sr.name, sr.zero(()))


def one(semiring_id: SemiringLike) -> SemiringElement:
    sr = get_semiring(semiring_id)
    return SemiringElement(sr.name, sr.one(()))


def _same(a: SemiringElement, b: SemiringElement) -> Type[Semiring]:
    if a.semiring != b.semiring:
        raise SemiringMismatchError(f"cannot combine '{a.semiring}' with '{b.semiring}' elements")
    return get_semiring(a.semiring)


def oplus(a: SemiringElement, b: SemiringElement) -> SemiringElement:
    sr = _same(a, b)
    return SemiringElement(sr.name, sr.plus(a.payload, b.payload))


def otimes(a: SemiringElement, b: SemiringElement) -> SemiringElement:
    sr = _same(a, b)
    return SemiringElement(sr.name, sr.times(a.payload, b.payload))


def lift_potential(log_phi, semiring_id: SemiringLike) -> SemiringElement:
    """Lift a potential given in log domain into `semiring_id`."""
    sr = get_semiring(semiring_id)
    log_phi = torch.as_tensor(log_phi, dtype=torch.float64)
    if not bool(torch.isfinite(log_phi).all()):
        raise ContractError(f"non-finite log-potential {log_phi.tolist()}")
    return SemiringElement(sr.name, sr.lift(log_phi))
