"""
Finite-difference checks of every differentiable op and of a full cell step.

Kernel cases compare the tape gradient of ``sum(op(x) * R)`` (R a fixed random
projection) against elementwise central differences. The cell case compares
the gradient along a random parameter direction against a two-sided
directional difference. Everything runs in float64.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional

import numpy as np

from pahs.tensorcore import ops
from pahs.tensorcore.kernels import ConvSpec
from pahs.tensorcore.tape import Tape, Var

logger = logging.getLogger(__name__)

KERNEL_TOL = 1e-4
CELL_TOL = 1e-3
KERNEL_EPS = 1e-5
CELL_EPS = 1e-6

Arrays = Dict[str, np.ndarray]
Build = Callable[[Mapping[str, Var]], Var]


@dataclass
class CheckResult:
    name: str
    seed: int
    rel_error: float
    tol: float
    method: str = "elementwise"

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.rel_error) and self.rel_error <= self.tol)


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), 0 when both vanish"""
    a = np.ravel(analytic).astype(np.float64)
    n = np.ravel(numeric).astype(np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def _evaluate(build: Build, arrays: Arrays, proj: np.ndarray, record: bool):
    tape = Tape(record=record)
    leaves = {k: tape.leaf(v, name=k) for k, v in arrays.items()}
    loss = ops.total(ops.mul(build(leaves), proj))
    return tape, loss


def check_function(
    name: str,
    build: Build,
    arrays: Arrays,
    seed: int,
    tol: float = KERNEL_TOL,
    eps: float = KERNEL_EPS,
) -> CheckResult:
    """Elementwise central-difference check of all inputs of ``build``"""
    rng = np.random.default_rng(seed + 10_000)
    scratch = Tape(record=False)
    sample = build({k: scratch.constant(v) for k, v in arrays.items()})
    proj = rng.standard_normal(sample.shape)

    tape, loss = _evaluate(build, arrays, proj, record=True)
    analytic = tape.backward(loss)

    worst = 0.0
    for key, value in arrays.items():
        numeric = np.zeros_like(value, dtype=np.float64)
        for idx in np.ndindex(value.shape):
            bumped = dict(arrays)
            plus = value.copy()
            plus[idx] += eps
            bumped[key] = plus
            f_plus = float(_evaluate(build, bumped, proj, record=False)[1].value)
            minus = value.copy()
            minus[idx] -= eps
            bumped[key] = minus
            f_minus = float(_evaluate(build, bumped, proj, record=False)[1].value)
            numeric[idx] = (f_plus - f_minus) / (2 * eps)
        worst = max(worst, rel_error(analytic[key], numeric))
    return CheckResult(name, seed, worst, tol)


def _away_from_zero(rng, shape, margin: float = 0.1) -> np.ndarray:
    """Random values with |x| >= margin so kinks stay outside the stencil"""
    u = rng.standard_normal(shape)
    return np.sign(u) * (margin + np.abs(u))


def _conv_case(spec: ConvSpec, hw: int):
    def make(rng):
        return {
            "x": rng.standard_normal((2, spec.in_channels, hw, hw)),
            "w": rng.standard_normal(spec.weight_shape),
            "b": rng.standard_normal(spec.out_channels),
        }

    op = ops.conv2d_transpose if spec.transposed else ops.conv2d

    def build(v):
        return op(v["x"], v["w"], v["b"], spec)

    return make, build


def kernel_cases() -> Dict[str, tuple]:
    """name -> (make(rng) -> arrays, build(vars) -> Var)"""
    cases = {
        "conv2d_k3s1p1": _conv_case(ConvSpec(2, 3, 3, 1, 1), 5),
        "conv2d_k3s2p1": _conv_case(ConvSpec(2, 2, 3, 2, 1), 6),
        "conv2d_k2s2p0": _conv_case(ConvSpec(3, 2, 2, 2, 0), 4),
        "conv2d_transpose_k3s2p1": _conv_case(
            ConvSpec(2, 3, 3, 2, 1, transposed=True, output_padding=1), 3
        ),
        "conv2d_transpose_k2s2p0": _conv_case(
            ConvSpec(2, 2, 2, 2, 0, transposed=True), 3
        ),
        "relu": (
            lambda rng: {"x": _away_from_zero(rng, (2, 3, 4))},
            lambda v: ops.relu(v["x"]),
        ),
        "sigmoid": (
            lambda rng: {"x": 3 * rng.standard_normal((2, 3, 4))},
            lambda v: ops.sigmoid(v["x"]),
        ),
        "softmax_rows": (
            lambda rng: {"x": rng.standard_normal((2, 4, 5))},
            lambda v: ops.softmax_rows(v["x"]),
        ),
        "matmul": (
            lambda rng: {
                "a": rng.standard_normal((2, 3, 4)),
                "b": rng.standard_normal((2, 4, 5)),
            },
            lambda v: ops.matmul(v["a"], v["b"]),
        ),
        "avg_pool": (
            lambda rng: {"x": rng.standard_normal((2, 4, 5))},
            lambda v: ops.avg_pool(v["x"], axis=-1),
        ),
        "fully_connected": (
            lambda rng: {
                "x": rng.standard_normal((2, 3, 4)),
                "w": rng.standard_normal((2, 4)),
                "b": rng.standard_normal(2),
            },
            lambda v: ops.fully_connected(v["x"], v["w"], v["b"]),
        ),
        "add_broadcast": (
            lambda rng: {
                "a": rng.standard_normal((2, 3, 4)),
                "b": rng.standard_normal((3, 1)),
            },
            lambda v: ops.add(v["a"], v["b"]),
        ),
        "sub": (
            lambda rng: {
                "a": rng.standard_normal((2, 3)),
                "b": rng.standard_normal((2, 3)),
            },
            lambda v: ops.sub(v["a"], v["b"]),
        ),
        "mul_broadcast": (
            lambda rng: {
                "a": rng.standard_normal((2, 3, 1)),
                "b": rng.standard_normal((2, 3, 4)),
            },
            lambda v: ops.mul(v["a"], v["b"]),
        ),
        "scale": (
            lambda rng: {"x": rng.standard_normal((3, 4))},
            lambda v: ops.scale(v["x"], -2.5),
        ),
        "concat": (
            lambda rng: {
                "a": rng.standard_normal((1, 2, 3, 3)),
                "b": rng.standard_normal((1, 3, 3, 3)),
            },
            lambda v: ops.concat([v["a"], v["b"]], axis=1),
        ),
        "reshape": (
            lambda rng: {"x": rng.standard_normal((2, 3, 4))},
            lambda v: ops.reshape(v["x"], (6, 4)),
        ),
        "transpose": (
            lambda rng: {"x": rng.standard_normal((2, 3, 4))},
            lambda v: ops.transpose(v["x"], (0, 2, 1)),
        ),
        "abs": (
            lambda rng: {"x": _away_from_zero(rng, (3, 4))},
            lambda v: ops.absolute(v["x"]),
        ),
        "square": (
            lambda rng: {"x": rng.standard_normal((3, 4))},
            lambda v: ops.square(v["x"]),
        ),
        "mean": (
            lambda rng: {"x": rng.standard_normal((3, 4))},
            lambda v: ops.mean(v["x"]),
        ),
        "sum": (
            lambda rng: {"x": rng.standard_normal((3, 4))},
            lambda v: ops.total(v["x"]),
        ),
        "res_block": (
            lambda rng: {
                "x": rng.standard_normal((1, 2, 4, 4)),
                "w1": rng.standard_normal((2, 2, 3, 3)),
                "b1": rng.standard_normal(2),
                "w2": rng.standard_normal((2, 2, 3, 3)),
                "b2": rng.standard_normal(2),
            },
            lambda v: ops.res_block(v["x"], v["w1"], v["b1"], v["w2"], v["b2"]),
        ),
    }
    return cases


def check_kernels(
    seeds: int = 20, names: Optional[List[str]] = None
) -> List[CheckResult]:
    results = []
    for name, (make, build) in kernel_cases().items():
        if names is not None and name not in names:
            continue
        for seed in range(seeds):
            rng = np.random.default_rng(seed)
            results.append(check_function(name, build, make(rng), seed))
    return results


def check_cell(
    seed: int, size: int = 16, steps: int = 2, eps: float = CELL_EPS
) -> CheckResult:
    """Directional check of ``steps`` chained cell steps at the tiny preset"""
    # Imported here: the model package depends on this one.
    from pahs.model.config import preset
    from pahs.model.network import RecurrentCarry, cell_step
    from pahs.model.parameters import BoundParameters, init_parameters

    config = preset("tiny", bidirectional=False, seed=seed)
    store = init_parameters(config)
    rng = np.random.default_rng(seed + 20_000)
    frames = [rng.uniform(0.0, 1.0, (1, 3, size, size)) for _ in range(steps)]
    proj = [rng.standard_normal((1, 3, size, size)) for _ in range(steps)]
    direction = {n: rng.standard_normal(v.shape) for n, v in store.items()}

    def loss_of(params: Mapping[str, np.ndarray], record: bool):
        tape = Tape(record=record)
        bound = {n: tape.leaf(v, name=n) for n, v in params.items()}
        p = BoundParameters(bound).scope("fwd")
        carry = RecurrentCarry.zeros(tape, config, 1, size, size)
        loss = None
        for B, R in zip(frames, proj):
            L, carry, _ = cell_step(tape.constant(B), carry, p, config)
            term = ops.total(ops.mul(L, R))
            loss = term if loss is None else ops.add(loss, term)
        return tape, loss

    tape, loss = loss_of(dict(store.items()), record=True)
    grads = tape.backward(loss)
    analytic = sum(float(np.sum(grads[n] * direction[n])) for n in direction)

    plus = {n: v + eps * direction[n] for n, v in store.items()}
    minus = {n: v - eps * direction[n] for n, v in store.items()}
    f_plus = float(loss_of(plus, record=False)[1].value)
    f_minus = float(loss_of(minus, record=False)[1].value)
    numeric = (f_plus - f_minus) / (2 * eps)
    error = rel_error(np.array([analytic]), np.array([numeric]))
    return CheckResult("cell_step", seed, error, CELL_TOL, method="directional")


def run_suite(seeds: int = 20, cell_seeds: int = 20) -> List[CheckResult]:
    """Every kernel case over ``seeds`` seeds, then the cell over ``cell_seeds``"""
    start = time.perf_counter()
    results = check_kernels(seeds)
    results.extend(check_cell(seed) for seed in range(cell_seeds))
    failed = [r for r in results if not r.passed]
    for r in failed:
        logger.error(
            f"gradcheck {r.name} seed={r.seed}: "
            f"rel error {r.rel_error:.3e} > {r.tol:g}"
        )
    logger.info(
        f"gradcheck: {len(results) - len(failed)}/{len(results)} passed "
        f"in {time.perf_counter() - start:.1f}s"
    )
    return results
