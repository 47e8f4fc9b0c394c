import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Iterator, List, Tuple, Union

import numpy as np
from loguru import logger

from errors import InputFormatError

PathLike = Union[str, Path]

# --------------------------- JSONL ---------------------------

def read_jsonl(path: PathLike) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """Yield (line number, record) for every non-blank line of a JSONL file."""
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise InputFormatError(f"{path}:{lineno}: invalid JSON ({e.msg})", field=f"line {lineno}")
            if not isinstance(record, dict):
                raise InputFormatError(f"{path}:{lineno}: expected a JSON object", field=f"line {lineno}")
            yield lineno, record


def write_jsonl(path: PathLike, records: Iterable[Dict[str, Any]]) -> int:
    """Write one JSON object per line; key order is preserved so output is reproducible."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
            n += 1
    return n

# --------------------------- Optimizer ---------------------------

Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]


@dataclass
class OptimizeResult:
    x: np.ndarray
    value: float
    grad_norm: float
    n_iter: int
    converged: bool
    history: List[float] = field(default_factory=list)


def minimize_backtracking(
    fun: Objective,
    x0: np.ndarray,
    tol: float,
    max_iter: int,
    armijo: float = 1e-4,
    shrink: float = 0.5,
    max_halvings: int = 60,
) -> OptimizeResult:
    """
    Batch gradient descent with Armijo backtracking.
    The trial step is the Barzilai-Borwein estimate from the previous move;
    only steps that decrease the objective are accepted, so `history` is monotone.
    """
    x = np.array(x0, dtype=np.float64)
    value, grad = fun(x)
    history = [float(value)]
    step = 1.0
    grad_norm = float(np.linalg.norm(grad))
    n_iter = 0

    while n_iter < max_iter and grad_norm >= tol:
        g2 = grad_norm * grad_norm
        t = step
        accepted = False
        for _ in range(max_halvings):
            candidate = x - t * grad
            cand_value, cand_grad = fun(candidate)
            if np.isfinite(cand_value) and cand_value <= value - armijo * t * g2:
                accepted = True
                break
            t *= shrink
        if not accepted:
            logger.debug("line search found no decrease after {} halvings; stopping", max_halvings)
            break

        s = candidate - x
        y = cand_grad - grad
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 1e-300 else t * 2.0
        step = min(max(step, 1e-10), 1e10)

        x, value, grad = candidate, cand_value, cand_grad
        grad_norm = float(np.linalg.norm(grad))
        history.append(float(value))
        n_iter += 1
        logger.debug("iter {}: objective={:.6f} |grad|={:.3e}", n_iter, value, grad_norm)

    return OptimizeResult(
        x=x,
        value=float(value),
        grad_norm=grad_norm,
        n_iter=n_iter,
        converged=grad_norm < tol,
        history=history,
    )
