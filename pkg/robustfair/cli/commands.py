"""
Command handlers: load an instance file, run the matching service and build
the JSON report. Exit codes: 0 ok, 2 bad instance file, 3 domain error,
4 report written but the solver did not converge.
"""
import csv
import hashlib
import json
import logging
import sys
import time
from argparse import Namespace
from pathlib import Path
from typing import Any, Callable, Optional, Tuple

from pydantic import TypeAdapter, ValidationError

from robustfair.config import get_settings
from robustfair.exceptions import RobustFairError
from robustfair.models import Direction
from robustfair.schemas import InstanceFile, ReportFile, ServiceOutcome, SolveReport
from robustfair.services import (
    AdversaryService,
    AggregateService,
    AllocationService,
    BoundsService,
    GameService,
    SampleComplexityService,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_BAD_INSTANCE = 2
EXIT_DOMAIN = 3
EXIT_NOT_CONVERGED = 4

_instance_adapter = TypeAdapter(InstanceFile)


class InstanceFileError(Exception):
    """An instance file that is not valid JSON or does not match its schema"""

    def __init__(self, path: str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


def _line_of(text: str, loc: Tuple[Any, ...]) -> int:
    """Line of the deepest key of a validation error location that can be found in the text"""
    offset = 0
    for part in loc:
        if not isinstance(part, str):
            continue
        found = text.find(f'"{part}"', offset)
        if found < 0:
            break
        offset = found
    return text.count("\n", 0, offset) + 1


def _domain_error(exc: ValidationError) -> Optional[RobustFairError]:
    """The library error a model validator raised, if any (welfare validity, simplex checks)"""
    for error in exc.errors():
        wrapped = error.get("ctx", {}).get("error")
        if isinstance(wrapped, RobustFairError):
            return wrapped
    return None


def load_instance(path: str, kind: str):
    """Parse and validate an instance file; returns (body, sha256 digest)"""
    raw = Path(path).read_bytes()
    digest = "sha256:" + hashlib.sha256(raw).hexdigest()
    text = raw.decode("utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFileError(path, exc.lineno, f"invalid JSON: {exc.msg}") from exc
    try:
        instance = _instance_adapter.validate_python(data)
    except ValidationError as exc:
        domain = _domain_error(exc)
        if domain is not None:
            raise domain from exc
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first["loc"])
        raise InstanceFileError(path, _line_of(text, first["loc"]), f"{where}: {first['msg']}") from exc
    if instance.kind != kind:
        raise InstanceFileError(path, _line_of(text, ("kind",)), f"expected kind '{kind}', got '{instance.kind}'")
    return instance.body, digest


def _flag(flags: Namespace, name: str, default=None):
    value = getattr(flags, name, None)
    return default if value is None else value


def _seed(flags: Namespace) -> int:
    return _flag(flags, "seed", get_settings().seed)


def _report(kind: str, digest: str, seed: int, outcome: ServiceOutcome, started: float, flags: Namespace) -> ReportFile:
    diagnostics = dict(outcome.diagnostics)
    diagnostics["converged"] = outcome.converged
    timing = None if _flag(flags, "no_timing", False) else {"elapsed_s": time.perf_counter() - started}
    return ReportFile(kind=kind, input_digest=digest, seed=seed, result=outcome.result, diagnostics=diagnostics, timing=timing)


def cmd_eval(path: str, flags: Namespace) -> ReportFile:
    started = time.perf_counter()
    body, digest = load_instance(path, "aggregate")
    outcome = AggregateService.evaluate(body, with_gradient=_flag(flags, "grad", False))
    return _report("aggregate", digest, _seed(flags), outcome, started, flags)


def cmd_adversary(path: str, flags: Namespace) -> ReportFile:
    started = time.perf_counter()
    body, digest = load_instance(path, "adversary")
    direction = _flag(flags, "direction")
    outcome = AdversaryService.respond(body, Direction(direction) if direction else None)
    return _report("adversary", digest, _seed(flags), outcome, started, flags)


def write_trace(report: SolveReport, out: str) -> None:
    """Iteration trace as CSV with columns iter,value,gap,step"""
    with open(out, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["iter", "value", "gap", "step"])
        for point in report.trace or []:
            writer.writerow([point.iter, repr(point.value), "" if point.gap is None else repr(point.gap), repr(point.step)])


def cmd_solve(path: str, flags: Namespace) -> ReportFile:
    started = time.perf_counter()
    body, digest = load_instance(path, "allocation")
    trace = _flag(flags, "trace")
    report = AllocationService.solve(
        body, seed=_flag(flags, "seed"), tolerance=_flag(flags, "tol"), record_trace=trace is not None
    )
    if trace is not None:
        write_trace(report, trace)
        logger.info("wrote %d trace rows to %s", len(report.trace or []), trace)
    outcome = AllocationService.outcome(body, report)
    return _report("allocation", digest, report.seed, outcome, started, flags)


def cmd_game(path: str, flags: Namespace) -> ReportFile:
    started = time.perf_counter()
    body, digest = load_instance(path, "game")
    outcome = GameService.analyze(
        body,
        verify=_flag(flags, "verify_equilibrium", False),
        resolution=_flag(flags, "grid", 1e-2),
        interchange=_flag(flags, "interchange", False),
        tolerance=_flag(flags, "tol"),
    )
    return _report("game", digest, _seed(flags), outcome, started, flags)


def cmd_bounds(path: str, flags: Namespace) -> ReportFile:
    started = time.perf_counter()
    body, digest = load_instance(path, "bounds")
    seed = _seed(flags)
    outcome = BoundsService.compute(body, trials=_flag(flags, "trials"), seed=seed)
    return _report("bounds", digest, seed, outcome, started, flags)


def cmd_samples(path: str, flags: Namespace) -> ReportFile:
    started = time.perf_counter()
    body, digest = load_instance(path, "sample_complexity")
    outcome = SampleComplexityService.compute(body)
    return _report("sample_complexity", digest, _seed(flags), outcome, started, flags)


def render(report: ReportFile, indent: Optional[int] = None) -> str:
    indent = get_settings().json_indent if indent is None else indent
    data = report.model_dump(mode="json")
    if data.get("timing") is None:
        data.pop("timing", None)
    return json.dumps(data, indent=indent, ensure_ascii=False) + "\n"


def run(command: Callable[[str, Namespace], ReportFile], flags: Namespace) -> int:
    """Run one handler, write its report to stdout and map failures to exit codes"""
    logger.info("running %s on %s", command.__name__, flags.path)
    try:
        report = command(flags.path, flags)
    except InstanceFileError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_BAD_INSTANCE
    except (OSError, UnicodeDecodeError) as exc:
        print(f"{flags.path}:1: {exc}", file=sys.stderr)
        return EXIT_BAD_INSTANCE
    except (RobustFairError, ValidationError) as exc:
        print(f"{flags.path}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    sys.stdout.write(render(report, _flag(flags, "json_indent")))
    if not report.diagnostics.get("converged", True):
        print(f"{flags.path}: solver did not converge", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK
