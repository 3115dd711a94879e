"""Command-line front end: fit-stream, label, simulate, evaluate.

Records are JSON lines of the form ``{"id": str, "labels": [int, ...]}``
with an optional ``"true_label"``. Run configuration comes from a flat
``key = value`` file (``--config``) and is overridden by explicit flags.

Exit codes: 0 success, 2 malformed input, 3 estimator failure,
4 missing, locked or incompatible state file.
"""

from __future__ import annotations

import argparse
import fcntl
import json
import logging
import math
import os
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field, replace

import numpy as np

from .encoding import LabelDomain, validate_batch
from .errors import StreamWSError, TooFewExamples
from .estimator import EstimatorConfig, EstimatorState, new_state, process_batch
from .harness import Dataset, HarnessConfig, evaluate, rows_to_csv, summary_json, sweep_table_csv
from .inference import hard_labels, posterior_batch
from .pcp import PcpConfig
from .structure import DependencyStructure
from .synthgen import SyntheticSpec, generate, records

log = logging.getLogger("streamws")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ESTIMATOR = 3
EXIT_STATE = 4

STATE_FORMAT = "streamws-state"
STATE_VERSION = 1
DEFAULT_BATCH_SIZE = 500


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---- run configuration ------------------------------------------------------

def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_optional_float(text: str):
    return None if text.strip().lower() in ("none", "auto", "") else float(text)


def _parse_prior(text: str):
    if text.strip().lower() in ("uniform", "none", ""):
        return None
    return tuple(float(x) for x in text.split(","))


_KEYS = {
    "num_classes": int,
    "alpha": float,
    "pcp.gamma": _parse_optional_float,
    "pcp.tol": float,
    "pcp.max_iter": int,
    "pcp.rho": float,
    "pcp.penalize_diagonal": _parse_bool,
    "threshold": str,
    "threshold.mode": str,
    "threshold.partial": float,
    "threshold.fraction": float,
    "fit.tol": float,
    "fit.max_iter": int,
    "fit.restarts": int,
    "eps_rel": float,
    "class_prior": _parse_prior,
    "batch_size": int,
    "seed": int,
    "prequential": _parse_bool,
    "num_batches": int,
}


@dataclass(frozen=True)
class RunConfig:
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    batch_size: int = DEFAULT_BATCH_SIZE
    prequential: bool = False
    num_batches: int = 100

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.num_batches < 1:
            raise ValueError("num_batches must be positive")

    def to_flat(self) -> dict:
        e = self.estimator
        if e.threshold is not None:
            threshold = repr(float(e.threshold))
        else:
            threshold = "auto"
        return {
            "num_classes": e.num_classes,
            "alpha": e.alpha,
            "pcp.gamma": e.pcp.gamma,
            "pcp.tol": e.pcp.tol,
            "pcp.max_iter": e.pcp.max_iter,
            "pcp.rho": e.pcp.rho,
            "pcp.penalize_diagonal": e.pcp.penalize_diagonal,
            "threshold": threshold,
            "threshold.mode": e.auto_threshold,
            "threshold.partial": e.partial_threshold,
            "threshold.fraction": e.max_fraction,
            "fit.tol": e.fit_tol,
            "fit.max_iter": e.fit_max_iter,
            "fit.restarts": e.restarts,
            "eps_rel": e.eps_rel,
            "class_prior": None if e.class_balance is None else list(e.class_balance),
            "batch_size": self.batch_size,
            "seed": e.seed,
            "prequential": self.prequential,
            "num_batches": self.num_batches,
        }


def apply_settings(cfg: RunConfig, settings: dict) -> RunConfig:
    """Return ``cfg`` with typed ``settings`` (dotted keys) applied."""
    e = cfg.estimator
    pcp = {}
    est = {}
    run = {}
    for key, value in settings.items():
        if key not in _KEYS:
            raise ValueError(f"unknown configuration key {key!r}")
        if key.startswith("pcp."):
            pcp[key[4:]] = value
        elif key == "threshold":
            text = str(value).strip().lower()
            if text == "auto":
                est["threshold"] = None
            elif text.startswith("auto:"):
                est["threshold"] = None
                est["auto_threshold"] = "max-fraction"
                est["max_fraction"] = float(text[5:])
            else:
                est["threshold"] = float(text)
        elif key == "threshold.mode":
            est["auto_threshold"] = value
        elif key == "threshold.partial":
            est["partial_threshold"] = value
        elif key == "threshold.fraction":
            est["max_fraction"] = value
        elif key == "fit.tol":
            est["fit_tol"] = value
        elif key == "fit.max_iter":
            est["fit_max_iter"] = value
        elif key == "fit.restarts":
            est["restarts"] = value
        elif key == "class_prior":
            est["class_balance"] = None if value is None else tuple(float(x) for x in value)
        elif key in ("num_classes", "alpha", "eps_rel", "seed"):
            est[key] = value
        else:
            run[key] = value
    if pcp:
        est["pcp"] = replace(e.pcp, **pcp)
    return replace(cfg, estimator=replace(e, **est), **run)


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        try:
            out[key] = _KEYS[key](value)
        except ValueError as exc:
            raise ValueError(f"config line {lineno}: {exc}") from None
    return out


def _settings_from_flat(flat: dict) -> dict:
    """Inverse of ``RunConfig.to_flat`` (values are already typed)."""
    settings = dict(flat)
    if settings.get("class_prior") is not None:
        settings["class_prior"] = tuple(settings["class_prior"])
    return settings


def _flag_settings(args) -> dict:
    s = {}
    for attr, key in (("alpha", "alpha"), ("gamma", "pcp.gamma"), ("threshold", "threshold"),
                      ("batch_size", "batch_size"), ("seed", "seed"),
                      ("num_classes", "num_classes")):
        value = getattr(args, attr, None)
        if value is not None:
            s[key] = value
    if getattr(args, "prequential", False):
        s["prequential"] = True
    return s


def resolve_config(args, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    try:
        if getattr(args, "config", None):
            with open(args.config, encoding="utf-8") as fh:
                cfg = apply_settings(cfg, parse_config_text(fh.read()))
        return apply_settings(cfg, _flag_settings(args))
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read config: {exc}") from None
    except ValueError as exc:
        raise CliError(EXIT_INPUT, f"bad configuration: {exc}") from None


# ---- records ------------------------------------------------------------------

def iter_records(stream, *, require_truth: bool = False):
    """Yield ``(lineno, record)``, raising CliError(2) on the first bad line."""
    width = None
    for lineno, line in enumerate(stream, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_INPUT, f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise CliError(EXIT_INPUT, f"line {lineno}: record must be a JSON object")
        if not isinstance(rec.get("id"), str):
            raise CliError(EXIT_INPUT, f"line {lineno}: missing string 'id'")
        labels = rec.get("labels")
        if not isinstance(labels, list) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in labels
        ):
            raise CliError(EXIT_INPUT, f"line {lineno}: 'labels' must be a list of integers")
        if width is None:
            width = len(labels)
        elif len(labels) != width:
            raise CliError(EXIT_INPUT, f"line {lineno}: expected {width} labels, got {len(labels)}")
        truth = rec.get("true_label")
        if truth is not None and (not isinstance(truth, int) or isinstance(truth, bool)):
            raise CliError(EXIT_INPUT, f"line {lineno}: 'true_label' must be an integer")
        if require_truth and truth is None:
            raise CliError(EXIT_INPUT, f"line {lineno}: missing 'true_label'")
        yield lineno, rec


@contextmanager
def _open_in(path):
    if path in (None, "-"):
        yield sys.stdin
    else:
        try:
            fh = open(path, encoding="utf-8")
        except OSError as exc:
            raise CliError(EXIT_INPUT, f"cannot read {path}: {exc}") from None
        with fh:
            yield fh


@contextmanager
def _open_out(path):
    if path in (None, "-"):
        yield sys.stdout
        sys.stdout.flush()
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh


def _validated(rows, domain, batch_index, first_line):
    try:
        return validate_batch(np.asarray(rows, dtype=np.int64), domain, batch_index)
    except StreamWSError as exc:
        row = getattr(exc, "row", None)
        where = f"line {first_line[row]}: " if row is not None else ""
        raise CliError(EXIT_INPUT, f"{where}{exc}") from None


# ---- state persistence ----------------------------------------------------------

def state_to_dict(state: EstimatorState, run: RunConfig) -> dict:
    def rows(a):
        return None if a is None else np.asarray(a, dtype=np.float64).tolist()

    s = state.structure
    return {
        "format": STATE_FORMAT,
        "version": STATE_VERSION,
        "m": state.m,
        "num_classes": state.config.num_classes,
        "batches_seen": state.batches_seen,
        "alpha": state.config.alpha,
        "prior": state.config.balance().tolist(),
        "mu": rows(state.mu),
        "z": rows(state.z),
        "coverage": rows(state.coverage),
        "edges": None if s is None else [list(e) for e in sorted(s.edges)],
        "threshold": None if s is None else s.threshold,
        "config": run.to_flat(),
    }


def state_from_dict(d: dict) -> tuple[EstimatorState, RunConfig]:
    if not isinstance(d, dict) or d.get("format") != STATE_FORMAT:
        raise CliError(EXIT_STATE, "not a streamws state file")
    version = d.get("version")
    if not isinstance(version, int) or version > STATE_VERSION or version < 1:
        raise CliError(EXIT_STATE, f"unsupported state version {version!r}")
    try:
        run = apply_settings(RunConfig(), _settings_from_flat(d["config"]))
        m = int(d["m"])

        def arr(x):
            return None if x is None else np.asarray(x, dtype=np.float64)

        structure = None
        if d.get("edges") is not None:
            structure = DependencyStructure.from_edges(m, [tuple(e) for e in d["edges"]],
                                                       d["threshold"])
        state = EstimatorState(
            config=run.estimator,
            m=m,
            mu=arr(d["mu"]),
            z=arr(d["z"]),
            coverage=arr(d["coverage"]),
            structure=structure,
            batches_seen=int(d["batches_seen"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_STATE, f"corrupt state file: {exc}") from None
    if state.batches_seen > 0 and (state.mu is None or state.structure is None):
        raise CliError(EXIT_STATE, "corrupt state file: estimates missing")
    return state, run


def load_state(path: str) -> tuple[EstimatorState, RunConfig]:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise CliError(EXIT_STATE, f"state file {path} does not exist") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_STATE, f"cannot read state file {path}: {exc}") from None
    return state_from_dict(data)


def save_state(path: str, state: EstimatorState, run: RunConfig) -> None:
    """Write-temp-then-rename so a crash never leaves a torn state file."""
    text = json.dumps(state_to_dict(state, run), indent=2, sort_keys=True) + "\n"
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".state-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@contextmanager
def state_lock(path: str):
    """Advisory exclusive lock on ``<state>.lock``; one writer per state file."""
    lock_path = path + ".lock"
    with open(lock_path, "a") as fh:
        try:
            fcntl.flock(fh.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise CliError(EXIT_STATE, f"state file {path} is locked by another process") from None
        try:
            yield
        finally:
            fcntl.flock(fh.fileno(), fcntl.LOCK_UN)


# ---- commands --------------------------------------------------------------------

def _metrics(state: EstimatorState, batch_index: int, q: int, truth, votes) -> dict:
    out = {"batch": batch_index, "examples": q, "mu": state.mu.tolist()}
    if truth is not None:
        probs, _, _ = posterior_batch(votes, state.accuracy_matrix(), state.coverage,
                                      state.config.balance(), state.structure)
        out["label_accuracy"] = float(np.mean(hard_labels(probs) == truth))
    return out


def cmd_fit_stream(args) -> int:
    if os.path.exists(args.state):
        state, stored = load_state(args.state)
        run = resolve_config(args, stored)
        if run.estimator.num_classes != state.config.num_classes:
            raise CliError(EXIT_STATE, "num_classes differs from the state file")
        state = replace(state, config=run.estimator)
    else:
        run = resolve_config(args)
        state = None
    domain = LabelDomain(run.estimator.num_classes)

    with state_lock(args.state), _open_in(args.input) as src, _open_out(args.metrics) as out:
        pending, lines, truths = [], [], []
        seen_any = False

        def flush():
            nonlocal state
            if state is None:
                state = new_state(run.estimator, len(pending[0]))
            elif len(pending[0]) != state.m:
                raise CliError(EXIT_INPUT, f"line {lines[0]}: records have {len(pending[0])} "
                                           f"labels, state expects {state.m}")
            batch = _validated(pending, domain, state.batches_seen, lines)
            try:
                state, _ = process_batch(state, batch)
            except (StreamWSError, np.linalg.LinAlgError) as exc:
                raise CliError(EXIT_ESTIMATOR, f"batch {batch.batch_index}: {exc}") from None
            save_state(args.state, state, run)
            truth = np.asarray(truths) if all(t is not None for t in truths) else None
            out.write(json.dumps(_metrics(state, batch.batch_index, batch.q, truth, batch.votes),
                                 sort_keys=True) + "\n")
            pending.clear()
            lines.clear()
            truths.clear()

        for lineno, rec in iter_records(src):
            seen_any = True
            pending.append(rec["labels"])
            lines.append(lineno)
            truths.append(rec.get("true_label"))
            if len(pending) == run.batch_size:
                flush()
        if pending:
            flush()
        if not seen_any:
            raise CliError(EXIT_INPUT, "no records")
    return EXIT_OK


def cmd_label(args) -> int:
    state, _ = load_state(args.state)
    if state.batches_seen < 1:
        raise CliError(EXIT_STATE, "state has not seen any batch")
    domain = LabelDomain(state.config.num_classes)
    with _open_in(args.input) as src:
        recs = list(iter_records(src))
    if not recs:
        return EXIT_OK
    width = len(recs[0][1]["labels"])
    if width != state.m:
        raise CliError(EXIT_INPUT, f"line {recs[0][0]}: records have {width} labels, "
                                   f"state expects {state.m}")
    batch = _validated([r["labels"] for _, r in recs], domain, 0, [n for n, _ in recs])
    probs, abstained, _ = posterior_batch(batch.votes, state.accuracy_matrix(), state.coverage,
                                          state.config.balance(), state.structure)
    hard = hard_labels(probs)
    with _open_out(args.output) as out:
        for (_, rec), p, h, a in zip(recs, probs, hard, abstained):
            out.write(json.dumps({"id": rec["id"], "probs": [float(x) for x in p],
                                  "hard": int(h), "abstained": bool(a)}) + "\n")
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        with open(args.spec, encoding="utf-8") as fh:
            spec = SyntheticSpec.from_json(fh.read())
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read spec: {exc}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_INPUT, f"bad simulation spec: {exc}") from None
    if args.n < 0:
        raise CliError(EXIT_INPUT, "n must be non-negative")
    with _open_out(args.output) as out:
        if args.n == 0:
            return EXIT_OK
        y, batch = generate(spec, args.n)
        for rec in records(y, batch):
            out.write(json.dumps(rec) + "\n")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run = resolve_config(args)
    with _open_in(args.input) as src:
        recs = [r for _, r in iter_records(src, require_truth=True)]
    if not recs:
        raise CliError(EXIT_INPUT, "no records")
    domain = LabelDomain(run.estimator.num_classes)
    batch = _validated([r["labels"] for r in recs], domain, 0, list(range(1, len(recs) + 1)))
    labels = np.array([r["true_label"] for r in recs], dtype=np.int64)
    if np.any((labels < 1) | (labels > domain.num_classes)):
        raise CliError(EXIT_INPUT, "true_label outside the label domain")
    data = Dataset(batch.votes, labels, tuple(r["id"] for r in recs))
    hcfg = HarnessConfig(estimator=run.estimator, num_batches=run.num_batches,
                         prequential=run.prequential)
    try:
        rows, summary = evaluate(data, hcfg, args.mode)
    except TooFewExamples as exc:
        raise CliError(EXIT_INPUT, str(exc)) from None
    except (StreamWSError, np.linalg.LinAlgError) as exc:
        raise CliError(EXIT_ESTIMATOR, str(exc)) from None

    os.makedirs(args.output_dir, exist_ok=True)
    stem = os.path.join(args.output_dir, f"evaluate_{args.mode}")
    _write_text(stem + ".csv", rows_to_csv(rows))
    _write_text(stem + ".json", summary_json(summary))
    if args.mode == "sweep":
        _write_text(os.path.join(args.output_dir, "alpha_table.csv"), sweep_table_csv(summary))
    if "mean_accuracy" in summary:
        print(f"mean accuracy {summary['mean_accuracy']:.4f}")
    return EXIT_OK


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---- argument parsing ------------------------------------------------------------

def _threshold_arg(text):
    t = text.strip().lower()
    if t == "auto" or t.startswith("auto:"):
        if t.startswith("auto:"):
            float(t[5:])
        return t
    value = float(t)
    if not math.isfinite(value) or value < 0:
        raise argparse.ArgumentTypeError("threshold must be a non-negative number or 'auto'")
    return t


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamws", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def estimator_flags(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--alpha", type=float, help="EWMA mixing parameter in [0, 1]")
        p.add_argument("--gamma", type=float, help="PCP sparsity weight (default 1/sqrt(m))")
        p.add_argument("--threshold", type=_threshold_arg,
                       help="edge threshold T: a number, 'auto', or 'auto:FRACTION'")
        p.add_argument("--num-classes", type=int, dest="num_classes")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("fit-stream", help="update a state file from a JSONL stream")
    p.add_argument("input", nargs="?", default="-", help="JSONL records (default stdin)")
    p.add_argument("--state", required=True)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--metrics", default="-", help="per-batch metrics JSONL (default stdout)")
    estimator_flags(p)
    p.set_defaults(func=cmd_fit_stream)

    p = sub.add_parser("label", help="posterior labels for JSONL records")
    p.add_argument("input", nargs="?", default="-")
    p.add_argument("--state", required=True)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("simulate", help="sample a synthetic dataset from a JSON spec")
    p.add_argument("spec")
    p.add_argument("-n", type=int, required=True)
    p.add_argument("-o", "--output", default="-")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="fold-protocol evaluation against true labels")
    p.add_argument("input")
    p.add_argument("--mode", choices=("incremental", "baseline", "sweep"), default="incremental")
    p.add_argument("--prequential", action="store_true")
    p.add_argument("--output-dir", default=".")
    estimator_flags(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def _configure_logging():
    level = os.environ.get("STREAMWS_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"streamws: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
