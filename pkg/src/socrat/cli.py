"""Command-line front door for the toolkit.

Three subcommands cover the pipeline: `explain` runs
perturb -> query -> fit -> partition on a single example, `partition`
re-solves a saved dependency graph, and `eval` reproduces the
letter-to-phoneme recovery experiment (bundled fixtures by default).

Every option resolves through the same precedence chain: command-line
flag first, then a SOCRAT_<NAME> environment variable, then a
`key = value` line in the --config file, then the built-in default.
The fully resolved configuration is embedded in each artifact's
provenance so a run can be reproduced from its output alone.

Exit codes are part of the contract: 0 success, 2 black box or
perturber failed at runtime, 3 partition bounds infeasible, 4 an input
file could not be read or parsed, 64 usage error.
"""

from __future__ import annotations

import argparse
import importlib.resources
import json
import os
import sys
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

from .blackbox import (BlackBoxKind, BlackBoxSpec, G2PDictionary,
                       make_synthetic_biased, query_batch)
from .causal import CausalConfig, RegressionPrior
from .core import ExamplePair, Scheme, Side, tokenize
from .errors import (BlackBoxFailureError, EmptyNeighborhoodError,
                     EmptySequenceError, ExternalPerturberUnavailableError,
                     FormatError, InfeasibleBoundsError, InvalidKError,
                     ProtocolError, SocratError)
from .evalharness import parse_gold_alignments, run_g2p_experiment
from .explain import RENDER_FORMATS, explain, render
from .partition import (PartitionConfig, cocluster_spectral, partition_exact,
                        partition_local_search)
from .perturb import (ExternalPerturberEndpoint, PerturberConfig,
                      load_perturbation_file)

_ENV_PREFIX = "SOCRAT_"


class _UsageError(Exception):
    """Bad flags, bad option values, bad config keys. Exits 64."""


@dataclass(frozen=True)
class RunConfig:
    """The resolved option set a command actually ran with."""

    command: str
    options: Mapping[str, object]

    def as_provenance(self) -> dict[str, object]:
        return {"command": self.command,
                "options": {k: v for k, v in sorted(self.options.items())}}


def _cast_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class _Opt:
    """One resolvable option: flag, env var and config key in one."""

    name: str
    cast: Callable[[str], object]
    default: object = None
    required: bool = False
    choices: tuple[str, ...] | None = None
    help: str = ""

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")

    def add_to(self, parser: argparse.ArgumentParser) -> None:
        # argparse defaults stay None so the resolver can tell "flag
        # given" from "fall through to env/config/default"
        if self.cast is _cast_bool:
            parser.add_argument(self.flag, action="store_true", default=None,
                                help=self.help)
        else:
            parser.add_argument(self.flag, type=str, default=None,
                                metavar=self.name.upper(), help=self.help)


_COMMON = [
    _Opt("out", str, help="write the artifact here instead of standard output"),
]

_EXPLAIN_OPTS = _COMMON + [
    _Opt("blackbox", str, required=True,
         help="box to explain: dict:PATH, permuter:IDXS|identity, "
              "subprocess:CMD, http:URL"),
    _Opt("input", str, required=True, help="original input line"),
    _Opt("output", str,
         help="original output line; queried from the box when omitted"),
    _Opt("bias", str,
         help="TRIGGER:ON:OFF register flip wrapped around the box"),
    _Opt("tokenize", str, "whitespace", choices=("whitespace", "char"),
         help="input tokenization scheme"),
    _Opt("format", str, "json", choices=RENDER_FORMATS,
         help="artifact format"),
    _Opt("n", int, 100, help="number of perturbations"),
    _Opt("seed", int, 0, help="master random seed"),
    _Opt("perturber", str, "auto",
         choices=("auto", "edit", "dropout", "external"),
         help="perturbation strategy"),
    _Opt("vocab", str, help="vocabulary file (one word per line) for the "
                            "edit strategy; defaults to the dictionary box's "
                            "own words"),
    _Opt("endpoint", str, help="external perturber URL"),
    _Opt("perturbations", str,
         help="precomputed perturbation file; skips perturbing and querying"),
    _Opt("dropout_rate", float, 0.2),
    _Opt("max_edit_distance", int, 2),
    _Opt("scaling", float, 1.0, help="perturbation strength hint"),
    _Opt("min_success", float, 0.5,
         help="abort when fewer than this fraction of queries answer"),
    _Opt("prior_alpha", float, 0.0, help="prior coefficient mean"),
    _Opt("prior_beta", float, 1.0, help="prior precision"),
    _Opt("interval_scale", float, 1.0, help="uncertainty half-width scale"),
    _Opt("workers", int, 1, help="parallel per-token fits"),
    _Opt("k", int, help="number of chunks; sized from the graph when omitted"),
    _Opt("gamma", float, 1.0, help="robustness budget"),
    _Opt("bounds", str,
         help="chunk size bounds as CU_MIN,CU_MAX,CV_MIN,CV_MAX ('-' keeps "
              "a side's default)"),
    _Opt("gap_tol", float, help="absolute optimality gap tolerance"),
    _Opt("time_limit", float, help="exact solver wall clock cap in seconds"),
    _Opt("solver", str, "auto",
         choices=("auto", "exact", "local", "spectral")),
    _Opt("exact_threshold", int, 16,
         help="auto solver switches to local search above this node count"),
    _Opt("restarts", int, 20, help="local search restarts"),
]

_PARTITION_OPTS = _COMMON + [
    _Opt("graph", str, required=True, help="dependency graph JSON file"),
    _Opt("solver", str, "exact", choices=("exact", "local", "spectral")),
    _Opt("k", int),
    _Opt("gamma", float, 1.0),
    _Opt("bounds", str),
    _Opt("gap_tol", float),
    _Opt("time_limit", float),
    _Opt("restarts", int, 20),
    _Opt("seed", int, 0),
]

_EVAL_OPTS = _COMMON + [
    _Opt("dict", str, help="pronunciation dictionary; bundled toy one when "
                           "omitted"),
    _Opt("gold", str, help="gold alignments; bundled ones when omitted"),
    _Opt("n_grid", str, required=True,
         help="comma-separated perturbation budgets, e.g. 10,100"),
    _Opt("seeds", str, required=True,
         help="seed count (a single integer N means seeds 0..N-1) or an "
              "explicit comma-separated list"),
    _Opt("max_edit_distance", int, 2),
    _Opt("scaling", float, 1.0),
    _Opt("prior_alpha", float, 0.0),
    _Opt("prior_beta", float, 1.0),
    _Opt("interval_scale", float, 1.0),
    _Opt("timings", _cast_bool, False,
         help="keep wall-clock columns (reruns stop being byte-identical)"),
]

_ALL_CONFIG_KEYS = {o.name for opts in (_EXPLAIN_OPTS, _PARTITION_OPTS,
                                        _EVAL_OPTS) for o in opts}


def _stage(msg: str) -> None:
    print(f"[socrat] {msg}", file=sys.stderr)


def _read_config_file(path: str) -> dict[str, str]:
    """`key = value` lines; # comments; keys may use dashes or underscores."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read config file: {exc}", path=path)
    out: dict[str, str] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError("expected 'key = value'", path=path, line=lineno)
        key = key.strip().lower().replace("-", "_")
        if key not in _ALL_CONFIG_KEYS:
            raise _UsageError(f"unknown config key {key!r} ({path}:{lineno})")
        out[key] = value.strip()
    return out


def _cast_value(opt: _Opt, raw: str, source: str) -> object:
    try:
        return opt.cast(raw)
    except (ValueError, TypeError):
        raise _UsageError(
            f"bad value {raw!r} for {opt.flag} (from {source})") from None


def _resolve_options(opts: Sequence[_Opt], ns: argparse.Namespace,
                     cfgfile: Mapping[str, str]) -> dict[str, object]:
    values: dict[str, object] = {}
    for opt in opts:
        value = getattr(ns, opt.name)
        if value is not None and opt.cast is not _cast_bool:
            value = _cast_value(opt, value, "flag")
        if value is None:
            env = os.environ.get(_ENV_PREFIX + opt.name.upper())
            if env is not None:
                value = _cast_value(opt, env, "environment")
            elif opt.name in cfgfile:
                value = _cast_value(opt, cfgfile[opt.name], "config file")
            else:
                value = opt.default
        if value is None and opt.required:
            raise _UsageError(f"missing required option {opt.flag}")
        if value is not None and opt.choices and value not in opt.choices:
            raise _UsageError(
                f"{opt.flag} must be one of {', '.join(opt.choices)}; "
                f"got {value!r}")
        values[opt.name] = value
    return values


def _parse_blackbox_spec(text: str) -> BlackBoxSpec:
    if text.startswith(("http://", "https://")):
        return BlackBoxSpec(BlackBoxKind.HTTP, {"url": text})
    kind, sep, rest = text.partition(":")
    if not sep:
        raise _UsageError(
            f"black box spec {text!r} needs a kind prefix like dict: or "
            "permuter:")
    if kind == "dict":
        return BlackBoxSpec(BlackBoxKind.DICT_G2P, {"path": rest})
    if kind == "permuter":
        params: dict[str, object] = {}
        if rest != "identity":
            try:
                params["permutation"] = tuple(
                    int(t) for t in rest.split(","))
            except ValueError:
                raise _UsageError(
                    f"permuter spec needs 'identity' or comma-separated "
                    f"indices, got {rest!r}") from None
        return BlackBoxSpec(BlackBoxKind.SYNTHETIC_PERMUTER, params)
    if kind == "subprocess":
        return BlackBoxSpec(BlackBoxKind.SUBPROCESS, {"command": rest})
    if kind == "http":
        return BlackBoxSpec(BlackBoxKind.HTTP, {"url": rest})
    raise _UsageError(f"unknown black box kind {kind!r}")


def _parse_bounds(text: str) -> dict[str, int | None]:
    fields = [f.strip() for f in text.split(",")]
    if len(fields) != 4:
        raise _UsageError("--bounds needs four comma-separated fields")
    names = ("c_u_min", "c_u_max", "c_v_min", "c_v_max")
    out: dict[str, int | None] = {}
    for name, field in zip(names, fields):
        if field in ("-", ""):
            continue
        try:
            out[name] = int(field)
        except ValueError:
            raise _UsageError(f"bad bound {field!r} in --bounds") from None
    return out


def _parse_int_list(text: str, flag: str) -> list[int]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise _UsageError(f"{flag} must list at least one integer")
    try:
        return [int(t) for t in items]
    except ValueError:
        raise _UsageError(f"{flag} must be comma-separated integers, "
                          f"got {text!r}") from None


def _parse_seeds(text: str) -> list[int]:
    if "," in text:
        return _parse_int_list(text, "--seeds")
    try:
        count = int(text)
    except ValueError:
        raise _UsageError(f"--seeds must be an integer count or a "
                          f"comma-separated list, got {text!r}") from None
    if count < 1:
        raise _UsageError("--seeds count must be >= 1")
    return list(range(count))


def _partition_config(opt: Mapping[str, object], n: int, m: int
                      ) -> PartitionConfig:
    cfg = PartitionConfig.defaults_for(n, m, k=opt["k"], gamma=opt["gamma"])
    if opt["bounds"]:
        cfg = replace(cfg, **_parse_bounds(opt["bounds"]))
    if opt["gap_tol"] is not None:
        cfg = replace(cfg, abs_gap_tol=opt["gap_tol"])
    if opt["time_limit"] is not None:
        cfg = replace(cfg, time_limit=opt["time_limit"])
    return cfg


def _write_artifact(text: str, out: object) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(str(out), "w", encoding="utf-8") as fh:
            fh.write(text)


def _fixture_path(name: str) -> str:
    return str(importlib.resources.files("socrat").joinpath("fixtures", name))


def cmd_explain(ns: argparse.Namespace, cfgfile: Mapping[str, str]) -> int:
    opt = _resolve_options(_EXPLAIN_OPTS, ns, cfgfile)
    run = RunConfig("explain", opt)
    spec = _parse_blackbox_spec(str(opt["blackbox"]))
    if opt["bias"]:
        parts = str(opt["bias"]).split(":")
        if len(parts) != 3:
            raise _UsageError("--bias needs TRIGGER:ON:OFF")
        spec = make_synthetic_biased(*parts, base=spec)
    scheme = (Scheme.WHITESPACE if opt["tokenize"] == "whitespace"
              else Scheme.CHARACTER)

    pset = None
    if opt["perturbations"]:
        _stage(f"loading perturbations from {opt['perturbations']}")
        pset = load_perturbation_file(str(opt["perturbations"]))
        pair = pset.original
    else:
        x = tokenize(str(opt["input"]), scheme, Side.INPUT)
        if opt["output"] is not None:
            y = tokenize(str(opt["output"]), scheme, Side.OUTPUT)
        else:
            _stage("querying the box for the original output")
            y = query_batch(spec, [x])[0]
            if y.is_absent:
                raise BlackBoxFailureError(
                    "the black box returned no output for the original "
                    "input; pass --output to explain against a reference")
        pair = ExamplePair(x, y)

    vocabulary = None
    if opt["vocab"]:
        try:
            with open(str(opt["vocab"]), encoding="utf-8") as fh:
                vocabulary = [w.strip() for w in fh if w.strip()]
        except OSError as exc:
            raise FormatError(f"cannot read vocabulary: {exc}",
                              path=str(opt["vocab"]))
    elif (spec.kind is BlackBoxKind.DICT_G2P
          and opt["perturber"] in ("auto", "edit") and pset is None):
        # the natural neighborhood for a dictionary box is its own words
        vocabulary = G2PDictionary.load(str(spec.parameters["path"])).words()

    perturber = PerturberConfig(
        n_samples=opt["n"], seed=opt["seed"], scaling=opt["scaling"],
        max_edit_distance=opt["max_edit_distance"],
        dropout_rate=opt["dropout_rate"])
    causal_cfg = CausalConfig(
        prior=RegressionPrior(alpha=opt["prior_alpha"],
                              beta=opt["prior_beta"]),
        interval_scale=opt["interval_scale"], workers=opt["workers"])
    pcfg = _partition_config(opt, len(pair.x), len(pair.y))
    endpoint = (ExternalPerturberEndpoint(str(opt["endpoint"]))
                if opt["endpoint"] else None)
    solver = {"local": "local_search"}.get(str(opt["solver"]),
                                           str(opt["solver"]))

    _stage(f"explaining ({len(pair.x)}x{len(pair.y)} graph, "
           f"solver={solver})")
    explanation = explain(
        pair, spec, perturber, causal_cfg, pcfg,
        strategy=str(opt["perturber"]), vocabulary=vocabulary,
        endpoint=endpoint, pset=pset, scheme=scheme, solver=solver,
        exact_threshold=opt["exact_threshold"], restarts=opt["restarts"],
        min_success=opt["min_success"])
    explanation.provenance["run"] = run.as_provenance()

    text = render(explanation, str(opt["format"]))
    if opt["format"] != "json":
        # render() keeps these formats bare; the artifact still has to
        # carry its run configuration
        comment = "//" if opt["format"] == "dot" else "#"
        header = (f"{comment} run: "
                  + json.dumps(run.as_provenance(), sort_keys=True) + "\n")
        text = header + text
    _write_artifact(text, opt["out"])
    _stage("done")
    return 0


def cmd_partition(ns: argparse.Namespace, cfgfile: Mapping[str, str]) -> int:
    opt = _resolve_options(_PARTITION_OPTS, ns, cfgfile)
    run = RunConfig("partition", opt)
    from .causal import DependencyGraph
    try:
        with open(str(opt["graph"]), encoding="utf-8") as fh:
            graph = DependencyGraph.from_json(fh.read())
    except OSError as exc:
        raise FormatError(f"cannot read graph file: {exc}",
                          path=str(opt["graph"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"not a dependency graph file: {exc}",
                          path=str(opt["graph"]))
    n, m = graph.shape
    cfg = _partition_config(opt, n, m)
    _stage(f"partitioning {n}x{m} graph with {opt['solver']} solver")
    if opt["solver"] == "exact":
        part = partition_exact(graph, cfg)
    elif opt["solver"] == "local":
        part = partition_local_search(graph, cfg, restarts=opt["restarts"],
                                      seed=opt["seed"])
    else:
        part = cocluster_spectral(graph, cfg.k, gamma=cfg.gamma,
                                  seed=opt["seed"])
    _write_artifact(part.to_json(provenance={"run": run.as_provenance()})
                    + "\n", opt["out"])
    _stage(f"done (cost {part.cost:.6g})")
    return 0


def cmd_eval(ns: argparse.Namespace, cfgfile: Mapping[str, str]) -> int:
    opt = _resolve_options(_EVAL_OPTS, ns, cfgfile)
    run = RunConfig("eval", opt)
    n_grid = _parse_int_list(str(opt["n_grid"]), "--n-grid")
    seeds = _parse_seeds(str(opt["seeds"]))
    dict_path = str(opt["dict"]) if opt["dict"] else _fixture_path("mini.dict")
    gold_path = str(opt["gold"]) if opt["gold"] else _fixture_path("mini.gold")
    try:
        dictionary = G2PDictionary.load(dict_path)
        gold = parse_gold_alignments(gold_path)
    except OSError as exc:
        raise FormatError(f"cannot read fixture: {exc}")
    perturber = PerturberConfig(
        n_samples=max(n_grid), scaling=opt["scaling"],
        max_edit_distance=opt["max_edit_distance"])
    causal_cfg = CausalConfig(
        prior=RegressionPrior(alpha=opt["prior_alpha"],
                              beta=opt["prior_beta"]),
        interval_scale=opt["interval_scale"])
    _stage(f"scoring {len(gold)} words over n={n_grid}, "
           f"{len(seeds)} seeds")
    report = run_g2p_experiment(dictionary, gold, n_grid, seeds,
                                perturber=perturber, causal_cfg=causal_cfg)
    report = replace(report, provenance={**dict(report.provenance),
                                         "run": run.as_provenance()})
    _write_artifact(report.to_csv(include_timings=bool(opt["timings"])),
                    opt["out"])
    if report.skipped:
        _stage("skipped words: " + " ".join(report.skipped))
    _stage(f"done ({len(report.records)} records)")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: ANN201 - argparse contract
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="socrat",
                     description="explain black-box sequence models by "
                                 "perturbation, regression and robust "
                                 "graph partitioning")
    parser.add_argument("--config", metavar="FILE",
                        help="key = value option file, lowest precedence")
    sub = parser.add_subparsers(dest="cmd")
    for name, opts, fn, blurb in (
            ("explain", _EXPLAIN_OPTS, cmd_explain,
             "explain one input/output pair against a black box"),
            ("partition", _PARTITION_OPTS, cmd_partition,
             "re-solve a saved dependency graph"),
            ("eval", _EVAL_OPTS, cmd_eval,
             "run the letter-to-phoneme recovery experiment")):
        p = sub.add_parser(name, help=blurb, description=blurb)
        for opt in opts:
            opt.add_to(p)
        p.set_defaults(func=fn)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if getattr(ns, "func", None) is None:
            raise _UsageError("a subcommand is required "
                              "(explain, partition or eval)")
        cfgfile = _read_config_file(ns.config) if ns.config else {}
        return ns.func(ns, cfgfile)
    except _UsageError as exc:
        print(f"socrat: usage error: {exc}", file=sys.stderr)
        return 64
    except (BlackBoxFailureError, ExternalPerturberUnavailableError,
            EmptyNeighborhoodError) as exc:
        print(f"socrat: black box or perturber failed: {exc}",
              file=sys.stderr)
        return 2
    except (InfeasibleBoundsError, InvalidKError) as exc:
        print(f"socrat: infeasible partition request: {exc}",
              file=sys.stderr)
        return 3
    except (FormatError, ProtocolError) as exc:
        print(f"socrat: cannot parse input: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"socrat: {exc}", file=sys.stderr)
        return 4
    except EmptySequenceError as exc:
        print(f"socrat: usage error: {exc}", file=sys.stderr)
        return 64
    except (SocratError, ValueError) as exc:
        print(f"socrat: usage error: {exc}", file=sys.stderr)
        return 64


if __name__ == "__main__":
    raise SystemExit(main())
