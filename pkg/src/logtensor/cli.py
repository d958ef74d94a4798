"""Batch driver: ``logtensor verify SUITE [flags]`` and ``logtensor run SCENARIO.yaml``.

Exit status is 0 exactly when every executed check passed; malformed input
exits with status 2.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor

import yaml

from . import pz_dual as pd
from . import suites
from .errors import LogTensorError, NoRun, ParseError, ValidationError
from .graded_modules import split_l0, strong_grading_check, validate_module, virasoro_failures
from .heisenberg import build_fock, build_intertwiner, build_voa, fock_intertwiner
from .log_intertwiner import structure_check, validate_axioms
from .reports import CheckReport
from .scalars import rat

SUITE_NAMES = ("series", "comb", "module", "intertwiner", "pz", "compose")
FORMATS = ("json", "text", "tsv")


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("LOGTENSOR_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# runs and their renderings


class Run:
    """Ordered results ``[(suite label, [CheckReport], seconds)]``."""

    def __init__(self, timing: bool = False):
        self.results: list = []
        self.timing = timing

    @property
    def checks(self) -> int:
        return sum(r.checked for _, reps, _ in self.results for r in reps)

    @property
    def failed_reports(self) -> list:
        return [(label, r) for label, reps, _ in self.results for r in reps if not r.passed]

    @property
    def passed(self) -> bool:
        return not self.failed_reports

    def to_dict(self) -> dict:
        out = []
        for label, reps, secs in self.results:
            entry = {"suite": label, "passed": all(r.passed for r in reps), "checks": [r.to_dict() for r in reps]}
            if self.timing:
                entry["seconds"] = round(secs, 3)
            out.append(entry)
        return {"suites": out,
                "summary": {"reports": sum(len(reps) for _, reps, _ in self.results),
                            "failed_reports": len(self.failed_reports),
                            "checks": self.checks, "passed": self.passed}}


def render(run: Run | None, fmt: str = "text") -> str:
    if run is None:
        raise NoRun("nothing has been run yet")
    if fmt == "json":
        return json.dumps(run.to_dict(), sort_keys=True, indent=2) + "\n"
    if fmt == "tsv":
        lines = ["suite\tcheck\tpassed\tchecked\tfailed"]
        for label, reps, _ in run.results:
            for r in reps:
                lines.append(f"{label}\t{r.tag}\t{str(r.passed).lower()}\t{r.checked}\t{r.failed}")
        return "\n".join(lines) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    lines = []
    for label, reps, secs in run.results:
        head = f"[{label}]" + (f" {secs:.2f}s" if run.timing else "")
        lines.append(head)
        for r in reps:
            if r.passed:
                lines.append(f"  PASS {r.tag}: {r.checked} checked")
            else:
                lines.append(f"  FAIL {r.tag}: {r.failed} of {r.checked} failed")
                if r.failures:
                    first = ", ".join(f"{k}={v}" for k, v in r.failures[0].items())
                    lines.append(f"       first witness: {first}")
    failed = len(run.failed_reports)
    total = sum(len(reps) for _, reps, _ in run.results)
    lines.append(f"{total - failed} of {total} checks passed ({run.checks} coefficients compared)")
    return "\n".join(lines) + "\n"


def write_atomic(path: str, text: str):
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".logtensor-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def execute(jobs: list, timing: bool = False) -> Run:
    """Run ``[(label, thunk)]`` with at most ``LOGTENSOR_THREADS`` workers; keep input order."""

    def timed(thunk):
        t = time.perf_counter()
        try:
            reps = thunk()
        except LogTensorError as exc:
            rep = CheckReport("error")
            rep.record(False, error=type(exc).__name__, message=str(exc))
            reps = [rep]
        return reps, time.perf_counter() - t

    run = Run(timing)
    if thread_cap() == 1 or len(jobs) < 2:
        outcomes = [timed(thunk) for _, thunk in jobs]
    else:
        with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
            outcomes = list(pool.map(lambda job: timed(job[1]), jobs))
    for (label, _), (reps, secs) in zip(jobs, outcomes):
        run.results.append((label, reps, secs))
    return run


# ---------------------------------------------------------------------------
# scenarios


def _line_index(text: str) -> dict:
    """``{path tuple: line}`` for every mapping key and sequence item of a YAML document."""
    where: dict = {}

    def walk(node, path):
        where[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                walk(v, path + (k.value,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    root = yaml.compose(text)
    if root is not None:
        walk(root, ())
    return where


class Scenario:
    """Parsed scenario: declared objects plus an ordered list of suite requests."""

    TOP_KEYS = {"seed", "tolerance", "output", "modules", "intertwiners", "maps", "compositions", "suites"}

    def __init__(self, text: str):
        try:
            doc = yaml.safe_load(text) or {}
            self._lines = _line_index(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ParseError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                             mark.line + 1 if mark else None, mark.column + 1 if mark else None) from None
        if not isinstance(doc, dict):
            raise ParseError("a scenario is a mapping", 1)
        for key in doc:
            if key not in self.TOP_KEYS:
                self.fail(f"unknown key {key!r}", (key,))
        self.doc = doc
        self.seed = self._int(doc.get("seed", 0), ("seed",))
        self.tol = self._tol(doc.get("tolerance", 1e-10), ("tolerance",))
        self.output = doc.get("output") or {}
        self.modules = self._section("modules")
        self.intertwiners = self._section("intertwiners")
        self.maps = self._section("maps")
        self.compositions = self._section("compositions")
        self.suites = doc.get("suites") or []
        if not isinstance(self.suites, list):
            self.fail("suites must be a list", ("suites",))
        self._check_references()
        self._built: dict = {}

    # -- validation ---------------------------------------------------------------
    def fail(self, message: str, path: tuple):
        # fall back to the closest enclosing node that has a location
        p = path
        while p and p not in self._lines:
            p = p[:-1]
        raise ParseError(f"{'.'.join(map(str, path))}: {message}", self._lines.get(p))

    def _int(self, v, path):
        if not isinstance(v, int):
            self.fail("expected an integer", path)
        return v

    def _tol(self, v, path):
        try:
            v = float(v)
        except (TypeError, ValueError):
            self.fail("tolerance must be a number", path)
        if not v > 0:
            self.fail("tolerance must be positive", path)
        return v

    def _section(self, name):
        sec = self.doc.get(name) or {}
        if not isinstance(sec, dict):
            self.fail("expected a mapping of names to declarations", (name,))
        return sec

    def _need(self, table: dict, kind: str, name, path):
        if name not in table:
            self.fail(f"undeclared {kind} {name!r}", path)

    def _check_references(self):
        for name, d in self.intertwiners.items():
            if "modules" in d:
                mods = d["modules"]
                if not isinstance(mods, list) or len(mods) != 3:
                    self.fail("modules must list source, source, target", ("intertwiners", name, "modules"))
                for i, m in enumerate(mods):
                    self._need(self.modules, "module", m, ("intertwiners", name, "modules", i))
            elif "momenta" not in d:
                self.fail("declare either modules or momenta", ("intertwiners", name))
        for name, d in self.maps.items():
            self._need(self.intertwiners, "intertwiner", d.get("intertwiner"), ("maps", name, "intertwiner"))
            if rat(d.get("z", 2)) == 0:
                self.fail("z must be nonzero", ("maps", name, "z"))
        for name, d in self.compositions.items():
            for part in ("outer", "inner"):
                self._need(self.maps, "map", d.get(part), ("compositions", name, part))
            if d.get("kind", "product") not in ("product", "iterate"):
                self.fail("kind is product or iterate", ("compositions", name, "kind"))
        tables = {"module": self.modules, "intertwiner": self.intertwiners, "pz": self.maps,
                  "compose": self.compositions}
        for i, req in enumerate(self.suites):
            if not isinstance(req, dict) or req.get("suite") not in SUITE_NAMES:
                self.fail(f"each entry needs suite: one of {', '.join(SUITE_NAMES)}", ("suites", i))
            if "object" in req:
                table = tables.get(req["suite"])
                if table is None:
                    self.fail(f"suite {req['suite']} takes no object", ("suites", i, "object"))
                self._need(table, req["suite"] if req["suite"] != "pz" else "map", req["object"],
                           ("suites", i, "object"))
            if "tolerance" in req:
                self._tol(req["tolerance"], ("suites", i, "tolerance"))

    # -- objects ------------------------------------------------------------------
    def algebra(self):
        if "V" not in self._built:
            need = max([8] + [int(d.get("trunc", 4)) for d in self.modules.values()])
            self._built["V"] = build_voa(min(need, 8))
        return self._built["V"]

    def module(self, name):
        key = ("module", name)
        if key not in self._built:
            d = self.modules[name]
            self._built[key] = build_fock(self.algebra(), d.get("momentum", 0), int(d.get("jordan_rank", 1)),
                                          int(d.get("trunc", 4)), name)
        return self._built[key]

    def intertwiner(self, name):
        key = ("intertwiner", name)
        if key not in self._built:
            d = self.intertwiners[name]
            if "modules" in d:
                Y = fock_intertwiner(*(self.module(m) for m in d["modules"]))
            else:
                lam, mu = d["momenta"]
                m1, m2 = d.get("ranks", [1, 1])
                Y = build_intertwiner(build_voa(int(d.get("trunc", 4))), lam, mu, m1, m2, int(d.get("trunc", 4)))
            self._built[key] = Y
        return self._built[key]

    def map(self, name):
        key = ("map", name)
        if key not in self._built:
            d = self.maps[name]
            self._built[key] = pd.intertwiner_to_map(self.intertwiner(d["intertwiner"]),
                                                     pd.BranchChoice(d.get("z", 2), int(d.get("p", 0))))
        return self._built[key]

    def composition(self, name):
        d = self.compositions[name]
        return pd.compose_maps(d.get("kind", "product"), self.map(d["outer"]), self.map(d["inner"]),
                               d.get("intermediate_max"))

    # -- suites on declared objects --------------------------------------------------
    def jobs(self) -> list:
        out = []
        for i, req in enumerate(self.suites):
            opts = {"seed": self.seed, "tol": self.tol, **{k: v for k, v in req.items() if k != "suite"}}
            if "tolerance" in req:
                opts["tol"] = float(req["tolerance"])
            label = req["suite"] + (f":{req['object']}" if "object" in req else "")
            out.append((label, self._thunk(req["suite"], opts)))
        return out

    def _thunk(self, suite, o):
        name = o.get("object")
        if name is None:
            return lambda: suites.SUITES[suite](o)
        if suite == "module":
            return lambda: module_checks(self.module(name))
        if suite == "intertwiner":
            return lambda: validate_axioms(self.intertwiner(name), count=o.get("count", 10), seed=o["seed"],
                                           tol=o["tol"]) + [structure_check(self.intertwiner(name))]
        if suite == "pz":
            return lambda: map_checks(self.map(name), o["seed"], o["tol"])
        return lambda: [pd.check_pz1z2_jacobi(self.composition(name), count=o.get("count", 4), seed=o["seed"],
                                              tol=o["tol"])]


def module_checks(W) -> list[CheckReport]:
    rep = CheckReport("module-data")
    try:
        validate_module(W)
        split_l0(W)
        rep.record(True, module=W.name)
    except LogTensorError as exc:
        rep.record(False, module=W.name, error=str(exc))
    vir = CheckReport("virasoro")
    bad = virasoro_failures(W)
    vir.record(not bad, module=W.name, witness=bad[:1])
    grading = CheckReport("strong-grading")
    g = strong_grading_check(W)
    grading.record(g.passed, module=W.name, violations=g.violations[:1])
    return [rep, vir, grading]


def map_checks(I, seed: int, tol: float) -> list[CheckReport]:
    reps = [pd.check_pz_jacobi(I, count=4, seed=seed, tol=tol)]
    q = pd.check_pz_jacobi(pd.pq_transpose(I), count=4, seed=seed, tol=tol)
    q.tag = "Q(z)-jacobi"
    reps.append(q)
    vir = CheckReport("dual-virasoro")
    compat = CheckReport("P(z)-compatibility")
    for i in range(I.W3.dim):
        if I.W3.weight(i) <= I.W3.wmin + 1:
            lam = pd.functional_from_map(I, I.W3.unit(i))
            pd.virasoro_check(lam, I.branch, tol=tol, report=vir)
            compat.merge(pd.check_compatibility(lam, I.branch, tol=tol))
    return reps + [vir, compat]


# ---------------------------------------------------------------------------
# command line


def _flag_options(args) -> dict:
    o = {"seed": args.seed}
    for key in ("z", "z1", "z2", "p", "trunc", "kmax", "tol", "order", "trials", "intermediate_max"):
        v = getattr(args, key, None)
        if v is not None:
            o[key] = v
    for key in ("z", "z1", "z2"):
        if key in o:
            o[key] = rat(o[key])
    if "p" in o:
        o["p"] = (o["p"],)
    return o


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="logtensor", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--format", choices=FORMATS, default="text")
        p.add_argument("--output", help="write the report here instead of stdout")
        p.add_argument("--timing", action="store_true", help="include wall-clock seconds (breaks byte stability)")

    v = sub.add_parser("verify", help="run one built-in suite")
    v.add_argument("suite", choices=SUITE_NAMES)
    v.add_argument("--z", help="point z, e.g. 2 or 1/2")
    v.add_argument("--z1")
    v.add_argument("--z2")
    v.add_argument("--p", type=int, help="branch of log z")
    v.add_argument("--trunc", type=int, help="weight truncation")
    v.add_argument("--kmax", type=int)
    v.add_argument("--tol", type=float)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--order", type=int)
    v.add_argument("--trials", type=int)
    v.add_argument("--intermediate-max", dest="intermediate_max", type=int)
    common(v)

    r = sub.add_parser("run", help="run the suites of a YAML scenario")
    r.add_argument("scenario")
    common(r)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            if args.tol is not None and not args.tol > 0:
                raise ValidationError("--tol must be positive")
            opts = _flag_options(args)
            run = execute([(args.suite, lambda: suites.SUITES[args.suite](opts))], args.timing)
            outputs = {args.format: args.output}
        else:
            with open(args.scenario) as fh:
                scenario = Scenario(fh.read())
            run = execute(scenario.jobs(), args.timing)
            outputs = {fmt: path for fmt, path in scenario.output.items() if fmt in FORMATS}
            if args.output or not outputs:
                outputs[args.format] = args.output
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for fmt, path in outputs.items():
        text = render(run, fmt)
        if path:
            write_atomic(path, text)
        else:
            sys.stdout.write(text)
    return 0 if run.passed else 1


if __name__ == "__main__":
    sys.exit(main())
