"""Batch command-line front end.

Exit codes: 0 success, 1 other library error, 2 invariant violation,
3 resource cap, 64 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvariantViolation, MacaevLabError, ResourceCapError
from .groups import (
    DEFAULT_MAX_ELEMENTS,
    BallIndex,
    FiniteFunction,
    FreeGroup,
    GroupSpec,
    ball,
    parse_group_spec,
)
from .kphi import (
    METHODS,
    build_f2_witness,
    build_halfline_certificate,
    certificate_from_json,
    certificate_to_json,
    certify_lower,
    k4_constant,
    sandwich,
)
from .norms import MACAEV, NormingFunction, ValueMultiset, gauge_interval, rearrange
from . import opsim, transfer

log = logging.getLogger("macaevlab.cli")

EXIT_OK, EXIT_ERROR, EXIT_INVARIANT, EXIT_CAP, EXIT_USAGE = 0, 1, 2, 3, 64
CACHE_FORMAT = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# ball cache


def cache_key(spec: GroupSpec, radius: int) -> str:
    grp = spec.group
    ident = {
        "format": CACHE_FORMAT,
        "group": grp.label,
        "generators": [grp.format(g) for g in spec.generators],
        "radius": radius,
    }
    return hashlib.sha256(json.dumps(ident, sort_keys=True).encode()).hexdigest()


def _payload_digest(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def save_ball(b: BallIndex, cache_dir) -> Path:
    path = Path(cache_dir) / f"{cache_key(b.spec, b.radius)}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "label": b.spec.label(),
        "radius": b.radius,
        "elements": [list(x) if isinstance(x, tuple) else x for x in b.elements],
        "depth": b.depth.tolist(),
        "adjacency": None if b.adjacency is None else b.adjacency.tolist(),
    }
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps({"digest": _payload_digest(payload), "payload": payload}))
    tmp.replace(path)
    return path


def load_ball(spec: GroupSpec, radius: int, cache_dir) -> BallIndex | None:
    """Cached ball or ``None`` on a miss; corrupt files are reported and ignored."""
    path = Path(cache_dir) / f"{cache_key(spec, radius)}.json"
    if not path.exists():
        return None
    try:
        data = json.loads(path.read_text())
        payload = data["payload"]
        if data["digest"] != _payload_digest(payload) or payload["radius"] != radius:
            raise ValueError("digest mismatch")
        elements = tuple(spec.group.from_json(x) for x in payload["elements"])
        adj = payload["adjacency"]
        adjacency = None if adj is None else np.asarray(adj, dtype=np.int64).reshape(len(spec.generators), -1)
        return BallIndex(
            spec,
            radius,
            elements,
            np.asarray(payload["depth"], dtype=np.int64),
            adjacency,
            {x: i for i, x in enumerate(elements)},
        )
    except (OSError, ValueError, KeyError, TypeError) as exc:
        log.warning("corrupt ball cache %s (%s); rebuilding", path.name, exc)
        return None


def cached_ball(spec: GroupSpec, radius: int, cache_dir=None, max_elements=DEFAULT_MAX_ELEMENTS, timings=None):
    t0 = time.perf_counter()
    source = "bfs"
    b = None
    if cache_dir:
        b = load_ball(spec, radius, cache_dir)
        if b is not None:
            source = "cache"
    if b is None:
        b = ball(spec, radius, max_elements=max_elements)
        if cache_dir:
            save_ball(b, cache_dir)
    ms = (time.perf_counter() - t0) * 1e3
    log.info("ball %s R=%d: %s (%.1f ms)", spec.label(), radius, source, ms)
    if timings is not None:
        timings.setdefault("balls", []).append({"radius": radius, "source": source, "ms": round(ms, 3)})
    return b


# --------------------------------------------------------------------------
# helpers


def _parse_phi(text: str) -> NormingFunction:
    try:
        return NormingFunction.parse(text)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad norming function {text!r}: {exc}") from None


def _parse_group(text: str) -> GroupSpec:
    try:
        return parse_group_spec(text)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad group spec {text!r}: {exc}") from None


def _parse_radii(text: str) -> list[int]:
    try:
        radii = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad radius list {text!r}") from None
    if not radii or any(r < 0 for r in radii):
        raise UsageError("radii must be nonnegative integers")
    return radii


def _jsonable(x):
    if isinstance(x, float):
        return x if math.isfinite(x) else str(x)
    if isinstance(x, int) and not isinstance(x, bool) and abs(x) >= 2**53:
        return str(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def _config(args) -> dict:
    skip = {"func", "verbose"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _emit(args, result: dict, timings: dict) -> str:
    report = {
        "command": args.command,
        "config": _config(args),
        "version": __version__,
        "result": result,
        "timing": timings,
    }
    text = json.dumps(_jsonable(report), indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return text


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _interval(iv) -> dict:
    return {"lo": iv.lo, "hi": iv.hi}


def _default_certificate(spec: GroupSpec, phi: NormingFunction, radii, depth: int):
    """Built-in certificate for the pair, if one ships."""
    grp = spec.group
    if grp == FreeGroup(2) and spec.symmetrized().is_standard:
        try:
            return build_f2_witness(depth, "right", phi)
        except ValueError:
            return None
    if grp.label == "zd:1" and phi.family == "trace":
        return build_halfline_certificate(max(radii) + 1, phi)
    return None


# --------------------------------------------------------------------------
# subcommands


def cmd_norm(args, timings):
    phi = _parse_phi(args.phi)
    text = Path(args.values).read_text() if args.values != "-" else sys.stdin.read()
    data = json.loads(text)
    if data and isinstance(data[0], list):
        v = ValueMultiset(tuple((abs(float(a)), int(c)) for a, c in data))
    else:
        v = ValueMultiset.of_abs(float(a) for a in data)
    iv = gauge_interval(v, phi)
    result = {
        "phi": str(phi),
        "norm": iv.mid,
        "interval": _interval(iv),
        "total_count": str(v.total_count),
        "rearranged": json.loads(rearrange(v).to_json()),
    }
    return result, EXIT_OK


def cmd_estimate(args, timings):
    spec = _parse_group(args.group)
    phi = _parse_phi(args.phi)
    radii = _parse_radii(args.radius)
    if args.certificate:
        cert = certificate_from_json(Path(args.certificate).read_text())
    elif args.no_certificate:
        cert = None
    else:
        cert = _default_certificate(spec, phi, radii, args.witness_depth)
    rows = []
    for R in radii:
        t0 = time.perf_counter()
        b = cached_ball(spec.symmetrized(), R + 1, args.cache_dir, args.max_elements, timings)
        use = cert if cert is not None and R < cert.residual_radius else None
        rep = sandwich(
            spec, phi, R, use, args.method,
            max_iter=args.max_iter, seed=args.seed, max_elements=args.max_elements, ball_index=b,
        )
        ms = (time.perf_counter() - t0) * 1e3
        timings.setdefault("runtime_ms", {})[str(R)] = round(ms, 3)
        rows.append(
            {
                "group": spec.label(),
                "phi": str(phi),
                "R": R,
                "lower": rep.lower,
                "upper": rep.upper,
                "gap": rep.gap,
                "minimizer_support_size": len(rep.result.minimizer),
                "iterations": rep.result.iterations,
            }
        )
    if args.csv:
        _write_csv(
            args.csv,
            ["R", "lower", "upper", "gap", "minimizer_support_size"],
            [[r["R"], r["lower"], r["upper"], r["gap"], r["minimizer_support_size"]] for r in rows],
        )
    result = {
        "certificate": None if cert is None else {
            "action": cert.action,
            "residual_radius": cert.residual_radius,
            "dual_norms": [_interval(iv) for iv in cert.dual_norms],
        },
        "estimates": rows,
    }
    return result, EXIT_OK


def cmd_certify(args, timings):
    phi = _parse_phi(args.phi)
    if args.certificate:
        cert = certificate_from_json(Path(args.certificate).read_text())
    elif args.kind == "f2-witness":
        try:
            cert = build_f2_witness(args.depth, args.action, phi)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    else:
        cert = build_halfline_certificate(args.depth, phi)
    if args.save:
        Path(args.save).write_text(certificate_to_json(cert) + "\n")
    R = cert.residual_radius - 1
    result = {
        "group": cert.spec.label(),
        "phi": str(cert.phi),
        "action": cert.action,
        "residual_radius": cert.residual_radius,
        "dual_norms": [_interval(iv) for iv in cert.dual_norms],
        "certified_lower": certify_lower(cert, R) if R >= 0 else None,
        "valid_below_radius": cert.residual_radius,
        "k4_constant": k4_constant(cert),
    }
    return result, EXIT_OK


def _builtin_embedding(text: str, radius: int):
    kind, _, rest = text.partition(":")
    try:
        if kind == "inclusion":
            n, m = (int(x) for x in rest.split(":"))
            return transfer.generator_inclusion(n, m, radius)
        if kind == "reexpress":
            return transfer.identity_reexpression(parse_group_spec("free:2"), parse_group_spec(rest), radius)
        if kind == "monoid":
            return transfer.free_monoid_inclusion(int(rest), radius)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad embedding {text!r}: {exc}") from None
    raise UsageError(f"unknown built-in embedding {text!r}")


def cmd_transfer(args, timings):
    phi = _parse_phi(args.phi)
    if args.embedding:
        emb = transfer.embedding_from_json(Path(args.embedding).read_text())
    else:
        emb = _builtin_embedding(args.builtin, args.domain_radius)
    if args.certificate:
        cert = certificate_from_json(Path(args.certificate).read_text())
    else:
        cert = build_f2_witness(args.witness_depth, "right", phi)
    res = transfer.transfer_lower(cert, emb, phi)
    if args.save_embedding:
        Path(args.save_embedding).write_text(transfer.embedding_to_json(emb) + "\n")
    result = {
        "source": emb.source.label(),
        "target": emb.target.label(),
        "phi": str(phi),
        "lipschitz_M": emb.lipschitz_M,
        "distortion": emb.distortion,
        "K_size": len(emb.target.symmetrized().generators),
        "factor": res.factor,
        "source_bound": res.source_bound,
        "target_bound": res.bound,
        "valid_radius": res.valid_radius,
    }
    return result, EXIT_OK


def cmd_counterexample(args, timings):
    phi = _parse_phi(args.phi)
    t0 = time.perf_counter()
    schedule = opsim.build_schedule(phi, args.nmax)
    depth = schedule.S(2 * args.nmax)
    X, Y = opsim.build_trees(schedule, depth)
    stages = opsim.schedule_stages(schedule, phi)
    timings["schedule_ms"] = round((time.perf_counter() - t0) * 1e3, 3)

    L = args.orbit_depth
    if L > depth:
        raise UsageError(f"orbit depth {L} exceeds the schedule depth {depth}")
    fx, fy = opsim.build_trees(schedule, L)
    t1 = time.perf_counter()
    xs, ys = opsim.SparseSlice.build(fx, L), opsim.SparseSlice.build(fy, L)
    orbit = opsim.tensor_orbit(xs, ys, L)
    diag = opsim.diagonal_tensor_lower_bound({(): 1.0}, args.witness_depth, orbit)
    timings["orbit_ms"] = round((time.perf_counter() - t1) * 1e3, 3)

    stage_rows = [
        {
            "n": st.n,
            "side": st.side,
            "h": st.h,
            "rank": str(st.rank),
            "rank_bound": str(st.rank_bound),
            "norm": _interval(st.norm),
            "target": 1.0 / st.n,
            "ok": st.ok,
        }
        for st in stages
    ]
    if args.dump:
        Path(args.dump).write_text(schedule_dump(schedule, phi, X, Y) + "\n")
    if args.csv:
        _write_csv(
            args.csv,
            ["n", "side", "h", "rank", "norm_lo", "norm_hi", "target"],
            [[r["n"], r["side"], r["h"], r["rank"], r["norm"]["lo"], r["norm"]["hi"], r["target"]] for r in stage_rows],
        )
    result = {
        "phi": str(phi),
        "schedule": list(schedule.h),
        "depth": depth,
        "complementary": not opsim.complementarity_defects(X, Y),
        "stages": stage_rows,
        "orbit": {
            "max_word_len": L,
            "count": orbit.count,
            "injective": orbit.injective,
            "orthonormal": orbit.orthonormal,
        },
        "diagonal_lower_bound": diag,
    }
    ok = all(st.ok for st in stages) and orbit.injective and bool(orbit.orthonormal)
    if not ok:
        log.error("construction check failed")
    return result, EXIT_OK if ok else EXIT_INVARIANT


def schedule_dump(schedule, phi, X, Y) -> str:
    """JSON with the schedule and per-level flags; widths as decimal strings.

    Levels are listed at every breakpoint of either tree (the flags are
    constant in between).
    """
    pts = sorted(set(X.breakpoints()) | set(Y.breakpoints()))
    levels = [
        {
            "d": d,
            "branching_X": X.branching(d),
            "branching_Y": Y.branching(d),
            "width_X": str(X.width(d)),
            "width_Y": str(Y.width(d)),
        }
        for d in pts
    ]
    data = {"phi": str(phi), "h": list(schedule.h), "S": [0] + schedule.partial_sums, "levels": levels}
    return json.dumps(data, indent=1, sort_keys=True)


def cmd_crosscheck(args, timings):
    spec = _parse_group(args.group)
    phi = _parse_phi(args.phi)
    grp = spec.group
    if args.ramp:
        if grp.label != "zd:1":
            raise UsageError("--ramp needs the group zd:1")
        N = args.ramp
        f = FiniteFunction(grp, {(x,): 1 - abs(x) / N for x in range(-N + 1, N)})
    elif args.function:
        data = json.loads(Path(args.function).read_text())
        f = FiniteFunction(grp, {spec.word(w): float(v) for w, v in data})
    else:
        rng = np.random.default_rng(args.seed)
        b = cached_ball(spec.symmetrized(), args.radius, args.cache_dir, args.max_elements, timings)
        vals = rng.random(len(b))
        vals[0] = 1.0
        f = FiniteFunction(grp, dict(zip(b.elements, vals.tolist())))
    reports = opsim.regular_representation_crosscheck(spec, f, phi)
    rows = [
        {
            "generator": grp.format(r.generator),
            "max_deviation": r.max_deviation,
            "operator_norm": r.operator_norm,
            "function_norm": r.function_norm,
            "equal": r.equal,
        }
        for r in reports
    ]
    ok = all(r.equal for r in reports)
    return {"group": spec.label(), "phi": str(phi), "support_size": len(f), "generators": rows}, (
        EXIT_OK if ok else EXIT_INVARIANT
    )


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="macaevlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"macaevlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--out", help="report path (default: stdout)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--cache-dir", default=os.environ.get("MACAEVLAB_CACHE"))
        sp.add_argument("--max-elements", type=int, default=DEFAULT_MAX_ELEMENTS)
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("norm", help="evaluate a norm on a value file")
    common(sp)
    sp.add_argument("--phi", default="macaev")
    sp.add_argument("--values", required=True, help="JSON list of numbers or [value, count] pairs; '-' for stdin")
    sp.set_defaults(func=cmd_norm)

    sp = sub.add_parser("estimate", help="certified lower and optimised upper bounds")
    common(sp)
    sp.add_argument("--group", required=True)
    sp.add_argument("--phi", default="macaev")
    sp.add_argument("--radius", required=True, help="radius or comma-separated radii")
    sp.add_argument("--method", choices=METHODS, default="subgradient")
    sp.add_argument("--max-iter", type=int, default=400)
    sp.add_argument("--witness-depth", type=int, default=20)
    sp.add_argument("--certificate", help="certificate JSON file")
    sp.add_argument("--no-certificate", action="store_true")
    sp.add_argument("--csv", help="per-R CSV export")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("certify", help="build or validate a certificate")
    common(sp)
    sp.add_argument("--phi", default="macaev")
    sp.add_argument("--kind", choices=("f2-witness", "halfline"), default="f2-witness")
    sp.add_argument("--depth", type=int, default=20, help="witness depth, or T for the half-line")
    sp.add_argument("--action", choices=("right", "left"), default="right")
    sp.add_argument("--certificate", help="validate this file instead of building")
    sp.add_argument("--save", help="write the certificate JSON here")
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("transfer", help="push a certified bound through an embedding")
    common(sp)
    sp.add_argument("--phi", default="macaev")
    sp.add_argument("--embedding", help="embedding JSON file")
    sp.add_argument("--builtin", default="inclusion:2:3", help="inclusion:N:M | reexpress:SPEC | monoid:N")
    sp.add_argument("--domain-radius", type=int, default=6)
    sp.add_argument("--witness-depth", type=int, default=20)
    sp.add_argument("--certificate")
    sp.add_argument("--save-embedding")
    sp.set_defaults(func=cmd_transfer)

    sp = sub.add_parser("counterexample", help="schedule, trees, commutator norms, orbit, diagonal bound")
    common(sp)
    sp.add_argument("--phi", default="macaev")
    sp.add_argument("--nmax", type=int, default=4)
    sp.add_argument("--orbit-depth", type=int, default=8)
    sp.add_argument("--witness-depth", type=int, default=20)
    sp.add_argument("--dump", help="schedule/tree JSON dump")
    sp.add_argument("--csv", help="per-n CSV export")
    sp.set_defaults(func=cmd_counterexample)

    sp = sub.add_parser("crosscheck", help="commutator singular values vs left differences")
    common(sp)
    sp.add_argument("--group", required=True)
    sp.add_argument("--phi", default="macaev")
    sp.add_argument("--radius", type=int, default=2)
    sp.add_argument("--ramp", type=int, help="Z ramp (1 - |x|/N)_+")
    sp.add_argument("--function", help="JSON list of [word, value]")
    sp.set_defaults(func=cmd_crosscheck)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    timings: dict = {}
    try:
        t0 = time.perf_counter()
        result, code = args.func(args, timings)
        timings["total_ms"] = round((time.perf_counter() - t0) * 1e3, 3)
        _emit(args, result, timings)
        return code
    except UsageError as exc:
        print(f"macaevlab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"macaevlab: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ResourceCapError as exc:
        print(f"macaevlab: resource cap: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (MacaevLabError, ValueError, OSError) as exc:
        print(f"macaevlab: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
