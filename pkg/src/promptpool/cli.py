"""Command-line entry point: ``promptpool <verb> [flags]``.

Machine-readable records go to stdout as one JSON object per line; human
summaries go to stderr. Settings resolve as: flags, then ``PROMPTPOOL_*``
environment variables, then the ``--config`` JSON file, then defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import alignment, context, pooling, redundancy
from .tensor import Shape3, TensorFormatError, read_tensor, write_tensor

ENV_PREFIX = "PROMPTPOOL_"

DEFAULTS = {
    "temperature": alignment.DEFAULT_TEMPERATURE,
    "normalize": True,
    "mode": None,
    "threshold": redundancy.DEFAULT_THRESHOLD,
    "boundary": context.DEFAULT_BOUNDARY,
    "r_head": context.DEFAULT_R_HEAD,
    "r_tail": context.DEFAULT_R_TAIL,
    "continuity": context.CONTINUOUS,
    "seed": 0,
    "scale": context.DEFAULT_INIT_SCALE,
    "parallelism": [1],
    "reps": 3,
    "shape": [32, 24, 24, 1024],
}


class CommandError(Exception):
    """A user-facing failure; the message is printed and the exit code is 1."""


def _triple(text):
    parts = [p for p in str(text).replace("x", ",").split(",") if p.strip()]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated integers, got {text!r}")
    return [int(p) for p in parts]


def _int_list(text):
    return [int(p) for p in str(text).split(",") if p.strip()]


# name -> parser for values arriving as strings (environment variables)
_ENV_PARSERS = {
    "input": str, "scores": str, "projection": str, "output": str,
    "text": lambda s: s.split(os.pathsep),
    "kernel": lambda s: [_triple(k) for k in s.split(";")],
    "stride": lambda s: [_triple(k) for k in s.split(";")],
    "mode": str, "continuity": str,
    "threshold": float, "temperature": float, "r_head": float, "r_tail": float, "scale": float,
    "target_length": int, "boundary": int, "seed": int, "reps": int, "top_k": int,
    "parallelism": _int_list, "shape": _int_list,
    "normalize": lambda s: s.lower() not in ("0", "false", "no", "off"),
}


def resolve_settings(args, environ=None):
    """Merge defaults, config file, environment and flags (highest wins)."""
    environ = os.environ if environ is None else environ
    settings = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CommandError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise CommandError(f"config {args.config} must hold a JSON object")
        settings.update({k.replace("-", "_"): v for k, v in cfg.items()})
    for name, parse in _ENV_PARSERS.items():
        raw = environ.get(ENV_PREFIX + name.upper())
        if raw is not None:
            try:
                settings[name] = parse(raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise CommandError(f"bad {ENV_PREFIX}{name.upper()}={raw!r}: {exc}") from None
    for name, value in vars(args).items():
        if name in ("command", "config", "func") or value is None:
            continue
        settings[name] = value
    return settings


def _load(path, what):
    if path is None:
        raise CommandError(f"missing {what} file")
    try:
        return np.asarray(read_tensor(path))
    except FileNotFoundError:
        raise CommandError(f"{what} file not found: {path}") from None
    except TensorFormatError as exc:
        raise CommandError(f"{what} file {path}: {exc}") from None


def _emit(record):
    print(json.dumps(record), flush=True)


def _say(msg):
    print(msg, file=sys.stderr, flush=True)


def _parallelism(settings):
    par = settings["parallelism"]
    return par if isinstance(par, list) else [int(par)]


def _as_triples(value):
    if value is None:
        return None
    if value and isinstance(value[0], (int, float)):
        return [list(value)]
    return [list(v) for v in value]


def _pooling_specs(settings, grid):
    mode = settings.get("mode") or pooling.WEIGHTED_AVERAGE
    if settings.get("branches"):
        return [pooling.PoolingSpec.from_dict({"mode": mode, **b}) for b in settings["branches"]]
    kernels = _as_triples(settings.get("kernel"))
    if kernels is None:
        kernels = [list(pooling.IMAGE_KERNEL if grid[0] == 1 else pooling.VIDEO_KERNEL)]
    strides = _as_triples(settings.get("stride"))
    if strides is None:
        strides = [None] * len(kernels)
    if len(strides) != len(kernels):
        raise CommandError(f"{len(kernels)} kernel(s) but {len(strides)} stride(s)")
    return [pooling.PoolingSpec(tuple(k), None if d is None else tuple(d), mode)
            for k, d in zip(kernels, strides)]


def cmd_scores(settings):
    v = _load(settings.get("input"), "video")
    texts = settings.get("text") or []
    if isinstance(texts, str):
        texts = [texts]
    if not texts:
        raise CommandError("at least one --text feature file is required")
    prompts = []
    for path in texts:
        t = _load(path, "text")
        prompts.extend([t] if t.ndim == 1 else list(t))
    cfg = alignment.AlignmentConfig(float(settings["temperature"]), bool(settings["normalize"]))
    n_jobs = _parallelism(settings)[0]
    if v.ndim != 4:
        raise CommandError(f"video must be T x W x H x D, got shape {v.shape}")
    projected = v
    if settings.get("projection"):
        projected = alignment.project_visual(v, _load(settings["projection"], "projection"), n_jobs)
    s = alignment.scores_multi_prompt(projected, prompts, cfg, n_jobs=n_jobs)
    if settings.get("output"):
        write_tensor(s, settings["output"])
    record = {
        "command": "scores",
        "shape": list(s.shape),
        "max_score": float(s.max()),
        "entropy": alignment.score_entropy(s),
        "sum": float(s.sum(dtype=np.float64)),
        "prompts": len(prompts),
        "output": settings.get("output"),
    }
    _emit(record)
    _say(f"scores {tuple(s.shape)}: max {record['max_score']:.6g}, entropy {record['entropy']:.6g}")
    return 0


def cmd_pool(settings):
    v = _load(settings.get("input"), "video")
    if v.ndim != 4:
        raise CommandError(f"video must be T x W x H x D, got shape {v.shape}")
    specs = _pooling_specs(settings, v.shape[:3])
    s = _load(settings["scores"], "scores") if settings.get("scores") else None
    n_jobs = _parallelism(settings)[0]
    if len(specs) == 1:
        pooled = pooling.pool_forward(v, s, specs[0], n_jobs=n_jobs)
        n_out = Shape3.of(pooled.shape[:3]).size
        out_shape = list(pooled.shape)
    else:
        pooled = pooling.pool_multi(v, s, specs, n_jobs=n_jobs)
        n_out = pooled.shape[0]
        out_shape = list(pooled.shape)
    n_in = Shape3.of(v.shape[:3]).size
    if settings.get("output"):
        write_tensor(pooled, settings["output"])
    ratio = n_in / n_out
    _emit({
        "command": "pool",
        "input_tokens": n_in,
        "output_tokens": n_out,
        "compression_ratio": ratio,
        "mode": specs[0].mode,
        "branches": [spec.to_dict() for spec in specs],
        "output_shape": out_shape,
        "output": settings.get("output"),
    })
    _say(f"{n_in} → {n_out}, ratio {ratio:.1f}")
    return 0


def _synthetic_inputs(shape, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape, dtype=np.float32)
    logits = rng.standard_normal(shape[:3])
    s = alignment.softmax_scores(logits).astype(np.float32)
    return v, s


def _time_pool(v, s, spec, reps, n_jobs):
    samples, result = [], None
    for _ in range(reps):
        start = time.perf_counter()
        result = pooling.pool_forward(v, s, spec, n_jobs=n_jobs)
        samples.append(time.perf_counter() - start)
    return samples, result


def cmd_bench(settings):
    reps = int(settings["reps"])
    if reps < 3:
        raise CommandError(f"--reps must be at least 3, got {reps}")
    if settings.get("input"):
        v = _load(settings["input"], "video")
        s = _load(settings["scores"], "scores") if settings.get("scores") else None
    else:
        v, s = _synthetic_inputs(tuple(settings["shape"]), settings["seed"])
    spec = _pooling_specs(settings, v.shape[:3])[0]
    if s is None and spec.mode != pooling.AVERAGE:
        s = np.full(v.shape[:3], 1.0 / np.prod(v.shape[:3]), dtype=v.dtype)
    n_in = Shape3.of(v.shape[:3]).size
    runs, reference, identical = [], None, True
    for degree in _parallelism(settings):
        samples, out = _time_pool(v, s, spec, reps, degree)
        if reference is None:
            reference = out
        elif out.tobytes() != reference.tobytes():
            identical = False
        median = statistics.median(samples)
        runs.append({
            "parallelism": degree,
            "samples_s": samples,
            "median_s": median,
            "tokens_per_s": n_in / median if median > 0 else None,
        })
    # halving one stride roughly doubles the output cells
    scaling = None
    dt, dw, dh = spec.stride
    if dh >= 2:
        dense = pooling.PoolingSpec(spec.kernel, (dt, dw, dh // 2), spec.mode)
        dense_samples, _ = _time_pool(v, s, dense, reps, _parallelism(settings)[0])
        base_cells = pooling.output_shape(v.shape[:3], spec).size
        dense_cells = pooling.output_shape(v.shape[:3], dense).size
        time_ratio = statistics.median(dense_samples) / runs[0]["median_s"]
        scaling = {
            "stride": list(dense.stride),
            "cell_ratio": dense_cells / base_cells,
            "time_ratio": time_ratio,
            "time_grew": time_ratio > 1.0,
        }
    _emit({
        "command": "bench",
        "shape": list(v.shape),
        "spec": spec.to_dict(),
        "reps": reps,
        "runs": runs,
        "identical": identical,
        "scaling": scaling,
    })
    for run in runs:
        _say(f"parallelism {run['parallelism']:>3}: median {run['median_s'] * 1e3:9.3f} ms, "
             f"{run['tokens_per_s']:.4g} tokens/s")
    _say(f"outputs identical across degrees: {identical}")
    if scaling:
        _say(f"stride {scaling['stride']}: {scaling['cell_ratio']:.2f}x cells, "
             f"{scaling['time_ratio']:.2f}x time")
    return 0 if identical else 1


def load_manifest(path):
    """Read a manifest: a JSON array, or JSON lines, of {id, frames, text} records."""
    path = Path(path)
    try:
        raw = path.read_text()
    except OSError as exc:
        raise CommandError(f"cannot read manifest {path}: {exc}") from None
    try:
        records = json.loads(raw)
    except json.JSONDecodeError:
        try:
            records = [json.loads(line) for line in raw.splitlines() if line.strip()]
        except json.JSONDecodeError as exc:
            raise CommandError(f"manifest {path} is not JSON: {exc}") from None
    if isinstance(records, dict):
        records = [records] if "frames" in records else records.get("videos", [])
    base = path.parent
    out = []
    for n, rec in enumerate(records):
        if not isinstance(rec, dict) or "frames" not in rec or "text" not in rec:
            raise CommandError(f"manifest record {n} needs 'frames' and 'text'")
        out.append({
            "id": rec.get("id", str(n)),
            "frames": str(base / rec["frames"]),
            "text": str(base / rec["text"]),
        })
    return out


def _certificate_record(entry, threshold):
    missing = [p for p in (entry["frames"], entry["text"]) if not os.path.exists(p)]
    if missing:
        return {"id": entry["id"], "error": "missing file(s): " + ", ".join(missing)}
    try:
        frames = np.asarray(read_tensor(entry["frames"]))
        text = np.asarray(read_tensor(entry["text"])).reshape(-1)
        profile = redundancy.video_certificate(frames, text, threshold)
    except (TensorFormatError, ValueError) as exc:
        return {"id": entry["id"], "error": str(exc)}
    return profile.to_record(entry["id"])


def cmd_certificate(settings):
    manifest = load_manifest(settings.get("input") or settings.get("manifest") or "")
    threshold = float(settings["threshold"])
    n_jobs = _parallelism(settings)[0]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        records = list(pool.map(lambda e: _certificate_record(e, threshold), manifest))
    failed = [r for r in records if "error" in r]
    top_k = settings.get("top_k")
    selected = redundancy.shortest_certificates(records, top_k) if top_k is not None else records
    for rec in selected:
        _emit(rec)
    if top_k is not None:
        for rec in failed:
            _emit(rec)
    if settings.get("output"):
        with open(settings["output"], "w") as fh:
            json.dump(selected, fh, indent=1)
    for rec in failed:
        _say(f"{rec['id']}: {rec['error']}")
    _say(f"{len(records) - len(failed)}/{len(records)} videos scored at threshold {threshold}")
    return 1 if failed else 0


def cmd_pe_extend(settings):
    p = _load(settings.get("input"), "positional embedding table")
    method = settings.get("mode") or "asymmetric"
    target = settings.get("target_length")
    if target is None:
        raise CommandError("--target-length is required")
    try:
        extender = context.PositionalEmbeddingExtender(
            target_length=target, method=method, boundary=settings["boundary"],
            r_head=settings["r_head"], r_tail=settings["r_tail"],
            continuity=settings["continuity"], seed=settings["seed"], scale=settings["scale"],
        )
        out = extender.fit(p).transform(p)
    except context.ScheduleRangeError as exc:
        raise CommandError(f"schedule out of range at index {exc.index}: {exc}") from None
    if settings.get("output"):
        write_tensor(out.astype(p.dtype, copy=False), settings["output"])
    _emit({
        "command": "pe-extend",
        "source_length": p.shape[0],
        "target_length": out.shape[0],
        "mode": method,
        "schedule": extender.schedule_.to_dict() if extender.schedule_ else None,
        "output": settings.get("output"),
    })
    _say(f"positional table {p.shape[0]} → {out.shape[0]} rows ({method})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="promptpool", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def verb(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON file of settings")
        p.add_argument("--output", help="output file")
        p.add_argument("--parallelism", type=_int_list, help="thread count(s), e.g. 1,2,8")
        return p

    p = verb("scores", cmd_scores, "prompt relevance scores for a video grid")
    p.add_argument("--input", help="T x W x H x D video tokens (.npy)")
    p.add_argument("--projection", help="D x D' visual projection (.npy)")
    p.add_argument("--text", action="append", help="text feature(s) (.npy), repeatable")
    p.add_argument("--temperature", type=float)
    p.add_argument("--no-normalize", dest="normalize", action="store_false", default=None)

    p = verb("pool", cmd_pool, "prompt-guided pooling of a video grid")
    p.add_argument("--input", help="T x W x H x D video tokens (.npy)")
    p.add_argument("--scores", help="T x W x H score tensor (.npy)")
    p.add_argument("--kernel", type=_triple, action="append", help="kt,kw,kh; repeat for branches")
    p.add_argument("--stride", type=_triple, action="append", help="dt,dw,dh; repeat for branches")
    p.add_argument("--mode", choices=pooling.MODES)

    p = verb("bench", cmd_bench, "time the pooling kernel")
    p.add_argument("--input", help="video tokens (.npy); synthetic if omitted")
    p.add_argument("--scores", help="score tensor (.npy)")
    p.add_argument("--shape", type=_int_list, help="synthetic T,W,H,D")
    p.add_argument("--kernel", type=_triple, action="append")
    p.add_argument("--stride", type=_triple, action="append")
    p.add_argument("--mode", choices=pooling.MODES)
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)

    p = verb("certificate", cmd_certificate, "certificate length per video in a manifest")
    p.add_argument("--input", help="manifest (.json or .jsonl)")
    p.add_argument("--threshold", type=float)
    p.add_argument("--top-k", type=int)

    p = verb("pe-extend", cmd_pe_extend, "extend a positional embedding table")
    p.add_argument("--input", help="L x D positional table (.npy)")
    p.add_argument("--target-length", type=int)
    p.add_argument("--mode", choices=("asymmetric", "uniform", "random"))
    p.add_argument("--boundary", type=int)
    p.add_argument("--r-head", type=float)
    p.add_argument("--r-tail", type=float)
    p.add_argument("--continuity", choices=context.CONTINUITY_MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--scale", type=float)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = resolve_settings(args)
        return args.func(settings)
    except CommandError as exc:
        _say(f"error: {exc}")
    except (ValueError, TypeError, IndexError) as exc:
        _say(f"error: {args.command}: {exc}")
    except OSError as exc:
        _say(f"error: {exc}")
    return 1


if __name__ == "__main__":
    sys.exit(main())
