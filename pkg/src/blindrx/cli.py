"""Command line front end.

Every report lands as CSV (one row per SNR bin, or per record for demod)
next to a JSON summary carrying the same numbers plus totals, so results
feed plotting scripts and regression checks without parsing logs.  Errors
print a single machine-readable JSON line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
import time

import numpy as np

from .datafile import generate_to_file, load_dataset, regenerate
from .dpn import DpnConfig, DpnModel, count_nn_flops, infer, load_model, save_model
from .exceptions import BlindRxError
from .harness import (
    TrainConfig,
    eval_classification,
    eval_params,
    eval_ser,
    eval_ser_chunked,
    train,
)
from .losses import LossWeights
from .sigpath import RxParams, demod_chunked, signal_path_flops, visible_reference
from .waveform import DatasetSpec, dataset1, dataset2, toy_dataset

_PRESETS = {"dataset1": dataset1, "dataset2": dataset2, "toy": toy_dataset}


def _load_spec(token: str) -> DatasetSpec:
    if token in _PRESETS:
        return _PRESETS[token]()
    with open(token) as f:
        return DatasetSpec.from_dict(json.load(f))


def _json_path(csv_path: str) -> str:
    return (csv_path[:-4] if csv_path.endswith(".csv") else csv_path) + ".json"


def _write_report(report, out: str):
    with open(out, "w") as f:
        f.write(report.to_csv())
    with open(_json_path(out), "w") as f:
        f.write(report.to_json())
    print(json.dumps({"csv": out, "json": _json_path(out)}))


def cmd_gen(args) -> int:
    spec = _load_spec(args.spec)
    header = generate_to_file(args.out, spec, args.n, args.seed)
    print(json.dumps({"out": args.out, "count": header.count, "seed": header.seed}))
    return 0


def cmd_train(args) -> int:
    with open(args.config) as f:
        blob = json.load(f)
    dataset = blob.get("dataset", "toy")
    spec = _PRESETS[dataset]() if isinstance(dataset, str) else DatasetSpec.from_dict(dataset)

    train_kw = dict(blob.get("train", {}))
    if "loss_weights" in train_kw:
        train_kw["loss_weights"] = LossWeights.from_json(train_kw["loss_weights"])
    config = TrainConfig(dataset_spec=spec, **train_kw)

    model_kw = dict(blob.get("model", {}))
    model_kw.setdefault("class_count", len(spec.universe))
    dpn_config = DpnConfig.from_dict(model_kw)
    if dpn_config.class_count != len(spec.universe):
        raise ValueError(
            f"model has {dpn_config.class_count} classes but the dataset "
            f"universe has {len(spec.universe)}"
        )
    model = DpnModel(dpn_config, np.random.default_rng(int(blob.get("init_seed", 0))))

    def progress(epoch, train_loss, val_loss):
        if args.verbose:
            print(f"epoch {epoch}: train {train_loss:.4f} val {val_loss:.4f}",
                  file=sys.stderr, flush=True)

    t0 = time.time()
    model, history = train(config, model, on_epoch=progress)
    save_model(args.out, model)
    if args.history:
        with open(args.history, "w") as f:
            f.write(history.to_json())
    print(json.dumps({
        "out": args.out,
        "seconds": round(time.time() - t0, 1),
        "best_epoch": history.best_epoch,
        "stopped_epoch": history.stopped_epoch,
        "best_val_loss": min(history.val_loss),
    }))
    return 0


def cmd_infer(args) -> int:
    model = load_model(args.model)
    _, samples = load_dataset(args.infile)
    records = []
    for i, s in enumerate(samples):
        params, _, _, _ = infer(model, s.y)
        records.append({
            "index": i,
            "scheme": s.params.scheme.name,
            "snr_db": s.params.snr_db,
            "rx_params": json.loads(params.to_json()),
        })
    with open(args.out, "w") as f:
        json.dump(records, f)
    print(json.dumps({"out": args.out, "count": len(records)}))
    return 0


def cmd_demod(args) -> int:
    samples = list(regenerate(args.infile))
    nn_cost = 0
    if args.params == "estimate":
        if not args.model:
            raise ValueError("--params estimate requires --model")
        model = load_model(args.model)
        nn_cost = count_nn_flops(model, length=args.chunk)

        def estimator(chunk):
            p, _, _, _ = infer(model, chunk)
            return p, nn_cost
    else:
        with open(args.params) as f:
            fixed = RxParams.from_json(f.read())
        if len(fixed.timing) != args.chunk:
            raise ValueError(
                f"timing length {len(fixed.timing)} in {args.params} does not "
                f"match --chunk {args.chunk}"
            )

        def estimator(chunk):
            return fixed, 0

    rows = []
    errors = symbols = 0
    flops = signal_path_flops(0)
    skipped = 0
    for i, s in enumerate(samples):
        if s.params.scheme.kind != "linear" or len(s.y) % args.chunk != 0:
            skipped += 1
            continue
        rep = demod_chunked(
            s.y, s.params.scheme, estimator, chunk_len=args.chunk,
            reuse_params=args.reuse_params, timing=s.z4,
            reference=visible_reference(s),
        )
        flops = flops + rep.flops
        n = rep.compared_symbols
        if n:
            errors += round(rep.ser * n)
            symbols += n
        rows.append({
            "index": i, "scheme": s.params.scheme.name,
            "snr_db": s.params.snr_db, "symbols": n,
            "ser": rep.ser, "complex_ops": rep.flops.complex_ops,
            "real_flops": rep.flops.real_flops, "nn_flops": rep.flops.nn_flops,
        })

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]) if rows else
                            ["index", "scheme", "snr_db", "symbols", "ser",
                             "complex_ops", "real_flops", "nn_flops"])
    writer.writeheader()
    writer.writerows(rows)
    with open(args.out, "w") as f:
        f.write(buf.getvalue())
    summary = {
        "records": len(rows), "skipped": skipped,
        "pooled_ser": (errors / symbols) if symbols else None,
        "symbols": symbols, "flops": dataclasses.asdict(flops),
    }
    with open(_json_path(args.out), "w") as f:
        json.dump(summary, f)
    print(json.dumps(summary))
    return 0


def cmd_eval_class(args) -> int:
    model = load_model(args.model)
    header, samples = load_dataset(args.infile)
    report = eval_classification(model, samples, header.spec.universe)
    _write_report(report, args.out)
    return 0


def cmd_eval_params(args) -> int:
    model = load_model(args.model)
    samples = list(regenerate(args.infile))
    report = eval_params(model, samples)
    _write_report(report, args.out)
    return 0


def cmd_eval_ser(args) -> int:
    model = load_model(args.model)
    samples = list(regenerate(args.infile))
    if args.chunked:
        report = eval_ser_chunked(
            model, samples, chunk_len=args.chunked,
            reuse_params=args.reuse_params,
        )
    else:
        report = eval_ser(model, samples, include_baseline=args.baseline)
    _write_report(report, args.out)
    return 0


def cmd_bench_flops(args) -> int:
    fr = signal_path_flops(args.n)
    out = {
        "n": args.n,
        "complex_ops": fr.complex_ops,
        "real_flops": fr.real_flops,
    }
    if args.model:
        model = load_model(args.model)
        nn = count_nn_flops(model, length=args.n)
        out["nn_flops"] = nn
        out["reestimate_per_chunk"] = nn + fr.real_flops
        out["reuse_per_chunk"] = fr.real_flops
        out["tail_reduction"] = (nn + fr.real_flops) / fr.real_flops
    print(json.dumps(out))
    return 0


def cmd_bench_kernels(args) -> int:
    from ._kernels import BACKEND, _np

    try:
        from ._kernels import _fast
        backends = {"numpy": _np, "fast": _fast}
    except ImportError:
        backends = {"numpy": _np}

    rng = np.random.default_rng(0)
    x = rng.standard_normal((args.batch, 16, 128))
    w = rng.standard_normal((16, 16, 5))
    b = rng.standard_normal(16)
    zr = rng.standard_normal((args.batch, 128))
    zi = rng.standard_normal((args.batch, 128))
    tr = rng.standard_normal((args.batch, 65))
    ti = rng.standard_normal((args.batch, 65))

    result = {"active": BACKEND, "repeat": args.repeat, "timings_ms": {}}
    for name, mod in backends.items():
        mod.conv1d_fwd(x, w, b)                     # warm up
        t0 = time.perf_counter()
        for _ in range(args.repeat):
            mod.conv1d_fwd(x, w, b)
        conv_ms = (time.perf_counter() - t0) / args.repeat * 1e3

        mod.cfir_fwd(zr + 1j * zi, tr + 1j * ti, 32)
        t0 = time.perf_counter()
        for _ in range(args.repeat):
            mod.cfir_fwd(zr + 1j * zi, tr + 1j * ti, 32)
        fir_ms = (time.perf_counter() - t0) / args.repeat * 1e3
        result["timings_ms"][name] = {"conv1d_fwd": round(conv_ms, 3),
                                      "cfir_fwd": round(fir_ms, 3)}
    if len(result["timings_ms"]) == 2:
        t = result["timings_ms"]
        result["speedup_fast_over_numpy"] = {
            op: round(t["numpy"][op] / t["fast"][op], 2)
            for op in ("conv1d_fwd", "cfir_fwd")
        }
    print(json.dumps(result))
    return 0


def _bool_flag(v: str) -> bool:
    if v.lower() in ("true", "1", "yes"):
        return True
    if v.lower() in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {v!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="blindrx",
        description="Blind demodulation and modulation classification toolkit",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a labeled dataset file")
    g.add_argument("--spec", required=True,
                   help="preset name (dataset1, dataset2, toy) or JSON spec file")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--history", help="optional JSON loss-history path")
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="estimate receiver parameters per record")
    i.add_argument("--model", required=True)
    i.add_argument("--in", dest="infile", required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    d = sub.add_parser("demod", help="chunked demodulation of a dataset")
    d.add_argument("--in", dest="infile", required=True)
    d.add_argument("--params", required=True,
                   help="RxParams JSON file, or 'estimate' to run the model")
    d.add_argument("--model")
    d.add_argument("--chunk", type=int, default=128)
    d.add_argument("--reuse-params", type=_bool_flag, default=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_demod)

    ec = sub.add_parser("eval-class", help="classification accuracy vs SNR")
    ec.add_argument("--model", required=True)
    ec.add_argument("--in", dest="infile", required=True)
    ec.add_argument("--out", required=True)
    ec.set_defaults(func=cmd_eval_class)

    ep = sub.add_parser("eval-params", help="estimator quality vs SNR")
    ep.add_argument("--model", required=True)
    ep.add_argument("--in", dest="infile", required=True)
    ep.add_argument("--out", required=True)
    ep.set_defaults(func=cmd_eval_params)

    es = sub.add_parser("eval-ser", help="symbol error rate vs SNR")
    es.add_argument("--model", required=True)
    es.add_argument("--in", dest="infile", required=True)
    es.add_argument("--out", required=True)
    es.add_argument("--baseline", type=_bool_flag, default=True,
                    help="also run the genie DSP receiver")
    es.add_argument("--chunked", type=int, metavar="CHUNK_LEN",
                    help="demodulate in chunks instead of whole records")
    es.add_argument("--reuse-params", type=_bool_flag, default=True,
                    help="chunked mode: estimate once per record")
    es.set_defaults(func=cmd_eval_ser)

    bf = sub.add_parser("bench-flops", help="signal-path flop accounting")
    bf.add_argument("--n", type=int, default=128)
    bf.add_argument("--model", help="include estimator flops from a checkpoint")
    bf.set_defaults(func=cmd_bench_flops)

    bk = sub.add_parser("bench-kernels", help="compare compiled vs numpy kernels")
    bk.add_argument("--repeat", type=int, default=20)
    bk.add_argument("--batch", type=int, default=32)
    bk.set_defaults(func=cmd_bench_kernels)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BlindRxError, OSError, ValueError, KeyError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
