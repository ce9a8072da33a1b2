"""Command-line entry point: ``toau {synth,codebook,send,serve,bench}``."""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys

from .errors import ClientError, StageError, ToauError


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _param(text: str) -> tuple[str, float]:
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key, float(value)


def cmd_synth(args) -> int:
    from .motion_io import write_j3d
    from .synth import MotionClass, build_corpus, generate

    if args.mode == "corpus":
        if not args.out_dir:
            raise SystemExit("synth corpus needs --out-dir")
        manifest = build_corpus(args.out_dir, args.per_class, args.seed, args.fps, noise=args.noise)
        n_test = sum(m["split"] == "test" for m in manifest)
        print(f"wrote {len(manifest)} clips ({len(manifest) - n_test} train / {n_test} test) to {args.out_dir}")
        return 0
    if not args.out or not args.motion_class:
        raise SystemExit("synth needs --class and --out")
    mc = MotionClass(args.motion_class, dict(args.param or []), seed=args.seed)
    seq, ann = generate(mc, args.frames, args.fps, noise=args.noise)
    write_j3d(args.out, seq)
    print(f"wrote {args.out}: {ann.label}, {seq.frames} frames @ {seq.fps} fps")
    return 0


def _features_from_file(path: str):
    from .motion import canonicalize, extract_features
    from .motion_io import read_hml, read_j3d
    from .skeleton import default_skeleton

    if path.endswith(".hml"):
        return read_hml(path)
    sk = default_skeleton()
    return extract_features(canonicalize(read_j3d(path), sk), sk)


def cmd_codebook_train(args) -> int:
    from .codec import encode, save_codebook, train_codebook

    paths = sorted(glob.glob(args.inputs, recursive=True))
    if not paths:
        raise SystemExit(f"no files match {args.inputs!r}")
    latents = [encode(_features_from_file(p), args.l) for p in paths]
    cb = train_codebook(latents, args.k, iterations=args.iters, seed=args.seed)
    save_codebook(args.out, cb)
    print(f"trained K={cb.size} d={cb.dim} l={cb.downsample_factor} on {len(paths)} clips; "
          f"digest {cb.digest:016x} -> {args.out}")
    return 0


def cmd_send(args) -> int:
    from .codec import load_codebook
    from .edge import ClientConfig, edge_pipeline, send_motion
    from .motion_io import read_j3d

    cfg = ClientConfig(args.addr or "", args.codebook, args.question, args.timeout_ms, args.retries)
    cb = load_codebook(args.codebook)
    packet, timings = edge_pipeline(read_j3d(args.input), cb)
    resp = send_motion(packet, cfg)
    print(json.dumps({"response": resp.to_dict(), "edge_timings": timings.as_dict(),
                      "packet_bytes": packet.size, "payload_bytes": len(packet.payload)},
                     indent=1, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    from .cloud import ServerConfig, serve

    cfg = ServerConfig(args.addr, args.codebook, args.gallery, args.max_conn,
                       args.max_packet_bytes, args.recover_joints, args.knn_k)
    serve(cfg, ready=lambda s: print(f"listening on {s.address}", flush=True))
    return 0


def cmd_bench_rate(args) -> int:
    from .bench import accuracy, emit_report, sweep_rate_accuracy

    records = sweep_rate_accuracy(args.manifest, args.k, args.l, args.seed)
    fmt = "json" if args.out.endswith(".json") else "csv"
    emit_report(records, fmt, args.out)
    for K in args.k:
        print(f"K={K}: accuracy {accuracy(records, K):.3f}")
    if args.baseline:
        from .bench import baseline_table, read_report, write_rows

        rows = read_report(args.out) if fmt == "csv" else [
            {k: str(v) for k, v in r.items()} for r in json.load(open(args.out))]
        side = os.path.splitext(args.out)[0] + ".baseline.csv"
        write_rows(baseline_table(rows, args.baseline), side)
        print(f"wrote {side}")
    return 0


def cmd_bench_latency(args) -> int:
    from .bench import latency_table, read_report, write_rows

    rows = latency_table(read_report(args.payload_from), args.bandwidth_kbps,
                         args.t_edge_ms, args.t_cloud_ms)
    write_rows(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="toau", description="Kinematic token edge-cloud toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate synthetic clips or a labeled corpus")
    s.add_argument("mode", nargs="?", choices=["clip", "corpus"], default="clip")
    s.add_argument("--class", dest="motion_class")
    s.add_argument("--frames", type=int, default=240)
    s.add_argument("--fps", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--param", type=_param, action="append", help="class parameter override, key=value")
    s.add_argument("--noise", type=float, default=0.002, help="joint noise sigma in meters")
    s.add_argument("--out")
    s.add_argument("--per-class", type=int, default=20)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_synth)

    cb = sub.add_parser("codebook", help="codebook tools")
    cbs = cb.add_subparsers(dest="action", required=True)
    t = cbs.add_parser("train", help="train a codebook with k-means")
    t.add_argument("--inputs", required=True, help="glob of .j3d or .hml files")
    t.add_argument("--k", type=int, default=512)
    t.add_argument("--l", type=int, default=4)
    t.add_argument("--iters", type=int, default=50)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_codebook_train)

    c = sub.add_parser("send", help="encode a clip and query the server")
    c.add_argument("--addr", default=os.environ.get("TOAU_SERVER_ADDR"))
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--codebook", required=True)
    c.add_argument("--question", default="What is the person doing?")
    c.add_argument("--timeout-ms", type=int, default=5000)
    c.add_argument("--retries", type=int, default=2)
    c.set_defaults(func=cmd_send)

    v = sub.add_parser("serve", help="run the understanding server")
    v.add_argument("--addr", default="127.0.0.1:7878")
    v.add_argument("--codebook", required=True)
    v.add_argument("--gallery", required=True)
    v.add_argument("--max-conn", type=int, default=64)
    v.add_argument("--max-packet-bytes", type=int, default=1 << 20)
    v.add_argument("--recover-joints", action="store_true")
    v.add_argument("--knn-k", type=int, default=1)
    v.set_defaults(func=cmd_serve)

    b = sub.add_parser("bench", help="rate and latency reports")
    bs = b.add_subparsers(dest="action", required=True)
    r = bs.add_parser("rate", help="rate-accuracy sweep over codebook sizes")
    r.add_argument("--manifest", required=True)
    r.add_argument("--k", type=_ints, default=[8, 64, 512, 1024])
    r.add_argument("--l", type=int, default=4)
    r.add_argument("--seed", type=int, default=1)
    r.add_argument("--out", required=True)
    r.add_argument("--baseline", help="optional CSV of clip,codec,bytes video sizes")
    r.set_defaults(func=cmd_bench_rate)
    lt = bs.add_parser("latency", help="latency decomposition from a rate report")
    lt.add_argument("--payload-from", required=True)
    lt.add_argument("--bandwidth-kbps", type=_floats, default=[50, 200, 1000])
    lt.add_argument("--t-edge-ms", type=float, default=0.0)
    lt.add_argument("--t-cloud-ms", type=float, default=0.0)
    lt.add_argument("--out", required=True)
    lt.set_defaults(func=cmd_bench_latency)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ClientError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ToauError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
