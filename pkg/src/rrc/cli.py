"""Command-line entry point: ``rrc <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np


class CliError(Exception):
    pass


def _atomic_write(path, write_fn):
    """Write via a temp file in the same directory, then rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".rrc-", suffix=os.path.splitext(str(path))[1])
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_outputs(items):
    """``items`` is a list of ``(path, write_fn)``; all content is ready."""
    for path, fn in items:
        if path:
            _atomic_write(path, fn)


def _check_out_dir(*paths):
    for p in paths:
        if p and not os.path.isdir(os.path.dirname(os.path.abspath(p))):
            raise CliError(f"output directory for {p} does not exist")


def _text_writer(text):
    def fn(tmp):
        with open(tmp, "w", newline="") as fh:
            fh.write(text)

    return fn


def _image_writer(img):
    from .imageio import save_image

    return lambda tmp: save_image(img, tmp)


def _image_format_check(path):
    from .imageio import format_for

    try:
        format_for(path)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _load(path, what="input"):
    from .imageio import load_image

    if not os.path.isfile(path):
        raise CliError(f"{what} file not found: {path}")
    return load_image(path)


# ---------------------------------------------------------------- commands


def cmd_denoise(a):
    from .denoise import DEFAULT_SCHEDULE, denoise

    _image_format_check(a.output)
    _check_out_dir(a.output, a.trace)
    y = _load(a.input)
    clean = _load(a.clean, "clean") if a.clean else None
    if clean is not None and clean.shape != y.shape:
        raise CliError(f"clean image shape {clean.shape} differs from input {y.shape}")
    overrides = {}
    if a.max_iters is not None:
        overrides["max_iters"] = a.max_iters
    cfg = DEFAULT_SCHEDULE.config(a.sigma, profile=a.profile, **overrides)
    out, trace = denoise(y, cfg, clean=clean)
    items = [(a.output, _image_writer(out))]
    if a.trace:
        items.append((a.trace, _text_writer(trace.to_csv())))
    _write_outputs(items)
    if clean is not None:
        from .metrics import psnr

        print(f"psnr {psnr(out, clean):.4f}")


def cmd_addnoise(a):
    _image_format_check(a.output)
    _check_out_dir(a.output)
    if a.sigma < 0:
        raise CliError(f"sigma must be non-negative, got {a.sigma}")
    clean = _load(a.input)
    noisy = clean + a.sigma * np.random.default_rng(a.seed).standard_normal(clean.shape)
    items = [(a.output, _image_writer(noisy))]
    if a.raw:
        # unrounded copy, so the noise statistics survive the 8-bit output
        items.append((a.raw, lambda tmp: _save_npy(tmp, noisy)))
    _write_outputs(items)


def _save_npy(path, arr):
    with open(path, "wb") as fh:
        np.save(fh, arr)


def cmd_residual_hist(a):
    from .denoise import rank_residual_histogram
    from .patches import GroupingParams

    _check_out_dir(a.output)
    clean = _load(a.clean, "clean")
    degraded = _load(a.degraded, "degraded")
    if clean.shape != degraded.shape:
        raise CliError(f"shape mismatch: {clean.shape} vs {degraded.shape}")
    params = GroupingParams(a.patch_side, a.group_size, a.window)
    hist = rank_residual_histogram(clean, degraded, params, bins=a.bins, reference=a.reference)
    if a.output:
        _write_outputs([(a.output, _text_writer(hist.to_csv()))])
    else:
        for lo, hi, n in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
            print(f"{lo:.6g},{hi:.6g},{n}")
    print(f"excess_kurtosis {hist.excess_kurtosis:.6g}")


def cmd_jpegsim(a):
    from .jpeg import jpeg_simulate

    _image_format_check(a.out)
    _check_out_dir(a.out, a.ctx)
    img = _load(a.input)
    decoded, ctx = jpeg_simulate(img, a.qf, a.qc_width)
    _write_outputs([(a.out, _image_writer(decoded)), (a.ctx, _text_writer(ctx.to_json() + "\n"))])


def cmd_deblock(a):
    from .jpeg import QuantizationContext, deblock, deblock_config, load_context_header

    _image_format_check(a.out)
    _check_out_dir(a.out, a.trace)
    y = _load(a.input)
    if not os.path.isfile(a.ctx):
        raise CliError(f"context file not found: {a.ctx}")
    head = load_context_header(a.ctx)
    width = a.qc_width if a.qc_width is not None else head["qc_width"]
    qc = QuantizationContext.from_decoded(y, head["q_matrix"], width, head["qf"])
    qf = head["qf"] if isinstance(head["qf"], int) else _qf_for_table(head["q_matrix"])
    overrides = {"qc_width": width}
    if a.max_iters is not None:
        overrides["max_iters"] = a.max_iters
    cfg = deblock_config(qf, **overrides)
    clean = _load(a.clean, "clean") if a.clean else None
    out, trace = deblock(y, qc, cfg)
    items = [(a.out, _image_writer(out))]
    if a.trace:
        items.append((a.trace, _text_writer(trace.to_csv())))
    _write_outputs(items)
    if clean is not None:
        from .metrics import psnr

        print(f"psnr_input {psnr(y, clean):.4f}")
        print(f"psnr_output {psnr(out, clean):.4f}")


def _qf_for_table(q):
    # closest standard table, used only to pick the parameter band
    from .jpeg import quant_table

    return min(range(1, 101), key=lambda f: float(np.abs(quant_table(f) - q).sum()))


def cmd_certify(a):
    from .gsrc import certify_trials

    _check_out_dir(a.report)
    result = certify_trials(a.trials, a.seed)
    text = json.dumps(result, indent=2) + "\n"
    _write_outputs([(a.report, _text_writer(text))])
    s = result["summary"]
    print(f"max_norm_gap {s['max_norm_gap']:.3e}  max_shared_route_relative {s['max_shared_route_relative']:.3e}")
    if not (s["norm_identity_ok"] and s["equivalence_ok"]):
        return 1


def cmd_bench(a):
    from .bench import Manifest, run_bench, write_report

    if not os.path.isfile(a.manifest):
        raise CliError(f"manifest not found: {a.manifest}")
    m = Manifest.load(a.manifest)
    out_dir = a.output_dir or m.output_dir
    if not out_dir:
        raise CliError("no output directory: set output_dir in the manifest or pass --output-dir")
    report = run_bench(m, log=lambda s: print(s, file=sys.stderr))
    csv_path, json_path = write_report(report, out_dir)
    for p in report.missing:
        print(f"warning: missing input skipped: {p}", file=sys.stderr)
    print(csv_path)
    print(json_path)


def _pair_metric(fn):
    def run(a):
        x = _load(a.a, "first")
        y = _load(a.b, "second")
        if x.shape != y.shape:
            raise CliError(f"shape mismatch: {x.shape} vs {y.shape}")
        v = fn(x, y)
        print("inf" if v == float("inf") else f"{v:.6f}")

    return run


def build_parser() -> argparse.ArgumentParser:
    from .metrics import psnr, ssim

    p = argparse.ArgumentParser(prog="rrc", description="Low-rank image denoising and JPEG deblocking.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("denoise", help="remove additive Gaussian noise")
    s.add_argument("--input", required=True)
    s.add_argument("--sigma", type=float, required=True, help="noise std on the 0-255 scale")
    s.add_argument("--output", required=True)
    s.add_argument("--clean", help="ground truth, adds PSNR to the trace")
    s.add_argument("--profile", type=float, help="use the parameter band of this noise level")
    s.add_argument("--trace", help="per-iteration CSV")
    s.add_argument("--max-iters", type=int)
    s.set_defaults(func=cmd_denoise)

    s = sub.add_parser("addnoise", help="add seeded Gaussian noise")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--sigma", type=float, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--raw", help="also save the unrounded noisy image as .npy")
    s.set_defaults(func=cmd_addnoise)

    s = sub.add_parser("residual-hist", help="histogram of rank residuals")
    s.add_argument("--clean", required=True)
    s.add_argument("--degraded", required=True)
    s.add_argument("--bins", type=int, default=101)
    s.add_argument("--output", help="CSV path (default: print to stdout)")
    s.add_argument("--patch-side", type=int, default=7)
    s.add_argument("--group-size", type=int, default=60)
    s.add_argument("--window", type=int, default=25)
    s.add_argument(
        "--reference",
        choices=("nlm", "identity"),
        default="nlm",
        help="reference groups: weighted estimate from the clean image, or the clean groups themselves",
    )
    s.set_defaults(func=cmd_residual_hist)

    s = sub.add_parser("jpegsim", help="simulate JPEG compression")
    s.add_argument("--input", required=True)
    s.add_argument("--qf", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ctx", required=True, help="quantization context JSON")
    s.add_argument("--qc-width", type=float, default=0.2)
    s.set_defaults(func=cmd_jpegsim)

    s = sub.add_parser("deblock", help="reduce JPEG compression artifacts")
    s.add_argument("--input", required=True)
    s.add_argument("--ctx", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--clean")
    s.add_argument("--qc-width", type=float)
    s.add_argument("--trace")
    s.add_argument("--max-iters", type=int)
    s.set_defaults(func=cmd_deblock)

    s = sub.add_parser("certify", help="numerically certify the sparse-coding equivalence")
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_certify)

    s = sub.add_parser("bench", help="run a benchmark manifest")
    s.add_argument("manifest")
    s.add_argument("--output-dir")
    s.set_defaults(func=cmd_bench)

    for name, fn in (("psnr", psnr), ("ssim", ssim)):
        s = sub.add_parser(name, help=f"{name.upper()} between two images")
        s.add_argument("a")
        s.add_argument("b")
        s.set_defaults(func=_pair_metric(fn))
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rc = args.func(args)
    except (CliError, ValueError, OSError, FloatingPointError) as exc:
        print(f"rrc {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
