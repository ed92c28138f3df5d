"""Benchmark harness: run the pipelines over a manifest and tabulate metrics."""

from __future__ import annotations

import csv
import io
import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .imageio import load_image
from .metrics import psnr, ssim

TASK_METHODS = {"denoise": ("rrc", "nnm"), "deblock": ("jpeg", "deblock")}


@dataclass
class Manifest:
    inputs: list
    task: str
    params: list
    seed: int = 0
    output_dir: str | None = None
    methods: list | None = None

    def __post_init__(self):
        if self.task not in TASK_METHODS:
            raise ValueError(f"task must be one of {sorted(TASK_METHODS)}, got {self.task!r}")
        if not isinstance(self.inputs, list) or not isinstance(self.params, list):
            raise ValueError("inputs and params must be lists")
        if self.methods is None:
            self.methods = list(TASK_METHODS[self.task])
        bad = [m for m in self.methods if m not in TASK_METHODS[self.task]]
        if bad:
            raise ValueError(f"methods {bad} are not valid for task {self.task!r}")
        if self.task == "deblock" and any(not float(q).is_integer() for q in self.params):
            raise ValueError("deblock params must be integer quality factors")

    @classmethod
    def load(cls, path) -> "Manifest":
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: manifest must be a JSON object")
        unknown = set(raw) - {"inputs", "task", "params", "seed", "output_dir", "methods"}
        if unknown:
            raise ValueError(f"{path}: unknown manifest fields {sorted(unknown)}")
        base = os.path.dirname(os.path.abspath(path))
        raw.setdefault("inputs", [])
        raw.setdefault("params", [])
        raw.setdefault("task", "denoise")
        raw["inputs"] = [p if os.path.isabs(p) else os.path.join(base, p) for p in raw["inputs"]]
        if raw.get("output_dir") and not os.path.isabs(raw["output_dir"]):
            raw["output_dir"] = os.path.join(base, raw["output_dir"])
        return cls(**raw)


@dataclass
class BenchRow:
    name: str
    method: str
    parameter: float
    psnr: float
    ssim: float
    runtime_seconds: float


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    missing: list = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.missing

    def aggregate(self) -> list[dict]:
        """Arithmetic means per (method, parameter), in first-seen order."""
        keys = []
        for r in self.rows:
            if (r.method, r.parameter) not in keys:
                keys.append((r.method, r.parameter))
        out = []
        for method, param in keys:
            sel = [r for r in self.rows if r.method == method and r.parameter == param]
            out.append(
                {
                    "method": method,
                    "parameter": param,
                    "count": len(sel),
                    "psnr": float(np.mean([r.psnr for r in sel])),
                    "ssim": float(np.mean([r.ssim for r in sel])),
                    "runtime_seconds": float(np.mean([r.runtime_seconds for r in sel])),
                }
            )
        return out

    def to_csv(self) -> str:
        # wall-clock time is left out so identical runs give identical bytes
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "method", "parameter", "psnr", "ssim"])
        for r in self.rows:
            w.writerow([r.name, r.method, f"{r.parameter:g}", f"{r.psnr:.4f}", f"{r.ssim:.4f}"])
        for a in self.aggregate():
            w.writerow(["mean", a["method"], f"{a['parameter']:g}", f"{a['psnr']:.4f}", f"{a['ssim']:.4f}"])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "complete": self.complete,
                "missing": self.missing,
                "rows": [asdict(r) for r in self.rows],
                "aggregate": self.aggregate(),
            },
            indent=2,
        )


def noisy_copy(clean, sigma: float, seed: int, index: int) -> np.ndarray:
    """Seeded Gaussian noise, independent per (seed, image index, sigma)."""
    ss = np.random.SeedSequence([int(seed), int(index), int(round(sigma * 1000))])
    return clean + sigma * np.random.default_rng(ss).standard_normal(clean.shape)


def _name(path):
    return os.path.splitext(os.path.basename(path))[0]


def run_bench(manifest: Manifest, log=None) -> BenchReport:
    from .denoise import DEFAULT_SCHEDULE, denoise, denoise_nnm
    from .jpeg import deblock, deblock_config, jpeg_simulate

    report = BenchReport()
    cache = manifest.output_dir
    if cache:
        os.makedirs(cache, exist_ok=True)
    for idx, path in enumerate(manifest.inputs):
        if not os.path.isfile(path):
            report.missing.append(path)
            continue
        clean = load_image(path)
        for param in manifest.params:
            for method in manifest.methods:
                t0 = time.perf_counter()
                if manifest.task == "denoise":
                    sigma = float(param)
                    noisy = _cached_noise(clean, sigma, manifest.seed, idx, path, cache)
                    cfg = DEFAULT_SCHEDULE.config(sigma)
                    out = denoise(noisy, cfg)[0] if method == "rrc" else denoise_nnm(noisy, cfg)
                else:
                    qf = int(param)
                    decoded, ctx = jpeg_simulate(clean, qf)
                    out = decoded if method == "jpeg" else deblock(decoded, ctx, deblock_config(qf))[0]
                elapsed = time.perf_counter() - t0
                row = BenchRow(_name(path), method, float(param), psnr(out, clean), ssim(out, clean), elapsed)
                report.rows.append(row)
                if log:
                    log(f"{row.name} {method} {param:g}: {row.psnr:.2f} dB, SSIM {row.ssim:.4f}, {elapsed:.1f} s")
    return report


def _cached_noise(clean, sigma, seed, idx, path, cache):
    if not cache:
        return noisy_copy(clean, sigma, seed, idx)
    f = os.path.join(cache, f"noisy_{idx}_{_name(path)}_s{sigma:g}_seed{seed}.npy")
    if os.path.exists(f):
        arr = np.load(f)
        if arr.shape == clean.shape:
            return arr
    arr = noisy_copy(clean, sigma, seed, idx)
    np.save(f, arr)
    return arr


def write_report(report: BenchReport, output_dir: str) -> tuple[str, str]:
    os.makedirs(output_dir, exist_ok=True)
    csv_path = os.path.join(output_dir, "bench.csv")
    json_path = os.path.join(output_dir, "bench.json")
    with open(csv_path, "w", newline="") as fh:
        fh.write(report.to_csv())
    with open(json_path, "w") as fh:
        fh.write(report.to_json() + "\n")
    return csv_path, json_path
