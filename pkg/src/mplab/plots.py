"""Report figures and density rasters."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .mixture import GaussianMixture

PNG_META = {"Software": None}


def density_raster(mix: GaussianMixture, width: int, height: int) -> np.ndarray:
    """Marginal density of the box centre at every pixel centre, shape ``(height, width)``."""
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    X, Y = np.meshgrid(xs, ys)
    out = np.zeros((height, width))
    for p, m, s in zip(mix.pi, mix.mu, mix.sigma):
        z = ((X - m[0]) / s[0]) ** 2 + ((Y - m[1]) / s[1]) ** 2
        out += p * np.exp(-0.5 * z) / (2 * math.pi * s[0] * s[1])
    return out


def to_graymap(density: np.ndarray) -> np.ndarray:
    """Scale to 0..255 with the maximum at 255; an all-zero raster stays zero."""
    peak = float(density.max())
    if peak <= 0 or not math.isfinite(peak):
        return np.zeros(density.shape, dtype=int)
    return np.rint(density / peak * 255).astype(int)


def pgm_text(gray: np.ndarray) -> str:
    """Plain (P2) graymap: header, then one image row per line."""
    h, w = gray.shape
    rows = [" ".join(str(int(v)) for v in row) for row in gray]
    return "\n".join(["P2", f"{w} {h}", "255", *rows]) + "\n"


def read_pgm(path) -> np.ndarray:
    tokens = Path(path).read_text().split()
    if not tokens or tokens[0] != "P2":
        raise ValueError("not a plain graymap")
    w, h, _ = (int(t) for t in tokens[1:4])
    return np.array(tokens[4:4 + w * h], dtype=int).reshape(h, w)


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def report_figure(rows, path) -> None:
    """Grouped bars of oracle FDE per method and split."""
    plt = _pyplot()
    methods = sorted({r.method for r in rows})
    splits = list(dict.fromkeys(r.split for r in rows))
    val = {(r.method, r.split): r.fde for r in rows}
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / max(len(splits), 1)
    x = np.arange(len(methods))
    for j, s in enumerate(splits):
        ax.bar(x + j * width, [val.get((m, s), np.nan) for m in methods], width, label=s)
    ax.set_xticks(x + width * (len(splits) - 1) / 2)
    ax.set_xticklabels(methods)
    ax.set_ylabel("oracle FDE (px)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata=PNG_META)
    plt.close(fig)


def loss_figure(logs: dict, path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name in sorted(logs):
        lg = logs[name]
        if lg:
            a = np.array(lg, dtype=float)
            ax.plot(a[:, 0], a[:, 2], label=name, lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("symlog")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, metadata=PNG_META)
    plt.close(fig)


def example_figure(example: dict, frame_size: int, path) -> None:
    """Centre density of one prediction with its hypotheses, outcomes and ground truth."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(density_raster(example["mixture"], frame_size, frame_size), origin="upper",
              extent=(0, frame_size, frame_size, 0), cmap="magma")
    h = np.asarray(example["hypotheses"])
    ax.scatter(h[:, 0], h[:, 1], s=6, c="cyan", label="hypotheses")
    o = np.asarray(example["outcomes"])
    ax.scatter(o[:, 0], o[:, 1], s=40, marker="x", c="lime", label="outcomes")
    gt = example["gt"]
    ax.scatter([gt.x], [gt.y], s=40, marker="+", c="white", label="observed")
    ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, metadata=PNG_META)
    plt.close(fig)


def bench_figures(result, out, frame_size: int, logs: dict | None = None) -> list[Path]:
    """Figures written next to the CSV outputs in ``out``."""
    out = Path(out)
    paths = [out / "report_fde.png"]
    report_figure(result.rows, paths[0])
    if logs:
        paths.append(out / "training_loss.png")
        loss_figure(logs, paths[-1])
    if result.example:
        paths.append(out / "example_density.png")
        example_figure(result.example, frame_size, paths[-1])
    return paths
